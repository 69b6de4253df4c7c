//! Canonical scene descriptions and their parser.

use super::scene::{Color, Object, SceneSpec, Shape};
use crate::error::{Error, Result};

/// "a red circle", "two red circle", "three red circle".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Phrase {
    pub count: usize,
    pub color: Color,
    pub shape: Shape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub fn words(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Relation of `a` to `b`, column axis first.
    pub fn between(a: &Object, b: &Object) -> Option<Relation> {
        use std::cmp::Ordering::*;
        match (a.cell.col.cmp(&b.cell.col), a.cell.row.cmp(&b.cell.row)) {
            (Less, _) => Some(Relation::LeftOf),
            (Greater, _) => Some(Relation::RightOf),
            (Equal, Less) => Some(Relation::Above),
            (Equal, Greater) => Some(Relation::Below),
            (Equal, Equal) => None,
        }
    }

    /// Whether cell `(ar, ac)` stands in this relation to `(br, bc)`.
    pub fn holds(self, a: (usize, usize), b: (usize, usize)) -> bool {
        match self {
            Relation::LeftOf => a.1 < b.1,
            Relation::RightOf => a.1 > b.1,
            Relation::Above => a.0 < b.0,
            Relation::Below => a.0 > b.0,
        }
    }
}

/// Structured form of a description. A relation links the first two
/// phrases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Description {
    pub phrases: Vec<Phrase>,
    pub relation: Option<Relation>,
}

impl Description {
    pub fn of(scene: &SceneSpec) -> Self {
        let objs = &scene.objects;
        let key = |o: &Object| (o.color, o.shape);
        let mut phrases: Vec<Phrase> = Vec::new();
        for o in objs {
            match phrases.iter_mut().find(|p| (p.color, p.shape) == key(o)) {
                Some(p) => p.count += 1,
                None => phrases.push(Phrase {
                    count: 1,
                    color: o.color,
                    shape: o.shape,
                }),
            }
        }
        let relation = if objs.len() == 2 && phrases.len() == 2 {
            Relation::between(&objs[0], &objs[1])
        } else {
            None
        };
        Self { phrases, relation }
    }

    pub fn object_count(&self) -> usize {
        self.phrases.iter().map(|p| p.count).sum()
    }

    pub fn text(&self) -> String {
        let phrase = |p: &Phrase| {
            let n = match p.count {
                1 => "a",
                2 => "two",
                _ => "three",
            };
            format!("{n} {} {}", p.color, p.shape)
        };
        match (self.relation, self.phrases.as_slice()) {
            (Some(r), [a, b]) => format!("{} {} {}", phrase(a), r.words(), phrase(b)),
            _ => self.phrases.iter().map(phrase).collect::<Vec<_>>().join(" and "),
        }
    }

    /// Inverse of [`Description::text`].
    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let bad = || Error::Invalid(format!("not a scene description: `{text}`"));
        let mut phrases = Vec::new();
        let mut relation = None;
        let mut i = 0;
        while i < words.len() {
            if !phrases.is_empty() {
                let (r, used) = match (words[i], words.get(i + 1)) {
                    ("and", _) => (None, 1),
                    ("left", Some(&"of")) => (Some(Relation::LeftOf), 2),
                    ("right", Some(&"of")) => (Some(Relation::RightOf), 2),
                    ("above", _) => (Some(Relation::Above), 1),
                    ("below", _) => (Some(Relation::Below), 1),
                    _ => return Err(bad()),
                };
                if r.is_some() && (phrases.len() != 1 || relation.is_some()) {
                    return Err(bad());
                }
                relation = relation.or(r);
                i += used;
            }
            let [n, c, s] = words.get(i..i + 3).ok_or_else(bad)? else {
                return Err(bad());
            };
            let count = match *n {
                "a" | "one" => 1,
                "two" => 2,
                "three" => 3,
                _ => return Err(bad()),
            };
            phrases.push(Phrase {
                count,
                color: c.parse()?,
                shape: s.parse()?,
            });
            i += 3;
        }
        if relation.is_some() && phrases.len() != 2 {
            return Err(bad());
        }
        Ok(Self { phrases, relation })
    }
}

pub fn describe(scene: &SceneSpec) -> String {
    Description::of(scene).text()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::scene::{Cell, Size};
    use rand::SeedableRng;

    fn obj(shape: Shape, color: Color, row: usize, col: usize) -> Object {
        Object {
            shape,
            color,
            cell: Cell::new(row, col),
            size: Size::Large,
        }
    }

    #[test]
    fn templates() {
        let s = SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 1, 1)]).unwrap();
        assert_eq!(describe(&s), "a red circle");
        let s = SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 1, 0), obj(Shape::Square, Color::Blue, 1, 3)])
            .unwrap();
        assert_eq!(describe(&s), "a red circle left of a blue square");
        let s = SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 0, 2), obj(Shape::Square, Color::Blue, 3, 2)])
            .unwrap();
        assert_eq!(describe(&s), "a red circle above a blue square");
        let s = SceneSpec::new(vec![
            obj(Shape::Triangle, Color::Yellow, 0, 0),
            obj(Shape::Triangle, Color::Yellow, 2, 3),
        ])
        .unwrap();
        assert_eq!(describe(&s), "two yellow triangle");
        let s = SceneSpec::new(vec![
            obj(Shape::Triangle, Color::Yellow, 0, 0),
            obj(Shape::Cross, Color::White, 1, 1),
            obj(Shape::Triangle, Color::Yellow, 2, 3),
        ])
        .unwrap();
        assert_eq!(describe(&s), "two yellow triangle and a white cross");
    }

    #[test]
    fn parse_inverts_text() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in 1..=3 {
            for _ in 0..300 {
                let d = Description::of(&SceneSpec::random(&mut rng, n, &[]));
                assert_eq!(Description::parse(&d.text()).unwrap(), d);
                assert_eq!(d.object_count(), n);
            }
        }
        assert!(Description::parse("a red").is_err());
        assert!(Description::parse("a red circle left a blue square").is_err());
        assert!(Description::parse("a red circle above a blue square and a red cross").is_err());
    }
}
