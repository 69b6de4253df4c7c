//! Task mixtures and batch sampling.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::forge::{generate, GlyphLibrary, Split, TaskKind, TaskSample};

/// Kinds sharing the "auxiliary" share of a mixture.
pub const AUXILIARY: [TaskKind; 3] = [TaskKind::Depth, TaskKind::Pose, TaskKind::Seg];

/// Reporting group of a kind: auxiliary kinds collapse into one.
pub fn group_of(kind: TaskKind) -> &'static str {
    if AUXILIARY.contains(&kind) {
        "auxiliary"
    } else {
        kind.name()
    }
}

/// Probability of each task kind in a training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    ratios: Vec<(TaskKind, f64)>,
}

impl MixtureSpec {
    /// Validates and stores `(kind, ratio)` pairs. Zero-ratio kinds are
    /// dropped.
    pub fn new(ratios: Vec<(TaskKind, f64)>) -> Result<Self> {
        let mut seen = Vec::new();
        for &(k, r) in &ratios {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Invalid(format!("mixture ratio for {k} is {r}")));
            }
            if seen.contains(&k) {
                return Err(Error::Invalid(format!("mixture lists {k} twice")));
            }
            seen.push(k);
        }
        let sum: f64 = ratios.iter().map(|r| r.1).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("mixture ratios sum to {sum}, not 1")));
        }
        Ok(Self {
            ratios: ratios.into_iter().filter(|r| r.1 > 0.0).collect(),
        })
    }

    pub fn single(kind: TaskKind) -> Self {
        Self {
            ratios: vec![(kind, 1.0)],
        }
    }

    /// Text-to-image only.
    pub fn stage_one() -> Self {
        Self::single(TaskKind::T2i)
    }

    /// The multi-task mixture; the auxiliary share is split evenly.
    pub fn stage_two() -> Self {
        Self::parse("t2i:0.28,inpaint:0.10,outpaint:0.10,edit:0.47,auxiliary:0.03,layout:0.02")
            .expect("built-in mixture")
    }

    /// Identity samples 1:1 against the renormalized multi-task mixture.
    pub fn stage_three() -> Self {
        let mut ratios = vec![(TaskKind::Id, 0.5)];
        ratios.extend(Self::stage_two().ratios.iter().map(|&(k, r)| (k, 0.5 * r)));
        Self::new(ratios).expect("built-in mixture")
    }

    pub fn ratios(&self) -> &[(TaskKind, f64)] {
        &self.ratios
    }

    pub fn ratio(&self, kind: TaskKind) -> f64 {
        self.ratios.iter().find(|r| r.0 == kind).map_or(0.0, |r| r.1)
    }

    /// Share of a reporting group (see [`group_of`]).
    pub fn group_ratio(&self, group: &str) -> f64 {
        self.ratios.iter().filter(|r| group_of(r.0) == group).map(|r| r.1).sum()
    }

    /// Parses `kind:ratio` pairs separated by commas. `auxiliary` splits
    /// its ratio evenly over depth, pose and seg.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ratios = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, r) = item
                .split_once(':')
                .ok_or_else(|| Error::Invalid(format!("mixture entry `{item}` is not kind:ratio")))?;
            let r: f64 = r
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("mixture ratio `{r}` is not a number")))?;
            if k.trim() == "auxiliary" {
                ratios.extend(AUXILIARY.iter().map(|&a| (a, r / 3.0)));
            } else {
                ratios.push((k.trim().parse()?, r));
            }
        }
        Self::new(ratios)
    }

    /// Draws one kind.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> TaskKind {
        let w = WeightedIndex::new(self.ratios.iter().map(|r| r.1)).expect("validated mixture");
        self.ratios[w.sample(rng)].0
    }
}

impl fmt::Display for MixtureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ratios.iter().map(|(k, r)| format!("{k}:{r}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// `batch` training samples with kinds drawn i.i.d. from `mixture`.
pub fn sample_batch<R: Rng>(
    mixture: &MixtureSpec,
    batch: usize,
    rng: &mut R,
    glyphs: &GlyphLibrary,
) -> Vec<TaskSample> {
    let w = WeightedIndex::new(mixture.ratios.iter().map(|r| r.1)).expect("validated mixture");
    (0..batch)
        .map(|_| {
            let kind = mixture.ratios[w.sample(rng)].0;
            generate(kind, rng, Split::Train, glyphs)
        })
        .collect()
}
