//! Closed vocabulary and tokenizer.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const PLACEHOLDER: &str = "<p>";
pub const NULL: &str = "<null>";

pub const TASK_TOKENS: [&str; 6] = ["<t2i>", "<ie>", "<depth>", "<pose>", "<seg>", "<lg>"];
pub const SHAPE_WORDS: [&str; 4] = ["circle", "square", "triangle", "cross"];
pub const COLOR_WORDS: [&str; 8] = ["red", "green", "blue", "yellow", "white", "black", "cyan", "magenta"];
pub const SPATIAL_WORDS: [&str; 14] = [
    "left", "right", "above", "below", "top", "bottom", "center", "in", "block", "of", "the", "a", "and",
    "background",
];
pub const COUNT_WORDS: [&str; 3] = ["one", "two", "three"];
pub const VERB_WORDS: [&str; 5] = ["add", "remove", "recolor", "move", "to"];
pub const SEPARATOR: &str = ":";

/// Default prompt length.
pub const DEFAULT_MAX_LEN: usize = 24;

/// Dense id assignment, `<pad>` = 0. Frozen once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut tokens: Vec<&str> = vec![PAD];
        tokens.extend(TASK_TOKENS);
        tokens.push(PLACEHOLDER);
        tokens.push(NULL);
        tokens.extend(SHAPE_WORDS);
        tokens.extend(COLOR_WORDS);
        tokens.extend(SPATIAL_WORDS);
        tokens.extend(COUNT_WORDS);
        tokens.extend(VERB_WORDS);
        tokens.push(SEPARATOR);
        Self::from_tokens(tokens.into_iter().map(String::from).collect()).expect("builtin vocabulary")
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(Error::Invalid("vocabulary must start with <pad>".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!("bad vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t}")));
            }
        }
        for required in [PLACEHOLDER, NULL] {
            if !index.contains_key(required) {
                return Err(Error::Invalid(format!("vocabulary lacks {required}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn null_id(&self) -> u32 {
        self.index[NULL]
    }

    pub fn placeholder_id(&self) -> u32 {
        self.index[PLACEHOLDER]
    }

    pub fn is_task_token(&self, id: u32) -> bool {
        self.token(id).is_some_and(|t| TASK_TOKENS.contains(&t))
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Whitespace tokenization with right padding to `max_len`.
    pub fn tokenize(&self, prompt: &str, max_len: usize) -> Result<TokenSequence> {
        let mut ids = Vec::with_capacity(max_len);
        for sym in prompt.split_whitespace() {
            ids.push(self.id(sym).ok_or_else(|| Error::UnknownToken(sym.to_string()))?);
        }
        if ids.len() > max_len {
            return Err(Error::PromptTooLong {
                len: ids.len(),
                max: max_len,
            });
        }
        ids.resize(max_len, self.pad_id());
        Ok(TokenSequence { ids })
    }

    /// The all-`<null>` sequence used as the unconditional text branch.
    pub fn null_sequence(&self, max_len: usize) -> TokenSequence {
        TokenSequence {
            ids: vec![self.null_id(); max_len],
        }
    }

    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        seq.ids
            .iter()
            .filter(|&&id| id != self.pad_id())
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Right-padded token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn positions_of(&self, id: u32) -> Vec<usize> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == id)
            .map(|(i, _)| i)
            .collect()
    }
}
