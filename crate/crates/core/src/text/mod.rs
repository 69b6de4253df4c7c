//! Closed-vocabulary prompt conditioning.

pub mod embed;
pub mod vocab;

pub use embed::{
    embed, embed_backward, encode_identity, encode_identity_backward, inject_external, null_prompt,
    ConditionFeatures, IdentityCache, PromptEmbeddings,
};
pub use vocab::{TokenSequence, Vocabulary};
