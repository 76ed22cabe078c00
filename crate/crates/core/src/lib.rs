//! Chinese grammatical error correction toolkit.
//!
//! The crate covers the full loop around a correction model: loading
//! parallel corpora ([`corpus`]), aligning source/target sentence pairs
//! into minimal edit sets ([`align`]), scoring predictions against
//! multi-reference gold edits ([`metrics`]), generating explanation-
//! augmented training data with an explainer model ([`exam`]), and scoring
//! with an LLM judge instead of exact matching ([`see`]). All model access
//! goes through [`llm`], whose content-addressed cache makes every run
//! replayable offline.

pub mod align;
pub mod corpus;
pub mod exam;
pub mod llm;
pub mod metrics;
pub mod pool;
pub mod see;
