//! Instruction-aware fill-in-the-middle (IFIM) pipeline.
//!
//! The crate is organized along the stages of the pipeline:
//!
//! - [`corpus`]: ingest code samples, cut prefix/middle/suffix triplets,
//!   decontaminate, and mix IFIM / plain FIM / comment-FIM records.
//! - [`synth`]: build instruction-synthesis prompts, call a text generation
//!   backend, and filter responses down to one sentence.
//! - [`format`]: render FIM and IFIM layouts, pick the `<INS>` token, and emit
//!   `(input, target)` training examples.
//! - [`bench`]: derive single-line infilling tasks, strip docstrings, truncate
//!   context, and draw statistically sized subsets.
//! - [`eval`]: run completion backends over tasks, execute candidates in child
//!   processes, and report Pass@1.
//! - [`assemble`]: turn an editor buffer with a `#!` instruction comment into a
//!   ready-to-send completion input.

pub mod assemble;
pub mod bench;
pub mod corpus;
mod error;
pub mod eval;
pub mod format;
pub mod jsonl;
pub mod profile;
pub mod synth;

pub use error::{Error, Result};
