//! Security-gated code completion.
//!
//! Generated C programs are checked by static analyzers and, when a finding
//! is reported, regenerated with the findings fed back to the model.

pub mod analyzers;
pub mod benchmark;
pub mod config;
pub mod diagnostics;
pub mod llm;
pub mod prompting;
pub mod repair;
pub mod runlog;
