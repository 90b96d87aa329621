//! Grading for code-entry challenges.
//!
//! [`Assessor::assess`] runs the built-in static detectors on the submitted
//! sources, then builds the project in the sandbox, runs the pack's
//! functional tests and finally its security probes. Each of the last three
//! stages only runs when the one before passed. A submission is acceptable
//! when all four stages pass.

pub mod detectors;
mod lexer;
mod pipeline;
pub mod queue;
mod source;
pub mod toolchain;

pub use detectors::run_static_analysis;
pub use pipeline::{
    abnormal_reason, byte_diff, run_functional_tests, run_security_probes, AssessError, Assessor,
    Submission, SubmissionError, MAX_SUBMISSION_BYTES,
};
pub use queue::{AssessmentQueue, JobEvent, JobId, QueueError};
pub use toolchain::{CCompiler, Diagnostic, DiagnosticLevel, Toolchain, ToolchainConfig};
