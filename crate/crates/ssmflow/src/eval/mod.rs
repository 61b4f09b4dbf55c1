//! Evaluation utilities: Gaussian-kernel maximum mean discrepancy,
//! posterior summaries and sample archives.

mod archive;
mod mmd;
mod summary;

pub use archive::{Provenance as ArchiveProvenance, SampleArchive};
pub use mmd::{mmd_gaussian, standardized_mmd, Bandwidth};
pub use summary::{posterior_summary, ParamSummary};
