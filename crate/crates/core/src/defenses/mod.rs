//! Defenses and audits: embedding-based deduplication with its effect on
//! extraction, and canary insertion with exposure measurement.

mod canary;
mod dedup;

pub use canary::{
    canary_audit, exposure, exposure_null, exposures, generate_canaries, null_mean_exposure,
    reference_exposures, write_exposure_table, CanaryAudit, CanaryAuditConfig, CanaryPool,
    ExposureRow,
};
pub use dedup::{
    dedup_defense_experiment, deduplicate, extraction_run, similarity, write_dedup,
    DedupDefenseOutcome, DedupResult, ExtractionRunConfig, Removed,
};
