//! Source/target domain synthesis and the degradation operators.

mod dataset;
mod degrade;
pub mod pgm;

pub use dataset::{
    manifest_roundtrip, mix_seed, read_dataset, sample_domain, sample_domain_with, sample_paired,
    sample_paired_with, write_dataset, Domain, DomainDataset, Record, MANIFEST,
};
pub use degrade::{
    degrade, DegradationKind, DegradationParams, DegradationSpec, DownsampleParams, MaskParams,
    RainParams,
};

#[cfg(test)]
mod tests;
