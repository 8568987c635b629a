pub mod analytics;
pub mod codebook;
pub mod harness;
pub mod ingest;
pub mod labeling;
pub mod metrics;
pub mod sieve;
pub mod time;
pub mod synth;
