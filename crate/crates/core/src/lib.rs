//! Per-CWE triage of static-analysis warnings.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`corpus`] ingests JSONL warning records, derives labels from their
//!    origin and splits each CWE dataset into train/validation.
//! 2. [`frontend`] parses a C-subset function into an AST and extracts
//!    leaf-to-leaf path contexts.
//! 3. [`embedder`] turns a bag of path contexts into a fixed-length code
//!    vector with a path-attention network pretrained on tag prediction.
//! 4. [`learners`] and [`ensemble`] train a gradient-boosted tree model, a
//!    random forest and a feed-forward net on bootstrap resamples and
//!    combine them by majority vote.
//! 5. [`workflow`] bands open warnings by a fitted normal distribution and
//!    tracks developer verdicts for retraining.
//!
//! [`evaluation`] holds the metrics and grid search, [`pipeline`] glues the
//! stages together for the CLI, the HTTP service and the Python bindings.

pub mod corpus;
pub mod embedder;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod learners;
pub mod linalg;
pub mod pipeline;
pub mod workflow;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used everywhere randomness is needed.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 step, used to derive independent child seeds from a parent.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    let mut z = parent
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`
/// so readers never observe a partial file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
