//! Range-only SLAM by low-rank factorization of squared-range measurement
//! matrices: batch and online spectral solvers, a closed-form metric
//! upgrade, interpolation for sparse logs, spectral system identification
//! with EKF filtering, classical baselines, and an evaluation harness.

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod measurement;
pub mod metric;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};

use std::sync::OnceLock;

/// Worker pool shared by the parallel experiment drivers. Its size is
/// capped by the `SPECTRAL_SLAM_THREADS` environment variable.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("SPECTRAL_SLAM_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            builder = builder.num_threads(n);
        }
        builder.build().expect("failed to build worker pool")
    })
}
