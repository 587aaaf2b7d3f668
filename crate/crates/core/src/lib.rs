//! Hinted regression networks for camera relocalization.
//!
//! A feed-forward pose regressor can be transformed by feeding it a "hint"
//! of its own output: concatenated with the image embedding (hinted
//! embedding), optionally with a parameter-free skip connection adding the
//! hint to the head output (hinted residual). Trained with noisy hints around
//! ground truth and queried with random hints refined recurrently, the
//! hinted variants seek modes where plain regression averages them.
//!
//! The crate bundles everything needed to demonstrate this on desk-scale
//! synthetic worlds:
//!
//! - [`autodiff`]: tensor tape, layers, and Adam, all in `f64`;
//! - [`pose`] and [`whiten`]: quaternion/heading geometry, error metrics,
//!   and PCA whitening of regression targets;
//! - [`model`]: the baseline / hinted-embedding / hinted-residual variants
//!   with hint sampling and recurrent inference;
//! - [`loss`]: the learned homoscedastic-uncertainty loss;
//! - [`synth`]: the ambiguous two-hills world and the orthographic aerial
//!   frame generator over (procedural or file-backed) tiles;
//! - [`train`]: the training loop, evaluation reports, hint-scale sweeps and
//!   mode statistics;
//! - [`checkpoint`]: a versioned binary container for parameters, optimizer
//!   state and whiteners.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod loss;
pub mod model;
pub mod pose;
pub mod rng;
pub mod synth;
pub mod train;
pub mod whiten;

pub use autodiff::{Parameter, Tape, Tensor, ValueId};
pub use error::{Error, Result};

/// Tunes the process allocator for the training loop's allocation pattern:
/// large tensor buffers are recycled hot instead of bouncing through mmap on
/// every step. Safe to call any number of times; the CLI and the trainer
/// call it on entry.
pub fn tune_allocator() {
    #[cfg(target_os = "linux")]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
