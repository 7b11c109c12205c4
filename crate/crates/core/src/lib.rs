//! Transfer learning for music source separation.
//!
//! A two-headed recurrent separation network (deep clustering embeddings plus
//! time-frequency masks) is pretrained with the deep clustering objective on
//! a large stem corpus, fine-tuned on a small target corpus either as a whole
//! or with only its mask layer trainable, and scored with SI-SDR and paired
//! one-sided Wilcoxon signed-rank tests.
//!
//! Module map:
//!
//! - [`signal`]: WAV I/O, STFT/iSTFT with a square-root Hann window, resampling.
//! - [`masking`]: masks, ideal binary assignments, bin weights, reconstruction.
//! - [`autodiff`]: a small reverse-mode tape over dense arrays.
//! - [`network`]: the BLSTM backbone with embedding and mask heads, checkpoints.
//! - [`losses`]: deep clustering, mask inference and their weighted sum.
//! - [`datapipe`]: stem corpora, coherent/incoherent mixing, augmentation.
//! - [`training`]: Adam, AutoClip, plateau LR halving, the pretrain/fine-tune loops.
//! - [`evaluation`]: SI-SDR, batch evaluation, Wilcoxon signed-rank test.
//! - [`manifest`]: the `key = value` experiment manifest.

pub mod autodiff;
pub mod datapipe;
mod error;
pub mod evaluation;
pub mod losses;
pub mod manifest;
pub mod masking;
pub mod network;
pub mod signal;
pub mod training;

pub use error::{Error, Result};

mod par {
    use crate::Result;

    /// `(0..n).map(f)` collected in index order, in parallel when enabled.
    pub(crate) fn map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n).map(f).collect()
        }
    }
}
