//! Frequency-domain progressive depth estimation toolkit.
//!
//! The crate decomposes depth maps into per-patch discrete cosine spectra and
//! rebuilds them coarse-to-fine: low-frequency coefficient groups first, then
//! successively higher-frequency groups, refining earlier predictions along
//! the way. Everything needed to exercise that scheme end-to-end lives here:
//!
//! * [`dct`] — exact forward/inverse 2D DCT over square blocks, with a naive
//!   reference path and a fast separable path.
//! * [`spectrum`] — depth maps, per-patch coefficient volumes, and the
//!   subdiagonal frequency grouping that drives the iteration order.
//! * [`progressive`] — the step-by-step coefficient accumulator and the
//!   ground-truth playback oracle.
//! * [`downsample`] — DCT-based downsampling (deterministic truncation and a
//!   learned squeeze-fuse variant).
//! * [`autodiff`] — a minimal reverse-mode tape over double-precision
//!   tensors, sufficient for the toy model and the losses.
//! * [`pph`] / [`train`] — a desk-scale recurrent progressive prediction
//!   head and its trainer on synthetic scenes.
//! * [`losses`] / [`metrics`] — the training loss suite and the standard
//!   depth evaluation metrics.
//! * [`scene`] / [`io`] — procedural scene generation and bit-exact PFM/PGM
//!   and checkpoint I/O.
//!
//! The `freqdepth` binary exposes the toolkit as subcommands; see the guide
//! in `book/` for worked examples.

pub mod autodiff;
pub mod cli;
pub mod dct;
pub mod downsample;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pph;
pub mod progressive;
pub mod scene;
pub mod spectrum;
pub mod train;

pub use error::{Error, Result};

// Book chapters double as doctests so the guide can never drift from the
// API. Only compiled when rustdoc collects doctests.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(dct, "../../../book/src/dct.md");
    chapter!(spectrum, "../../../book/src/spectrum.md");
    chapter!(progressive, "../../../book/src/progressive.md");
    chapter!(downsampling, "../../../book/src/downsampling.md");
    chapter!(autodiff, "../../../book/src/autodiff.md");
    chapter!(losses, "../../../book/src/losses.md");
    chapter!(scenes, "../../../book/src/scenes.md");
    chapter!(training, "../../../book/src/training.md");
    chapter!(cli, "../../../book/src/cli.md");
}
