//! Exact 2D discrete cosine transform over square blocks.
//!
//! The transform is orthonormal: row `u` of the basis matrix holds
//! `alpha(u) * cos(pi * (i + 1/2) * u / S)` with `alpha(0) = sqrt(1/S)` and
//! `alpha(u>0) = sqrt(2/S)`, so the matrix is orthogonal and the transform
//! preserves energy (Parseval). Two evaluation paths are provided:
//!
//! * [`dct2_naive`] / [`idct2_naive`] — direct quadruple-sum evaluation,
//!   kept as the correctness oracle for everything faster;
//! * [`dct2_fast`] / [`idct2_fast`] — the separable form `B * X * B^T`,
//!   which does two small matrix products instead of one quartic sum.
//!
//! Basis matrices are computed once per size from the closed form and cached
//! for reuse.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Orthonormal DCT basis for `S x S` blocks.
///
/// `matrix[u * size + i]` is the weight of spatial sample `i` in frequency
/// row `u`. Row 0 is constant with value `alpha(0) = sqrt(1/S)`.
#[derive(Debug)]
pub struct DctBasis {
    size: usize,
    matrix: Vec<f64>,
    /// `matrix` transposed, so both separable passes can read rows
    /// contiguously.
    transpose: Vec<f64>,
}

impl DctBasis {
    fn build(size: usize) -> Self {
        let mut matrix = vec![0.0; size * size];
        let s = size as f64;
        for u in 0..size {
            let alpha = if u == 0 { (1.0 / s).sqrt() } else { (2.0 / s).sqrt() };
            for i in 0..size {
                matrix[u * size + i] = alpha * (PI * (i as f64 + 0.5) * u as f64 / s).cos();
            }
        }
        let mut transpose = vec![0.0; size * size];
        for u in 0..size {
            for i in 0..size {
                transpose[i * size + u] = matrix[u * size + i];
            }
        }
        DctBasis { size, matrix, transpose }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Basis entry `alpha(u) * cos(pi * (i + 1/2) * u / S)`.
    pub fn coefficient(&self, u: usize, i: usize) -> f64 {
        self.matrix[u * self.size + i]
    }

    /// Largest deviation of `B * B^T` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let s = self.size;
        let mut worst = 0.0f64;
        for a in 0..s {
            for b in 0..s {
                let mut dot = 0.0;
                for i in 0..s {
                    dot += self.matrix[a * s + i] * self.matrix[b * s + i];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

fn basis_cache() -> &'static Mutex<HashMap<usize, Arc<DctBasis>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DctBasis>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Builds (or fetches from cache) the orthonormal basis for `S x S` blocks.
pub fn make_basis(size: usize) -> Result<Arc<DctBasis>> {
    if size == 0 {
        return Err(Error::InvalidArgument("DCT block size must be positive".into()));
    }
    let mut cache = basis_cache().lock().expect("basis cache poisoned");
    Ok(Arc::clone(cache.entry(size).or_insert_with(|| Arc::new(DctBasis::build(size)))))
}

fn check_square(len: usize, basis: &DctBasis) -> Result<()> {
    let expect = basis.size * basis.size;
    if len != expect {
        return Err(Error::ShapeMismatch { lhs: vec![len], rhs: vec![basis.size, basis.size] });
    }
    Ok(())
}

/// Forward transform by direct quadruple-sum evaluation of the basis
/// expansion. Slow on purpose; this is the oracle the separable path is
/// checked against.
pub fn dct2_naive(x: &[f64], basis: &DctBasis) -> Result<Vec<f64>> {
    check_square(x.len(), basis)?;
    let mut out = vec![0.0; x.len()];
    dct2_naive_into(x, &mut out, basis);
    Ok(out)
}

/// Allocation-free form of [`dct2_naive`]; `x` and `out` must hold `S*S`
/// entries.
pub fn dct2_naive_into(x: &[f64], out: &mut [f64], basis: &DctBasis) {
    let s = basis.size;
    let m = &basis.matrix;
    for u in 0..s {
        for v in 0..s {
            let mut acc = 0.0;
            for i in 0..s {
                for j in 0..s {
                    acc += x[i * s + j] * m[u * s + i] * m[v * s + j];
                }
            }
            out[u * s + v] = acc;
        }
    }
}

/// Inverse transform by direct quadruple-sum evaluation.
pub fn idct2_naive(f: &[f64], basis: &DctBasis) -> Result<Vec<f64>> {
    check_square(f.len(), basis)?;
    let s = basis.size;
    let m = &basis.matrix;
    let mut out = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            let mut acc = 0.0;
            for u in 0..s {
                for v in 0..s {
                    acc += f[u * s + v] * m[u * s + i] * m[v * s + j];
                }
            }
            out[i * s + j] = acc;
        }
    }
    Ok(out)
}

// Stack scratch for the common block sizes; larger blocks fall back to the
// heap.
const STACK_SCRATCH: usize = 1024;

/// Separable forward transform: `F = B * X * B^T`.
pub fn dct2_fast(x: &[f64], basis: &DctBasis) -> Result<Vec<f64>> {
    check_square(x.len(), basis)?;
    let s = basis.size;
    let mut out = vec![0.0; s * s];
    if s * s <= STACK_SCRATCH {
        let mut scratch = [0.0f64; STACK_SCRATCH];
        dct2_fast_into(x, &mut out, &mut scratch[..s * s], basis);
    } else {
        let mut scratch = vec![0.0; s * s];
        dct2_fast_into(x, &mut out, &mut scratch, basis);
    }
    Ok(out)
}

/// Separable inverse transform: `X = B^T * F * B`.
pub fn idct2_fast(f: &[f64], basis: &DctBasis) -> Result<Vec<f64>> {
    check_square(f.len(), basis)?;
    let s = basis.size;
    let mut out = vec![0.0; s * s];
    if s * s <= STACK_SCRATCH {
        let mut scratch = [0.0f64; STACK_SCRATCH];
        idct2_fast_into(f, &mut out, &mut scratch[..s * s], basis);
    } else {
        let mut scratch = vec![0.0; s * s];
        idct2_fast_into(f, &mut out, &mut scratch, basis);
    }
    Ok(out)
}

/// In-place separable forward transform; `out`, `scratch`, and `x` must all
/// hold `S*S` entries. No allocation, for block-loop callers.
///
/// Both passes accumulate along contiguous rows (the scaled-row form of the
/// matrix product), which keeps the inner loops vectorizable.
pub fn dct2_fast_into(x: &[f64], out: &mut [f64], scratch: &mut [f64], basis: &DctBasis) {
    let s = basis.size;
    let m = &basis.matrix;
    // scratch = B * X: row u of scratch is a weighted sum of rows of X.
    scratch.iter_mut().for_each(|v| *v = 0.0);
    for u in 0..s {
        let dst = &mut scratch[u * s..(u + 1) * s];
        for i in 0..s {
            let weight = m[u * s + i];
            let src = &x[i * s..(i + 1) * s];
            for (d, &sv) in dst.iter_mut().zip(src) {
                *d += weight * sv;
            }
        }
    }
    // out = scratch * B^T: row u of out accumulates scratch[u][j] * row j
    // of B^T, and row j of B^T is column j of B read contiguously from the
    // transpose table.
    out.iter_mut().for_each(|v| *v = 0.0);
    let mt = &basis.transpose;
    for u in 0..s {
        let dst = &mut out[u * s..(u + 1) * s];
        for j in 0..s {
            let weight = scratch[u * s + j];
            let src = &mt[j * s..(j + 1) * s];
            for (d, &sv) in dst.iter_mut().zip(src) {
                *d += weight * sv;
            }
        }
    }
}

/// In-place separable inverse transform; same contract as
/// [`dct2_fast_into`].
pub fn idct2_fast_into(f: &[f64], out: &mut [f64], scratch: &mut [f64], basis: &DctBasis) {
    let s = basis.size;
    let m = &basis.matrix;
    // scratch = B^T * F: row i accumulates B[u][i] * row u of F.
    scratch.iter_mut().for_each(|v| *v = 0.0);
    for u in 0..s {
        let src = &f[u * s..(u + 1) * s];
        for i in 0..s {
            let weight = m[u * s + i];
            let dst = &mut scratch[i * s..(i + 1) * s];
            for (d, &sv) in dst.iter_mut().zip(src) {
                *d += weight * sv;
            }
        }
    }
    // out = scratch * B: row i accumulates scratch[i][v] * row v of B.
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..s {
        let dst = &mut out[i * s..(i + 1) * s];
        for v in 0..s {
            let weight = scratch[i * s + v];
            let src = &m[v * s..(v + 1) * s];
            for (d, &sv) in dst.iter_mut().zip(src) {
                *d += weight * sv;
            }
        }
    }
}
