//! Singular value analysis of the block-diagonal operator `M = diag(A_1..A_m)`.
//!
//! The SVD of `M` is assembled from the SVDs of its blocks, so the pooled
//! singular values are the union of the per-block ones. Stability is summarized
//! by the condition number and the effective null-space dimension at a
//! threshold `t`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Grid, SamplingMask};
use crate::operators::{build_a_dft, slice_matrix};
use crate::stack::{CoilStack, StackKind};

/// Threshold used for the effective null-space dimension unless overridden.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

/// Thin SVD of one block, singular values sorted non-increasing.
///
/// `sigma` always has one entry per block column; wide blocks are padded with
/// zeros so `v` is a full basis of the column space.
#[derive(Debug, Clone)]
pub struct BlockSvd {
    pub u: DMatrix<Complex64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<Complex64>,
}

impl BlockSvd {
    pub fn new(block: &DMatrix<Complex64>) -> Result<Self> {
        let (rows, cols) = block.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("empty block"));
        }
        if block.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NumericalFailure("block contains non-finite entries".into()));
        }
        let (u, sigma, v) = dense_svd(block)?;
        Ok(BlockSvd { u, sigma, v })
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn smallest(&self) -> f64 {
        *self.sigma.last().expect("non-empty")
    }

    /// Right singular vector of the smallest singular value, phase-normalized
    /// so its largest-magnitude entry is real and positive.
    pub fn smallest_right_vector(&self) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = self.v.column(self.v.ncols() - 1).iter().copied().collect();
        normalize_phase(&mut v);
        v
    }
}

/// `(u, sigma, v)` with `u` of shape rows x cols, `sigma` padded with zeros
/// to one entry per column and `v` square.
fn dense_svd(a: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, Vec<f64>, DMatrix<Complex64>)> {
    let (rows, cols) = a.shape();
    let mat = faer::Mat::<faer::c64>::from_fn(rows, cols, |r, c| {
        let v = a[(r, c)];
        faer::c64::new(v.re, v.im)
    });
    let svd = if rows >= cols { mat.thin_svd() } else { mat.svd() }
        .map_err(|e| Error::NumericalFailure(format!("SVD did not converge: {e:?}")))?;
    let (uf, sf, vf) = (svd.U(), svd.S().column_vector(), svd.V());
    let to = |z: faer::c64| Complex64::new(z.re, z.im);
    let u = DMatrix::from_fn(rows, cols, |r, c| if c < uf.ncols() { to(uf[(r, c)]) } else { Complex64::new(0.0, 0.0) });
    let sigma = (0..cols).map(|c| if c < sf.nrows() { sf[c].re } else { 0.0 }).collect();
    let v = DMatrix::from_fn(cols, cols, |r, c| to(vf[(r, c)]));
    Ok((u, sigma, v))
}

/// Rotates `v` so that its first largest-magnitude entry is real positive.
pub fn normalize_phase(v: &mut [Complex64]) {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.norm() > v[best].norm() {
            best = k;
        }
    }
    let pivot = v[best];
    if pivot.norm() > 0.0 {
        let rot = pivot.conj() / pivot.norm();
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

/// Summary of the pooled spectrum of a block-diagonal operator.
#[derive(Debug, Clone, Serialize)]
pub struct SvdReport {
    /// Pooled singular values, non-increasing.
    pub sigma: Vec<f64>,
    /// Per-block singular values, non-increasing, in block order.
    pub block_sigma: Vec<Vec<f64>>,
    pub kappa: f64,
    /// Count of pooled singular values strictly below `t`.
    pub null_dim: usize,
    /// `N - argmin_i |σ_i - t|` (1-based, ties resolved to the largest index).
    pub null_dim_argmin: usize,
    pub t: f64,
    /// Smallest right singular vector of each block, one per image column.
    /// Row-major `rows x blocks`.
    pub rsv_image: Vec<Complex64>,
    pub rsv_rows: usize,
}

impl SvdReport {
    pub fn rsv_stack(&self) -> CoilStack {
        let cols = self.block_sigma.len();
        CoilStack::from_data(self.rsv_rows, cols, 1, 1, StackKind::Image, self.rsv_image.clone())
            .expect("sizes agree")
    }
}

/// Condition number `σ_max / σ_min`; infinite when `σ_min = 0`.
pub fn condition_number(sigma_desc: &[f64]) -> f64 {
    let (Some(&hi), Some(&lo)) = (sigma_desc.first(), sigma_desc.last()) else {
        return f64::NAN;
    };
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Number of singular values strictly below `t`.
pub fn null_dim_count(sigma: &[f64], t: f64) -> usize {
    sigma.iter().filter(|&&s| s < t).count()
}

/// `N - argmin_{1<=i<=N} |σ_i - t|` over non-increasing `σ`. Ties go to the
/// largest index, so a spectrum entirely above `t` gives 0.
pub fn null_dim_argmin(sigma_desc: &[f64], t: f64) -> usize {
    let n = sigma_desc.len();
    let mut best = 0;
    for (k, s) in sigma_desc.iter().enumerate() {
        if (s - t).abs() <= (sigma_desc[best] - t).abs() {
            best = k;
        }
    }
    n - (best + 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Keep singular values above `max(rows, cols) * eps * σ_max`.
    None,
    /// Keep singular values strictly above the threshold.
    Threshold(f64),
    /// Keep the `k` largest pooled singular values.
    Rank(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PinvStatus {
    Ok,
    /// Every singular value was truncated; the result is zero.
    AllTruncated,
}

#[derive(Debug, Clone)]
pub struct PinvResult {
    pub x: Vec<Complex64>,
    pub retained: usize,
    pub status: PinvStatus,
}

/// Per-block SVDs of a block-diagonal operator.
#[derive(Debug, Clone)]
pub struct BlockDiagonalSvd {
    blocks: Vec<BlockSvd>,
}

impl BlockDiagonalSvd {
    pub fn new(blocks: &[DMatrix<Complex64>]) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::invalid("no blocks given"))?;
        if blocks.iter().any(|b| b.ncols() != first.ncols()) {
            return Err(Error::mismatch("blocks must share a column count"));
        }
        let blocks = blocks.par_iter().map(BlockSvd::new).collect::<Result<Vec<_>>>()?;
        Ok(BlockDiagonalSvd { blocks })
    }

    pub fn blocks(&self) -> &[BlockSvd] {
        &self.blocks
    }

    pub fn pooled_sigma(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.blocks.iter().flat_map(|b| b.sigma.iter().copied()).collect();
        all.sort_by(|a, b| b.total_cmp(a));
        all
    }

    pub fn report(&self, t: f64) -> SvdReport {
        let sigma = self.pooled_sigma();
        let rows = self.blocks[0].cols();
        let cols = self.blocks.len();
        let mut rsv_image = vec![Complex64::new(0.0, 0.0); rows * cols];
        for (i, b) in self.blocks.iter().enumerate() {
            for (r, v) in b.smallest_right_vector().into_iter().enumerate() {
                rsv_image[r * cols + i] = v;
            }
        }
        SvdReport {
            kappa: condition_number(&sigma),
            null_dim: null_dim_count(&sigma, t),
            null_dim_argmin: null_dim_argmin(&sigma, t),
            t,
            block_sigma: self.blocks.iter().map(|b| b.sigma.clone()).collect(),
            sigma,
            rsv_image,
            rsv_rows: rows,
        }
    }

    /// `Σ (u_k^H b / σ_k) v_k` over retained singular triplets, block by block.
    pub fn pseudoinverse_apply(&self, b: &[Complex64], truncation: Truncation) -> Result<PinvResult> {
        let total_rows: usize = self.blocks.iter().map(|k| k.rows()).sum();
        if b.len() != total_rows {
            return Err(Error::mismatch(format!("data has {} entries, operator has {total_rows} rows", b.len())));
        }
        let keep = self.retained_mask(truncation);
        let mut x = Vec::with_capacity(self.blocks.iter().map(|k| k.cols()).sum());
        let mut offset = 0;
        let mut retained = 0;
        for (blk, keep) in self.blocks.iter().zip(&keep) {
            let rows = blk.rows();
            let seg = DVector::from_column_slice(&b[offset..offset + rows]);
            offset += rows;
            let mut xb = DVector::from_element(blk.cols(), Complex64::new(0.0, 0.0));
            for (k, &s) in blk.sigma.iter().enumerate() {
                if !keep[k] {
                    continue;
                }
                retained += 1;
                let coef = blk.u.column(k).dotc(&seg) / s;
                xb += blk.v.column(k) * coef;
            }
            x.extend(xb.iter().copied());
        }
        let status = if retained == 0 {
            log::warn!("pseudoinverse: all singular values truncated");
            PinvStatus::AllTruncated
        } else {
            PinvStatus::Ok
        };
        Ok(PinvResult { x, retained, status })
    }

    fn retained_mask(&self, truncation: Truncation) -> Vec<Vec<bool>> {
        // Padded singular values of wide blocks have no left vector.
        let usable = |blk: &BlockSvd, k: usize| k < blk.rows().min(blk.cols());
        match truncation {
            Truncation::None => {
                let smax = self.blocks.iter().map(|b| b.sigma[0]).fold(0.0, f64::max);
                let dim = self.blocks.iter().map(|b| b.rows().max(b.cols())).max().unwrap_or(1);
                let cut = dim as f64 * f64::EPSILON * smax;
                self.threshold_mask(cut, usable)
            }
            Truncation::Threshold(t) => self.threshold_mask(t, usable),
            Truncation::Rank(r) => {
                let mut all: Vec<(f64, usize, usize)> = self
                    .blocks
                    .iter()
                    .enumerate()
                    .flat_map(|(bi, b)| {
                        b.sigma
                            .iter()
                            .enumerate()
                            .filter(move |(k, s)| usable(b, *k) && **s > 0.0)
                            .map(move |(k, &s)| (s, bi, k))
                    })
                    .collect();
                all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let mut mask: Vec<Vec<bool>> = self.blocks.iter().map(|b| vec![false; b.sigma.len()]).collect();
                for &(_, bi, k) in all.iter().take(r) {
                    mask[bi][k] = true;
                }
                mask
            }
        }
    }

    fn threshold_mask(&self, cut: f64, usable: impl Fn(&BlockSvd, usize) -> bool) -> Vec<Vec<bool>> {
        self.blocks
            .iter()
            .map(|b| (0..b.sigma.len()).map(|k| usable(b, k) && b.sigma[k] > cut && b.sigma[k] > 0.0).collect())
            .collect()
    }
}

/// Pooled SVD report of a list of blocks.
pub fn svd_blocks(blocks: &[DMatrix<Complex64>], t: f64) -> Result<SvdReport> {
    Ok(BlockDiagonalSvd::new(blocks)?.report(t))
}

/// Column blocks `A_i` (stacked over the selected coils) for one mask.
pub fn column_blocks(grid: Grid, maps: &CoilStack, mask: &SamplingMask) -> Result<Vec<DMatrix<Complex64>>> {
    let a = build_a_dft(mask, grid)?;
    (0..grid.m()).into_par_iter().map(|i| slice_matrix(&a, maps, i)).collect()
}

/// One configuration of a stability study.
#[derive(Debug, Clone)]
pub struct StabilityCase {
    pub label: String,
    pub mask: SamplingMask,
    /// Coil indices (into the maps stack) included in the operator.
    pub coils: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StabilityResult {
    pub label: String,
    pub scan_time: f64,
    pub coils: usize,
    pub report: SvdReport,
}

/// Row of the summary table.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub kappa: f64,
    pub null_dim: usize,
    pub t: f64,
    pub scan_time: f64,
}

impl StabilityResult {
    pub fn summary(&self) -> SummaryRow {
        SummaryRow {
            label: self.label.clone(),
            kappa: self.report.kappa,
            null_dim: self.report.null_dim,
            t: self.report.t,
            scan_time: self.scan_time,
        }
    }
}

/// Runs every case in order; output order matches `cases`.
pub fn stability_sweep(grid: Grid, maps: &CoilStack, cases: &[StabilityCase], t: f64) -> Result<Vec<StabilityResult>> {
    if maps.n() != grid.n() || maps.m() != grid.m() {
        return Err(Error::mismatch("maps do not match the grid"));
    }
    cases
        .iter()
        .map(|case| {
            let subset = maps.select_coils(&case.coils)?;
            let blocks = column_blocks(grid, &subset, &case.mask)?;
            let report = svd_blocks(&blocks, t)?;
            Ok(StabilityResult {
                label: case.label.clone(),
                scan_time: case.mask.scan_time(),
                coils: case.coils.len(),
                report,
            })
        })
        .collect()
}
