//! Column-by-column reconstruction.
//!
//! Each column `i` of the image solves
//!
//! ```text
//! min_z  || M_r z - b_r ||^2 + alpha * TV_beta(Re F_i, Im F_i)
//! ```
//!
//! where `M_r` is the real form of the stacked coil system `C_i` and
//! `TV_beta(x, y) = sqrt(Σ (Δx)^2 + Σ (Δy)^2 + beta^2)`. The per-map images
//! are then combined as `|F| = sqrt(Σ_q |F_q|^2)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, SamplingMask};
use crate::operators::{assemble_slice, build_a_dft, realify, stack_complex, unstack_complex, RealifiedSystem, SliceSystem};
use crate::optim::{self, LbfgsOptions, Termination};
use crate::stack::{CoilStack, RealImage, StackKind};

/// Smoothing constant used throughout unless overridden.
pub const DEFAULT_BETA: f64 = 0.01;

/// How finite differences run across the stacked map vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvChain {
    /// Differences only within each map's length-`n` segment.
    #[default]
    PerMap,
    /// One chain over the whole `n p` vector, crossing map boundaries.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvParams {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub chain: TvChain,
}

impl TvParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = TvParams {
            alpha,
            beta,
            chain: TvChain::PerMap,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_chain(mut self, chain: TvChain) -> Self {
        self.chain = chain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `sqrt(Σ (x_{k+1}-x_k)^2 + Σ (y_{k+1}-y_k)^2 + beta^2)` and its gradient
/// with respect to `x` and `y`.
pub fn smoothed_tv(x: &[f64], y: &[f64], beta: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
    }
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::mismatch("TV inputs must be non-empty and of equal length"));
    }
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; y.len()];
    let v = tv_segmented(x, y, x.len(), beta, &mut gx, &mut gy);
    Ok((v, gx, gy))
}

/// Smoothed TV where differences are confined to consecutive segments of
/// length `seg`. Gradients are written (not accumulated) into `gx`, `gy`.
fn tv_segmented(x: &[f64], y: &[f64], seg: usize, beta: f64, gx: &mut [f64], gy: &mut [f64]) -> f64 {
    let mut sum = beta * beta;
    for (xs, ys) in x.chunks(seg).zip(y.chunks(seg)) {
        for k in 1..xs.len() {
            let dx = xs[k] - xs[k - 1];
            let dy = ys[k] - ys[k - 1];
            sum += dx * dx + dy * dy;
        }
    }
    let value = sum.sqrt();
    let inv = 1.0 / value;
    for (start, (xs, ys)) in x.chunks(seg).zip(y.chunks(seg)).enumerate().map(|(c, s)| (c * seg, s)) {
        let len = xs.len();
        for k in 0..len {
            let mut ax = 0.0;
            let mut ay = 0.0;
            if k > 0 {
                ax += xs[k] - xs[k - 1];
                ay += ys[k] - ys[k - 1];
            }
            if k + 1 < len {
                ax -= xs[k + 1] - xs[k];
                ay -= ys[k + 1] - ys[k];
            }
            gx[start + k] = ax * inv;
            gy[start + k] = ay * inv;
        }
    }
    value
}

fn tv_term(z: &[f64], n: usize, params: &TvParams, grad: &mut [f64]) -> f64 {
    let half = z.len() / 2;
    let seg = match params.chain {
        TvChain::PerMap => n,
        TvChain::Full => half,
    };
    let (x, y) = z.split_at(half);
    let (gx, gy) = grad.split_at_mut(half);
    tv_segmented(x, y, seg.max(1), params.beta, gx, gy)
}

/// Value and gradient of the per-slice objective, evaluated directly from the
/// real system.
pub fn slice_objective(sys: &RealifiedSystem, z: &[f64], params: &TvParams) -> Result<(f64, Vec<f64>)> {
    if z.len() != sys.unknowns() {
        return Err(Error::mismatch(format!("z has {} entries, system has {} unknowns", z.len(), sys.unknowns())));
    }
    let zv = DVector::from_column_slice(z);
    let r = &sys.m_r * zv - &sys.b_r;
    let mut grad: Vec<f64> = (sys.m_r.transpose() * &r * 2.0).iter().copied().collect();
    let mut value = r.norm_squared();
    if params.alpha > 0.0 {
        let mut tv_grad = vec![0.0; z.len()];
        value += params.alpha * tv_term(z, sys.n, params, &mut tv_grad);
        for (g, t) in grad.iter_mut().zip(&tv_grad) {
            *g += params.alpha * t;
        }
    }
    Ok((value, grad))
}

/// Orthogonally reduced least-squares term: `||M_r z - b_r||^2 =
/// ||R z - d||^2 + rho` with `M_r = Q R`.
struct ReducedSlice {
    r: DMatrix<f64>,
    d: DVector<f64>,
    rho: f64,
    n: usize,
}

impl ReducedSlice {
    fn new(sys: &RealifiedSystem) -> Self {
        let qr = sys.m_r.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let d = q.transpose() * &sys.b_r;
        let rho = (&sys.b_r - &q * &d).norm_squared();
        ReducedSlice { r, d, rho, n: sys.n }
    }

    fn eval(&self, z: &[f64], grad: &mut [f64], params: &TvParams) -> f64 {
        let zv = DVector::from_column_slice(z);
        let res = &self.r * zv - &self.d;
        let g = self.r.tr_mul(&res) * 2.0;
        let mut value = res.norm_squared() + self.rho;
        if params.alpha > 0.0 {
            value += params.alpha * tv_term(z, self.n, params, grad);
            for (gi, li) in grad.iter_mut().zip(g.iter()) {
                *gi = params.alpha * *gi + li;
            }
        } else {
            grad.copy_from_slice(g.as_slice());
        }
        value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SliceSolution {
    /// One length-`n` complex vector per sensitivity map.
    pub maps: Vec<Vec<Complex64>>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub termination: Termination,
    /// Objective at the start point and after each accepted iterate.
    pub history: Vec<f64>,
}

impl SliceSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Minimizes the slice objective from the system's zero-filled start point.
pub fn solve_slice(sys: &SliceSystem, params: &TvParams, opts: &LbfgsOptions) -> Result<SliceSolution> {
    params.validate()?;
    let (n, p) = (sys.n(), sys.maps);
    if sys.c.ncols() != n * p || sys.x0.len() != n * p {
        return Err(Error::mismatch("slice system columns do not match n * maps"));
    }
    let real = realify(sys);
    let reduced = ReducedSlice::new(&real);
    let z0 = stack_complex(sys.x0.as_slice());
    let min = optim::minimize(|z, g| reduced.eval(z, g, params), z0.as_slice(), opts);
    let status = match min.termination {
        Termination::NonFinite => SolveStatus::NumericalFailure,
        _ if min.converged() => SolveStatus::Converged,
        _ => SolveStatus::NotConverged,
    };
    let flat = unstack_complex(&min.x);
    Ok(SliceSolution {
        maps: flat.chunks(n).map(|c| c.to_vec()).collect(),
        objective: min.value,
        iterations: min.iterations,
        status,
        termination: min.termination,
        history: min.history,
    })
}

/// Root-sum-of-squares over every coil and map of a stack.
pub fn sos_combine(stack: &CoilStack) -> RealImage {
    let (n, m) = (stack.n(), stack.m());
    let mut out = vec![0.0; n * m];
    for c in 0..stack.coils() {
        for q in 0..stack.maps() {
            for (o, v) in out.iter_mut().zip(stack.image(c, q)) {
                *o += v.norm_sqr();
            }
        }
    }
    for o in out.iter_mut() {
        *o = o.sqrt();
    }
    RealImage::from_data(n, m, out).expect("sizes agree")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SliceDiagnostics {
    pub column: usize,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveSummary {
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub magnitude: RealImage,
    /// Per-map complex images (one coil, `p` maps), when the method has them.
    pub map_images: Option<CoilStack>,
    pub slices: Vec<SliceDiagnostics>,
    pub summary: Option<SolveSummary>,
}

impl ReconResult {
    pub fn failed_slices(&self) -> Vec<usize> {
        self.slices.iter().filter(|s| s.failed).map(|s| s.column).collect()
    }
}

/// Solves every column and assembles `|F|`. Columns whose solve fails
/// numerically keep their zero-filled start point and are flagged.
pub fn reconstruct(
    g: &CoilStack,
    maps: &CoilStack,
    mask: &SamplingMask,
    params: &TvParams,
    opts: &LbfgsOptions,
) -> Result<ReconResult> {
    params.validate()?;
    let grid = Grid::new(g.n(), g.m())?;
    if maps.n() != grid.n() || maps.m() != grid.m() || maps.coils() != g.coils() {
        return Err(Error::mismatch("maps and data disagree in shape or coil count"));
    }
    let a = build_a_dft(mask, grid)?;
    let (n, m, p) = (grid.n(), grid.m(), maps.maps());

    let solved: Vec<(Vec<Vec<Complex64>>, SliceDiagnostics)> = (0..m)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let sys = assemble_slice(&a, maps, g, i)?;
            let sol = solve_slice(&sys, params, opts)?;
            let failed = sol.status == SolveStatus::NumericalFailure;
            let converged = sol.converged();
            let cols = if failed {
                log::warn!("column {i}: numerical failure, keeping zero-filled estimate");
                sys.x0.as_slice().chunks(n).map(|c| c.to_vec()).collect()
            } else {
                sol.maps
            };
            Ok((
                cols,
                SliceDiagnostics {
                    column: i,
                    iterations: sol.iterations,
                    objective: sol.objective,
                    converged,
                    failed,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut images = CoilStack::zeros(n, m, 1, p, StackKind::Image);
    let mut slices = Vec::with_capacity(m);
    for (i, (cols, diag)) in solved.into_iter().enumerate() {
        for (q, col) in cols.iter().enumerate() {
            let img = images.image_mut(0, q);
            for (r, v) in col.iter().enumerate() {
                img[r * m + i] = *v;
            }
        }
        slices.push(diag);
    }
    Ok(ReconResult {
        magnitude: sos_combine(&images),
        map_images: Some(images),
        slices,
        summary: None,
    })
}
