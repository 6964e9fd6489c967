//! Whole-image comparison methods sharing the multi-coil forward model:
//! zero-filled SOS, Tikhonov by conjugate gradients, and 2-D smoothed TV.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::CenteredFft2;
use crate::geometry::{Grid, SamplingMask};
use crate::operators::{prepare_g, stack_complex, unstack_complex};
use crate::optim::{self, LbfgsOptions, Termination};
use crate::solver::{sos_combine, ReconResult, SolveSummary, DEFAULT_BETA};
use crate::stack::{CoilStack, StackKind};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn check_shapes(n: usize, m: usize, maps: &CoilStack, mask: &SamplingMask) -> Result<()> {
    if maps.n() != n || maps.m() != m || mask.n() != n {
        return Err(Error::mismatch("images, maps and mask disagree in size"));
    }
    Ok(())
}

/// Per coil `j`: masked centred 2-D DFT of `Σ_q s_j^(q) F_q`.
pub fn forward_2d(images: &CoilStack, maps: &CoilStack, mask: &SamplingMask) -> Result<CoilStack> {
    let (n, m) = (images.n(), images.m());
    check_shapes(n, m, maps, mask)?;
    if images.coils() != 1 || images.maps() != maps.maps() {
        return Err(Error::mismatch("images must hold one image per map"));
    }
    let plan = CenteredFft2::new(n, m);
    let mut out = CoilStack::zeros(n, m, maps.coils(), 1, StackKind::Kspace);
    out.data_mut().par_chunks_mut(n * m).enumerate().for_each(|(j, h)| {
        for q in 0..maps.maps() {
            for ((o, s), f) in h.iter_mut().zip(maps.image(j, q)).zip(images.image(0, q)) {
                *o += s * f;
            }
        }
        plan.forward(h);
        for row in 0..n {
            if !mask.is_acquired(row) {
                h[row * m..(row + 1) * m].fill(ZERO);
            }
        }
    });
    Ok(out)
}

/// Adjoint of [`forward_2d`]: `F_q = Σ_j conj(s_j^(q)) IDFT2(mask · h_j)`.
pub fn adjoint_2d(kspace: &CoilStack, maps: &CoilStack, mask: &SamplingMask) -> Result<CoilStack> {
    let (n, m) = (kspace.n(), kspace.m());
    check_shapes(n, m, maps, mask)?;
    if kspace.coils() != maps.coils() || kspace.maps() != 1 {
        return Err(Error::mismatch("k-space and maps disagree in coil count"));
    }
    let plan = CenteredFft2::new(n, m);
    let coil_images: Vec<Vec<Complex64>> = (0..maps.coils())
        .into_par_iter()
        .map(|j| {
            let mut h = kspace.image(j, 0).to_vec();
            for row in 0..n {
                if !mask.is_acquired(row) {
                    h[row * m..(row + 1) * m].fill(ZERO);
                }
            }
            plan.inverse(&mut h);
            h
        })
        .collect();
    let mut out = CoilStack::zeros(n, m, 1, maps.maps(), StackKind::Image);
    for q in 0..maps.maps() {
        let img = out.image_mut(0, q);
        for (j, h) in coil_images.iter().enumerate() {
            for ((o, s), v) in img.iter_mut().zip(maps.image(j, q)).zip(h) {
                *o += s.conj() * v;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    ZeroFill,
    Tikhonov,
    Tv2d,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::ZeroFill => "zero_fill",
            BaselineMethod::Tikhonov => "tikhonov",
            BaselineMethod::Tv2d => "tv2d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub method: BaselineMethod,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Relative residual for CG; gradient tolerance for TV.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_max_iter() -> usize {
    300
}
fn default_tolerance() -> f64 {
    1e-8
}

impl BaselineSpec {
    pub fn new(method: BaselineMethod, alpha: f64) -> Self {
        BaselineSpec {
            method,
            alpha,
            beta: default_beta(),
            max_iter: default_max_iter(),
            tolerance: default_tolerance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.method == BaselineMethod::Tv2d && (!(self.beta > 0.0) || !self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

/// Output of [`tikhonov_cg`].
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub images: CoilStack,
    pub iterations: usize,
    pub converged: bool,
    /// `||A x - b||^2 + alpha ||x||^2` at the start and after every step.
    pub history: Vec<f64>,
}

/// Conjugate gradients on `(A^H A + alpha I) x = A^H b`, starting from zero.
pub fn tikhonov_cg(
    kspace: &CoilStack,
    maps: &CoilStack,
    mask: &SamplingMask,
    alpha: f64,
    max_iter: usize,
    tolerance: f64,
) -> Result<CgOutcome> {
    let (n, m, p) = (kspace.n(), kspace.m(), maps.maps());
    let normal = |x: &[Complex64]| -> Result<Vec<Complex64>> {
        let img = CoilStack::from_data(n, m, 1, p, StackKind::Image, x.to_vec())?;
        let back = adjoint_2d(&forward_2d(&img, maps, mask)?, maps, mask)?;
        Ok(back.into_data().into_iter().zip(x).map(|(v, xi)| v + alpha * xi).collect())
    };
    let rhs = adjoint_2d(kspace, maps, mask)?.into_data();
    let b_norm = kspace
        .data()
        .chunks(m)
        .enumerate()
        .filter(|(row, _)| mask.is_acquired(row % n))
        .map(|(_, line)| norm_sqr(line))
        .sum::<f64>();
    // f(x) = x^H H x - 2 Re(x^H A^H b) + ||b||^2
    let objective = |x: &[Complex64], hx: &[Complex64]| b_norm + dot(x, hx).re - 2.0 * dot(x, &rhs).re;

    let mut x = vec![ZERO; n * m * p];
    let mut r = rhs.clone();
    let mut d = r.clone();
    let mut rr = norm_sqr(&r);
    let stop = tolerance * tolerance * rr;
    let mut history = vec![b_norm];
    let mut iterations = 0;
    let mut converged = rr <= stop || rr == 0.0;
    while !converged && iterations < max_iter {
        let hd = normal(&d)?;
        let curvature = dot(&d, &hd).re;
        if !curvature.is_finite() || curvature <= 0.0 {
            if !curvature.is_finite() {
                return Err(Error::NumericalFailure("CG curvature is not finite".into()));
            }
            break;
        }
        let step = rr / curvature;
        for ((xi, ri), (di, hdi)) in x.iter_mut().zip(r.iter_mut()).zip(d.iter().zip(&hd)) {
            *xi += step * di;
            *ri -= step * hdi;
        }
        let rr_new = norm_sqr(&r);
        if !rr_new.is_finite() {
            return Err(Error::NumericalFailure("CG residual is not finite".into()));
        }
        let beta = rr_new / rr;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
        rr = rr_new;
        iterations += 1;
        // H x = A^H b - r
        let hx: Vec<Complex64> = rhs.iter().zip(&r).map(|(a, b)| a - b).collect();
        history.push(objective(&x, &hx));
        converged = rr <= stop;
    }
    Ok(CgOutcome {
        images: CoilStack::from_data(n, m, 1, p, StackKind::Image, x)?,
        iterations,
        converged,
        history,
    })
}

/// 2-D smoothed TV objective `||F_T S F - b||^2 + alpha sqrt(|∇Re F|^2 +
/// |∇Im F|^2 + beta^2)` over real unknowns `(Re F, Im F)`.
pub struct Tv2dProblem<'a> {
    kspace: &'a CoilStack,
    maps: &'a CoilStack,
    mask: &'a SamplingMask,
    alpha: f64,
    beta: f64,
    grid: Grid,
}

impl<'a> Tv2dProblem<'a> {
    pub fn new(kspace: &'a CoilStack, maps: &'a CoilStack, mask: &'a SamplingMask, alpha: f64, beta: f64) -> Result<Self> {
        let grid = Grid::new(kspace.n(), kspace.m())?;
        check_shapes(grid.n(), grid.m(), maps, mask)?;
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
        }
        Ok(Tv2dProblem {
            kspace,
            maps,
            mask,
            alpha,
            beta,
            grid,
        })
    }

    pub fn unknowns(&self) -> usize {
        2 * self.grid.len() * self.maps.maps()
    }

    /// Value, writing the gradient into `grad`.
    pub fn eval(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (n, m, p) = (self.grid.n(), self.grid.m(), self.maps.maps());
        let x = unstack_complex(z);
        let img = CoilStack::from_data(n, m, 1, p, StackKind::Image, x)?;
        let mut resid = forward_2d(&img, self.maps, self.mask)?;
        for (r, b) in resid.data_mut().iter_mut().zip(self.kspace.data()) {
            *r -= b;
        }
        // masked rows of b are ignored; forward already zeroes them in r
        for j in 0..resid.coils() {
            let h = resid.image_mut(j, 0);
            for row in 0..n {
                if !self.mask.is_acquired(row) {
                    h[row * m..(row + 1) * m].fill(ZERO);
                }
            }
        }
        let mut value = norm_sqr(resid.data());
        let back = adjoint_2d(&resid, self.maps, self.mask)?;
        let g = stack_complex(back.data());
        for (gi, v) in grad.iter_mut().zip(g.iter()) {
            *gi = 2.0 * v;
        }
        if self.alpha > 0.0 {
            let half = z.len() / 2;
            let mut sum = self.beta * self.beta;
            for part in [&z[..half], &z[half..]] {
                for img in part.chunks(n * m) {
                    for r in 0..n {
                        for c in 0..m {
                            let v = img[r * m + c];
                            if c + 1 < m {
                                sum += (img[r * m + c + 1] - v).powi(2);
                            }
                            if r + 1 < n {
                                sum += (img[(r + 1) * m + c] - v).powi(2);
                            }
                        }
                    }
                }
            }
            let tv = sum.sqrt();
            let scale = self.alpha / tv;
            for (off, part) in [(0, &z[..half]), (half, &z[half..])] {
                for (k, img) in part.chunks(n * m).enumerate() {
                    let base = off + k * n * m;
                    for r in 0..n {
                        for c in 0..m {
                            let v = img[r * m + c];
                            let mut acc = 0.0;
                            if c + 1 < m {
                                acc -= img[r * m + c + 1] - v;
                            }
                            if c > 0 {
                                acc += v - img[r * m + c - 1];
                            }
                            if r + 1 < n {
                                acc -= img[(r + 1) * m + c] - v;
                            }
                            if r > 0 {
                                acc += v - img[(r - 1) * m + c];
                            }
                            grad[base + r * m + c] += scale * acc;
                        }
                    }
                }
            }
            value += self.alpha * tv;
        }
        Ok(value)
    }
}

/// Value and gradient of the 2-D TV objective at `z`.
pub fn tv2d_objective(problem: &Tv2dProblem<'_>, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z.len() != problem.unknowns() {
        return Err(Error::mismatch("unknown vector has the wrong length"));
    }
    let mut g = vec![0.0; z.len()];
    let v = problem.eval(z, &mut g)?;
    Ok((v, g))
}

/// Zero-filled per-map start point `F0_q = Σ_j conj(s_j^q) g_j / Σ |s|^2`.
fn zero_filled_images(g: &CoilStack, maps: &CoilStack) -> CoilStack {
    let (n, m, p) = (g.n(), g.m(), maps.maps());
    let mut weight = vec![0.0; n * m];
    for j in 0..maps.coils() {
        for q in 0..p {
            for (w, s) in weight.iter_mut().zip(maps.image(j, q)) {
                *w += s.norm_sqr();
            }
        }
    }
    let mut out = CoilStack::zeros(n, m, 1, p, StackKind::Image);
    for q in 0..p {
        let img = out.image_mut(0, q);
        for j in 0..maps.coils() {
            for ((o, s), v) in img.iter_mut().zip(maps.image(j, q)).zip(g.image(j, 0)) {
                *o += s.conj() * v;
            }
        }
        for (o, w) in img.iter_mut().zip(&weight) {
            *o = if *w > 1e-12 { *o / *w } else { ZERO };
        }
    }
    out
}

pub fn reconstruct_baseline(
    kspace: &CoilStack,
    maps: &CoilStack,
    mask: &SamplingMask,
    spec: &BaselineSpec,
) -> Result<ReconResult> {
    spec.validate()?;
    let grid = Grid::new(kspace.n(), kspace.m())?;
    check_shapes(grid.n(), grid.m(), maps, mask)?;
    if kspace.coils() != maps.coils() {
        return Err(Error::mismatch("k-space and maps disagree in coil count"));
    }
    match spec.method {
        BaselineMethod::ZeroFill => {
            let g = prepare_g(kspace, grid)?;
            Ok(ReconResult {
                magnitude: sos_combine(&g),
                map_images: None,
                slices: Vec::new(),
                summary: None,
            })
        }
        BaselineMethod::Tikhonov => {
            let out = tikhonov_cg(kspace, maps, mask, spec.alpha, spec.max_iter, spec.tolerance)?;
            Ok(ReconResult {
                magnitude: sos_combine(&out.images),
                summary: Some(SolveSummary {
                    iterations: out.iterations,
                    objective: *out.history.last().expect("history starts non-empty"),
                    converged: out.converged,
                }),
                map_images: Some(out.images),
                slices: Vec::new(),
            })
        }
        BaselineMethod::Tv2d => {
            let problem = Tv2dProblem::new(kspace, maps, mask, spec.alpha, spec.beta)?;
            let start = zero_filled_images(&prepare_g(kspace, grid)?, maps);
            let z0 = stack_complex(start.data());
            let opts = LbfgsOptions {
                max_iter: spec.max_iter,
                gtol: spec.tolerance,
                ..LbfgsOptions::default()
            };
            let min = optim::minimize(|z, g| problem.eval(z, g).unwrap_or(f64::NAN), z0.as_slice(), &opts);
            if min.termination == Termination::NonFinite {
                return Err(Error::NumericalFailure("tv2d objective became non-finite".into()));
            }
            let images = CoilStack::from_data(grid.n(), grid.m(), 1, maps.maps(), StackKind::Image, unstack_complex(&min.x))?;
            Ok(ReconResult {
                magnitude: sos_combine(&images),
                summary: Some(SolveSummary {
                    iterations: min.iterations,
                    objective: min.value,
                    converged: min.converged(),
                }),
                map_images: Some(images),
                slices: Vec::new(),
            })
        }
    }
}
