//! The 1-D Fredholm operator `I - L` and the per-column systems built on it.
//!
//! For a fixed column `x1 = u_i`, the zero-filled coil image column satisfies
//! `g_j = (I - L) (s_j F)` where `L` is convolution (along `x2`) with
//!
//! ```text
//! L(x) = (1/π) Σ_b w_b exp(i c_b x) sinc(w_b x)
//! ```
//!
//! summed over the missing bands `(c_b, w_b)`. Two discretizations are
//! provided: midpoint quadrature of that kernel, and the exact projection
//! `W^H diag(acquired) W` that discrete zero-filled data obeys.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, CenteredFft2};
use crate::geometry::{mask_to_bands, BandSet, Grid, SamplingMask};
use crate::stack::{CoilStack, StackKind};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Evaluates the band kernel `L(x2)`.
pub fn kernel_eval(bands: &BandSet, x2: f64) -> Complex64 {
    bands
        .bands()
        .iter()
        .map(|b| Complex64::from_polar(b.half_width * sinc(b.half_width * x2), b.center * x2))
        .sum::<Complex64>()
        / std::f64::consts::PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Midpoint quadrature of the continuous band kernel.
    Analytic,
    /// Exact discrete projection onto the acquired frequencies.
    Dft,
}

/// Discretized `I - L` on the `n` rows of a grid.
#[derive(Debug, Clone)]
pub struct FredholmMatrix {
    matrix: DMatrix<Complex64>,
    provenance: Provenance,
    grid: Grid,
    bands: BandSet,
    mask: Option<SamplingMask>,
}

impl FredholmMatrix {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn bands(&self) -> &BandSet {
        &self.bands
    }

    pub fn mask(&self) -> Option<&SamplingMask> {
        self.mask.as_ref()
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.n();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|r| (0..n).map(|c| self.matrix[(r, c)] * x[c]).sum())
            .collect()
    }
}

/// `A[a][b] = δ_ab - L(v_a - v_b) / n`.
pub fn build_a_analytic(bands: &BandSet, grid: Grid) -> FredholmMatrix {
    let n = grid.n();
    let nf = n as f64;
    // Toeplitz: tabulate L at the 2n-1 lags once.
    let lags: Vec<Complex64> = (0..2 * n - 1)
        .map(|k| kernel_eval(bands, (k as f64 - (n - 1) as f64) / nf) / nf)
        .collect();
    let matrix = DMatrix::from_fn(n, n, |a, b| {
        let delta = if a == b { 1.0 } else { 0.0 };
        Complex64::new(delta, 0.0) - lags[a + n - 1 - b]
    });
    FredholmMatrix {
        matrix,
        provenance: Provenance::Analytic,
        grid,
        bands: bands.clone(),
        mask: None,
    }
}

/// `A = W^H diag(acquired) W` with `W` the centered unitary DFT. Circulant:
/// `A[a][b] = (1/n) Σ_{j acquired} exp(2πi (j-h)(a-b)/n)`.
pub fn build_a_dft(mask: &SamplingMask, grid: Grid) -> Result<FredholmMatrix> {
    let n = grid.n();
    if mask.n() != n {
        return Err(Error::mismatch(format!("mask has {} lines, grid has {n} rows", mask.n())));
    }
    let h = fft::center(n) as f64;
    let nf = n as f64;
    let acquired: Vec<f64> = (0..n).filter(|&j| mask.is_acquired(j)).map(|j| j as f64 - h).collect();
    let circ: Vec<Complex64> = (0..n)
        .map(|d| {
            acquired
                .iter()
                .map(|&k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k * d as f64 / nf))
                .sum::<Complex64>()
                / nf
        })
        .collect();
    let matrix = DMatrix::from_fn(n, n, |a, b| circ[(a + n - b) % n]);
    Ok(FredholmMatrix {
        matrix,
        provenance: Provenance::Dft,
        grid,
        bands: mask_to_bands(mask),
        mask: Some(mask.clone()),
    })
}

/// Zero-filled coil images: centered 2-D inverse DFT of each coil's k-space.
pub fn prepare_g(kspace: &CoilStack, grid: Grid) -> Result<CoilStack> {
    if kspace.n() != grid.n() || kspace.m() != grid.m() {
        return Err(Error::mismatch(format!(
            "k-space is {}x{}, grid is {}x{}",
            kspace.n(),
            kspace.m(),
            grid.n(),
            grid.m()
        )));
    }
    let plan = CenteredFft2::new(grid.n(), grid.m());
    let mut out = kspace.clone();
    out.set_kind(StackKind::Image);
    out.data_mut()
        .par_chunks_mut(grid.len())
        .for_each(|img| plan.inverse(img));
    Ok(out)
}

/// Stacked per-column system `C_i F_i = b_i`.
#[derive(Debug, Clone)]
pub struct SliceSystem {
    pub c: DMatrix<Complex64>,
    pub b: DVector<Complex64>,
    /// Zero-filled start point, map-major like the columns of `c`.
    pub x0: DVector<Complex64>,
    /// 0-based column index `i` (the slice at `x1 = u_i`).
    pub column: usize,
    pub grid: Grid,
    pub coils: usize,
    pub maps: usize,
}

impl SliceSystem {
    pub fn n(&self) -> usize {
        self.grid.n()
    }
}

/// `C_i` alone: row block `j` is `A [S^(j,1), ..., S^(j,p)]`.
pub fn slice_matrix(a: &FredholmMatrix, maps: &CoilStack, column: usize) -> Result<DMatrix<Complex64>> {
    let grid = a.grid();
    let n = grid.n();
    if maps.n() != n || maps.m() != grid.m() {
        return Err(Error::mismatch("sensitivity maps do not match the operator grid"));
    }
    if column >= grid.m() {
        return Err(Error::invalid(format!("column {column} out of range 0..{}", grid.m())));
    }
    let (k, p) = (maps.coils(), maps.maps());
    let am = a.matrix();
    let mut c = DMatrix::from_element(n * k, n * p, ZERO);
    for j in 0..k {
        for q in 0..p {
            let s = maps.column(j, q, column);
            for col in 0..n {
                let sc = s[col];
                for row in 0..n {
                    c[(j * n + row, q * n + col)] = am[(row, col)] * sc;
                }
            }
        }
    }
    Ok(c)
}

/// Builds `C_i` and `b_i` for column `column` (0-based).
pub fn assemble_slice(a: &FredholmMatrix, maps: &CoilStack, g: &CoilStack, column: usize) -> Result<SliceSystem> {
    let grid = a.grid();
    if g.n() != grid.n() || g.m() != grid.m() {
        return Err(Error::mismatch("data grid does not match the operator grid"));
    }
    if g.coils() != maps.coils() {
        return Err(Error::mismatch(format!("data has {} coils, maps have {}", g.coils(), maps.coils())));
    }
    let c = slice_matrix(a, maps, column)?;
    let n = grid.n();
    let mut b = DVector::from_element(n * g.coils(), ZERO);
    for j in 0..g.coils() {
        for (r, v) in g.column(j, 0, column).into_iter().enumerate() {
            b[j * n + r] = v;
        }
    }
    let x0 = zero_filled_column(maps, g, column);
    Ok(SliceSystem {
        c,
        b,
        x0,
        column,
        grid,
        coils: maps.coils(),
        maps: maps.maps(),
    })
}

/// `F0_q = Σ_j conj(s_j^q) g_j / Σ_{j,q'} |s_j^q'|^2` on one column, zero
/// where the maps vanish.
pub fn zero_filled_column(maps: &CoilStack, g: &CoilStack, column: usize) -> DVector<Complex64> {
    let (n, k, p) = (maps.n(), maps.coils(), maps.maps());
    let mut weight = vec![0.0; n];
    for j in 0..k {
        for q in 0..p {
            for (w, s) in weight.iter_mut().zip(maps.column(j, q, column)) {
                *w += s.norm_sqr();
            }
        }
    }
    let mut x0 = DVector::from_element(n * p, ZERO);
    for j in 0..k {
        let gj = g.column(j, 0, column);
        for q in 0..p {
            for (r, s) in maps.column(j, q, column).into_iter().enumerate() {
                x0[q * n + r] += s.conj() * gj[r];
            }
        }
    }
    for q in 0..p {
        for r in 0..n {
            x0[q * n + r] = if weight[r] > 1e-12 { x0[q * n + r] / weight[r] } else { ZERO };
        }
    }
    x0
}

/// Real form `[[Re C, -Im C], [Im C, Re C]]` acting on `(Re F, Im F)`.
#[derive(Debug, Clone)]
pub struct RealifiedSystem {
    pub m_r: DMatrix<f64>,
    pub b_r: DVector<f64>,
    pub n: usize,
    pub maps: usize,
}

impl RealifiedSystem {
    /// Number of real unknowns, `2 n p`.
    pub fn unknowns(&self) -> usize {
        self.m_r.ncols()
    }
}

pub fn realify(sys: &SliceSystem) -> RealifiedSystem {
    let (rows, cols) = sys.c.shape();
    let mut m_r = DMatrix::zeros(2 * rows, 2 * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = sys.c[(r, c)];
            m_r[(r, c)] = v.re;
            m_r[(r, cols + c)] = -v.im;
            m_r[(rows + r, c)] = v.im;
            m_r[(rows + r, cols + c)] = v.re;
        }
    }
    let b_r = DVector::from_fn(2 * rows, |k, _| if k < rows { sys.b[k].re } else { sys.b[k - rows].im });
    RealifiedSystem {
        m_r,
        b_r,
        n: sys.n(),
        maps: sys.maps,
    }
}

/// `(Re x, Im x)` stacked.
pub fn stack_complex(x: &[Complex64]) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(2 * n, |k, _| if k < n { x[k].re } else { x[k - n].im })
}

/// Inverse of [`stack_complex`].
pub fn unstack_complex(z: &[f64]) -> Vec<Complex64> {
    let n = z.len() / 2;
    (0..n).map(|k| Complex64::new(z[k], z[n + k])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_random_mask, Band};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn crand(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    #[test]
    fn kernel_trivial_values() {
        assert_eq!(kernel_eval(&BandSet::empty(), 0.3), ZERO);
        let b = BandSet::new(vec![Band { center: 0.0, half_width: 2.0 }]).unwrap();
        let v = kernel_eval(&b, 0.0);
        assert!((v.re - 2.0 / std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn kernel_hermitian() {
        let b = BandSet::new(vec![
            Band { center: 3.0, half_width: 0.5 },
            Band { center: -7.0, half_width: 1.5 },
        ])
        .unwrap();
        for x in [0.1, 0.37, 0.9] {
            assert!((kernel_eval(&b, -x) - kernel_eval(&b, x).conj()).norm() < 1e-15);
        }
    }

    #[test]
    fn analytic_empty_is_identity() {
        let g = Grid::new(6, 3).unwrap();
        let a = build_a_analytic(&BandSet::empty(), g);
        assert_eq!(a.matrix(), &DMatrix::identity(6, 6));
    }

    #[test]
    fn analytic_centered_band_real_symmetric_toeplitz() {
        let g = Grid::new(10, 2).unwrap();
        let b = BandSet::new(vec![Band { center: 0.0, half_width: 9.0 }]).unwrap();
        let a = build_a_analytic(&b, g);
        let m = a.matrix();
        for r in 0..10 {
            for c in 0..10 {
                assert_eq!(m[(r, c)].im, 0.0);
                assert!((m[(r, c)] - m[(c, r)]).norm() < 1e-15);
                if r > 0 && c > 0 {
                    assert!((m[(r, c)] - m[(r - 1, c - 1)]).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn dft_extremes() {
        let g = Grid::new(8, 2).unwrap();
        let full = build_a_dft(&SamplingMask::full(8), g).unwrap();
        assert!((full.matrix() - DMatrix::<Complex64>::identity(8, 8)).norm() < 1e-13);
        assert!(build_a_dft(&SamplingMask::full(6), g).is_err());
    }

    #[test]
    fn dft_no_lines_is_zero() {
        // SamplingMask refuses an empty mask; check the formula through the
        // complement identity A(mask) + A(complement) = I.
        let n = 12;
        let g = Grid::new(n, 2).unwrap();
        let mask = make_random_mask(n, 0.5, 0, 4).unwrap();
        let comp: Vec<bool> = mask.acquired().iter().map(|a| !a).collect();
        let comp = SamplingMask::new(comp, 0).unwrap();
        let sum = build_a_dft(&mask, g).unwrap().matrix() + build_a_dft(&comp, g).unwrap().matrix();
        assert!((sum - DMatrix::<Complex64>::identity(n, n)).norm() < 1e-12);
    }

    #[test]
    fn dft_is_orthogonal_projection() {
        let n = 32;
        let g = Grid::new(n, 2).unwrap();
        let mask = make_random_mask(n, 0.6, 4, 11).unwrap();
        let a = build_a_dft(&mask, g).unwrap();
        let m = a.matrix();
        let w = fft::dft_matrix(n);
        let d = DMatrix::from_fn(n, n, |r, c| {
            if r == c && mask.is_acquired(r) {
                Complex64::new(1.0, 0.0)
            } else {
                ZERO
            }
        });
        let reference = w.adjoint() * d * &w;
        assert!((m - &reference).camax() < 1e-12);
        assert!((m * m - m).camax() < 1e-12);
        assert!((m.adjoint() - m).camax() < 1e-12);
        let trace: Complex64 = (0..n).map(|k| m[(k, k)]).sum();
        assert!((trace.re - mask.acquired_count() as f64).abs() < 1e-12);
    }

    #[test]
    fn dft_and_analytic_agree_on_full_data() {
        let g = Grid::new(9, 2).unwrap();
        let a1 = build_a_dft(&SamplingMask::full(9), g).unwrap();
        let a2 = build_a_analytic(a1.bands(), g);
        assert!((a1.matrix() - a2.matrix()).camax() < 1e-12);
    }

    #[test]
    fn prepare_g_trivial_cases() {
        let g = Grid::new(8, 4).unwrap();
        let zeros = CoilStack::zeros(8, 4, 2, 1, StackKind::Kspace);
        let out = prepare_g(&zeros, g).unwrap();
        assert!(out.data().iter().all(|v| *v == ZERO));
        assert_eq!(out.kind(), StackKind::Image);
        assert!(prepare_g(&zeros, Grid::new(4, 8).unwrap()).is_err());
    }

    #[test]
    fn assemble_single_uniform_coil() {
        let g = Grid::new(6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask = make_random_mask(6, 0.5, 2, 1).unwrap();
        let a = build_a_dft(&mask, g).unwrap();
        let ones = CoilStack::from_data(6, 3, 1, 1, StackKind::Sensitivity, vec![Complex64::new(1.0, 0.0); 18]).unwrap();
        let data: Vec<Complex64> = (0..18).map(|_| crand(&mut rng)).collect();
        let gs = CoilStack::from_data(6, 3, 1, 1, StackKind::Image, data).unwrap();
        let sys = assemble_slice(&a, &ones, &gs, 1).unwrap();
        assert_eq!(&sys.c, a.matrix());
        assert_eq!(sys.b.as_slice(), gs.column(0, 0, 1).as_slice());
        assert!(assemble_slice(&a, &ones, &gs, 3).is_err());
    }

    #[test]
    fn assemble_two_coils_two_maps_layout() {
        let (n, m) = (5, 2);
        let g = Grid::new(n, m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = build_a_dft(&make_random_mask(n, 0.6, 1, 3).unwrap(), g).unwrap();
        let sdata: Vec<Complex64> = (0..n * m * 2 * 2).map(|_| crand(&mut rng)).collect();
        let maps = CoilStack::from_data(n, m, 2, 2, StackKind::Sensitivity, sdata).unwrap();
        let gdata: Vec<Complex64> = (0..n * m * 2).map(|_| crand(&mut rng)).collect();
        let gs = CoilStack::from_data(n, m, 2, 1, StackKind::Image, gdata).unwrap();
        let col = 1;
        let sys = assemble_slice(&a, &maps, &gs, col).unwrap();
        assert_eq!(sys.c.shape(), (2 * n, 2 * n));
        for j in 0..2 {
            for q in 0..2 {
                let s = DMatrix::from_diagonal(&DVector::from_vec(maps.column(j, q, col)));
                let block = a.matrix() * s;
                let got = sys.c.view((j * n, q * n), (n, n));
                assert!((got - block).camax() < 1e-15);
            }
        }
    }

    #[test]
    fn realify_structure() {
        let g = Grid::new(2, 2).unwrap();
        let c = DMatrix::from_diagonal_element(2, 2, Complex64::new(0.0, 1.0));
        let sys = SliceSystem {
            c,
            b: DVector::from_element(2, ZERO),
            x0: DVector::from_element(2, ZERO),
            column: 0,
            grid: g,
            coils: 1,
            maps: 1,
        };
        let r = realify(&sys);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, -1.0, 0.0, //
                0.0, 0.0, 0.0, -1.0, //
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0,
            ],
        );
        assert_eq!(r.m_r, expected);
    }

    #[test]
    fn realify_real_matrix_is_block_diagonal() {
        let g = Grid::new(3, 2).unwrap();
        let c = DMatrix::from_fn(3, 3, |r, k| Complex64::new((r * 3 + k) as f64, 0.0));
        let sys = SliceSystem { c: c.clone(), b: DVector::from_element(3, ZERO), x0: DVector::from_element(3, ZERO), column: 0, grid: g, coils: 1, maps: 1 };
        let r = realify(&sys);
        let re = c.map(|v| v.re);
        assert_eq!(r.m_r.view((0, 0), (3, 3)), re.view((0, 0), (3, 3)));
        assert_eq!(r.m_r.view((3, 3), (3, 3)), re.view((0, 0), (3, 3)));
        assert!(r.m_r.view((0, 3), (3, 3)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn realify_matches_complex_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Grid::new(4, 2).unwrap();
        let c = DMatrix::from_fn(8, 4, |_, _| crand(&mut rng));
        let x: Vec<Complex64> = (0..4).map(|_| crand(&mut rng)).collect();
        let sys = SliceSystem { c: c.clone(), b: DVector::from_element(8, ZERO), x0: DVector::from_element(8, ZERO), column: 0, grid: g, coils: 2, maps: 1 };
        let r = realify(&sys);
        let lhs = &r.m_r * stack_complex(&x);
        let cx = c * DVector::from_vec(x);
        let rhs = stack_complex(cx.as_slice());
        assert!((lhs - rhs).amax() < 1e-13);
    }
}
