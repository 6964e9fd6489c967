//! Centered, unitary discrete Fourier transforms.
//!
//! Every transform in the crate goes through this module so that simulation,
//! zero-filling and the operator matrices share one convention:
//!
//! ```text
//! X[j] = n^{-1/2} * sum_a x[a] * exp(-2πi (j - h)(a - h) / n),   h = floor(n/2)
//! ```
//!
//! Index `j = h` is the zero frequency; line `j` sits at angular frequency
//! `2π (j - h)`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Sign of the exponent in the forward transform. Inverse uses the opposite.
pub const FORWARD_SIGN: f64 = -1.0;

/// Index of the zero-frequency line for a length-`n` axis.
#[inline]
pub fn center(n: usize) -> usize {
    n / 2
}

/// Precomputed plans for one axis length.
#[derive(Clone)]
pub struct CenteredFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CenteredFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CenteredFft").field("n", &self.n).finish()
    }
}

impl CenteredFft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        CenteredFft {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform of a contiguous length-`n` buffer.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, true);
    }

    /// In-place inverse transform of a contiguous length-`n` buffer.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    fn run(&self, data: &mut [Complex64], forward: bool) {
        let n = self.n;
        assert_eq!(data.len(), n);
        let h = center(n);
        // y[(a - h) mod n] = x[a]
        data.rotate_left(h % n.max(1));
        if forward {
            self.forward.process(data);
        } else {
            self.inverse.process(data);
        }
        // out[j] = Y[(j - h) mod n]
        data.rotate_right(h % n.max(1));
        let scale = 1.0 / (n as f64).sqrt();
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// 2-D centered unitary transform over a row-major `rows x cols` image.
#[derive(Debug, Clone)]
pub struct CenteredFft2 {
    rows: usize,
    cols: usize,
    along_rows: CenteredFft,
    along_cols: CenteredFft,
}

impl CenteredFft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        CenteredFft2 {
            rows,
            cols,
            along_rows: CenteredFft::new(cols),
            along_cols: CenteredFft::new(rows),
        }
    }

    pub fn forward(&self, image: &mut [Complex64]) {
        self.run(image, true);
    }

    pub fn inverse(&self, image: &mut [Complex64]) {
        self.run(image, false);
    }

    fn run(&self, image: &mut [Complex64], forward: bool) {
        let (rows, cols) = (self.rows, self.cols);
        assert_eq!(image.len(), rows * cols);
        for row in image.chunks_exact_mut(cols) {
            if forward {
                self.along_rows.forward(row);
            } else {
                self.along_rows.inverse(row);
            }
        }
        let mut column = vec![Complex64::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = image[r * cols + c];
            }
            if forward {
                self.along_cols.forward(&mut column);
            } else {
                self.along_cols.inverse(&mut column);
            }
            for r in 0..rows {
                image[r * cols + c] = column[r];
            }
        }
    }
}

/// Dense centered unitary DFT matrix, `W[j][a]`. Used by tests and small
/// operator builds.
pub fn dft_matrix(n: usize) -> nalgebra::DMatrix<Complex64> {
    let h = center(n) as f64;
    let nf = n as f64;
    let scale = 1.0 / nf.sqrt();
    nalgebra::DMatrix::from_fn(n, n, |j, a| {
        let phase = FORWARD_SIGN * 2.0 * std::f64::consts::PI * (j as f64 - h) * (a as f64 - h) / nf;
        Complex64::from_polar(scale, phase)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vec(n: usize, seed: u64) -> Vec<Complex64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn fast_matches_dense_matrix() {
        for n in [1usize, 2, 5, 8, 13, 16] {
            let x = random_vec(n, n as u64);
            let w = dft_matrix(n);
            let dense = &w * nalgebra::DVector::from_vec(x.clone());
            let mut fast = x.clone();
            CenteredFft::new(n).forward(&mut fast);
            for j in 0..n {
                assert!((dense[j] - fast[j]).norm() < 1e-12, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn round_trip_and_unitarity() {
        let x = random_vec(12 * 7, 3);
        let plan = CenteredFft2::new(12, 7);
        let mut y = x.clone();
        plan.forward(&mut y);
        let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let ey: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        assert!((ex - ey).abs() < 1e-12 * ex);
        plan.inverse(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn delta_at_center_is_flat() {
        let n = 8;
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        x[center(n)] = Complex64::new(1.0, 0.0);
        CenteredFft::new(n).forward(&mut x);
        for v in x {
            assert!((v - Complex64::new(1.0 / (n as f64).sqrt(), 0.0)).norm() < 1e-14);
        }
    }
}
