//! Image quality: relative error and mean windowed SSIM over a region of
//! interest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stack::RealImage;

pub const SSIM_C1: f64 = 0.0001;
pub const SSIM_C2: f64 = 0.0009;
pub const SSIM_WINDOW: usize = 3;
/// Fraction of the truth's maximum above which a pixel joins the default ROI.
pub const ROI_FRACTION: f64 = 0.05;

/// Boolean membership image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roi {
    n: usize,
    m: usize,
    inside: Vec<bool>,
}

impl Roi {
    pub fn new(n: usize, m: usize, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != n * m {
            return Err(Error::mismatch(format!("ROI has {} entries, expected {}", inside.len(), n * m)));
        }
        if !inside.iter().any(|b| *b) {
            return Err(Error::invalid("ROI is empty"));
        }
        Ok(Roi { n, m, inside })
    }

    pub fn full(n: usize, m: usize) -> Self {
        Roi {
            n,
            m,
            inside: vec![true; n * m],
        }
    }

    /// Pixels above `fraction · max(truth)`, closed with a 3x3 square.
    pub fn from_truth(truth: &RealImage, fraction: f64) -> Result<Self> {
        let (n, m) = (truth.n(), truth.m());
        let level = fraction * truth.max();
        let (pn, pm) = (n + 2, m + 2);
        let mut padded = vec![false; pn * pm];
        for r in 0..n {
            for c in 0..m {
                padded[(r + 1) * pm + c + 1] = truth.get(r, c) > level;
            }
        }
        let closed = erode(&dilate(&padded, pn, pm), pn, pm);
        let inside = (0..n * m).map(|k| closed[(k / m + 1) * pm + k % m + 1]).collect();
        Roi::new(n, m, inside)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.inside[row * self.m + col]
    }

    pub fn mask(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|b| **b).count()
    }

    fn check(&self, img: &RealImage) -> Result<()> {
        if img.n() != self.n || img.m() != self.m {
            return Err(Error::mismatch("image and ROI differ in size"));
        }
        Ok(())
    }
}

fn neighbours(n: usize, m: usize, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = r.saturating_sub(1)..=(r + 1).min(n - 1);
    rows.flat_map(move |a| (c.saturating_sub(1)..=(c + 1).min(m - 1)).map(move |b| (a, b)))
}

fn dilate(x: &[bool], n: usize, m: usize) -> Vec<bool> {
    (0..n * m).map(|k| neighbours(n, m, k / m, k % m).any(|(a, b)| x[a * m + b])).collect()
}

fn erode(x: &[bool], n: usize, m: usize) -> Vec<bool> {
    (0..n * m).map(|k| neighbours(n, m, k / m, k % m).all(|(a, b)| x[a * m + b])).collect()
}

/// `||truth - est|| / ||truth||` over ROI pixels.
pub fn rel_error(truth: &RealImage, est: &RealImage, roi: &Roi) -> Result<f64> {
    roi.check(truth)?;
    roi.check(est)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((t, e), inside) in truth.data().iter().zip(est.data()).zip(roi.mask()) {
        if *inside {
            num += (t - e) * (t - e);
            den += t * t;
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("truth has zero norm on the ROI"));
    }
    Ok((num / den).sqrt())
}

/// SSIM of two equally sized patches with population statistics.
pub fn ssim_window(x: &[f64], y: &[f64], c1: f64, c2: f64) -> f64 {
    assert_eq!(x.len(), y.len(), "patches differ in size");
    let len = x.len() as f64;
    let mx = x.iter().sum::<f64>() / len;
    let my = y.iter().sum::<f64>() / len;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    let (vx, vy, cxy) = (vx / len, vy / len, cxy / len);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean SSIM over every `window x window` patch centred in the ROI, with the
/// default constants. Patches that would leave the image are skipped.
pub fn ssim_mean(truth: &RealImage, est: &RealImage, roi: &Roi, window: usize) -> Result<f64> {
    ssim_mean_with(truth, est, roi, window, SSIM_C1, SSIM_C2)
}

pub fn ssim_mean_with(truth: &RealImage, est: &RealImage, roi: &Roi, window: usize, c1: f64, c2: f64) -> Result<f64> {
    roi.check(truth)?;
    roi.check(est)?;
    if window.is_multiple_of(2) || window < 3 {
        return Err(Error::invalid(format!("window must be odd and >= 3, got {window}")));
    }
    let (n, m) = (truth.n(), truth.m());
    let h = window / 2;
    if n < window || m < window {
        return Err(Error::invalid("image smaller than the SSIM window"));
    }
    let values: Vec<f64> = (h..n - h)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut px = vec![0.0; window * window];
            let mut py = vec![0.0; window * window];
            (h..m - h)
                .filter(move |&c| roi.contains(r, c))
                .map(move |c| {
                    for (k, (a, b)) in (r - h..=r + h).flat_map(|a| (c - h..=c + h).map(move |b| (a, b))).enumerate() {
                        px[k] = truth.get(a, b);
                        py[k] = est.get(a, b);
                    }
                    ssim_window(&px, &py, c1, c2)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    if values.is_empty() {
        return Err(Error::invalid("no complete SSIM window is centred in the ROI"));
    }
    Ok(pairwise_sum(&values) / values.len() as f64)
}

/// Both metrics for one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub epsilon: f64,
    pub ssim_mu: f64,
}

pub fn score(truth: &RealImage, est: &RealImage, roi: &Roi) -> Result<Scores> {
    Ok(Scores {
        epsilon: rel_error(truth, est, roi)?,
        ssim_mu: ssim_mean(truth, est, roi, SSIM_WINDOW)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, m: usize, seed: u64) -> RealImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealImage::from_data(n, m, (0..n * m).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn rel_error_trivial() {
        let t = random_image(8, 8, 1);
        let roi = Roi::full(8, 8);
        assert_eq!(rel_error(&t, &t, &roi).unwrap(), 0.0);
        assert!((rel_error(&t, &t.scaled(2.0), &roi).unwrap() - 1.0).abs() < 1e-15);
        let zero = RealImage::zeros(8, 8);
        assert!(rel_error(&zero, &t, &roi).is_err());
    }

    #[test]
    fn rel_error_direct_sum() {
        let (t, e) = (random_image(16, 16, 2), random_image(16, 16, 3));
        let inside: Vec<bool> = (0..256).map(|k| (k * 7) % 3 != 0).collect();
        let roi = Roi::new(16, 16, inside.clone()).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (k, _) in inside.iter().enumerate().filter(|(_, i)| **i) {
            num += (t.data()[k] - e.data()[k]).powi(2);
            den += t.data()[k].powi(2);
        }
        assert!((rel_error(&t, &e, &roi).unwrap() - (num / den).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_patches() {
        let v = ssim_window(&[0.0; 9], &[1.0; 9], SSIM_C1, SSIM_C2);
        assert!((v - 0.0001 / 1.0001).abs() < 1e-12);
        let x = [0.3, 0.1, 0.9, 0.4];
        assert_eq!(ssim_window(&x, &x, SSIM_C1, SSIM_C2), 1.0);
    }

    #[test]
    fn ssim_mean_brute_force() {
        let (t, e) = (random_image(8, 8, 4), random_image(8, 8, 5));
        let roi = Roi::full(8, 8);
        let mut acc = 0.0;
        let mut count = 0;
        for r in 1..7 {
            for c in 1..7 {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for a in r - 1..=r + 1 {
                    for b in c - 1..=c + 1 {
                        x.push(t.get(a, b));
                        y.push(e.get(a, b));
                    }
                }
                let n = 9.0;
                let mx: f64 = x.iter().sum::<f64>() / n;
                let my: f64 = y.iter().sum::<f64>() / n;
                let vx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
                let vy: f64 = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
                let cxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
                acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
        let got = ssim_mean(&t, &e, &roi, 3).unwrap();
        assert!((got - acc / count as f64).abs() < 1e-12);
        assert_eq!(ssim_mean(&t, &t, &roi, 3).unwrap(), 1.0);
    }

    #[test]
    fn ssim_tiny_perturbation() {
        let t = random_image(16, 16, 6);
        let noise = random_image(16, 16, 7);
        let e = RealImage::from_data(16, 16, t.data().iter().zip(noise.data()).map(|(a, b)| a + 1e-9 * b).collect()).unwrap();
        assert!(ssim_mean(&t, &e, &Roi::full(16, 16), 3).unwrap() >= 0.999);
    }

    #[test]
    fn ssim_mean_errors() {
        let t = random_image(8, 8, 8);
        assert!(ssim_mean(&t, &t, &Roi::full(8, 8), 4).is_err());
        let mut edge = vec![false; 64];
        edge[0] = true;
        let roi = Roi::new(8, 8, edge).unwrap();
        assert!(ssim_mean(&t, &t, &roi, 3).is_err());
        assert!(Roi::new(8, 8, vec![false; 64]).is_err());
    }

    #[test]
    fn roi_closes_small_holes() {
        let mut data = vec![0.0; 49];
        for r in 1..6 {
            for c in 1..6 {
                data[r * 7 + c] = 1.0;
            }
        }
        data[3 * 7 + 3] = 0.0;
        let roi = Roi::from_truth(&RealImage::from_data(7, 7, data).unwrap(), ROI_FRACTION).unwrap();
        assert!(roi.contains(3, 3));
        assert!(roi.contains(1, 1));
        assert!(!roi.contains(0, 3));
        assert_eq!(roi.count(), 25);
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_reflexive(x in prop::collection::vec(0.0f64..1.0, 9), y in prop::collection::vec(0.0f64..1.0, 9)) {
            let a = ssim_window(&x, &y, SSIM_C1, SSIM_C2);
            let b = ssim_window(&y, &x, SSIM_C1, SSIM_C2);
            prop_assert!((a - b).abs() < 1e-15);
            prop_assert!((ssim_window(&x, &x, SSIM_C1, SSIM_C2) - 1.0).abs() < 1e-15);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn rel_error_scale_law(seed in 0u64..1000, delta in -2.0f64..2.0) {
            let t = random_image(6, 6, seed);
            let e = t.scaled(1.0 + delta);
            let got = rel_error(&t, &e, &Roi::full(6, 6)).unwrap();
            prop_assert!((got - delta.abs()).abs() < 1e-12);
        }
    }
}
