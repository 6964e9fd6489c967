//! Image grid, k-space line masks and the band description of missing data.
//!
//! A k-space line index `j` in `0..n` corresponds to angular frequency
//! `2π (j - floor(n/2))`, matching the centered transform in [`crate::fft`].

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// `n x m` sampling grid on `[-1/2, 1/2]^2`. Rows follow `x2`, columns `x1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    m: usize,
}

impl Grid {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n < 2 || m < 2 {
            return Err(Error::invalid(format!("grid must be at least 2x2, got {n}x{m}")));
        }
        Ok(Grid { n, m })
    }

    /// Rows (`x2` samples, k-space lines).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Columns (`x1` samples).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.n * self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `x1` coordinate of column `i` (0-based): `-1/2 + (i+1)/m`.
    pub fn u(&self, i: usize) -> f64 {
        -0.5 + (i + 1) as f64 / self.m as f64
    }

    /// `x2` coordinate of row `a` (0-based): `-1/2 + (a+1)/n`.
    pub fn v(&self, a: usize) -> f64 {
        -0.5 + (a + 1) as f64 / self.n as f64
    }
}

/// Angular frequency of k-space line `j` on an `n`-line grid.
pub fn line_frequency(j: usize, n: usize) -> f64 {
    2.0 * PI * (j as f64 - fft::center(n) as f64)
}

/// One missing band `[center - half_width, center + half_width]` along `k2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center: f64,
    pub half_width: f64,
}

impl Band {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, k: f64) -> bool {
        k > self.lower() && k < self.upper()
    }
}

/// Disjoint union of missing bands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    bands: Vec<Band>,
}

impl BandSet {
    pub fn empty() -> Self {
        BandSet::default()
    }

    /// Validates positivity of widths and pairwise disjointness. Bands are
    /// stored sorted by center.
    pub fn new(mut bands: Vec<Band>) -> Result<Self> {
        for b in &bands {
            if !(b.half_width > 0.0) || !b.center.is_finite() || !b.half_width.is_finite() {
                return Err(Error::invalid(format!("band {b:?} must have finite center and positive half-width")));
            }
        }
        bands.sort_by(|a, b| a.center.total_cmp(&b.center));
        for pair in bands.windows(2) {
            if pair[0].upper() >= pair[1].lower() {
                return Err(Error::invalid(format!("bands {:?} and {:?} overlap", pair[0], pair[1])));
            }
        }
        Ok(BandSet { bands })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Lines of an `n`-line grid whose frequency falls strictly inside a band.
    pub fn rasterize(&self, n: usize) -> Vec<bool> {
        (0..n)
            .map(|j| {
                let k = line_frequency(j, n);
                self.bands.iter().any(|b| b.contains(k))
            })
            .collect()
    }
}

/// Per-line acquisition flags with the fully sampled central block recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    acquired: Vec<bool>,
    acs: usize,
}

/// Half-open index range of the central ACS block.
pub fn acs_range(n: usize, acs: usize) -> std::ops::Range<usize> {
    let start = n / 2 - acs / 2;
    start..start + acs
}

impl SamplingMask {
    pub fn new(acquired: Vec<bool>, acs: usize) -> Result<Self> {
        let n = acquired.len();
        if acs > n {
            return Err(Error::invalid(format!("acs = {acs} exceeds line count {n}")));
        }
        if !acquired.iter().any(|&a| a) {
            return Err(Error::invalid("mask acquires no lines"));
        }
        if acs_range(n, acs).any(|j| !acquired[j]) {
            return Err(Error::invalid("ACS lines must all be acquired"));
        }
        Ok(SamplingMask { acquired, acs })
    }

    /// Every line acquired.
    pub fn full(n: usize) -> Self {
        SamplingMask {
            acquired: vec![true; n],
            acs: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.acquired.len()
    }

    pub fn acs(&self) -> usize {
        self.acs
    }

    pub fn acquired(&self) -> &[bool] {
        &self.acquired
    }

    pub fn is_acquired(&self, j: usize) -> bool {
        self.acquired[j]
    }

    pub fn acquired_count(&self) -> usize {
        self.acquired.iter().filter(|&&a| a).count()
    }

    pub fn missing_count(&self) -> usize {
        self.n() - self.acquired_count()
    }

    pub fn missing_lines(&self) -> Vec<usize> {
        (0..self.n()).filter(|&j| !self.acquired[j]).collect()
    }

    pub fn scan_time(&self) -> f64 {
        self.acquired_count() as f64 / self.n() as f64
    }

    pub fn to_file(&self) -> MaskFile {
        MaskFile {
            n: self.n(),
            acs: self.acs,
            acquired: (0..self.n()).filter(|&j| self.acquired[j]).collect(),
        }
    }

    pub fn from_file(file: &MaskFile) -> Result<Self> {
        let mut acquired = vec![false; file.n];
        let mut prev: Option<usize> = None;
        for &j in &file.acquired {
            if j >= file.n {
                return Err(Error::invalid(format!("acquired index {j} out of range for n = {}", file.n)));
            }
            if prev.is_some_and(|p| p >= j) {
                return Err(Error::invalid("acquired indices must be strictly ascending"));
            }
            prev = Some(j);
            acquired[j] = true;
        }
        SamplingMask::new(acquired, file.acs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MaskFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        SamplingMask::from_file(&file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("mask serializes")
    }
}

/// On-disk mask layout: acquired line indices in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub n: usize,
    pub acs: usize,
    pub acquired: Vec<usize>,
}

/// Uniform acceleration: the ACS block plus every `rate`-th line from index 0.
pub fn make_accelerated_mask(n: usize, rate: usize, acs: usize) -> Result<SamplingMask> {
    if rate < 1 {
        return Err(Error::invalid("acceleration rate must be >= 1"));
    }
    if acs > n {
        return Err(Error::invalid(format!("acs = {acs} exceeds line count {n}")));
    }
    let block = acs_range(n, acs);
    let acquired = (0..n).map(|j| block.contains(&j) || j % rate == 0).collect();
    SamplingMask::new(acquired, acs)
}

/// ACS block plus lines drawn uniformly without replacement so that
/// `round(scan_time * n)` lines are acquired in total.
pub fn make_random_mask(n: usize, scan_time: f64, acs: usize, seed: u64) -> Result<SamplingMask> {
    if acs > n {
        return Err(Error::invalid(format!("acs = {acs} exceeds line count {n}")));
    }
    if !(scan_time <= 1.0) || scan_time < acs as f64 / n as f64 {
        return Err(Error::invalid(format!(
            "scan time {scan_time} must lie in [acs/n, 1] = [{}, 1]",
            acs as f64 / n as f64
        )));
    }
    let total = ((scan_time * n as f64).round() as usize).clamp(acs, n);
    if total == 0 {
        return Err(Error::invalid("scan time too small: no lines would be acquired"));
    }
    let block = acs_range(n, acs);
    let outside: Vec<usize> = (0..n).filter(|j| !block.contains(j)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, outside.len(), total - acs);
    let mut acquired: Vec<bool> = (0..n).map(|j| block.contains(&j)).collect();
    for p in picks.iter() {
        acquired[outside[p]] = true;
    }
    SamplingMask::new(acquired, acs)
}

/// Each maximal run `[a, b]` of missing lines becomes one band spanning the
/// run's angular extent, `2π (a - h - 1/2) .. 2π (b - h + 1/2)`.
pub fn mask_to_bands(mask: &SamplingMask) -> BandSet {
    let n = mask.n();
    let mut bands = Vec::new();
    let mut j = 0;
    while j < n {
        if mask.is_acquired(j) {
            j += 1;
            continue;
        }
        let start = j;
        while j < n && !mask.is_acquired(j) {
            j += 1;
        }
        let end = j - 1;
        let lo = line_frequency(start, n) - PI;
        let hi = line_frequency(end, n) + PI;
        bands.push(Band {
            center: 0.5 * (lo + hi),
            half_width: 0.5 * (hi - lo),
        });
    }
    BandSet::new(bands).expect("runs of missing lines are separated")
}
