//! Synthetic ground truth: phantoms, coil sensitivities and multi-coil
//! k-space.

use std::path::PathBuf;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::CenteredFft2;
use crate::geometry::{Grid, SamplingMask};
use crate::stack::{CoilStack, StackKind};

/// Filled ellipse in unit-square coordinates `(x1, x2)`. `angle` is in
/// radians, counter-clockwise from the `x1` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    #[serde(default)]
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn disk(center: [f64; 2], radius: f64, intensity: f64) -> Self {
        Ellipse {
            center,
            axes: [radius, radius],
            angle: 0.0,
            intensity,
        }
    }

    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x1 - self.center[0];
        let dy = x2 - self.center[1];
        let p = (dx * c + dy * s) / self.axes[0];
        let q = (-dx * s + dy * c) / self.axes[1];
        p * p + q * q <= 1.0
    }

    fn half_extent(&self) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let [a, b] = self.axes;
        [(a * a * c * c + b * b * s * s).sqrt(), (a * a * s * s + b * b * c * c).sqrt()]
    }

    fn validate(&self) -> Result<()> {
        let finite = self.center.iter().chain(&self.axes).all(|v| v.is_finite()) && self.angle.is_finite();
        if !finite || !self.intensity.is_finite() {
            return Err(Error::invalid("ellipse parameters must be finite"));
        }
        if self.axes.iter().any(|a| *a <= 0.0) {
            return Err(Error::invalid("ellipse axes must be positive"));
        }
        let ext = self.half_extent();
        for (c, e) in self.center.iter().zip(ext) {
            if c - e <= -0.5 || c + e >= 0.5 {
                return Err(Error::invalid(format!("ellipse at {:?} leaves the unit square", self.center)));
            }
        }
        Ok(())
    }
}

/// Modified Shepp-Logan table `(intensity, a, b, x0, y0, phi_degrees)` on
/// `[-1, 1]^2`.
pub const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Shepp-Logan ellipses mapped to the unit square, with the phantom's `y`
/// axis pointing toward row 0 so images display upright.
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    SHEPP_LOGAN
        .iter()
        .map(|&[intensity, a, b, x0, y0, phi]| Ellipse {
            center: [x0 / 2.0, -y0 / 2.0],
            axes: [a / 2.0, b / 2.0],
            angle: -phi.to_radians(),
            intensity,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomShape {
    SheppLogan,
    Disks {
        #[serde(default)]
        shapes: Vec<Ellipse>,
    },
    /// Single-image stack file holding the complex truth.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n: usize,
    pub m: usize,
    #[serde(flatten)]
    pub shape: PhantomShape,
    /// Optional linear phase `exp(i (k1 x1 + k2 x2))`.
    #[serde(default)]
    pub phase: Option<[f64; 2]>,
}

impl PhantomSpec {
    pub fn shepp_logan(n: usize, m: usize) -> Self {
        PhantomSpec {
            n,
            m,
            shape: PhantomShape::SheppLogan,
            phase: None,
        }
    }

    pub fn disks(n: usize, m: usize, shapes: Vec<Ellipse>) -> Self {
        PhantomSpec {
            n,
            m,
            shape: PhantomShape::Disks { shapes },
            phase: None,
        }
    }
}

fn rasterize(grid: Grid, shapes: &[Ellipse]) -> Vec<Complex64> {
    let (n, m) = (grid.n(), grid.m());
    let mut out = vec![Complex64::new(0.0, 0.0); n * m];
    for a in 0..n {
        let x2 = grid.v(a);
        for i in 0..m {
            let x1 = grid.u(i);
            let v: f64 = shapes.iter().filter(|e| e.contains(x1, x2)).map(|e| e.intensity).sum();
            out[a * m + i] = Complex64::new(v, 0.0);
        }
    }
    out
}

/// Rasterized complex ground truth as a one-coil, one-map image stack.
pub fn make_phantom(spec: &PhantomSpec) -> Result<CoilStack> {
    let grid = Grid::new(spec.n, spec.m)?;
    let mut image = match &spec.shape {
        PhantomShape::SheppLogan => rasterize(grid, &shepp_logan_ellipses()),
        PhantomShape::Disks { shapes } => {
            for s in shapes {
                s.validate()?;
            }
            rasterize(grid, shapes)
        }
        PhantomShape::File { path } => {
            let stack = CoilStack::load(path)?;
            if stack.n() != spec.n || stack.m() != spec.m || stack.coils() != 1 || stack.maps() != 1 {
                return Err(Error::Format {
                    path: path.clone(),
                    reason: format!("expected a single {}x{} image", spec.n, spec.m),
                });
            }
            if stack.data().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Format {
                    path: path.clone(),
                    reason: "non-finite pixel".into(),
                });
            }
            stack.into_data()
        }
    };
    if let Some([k1, k2]) = spec.phase {
        for a in 0..grid.n() {
            for i in 0..grid.m() {
                image[a * grid.m() + i] *= Complex64::from_polar(1.0, k1 * grid.u(i) + k2 * grid.v(a));
            }
        }
    }
    CoilStack::from_image(grid, StackKind::Image, image)
}

/// Gaussian coils on a ring with per-coil linear phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoilModel {
    pub coils: usize,
    #[serde(default = "CoilModel::default_radius")]
    pub radius: f64,
    #[serde(default = "CoilModel::default_width")]
    pub width: f64,
    /// Phase `slope * (cos θ_j x1 + sin θ_j x2)` for the coil at angle `θ_j`.
    #[serde(default = "CoilModel::default_phase_slope")]
    pub phase_slope: f64,
    /// Every map identically one (infinite width, no phase).
    #[serde(default)]
    pub uniform: bool,
    /// Scale so that `Σ_j |s_j|^2 = 1` at every pixel.
    #[serde(default)]
    pub normalize: bool,
}

impl CoilModel {
    fn default_radius() -> f64 {
        0.5
    }
    fn default_width() -> f64 {
        0.35
    }
    fn default_phase_slope() -> f64 {
        std::f64::consts::PI
    }

    pub fn ring(coils: usize) -> Self {
        CoilModel {
            coils,
            radius: Self::default_radius(),
            width: Self::default_width(),
            phase_slope: Self::default_phase_slope(),
            uniform: false,
            normalize: false,
        }
    }

    pub fn uniform(coils: usize) -> Self {
        CoilModel {
            uniform: true,
            ..Self::ring(coils)
        }
    }

    pub fn normalized(self) -> Self {
        CoilModel { normalize: true, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coils == 0 {
            return Err(Error::invalid("coil count must be at least 1"));
        }
        if !self.uniform && (!(self.width > 0.0) || !self.width.is_finite()) {
            return Err(Error::invalid("coil width must be positive and finite"));
        }
        if !self.radius.is_finite() || !self.phase_slope.is_finite() {
            return Err(Error::invalid("coil radius and phase slope must be finite"));
        }
        Ok(())
    }

    /// `s_j(x1, x2)` before normalization.
    pub fn sensitivity(&self, coil: usize, x1: f64, x2: f64) -> Complex64 {
        if self.uniform {
            return Complex64::new(1.0, 0.0);
        }
        let theta = std::f64::consts::TAU * coil as f64 / self.coils as f64;
        let (s, c) = theta.sin_cos();
        let (cx, cy) = (self.radius * c, self.radius * s);
        let d2 = (x1 - cx).powi(2) + (x2 - cy).powi(2);
        let amp = (-d2 / (2.0 * self.width * self.width)).exp();
        Complex64::from_polar(amp, self.phase_slope * (c * x1 + s * x2))
    }
}

/// One map per coil (`p = 1`), evaluated at the grid points.
pub fn make_coil_maps(model: &CoilModel, grid: Grid) -> Result<CoilStack> {
    model.validate()?;
    let (n, m) = (grid.n(), grid.m());
    let mut maps = CoilStack::zeros(n, m, model.coils, 1, StackKind::Sensitivity);
    for j in 0..model.coils {
        let img = maps.image_mut(j, 0);
        for a in 0..n {
            for i in 0..m {
                img[a * m + i] = model.sensitivity(j, grid.u(i), grid.v(a));
            }
        }
    }
    if model.normalize {
        normalize_maps(&mut maps);
    }
    Ok(maps)
}

/// Divides every map by `sqrt(Σ_{j,q} |s_j^q|^2)` pixelwise.
pub fn normalize_maps(maps: &mut CoilStack) {
    let len = maps.n() * maps.m();
    let mut norm = vec![0.0; len];
    for j in 0..maps.coils() {
        for q in 0..maps.maps() {
            for (w, s) in norm.iter_mut().zip(maps.image(j, q)) {
                *w += s.norm_sqr();
            }
        }
    }
    for w in norm.iter_mut() {
        *w = if *w > 0.0 { 1.0 / w.sqrt() } else { 0.0 };
    }
    for j in 0..maps.coils() {
        for q in 0..maps.maps() {
            for (s, w) in maps.image_mut(j, q).iter_mut().zip(&norm) {
                *s *= *w;
            }
        }
    }
}

/// Amplitude of each additional map relative to the previous one.
pub const SECONDARY_MAP_WEIGHT: f64 = 0.25;

/// Appends `p - 1` weaker, phase-modulated copies of the first map set:
/// `s_j^(q) = w^q s_j^(0) exp(2πi q x1)`.
pub fn extend_maps(maps: &CoilStack, p: usize) -> Result<CoilStack> {
    if p == 0 {
        return Err(Error::invalid("map count must be at least 1"));
    }
    let grid = Grid::new(maps.n(), maps.m())?;
    let (n, m) = (grid.n(), grid.m());
    let mut out = CoilStack::zeros(n, m, maps.coils(), p, StackKind::Sensitivity);
    for j in 0..maps.coils() {
        let base = maps.image(j, 0).to_vec();
        for q in 0..p {
            let img = out.image_mut(j, q);
            for a in 0..n {
                for i in 0..m {
                    let mod_q = Complex64::from_polar(SECONDARY_MAP_WEIGHT.powi(q as i32), std::f64::consts::TAU * q as f64 * grid.u(i));
                    img[a * m + i] = base[a * m + i] * mod_q;
                }
            }
        }
    }
    Ok(out)
}

/// `h_j = mask · DFT2(s_j F)` plus complex white noise of standard deviation
/// `noise_sigma` on the acquired rows.
pub fn simulate_kspace(
    truth: &CoilStack,
    maps: &CoilStack,
    mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<CoilStack> {
    let (n, m) = (truth.n(), truth.m());
    if truth.coils() != 1 || truth.maps() != 1 {
        return Err(Error::mismatch("truth must be a single image"));
    }
    if maps.n() != n || maps.m() != m || mask.n() != n {
        return Err(Error::mismatch("truth, maps and mask disagree in size"));
    }
    if maps.maps() != 1 {
        return Err(Error::mismatch("simulation expects one map per coil"));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let f = truth.image(0, 0);
    let plan = CenteredFft2::new(n, m);
    let mut out = CoilStack::zeros(n, m, maps.coils(), 1, StackKind::Kspace);
    out.data_mut()
        .par_chunks_mut(n * m)
        .enumerate()
        .for_each(|(j, h)| {
            for ((o, s), v) in h.iter_mut().zip(maps.image(j, 0)).zip(f) {
                *o = s * v;
            }
            plan.forward(h);
        });

    let normal = Normal::new(0.0, noise_sigma / std::f64::consts::SQRT_2).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..maps.coils() {
        let h = out.image_mut(j, 0);
        for row in 0..n {
            let line = &mut h[row * m..(row + 1) * m];
            if !mask.is_acquired(row) {
                line.fill(Complex64::new(0.0, 0.0));
            } else if noise_sigma > 0.0 {
                for v in line.iter_mut() {
                    *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_random_mask;
    use crate::operators::prepare_g;

    #[test]
    fn empty_disks_give_zero_image() {
        let img = make_phantom(&PhantomSpec::disks(16, 12, vec![])).unwrap();
        assert!(img.data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn centered_disk_inside_outside() {
        let spec = PhantomSpec::disks(64, 64, vec![Ellipse::disk([0.0, 0.0], 0.25, 1.0)]);
        let img = make_phantom(&spec).unwrap();
        assert_eq!(img.get(0, 0, 32, 32), Complex64::new(1.0, 0.0));
        assert_eq!(img.get(0, 0, 1, 1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn shepp_logan_matches_brute_force_membership() {
        let (n, m) = (64, 64);
        let grid = Grid::new(n, m).unwrap();
        let img = make_phantom(&PhantomSpec::shepp_logan(n, m)).unwrap();
        for a in 0..n {
            for i in 0..m {
                let (x, y) = (2.0 * grid.u(i), -2.0 * grid.v(a));
                let mut v = 0.0;
                for &[rho, ea, eb, x0, y0, phi] in SHEPP_LOGAN.iter() {
                    let t = phi.to_radians();
                    let p = (x - x0) * t.cos() + (y - y0) * t.sin();
                    let q = -(x - x0) * t.sin() + (y - y0) * t.cos();
                    if (p / ea).powi(2) + (q / eb).powi(2) <= 1.0 {
                        v += rho;
                    }
                }
                assert!((img.get(0, 0, a, i).re - v).abs() < 1e-12, "pixel ({a},{i})");
            }
        }
    }

    #[test]
    fn phase_ramp_keeps_magnitude() {
        let mut spec = PhantomSpec::shepp_logan(32, 32);
        let plain = make_phantom(&spec).unwrap();
        spec.phase = Some([3.0, -2.0]);
        let ramped = make_phantom(&spec).unwrap();
        for (a, b) in plain.data().iter().zip(ramped.data()) {
            assert!((a.norm() - b.norm()).abs() < 1e-14);
        }
        assert!(ramped.data().iter().any(|v| v.im.abs() > 1e-3));
    }

    #[test]
    fn shapes_outside_support_rejected() {
        let spec = PhantomSpec::disks(16, 16, vec![Ellipse::disk([0.4, 0.0], 0.2, 1.0)]);
        assert!(make_phantom(&spec).is_err());
    }

    #[test]
    fn spec_json_round_trip_and_unknown_kind() {
        let spec = PhantomSpec::disks(8, 8, vec![Ellipse::disk([0.1, 0.0], 0.1, 2.0)]);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"disks\""));
        assert_eq!(serde_json::from_str::<PhantomSpec>(&text).unwrap(), spec);
        assert!(serde_json::from_str::<PhantomSpec>(r#"{"n":8,"m":8,"kind":"brain"}"#).is_err());
    }

    #[test]
    fn uniform_coil_is_one() {
        let maps = make_coil_maps(&CoilModel::uniform(1), Grid::new(8, 8).unwrap()).unwrap();
        assert!(maps.data().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn two_coils_are_point_reflections() {
        let (n, m) = (16, 12);
        let grid = Grid::new(n, m).unwrap();
        let maps = make_coil_maps(&CoilModel::ring(2), grid).unwrap();
        for a in 0..n - 1 {
            for i in 0..m - 1 {
                let s2 = maps.get(1, 0, a, i);
                let s1 = maps.get(0, 0, n - 2 - a, m - 2 - i);
                assert!((s1 - s2).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn coverage_on_phantom_support() {
        let grid = Grid::new(64, 64).unwrap();
        let truth = make_phantom(&PhantomSpec::shepp_logan(64, 64)).unwrap();
        for k in [1, 3, 8] {
            let maps = make_coil_maps(&CoilModel::ring(k), grid).unwrap();
            for (p, v) in truth.data().iter().enumerate() {
                if v.norm() > 0.0 {
                    let total: f64 = (0..k).map(|j| maps.image(j, 0)[p].norm_sqr()).sum();
                    assert!(total > 0.0);
                }
            }
        }
    }

    #[test]
    fn normalized_maps_have_unit_energy() {
        let maps = make_coil_maps(&CoilModel::ring(4).normalized(), Grid::new(16, 16).unwrap()).unwrap();
        for p in 0..256 {
            let total: f64 = (0..4).map(|j| maps.image(j, 0)[p].norm_sqr()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn extended_maps_keep_first_set() {
        let maps = make_coil_maps(&CoilModel::ring(3), Grid::new(8, 8).unwrap()).unwrap();
        let ext = extend_maps(&maps, 2).unwrap();
        assert_eq!(ext.maps(), 2);
        for j in 0..3 {
            assert_eq!(ext.image(j, 0), maps.image(j, 0));
            for (a, b) in ext.image(j, 1).iter().zip(maps.image(j, 0)) {
                assert!((a.norm() - SECONDARY_MAP_WEIGHT * b.norm()).abs() < 1e-14);
            }
        }
        assert!(extend_maps(&maps, 0).is_err());
    }

    #[test]
    fn noiseless_full_round_trip() {
        let grid = Grid::new(32, 24).unwrap();
        let mut spec = PhantomSpec::shepp_logan(32, 24);
        spec.phase = Some([1.0, 2.0]);
        let truth = make_phantom(&spec).unwrap();
        let maps = make_coil_maps(&CoilModel::ring(4), grid).unwrap();
        let k = simulate_kspace(&truth, &maps, &SamplingMask::full(32), 0.0, 0).unwrap();
        let g = prepare_g(&k, grid).unwrap();
        for j in 0..4 {
            for ((gv, s), f) in g.image(j, 0).iter().zip(maps.image(j, 0)).zip(truth.image(0, 0)) {
                assert!((gv - s * f).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn parseval_unitary() {
        let grid = Grid::new(32, 32).unwrap();
        let truth = make_phantom(&PhantomSpec::shepp_logan(32, 32)).unwrap();
        let maps = make_coil_maps(&CoilModel::ring(3), grid).unwrap();
        let k = simulate_kspace(&truth, &maps, &SamplingMask::full(32), 0.0, 0).unwrap();
        for j in 0..3 {
            let hk: f64 = k.image(j, 0).iter().map(|v| v.norm_sqr()).sum();
            let sf: f64 = maps.image(j, 0).iter().zip(truth.image(0, 0)).map(|(s, f)| (s * f).norm_sqr()).sum();
            assert!((hk - sf).abs() < 1e-10 * sf);
        }
    }

    #[test]
    fn pure_noise_statistics() {
        let (n, m) = (64, 64);
        let grid = Grid::new(n, m).unwrap();
        let truth = CoilStack::zeros(n, m, 1, 1, StackKind::Image);
        let maps = make_coil_maps(&CoilModel::ring(1), grid).unwrap();
        let mask = make_random_mask(n, 0.5, 16, 7).unwrap();
        let sigma = 0.3;
        let k = simulate_kspace(&truth, &maps, &mask, sigma, 11).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for row in 0..n {
            let line = &k.image(0, 0)[row * m..(row + 1) * m];
            if mask.is_acquired(row) {
                sum += line.iter().map(|v| v.norm_sqr()).sum::<f64>();
                count += m;
            } else {
                assert!(line.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
            }
        }
        let std = (sum / count as f64).sqrt();
        assert!((std - sigma).abs() < 0.05 * sigma, "std {std}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let grid = Grid::new(16, 16).unwrap();
        let truth = make_phantom(&PhantomSpec::shepp_logan(16, 16)).unwrap();
        let maps = make_coil_maps(&CoilModel::ring(2), grid).unwrap();
        let mask = make_random_mask(16, 0.5, 4, 1).unwrap();
        let a = simulate_kspace(&truth, &maps, &mask, 0.1, 5).unwrap();
        let b = simulate_kspace(&truth, &maps, &mask, 0.1, 5).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = simulate_kspace(&truth, &maps, &mask, 0.1, 6).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn simulate_validates_inputs() {
        let grid = Grid::new(8, 8).unwrap();
        let truth = CoilStack::zeros(8, 8, 1, 1, StackKind::Image);
        let maps = make_coil_maps(&CoilModel::ring(2), grid).unwrap();
        assert!(simulate_kspace(&truth, &maps, &SamplingMask::full(8), -1.0, 0).is_err());
        assert!(simulate_kspace(&truth, &maps, &SamplingMask::full(6), 0.0, 0).is_err());
        let two = extend_maps(&maps, 2).unwrap();
        assert!(simulate_kspace(&truth, &two, &SamplingMask::full(8), 0.0, 0).is_err());
    }
}
