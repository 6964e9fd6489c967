//! Experiment drivers behind the command-line subcommands. Each `cmd_*`
//! function reads an [`ExperimentConfig`], writes its artifacts into an
//! output directory and returns a small report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{reconstruct_baseline, BaselineMethod, BaselineSpec};
use crate::error::{Error, Result};
use crate::geometry::{make_accelerated_mask, make_random_mask, Grid, SamplingMask};
use crate::io::{write_atomic, write_csv, write_json, write_line_plot, write_png_gray, Series};
use crate::metrics::{score, Roi, Scores, ROI_FRACTION};
use crate::operators::prepare_g;
use crate::optim::LbfgsOptions;
use crate::simulation::{extend_maps, make_coil_maps, make_phantom, simulate_kspace, CoilModel, PhantomSpec};
use crate::solver::{reconstruct, sos_combine, ReconResult, TvChain, TvParams};
use crate::stack::{CoilStack, RealImage, StackKind};
use crate::svd::{stability_sweep, StabilityCase};

/// Environment variable holding the default output root.
pub const OUT_ENV: &str = "FREDHOLM_MRI_OUT";
pub const DEFAULT_OUT: &str = "out";

pub const PHANTOM_FILE: &str = "phantom.cstack";
pub const MAPS_FILE: &str = "maps.cstack";
pub const MASK_FILE: &str = "mask.json";
pub const KSPACE_FILE: &str = "kspace.cstack";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A value given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    pub fn resolve(&self, base: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => read_json(&base.join(p)),
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Accel,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Ac,
    ZeroFill,
    Tikhonov,
    Tv2d,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ac => "ac",
            Method::ZeroFill => "zero_fill",
            Method::Tikhonov => "tikhonov",
            Method::Tv2d => "tv2d",
        }
    }

    pub const ALL: [Method; 4] = [Method::Ac, Method::ZeroFill, Method::Tikhonov, Method::Tv2d];
}

/// Everything a run needs. Missing fields take the defaults of
/// [`ExperimentConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: Source<PhantomSpec>,
    pub coils: Source<CoilModel>,
    /// Existing sensitivity stack; replaces `coils` when set.
    pub maps_path: Option<PathBuf>,
    pub scheme: Scheme,
    pub rate: usize,
    pub scan_time: Option<f64>,
    pub acs: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Sweep axes for `compare` (scan times x seeds) and `svd` (coil counts
    /// x rates or scan times).
    pub seeds: Vec<u64>,
    pub scan_times: Vec<f64>,
    pub rates: Vec<usize>,
    pub coil_counts: Vec<usize>,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub tikhonov_alpha: f64,
    pub tv2d_alpha: f64,
    pub beta: f64,
    pub tv_chain: TvChain,
    /// Sensitivity maps per coil used in the reconstruction model.
    pub maps: usize,
    pub threshold: f64,
    pub max_iter: usize,
    /// Directory holding simulated or ingested inputs.
    pub input: Option<PathBuf>,
    /// Reference and estimate stacks for `metrics`.
    pub truth: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            phantom: Source::Inline(PhantomSpec::shepp_logan(64, 64)),
            coils: Source::Inline(CoilModel::ring(8).normalized()),
            maps_path: None,
            scheme: Scheme::Accel,
            rate: 2,
            scan_time: None,
            acs: 16,
            seed: 0,
            noise_sigma: 0.005,
            seeds: vec![0, 1, 2, 3, 4],
            scan_times: vec![0.37, 0.445, 0.58],
            rates: Vec::new(),
            coil_counts: Vec::new(),
            methods: Method::ALL.to_vec(),
            alpha: 3e-3,
            tikhonov_alpha: 3e-3,
            tv2d_alpha: 2e-2,
            beta: 0.01,
            tv_chain: TvChain::PerMap,
            maps: 1,
            threshold: 0.01,
            max_iter: 500,
            input: None,
            truth: None,
            estimate: None,
            out: None,
            base_dir: PathBuf::from("."),
        }
    }
}

/// Command-line values that replace config fields when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub maps: Option<usize>,
    pub threshold: Option<f64>,
    pub scheme: Option<Scheme>,
    pub rate: Option<usize>,
    pub scan_time: Option<f64>,
    pub acs: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub input: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = read_json(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &o.$f { self.$f = v.clone(); })*};
        }
        macro_rules! set_opt {
            ($($f:ident),*) => {$(if let Some(v) = &o.$f { self.$f = Some(v.clone()); })*};
        }
        set!(seed, alpha, beta, maps, threshold, scheme, rate, acs, methods);
        set_opt!(scan_time, input, truth, estimate, out);
        if o.scan_time.is_some() && o.scheme.is_none() {
            self.scheme = Scheme::Random;
        }
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(st) = o.scan_time {
            self.scan_times = vec![st];
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.maps == 0 {
            return Err(Error::invalid("maps must be at least 1"));
        }
        if self.rate == 0 {
            return Err(Error::invalid("rate must be at least 1"));
        }
        if self.scheme == Scheme::Random && self.seeds.is_empty() {
            return Err(Error::invalid("random sampling needs at least one seed"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::invalid("threshold must be >= 0"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods requested"));
        }
        TvParams::new(self.alpha, self.beta)?;
        for a in [self.tikhonov_alpha, self.tv2d_alpha] {
            if !(a >= 0.0) {
                return Err(Error::invalid("alpha must be >= 0"));
            }
        }
        Ok(())
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        self.phantom.resolve(&self.base_dir)
    }

    pub fn grid(&self) -> Result<Grid> {
        let spec = self.phantom_spec()?;
        Grid::new(spec.n, spec.m)
    }

    /// One map per coil, as simulated or ingested.
    pub fn coil_maps(&self, grid: Grid) -> Result<CoilStack> {
        match &self.maps_path {
            Some(p) => {
                let maps = CoilStack::load(&self.path(p))?;
                if maps.n() != grid.n() || maps.m() != grid.m() {
                    return Err(Error::mismatch("maps file does not match the phantom grid"));
                }
                Ok(maps)
            }
            None => make_coil_maps(&self.coils.resolve(&self.base_dir)?, grid),
        }
    }

    /// Mask for the configured scheme. `scan_time` overrides the configured
    /// one for the random scheme.
    pub fn mask(&self, n: usize, scan_time: Option<f64>, seed: u64) -> Result<SamplingMask> {
        match self.scheme {
            Scheme::Accel => make_accelerated_mask(n, self.rate, self.acs),
            Scheme::Random => {
                let st = scan_time
                    .or(self.scan_time)
                    .ok_or_else(|| Error::invalid("random sampling needs a scan time"))?;
                make_random_mask(n, st, self.acs, seed)
            }
        }
    }

    pub fn tv_params(&self) -> Result<TvParams> {
        Ok(TvParams::new(self.alpha, self.beta)?.with_chain(self.tv_chain))
    }

    fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iter: self.max_iter,
            ..LbfgsOptions::default()
        }
    }

    fn input_dir(&self, out: &Path) -> PathBuf {
        self.input.as_ref().map(|p| self.path(p)).unwrap_or_else(|| out.to_path_buf())
    }
}

/// Output directory: explicit value, then the environment, then `out`.
pub fn resolve_out(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    }
}

/// Simulated or loaded inputs of one acquisition.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub truth: Option<CoilStack>,
    pub maps: CoilStack,
    pub mask: SamplingMask,
    pub kspace: CoilStack,
}

impl Dataset {
    pub fn simulate(cfg: &ExperimentConfig, mask: SamplingMask, seed: u64) -> Result<Self> {
        let spec = cfg.phantom_spec()?;
        let truth = make_phantom(&spec)?;
        let grid = Grid::new(spec.n, spec.m)?;
        let maps = cfg.coil_maps(grid)?;
        let kspace = simulate_kspace(&truth, &maps, &mask, cfg.noise_sigma, seed)?;
        Ok(Dataset {
            truth: Some(truth),
            maps,
            mask,
            kspace,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let phantom = dir.join(PHANTOM_FILE);
        let truth = if phantom.exists() {
            Some(CoilStack::load(&phantom)?)
        } else {
            None
        };
        Ok(Dataset {
            truth,
            maps: CoilStack::load(&dir.join(MAPS_FILE))?,
            mask: SamplingMask::load(&dir.join(MASK_FILE))?,
            kspace: CoilStack::load(&dir.join(KSPACE_FILE))?,
        })
    }

    /// Writes the four input files and returns their names.
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        let mut files = Vec::new();
        if let Some(t) = &self.truth {
            t.save(&dir.join(PHANTOM_FILE))?;
            files.push(PHANTOM_FILE.to_string());
        }
        self.maps.save(&dir.join(MAPS_FILE))?;
        write_atomic(&dir.join(MASK_FILE), self.mask.to_json().as_bytes())?;
        self.kspace.save(&dir.join(KSPACE_FILE))?;
        files.extend([MAPS_FILE, MASK_FILE, KSPACE_FILE].map(String::from));
        Ok(files)
    }

    pub fn truth_magnitude(&self) -> Option<RealImage> {
        self.truth.as_ref().map(sos_combine)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<String>,
    pub scan_time: f64,
    pub acquired_lines: usize,
    pub config: ExperimentConfig,
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let mask = cfg.mask(grid.n(), None, cfg.seed)?;
    let data = Dataset::simulate(cfg, mask, cfg.seed)?;
    let files = data.save(out)?;
    let manifest = Manifest {
        command: "simulate".into(),
        files,
        scan_time: data.mask.scan_time(),
        acquired_lines: data.mask.acquired_count(),
        config: cfg.clone(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Runs one reconstruction method on k-space data.
pub fn run_method(method: Method, cfg: &ExperimentConfig, data: &Dataset) -> Result<ReconResult> {
    let maps = if cfg.maps > 1 {
        extend_maps(&data.maps, cfg.maps)?
    } else {
        data.maps.clone()
    };
    let baseline = |m: BaselineMethod, alpha: f64| {
        let spec = BaselineSpec {
            beta: cfg.beta,
            max_iter: cfg.max_iter,
            ..BaselineSpec::new(m, alpha)
        };
        reconstruct_baseline(&data.kspace, &maps, &data.mask, &spec)
    };
    match method {
        Method::Ac => {
            let g = prepare_g(&data.kspace, data.kspace.grid()?)?;
            reconstruct(&g, &maps, &data.mask, &cfg.tv_params()?, &cfg.lbfgs())
        }
        Method::ZeroFill => baseline(BaselineMethod::ZeroFill, 0.0),
        Method::Tikhonov => baseline(BaselineMethod::Tikhonov, cfg.tikhonov_alpha),
        Method::Tv2d => baseline(BaselineMethod::Tv2d, cfg.tv2d_alpha),
    }
}

/// Row of a metrics table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub scan_time: Option<f64>,
    pub seed: Option<u64>,
    pub epsilon: f64,
    pub ssim_mu: f64,
}

/// Both images divided by the reference's maximum, then scored on the
/// reference's ROI.
pub fn normalized_scores(reference: &RealImage, estimate: &RealImage) -> Result<Scores> {
    if !reference.same_shape(estimate) {
        return Err(Error::mismatch("reference and estimate differ in size"));
    }
    let peak = reference.max();
    if !(peak > 0.0) {
        return Err(Error::invalid("reference image is identically zero"));
    }
    let r = reference.scaled(1.0 / peak);
    let e = estimate.scaled(1.0 / peak);
    let roi = Roi::from_truth(&r, ROI_FRACTION)?;
    score(&r, &e, &roi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodFailure {
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub status: RunStatus,
    pub files: Vec<String>,
    pub failures: Vec<MethodFailure>,
}

impl RunReport {
    fn new(command: &str, files: Vec<String>, failures: Vec<MethodFailure>) -> Self {
        RunReport {
            command: command.into(),
            status: if failures.is_empty() {
                RunStatus::Complete
            } else {
                RunStatus::Partial
            },
            files,
            failures,
        }
    }

    /// 0 on success, otherwise the partial-failure code.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            crate::error::EXIT_PARTIAL
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Diagnostics<'a> {
    method: &'a str,
    status: &'a str,
    error: Option<String>,
    seconds: f64,
    alpha: f64,
    beta: f64,
    maps: usize,
    scan_time: f64,
    failed_slices: Vec<usize>,
    summary: Option<crate::solver::SolveSummary>,
    slices: &'a [crate::solver::SliceDiagnostics],
}

fn method_alpha(cfg: &ExperimentConfig, m: Method) -> f64 {
    match m {
        Method::Ac => cfg.alpha,
        Method::ZeroFill => 0.0,
        Method::Tikhonov => cfg.tikhonov_alpha,
        Method::Tv2d => cfg.tv2d_alpha,
    }
}

/// Loads inputs from the input directory, simulating them there first if
/// they are absent.
fn load_or_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let dir = cfg.input_dir(out);
    if dir.join(KSPACE_FILE).exists() {
        Dataset::load(&dir)
    } else if cfg.input.is_some() {
        Err(Error::io(dir.join(KSPACE_FILE), std::io::Error::from(std::io::ErrorKind::NotFound)))
    } else {
        cmd_simulate(cfg, out)?;
        Dataset::load(out)
    }
}

pub fn cmd_reconstruct(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let data = load_or_simulate(cfg, out)?;
    let reference = data.truth_magnitude();
    let scale = reference.as_ref().map(RealImage::max).filter(|p| *p > 0.0);
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    if let Some(r) = &reference {
        write_png_gray(&out.join("truth.png"), r, scale.unwrap_or(1.0))?;
        files.push("truth.png".into());
    }
    for &method in &cfg.methods {
        let name = method.name();
        let start = Instant::now();
        let result = run_method(method, cfg, &data);
        let seconds = start.elapsed().as_secs_f64();
        let (status, error, slices, summary, failed_slices) = match &result {
            Ok(r) => {
                let failed = r.failed_slices();
                let status = if failed.is_empty() { "ok" } else { "partial" };
                (status, None, r.slices.as_slice(), r.summary.clone(), failed)
            }
            Err(e) => ("failed", Some(e.to_string()), &[][..], None, Vec::new()),
        };
        let diag = Diagnostics {
            method: name,
            status,
            error: error.clone(),
            seconds,
            alpha: method_alpha(cfg, method),
            beta: cfg.beta,
            maps: cfg.maps,
            scan_time: data.mask.scan_time(),
            failed_slices: failed_slices.clone(),
            summary,
            slices,
        };
        let diag_name = format!("{name}_diagnostics.json");
        write_json(&out.join(&diag_name), &diag)?;
        files.push(diag_name);
        match result {
            Err(e) => {
                log::error!("{name}: {e}");
                failures.push(MethodFailure {
                    method: name.into(),
                    message: e.to_string(),
                });
            }
            Ok(r) => {
                if !failed_slices.is_empty() {
                    failures.push(MethodFailure {
                        method: name.into(),
                        message: format!("{} slices fell back to zero filling", failed_slices.len()),
                    });
                }
                let png = format!("{name}.png");
                write_png_gray(&out.join(&png), &r.magnitude, scale.unwrap_or_else(|| r.magnitude.max()))?;
                let stack = format!("{name}.cstack");
                r.magnitude.to_stack().save(&out.join(&stack))?;
                files.extend([png, stack]);
                if let Some(reference) = &reference {
                    let s = normalized_scores(reference, &r.magnitude)?;
                    rows.push(MetricsRow {
                        method: name.into(),
                        scan_time: Some(data.mask.scan_time()),
                        seed: Some(cfg.seed),
                        epsilon: s.epsilon,
                        ssim_mu: s.ssim_mu,
                    });
                }
            }
        }
    }
    if !rows.is_empty() {
        write_csv(&out.join("metrics.csv"), &rows)?;
        files.push("metrics.csv".into());
    }
    let report = RunReport::new("reconstruct", files, failures);
    write_json(&out.join("reconstruct_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct SigmaRow {
    index: usize,
    sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SvdDetail {
    label: String,
    coils: usize,
    scan_time: f64,
    kappa: f64,
    null_dim: usize,
    null_dim_argmin: usize,
    t: f64,
    sigma_min: f64,
    sigma_max: f64,
}

/// Evenly spaced subset of `k` out of `total` coils: `{i total / k}`.
pub fn coil_subset(total: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > total {
        return Err(Error::invalid(format!("cannot pick {k} of {total} coils")));
    }
    Ok((0..k).map(|i| i * total / k).collect())
}

pub fn cmd_svd(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let dir = cfg.input_dir(out);
    let (maps, default_mask) = if dir.join(MAPS_FILE).exists() {
        let mask = if dir.join(MASK_FILE).exists() {
            Some(SamplingMask::load(&dir.join(MASK_FILE))?)
        } else {
            None
        };
        (CoilStack::load(&dir.join(MAPS_FILE))?, mask)
    } else {
        (cfg.coil_maps(cfg.grid()?)?, None)
    };
    let grid = maps.grid()?;
    let maps = if cfg.maps > 1 { extend_maps(&maps, cfg.maps)? } else { maps };

    let mut masks: Vec<(String, SamplingMask)> = Vec::new();
    let use_input_mask = cfg.input.is_some() && cfg.scheme == Scheme::Accel && cfg.rates.is_empty();
    match (cfg.scheme, default_mask) {
        (_, Some(mask)) if use_input_mask => masks.push(("input".into(), mask)),
        (Scheme::Accel, _) => {
            let rates = if cfg.rates.is_empty() { vec![cfg.rate] } else { cfg.rates.clone() };
            for r in rates {
                masks.push((format!("R{r}"), make_accelerated_mask(grid.n(), r, cfg.acs)?));
            }
        }
        (Scheme::Random, _) => {
            let times = match cfg.scan_time {
                Some(st) => vec![st],
                None => cfg.scan_times.clone(),
            };
            for st in times {
                masks.push((format!("st{st}_s{}", cfg.seed), make_random_mask(grid.n(), st, cfg.acs, cfg.seed)?));
            }
        }
    }
    let counts = if cfg.coil_counts.is_empty() {
        vec![maps.coils()]
    } else {
        cfg.coil_counts.clone()
    };
    let mut cases = Vec::new();
    for &k in &counts {
        let coils = coil_subset(maps.coils(), k)?;
        for (mlabel, mask) in &masks {
            cases.push(StabilityCase {
                label: format!("K{k}_{mlabel}"),
                mask: mask.clone(),
                coils: coils.clone(),
            });
        }
    }
    let results = stability_sweep(grid, &maps, &cases, cfg.threshold)?;

    let mut files = Vec::new();
    let mut series_data = Vec::new();
    for res in &results {
        let rows: Vec<SigmaRow> = res
            .report
            .sigma
            .iter()
            .enumerate()
            .map(|(index, &sigma)| SigmaRow { index, sigma })
            .collect();
        let csv_name = format!("sigma_{}.csv", res.label);
        write_csv(&out.join(&csv_name), &rows)?;
        let rsv = res.report.rsv_stack();
        let mag = RealImage::magnitude_of(rsv.n(), rsv.m(), rsv.data())?;
        let png = format!("rsv_{}.png", res.label);
        write_png_gray(&out.join(&png), &mag, mag.max())?;
        files.extend([csv_name, png]);
        let pts = res
            .report
            .sigma
            .iter()
            .enumerate()
            .map(|(i, s)| (i as f64, s.max(1e-16).log10()))
            .collect();
        series_data.push((res.label.clone(), pts));
    }
    let summary: Vec<_> = results.iter().map(|r| r.summary()).collect();
    write_csv(&out.join("svd_summary.csv"), &summary)?;
    let details: Vec<SvdDetail> = results
        .iter()
        .map(|r| SvdDetail {
            label: r.label.clone(),
            coils: r.coils,
            scan_time: r.scan_time,
            kappa: r.report.kappa,
            null_dim: r.report.null_dim,
            null_dim_argmin: r.report.null_dim_argmin,
            t: r.report.t,
            sigma_min: r.report.sigma.last().copied().unwrap_or(0.0),
            sigma_max: r.report.sigma.first().copied().unwrap_or(0.0),
        })
        .collect();
    write_json(&out.join("svd_report.json"), &details)?;
    let series: Vec<Series<'_>> = series_data
        .iter()
        .map(|(l, p): &(String, Vec<(f64, f64)>)| Series {
            label: l,
            points: p.clone(),
        })
        .collect();
    write_line_plot(&out.join("sigma_log10.png"), &series)?;
    files.extend(["svd_summary.csv", "svd_report.json", "sigma_log10.png"].map(String::from));
    Ok(RunReport::new("svd", files, Vec::new()))
}

/// Long-format comparison row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub scan_time: f64,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub ssim_mu: Option<f64>,
    pub status: String,
}

/// Mean over successful seeds at one scan time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub scan_time: f64,
    pub epsilon_mean: f64,
    pub ssim_mu_mean: f64,
    pub count: usize,
}

pub fn aggregate(rows: &[CompareRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, t)| *m == r.method && *t == r.scan_time) {
            keys.push((r.method.clone(), r.scan_time));
        }
    }
    keys.into_iter()
        .filter_map(|(method, scan_time)| {
            let ok: Vec<&CompareRow> = rows
                .iter()
                .filter(|r| r.method == method && r.scan_time == scan_time && r.status == "ok")
                .collect();
            if ok.is_empty() {
                return None;
            }
            let count = ok.len();
            let eps = ok.iter().filter_map(|r| r.epsilon).sum::<f64>() / count as f64;
            let ssim = ok.iter().filter_map(|r| r.ssim_mu).sum::<f64>() / count as f64;
            Some(AggregateRow {
                method,
                scan_time,
                epsilon_mean: eps,
                ssim_mu_mean: ssim,
                count,
            })
        })
        .collect()
}

/// Sweep points as `(scan time label, mask seed, mask)`.
fn compare_points(cfg: &ExperimentConfig, n: usize) -> Result<Vec<(f64, u64, SamplingMask)>> {
    let mut points = Vec::new();
    match cfg.scheme {
        Scheme::Random => {
            for &st in &cfg.scan_times {
                for &seed in &cfg.seeds {
                    points.push((st, seed, make_random_mask(n, st, cfg.acs, seed)?));
                }
            }
        }
        Scheme::Accel => {
            let rates = if cfg.rates.is_empty() { vec![cfg.rate] } else { cfg.rates.clone() };
            for r in rates {
                let mask = make_accelerated_mask(n, r, cfg.acs)?;
                for &seed in &cfg.seeds {
                    points.push((mask.scan_time(), seed, mask.clone()));
                }
            }
        }
    }
    Ok(points)
}

pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let points = compare_points(cfg, grid.n())?;
    let rows: Vec<CompareRow> = points
        .par_iter()
        .map(|(st, seed, mask)| -> Result<Vec<CompareRow>> {
            let data = Dataset::simulate(cfg, mask.clone(), *seed)?;
            let reference = data.truth_magnitude().expect("simulated data carries its truth");
            Ok(cfg
                .methods
                .iter()
                .map(|&method| {
                    let outcome = run_method(method, cfg, &data).and_then(|r| {
                        if r.failed_slices().is_empty() {
                            normalized_scores(&reference, &r.magnitude)
                        } else {
                            Err(Error::NumericalFailure("slice solves failed".into()))
                        }
                    });
                    let (epsilon, ssim_mu, status) = match outcome {
                        Ok(s) => (Some(s.epsilon), Some(s.ssim_mu), "ok".to_string()),
                        Err(e) => {
                            log::error!("{} at scan time {st}, seed {seed}: {e}", method.name());
                            (None, None, format!("failed: {e}"))
                        }
                    };
                    CompareRow {
                        method: method.name().into(),
                        scan_time: *st,
                        seed: *seed,
                        epsilon,
                        ssim_mu,
                        status,
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let agg = aggregate(&rows);
    write_csv(&out.join("compare.csv"), &rows)?;
    write_csv(&out.join("compare_aggregate.csv"), &agg)?;
    let plot = |pick: fn(&AggregateRow) -> f64, name: &str| -> Result<()> {
        let series: Vec<Series<'_>> = cfg
            .methods
            .iter()
            .map(|m| Series {
                label: m.name(),
                points: agg.iter().filter(|a| a.method == m.name()).map(|a| (a.scan_time, pick(a))).collect(),
            })
            .collect();
        write_line_plot(&out.join(name), &series)
    };
    plot(|a| a.epsilon_mean, "epsilon_vs_scan_time.png")?;
    plot(|a| a.ssim_mu_mean, "ssim_vs_scan_time.png")?;
    let failures = rows
        .iter()
        .filter(|r| r.status != "ok")
        .map(|r| MethodFailure {
            method: r.method.clone(),
            message: format!("scan time {}, seed {}: {}", r.scan_time, r.seed, r.status),
        })
        .collect();
    let files = ["compare.csv", "compare_aggregate.csv", "epsilon_vs_scan_time.png", "ssim_vs_scan_time.png"]
        .map(String::from)
        .to_vec();
    Ok(RunReport::new("compare", files, failures))
}

/// Magnitude of a stack: SOS over coils and maps, after the inverse DFT for
/// k-space stacks.
pub fn stack_magnitude(stack: &CoilStack) -> Result<RealImage> {
    match stack.kind() {
        StackKind::Kspace => Ok(sos_combine(&prepare_g(stack, stack.grid()?)?)),
        _ => Ok(sos_combine(stack)),
    }
}

pub fn cmd_metrics(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let truth_path = cfg
        .truth
        .as_ref()
        .map(|p| cfg.path(p))
        .ok_or_else(|| Error::invalid("metrics needs a truth stack (--truth)"))?;
    let est_path = cfg
        .estimate
        .as_ref()
        .map(|p| cfg.path(p))
        .ok_or_else(|| Error::invalid("metrics needs an estimate stack (--estimate)"))?;
    let reference = stack_magnitude(&CoilStack::load(&truth_path)?)?;
    let estimate = stack_magnitude(&CoilStack::load(&est_path)?)?;
    let s = normalized_scores(&reference, &estimate)?;
    let mask_path = cfg.input_dir(out).join(MASK_FILE);
    let scan_time = if mask_path.exists() {
        Some(SamplingMask::load(&mask_path)?.scan_time())
    } else {
        None
    };
    let method = est_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "estimate".into());
    let row = MetricsRow {
        method,
        scan_time,
        seed: None,
        epsilon: s.epsilon,
        ssim_mu: s.ssim_mu,
    };
    write_csv(&out.join("metrics.csv"), &[row])?;
    Ok(RunReport::new("metrics", vec!["metrics.csv".into()], Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            phantom: Source::Inline(PhantomSpec::shepp_logan(16, 16)),
            coils: Source::Inline(CoilModel::ring(4).normalized()),
            acs: 4,
            max_iter: 50,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let cfg = small_config();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"alfa": 1}"#).is_err());
        let partial: ExperimentConfig = serde_json::from_str(r#"{"rate": 3}"#).unwrap();
        assert_eq!(partial.rate, 3);
        assert_eq!(partial.beta, 0.01);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = small_config();
        cfg.apply(&Overrides {
            alpha: Some(0.5),
            scan_time: Some(0.5),
            seed: Some(9),
            ..Overrides::default()
        });
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.scheme, Scheme::Random);
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.scan_time, Some(0.5));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = small_config();
        cfg.beta = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.scheme = Scheme::Random;
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.scheme = Scheme::Random;
        cfg.scan_time = Some(0.1);
        assert!(cfg.mask(16, None, 0).is_err());
    }

    #[test]
    fn coil_subsets_are_evenly_spaced() {
        assert_eq!(coil_subset(8, 1).unwrap(), vec![0]);
        assert_eq!(coil_subset(8, 2).unwrap(), vec![0, 4]);
        assert_eq!(coil_subset(8, 4).unwrap(), vec![0, 2, 4, 6]);
        assert_eq!(coil_subset(8, 8).unwrap(), (0..8).collect::<Vec<_>>());
        assert!(coil_subset(8, 9).is_err());
    }

    #[test]
    fn aggregate_means_skip_failures() {
        let row = |seed, eps: Option<f64>, status: &str| CompareRow {
            method: "ac".into(),
            scan_time: 0.5,
            seed,
            epsilon: eps,
            ssim_mu: eps.map(|e| 1.0 - e),
            status: status.into(),
        };
        let rows = vec![row(0, Some(0.1), "ok"), row(1, Some(0.3), "ok"), row(2, None, "failed: x")];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].count, 2);
        assert!((agg[0].epsilon_mean - 0.2).abs() < 1e-15);
        assert!((agg[0].ssim_mu_mean - 0.8).abs() < 1e-15);
    }

    #[test]
    fn out_dir_resolution_prefers_explicit() {
        assert_eq!(resolve_out(Some(Path::new("x"))), PathBuf::from("x"));
    }

    #[test]
    fn normalized_scores_are_scale_free() {
        let r = RealImage::from_data(4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let a = normalized_scores(&r, &r).unwrap();
        assert_eq!(a.epsilon, 0.0);
        assert_eq!(a.ssim_mu, 1.0);
        let b = normalized_scores(&r.scaled(10.0), &r.scaled(10.0)).unwrap();
        assert_eq!(b.epsilon, 0.0);
        assert!(normalized_scores(&RealImage::zeros(4, 4), &r).is_err());
    }
}
