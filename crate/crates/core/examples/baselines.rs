//! The whole-image baselines on one acquisition: zero filling, Tikhonov by
//! conjugate gradients, and 2-D smoothed TV.

use fredholm_mri::baselines::{reconstruct_baseline, BaselineMethod, BaselineSpec};
use fredholm_mri::experiment::normalized_scores;
use fredholm_mri::geometry::{make_accelerated_mask, Grid};
use fredholm_mri::simulation::{make_coil_maps, make_phantom, simulate_kspace, CoilModel, PhantomSpec};
use fredholm_mri::solver::sos_combine;

fn main() -> fredholm_mri::Result<()> {
    let grid = Grid::new(64, 64)?;
    let truth = make_phantom(&PhantomSpec::shepp_logan(64, 64))?;
    let maps = make_coil_maps(&CoilModel::ring(8).normalized(), grid)?;
    let mask = make_accelerated_mask(64, 3, 16)?;
    let kspace = simulate_kspace(&truth, &maps, &mask, 0.005, 1)?;
    let reference = sos_combine(&truth);
    for (method, alpha) in [
        (BaselineMethod::ZeroFill, 0.0),
        (BaselineMethod::Tikhonov, 3e-3),
        (BaselineMethod::Tv2d, 2e-2),
    ] {
        let res = reconstruct_baseline(&kspace, &maps, &mask, &BaselineSpec::new(method, alpha))?;
        let s = normalized_scores(&reference, &res.magnitude)?;
        let iters = res.summary.map(|s| s.iterations).unwrap_or(0);
        println!("{:<10} epsilon {:.4}  SSIM {:.4}  iterations {iters}", method.name(), s.epsilon, s.ssim_mu);
    }
    Ok(())
}
