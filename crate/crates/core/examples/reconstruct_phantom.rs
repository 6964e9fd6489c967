//! End to end: simulate an undersampled 8-coil acquisition of the
//! Shepp-Logan phantom and solve it column by column.

use fredholm_mri::experiment::{normalized_scores, resolve_out};
use fredholm_mri::geometry::{make_random_mask, Grid};
use fredholm_mri::io::write_png_gray;
use fredholm_mri::operators::prepare_g;
use fredholm_mri::optim::LbfgsOptions;
use fredholm_mri::simulation::{make_coil_maps, make_phantom, simulate_kspace, CoilModel, PhantomSpec};
use fredholm_mri::solver::{reconstruct, sos_combine, TvParams, DEFAULT_BETA};

fn main() -> fredholm_mri::Result<()> {
    let (n, m) = (64, 64);
    let grid = Grid::new(n, m)?;
    let truth = make_phantom(&PhantomSpec::shepp_logan(n, m))?;
    let maps = make_coil_maps(&CoilModel::ring(8).normalized(), grid)?;
    let mask = make_random_mask(n, 0.5, 16, 3)?;
    let kspace = simulate_kspace(&truth, &maps, &mask, 0.005, 3)?;
    let g = prepare_g(&kspace, grid)?;

    let params = TvParams::new(3e-3, DEFAULT_BETA)?;
    let result = reconstruct(&g, &maps, &mask, &params, &LbfgsOptions::default())?;
    let converged = result.slices.iter().filter(|s| s.converged).count();
    let iterations: usize = result.slices.iter().map(|s| s.iterations).sum();
    println!("{converged}/{m} columns converged, {iterations} iterations in total");

    let reference = sos_combine(&truth);
    let zero_fill = sos_combine(&g);
    for (name, img) in [("zero filled", &zero_fill), ("column solver", &result.magnitude)] {
        let s = normalized_scores(&reference, img)?;
        println!("{name:<14} epsilon {:.4}  SSIM {:.4}", s.epsilon, s.ssim_mu);
    }

    let out = resolve_out(None).join("reconstruct_phantom");
    let peak = reference.max();
    write_png_gray(&out.join("truth.png"), &reference, peak)?;
    write_png_gray(&out.join("zero_fill.png"), &zero_fill, peak)?;
    write_png_gray(&out.join("ac.png"), &result.magnitude, peak)?;
    println!("images in {}", out.display());
    Ok(())
}
