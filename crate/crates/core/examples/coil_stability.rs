//! Pooled singular values of the stacked coil operator for growing coil
//! subsets and acceleration factors: more coils shrink the null space.

use fredholm_mri::experiment::{coil_subset, resolve_out};
use fredholm_mri::geometry::{make_accelerated_mask, Grid};
use fredholm_mri::io::{write_line_plot, Series};
use fredholm_mri::simulation::{make_coil_maps, CoilModel};
use fredholm_mri::svd::{stability_sweep, StabilityCase, DEFAULT_THRESHOLD};

fn main() -> fredholm_mri::Result<()> {
    let grid = Grid::new(64, 64)?;
    let maps = make_coil_maps(&CoilModel::ring(8).normalized(), grid)?;
    let mut cases = Vec::new();
    for rate in [2, 3, 4] {
        let mask = make_accelerated_mask(64, rate, 16)?;
        for k in [1, 2, 4, 8] {
            cases.push(StabilityCase {
                label: format!("K{k}_R{rate}"),
                mask: mask.clone(),
                coils: coil_subset(8, k)?,
            });
        }
    }
    let results = stability_sweep(grid, &maps, &cases, DEFAULT_THRESHOLD)?;
    println!("{:<8} {:>6} {:>12} {:>6}", "case", "scan", "kappa", "d");
    for r in &results {
        println!("{:<8} {:>6.3} {:>12.3e} {:>6}", r.label, r.scan_time, r.report.kappa, r.report.null_dim);
    }

    let out = resolve_out(None).join("coil_stability");
    let series: Vec<Series<'_>> = results
        .iter()
        .filter(|r| r.label.ends_with("R2"))
        .map(|r| Series {
            label: &r.label,
            points: r.report.sigma.iter().enumerate().map(|(i, s)| (i as f64, s.max(1e-16).log10())).collect(),
        })
        .collect();
    write_line_plot(&out.join("sigma_R2.png"), &series)?;
    println!("wrote {}", out.join("sigma_R2.png").display());
    Ok(())
}
