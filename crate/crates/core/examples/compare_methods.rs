//! Error and structural similarity of every method across scan times,
//! averaged over random masks.

use fredholm_mri::experiment::{cmd_compare, resolve_out, ExperimentConfig, Scheme};

fn main() -> fredholm_mri::Result<()> {
    let cfg = ExperimentConfig {
        scheme: Scheme::Random,
        scan_times: vec![0.37, 0.445, 0.58],
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    };
    let out = resolve_out(None).join("compare_methods");
    let report = cmd_compare(&cfg, &out)?;
    let text = std::fs::read_to_string(out.join("compare_aggregate.csv")).map_err(|e| fredholm_mri::Error::Io {
        path: out.join("compare_aggregate.csv"),
        source: e,
    })?;
    print!("{text}");
    println!("{:?}: plots in {}", report.status, out.display());
    Ok(())
}
