//! Condition number of the 8-coil operator for uniform acceleration versus
//! random line selection at the same number of acquired lines.

use fredholm_mri::geometry::{make_accelerated_mask, make_random_mask, Grid};
use fredholm_mri::simulation::{make_coil_maps, CoilModel};
use fredholm_mri::svd::{column_blocks, svd_blocks, DEFAULT_THRESHOLD};

fn main() -> fredholm_mri::Result<()> {
    let (n, acs) = (64, 16);
    let grid = Grid::new(n, n)?;
    let maps = make_coil_maps(&CoilModel::ring(8).normalized(), grid)?;
    println!("{:>4} {:>7} {:>12} {:>14}", "R", "scan", "kappa accel", "kappa random");
    for rate in [4, 3, 2] {
        let accel = make_accelerated_mask(n, rate, acs)?;
        let st = accel.scan_time();
        let k_accel = svd_blocks(&column_blocks(grid, &maps, &accel)?, DEFAULT_THRESHOLD)?.kappa;
        let mut k_random = Vec::new();
        for seed in 0..5 {
            let mask = make_random_mask(n, st, acs, seed)?;
            k_random.push(svd_blocks(&column_blocks(grid, &maps, &mask)?, DEFAULT_THRESHOLD)?.kappa);
        }
        k_random.sort_by(f64::total_cmp);
        println!("{rate:>4} {st:>7.4} {k_accel:>12.3e} {:>14.3e}  (median of 5 seeds)", k_random[2]);
    }
    Ok(())
}
