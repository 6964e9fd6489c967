//! Accelerated and random line masks, their scan times, and the missing
//! frequency bands they induce.

use fredholm_mri::geometry::{make_accelerated_mask, make_random_mask, mask_to_bands};

fn draw(acquired: &[bool]) -> String {
    acquired.iter().map(|&a| if a { '|' } else { '.' }).collect()
}

fn main() -> fredholm_mri::Result<()> {
    let (n, acs) = (64, 16);
    println!("n = {n}, acs = {acs}");
    for rate in [1, 2, 3, 4] {
        let mask = make_accelerated_mask(n, rate, acs)?;
        println!("R={rate}  scan time {:.4}  {}", mask.scan_time(), draw(mask.acquired()));
    }
    for seed in [0, 1] {
        let mask = make_random_mask(n, 0.445, acs, seed)?;
        println!("random seed {seed}  scan time {:.4}  {}", mask.scan_time(), draw(mask.acquired()));
    }

    let mask = make_accelerated_mask(n, 4, acs)?;
    let bands = mask_to_bands(&mask);
    println!("\nR=4 leaves {} missing bands:", bands.len());
    for b in bands.bands().iter().take(4) {
        println!("  [{:8.3}, {:8.3}]", b.lower(), b.upper());
    }

    // 200 lines with 32 calibration lines give the familiar scan times
    for rate in [4, 3, 2] {
        let mask = make_accelerated_mask(200, rate, 32)?;
        println!("n=200 acs=32 R={rate}: scan time {:.3}", mask.scan_time());
    }
    Ok(())
}
