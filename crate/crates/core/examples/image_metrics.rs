//! Relative error and mean 3x3 SSIM over the phantom's region of interest.

use fredholm_mri::metrics::{rel_error, ssim_mean, ssim_window, Roi, ROI_FRACTION, SSIM_C1, SSIM_C2};
use fredholm_mri::simulation::{make_phantom, PhantomSpec};
use fredholm_mri::solver::sos_combine;
use fredholm_mri::stack::RealImage;

fn main() -> fredholm_mri::Result<()> {
    let truth = sos_combine(&make_phantom(&PhantomSpec::shepp_logan(64, 64))?);
    let roi = Roi::from_truth(&truth, ROI_FRACTION)?;
    println!("ROI covers {} of {} pixels", roi.count(), 64 * 64);

    let blurred = box_blur(&truth);
    let brighter = truth.scaled(1.1);
    for (name, est) in [("identical", &truth), ("10% brighter", &brighter), ("3x3 box blur", &blurred)] {
        println!(
            "{name:<13} epsilon {:.4}  SSIM {:.4}",
            rel_error(&truth, est, &roi)?,
            ssim_mean(&truth, est, &roi, 3)?
        );
    }
    println!("constant patches 0 vs 1: {:.6e}", ssim_window(&[0.0; 9], &[1.0; 9], SSIM_C1, SSIM_C2));
    Ok(())
}

fn box_blur(img: &RealImage) -> RealImage {
    let (n, m) = (img.n(), img.m());
    let mut out = img.clone();
    for r in 1..n - 1 {
        for c in 1..m - 1 {
            let mut acc = 0.0;
            for a in r - 1..=r + 1 {
                for b in c - 1..=c + 1 {
                    acc += img.get(a, b);
                }
            }
            out.set(r, c, acc / 9.0);
        }
    }
    out
}
