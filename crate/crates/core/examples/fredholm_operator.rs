//! The per-column operator `A = I - L/n`: closed-form kernel versus the DFT
//! projection, and the identity `g = A f` for zero-filled data.

use fredholm_mri::fft::CenteredFft2;
use fredholm_mri::geometry::{make_accelerated_mask, mask_to_bands, Grid, SamplingMask};
use fredholm_mri::operators::{build_a_analytic, build_a_dft, kernel_eval, prepare_g};
use fredholm_mri::stack::{CoilStack, StackKind};
use num_complex::Complex64;

fn main() -> fredholm_mri::Result<()> {
    let grid = Grid::new(32, 8)?;
    let mask = make_accelerated_mask(32, 3, 8)?;
    let bands = mask_to_bands(&mask);
    println!("missing lines {} -> {} bands", mask.missing_count(), bands.len());
    for x in [0.0, 0.05, 0.25] {
        println!("L({x:.2}) = {:.6}", kernel_eval(&bands, x));
    }

    let analytic = build_a_analytic(&bands, grid);
    let dft = build_a_dft(&mask, grid)?;
    let diff = (analytic.matrix() - dft.matrix()).camax();
    println!("continuous kernel vs discrete projection: max |A_analytic - A_dft| = {diff:.3e}");
    let idem = (dft.matrix() * dft.matrix() - dft.matrix()).camax();
    println!("A_dft is a projection: max |A^2 - A| = {idem:.3e}");

    // zero-filled data equals A applied to the true column
    let image: Vec<Complex64> = (0..grid.len())
        .map(|k| Complex64::new((k % 7) as f64, (k % 3) as f64 - 1.0))
        .collect();
    let mut kspace = image.clone();
    CenteredFft2::new(grid.n(), grid.m()).forward(&mut kspace);
    for row in 0..grid.n() {
        if !mask.is_acquired(row) {
            kspace[row * grid.m()..(row + 1) * grid.m()].fill(Complex64::new(0.0, 0.0));
        }
    }
    let g = prepare_g(&CoilStack::from_image(grid, StackKind::Kspace, kspace)?, grid)?;
    let truth = CoilStack::from_image(grid, StackKind::Image, image)?;
    let mut worst: f64 = 0.0;
    for col in 0..grid.m() {
        let predicted = dft.apply(&truth.column(0, 0, col));
        for (p, q) in predicted.iter().zip(g.column(0, 0, col)) {
            worst = worst.max((p - q).norm());
        }
    }
    println!("max |g - A f| over all columns = {worst:.3e}");

    let full = build_a_dft(&SamplingMask::full(32), grid)?;
    println!("full sampling gives A = I: {:.3e}", (full.matrix() - nalgebra::DMatrix::identity(32, 32)).camax());
    Ok(())
}
