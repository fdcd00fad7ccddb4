//! Angular-spectrum propagation: Gaussian beam growth against the analytic
//! beam radius, then a petal mode through turbulence to the camera.
//!
//! cargo run --release --example propagation [out-dir]

use std::f64::consts::PI;
use std::path::PathBuf;

use lgcorrect::config::RunConfig;
use lgcorrect::field::{intensity, lg_mode, superpose, LgIndex, ModeSuperposition};
use lgcorrect::io::write_pgm16_auto;
use lgcorrect::optics::{propagate, simulate_channel, TransferFunction};
use lgcorrect::turbulence::generate_phase_screen;

fn main() -> lgcorrect::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-out/propagation".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let grid = cfg.grid()?;
    let lambda = cfg.turbulence.wavelength_mm;
    let w0 = 1.0;
    let gaussian = lg_mode(&grid, LgIndex::new(0, 0)?, w0)?;
    let zr = PI * w0 * w0 / lambda;

    println!("  z (mm)   w simulated   w analytic");
    for z in [0.0, 500.0, 1000.0, 2000.0] {
        let img = intensity(&propagate(&gaussian, &TransferFunction::new(&grid, lambda, z)?)?);
        // w = 2·sqrt(<x²>) for a Gaussian intensity
        let total = img.sum();
        let second: f64 = (0..grid.n())
            .flat_map(|y| (0..grid.n()).map(move |x| (x, y)))
            .map(|(x, y)| img.data()[y * grid.n() + x] * grid.coord(x).powi(2))
            .sum();
        let w = 2.0 * (second / total).sqrt();
        println!("  {z:6.0}   {w:.4}        {:.4}", w0 * (1.0 + (z / zr).powi(2)).sqrt());
    }

    let mode = superpose(&grid, &ModeSuperposition::balanced(3, 0, 0.0)?, w0)?;
    let camera = cfg.camera()?;
    let screen = generate_phase_screen(&grid, &cfg.spec(90e-13)?, 3)?;
    let clear = intensity(&propagate(&mode, &camera)?);
    let distorted = simulate_channel(&mode, &screen, &camera, None)?;
    println!("\npetal mode after {} mm: NCC clear vs turbulent {:.4}", cfg.camera_distance(), clear.normalized_cross_correlation(&distorted)?);
    write_pgm16_auto(out.join("clear.pgm"), grid.n(), grid.n(), clear.data())?;
    write_pgm16_auto(out.join("turbulent.pgm"), grid.n(), grid.n(), distorted.data())?;
    Ok(())
}
