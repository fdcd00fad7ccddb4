//! Phase retrieval from one turbulent camera frame, then the correction mask
//! and the corrected camera image. No classifier: the estimate starts at zero.
//!
//! cargo run --release --example gdo_correction [out-dir]

use std::path::PathBuf;

use lgcorrect::channel::FrozenChannel;
use lgcorrect::config::RunConfig;
use lgcorrect::field::{intensity, superpose, ModeSuperposition};
use lgcorrect::gdo::{optimize_mask, slm_correction, PhaseMask};
use lgcorrect::io::write_pgm16_auto;
use lgcorrect::optics::{propagate, TransferFunction};
use lgcorrect::turbulence::generate_phase_screen;

fn main() -> lgcorrect::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-out/gdo_correction".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let grid = cfg.grid()?;
    let camera = cfg.camera()?;
    let hologram = superpose(&grid, &ModeSuperposition::balanced(5, 0, 0.0)?, 1.0)?;
    let screen = generate_phase_screen(&grid, &cfg.spec(90e-13)?, 21)?;
    let channel = FrozenChannel::new(&screen, &camera);

    let prepared = intensity(&propagate(&hologram, &camera)?).normalized()?;
    let distorted = channel.observe(&hologram)?;
    let result = optimize_mask(&distorted, &hologram, &camera, &TransferFunction::identity(&grid), &PhaseMask::zeros(grid), &cfg.gdo_config())?;
    let slm = slm_correction(&hologram, &result.mask)?;
    let corrected = channel.observe_with(&hologram, Some(&slm))?;

    for e in result.trace.iter().step_by(25) {
        println!("iteration {:4}  mse {:.3e}  step {:.3}", e.iteration, e.mse, e.step);
    }
    println!("{} iterations in {:.2} s, relative mse {:.2e}", result.iterations, result.duration.as_secs_f64(), result.relative_mse);
    println!("NCC with the prepared image: distorted {:.4}, corrected {:.4}",
        distorted.normalized_cross_correlation(&prepared)?, corrected.normalized_cross_correlation(&prepared)?);

    let n = grid.n();
    for (name, img) in [("prepared", &prepared), ("distorted", &distorted), ("corrected", &corrected)] {
        write_pgm16_auto(out.join(format!("{name}.pgm")), n, n, img.data())?;
    }
    result.write(&out, "correction")?;
    Ok(())
}
