//! Photon-counting camera model: Poisson frames of a petal pattern with dark
//! counts, accumulated until the pattern emerges.
//!
//! cargo run --release --example single_photon [out-dir]

use std::path::PathBuf;

use lgcorrect::config::RunConfig;
use lgcorrect::field::{intensity, superpose, ModeSuperposition};
use lgcorrect::optics::{background_subtract, propagate, sample_dark_frame, sample_photons};

fn main() -> lgcorrect::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-out/single_photon".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let grid = cfg.grid()?;
    let mode = superpose(&grid, &ModeSuperposition::balanced(5, 0, 0.0)?, 1.0)?;
    let truth = intensity(&propagate(&mode, &cfg.camera()?)?).normalized()?;
    let per_frame = 1e4;
    let background = cfg.photon.background_rate;

    let mut acc = sample_photons(&truth, per_frame, background, 0)?;
    let mut dark = sample_dark_frame(&grid, background, 1_000)?;
    println!("  frames   counts      NCC with intensity");
    for f in 1..=100u64 {
        if f > 1 {
            acc.accumulate(&sample_photons(&truth, per_frame, background, f)?)?;
            dark.accumulate(&sample_dark_frame(&grid, background, 1_000 + f)?)?;
        }
        if [1, 3, 10, 30, 100].contains(&f) {
            let img = background_subtract(&acc, &dark)?;
            println!("  {f:6}   {:9}   {:.4}", acc.total(), img.normalized_cross_correlation(&truth)?);
            acc.export(out.join(format!("accumulated_{f:03}")))?;
        }
    }
    Ok(())
}
