//! Kolmogorov phase screens: Fried parameter per strength, one screen image
//! per strength and the ensemble structure function against the 5/3 law.
//!
//! cargo run --release --example phase_screens [out-dir]

use std::path::PathBuf;

use lgcorrect::config::RunConfig;
use lgcorrect::field::PhaseMap;
use lgcorrect::io::write_pgm16_auto;
use lgcorrect::turbulence::{kolmogorov_structure_function, structure_function, ScreenGenerator};

fn main() -> lgcorrect::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-out/phase_screens".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let grid = cfg.grid()?;

    for cn2 in [10e-13, 50e-13, 90e-13] {
        let spec = cfg.spec(cn2)?;
        let screen = ScreenGenerator::new(grid, spec)?.generate(1);
        let mean = screen.phase().iter().sum::<f64>() / grid.len() as f64;
        let rms = (screen.phase().iter().map(|p| (p - mean).powi(2)).sum::<f64>() / grid.len() as f64).sqrt();
        println!("cn2 {cn2:.0e}: r0 = {:.3} mm, rms phase about the mean {rms:.2} rad", spec.fried_parameter());
        write_pgm16_auto(out.join(format!("screen_{cn2:.0e}.pgm")), grid.n(), grid.n(), screen.phase())?;
    }

    let spec = cfg.spec(80e-13)?;
    let seeds: Vec<u64> = (0..400).collect();
    let screens = ScreenGenerator::new(grid, spec)?.generate_batch(&seeds);
    let separations: Vec<f64> = (0..10).map(|i| 0.24 * 2f64.powf(i as f64 / 3.0)).collect();
    println!("\n{} screens at cn2 8e-12, r0 = {:.3} mm", screens.len(), spec.fried_parameter());
    println!("  r (mm)   D(r)     6.88 (r/r0)^5/3   ratio");
    for (r, d) in structure_function(&screens, &separations)? {
        let k = kolmogorov_structure_function(r, spec.fried_parameter());
        println!("  {r:6.3}  {d:8.3}  {k:8.3}          {:.3}", d / k);
    }
    Ok(())
}
