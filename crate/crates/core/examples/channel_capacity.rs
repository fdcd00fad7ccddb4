//! Cross-talk matrices and mutual information for a five-symbol petal
//! alphabet, without correction and with the exact inverse screen.
//!
//! cargo run --release --example channel_capacity [out-dir]

use std::path::PathBuf;

use lgcorrect::channel::{crosstalk_matrix, mutual_information, CorrectionMode};
use lgcorrect::config::RunConfig;

fn main() -> lgcorrect::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-out/channel_capacity".into()));
    std::fs::create_dir_all(&out)?;
    let mut cfg = RunConfig::default();
    cfg.channel.alphabet = (1..=5).collect();
    let alphabet = cfg.alphabet()?;
    let labels = alphabet.labels();
    println!("alphabet {labels:?}, ceiling {:.4} bits", (alphabet.len() as f64).log2());

    println!("  cn2       MI raw   MI ideal  diag raw");
    for cn2 in [0.0, 30e-13, 60e-13, 90e-13] {
        let c = cfg.channel_config(cn2)?;
        let raw = crosstalk_matrix(&alphabet, &c, 4, &CorrectionMode::None)?;
        let ideal = crosstalk_matrix(&alphabet, &c, 4, &CorrectionMode::Ideal)?;
        println!("  {cn2:.1e}  {:.4}   {:.4}    {:.3}", mutual_information(&raw), mutual_information(&ideal), raw.mean_diagonal());
        if cn2 == 90e-13 {
            std::fs::write(out.join("turbulent.csv"), raw.to_csv(&labels))?;
            raw.write_heatmap(out.join("turbulent.pgm"), 32)?;
        }
    }
    Ok(())
}
