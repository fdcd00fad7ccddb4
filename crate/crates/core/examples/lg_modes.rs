//! Laguerre-Gaussian modes on the default grid: overlap table, petal
//! superpositions and PGM intensity snapshots.
//!
//! cargo run --release --example lg_modes [out-dir]

use std::path::PathBuf;

use lgcorrect::field::{inner_product, intensity, lg_mode, superpose, Grid, LgIndex, ModeSuperposition};
use lgcorrect::io::write_pgm16_auto;

fn main() -> lgcorrect::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-out/lg_modes".into()));
    std::fs::create_dir_all(&out)?;
    let grid = Grid::default();
    let waist = 1.0;

    let indices = [(0, 0), (1, 0), (-1, 0), (3, 0), (3, 1), (5, 0)];
    let modes: Vec<_> = indices.iter().map(|&(l, p)| lg_mode(&grid, LgIndex::new(l, p)?, waist)).collect::<lgcorrect::Result<_>>()?;
    println!("|<a|b>| for l,p in {indices:?}");
    for a in &modes {
        let row: Vec<String> = modes.iter().map(|b| inner_product(a, b).map(|v| format!("{:6.3}", v.norm()))).collect::<lgcorrect::Result<_>>()?;
        println!("  {}", row.join(" "));
    }

    let n = grid.n();
    for (l, p) in [(3, 0), (5, 0), (3, 1)] {
        let field = superpose(&grid, &ModeSuperposition::balanced(l, p, 0.0)?, waist)?;
        let img = intensity(&field);
        let path = out.join(format!("petals_l{l}_p{p}.pgm"));
        write_pgm16_auto(&path, n, n, img.data())?;
        println!("l=±{l} p={p}: power {:.6}, written to {}", field.power(), path.display());
    }
    Ok(())
}
