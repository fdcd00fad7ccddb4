//! Qubit tomography in the ℓ=±3 subspace: a pure state through turbulence,
//! reconstructed before and after phase-retrieval correction.
//!
//! cargo run --release --example tomography

use lgcorrect::channel::FrozenChannel;
use lgcorrect::config::RunConfig;
use lgcorrect::gdo::{optimize_mask, slm_correction, PhaseMask};
use lgcorrect::optics::{channel_field, TransferFunction};
use lgcorrect::tomography::{fidelity, measure_probabilities, reconstruct_density, subspace_weight, ProjectorSet};
use lgcorrect::turbulence::generate_phase_screen;

fn main() -> lgcorrect::Result<()> {
    let cfg = RunConfig::default();
    let grid = cfg.grid()?;
    let camera = cfg.camera()?;
    let projectors = ProjectorSet::new(3, &grid, 1.0)?;
    let (alpha, beta) = cfg.qubit()?;
    let psi = projectors.qubit_field(alpha, beta)?;
    let screen = generate_phase_screen(&grid, &cfg.spec(80e-13)?, 5)?;
    let channel = FrozenChannel::new(&screen, &camera);

    let result = optimize_mask(&channel.observe(&psi)?, &psi, &camera, &TransferFunction::identity(&grid), &PhaseMask::zeros(grid), &cfg.gdo_config())?;
    let slm = slm_correction(&psi, &result.mask)?;
    let fields = [psi.clone(), channel_field(&psi, &screen, None)?, channel_field(&psi, &screen, Some(&slm))?];
    let mut rho = Vec::new();
    for (name, f) in ["original", "distorted", "corrected"].iter().zip(&fields) {
        let probs = measure_probabilities(f, &projectors)?;
        let r = reconstruct_density(&probs);
        println!("{name} (subspace weight {:.4}):\n{}", subspace_weight(&probs), r.to_text_block());
        rho.push(r);
    }
    println!("F(rho1, rho2) = {:.5}", fidelity(&rho[0], &rho[1])?);
    println!("F(rho1, rho3) = {:.5}", fidelity(&rho[0], &rho[2])?);
    Ok(())
}
