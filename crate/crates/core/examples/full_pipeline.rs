//! The whole correction loop: train the classifier, then for one turbulent
//! channel classify the probe frame, retrieve the phase and correct a petal
//! mode and a nine-symbol channel.
//!
//! cargo run --release --example full_pipeline [per-class]

use std::time::Instant;

use lgcorrect::channel::{crosstalk_matrix, mutual_information, CorrectionMode, FrozenChannel};
use lgcorrect::cnn::{train, CnnModel};
use lgcorrect::config::RunConfig;
use lgcorrect::dataset::generate_dataset;
use lgcorrect::field::{intensity, superpose, ModeSuperposition};
use lgcorrect::optics::propagate;
use lgcorrect::pipeline::Tcp;
use lgcorrect::turbulence::generate_phase_screen;

fn main() -> lgcorrect::Result<()> {
    let per_class: usize = std::env::args().nth(1).map_or(Ok(400), |s| s.parse()).expect("per-class count");
    let cfg = RunConfig::default();
    let t = Instant::now();
    let dataset = generate_dataset(&cfg.dataset_config(per_class)?)?;
    let init = CnnModel::<f32>::new(cfg.architecture()?, dataset.classes.clone(), cfg.task_seed("cnn-init"))?;
    let (model, history) = train(init, &dataset.data, &cfg.train_config())?;
    println!(
        "classifier: {} images, held-out accuracy {:.3}, {:.0} s",
        dataset.len(),
        history.final_validation_accuracy().unwrap_or(0.0),
        t.elapsed().as_secs_f64()
    );
    let tcp = Tcp::from_config(model, &cfg)?;

    let grid = cfg.grid()?;
    let camera = cfg.camera()?;
    let hologram = superpose(&grid, &ModeSuperposition::balanced(5, 0, 0.0)?, 1.0)?;
    let prepared = intensity(&propagate(&hologram, &camera)?).normalized()?;
    for (cn2, seed) in [(30e-13, 1), (90e-13, 2)] {
        let screen = generate_phase_screen(&grid, &cfg.spec(cn2)?, seed)?;
        let channel = FrozenChannel::new(&screen, &camera);
        let outcome = tcp.run(&hologram, &channel, seed)?;
        let corrected = channel.observe_with(&hologram, Some(&outcome.slm))?;
        println!(
            "cn2 {cn2:.0e}: predicted {:.0e} (p = {:.2}), NCC distorted {:.4} corrected {:.4}",
            outcome.prediction.cn2,
            outcome.prediction.confidence,
            channel.observe(&hologram)?.normalized_cross_correlation(&prepared)?,
            corrected.normalized_cross_correlation(&prepared)?
        );
    }

    let alphabet = cfg.alphabet()?;
    let c = cfg.channel_config(90e-13)?;
    let raw = crosstalk_matrix(&alphabet, &c, 1, &CorrectionMode::None)?;
    let fixed = crosstalk_matrix(&alphabet, &c, 1, &CorrectionMode::Corrector(&tcp))?;
    println!("nine-symbol channel at 9e-12: MI {:.3} bits raw, {:.3} bits corrected", mutual_information(&raw), mutual_information(&fixed));
    Ok(())
}
