//! Paired comparison of starting estimates for phase retrieval. Slow, so it
//! only runs on request: `cargo test --release --test init_benchmark -- --ignored --nocapture`.

use lgcorrect::config::RunConfig;
use lgcorrect::field::{superpose, ModeSuperposition};
use lgcorrect::gdo::{initial_estimate, observe, optimize_mask, GdoConfig, PhaseMask};
use lgcorrect::optics::TransferFunction;
use lgcorrect::seed::derive;
use lgcorrect::turbulence::generate_phase_screen;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
#[ignore = "about ten minutes in release mode"]
fn predicted_strength_init_versus_zero_init() {
    let cfg = RunConfig::default();
    let grid = cfg.grid().unwrap();
    let camera = cfg.camera().unwrap();
    let relay = TransferFunction::identity(&grid);
    let cn2 = 80e-13;
    let spec = cfg.spec(cn2).unwrap();
    let u = superpose(&grid, &ModeSuperposition::balanced(3, 0, 0.0).unwrap(), 1.0).unwrap();
    // loose enough that most runs reach it inside the budget
    let gdo = GdoConfig { tolerance: 2e-3, max_iterations: 300, ..cfg.gdo_config() };

    let runs = 50;
    let (mut zero, mut predicted) = (Vec::new(), Vec::new());
    let (mut zero_mse, mut predicted_mse) = (Vec::new(), Vec::new());
    for r in 0..runs {
        let screen = generate_phase_screen(&grid, &spec, derive(cfg.seed, "bench-screen", r)).unwrap();
        let observed = observe(&u, &screen, &camera).unwrap();
        let starts = [PhaseMask::zeros(grid), initial_estimate(cn2, &grid, &spec, derive(cfg.seed, "bench-init", r)).unwrap()];
        for (start, (its, mse)) in starts.iter().zip([(&mut zero, &mut zero_mse), (&mut predicted, &mut predicted_mse)]) {
            let res = optimize_mask(&observed, &u, &camera, &relay, start, &gdo).unwrap();
            // unconverged runs count as one past the budget
            its.push(if res.converged { res.iterations as f64 } else { (gdo.max_iterations + 1) as f64 });
            mse.push(res.relative_mse);
        }
    }
    let (mz, mp) = (median(zero), median(predicted));
    println!("median iterations to tolerance: zero init {mz}, predicted-strength init {mp}");
    println!("median final relative MSE: zero init {:.3e}, predicted-strength init {:.3e}", median(zero_mse), median(predicted_mse));
    assert!(mp < mz, "a random screen at the predicted strength did not speed up convergence");
}
