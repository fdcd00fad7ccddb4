//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. The trained classifier is shared by
//! the criteria that need it.

use std::cell::OnceCell;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lgcorrect::cnn::{train, CnnModel, History, InputTransform, TrainConfig};
use lgcorrect::config::RunConfig;
use lgcorrect::dataset::{generate_dataset, prepare_image, probe_field};
use lgcorrect::field::{intensity, superpose, ModeSuperposition};
use lgcorrect::gdo::{build_correction_mask, launch_with_mask, observe, ForwardModel, Observation};
use lgcorrect::optics::{propagate, sample_photons, simulate_channel, CountImage, TransferFunction};
use lgcorrect::pipeline::{cmd_channel, cmd_correct, cmd_tomography};
use lgcorrect::tomography::{fidelity, measure_probabilities, reconstruct_density, DensityMatrix, ProjectorSet};
use lgcorrect::turbulence::{kolmogorov_structure_function, structure_function, ScreenGenerator};
use lgcorrect::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Trained {
    model: CnnModel<f32>,
    history: History,
    deterministic: bool,
    elapsed: Duration,
}

fn config(out: &std::path::Path) -> RunConfig {
    RunConfig { out: out.to_path_buf(), ..RunConfig::default() }
}

fn turbulence_statistics(cfg: &RunConfig) -> Result<Verdict> {
    let start = Instant::now();
    let grid = cfg.grid()?;
    let spec = cfg.spec(80e-13)?;
    let gen = ScreenGenerator::new(grid, spec)?;
    let separations: Vec<f64> = (0..10).map(|i| 0.24 * 2f64.powf(i as f64 / 3.0)).collect();
    let (batches, per_batch) = (10, 200);
    let mut sum = vec![0.0; separations.len()];
    let mut radii = Vec::new();
    // equal batch sizes, so the mean of batch means is the overall mean
    for b in 0..batches {
        let seeds: Vec<u64> = (0..per_batch).map(|i| cfg.task_seed("acceptance-screens") ^ (b * per_batch + i) as u64).collect();
        let d = structure_function(&gen.generate_batch(&seeds), &separations)?;
        radii = d.iter().map(|p| p.0).collect();
        for (s, (_, v)) in sum.iter_mut().zip(&d) {
            *s += v / batches as f64;
        }
    }
    let r0 = spec.fried_parameter();
    let worst = radii
        .iter()
        .zip(&sum)
        .map(|(&r, &d)| (d / kolmogorov_structure_function(r, r0) - 1.0).abs())
        .fold(0.0, f64::max);
    let (lx, ly): (Vec<f64>, Vec<f64>) = radii.iter().zip(&sum).map(|(r, d)| (r.ln(), d.ln())).unzip();
    let slope = least_squares_slope(&lx, &ly);
    let elapsed = start.elapsed();
    Ok(verdict(
        worst <= 0.15 && (slope - 5.0 / 3.0).abs() <= 0.2 && elapsed <= Duration::from_secs(300),
        format!(
            "{} screens, r from {:.2} to {:.2} mm: max deviation {:.1}%, slope {:.3}, {:.0} s",
            batches * per_batch,
            radii[0],
            radii[radii.len() - 1],
            100.0 * worst,
            slope,
            elapsed.as_secs_f64()
        ),
    ))
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn gradient_checks(cfg: &RunConfig) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.task_seed("acceptance-gradients"));

    // classifier: default architecture in f64, randomized entries of every tensor
    let dcfg = cfg.dataset_config(2)?;
    let images = generate_dataset(&dcfg)?.data;
    let mut model = CnnModel::<f64>::new(cfg.architecture()?, cfg.classes()?, 17)?;
    model.set_transform(InputTransform::fitted(0.05, images.images.iter().map(|v| v.as_slice())));
    let batch: Vec<(&[f64], usize)> = images.images.iter().zip(&images.labels).take(4).map(|(i, &l)| (i.as_slice(), l)).collect();
    let (_, grad) = model.loss_and_gradient(&batch)?;
    let mut cnn_worst = 0.0f64;
    let mut cnn_checked = 0;
    // small enough that no ReLU or pooling decision flips inside ±h for the
    // conv tensors, whose perturbation touches every activation
    let h = 1e-6;
    for t in 0..6 {
        let len = grad.tensors()[t].len();
        for _ in 0..len.min(24) {
            let i = rng.random_range(0..len);
            let mut probe = model.clone();
            probe.params_mut().tensors_mut()[t][i] += h;
            let up = probe.loss_and_gradient(&batch)?.0;
            probe.params_mut().tensors_mut()[t][i] -= 2.0 * h;
            let down = probe.loss_and_gradient(&batch)?.0;
            let fd = (up - down) / (2.0 * h);
            let analytic = grad.tensors()[t][i];
            if analytic.abs().max(fd.abs()) < 1e-7 {
                // both vanish (dead ReLU or pooled-away pixel)
                continue;
            }
            cnn_worst = cnn_worst.max(rel_err(analytic, fd));
            cnn_checked += 1;
        }
    }

    // phase retrieval: full grid, 20 random pixels inside the beam
    let grid = cfg.grid()?;
    let camera = cfg.camera()?;
    let u = superpose(&grid, &ModeSuperposition::balanced(3, 0, 0.0)?, 1.0)?;
    let gen = ScreenGenerator::new(grid, cfg.spec(80e-13)?)?;
    let obs = observe(&u, &gen.generate(1), &camera)?;
    let fm = ForwardModel::new(camera, vec![Observation { launched: u.clone(), observed: obs }])?;
    let theta = gen.generate(2).into_phase();
    let (_, g) = fm.cost_and_gradient(&theta);
    let peak = u.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut gdo_worst = 0.0f64;
    let mut gdo_checked = 0;
    while gdo_checked < 20 {
        let j = rng.random_range(0..grid.len());
        if u.data()[j].norm() < 0.1 * peak {
            continue;
        }
        let eps = 1e-4;
        let mut tp = theta.clone();
        tp[j] += eps;
        let mut tm = theta.clone();
        tm[j] -= eps;
        let fd = (fm.cost(&tp) - fm.cost(&tm)) / (2.0 * eps);
        gdo_worst = gdo_worst.max(rel_err(g[j], fd));
        gdo_checked += 1;
    }
    Ok(verdict(
        cnn_worst <= 1e-4 && gdo_worst <= 1e-5 && cnn_checked >= 60,
        format!("classifier {cnn_checked} entries, worst {cnn_worst:.1e}; phase retrieval {gdo_checked} pixels, worst {gdo_worst:.1e}"),
    ))
}

fn exact_cancellation(cfg: &RunConfig) -> Result<Verdict> {
    let grid = cfg.grid()?;
    let camera = cfg.camera()?;
    let modes = ModeSuperposition::balanced(3, 0, 0.0)?;
    let u = superpose(&grid, &modes, 1.0)?;
    let truth = ScreenGenerator::new(grid, cfg.spec(80e-13)?)?.generate(cfg.task_seed("acceptance-cancel"));
    let mask = build_correction_mask(&modes, 1.0, &TransferFunction::identity(&grid), &truth)?;
    let corrected = simulate_channel(&launch_with_mask(&u, &mask)?, &truth, &camera, None)?.normalized()?;
    let baseline = intensity(&propagate(&u, &camera)?).normalized()?;
    let num: f64 = corrected.data().iter().zip(baseline.data()).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = baseline.data().iter().map(|b| b * b).sum();
    let rel = num / den;
    Ok(verdict(rel <= 1e-6, format!("relative MSE {rel:.2e}")))
}

fn train_classifier(cfg: &RunConfig) -> Result<Trained> {
    let start = Instant::now();
    let dataset = generate_dataset(&cfg.dataset_config(400)?)?;
    let tcfg = cfg.train_config();
    let init = CnnModel::<f32>::new(cfg.architecture()?, dataset.classes.clone(), cfg.task_seed("cnn-init"))?;
    let (model, history) = train(init.clone(), &dataset.data, &tcfg)?;
    let short = TrainConfig { epochs: 1, ..tcfg };
    let a = train(init.clone(), &dataset.data, &short)?;
    let b = train(init, &dataset.data, &short)?;
    Ok(Trained { model, history, deterministic: a == b, elapsed: start.elapsed() })
}

fn tomography_fidelity(cfg: &RunConfig, model: &CnnModel<f32>) -> Result<Verdict> {
    let start = Instant::now();
    let r = cmd_tomography(cfg, model.clone())?;
    let elapsed = start.elapsed();
    Ok(verdict(
        r.fidelity_corrected >= 0.99 && elapsed <= Duration::from_secs(900),
        format!(
            "F(rho1,rho3) {:.5} (uncorrected {:.4}), predicted cn2 {:.0e}, {:.0} s",
            r.fidelity_corrected,
            r.fidelity_distorted,
            r.prediction.cn2,
            elapsed.as_secs_f64()
        ),
    ))
}

fn channel_capacity(cfg: &RunConfig, model: &CnnModel<f32>) -> Result<Verdict> {
    let r = cmd_channel(cfg, model.clone(), false)?;
    let [clear, turbulent, corrected] = r.mutual_information();
    let ceiling = (r.labels.len() as f64).log2();
    Ok(verdict(
        (ceiling - clear).abs() <= 0.05 && corrected >= 0.9 * clear && corrected > turbulent,
        format!(
            "N={} ceiling {ceiling:.4}: clear {clear:.4}, turbulent {turbulent:.4}, corrected {corrected:.4} bits ({:.1}% of clear)",
            r.labels.len(),
            100.0 * corrected / clear
        ),
    ))
}

fn classification(cfg: &RunConfig, t: &Trained) -> Result<Verdict> {
    let acc = t.history.final_validation_accuracy().unwrap_or(0.0);
    // a clear channel should land in the weakest class
    let grid = cfg.grid()?;
    let frame = intensity(&propagate(&probe_field(&grid, cfg.classifier.probe_waist_mm)?, &cfg.camera()?)?);
    let clear = t.model.predict_cn2(&prepare_image(&frame, cfg.classifier.input_size)?)?;
    Ok(verdict(
        acc >= 0.85 && t.deterministic,
        format!(
            "held-out accuracy {:.1}% after {} epochs, deterministic {}, {:.0} s; clear channel -> class {} (p = {:.3})",
            100.0 * acc,
            t.history.epochs.len(),
            t.deterministic,
            t.elapsed.as_secs_f64(),
            clear.index,
            clear.confidence
        ),
    ))
}

fn tomography_round_trip(cfg: &RunConfig) -> Result<Verdict> {
    let grid = cfg.grid()?;
    let projectors = ProjectorSet::new(3, &grid, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.task_seed("acceptance-qubits"));
    let mut worst = 1.0f64;
    for _ in 0..100 {
        let theta = (1.0 - 2.0 * rng.random::<f64>()).acos();
        let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        let alpha = Complex64::new((theta / 2.0).cos(), 0.0);
        let beta = Complex64::from_polar((theta / 2.0).sin(), phi);
        let rho = reconstruct_density(&measure_probabilities(&projectors.qubit_field(alpha, beta)?, &projectors)?);
        worst = worst.min(fidelity(&DensityMatrix::pure(alpha, beta)?, &rho)?);
    }
    Ok(verdict(worst >= 0.999, format!("100 random pure states, lowest fidelity {worst:.7}")))
}

fn photon_images(cfg: &RunConfig, model: &CnnModel<f32>) -> Result<Verdict> {
    let r = cmd_correct(cfg, model.clone(), false)?;
    let frames = 10;
    let per_frame = cfg.photon.mean_counts / frames as f64;
    let mut acc: Option<CountImage> = None;
    for f in 0..frames {
        let frame = sample_photons(&r.corrected, per_frame, cfg.photon.background_rate, cfg.task_seed("acceptance-photons") ^ f)?;
        match acc.as_mut() {
            Some(a) => a.accumulate(&frame)?,
            None => acc = Some(frame),
        }
    }
    let acc = acc.expect("at least one frame");
    let ncc = acc.to_real().normalized_cross_correlation(&r.corrected)?;
    Ok(verdict(
        ncc >= 0.95,
        format!(
            "{} frames, {} counts: NCC {ncc:.4}; corrected vs prepared NCC {:.4}",
            frames,
            acc.total(),
            r.ncc_corrected
        ),
    ))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary output directory");
    let cfg = config(dir.path());
    let trained: OnceCell<Result<Trained>> = OnceCell::new();
    let model = || trained.get_or_init(|| train_classifier(&cfg)).as_ref().map(|t| &t.model).map_err(|e| e.to_string());

    let criteria: Vec<(&str, Box<dyn Fn() -> std::result::Result<Verdict, String>>)> = vec![
        ("turbulence statistics", Box::new(|| turbulence_statistics(&cfg).map_err(|e| e.to_string()))),
        ("gradient correctness", Box::new(|| gradient_checks(&cfg).map_err(|e| e.to_string()))),
        ("exact-knowledge cancellation", Box::new(|| exact_cancellation(&cfg).map_err(|e| e.to_string()))),
        ("tomography fidelity", Box::new(|| tomography_fidelity(&cfg, model()?).map_err(|e| e.to_string()))),
        ("channel capacity", Box::new(|| channel_capacity(&cfg, model()?).map_err(|e| e.to_string()))),
        (
            "cnn classification",
            Box::new(|| {
                trained.get_or_init(|| train_classifier(&cfg)).as_ref().map_err(|e| e.to_string()).and_then(|t| classification(&cfg, t).map_err(|e| e.to_string()))
            }),
        ),
        ("tomography round trip", Box::new(|| tomography_round_trip(&cfg).map_err(|e| e.to_string()))),
        ("photon-level images", Box::new(|| photon_images(&cfg, model()?).map_err(|e| e.to_string()))),
    ];

    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!pass);
        println!("{} criterion {} ({name}): {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
