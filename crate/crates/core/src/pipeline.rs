//! The correction protocol (probe → strength class → gradient-descent mask)
//! and the end-to-end commands built on it.
//!
//! Commands write deterministic CSV/PGM artifacts; wall-clock timings go to a
//! separate `timings.log` in the same directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::channel::{
    capacity_sweep, crosstalk_matrix, mutual_information, sweep_csv, CorrectionMode, Corrector, CrosstalkMatrix, FrozenChannel,
    SweepRow,
};
use crate::cnn::{train, CnnModel, History, Prediction};
use crate::config::{InitMode, RunConfig};
use crate::dataset::{generate_with_screens, prepare_image, probe_field, Dataset};
use crate::error::{Error, Result};
use crate::field::{intensity, ComplexField, Grid, RealImage};
use crate::gdo::{
    diversity_observation, diversity_phases, initial_estimate, mse_cost, optimize_observations, slm_correction, CorrectionResult,
    GdoConfig, Observation, PhaseMask,
};
use crate::io;
use crate::optics::{background_subtract, channel_field, propagate, sample_dark_frame, sample_photons, TransferFunction};
use crate::seed;
use crate::tomography::{fidelity, measure_probabilities, reconstruct_density, subspace_weight, DensityMatrix, ProjectorSet};
use crate::turbulence::{generate_phase_screen, write_screen_batch, TurbulenceSpec};

/// Strength classifier plus phase retrieval, acting on one frozen channel.
pub struct Tcp {
    model: CnnModel<f32>,
    probe: ComplexField,
    relay: TransferFunction,
    spec: TurbulenceSpec,
    gdo: GdoConfig,
    init: InitMode,
}

#[derive(Clone, Debug)]
pub struct TcpOutcome {
    pub prediction: Prediction,
    pub result: CorrectionResult,
    /// Phase for the correction modulator.
    pub slm: PhaseMask,
}

impl Tcp {
    /// `spec` supplies wavelength and scales for draws at the predicted strength.
    pub fn new(model: CnnModel<f32>, grid: &Grid, probe_waist: f64, spec: TurbulenceSpec, gdo: GdoConfig, init: InitMode) -> Result<Self> {
        if !model.is_trained() {
            return Err(Error::UntrainedModel);
        }
        gdo.validate()?;
        Ok(Self { model, probe: probe_field(grid, probe_waist)?, relay: TransferFunction::identity(grid), spec, gdo, init })
    }

    pub fn from_config(model: CnnModel<f32>, cfg: &RunConfig) -> Result<Self> {
        Self::new(model, &cfg.grid()?, cfg.classifier.probe_waist_mm, cfg.spec(0.0)?, cfg.gdo_config(), cfg.gdo.init)
    }

    pub fn model(&self) -> &CnnModel<f32> {
        &self.model
    }

    /// Sends the probe through the channel and classifies its camera frame.
    pub fn estimate(&self, channel: &FrozenChannel<'_>) -> Result<Prediction> {
        let frame = channel.observe(&self.probe)?;
        self.model.predict_cn2(&prepare_image(&frame, self.model.architecture().input_size)?)
    }

    pub fn run(&self, hologram: &ComplexField, channel: &FrozenChannel<'_>, seed: u64) -> Result<TcpOutcome> {
        let prediction = self.estimate(channel)?;
        let grid = *hologram.grid();
        let init = match self.init {
            InitMode::Zero => PhaseMask::zeros(grid),
            InitMode::Predicted => initial_estimate(prediction.cn2, &grid, &self.spec, seed::derive(seed, "init", 0))?,
        };
        let mut observations = vec![Observation { launched: hologram.clone(), observed: channel.observe(hologram)? }];
        if self.gdo.ensemble_size > 1 {
            let spec = self.spec.with_cn2(prediction.cn2);
            for d in diversity_phases(&grid, &spec, self.gdo.ensemble_size - 1, seed::derive(seed, "diversity", 0))? {
                let frame = channel.observe_with(hologram, Some(&d))?;
                observations.push(diversity_observation(hologram, &d, &frame)?);
            }
        }
        let result = optimize_observations(observations, hologram, channel.camera(), &self.relay, &init, &self.gdo)?;
        let slm = slm_correction(hologram, &result.mask)?;
        Ok(TcpOutcome { prediction, result, slm })
    }
}

impl Corrector for Tcp {
    fn correct(&self, hologram: &ComplexField, channel: &FrozenChannel<'_>, seed: u64) -> Result<PhaseMask> {
        Ok(self.run(hologram, channel, seed)?.slm)
    }
}

/// Wall-clock log kept apart from the deterministic outputs.
#[derive(Default)]
pub struct Timings {
    lines: String,
}

impl Timings {
    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        let _ = writeln!(self.lines, "{label} {:.3}", start.elapsed().as_secs_f64());
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("timings.log"), &self.lines)?;
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

fn key_value_csv(rows: &[(&str, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

/// `out/dataset/`: `dataset.lgds`, `manifest.csv`, optional per-class PGMs
/// and screen batches.
pub fn cmd_gen_dataset(cfg: &RunConfig, per_class: usize) -> Result<Dataset> {
    let dir = ensure_dir(&cfg.out.join("dataset"))?;
    let dcfg = cfg.dataset_config(per_class)?;
    let mut timings = Timings::default();
    let screens_dir = dir.join("screens");
    let dataset = timings.time("generate", || {
        generate_with_screens(&dcfg, |class, screens| {
            if cfg.dataset.write_screens && !screens.is_empty() {
                fs::create_dir_all(&screens_dir)?;
                write_screen_batch(screens_dir.join(format!("class{class}.lgps")), screens)?;
            }
            Ok(())
        })
    })?;
    timings.time("write", || {
        dataset.save(dir.join("dataset.lgds"))?;
        fs::write(dir.join("manifest.csv"), dataset.manifest_csv())?;
        if cfg.dataset.write_images {
            dataset.write_images(dir.join("images"))?;
        }
        Ok(())
    })?;
    timings.write(&dir)?;
    Ok(dataset)
}

pub fn default_dataset_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("dataset").join("dataset.lgds")
}

pub fn default_model_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("model.lgcn")
}

/// Trains from a fresh initialization; writes the model and `train/history.csv`.
pub fn cmd_train(cfg: &RunConfig, dataset_path: &Path) -> Result<(CnnModel<f32>, History)> {
    if !dataset_path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset {} not found; run gen-dataset first", dataset_path.display()),
        )));
    }
    let dataset = Dataset::load(dataset_path)?;
    let arch = cfg.architecture()?;
    if dataset.classes != cfg.classes()? || dataset.input_size != arch.input_size {
        return Err(Error::Config("dataset classes or resolution differ from the configuration".into()));
    }
    let dir = ensure_dir(&cfg.out.join("train"))?;
    let mut timings = Timings::default();
    let model = CnnModel::<f32>::new(arch, dataset.classes.clone(), cfg.task_seed("cnn-init"))?;
    let (model, history) = timings.time("train", || train(model, &dataset.data, &cfg.train_config()))?;
    model.save(default_model_path(cfg))?;
    fs::write(dir.join("history.csv"), history.to_csv())?;
    timings.write(&dir)?;
    Ok((model, history))
}

pub fn load_trained_model(path: &Path) -> Result<CnnModel<f32>> {
    let model = CnnModel::<f32>::load(path)?;
    if !model.is_trained() {
        return Err(Error::UntrainedModel);
    }
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct CorrectReport {
    pub prediction: Prediction,
    pub result: CorrectionResult,
    pub prepared: RealImage,
    pub distorted: RealImage,
    pub corrected: RealImage,
    /// Normalized cross-correlations against the prepared image.
    pub ncc_distorted: f64,
    pub ncc_corrected: f64,
    pub mse_corrected: f64,
}

/// Poisson-sampled, dark-frame-subtracted version of a unit-sum image.
pub fn photon_image(image: &RealImage, cfg: &RunConfig, seed: u64) -> Result<RealImage> {
    let p = &cfg.photon;
    let signal = sample_photons(image, p.mean_counts, p.background_rate, seed::derive(seed, "signal", 0))?;
    let dark = sample_dark_frame(image.grid(), p.background_rate, seed::derive(seed, "dark", 0))?;
    background_subtract(&signal, &dark)
}

/// Prepared / distorted / corrected camera images for the configured mode and strength.
pub fn cmd_correct(cfg: &RunConfig, model: CnnModel<f32>, photon: bool) -> Result<CorrectReport> {
    let dir = ensure_dir(&cfg.out.join("correct"))?;
    let grid = cfg.grid()?;
    let camera = cfg.camera()?;
    let tcp = Tcp::from_config(model, cfg)?;
    let hologram = cfg.correct_mode()?.field(&grid, cfg.correct.waist_mm)?;
    let run_seed = cfg.task_seed("correct");
    let screen = generate_phase_screen(&grid, &cfg.spec(cfg.correct.cn2)?, seed::derive(run_seed, "screen", 0))?;
    let channel = FrozenChannel::new(&screen, &camera);
    let mut timings = Timings::default();

    let prepared = intensity(&propagate(&hologram, &camera)?).normalized()?;
    let distorted = channel.observe(&hologram)?;
    let outcome = timings.time("tcp", || tcp.run(&hologram, &channel, run_seed))?;
    let corrected = channel.observe_with(&hologram, Some(&outcome.slm))?;
    let report = CorrectReport {
        ncc_distorted: distorted.normalized_cross_correlation(&prepared)?,
        ncc_corrected: corrected.normalized_cross_correlation(&prepared)?,
        mse_corrected: mse_cost(&corrected, &prepared)?,
        prediction: outcome.prediction,
        result: outcome.result,
        prepared,
        distorted,
        corrected,
    };

    let n = grid.n();
    for (name, img) in [("prepared", &report.prepared), ("distorted", &report.distorted), ("corrected", &report.corrected)] {
        io::write_pgm16_auto(dir.join(format!("{name}.pgm")), n, n, img.data())?;
        if photon {
            let counts = photon_image(img, cfg, seed::derive(run_seed, &format!("photon-{name}"), 0))?;
            io::write_pgm16_auto(dir.join(format!("{name}_photon.pgm")), n, n, counts.data())?;
        }
    }
    report.result.write(&dir, "correction")?;
    let r = &report;
    let rows = [
        ("cn2", io::sig6(cfg.correct.cn2)),
        ("predicted_class", r.prediction.index.to_string()),
        ("predicted_cn2", io::sig6(r.prediction.cn2)),
        ("confidence", io::sig6(r.prediction.confidence)),
        ("final_mse", io::sig6(r.result.final_mse)),
        ("relative_mse", io::sig6(r.result.relative_mse)),
        ("iterations", r.result.iterations.to_string()),
        ("converged", r.result.converged.to_string()),
        ("ncc_distorted", io::sig6(r.ncc_distorted)),
        ("ncc_corrected", io::sig6(r.ncc_corrected)),
        ("mse_corrected_vs_prepared", io::sig6(r.mse_corrected)),
    ];
    fs::write(dir.join("metrics.csv"), key_value_csv(&rows))?;
    timings.write(&dir)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ChannelReport {
    pub labels: Vec<String>,
    pub clear: CrosstalkMatrix,
    pub turbulent: CrosstalkMatrix,
    pub corrected: CrosstalkMatrix,
    pub sweep: Vec<SweepRow>,
}

impl ChannelReport {
    pub fn mutual_information(&self) -> [f64; 3] {
        [mutual_information(&self.clear), mutual_information(&self.turbulent), mutual_information(&self.corrected)]
    }
}

/// Matrices without turbulence, with turbulence and corrected, plus the
/// capacity sweep. `sweep = false` skips the sweep.
pub fn cmd_channel(cfg: &RunConfig, model: CnnModel<f32>, sweep: bool) -> Result<ChannelReport> {
    let dir = ensure_dir(&cfg.out.join("channel"))?;
    let tcp = Tcp::from_config(model, cfg)?;
    let alphabet = cfg.alphabet()?;
    let trials = cfg.channel.trials;
    let turbulent_cfg = cfg.channel_config(cfg.channel.cn2)?;
    let mut timings = Timings::default();
    let clear = timings.time("clear", || crosstalk_matrix(&alphabet, &cfg.channel_config(0.0)?, trials, &CorrectionMode::None))?;
    let turbulent = timings.time("turbulent", || crosstalk_matrix(&alphabet, &turbulent_cfg, trials, &CorrectionMode::None))?;
    let corrected = timings.time("corrected", || crosstalk_matrix(&alphabet, &turbulent_cfg, trials, &CorrectionMode::Corrector(&tcp)))?;
    let sweep_rows = if sweep {
        timings.time("sweep", || capacity_sweep(&alphabet, &turbulent_cfg, &cfg.channel.sweep_cn2, trials, &CorrectionMode::Corrector(&tcp)))?
    } else {
        Vec::new()
    };
    let report = ChannelReport { labels: alphabet.labels(), clear, turbulent, corrected, sweep: sweep_rows };
    for (name, m) in [("clear", &report.clear), ("turbulent", &report.turbulent), ("corrected", &report.corrected)] {
        fs::write(dir.join(format!("matrix_{name}.csv")), m.to_csv(&report.labels))?;
        m.write_heatmap(dir.join(format!("matrix_{name}.pgm")), 16)?;
    }
    if sweep {
        fs::write(dir.join("sweep.csv"), sweep_csv(&report.sweep))?;
    }
    let mi = report.mutual_information();
    let rows = [
        ("symbols", alphabet.len().to_string()),
        ("ceiling_bits", io::sig6((alphabet.len() as f64).log2())),
        ("cn2", io::sig6(cfg.channel.cn2)),
        ("mi_clear", io::sig6(mi[0])),
        ("mi_turbulent", io::sig6(mi[1])),
        ("mi_corrected", io::sig6(mi[2])),
        ("diagonal_turbulent", io::sig6(report.turbulent.mean_diagonal())),
        ("diagonal_corrected", io::sig6(report.corrected.mean_diagonal())),
    ];
    fs::write(dir.join("summary.csv"), key_value_csv(&rows))?;
    timings.write(&dir)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct TomographyReport {
    pub prediction: Prediction,
    /// Original, distorted and corrected states.
    pub rho: [DensityMatrix; 3],
    pub subspace_weights: [f64; 3],
    pub fidelity_distorted: f64,
    pub fidelity_corrected: f64,
    pub result: CorrectionResult,
}

/// Six-projector tomography of the configured qubit before, through and
/// after correction of one screen.
pub fn cmd_tomography(cfg: &RunConfig, model: CnnModel<f32>) -> Result<TomographyReport> {
    let dir = ensure_dir(&cfg.out.join("tomography"))?;
    let grid = cfg.grid()?;
    let camera = cfg.camera()?;
    let tcp = Tcp::from_config(model, cfg)?;
    let t = &cfg.tomography;
    let projectors = ProjectorSet::new(t.azimuthal, &grid, t.waist_mm)?;
    let (alpha, beta) = cfg.qubit()?;
    let psi = projectors.qubit_field(alpha, beta)?;
    let run_seed = cfg.task_seed("tomography");
    let screen = generate_phase_screen(&grid, &cfg.spec(t.cn2)?, seed::derive(run_seed, "screen", 0))?;
    let channel = FrozenChannel::new(&screen, &camera);
    let mut timings = Timings::default();

    let outcome = timings.time("tcp", || tcp.run(&psi, &channel, run_seed))?;
    let fields = [psi.clone(), channel_field(&psi, &screen, None)?, channel_field(&psi, &screen, Some(&outcome.slm))?];
    let mut probs = [[0.0; 6]; 3];
    for (p, f) in probs.iter_mut().zip(&fields) {
        *p = measure_probabilities(f, &projectors)?;
    }
    let rho = probs.map(|p| reconstruct_density(&p));
    let report = TomographyReport {
        prediction: outcome.prediction,
        subspace_weights: probs.map(|p| subspace_weight(&p)),
        fidelity_distorted: fidelity(&rho[0], &rho[1])?,
        fidelity_corrected: fidelity(&rho[0], &rho[2])?,
        rho,
        result: outcome.result,
    };
    for (i, r) in report.rho.iter().enumerate() {
        fs::write(dir.join(format!("rho{}.txt", i + 1)), r.to_text_block())?;
        fs::write(dir.join(format!("rho{}.csv", i + 1)), r.to_csv())?;
        r.write_bar_chart(dir.join(format!("rho{}.pgm", i + 1)))?;
    }
    report.result.write(&dir, "correction")?;
    let rows = [
        ("azimuthal", t.azimuthal.to_string()),
        ("cn2", io::sig6(t.cn2)),
        ("predicted_cn2", io::sig6(report.prediction.cn2)),
        ("fidelity_rho1_rho2", io::sig6(report.fidelity_distorted)),
        ("fidelity_rho1_rho3", io::sig6(report.fidelity_corrected)),
        ("subspace_weight_rho1", io::sig6(report.subspace_weights[0])),
        ("subspace_weight_rho2", io::sig6(report.subspace_weights[1])),
        ("subspace_weight_rho3", io::sig6(report.subspace_weights[2])),
    ];
    fs::write(dir.join("report.csv"), key_value_csv(&rows))?;
    timings.write(&dir)?;
    Ok(report)
}

