//! Run configuration: one TOML file, every key optional, validated as a whole
//! before any command touches the disk.
//!
//! Per-task seeds come from the master seed through [`crate::seed::derive`]
//! with a task label (`"dataset"`, `"train"`, `"correct"`, ...).

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, ModeAlphabet};
use crate::cnn::{Architecture, TrainConfig, TurbulenceClassSet};
use crate::dataset::{probe_field, DatasetConfig, DEFAULT_PROBE_WAIST_MM};
use crate::error::{Error, Result};
use crate::field::{Grid, LgIndex, ModeSuperposition, DEFAULT_N, DEFAULT_PITCH_MM, DEFAULT_WAIST_MM};
use crate::gdo::{GdoConfig, Preconditioner};
use crate::optics::TransferFunction;
use crate::seed;
use crate::turbulence::{TurbulenceSpec, DEFAULT_DISTANCE_MM, DEFAULT_OUTER_SCALE_MM, DEFAULT_WAVELENGTH_MM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub grid: GridSection,
    pub turbulence: TurbulenceSection,
    pub classifier: ClassifierSection,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub gdo: GdoSection,
    pub correct: CorrectSection,
    pub channel: ChannelSection,
    pub tomography: TomographySection,
    pub photon: PhotonSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            grid: GridSection::default(),
            turbulence: TurbulenceSection::default(),
            classifier: ClassifierSection::default(),
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            gdo: GdoSection::default(),
            correct: CorrectSection::default(),
            channel: ChannelSection::default(),
            tomography: TomographySection::default(),
            photon: PhotonSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub pitch_mm: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: DEFAULT_N, pitch_mm: DEFAULT_PITCH_MM }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurbulenceSection {
    pub wavelength_mm: f64,
    pub distance_mm: f64,
    /// Modulator-to-camera distance; the channel distance when absent.
    pub camera_distance_mm: Option<f64>,
    pub outer_scale_mm: f64,
    /// Inner scale in pixels; sets the high-frequency cutoff `5.92 / (pixels·pitch)`.
    pub inner_scale_pixels: f64,
}

impl Default for TurbulenceSection {
    fn default() -> Self {
        Self {
            wavelength_mm: DEFAULT_WAVELENGTH_MM,
            distance_mm: DEFAULT_DISTANCE_MM,
            camera_distance_mm: None,
            outer_scale_mm: DEFAULT_OUTER_SCALE_MM,
            inner_scale_pixels: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub classes_cn2: Vec<f64>,
    pub input_size: usize,
    pub channels: usize,
    pub hidden: usize,
    pub probe_waist_mm: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let a = Architecture::default();
        Self {
            classes_cn2: TurbulenceClassSet::default().values().to_vec(),
            input_size: a.input_size,
            channels: a.channels,
            hidden: a.hidden,
            probe_waist_mm: DEFAULT_PROBE_WAIST_MM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub per_class: usize,
    pub write_images: bool,
    pub write_screens: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { per_class: 400, write_images: true, write_screens: true }
    }
}

/// Defaults are the desk-scale settings: heavy-ball momentum with a decaying
/// rate. Plain gradient descent is `momentum = 0`, `lr_decay = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub momentum: f64,
    pub lr_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { learning_rate: 0.002, batch_size: 32, epochs: 30, validation_fraction: 0.2, momentum: 0.9, lr_decay: 0.95 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Start from a flat phase.
    Zero,
    /// Start from a screen drawn at the predicted strength.
    Predicted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdoSection {
    pub max_iterations: usize,
    pub step: f64,
    pub backtracking: f64,
    pub tolerance: f64,
    pub min_step: f64,
    pub ensemble_size: usize,
    pub init: InitMode,
    pub smoothing: bool,
    pub corner_frequency: f64,
    pub smoothing_exponent: f64,
}

impl Default for GdoSection {
    fn default() -> Self {
        let g = GdoConfig::default();
        let p = Preconditioner::default();
        Self {
            max_iterations: 150,
            step: g.step,
            backtracking: g.backtracking,
            tolerance: g.tolerance,
            min_step: g.min_step,
            ensemble_size: g.ensemble_size,
            init: InitMode::Zero,
            smoothing: true,
            corner_frequency: p.corner_frequency,
            smoothing_exponent: p.exponent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectSection {
    /// Sent mode is the balanced `±azimuthal` superposition.
    pub azimuthal: i32,
    pub radial: u32,
    pub waist_mm: f64,
    pub cn2: f64,
}

impl Default for CorrectSection {
    fn default() -> Self {
        Self { azimuthal: 5, radial: 0, waist_mm: DEFAULT_WAIST_MM, cn2: 90e-13 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    /// One balanced `±ℓ` symbol per entry.
    pub alphabet: Vec<i32>,
    pub waist_mm: f64,
    pub trials: usize,
    /// Strength of the turbulent and corrected matrices.
    pub cn2: f64,
    pub sweep_cn2: Vec<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            alphabet: (1..=9).collect(),
            waist_mm: DEFAULT_WAIST_MM,
            trials: 1,
            cn2: 90e-13,
            sweep_cn2: vec![0.0, 30e-13, 60e-13, 90e-13],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographySection {
    pub azimuthal: i32,
    pub waist_mm: f64,
    pub cn2: f64,
    /// Qubit `α|+ℓ⟩ + β|−ℓ⟩` as `[re α, im α, re β, im β]`; normalized on use.
    pub state: [f64; 4],
}

impl Default for TomographySection {
    fn default() -> Self {
        Self { azimuthal: 3, waist_mm: DEFAULT_WAIST_MM, cn2: 80e-13, state: [FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotonSection {
    pub mean_counts: f64,
    /// Mean dark counts per pixel per exposure.
    pub background_rate: f64,
}

impl Default for PhotonSection {
    fn default() -> Self {
        Self { mean_counts: 1e6, background_rate: 1e-3 }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section against the preconditions of the code it feeds.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.spec(0.0)?;
        for (name, cn2) in [("correct.cn2", self.correct.cn2), ("channel.cn2", self.channel.cn2), ("tomography.cn2", self.tomography.cn2)]
            .into_iter()
            .chain(self.channel.sweep_cn2.iter().map(|&c| ("channel.sweep_cn2", c)))
        {
            if !(cn2.is_finite() && cn2 >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {cn2}")));
            }
        }
        if self.channel.sweep_cn2.is_empty() {
            return Err(Error::Config("channel.sweep_cn2 is empty".into()));
        }
        let cd = self.camera_distance();
        if !(cd.is_finite() && cd >= 0.0) {
            return Err(Error::Config(format!("camera distance must be finite and ≥ 0, got {cd}")));
        }
        self.classes()?;
        self.architecture()?;
        self.dataset_config(0).and_then(|d| d.validate()).map_err(config_err)?;
        self.train_config().validate().map_err(config_err)?;
        self.gdo_config().validate().map_err(config_err)?;
        probe_field(&grid, self.classifier.probe_waist_mm).map_err(config_err)?;
        self.correct_mode()?.field(&grid, self.correct.waist_mm).map_err(config_err)?;
        let alphabet = self.alphabet()?;
        alphabet.check_orthogonal(&grid, self.channel.waist_mm, 1e-4).map_err(config_err)?;
        if self.channel.trials == 0 {
            return Err(Error::Config("channel.trials must be at least 1".into()));
        }
        LgIndex::new(self.tomography.azimuthal, 0).map_err(config_err)?;
        if self.tomography.azimuthal == 0 {
            return Err(Error::Config("tomography.azimuthal must be non-zero".into()));
        }
        ModeSuperposition::balanced(self.tomography.azimuthal, 0, 0.0)
            .and_then(|m| m.field(&grid, self.tomography.waist_mm))
            .map_err(config_err)?;
        self.qubit()?;
        let p = &self.photon;
        if !(p.mean_counts > 0.0 && p.mean_counts.is_finite() && p.background_rate >= 0.0 && p.background_rate.is_finite()) {
            return Err(Error::Config("photon.mean_counts must be positive and background_rate ≥ 0".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.grid.pitch_mm).map_err(config_err)
    }

    pub fn spec(&self, cn2: f64) -> Result<TurbulenceSpec> {
        let t = &self.turbulence;
        let km = 5.92 / (t.inner_scale_pixels * self.grid.pitch_mm);
        TurbulenceSpec::new(t.wavelength_mm, t.distance_mm, cn2, 2.0 * std::f64::consts::PI / t.outer_scale_mm, km).map_err(config_err)
    }

    pub fn camera_distance(&self) -> f64 {
        self.turbulence.camera_distance_mm.unwrap_or(self.turbulence.distance_mm)
    }

    pub fn camera(&self) -> Result<TransferFunction> {
        TransferFunction::new(&self.grid()?, self.turbulence.wavelength_mm, self.camera_distance())
    }

    pub fn classes(&self) -> Result<TurbulenceClassSet> {
        TurbulenceClassSet::new(self.classifier.classes_cn2.clone()).map_err(config_err)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let c = &self.classifier;
        Architecture::new(c.input_size, c.channels, c.hidden, c.classes_cn2.len()).map_err(config_err)
    }

    pub fn dataset_config(&self, per_class: usize) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            grid: self.grid()?,
            spec: self.spec(0.0)?,
            camera_distance: self.camera_distance(),
            classes: self.classes()?,
            per_class,
            probe_waist: self.classifier.probe_waist_mm,
            input_size: self.classifier.input_size,
            master_seed: self.task_seed("dataset"),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: self.task_seed("train"),
            validation_fraction: t.validation_fraction,
            momentum: t.momentum,
            lr_decay: t.lr_decay,
        }
    }

    pub fn gdo_config(&self) -> GdoConfig {
        let g = &self.gdo;
        GdoConfig {
            max_iterations: g.max_iterations,
            step: g.step,
            backtracking: g.backtracking,
            tolerance: g.tolerance,
            min_step: g.min_step,
            ensemble_size: g.ensemble_size,
            preconditioner: g
                .smoothing
                .then_some(Preconditioner { corner_frequency: g.corner_frequency, exponent: g.smoothing_exponent }),
        }
    }

    pub fn correct_mode(&self) -> Result<ModeSuperposition> {
        ModeSuperposition::balanced(self.correct.azimuthal, self.correct.radial, 0.0).map_err(config_err)
    }

    pub fn alphabet(&self) -> Result<ModeAlphabet> {
        ModeAlphabet::balanced(self.channel.alphabet.iter().copied()).map_err(config_err)
    }

    pub fn channel_config(&self, cn2: f64) -> Result<ChannelConfig> {
        Ok(ChannelConfig {
            grid: self.grid()?,
            waist: self.channel.waist_mm,
            spec: self.spec(cn2)?,
            camera: self.camera()?,
            master_seed: self.task_seed("channel"),
        })
    }

    /// Normalized `(α, β)` of the tomography qubit.
    pub fn qubit(&self) -> Result<(Complex64, Complex64)> {
        let [ar, ai, br, bi] = self.tomography.state;
        let (a, b) = (Complex64::new(ar, ai), Complex64::new(br, bi));
        let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Config("tomography.state must be a non-zero finite vector".into()));
        }
        Ok((a / norm, b / norm))
    }

    pub fn task_seed(&self, task: &str) -> u64 {
        seed::derive(self.seed, task, 0)
    }
}
