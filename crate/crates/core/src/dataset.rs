//! Labelled probe-beam images for training the turbulence classifier.
//!
//! A wide Gaussian probe is sent through a screen at each class strength and
//! recorded on the camera; the frame is area-averaged to the classifier
//! resolution and scaled to a unit maximum.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::cnn::{LabeledImages, TurbulenceClassSet};
use crate::error::{Error, Result};
use crate::field::{lg_mode, ComplexField, Grid, LgIndex, RealImage};
use crate::gdo::observe;
use crate::io;
use crate::optics::TransferFunction;
use crate::seed;
use crate::turbulence::{PhaseScreen, ScreenGenerator, TurbulenceSpec};

pub const DEFAULT_PROBE_WAIST_MM: f64 = 3.5;
const MAGIC: &[u8; 4] = b"LGDS";

/// Fundamental Gaussian used as the strength probe.
pub fn probe_field(grid: &Grid, waist: f64) -> Result<ComplexField> {
    lg_mode(grid, LgIndex::new(0, 0)?, waist)
}

/// Classifier input from a camera frame: area-average to `size`² and scale to max 1.
pub fn prepare_image(frame: &RealImage, size: usize) -> Result<Vec<f64>> {
    let mut img = frame.downsample(size)?;
    let max = img.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::ZeroImage);
    }
    img.iter_mut().for_each(|v| *v /= max);
    Ok(img)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub grid: Grid,
    /// Strength template; its C_n² is replaced by each class value.
    pub spec: TurbulenceSpec,
    pub camera_distance: f64,
    pub classes: TurbulenceClassSet,
    pub per_class: usize,
    pub probe_waist: f64,
    pub input_size: usize,
    pub master_seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        probe_field(&self.grid, self.probe_waist)?;
        if self.input_size == 0 || self.grid.n() % self.input_size != 0 {
            return Err(Error::InvalidParameter(format!("grid size {} is not a multiple of input size {}", self.grid.n(), self.input_size)));
        }
        if !(self.camera_distance >= 0.0 && self.camera_distance.is_finite()) {
            return Err(Error::InvalidParameter("camera distance must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    /// Screen seed of sample `index` in class `class`.
    pub fn sample_seed(&self, class: usize, index: usize) -> u64 {
        seed::derive(self.master_seed, &format!("dataset-class-{class}"), index as u64)
    }
}

/// One record per image, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub class: usize,
    pub cn2: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: TurbulenceClassSet,
    pub input_size: usize,
    pub data: LabeledImages,
    pub manifest: Vec<ManifestEntry>,
}

/// Class-major generation; every image depends only on its own seed.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    generate_with_screens(cfg, |_, _| Ok(()))
}

/// Same as [`generate_dataset`], handing each class's screens to `sink`
/// (class index, screens) before they are dropped.
pub fn generate_with_screens(
    cfg: &DatasetConfig,
    mut sink: impl FnMut(usize, &[PhaseScreen]) -> Result<()>,
) -> Result<Dataset> {
    cfg.validate()?;
    let probe = probe_field(&cfg.grid, cfg.probe_waist)?;
    let camera = TransferFunction::new(&cfg.grid, cfg.spec.wavelength, cfg.camera_distance)?;
    let mut out = Dataset { classes: cfg.classes.clone(), input_size: cfg.input_size, data: LabeledImages::default(), manifest: Vec::new() };
    for (class, &cn2) in cfg.classes.values().iter().enumerate() {
        let gen = ScreenGenerator::new(cfg.grid, cfg.spec.with_cn2(cn2))?;
        let seeds: Vec<u64> = (0..cfg.per_class).map(|i| cfg.sample_seed(class, i)).collect();
        let screens = gen.generate_batch(&seeds);
        let images = screens
            .par_iter()
            .map(|s| prepare_image(&observe(&probe, s, &camera)?, cfg.input_size))
            .collect::<Result<Vec<_>>>()?;
        sink(class, &screens)?;
        for (img, seed) in images.into_iter().zip(seeds) {
            out.manifest.push(ManifestEntry { index: out.manifest.len(), class, cn2, seed });
            out.data.images.push(img);
            out.data.labels.push(class);
        }
    }
    Ok(out)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn manifest_csv(&self) -> String {
        let mut s = String::from("index,class,cn2,seed\n");
        for e in &self.manifest {
            let _ = writeln!(s, "{},{},{},{}", e.index, e.class, io::sig6(e.cn2), e.seed);
        }
        s
    }

    /// One 16-bit PGM per image under `dir/class<k>/<index>.pgm`.
    pub fn write_images(&self, dir: impl AsRef<Path>) -> Result<()> {
        let n = self.input_size;
        for (e, img) in self.manifest.iter().zip(&self.data.images) {
            let sub = dir.as_ref().join(format!("class{}", e.class));
            fs::create_dir_all(&sub)?;
            io::write_pgm16(sub.join(format!("{:05}.pgm", e.index)), n, n, img, 0.0, 1.0)?;
        }
        Ok(())
    }

    /// Binary file: `LGDS`, version, input size, classes, then per image its
    /// class (u32), seed (u64) and f32 pixels.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        io::write_u32(&mut w, 1)?;
        io::write_u32(&mut w, self.input_size as u32)?;
        io::write_u32(&mut w, self.classes.len() as u32)?;
        for &c in self.classes.values() {
            io::write_f64(&mut w, c)?;
        }
        io::write_u64(&mut w, self.len() as u64)?;
        for (e, img) in self.manifest.iter().zip(&self.data.images) {
            io::write_u32(&mut w, e.class as u32)?;
            io::write_u64(&mut w, e.seed)?;
            io::write_f32s(&mut w, img.iter().map(|&v| v as f32))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        if &io::read_array::<4>(&mut r)? != MAGIC {
            return Err(Error::Format("not a dataset file".into()));
        }
        let version = io::read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let input_size = io::read_u32(&mut r)? as usize;
        let k = io::read_u32(&mut r)? as usize;
        let values = (0..k).map(|_| io::read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let classes = TurbulenceClassSet::new(values).map_err(|e| Error::Format(e.to_string()))?;
        let count = io::read_u64(&mut r)? as usize;
        let mut out = Dataset { classes, input_size, data: LabeledImages::default(), manifest: Vec::with_capacity(count) };
        for index in 0..count {
            let class = io::read_u32(&mut r)? as usize;
            if class >= k {
                return Err(Error::Format(format!("image {index} has class {class} of {k}")));
            }
            let seed = io::read_u64(&mut r)?;
            let img = io::read_f32s(&mut r, input_size * input_size)?.into_iter().map(f64::from).collect();
            out.manifest.push(ManifestEntry { index, class, cn2: out.classes.values()[class], seed });
            out.data.images.push(img);
            out.data.labels.push(class);
        }
        if r.read(&mut [0u8])? != 0 {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        Ok(out)
    }
}
