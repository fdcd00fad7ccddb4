//! Convolutional turbulence-strength classifier with hand-written backpropagation.
//!
//! Layout: conv 5×5 (C maps, valid, ReLU) → 2×2 max-pool → dense (ReLU) → dense → softmax.
//! Generic over the float type: `f64` for gradient checks, `f32` for training.

use std::fmt::{Debug, Write as _};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::iter::Sum;
use std::ops::AddAssign;
use std::path::Path;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io;
use crate::seed;

pub const KERNEL: usize = 5;
const MAGIC: &[u8; 4] = b"LGCN";
const VERSION: u32 = 1;
/// Samples per gradient work unit; fixes the summation order independent of thread count.
const CHUNK: usize = 8;

pub trait Scalar: Float + Send + Sync + Debug + Default + Sum + AddAssign + 'static {}
impl<T: Float + Send + Sync + Debug + Default + Sum + AddAssign + 'static> Scalar for T {}

fn cast<T: Scalar>(x: f64) -> T {
    T::from(x).expect("finite value fits the float type")
}

/// Layer sizes. The kernel is always 5×5 and pooling always 2×2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_size: usize,
    pub channels: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn new(input_size: usize, channels: usize, hidden: usize, classes: usize) -> Result<Self> {
        let a = Self { input_size, channels, hidden, classes };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < KERNEL + 1 || (self.input_size - KERNEL + 1) % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "input size {} must exceed {KERNEL} and leave an even conv output",
                self.input_size
            )));
        }
        if self.channels == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(Error::InvalidParameter("need ≥ 1 channel, ≥ 1 hidden unit and ≥ 2 classes".into()));
        }
        Ok(())
    }

    pub fn conv_size(&self) -> usize {
        self.input_size - KERNEL + 1
    }

    pub fn pool_size(&self) -> usize {
        self.conv_size() / 2
    }

    pub fn flat_size(&self) -> usize {
        self.channels * self.pool_size().pow(2)
    }

    /// Tensor lengths in storage order: conv weights, conv biases, dense weights,
    /// dense biases, output weights, output biases.
    pub fn tensor_lens(&self) -> [usize; 6] {
        [
            self.channels * KERNEL * KERNEL,
            self.channels,
            self.hidden * self.flat_size(),
            self.hidden,
            self.classes * self.hidden,
            self.classes,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensor_lens().iter().sum()
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self { input_size: 64, channels: 8, hidden: 100, classes: 5 }
    }
}

/// Strictly increasing C_n² values, one per output class.
#[derive(Clone, Debug, PartialEq)]
pub struct TurbulenceClassSet {
    values: Vec<f64>,
}

impl TurbulenceClassSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter("need at least 2 turbulence classes".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(format!("class values must be finite, ≥ 0 and strictly increasing: {values:?}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for TurbulenceClassSet {
    fn default() -> Self {
        Self { values: [10.0, 30.0, 50.0, 70.0, 90.0].iter().map(|v| v * 1e-13).collect() }
    }
}

/// `z = (ln(x / mean(x) + floor) − offset) / scale`, with offset and scale
/// fitted on the training images. Dividing by the mean makes the input
/// invariant to overall brightness; the log compresses bright speckle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputTransform {
    pub floor: f64,
    pub offset: f64,
    pub scale: f64,
}

impl Default for InputTransform {
    fn default() -> Self {
        Self { floor: 0.05, offset: 0.0, scale: 1.0 }
    }
}

impl InputTransform {
    fn log_image(&self, image: &[f64]) -> Vec<f64> {
        let mean = image.iter().sum::<f64>() / image.len() as f64;
        let inv = if mean > 0.0 { 1.0 / mean } else { 0.0 };
        image.iter().map(|&v| (v * inv + self.floor).ln()).collect()
    }

    pub fn apply<T: Scalar>(&self, image: &[f64]) -> Vec<T> {
        self.log_image(image).into_iter().map(|v| cast((v - self.offset) / self.scale)).collect()
    }

    /// Offset and scale from the pooled log pixels of `images`.
    pub fn fitted<'a>(floor: f64, images: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let base = Self { floor, offset: 0.0, scale: 1.0 };
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for img in images {
            for v in base.log_image(img) {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return base;
        }
        let mean = sum / n as f64;
        let sd = (sq / n as f64 - mean * mean).max(0.0).sqrt();
        Self { floor, offset: mean, scale: if sd > 1e-12 { sd } else { 1.0 } }
    }
}

/// One tensor per layer, also used for gradients and momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub conv_w: Vec<T>,
    pub conv_b: Vec<T>,
    pub dense_w: Vec<T>,
    pub dense_b: Vec<T>,
    pub out_w: Vec<T>,
    pub out_b: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub const NAMES: [&'static str; 6] = ["conv_w", "conv_b", "dense_w", "dense_b", "out_w", "out_b"];

    pub fn zeros(arch: &Architecture) -> Self {
        let l = arch.tensor_lens();
        Self {
            conv_w: vec![T::zero(); l[0]],
            conv_b: vec![T::zero(); l[1]],
            dense_w: vec![T::zero(); l[2]],
            dense_b: vec![T::zero(); l[3]],
            out_w: vec![T::zero(); l[4]],
            out_b: vec![T::zero(); l[5]],
        }
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [&self.conv_w, &self.conv_b, &self.dense_w, &self.dense_b, &self.out_w, &self.out_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 6] {
        [&mut self.conv_w, &mut self.conv_b, &mut self.dense_w, &mut self.dense_b, &mut self.out_w, &mut self.out_b]
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = *x * s);
        }
    }

    fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Params<U> {
        let m = |v: &Vec<T>| v.iter().map(|&x| f(x)).collect();
        Params {
            conv_w: m(&self.conv_w),
            conv_b: m(&self.conv_b),
            dense_w: m(&self.dense_w),
            dense_b: m(&self.dense_b),
            out_w: m(&self.out_w),
            out_b: m(&self.out_b),
        }
    }
}

/// Intermediate activations of one sample, kept for the backward pass.
struct Activations<T> {
    input: Vec<T>,
    conv: Vec<T>,
    pooled: Vec<T>,
    argmax: Vec<u32>,
    hidden: Vec<T>,
    logits: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub cn2: f64,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

/// First index of the maximum, so ties go to the lower (weaker) class.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax, evaluated in f64.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel<T> {
    arch: Architecture,
    classes: TurbulenceClassSet,
    transform: InputTransform,
    params: Params<T>,
    steps: u64,
}

impl<T: Scalar> CnnModel<T> {
    /// Fan-in scaled uniform initialization, `U(−1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn new(arch: Architecture, classes: TurbulenceClassSet, seed: u64) -> Result<Self> {
        arch.validate()?;
        if arch.classes != classes.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} output classes", arch.classes),
                got: format!("{} class values", classes.len()),
            });
        }
        let mut rng = seed::rng(seed::derive(seed, "cnn-init", 0));
        let mut params = Params::<T>::zeros(&arch);
        let fan_in = [KERNEL * KERNEL, KERNEL * KERNEL, arch.flat_size(), arch.flat_size(), arch.hidden, arch.hidden];
        for (t, fan) in params.tensors_mut().into_iter().zip(fan_in) {
            let bound = 1.0 / (fan as f64).sqrt();
            t.iter_mut().for_each(|x| *x = cast(rng.random_range(-bound..bound)));
        }
        Ok(Self { arch, classes, transform: InputTransform::default(), params, steps: 0 })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn classes(&self) -> &TurbulenceClassSet {
        &self.classes
    }

    pub fn transform(&self) -> &InputTransform {
        &self.transform
    }

    pub fn set_transform(&mut self, t: InputTransform) {
        self.transform = t;
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    /// Optimizer updates applied so far; zero means the weights are still the initialization.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_trained(&self) -> bool {
        self.steps > 0
    }

    /// Same model in another float type.
    pub fn cast<U: Scalar>(&self) -> CnnModel<U> {
        CnnModel {
            arch: self.arch,
            classes: self.classes.clone(),
            transform: self.transform,
            params: self.params.map(|x| cast(x.to_f64().expect("finite"))),
            steps: self.steps,
        }
    }

    fn check_input(&self, image: &[f64]) -> Result<()> {
        let n = self.arch.input_size;
        if image.len() != n * n {
            return Err(Error::ShapeMismatch { expected: format!("{n}x{n} image"), got: format!("{} pixels", image.len()) });
        }
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("image contains non-finite pixels".into()));
        }
        Ok(())
    }

    fn activations(&self, input: Vec<T>) -> Activations<T> {
        let a = &self.arch;
        let (s, o, p, c) = (a.input_size, a.conv_size(), a.pool_size(), a.channels);
        let w = &self.params;

        let mut conv = vec![T::zero(); c * o * o];
        for ch in 0..c {
            let out = &mut conv[ch * o * o..(ch + 1) * o * o];
            out.iter_mut().for_each(|v| *v = w.conv_b[ch]);
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let k = w.conv_w[(ch * KERNEL + ky) * KERNEL + kx];
                    for oy in 0..o {
                        let src = &input[(oy + ky) * s + kx..(oy + ky) * s + kx + o];
                        for (d, &x) in out[oy * o..(oy + 1) * o].iter_mut().zip(src) {
                            *d += k * x;
                        }
                    }
                }
            }
            out.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }

        let mut pooled = vec![T::zero(); c * p * p];
        let mut argmax = vec![0u32; c * p * p];
        for ch in 0..c {
            for py in 0..p {
                for px in 0..p {
                    let base = ch * o * o + 2 * py * o + 2 * px;
                    let mut best = base;
                    for idx in [base + 1, base + o, base + o + 1] {
                        if conv[idx] > conv[best] {
                            best = idx;
                        }
                    }
                    pooled[(ch * p + py) * p + px] = conv[best];
                    argmax[(ch * p + py) * p + px] = best as u32;
                }
            }
        }

        let f = a.flat_size();
        let hidden: Vec<T> = (0..a.hidden)
            .map(|j| {
                let row = &w.dense_w[j * f..(j + 1) * f];
                (dot(row, &pooled) + w.dense_b[j]).max(T::zero())
            })
            .collect();
        let logits = (0..a.classes).map(|k| dot(&w.out_w[k * a.hidden..(k + 1) * a.hidden], &hidden) + w.out_b[k]).collect();
        Activations { input, conv, pooled, argmax, hidden, logits }
    }

    /// Output-layer logits for a `[0, 1]`-scaled image at the model resolution.
    pub fn logits(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let act = self.activations(self.transform.apply(image));
        Ok(act.logits.iter().map(|v| v.to_f64().expect("finite")).collect())
    }

    /// Class probabilities.
    pub fn forward(&self, image: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(image)?))
    }

    /// Adds this sample's loss gradient, scaled by `weight`, into `grad`; returns
    /// (cross-entropy, correct?).
    fn accumulate(&self, input: Vec<T>, label: usize, weight: T, grad: &mut Params<T>) -> (f64, bool) {
        let a = &self.arch;
        let (s, o, c, h, f) = (a.input_size, a.conv_size(), a.channels, a.hidden, a.flat_size());
        let act = self.activations(input);
        let logits: Vec<f64> = act.logits.iter().map(|v| v.to_f64().expect("finite")).collect();
        let probs = softmax(&logits);
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        let correct = argmax(&logits) == label;

        let dlogits: Vec<T> = probs
            .iter()
            .enumerate()
            .map(|(k, &pk)| cast::<T>(pk - if k == label { 1.0 } else { 0.0 }) * weight)
            .collect();
        let mut dhidden = vec![T::zero(); h];
        for (k, &dk) in dlogits.iter().enumerate() {
            grad.out_b[k] += dk;
            let row = &self.params.out_w[k * h..(k + 1) * h];
            for j in 0..h {
                grad.out_w[k * h + j] += dk * act.hidden[j];
                dhidden[j] += dk * row[j];
            }
        }
        let mut dpooled = vec![T::zero(); f];
        for j in 0..h {
            // ReLU gate
            if act.hidden[j] <= T::zero() {
                continue;
            }
            let dj = dhidden[j];
            grad.dense_b[j] += dj;
            let g = &mut grad.dense_w[j * f..(j + 1) * f];
            for (gi, &x) in g.iter_mut().zip(&act.pooled) {
                *gi += dj * x;
            }
            let row = &self.params.dense_w[j * f..(j + 1) * f];
            for (d, &wv) in dpooled.iter_mut().zip(row) {
                *d += dj * wv;
            }
        }
        let mut dconv = vec![T::zero(); c * o * o];
        for (i, &d) in dpooled.iter().enumerate() {
            let idx = act.argmax[i] as usize;
            if act.conv[idx] > T::zero() {
                dconv[idx] = d;
            }
        }
        for ch in 0..c {
            let dmap = &dconv[ch * o * o..(ch + 1) * o * o];
            grad.conv_b[ch] += dmap.iter().copied().sum();
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let mut acc = T::zero();
                    for oy in 0..o {
                        let src = &act.input[(oy + ky) * s + kx..(oy + ky) * s + kx + o];
                        acc += dot(&dmap[oy * o..(oy + 1) * o], src);
                    }
                    grad.conv_w[(ch * KERNEL + ky) * KERNEL + kx] += acc;
                }
            }
        }
        (loss, correct)
    }

    /// Gradient of the batch-mean loss over preprocessed inputs; also returns
    /// the mean loss and the number of correct argmax predictions.
    fn batch_gradient(&self, inputs: &[&[T]], labels: &[usize]) -> (f64, usize, Params<T>) {
        let weight = cast::<T>(1.0 / inputs.len() as f64);
        let partials: Vec<(f64, usize, Params<T>)> = inputs
            .par_chunks(CHUNK)
            .zip(labels.par_chunks(CHUNK))
            .map(|(xs, ys)| {
                let mut g = Params::zeros(&self.arch);
                let (mut loss, mut correct) = (0.0, 0);
                for (x, &y) in xs.iter().zip(ys) {
                    let (l, ok) = self.accumulate(x.to_vec(), y, weight, &mut g);
                    loss += l;
                    correct += ok as usize;
                }
                (loss, correct, g)
            })
            .collect();
        let mut iter = partials.into_iter();
        let (mut loss, mut correct, mut grad) = iter.next().expect("non-empty batch");
        for (l, c, g) in iter {
            loss += l;
            correct += c;
            grad.add_assign(&g);
        }
        (loss / inputs.len() as f64, correct, grad)
    }

    /// Mean cross-entropy and its exact gradient for every parameter tensor.
    pub fn loss_and_gradient(&self, batch: &[(&[f64], usize)]) -> Result<(f64, Params<T>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for (img, label) in batch {
            self.check_input(img)?;
            if *label >= self.arch.classes {
                return Err(Error::InvalidParameter(format!("label {label} out of range")));
            }
        }
        let inputs: Vec<Vec<T>> = batch.iter().map(|(img, _)| self.transform.apply(img)).collect();
        let refs: Vec<&[T]> = inputs.iter().map(|v| v.as_slice()).collect();
        let labels: Vec<usize> = batch.iter().map(|b| b.1).collect();
        let (loss, _, grad) = self.batch_gradient(&refs, &labels);
        Ok((loss, grad))
    }

    /// Mean loss and accuracy over preprocessed inputs.
    fn evaluate_inputs(&self, inputs: &[Vec<T>], labels: &[usize]) -> (f64, f64) {
        let per: Vec<(f64, bool)> = inputs
            .par_iter()
            .zip(labels)
            .map(|(x, &y)| {
                let act = self.activations(x.clone());
                let logits: Vec<f64> = act.logits.iter().map(|v| v.to_f64().expect("finite")).collect();
                (-softmax(&logits)[y].max(f64::MIN_POSITIVE).ln(), argmax(&logits) == y)
            })
            .collect();
        let n = per.len().max(1) as f64;
        (per.iter().map(|p| p.0).sum::<f64>() / n, per.iter().filter(|p| p.1).count() as f64 / n)
    }

    /// Mean loss and accuracy over labelled images.
    pub fn evaluate(&self, images: &[Vec<f64>], labels: &[usize]) -> Result<(f64, f64)> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::EmptyBatch);
        }
        for img in images {
            self.check_input(img)?;
        }
        let inputs: Vec<Vec<T>> = images.iter().map(|i| self.transform.apply(i)).collect();
        Ok(self.evaluate_inputs(&inputs, labels))
    }

    /// Most probable class. Fails with [`Error::UntrainedModel`] while the
    /// weights are still at their initialization.
    pub fn predict_cn2(&self, image: &[f64]) -> Result<Prediction> {
        if !self.is_trained() {
            return Err(Error::UntrainedModel);
        }
        let probabilities = self.forward(image)?;
        Ok(prediction(&self.classes, probabilities))
    }

    pub fn describe(&self) -> String {
        let a = &self.arch;
        let o = a.conv_size();
        let p = a.pool_size();
        let lens = a.tensor_lens();
        let mut s = String::new();
        let _ = writeln!(s, "input      {0}x{0}x1  ln(x/mean + {1}) standardized (offset {2}, scale {3})",
            a.input_size, io::sig6(self.transform.floor), io::sig6(self.transform.offset), io::sig6(self.transform.scale));
        let _ = writeln!(s, "conv       {KERNEL}x{KERNEL}x{0} valid, relu -> {o}x{o}x{0}  ({1} params)", a.channels, lens[0] + lens[1]);
        let _ = writeln!(s, "max-pool   2x2 -> {p}x{p}x{}", a.channels);
        let _ = writeln!(s, "dense      {} -> {}, relu  ({} params)", a.flat_size(), a.hidden, lens[2] + lens[3]);
        let _ = writeln!(s, "output     {} -> {}, softmax  ({} params)", a.hidden, a.classes, lens[4] + lens[5]);
        let cls: Vec<String> = self.classes.values().iter().map(|v| io::sig6(*v)).collect();
        let _ = writeln!(s, "classes    cn2 = [{}] mm^-2/3", cls.join(", "));
        let _ = writeln!(s, "parameters {}", a.param_count());
        let _ = write!(s, "updates    {}", self.steps);
        s
    }

    /// Versioned little-endian model file; tensors are stored as f32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        io::write_u32(&mut w, VERSION)?;
        let a = &self.arch;
        for v in [a.input_size, KERNEL, a.channels, a.hidden, a.classes] {
            io::write_u32(&mut w, v as u32)?;
        }
        for &v in self.classes.values() {
            io::write_f64(&mut w, v)?;
        }
        for v in [self.transform.floor, self.transform.offset, self.transform.scale] {
            io::write_f64(&mut w, v)?;
        }
        io::write_u64(&mut w, self.steps)?;
        for t in self.params.tensors() {
            io::write_f32s(&mut w, t.iter().map(|x| x.to_f32().expect("finite")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let magic: [u8; 4] = io::read_array(&mut r)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        let version = io::read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = io::read_u32(&mut r)? as usize;
        }
        if dims[1] != KERNEL {
            return Err(Error::Format(format!("unsupported kernel size {}", dims[1])));
        }
        let arch = Architecture::new(dims[0], dims[2], dims[3], dims[4]).map_err(|e| Error::Format(e.to_string()))?;
        let classes = (0..arch.classes).map(|_| io::read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let classes = TurbulenceClassSet::new(classes).map_err(|e| Error::Format(e.to_string()))?;
        let transform = InputTransform { floor: io::read_f64(&mut r)?, offset: io::read_f64(&mut r)?, scale: io::read_f64(&mut r)? };
        let steps = io::read_u64(&mut r)?;
        let mut params = Params::<T>::zeros(&arch);
        for (t, len) in params.tensors_mut().into_iter().zip(arch.tensor_lens()) {
            *t = io::read_f32s(&mut r, len)?.into_iter().map(|x| cast(x as f64)).collect();
        }
        if r.read(&mut [0u8])? != 0 {
            return Err(Error::Format("trailing bytes after model tensors".into()));
        }
        if params.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::Format("non-finite weights".into()));
        }
        Ok(Self { arch, classes, transform, params, steps })
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // four accumulators let the compiler vectorize without reassociating
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Argmax class, its C_n² and its probability.
pub fn prediction(classes: &TurbulenceClassSet, probabilities: Vec<f64>) -> Prediction {
    let index = argmax(&probabilities);
    Prediction { index, cn2: classes.values()[index], confidence: probabilities[index], probabilities }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Heavy-ball coefficient; 0 is plain mini-batch gradient descent.
    pub momentum: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 32, epochs: 40, seed: 0, validation_fraction: 0.2, momentum: 0.0, lr_decay: 1.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning-rate decay must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Labelled images at the model resolution, pixel values in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledImages {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Running means over the epoch's mini-batches, taken before each update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn final_validation_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.validation_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,learning_rate,train_loss,train_accuracy,validation_loss,validation_accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch,
                io::sig6(e.learning_rate),
                io::sig6(e.train_loss),
                io::sig6(e.train_accuracy),
                io::sig6(e.validation_loss),
                io::sig6(e.validation_accuracy)
            );
        }
        s
    }
}

pub const MIN_SAMPLES_PER_CLASS: usize = 10;

/// Shuffled train/validation index split, deterministic in the seed.
pub fn split_indices(len: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut seed::rng(seed::derive(seed, "cnn-split", 0)));
    let n_val = ((len as f64 * validation_fraction).round() as usize).clamp(1, len.saturating_sub(1));
    let val = idx.split_off(len - n_val);
    (idx, val)
}

/// Mini-batch gradient descent with optional momentum and per-epoch decay.
/// If the model has never been updated, its input transform is first fitted
/// to the training split.
pub fn train<T: Scalar>(mut model: CnnModel<T>, data: &LabeledImages, cfg: &TrainConfig) -> Result<(CnnModel<T>, History)> {
    cfg.validate()?;
    let k = model.arch.classes;
    if data.images.len() != data.labels.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} labels", data.images.len()), got: data.labels.len().to_string() });
    }
    for class in 0..k {
        let got = data.labels.iter().filter(|&&l| l == class).count();
        if got < MIN_SAMPLES_PER_CLASS {
            return Err(Error::InsufficientData { class, got, needed: MIN_SAMPLES_PER_CLASS });
        }
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range for {k} classes")));
    }
    for img in &data.images {
        model.check_input(img)?;
    }
    let (train_idx, val_idx) = split_indices(data.images.len(), cfg.validation_fraction, cfg.seed);
    if model.steps == 0 {
        model.transform = InputTransform::fitted(model.transform.floor, train_idx.iter().map(|&i| data.images[i].as_slice()));
    }
    let prep = |idx: &[usize]| -> (Vec<Vec<T>>, Vec<usize>) {
        (idx.iter().map(|&i| model.transform.apply(&data.images[i])).collect(), idx.iter().map(|&i| data.labels[i]).collect())
    };
    let (train_x, train_y) = prep(&train_idx);
    let (val_x, val_y) = prep(&val_idx);

    let mut velocity = Params::zeros(&model.arch);
    let momentum = cast::<T>(cfg.momentum);
    let mut lr = cfg.learning_rate;
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, "cnn-epoch", epoch as u64)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[T]> = batch.iter().map(|&i| train_x[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let (loss, ok, mut grad) = model.batch_gradient(&xs, &ys);
            loss_sum += loss * batch.len() as f64;
            correct += ok;
            grad.scale(cast(-lr));
            // v ← μv − η∇, θ ← θ + v
            velocity.scale(momentum);
            velocity.add_assign(&grad);
            model.params.add_assign(&velocity);
            model.steps += 1;
        }
        let (validation_loss, validation_accuracy) = model.evaluate_inputs(&val_x, &val_y);
        history.epochs.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / train_x.len() as f64,
            train_accuracy: correct as f64 / train_x.len() as f64,
            validation_loss,
            validation_accuracy,
        });
        lr *= cfg.lr_decay;
    }
    if model.params.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidParameter("training diverged to non-finite weights; lower the learning rate".into()));
    }
    Ok((model, history))
}
