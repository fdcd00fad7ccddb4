//! Turbulence-phase estimation by gradient descent on camera-intensity MSE,
//! and construction of the correction hologram from the estimate.
//!
//! Forward model for one observation: the known launched field `u` picks up
//! the unknown phase `θ` in the screen plane, propagates to the camera by `P`
//! and is recorded as `I = |P(u·e^{iθ})|² / Σ|u|²`, which sums to one because
//! `P` is unitary. With `L = mean((I − obs)²)` the gradient is
//!
//! ```text
//! g = 2(I − obs) / (n²·Σ|u|²),   w = P†(g·P(u·e^{iθ})),   ∂L/∂θ = −2·Im(conj(w)·u·e^{iθ})
//! ```
//!
//! Descent directions are optionally smoothed by a Kolmogorov-shaped spectral
//! filter, which lets the low-order modes (tip, tilt, defocus) that dominate
//! turbulence converge at the same rate as the fine structure.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::io;
use crate::field::{intensity, ComplexField, Grid, PhaseMap, RealImage};
use crate::optics::{propagate, propagate_inverse, TransferFunction};
use crate::turbulence::{PhaseScreen, ScreenGenerator, TurbulenceSpec};

/// Maps any real phase to its representative in (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let mut w = x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil();
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Phase (radians) stored wrapped to (−π, π].
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMask {
    grid: Grid,
    phase: Vec<f64>,
}

impl PhaseMask {
    pub fn new(grid: Grid, phase: Vec<f64>) -> Result<Self> {
        if phase.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", grid.len()),
                got: format!("{} pixels", phase.len()),
            });
        }
        if phase.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("phase mask has non-finite entries".into()));
        }
        Ok(Self { grid, phase: phase.into_iter().map(wrap_phase).collect() })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, phase: vec![0.0; grid.len()] }
    }

    pub fn from_map(map: &impl PhaseMap) -> Self {
        Self { grid: *map.grid(), phase: map.phase().iter().map(|&v| wrap_phase(v)).collect() }
    }

    pub fn negated(&self) -> Self {
        Self { grid: self.grid, phase: self.phase.iter().map(|&v| wrap_phase(-v)).collect() }
    }

    pub fn into_phase(self) -> Vec<f64> {
        self.phase
    }

    /// Little-endian file: `LGPM`, version, n, pitch, then n² f32 phases.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MASK_MAGIC)?;
        io::write_u32(&mut w, 1)?;
        io::write_u32(&mut w, self.grid.n() as u32)?;
        io::write_f64(&mut w, self.grid.pitch())?;
        io::write_f32s(&mut w, self.phase.iter().map(|&v| v as f32))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        if &io::read_array::<4>(&mut r)? != MASK_MAGIC {
            return Err(Error::Format("not a phase-mask file".into()));
        }
        let version = io::read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported mask version {version}")));
        }
        let n = io::read_u32(&mut r)? as usize;
        let grid = Grid::new(n, io::read_f64(&mut r)?).map_err(|e| Error::Format(e.to_string()))?;
        let phase = io::read_f32s(&mut r, n * n)?.into_iter().map(f64::from).collect();
        Self::new(grid, phase)
    }

    /// Grey-level rendering with −π black and π white.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_pgm16(path, self.grid.n(), self.grid.n(), &self.phase, -PI, PI)
    }
}

const MASK_MAGIC: &[u8; 4] = b"LGPM";

impl PhaseMap for PhaseMask {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn phase(&self) -> &[f64] {
        &self.phase
    }
}

/// Spectral smoothing `S(k) = ((k² + k_c²)/k_c²)^{-exponent}` applied to
/// gradients; `S(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preconditioner {
    /// Corner frequency `k_c` (rad/mm).
    pub corner_frequency: f64,
    pub exponent: f64,
}

impl Default for Preconditioner {
    fn default() -> Self {
        Self { corner_frequency: 0.5, exponent: 11.0 / 6.0 }
    }
}

impl Preconditioner {
    fn filter(&self, grid: &Grid) -> Vec<f64> {
        let n = grid.n();
        let kc2 = self.corner_frequency * self.corner_frequency;
        let mut out = Vec::with_capacity(grid.len());
        for r in 0..n {
            let ky = grid.freq(r);
            for c in 0..n {
                let kx = grid.freq(c);
                out.push(((kx * kx + ky * ky + kc2) / kc2).powf(-self.exponent));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GdoConfig {
    pub max_iterations: usize,
    /// Largest per-pixel phase change of a step (radians).
    pub step: f64,
    /// Step multiplier after a rejected trial, in (0, 1).
    pub backtracking: f64,
    /// Convergence when `MSE ≤ tolerance · mean(obs²)`.
    pub tolerance: f64,
    /// Search stops when the step falls below this.
    pub min_step: f64,
    /// Number of diversity frames in ensemble mode; 1 is single-image mode.
    pub ensemble_size: usize,
    pub preconditioner: Option<Preconditioner>,
}

impl Default for GdoConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step: 0.5,
            backtracking: 0.5,
            tolerance: 1e-8,
            min_step: 1e-6,
            ensemble_size: 1,
            preconditioner: Some(Preconditioner::default()),
        }
    }
}

impl GdoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.backtracking > 0.0 && self.backtracking < 1.0) {
            return bad(format!("backtracking must lie in (0, 1), got {}", self.backtracking));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if !(self.min_step > 0.0 && self.min_step <= self.step) {
            return bad(format!("min_step must lie in (0, step], got {}", self.min_step));
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1".into());
        }
        if let Some(p) = &self.preconditioner {
            if !(p.corner_frequency > 0.0 && p.exponent >= 0.0) {
                return bad("preconditioner needs a positive corner frequency and non-negative exponent".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub mse: f64,
    /// Step size that produced this entry (the initial step for entry 0).
    pub step: f64,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct CorrectionResult {
    /// Correction hologram phase built from the final estimate.
    pub mask: PhaseMask,
    /// Final turbulence-phase estimate.
    pub estimate: PhaseMask,
    pub final_mse: f64,
    /// `final_mse` divided by `mean(obs²)`.
    pub relative_mse: f64,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub duration: Duration,
    /// `false` when the loop stopped above tolerance.
    pub converged: bool,
}

impl CorrectionResult {
    /// One line per accepted iterate: iteration, MSE, step, seconds since start.
    pub fn trace_text(&self) -> String {
        let mut s = String::from("# iteration mse step elapsed_s\n");
        for e in &self.trace {
            let _ = writeln!(s, "{} {:e} {} {:.6}", e.iteration, e.mse, io::sig6(e.step), e.elapsed.as_secs_f64());
        }
        s
    }

    /// `<stem>.mask` (f32 binary), `<stem>_mask.pgm` and `<stem>_trace.txt`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        self.mask.save(dir.join(format!("{stem}.mask")))?;
        self.mask.write_pgm(dir.join(format!("{stem}_mask.pgm")))?;
        std::fs::write(dir.join(format!("{stem}_trace.txt")), self.trace_text())?;
        Ok(())
    }
}

/// Mean over pixels of the squared difference.
pub fn mse_cost(predicted: &RealImage, target: &RealImage) -> Result<f64> {
    predicted.grid().ensure_same(target.grid())?;
    let n = predicted.data().len() as f64;
    Ok(predicted.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// One recorded camera frame and the field launched to produce it.
#[derive(Clone, Debug)]
pub struct Observation {
    pub launched: ComplexField,
    /// Camera intensity, normalized to unit sum.
    pub observed: RealImage,
}

/// Intensity-matching objective over one or more observations sharing the
/// unknown screen-plane phase.
pub struct ForwardModel {
    grid: Grid,
    camera: TransferFunction,
    observations: Vec<Observation>,
    powers: Vec<f64>,
    fft: std::sync::Arc<Fft2>,
}

impl ForwardModel {
    pub fn new(camera: TransferFunction, observations: Vec<Observation>) -> Result<Self> {
        let Some(first) = observations.first() else {
            return Err(Error::InvalidParameter("at least one observation is required".into()));
        };
        let grid = *first.launched.grid();
        grid.ensure_same(camera.grid())?;
        let mut powers = Vec::with_capacity(observations.len());
        for o in &observations {
            grid.ensure_same(o.launched.grid())?;
            grid.ensure_same(o.observed.grid())?;
            let p: f64 = o.launched.data().iter().map(|v| v.norm_sqr()).sum();
            if p <= 0.0 {
                return Err(Error::ZeroImage);
            }
            powers.push(p);
        }
        Ok(Self { grid, camera, observations, powers, fft: Fft2::cached(grid.n()) })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn camera_field(&self, k: usize, theta: &[f64]) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = self.observations[k]
            .launched
            .data()
            .iter()
            .zip(theta)
            .map(|(u, &t)| u * Complex64::from_polar(1.0, t))
            .collect();
        self.fft.forward(&mut v);
        for (x, h) in v.iter_mut().zip(self.camera.values()) {
            *x *= h;
        }
        self.fft.inverse(&mut v);
        v
    }

    /// Predicted unit-sum camera intensity of observation `k`.
    pub fn predict(&self, k: usize, theta: &[f64]) -> RealImage {
        let p = self.powers[k];
        let data = self.camera_field(k, theta).iter().map(|f| f.norm_sqr() / p).collect();
        RealImage::new(self.grid, data).expect("grid-sized buffer")
    }

    fn mse_k(&self, k: usize, theta: &[f64]) -> f64 {
        let p = self.powers[k];
        let obs = self.observations[k].observed.data();
        let f = self.camera_field(k, theta);
        f.iter().zip(obs).map(|(f, o)| (f.norm_sqr() / p - o).powi(2)).sum::<f64>() / obs.len() as f64
    }

    /// Objective: MSE averaged over observations.
    pub fn cost(&self, theta: &[f64]) -> f64 {
        let per: Vec<f64> = (0..self.observations.len()).into_par_iter().map(|k| self.mse_k(k, theta)).collect();
        per.iter().sum::<f64>() / per.len() as f64
    }

    /// Objective and its exact gradient with respect to every phase pixel.
    pub fn cost_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let count = self.observations.len();
        let parts: Vec<(f64, Vec<f64>)> = (0..count)
            .into_par_iter()
            .map(|k| {
                let p = self.powers[k];
                let obs = self.observations[k].observed.data();
                let n2 = obs.len() as f64;
                let mut w = self.camera_field(k, theta);
                let mut cost = 0.0;
                for (f, o) in w.iter_mut().zip(obs) {
                    let diff = f.norm_sqr() / p - o;
                    cost += diff * diff;
                    *f *= 2.0 * diff / (n2 * p);
                }
                // adjoint of the camera propagation
                self.fft.forward(&mut w);
                for (x, h) in w.iter_mut().zip(self.camera.values()) {
                    *x *= h.conj();
                }
                self.fft.inverse(&mut w);
                let grad = w
                    .iter()
                    .zip(self.observations[k].launched.data())
                    .zip(theta)
                    .map(|((w, u), &t)| -2.0 * (w.conj() * u * Complex64::from_polar(1.0, t)).im)
                    .collect();
                (cost / n2, grad)
            })
            .collect();
        let scale = 1.0 / count as f64;
        let mut grad = vec![0.0; self.grid.len()];
        let mut cost = 0.0;
        for (c, g) in &parts {
            cost += c;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        grad.iter_mut().for_each(|v| *v *= scale);
        (cost * scale, grad)
    }

    /// `mean(obs²)` averaged over observations; the scale for relative MSE.
    pub fn reference_power(&self) -> f64 {
        let per = self.observations.iter().map(|o| {
            let d = o.observed.data();
            d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
        });
        per.sum::<f64>() / self.observations.len() as f64
    }

    /// Pixels where any launched field carries non-negligible amplitude.
    fn support(&self) -> Vec<bool> {
        let mut support = vec![false; self.grid.len()];
        for o in &self.observations {
            let d = o.launched.data();
            let peak = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (s, v) in support.iter_mut().zip(d) {
                *s |= v.norm() > 1e-3 * peak;
            }
        }
        support
    }
}

/// Outcome of [`descend`].
#[derive(Clone, Debug)]
pub struct Descent {
    pub theta: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
}

/// Backtracking gradient descent from `init`. Every accepted step strictly
/// lowers the cost; a rejected trial multiplies the step by `backtracking`
/// and an accepted one doubles it (capped at `cfg.step`).
pub fn descend(model: &ForwardModel, init: &[f64], cfg: &GdoConfig) -> Result<Descent> {
    cfg.validate()?;
    if init.len() != model.grid.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} pixels", model.grid.len()),
            got: format!("{} pixels", init.len()),
        });
    }
    let start = Instant::now();
    let target = cfg.tolerance * model.reference_power();
    let support = model.support();
    let filter = cfg.preconditioner.map(|p| p.filter(&model.grid));
    let fft = Fft2::cached(model.grid.n());

    let mut theta = init.to_vec();
    let (mut cost, mut grad) = model.cost_and_gradient(&theta);
    let mut trace = vec![TraceEntry { iteration: 0, mse: cost, step: cfg.step, elapsed: start.elapsed() }];
    let mut step = cfg.step;
    let mut converged = cost <= target;

    for iteration in 1..=cfg.max_iterations {
        if converged {
            break;
        }
        let direction = match &filter {
            Some(s) => {
                let mut buf: Vec<Complex64> = grad.iter().map(|&g| Complex64::new(g, 0.0)).collect();
                fft.forward(&mut buf);
                for (b, w) in buf.iter_mut().zip(s) {
                    *b *= w;
                }
                fft.inverse(&mut buf);
                buf.iter().map(|v| v.re).collect()
            }
            None => grad.clone(),
        };
        let peak = direction.iter().zip(&support).filter(|(_, &s)| s).map(|(d, _)| d.abs()).fold(0.0, f64::max);
        if peak == 0.0 {
            break;
        }
        let mut accepted = None;
        while step >= cfg.min_step {
            let trial: Vec<f64> = theta.iter().zip(&direction).map(|(t, d)| t - step * d / peak).collect();
            let c = model.cost(&trial);
            if c < cost {
                accepted = Some(trial);
                break;
            }
            step *= cfg.backtracking;
        }
        let Some(next) = accepted else { break };
        theta = next;
        (cost, grad) = model.cost_and_gradient(&theta);
        trace.push(TraceEntry { iteration, mse: cost, step, elapsed: start.elapsed() });
        converged = cost <= target;
        step = (step * 2.0).min(cfg.step);
    }
    Ok(Descent { theta, trace, converged })
}

/// Correction hologram for the ideal field `hologram` (the `G·e^{iΘ}` written
/// on the first modulator): relay it by `h`, remove the estimated turbulence,
/// relay back through `1/H` on the propagating band and keep the argument.
pub fn correction_mask_for_field(hologram: &ComplexField, h: &TransferFunction, estimate: &impl PhaseMap) -> Result<PhaseMask> {
    hologram.grid().ensure_same(estimate.grid())?;
    let relayed = propagate(hologram, h)?;
    let data = relayed
        .data()
        .iter()
        .zip(estimate.phase())
        .map(|(v, &p)| v * Complex64::from_polar(1.0, -p))
        .collect();
    let back = propagate_inverse(&ComplexField::new(*hologram.grid(), data)?, h)?;
    PhaseMask::new(*hologram.grid(), back.phase())
}

/// [`correction_mask_for_field`] for a mode superposition of the given waist.
pub fn build_correction_mask(
    modes: &crate::field::ModeSuperposition,
    waist: f64,
    h: &TransferFunction,
    estimate: &impl PhaseMap,
) -> Result<PhaseMask> {
    correction_mask_for_field(&modes.field(h.grid(), waist)?, h, estimate)
}

/// Field launched when `mask` replaces the hologram phase: `|G|·e^{i·mask}`.
pub fn launch_with_mask(hologram: &ComplexField, mask: &PhaseMask) -> Result<ComplexField> {
    hologram.grid().ensure_same(mask.grid())?;
    let data = hologram.data().iter().zip(mask.phase()).map(|(v, &p)| Complex64::from_polar(v.norm(), p)).collect();
    ComplexField::new(*hologram.grid(), data)
}

/// Phase the second modulator must add so that the hologram becomes `mask`:
/// `wrap(mask − arg G)`.
pub fn slm_correction(hologram: &ComplexField, mask: &PhaseMask) -> Result<PhaseMask> {
    hologram.grid().ensure_same(mask.grid())?;
    let phase = hologram.data().iter().zip(mask.phase()).map(|(v, &m)| m - v.arg()).collect();
    PhaseMask::new(*hologram.grid(), phase)
}

fn unit_sum(img: &RealImage) -> Result<RealImage> {
    img.normalized()
}

/// Single-image correction: estimate the screen that turns `hologram` into
/// the `observed` camera frame, then build the correction mask.
pub fn optimize_mask(
    observed: &RealImage,
    hologram: &ComplexField,
    camera: &TransferFunction,
    relay: &TransferFunction,
    init: &PhaseMask,
    cfg: &GdoConfig,
) -> Result<CorrectionResult> {
    let obs = Observation { launched: hologram.clone(), observed: unit_sum(observed)? };
    optimize_observations(vec![obs], hologram, camera, relay, init, cfg)
}

/// Shared tail of the single-image and ensemble modes.
pub fn optimize_observations(
    observations: Vec<Observation>,
    hologram: &ComplexField,
    camera: &TransferFunction,
    relay: &TransferFunction,
    init: &PhaseMask,
    cfg: &GdoConfig,
) -> Result<CorrectionResult> {
    let start = Instant::now();
    hologram.grid().ensure_same(init.grid())?;
    let model = ForwardModel::new(camera.clone(), observations)?;
    let descent = descend(&model, init.phase(), cfg)?;
    let estimate = PhaseMask::new(*hologram.grid(), descent.theta)?;
    let mask = correction_mask_for_field(hologram, relay, &estimate)?;
    let last = descent.trace.last().expect("trace starts with the initial cost");
    Ok(CorrectionResult {
        mask,
        estimate,
        final_mse: last.mse,
        relative_mse: last.mse / model.reference_power(),
        iterations: descent.trace.len() - 1,
        trace: descent.trace,
        duration: start.elapsed(),
        converged: descent.converged,
    })
}

/// Diversity phases for ensemble mode: independent screens at the predicted
/// strength, displayed on the correction modulator one frame at a time.
pub fn diversity_phases(grid: &Grid, spec: &TurbulenceSpec, count: usize, master_seed: u64) -> Result<Vec<PhaseScreen>> {
    let gen = ScreenGenerator::new(*grid, *spec)?;
    let seeds: Vec<u64> = (0..count as u64).map(|i| crate::seed::derive(master_seed, "diversity", i)).collect();
    Ok(gen.generate_batch(&seeds))
}

/// Ensemble-mode observation: the camera frame recorded while `diversity` is
/// added to the beam in the screen plane.
pub fn diversity_observation(
    hologram: &ComplexField,
    diversity: &impl PhaseMap,
    observed: &RealImage,
) -> Result<Observation> {
    let launched = crate::optics::apply_phase(hologram, diversity)?;
    Ok(Observation { launched, observed: unit_sum(observed)? })
}

/// Screen drawn at the predicted strength as a starting estimate; zero when
/// the prediction is zero turbulence.
pub fn initial_estimate(predicted_cn2: f64, grid: &Grid, template: &TurbulenceSpec, seed: u64) -> Result<PhaseMask> {
    if predicted_cn2 == 0.0 {
        return Ok(PhaseMask::zeros(*grid));
    }
    let screen = crate::turbulence::generate_phase_screen(grid, &template.with_cn2(predicted_cn2), seed)?;
    Ok(PhaseMask::from_map(&screen))
}

/// Camera frame of the ideal field through `screen`, unit-normalized.
pub fn observe(hologram: &ComplexField, screen: &impl PhaseMap, camera: &TransferFunction) -> Result<RealImage> {
    let distorted = crate::optics::apply_phase(hologram, screen)?;
    intensity(&propagate(&distorted, camera)?).normalized()
}
