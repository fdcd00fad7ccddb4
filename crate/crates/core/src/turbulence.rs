//! Kolmogorov phase screens by spectral filtering of complex white noise.
//!
//! A screen is `Re Σ_k M_k c_k e^{i k·x}` where `M_k` are independent standard
//! complex Gaussians and `c_k = sqrt(C·φ(k))·Δκ` samples the phase power
//! spectrum `φ` on the FFT lattice (`Δκ = 2π/(n·pitch)`). `C = (2π)^{5/3}`
//! converts the spectrum's cycles-per-length normalization to the angular
//! frequencies used here. The lattice cannot represent the `k^{-11/3}` peak
//! near the origin, so the cells next to it use the cell-averaged spectrum and
//! three levels of subharmonics (each a 3×3 lattice at a third of the previous
//! spacing) restore the missing low-order power.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::field::{Grid, PhaseMap};
use crate::io;
use crate::seed;

/// He-Ne wavelength (mm).
pub const DEFAULT_WAVELENGTH_MM: f64 = 633e-6;
/// Channel length (mm).
pub const DEFAULT_DISTANCE_MM: f64 = 1000.0;
/// Default outer scale (mm).
pub const DEFAULT_OUTER_SCALE_MM: f64 = 1000.0;

const SUBHARMONIC_LEVELS: usize = 3;
/// Lattice cells with both |index| at most this use cell-averaged weights.
const AVERAGED_CELLS: i64 = 4;
const CELL_SUBSAMPLES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TurbulenceSpec {
    /// Wavelength (mm).
    pub wavelength: f64,
    /// Propagation distance (mm).
    pub distance: f64,
    /// Refractive-index structure constant (mm^{-2/3}).
    pub cn2: f64,
    /// Outer-scale frequency (rad/mm).
    pub k0: f64,
    /// Inner-scale cutoff (rad/mm).
    pub km: f64,
}

impl TurbulenceSpec {
    pub fn new(wavelength: f64, distance: f64, cn2: f64, k0: f64, km: f64) -> Result<Self> {
        let spec = Self { wavelength, distance, cn2, k0, km };
        spec.validate()?;
        Ok(spec)
    }

    /// Defaults for a grid: 633 nm, 1 m path, 1 m outer scale and an inner
    /// scale of about three pixels.
    pub fn for_grid(grid: &Grid, cn2: f64) -> Self {
        Self {
            wavelength: DEFAULT_WAVELENGTH_MM,
            distance: DEFAULT_DISTANCE_MM,
            cn2,
            k0: 2.0 * PI / DEFAULT_OUTER_SCALE_MM,
            km: 5.92 / (3.0 * grid.pitch()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength", self.wavelength),
            ("distance", self.distance),
            ("k0", self.k0),
            ("km", self.km),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.cn2.is_finite() && self.cn2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("cn2 must be non-negative, got {}", self.cn2)));
        }
        Ok(())
    }

    pub fn with_cn2(&self, cn2: f64) -> Self {
        Self { cn2, ..*self }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn fried_parameter(&self) -> f64 {
        fried_parameter(self)
    }
}

/// `r₀ = (0.423 k² C_n² d)^{-3/5}`; `f64::INFINITY` when `cn2 == 0`, which
/// callers read as "no turbulence".
pub fn fried_parameter(spec: &TurbulenceSpec) -> f64 {
    if spec.cn2 == 0.0 {
        return f64::INFINITY;
    }
    let k = spec.wavenumber();
    (0.423 * k * k * spec.cn2 * spec.distance).powf(-0.6)
}

/// `0.023 r₀^{-5/3} (k² + k₀²)^{-11/6} exp(-k²/k_m²)` with `k` in rad/mm.
pub fn kolmogorov_spectrum(k: f64, spec: &TurbulenceSpec) -> f64 {
    let r0 = fried_parameter(spec);
    if r0.is_infinite() {
        return 0.0;
    }
    spectrum_k2(k * k, r0, spec)
}

fn spectrum_k2(k2: f64, r0: f64, spec: &TurbulenceSpec) -> f64 {
    0.023 * r0.powf(-5.0 / 3.0) * (k2 + spec.k0 * spec.k0).powf(-11.0 / 6.0) * (-k2 / (spec.km * spec.km)).exp()
}

/// `(2π)^{5/3}`: spectral density per (rad/mm)² from density per (cycle/mm)².
fn angular_normalization() -> f64 {
    (2.0 * PI).powf(5.0 / 3.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseScreen {
    grid: Grid,
    phase: Vec<f64>,
    spec: TurbulenceSpec,
    seed: u64,
}

impl PhaseScreen {
    pub fn new(grid: Grid, phase: Vec<f64>, spec: TurbulenceSpec, seed: u64) -> Result<Self> {
        if phase.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", grid.len()),
                got: format!("{} pixels", phase.len()),
            });
        }
        if phase.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("phase screen has non-finite entries".into()));
        }
        Ok(Self { grid, phase, spec, seed })
    }

    pub fn zeros(grid: Grid, spec: TurbulenceSpec) -> Self {
        Self { grid, phase: vec![0.0; grid.len()], spec, seed: 0 }
    }

    pub fn spec(&self) -> &TurbulenceSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn into_phase(self) -> Vec<f64> {
        self.phase
    }
}

impl PhaseMap for PhaseScreen {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn phase(&self) -> &[f64] {
        &self.phase
    }
}

/// One subharmonic level: three 1-D frequency tables per axis and nine weights.
#[derive(Debug)]
struct SubharmonicLevel {
    /// `e^{i·k_i·x}` for i ∈ {−1, 0, 1}, each of length n.
    phasors: [Vec<Complex64>; 3],
    /// Weight of neighbour (iy, ix), zero at the centre.
    weights: [[f64; 3]; 3],
}

/// Screen synthesizer with the spectral weights for one (grid, spec) cached.
///
/// Draw order per seed: n² complex normals (re then im, row-major), then
/// 8 complex normals per subharmonic level, row-major over the 3×3 neighbours
/// with the centre skipped.
pub struct ScreenGenerator {
    grid: Grid,
    spec: TurbulenceSpec,
    amplitude: Vec<f64>,
    subharmonics: Vec<SubharmonicLevel>,
    fft: Arc<Fft2>,
    zero: bool,
}

impl ScreenGenerator {
    pub fn new(grid: Grid, spec: TurbulenceSpec) -> Result<Self> {
        spec.validate()?;
        let n = grid.n();
        let r0 = fried_parameter(&spec);
        let zero = r0.is_infinite();
        let c = angular_normalization();
        let dk = grid.freq_spacing();
        let phi = |k2: f64| if zero { 0.0 } else { c * spectrum_k2(k2, r0, &spec) };
        let cell_mean = |cx: f64, cy: f64, width: f64| {
            let m = CELL_SUBSAMPLES;
            let mut acc = 0.0;
            for a in 0..m {
                let oy = ((a as f64 + 0.5) / m as f64 - 0.5) * width;
                for b in 0..m {
                    let ox = ((b as f64 + 0.5) / m as f64 - 0.5) * width;
                    acc += phi((cx + ox).powi(2) + (cy + oy).powi(2));
                }
            }
            acc / (m * m) as f64
        };

        let mut amplitude = vec![0.0; grid.len()];
        for r in 0..n {
            let iy = grid.freq_index(r);
            for col in 0..n {
                let ix = grid.freq_index(col);
                let (kx, ky) = (ix as f64 * dk, iy as f64 * dk);
                let power = if ix == 0 && iy == 0 {
                    0.0
                } else if ix.abs() <= AVERAGED_CELLS && iy.abs() <= AVERAGED_CELLS {
                    cell_mean(kx, ky, dk)
                } else {
                    phi(kx * kx + ky * ky)
                };
                amplitude[r * n + col] = power.sqrt() * dk;
            }
        }

        let coords: Vec<f64> = (0..n).map(|i| grid.coord(i)).collect();
        let subharmonics = (1..=SUBHARMONIC_LEVELS)
            .map(|level| {
                let dks = dk / 3f64.powi(level as i32);
                let phasors = [-1.0, 0.0, 1.0]
                    .map(|i: f64| coords.iter().map(|&x| Complex64::from_polar(1.0, i * dks * x)).collect());
                let mut weights = [[0.0; 3]; 3];
                for (a, row) in weights.iter_mut().enumerate() {
                    for (b, w) in row.iter_mut().enumerate() {
                        if a != 1 || b != 1 {
                            let (kx, ky) = ((b as f64 - 1.0) * dks, (a as f64 - 1.0) * dks);
                            *w = cell_mean(kx, ky, dks).sqrt() * dks;
                        }
                    }
                }
                SubharmonicLevel { phasors, weights }
            })
            .collect();

        Ok(Self { grid, spec, amplitude, subharmonics, fft: Fft2::cached(n), zero })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> &TurbulenceSpec {
        &self.spec
    }

    pub fn generate(&self, seed: u64) -> PhaseScreen {
        let n = self.grid.n();
        if self.zero {
            return PhaseScreen { grid: self.grid, phase: vec![0.0; n * n], spec: self.spec, seed };
        }
        let mut rng = seed::rng(seed);
        let mut normal = || -> Complex64 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        };
        let mut spectrum: Vec<Complex64> = self.amplitude.iter().map(|&a| normal() * a).collect();
        self.fft.inverse_unnormalized(&mut spectrum);
        let mut phase: Vec<f64> = spectrum.iter().map(|v| v.re).collect();

        for level in &self.subharmonics {
            // Σ_{a,b} m_ab w_ab e^{i kx_b x} e^{i ky_a y}, summed per row band
            let mut coeff = [[Complex64::new(0.0, 0.0); 3]; 3];
            for (a, row) in coeff.iter_mut().enumerate() {
                for (b, c) in row.iter_mut().enumerate() {
                    if a != 1 || b != 1 {
                        *c = normal() * level.weights[a][b];
                    }
                }
            }
            let bands: Vec<Vec<Complex64>> = coeff
                .iter()
                .map(|row| {
                    (0..n)
                        .map(|x| row.iter().zip(&level.phasors).map(|(c, p)| c * p[x]).sum())
                        .collect()
                })
                .collect();
            for r in 0..n {
                let out = &mut phase[r * n..(r + 1) * n];
                let ey = [level.phasors[0][r], level.phasors[1][r], level.phasors[2][r]];
                for (x, v) in out.iter_mut().enumerate() {
                    *v += (ey[0] * bands[0][x] + ey[1] * bands[1][x] + ey[2] * bands[2][x]).re;
                }
            }
        }
        PhaseScreen { grid: self.grid, phase, spec: self.spec, seed }
    }

    /// Screens for every seed, in seed order; output does not depend on the
    /// number of worker threads.
    pub fn generate_batch(&self, seeds: &[u64]) -> Vec<PhaseScreen> {
        seeds.par_iter().map(|&s| self.generate(s)).collect()
    }
}

/// Single screen; builds a throwaway generator.
pub fn generate_phase_screen(grid: &Grid, spec: &TurbulenceSpec, seed: u64) -> Result<PhaseScreen> {
    Ok(ScreenGenerator::new(*grid, *spec)?.generate(seed))
}

pub const MIN_STRUCTURE_SCREENS: usize = 100;

/// Empirical `D(r) = ⟨(Φ(x + r) − Φ(x))²⟩` averaged over screens, over every
/// in-grid pixel pair (no wrap-around) and over both axes. Separations are
/// rounded to whole pixels; the returned `r` is the rounded value.
pub fn structure_function(screens: &[PhaseScreen], separations: &[f64]) -> Result<Vec<(f64, f64)>> {
    if screens.len() < MIN_STRUCTURE_SCREENS {
        return Err(Error::InsufficientSamples { needed: MIN_STRUCTURE_SCREENS, got: screens.len() });
    }
    let grid = screens[0].grid;
    for s in screens {
        grid.ensure_same(&s.grid)?;
    }
    let n = grid.n();
    let offsets: Vec<usize> = separations
        .iter()
        .map(|&r| {
            let o = (r / grid.pitch()).round();
            if !(0.0..n as f64).contains(&o) {
                Err(Error::InvalidParameter(format!("separation {r} mm is outside the grid")))
            } else {
                Ok(o as usize)
            }
        })
        .collect::<Result<_>>()?;

    let per_screen: Vec<Vec<f64>> = screens
        .par_iter()
        .map(|s| {
            offsets
                .iter()
                .map(|&o| {
                    let mut acc = 0.0;
                    for r in 0..n {
                        let row = &s.phase[r * n..(r + 1) * n];
                        for c in 0..n - o {
                            acc += (row[c + o] - row[c]).powi(2);
                        }
                    }
                    for r in 0..n - o {
                        let (a, b) = (&s.phase[r * n..(r + 1) * n], &s.phase[(r + o) * n..(r + o + 1) * n]);
                        for c in 0..n {
                            acc += (b[c] - a[c]).powi(2);
                        }
                    }
                    acc / (2 * n * (n - o)) as f64
                })
                .collect()
        })
        .collect();

    Ok(offsets
        .iter()
        .enumerate()
        .map(|(j, &o)| {
            let mean = per_screen.iter().map(|v| v[j]).sum::<f64>() / screens.len() as f64;
            (o as f64 * grid.pitch(), mean)
        })
        .collect())
}

/// `6.88 (r/r₀)^{5/3}`.
pub fn kolmogorov_structure_function(r: f64, r0: f64) -> f64 {
    6.88 * (r / r0).powf(5.0 / 3.0)
}

const SCREEN_MAGIC: &[u8; 4] = b"LGPS";
const SCREEN_VERSION: u32 = 1;

/// Writes a screen batch:
///
/// ```text
/// "LGPS" | version u32 | n u32 | pitch f64 | wavelength f64 | distance f64
/// | cn2 f64 | k0 f64 | km f64 | count u64 | count × seed u64
/// | count × n² phase f32 (row-major)
/// ```
///
/// All fields little-endian. Screens must share grid and spec.
pub fn write_screen_batch(path: impl AsRef<Path>, screens: &[PhaseScreen]) -> Result<()> {
    let Some(first) = screens.first() else {
        return Err(Error::InvalidParameter("cannot write an empty screen batch".into()));
    };
    for s in screens {
        first.grid.ensure_same(&s.grid)?;
        if s.spec != first.spec {
            return Err(Error::InvalidParameter("screens in a batch must share one spec".into()));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SCREEN_MAGIC)?;
    io::write_u32(&mut w, SCREEN_VERSION)?;
    io::write_u32(&mut w, first.grid.n() as u32)?;
    io::write_f64(&mut w, first.grid.pitch())?;
    let sp = &first.spec;
    for v in [sp.wavelength, sp.distance, sp.cn2, sp.k0, sp.km] {
        io::write_f64(&mut w, v)?;
    }
    io::write_u64(&mut w, screens.len() as u64)?;
    for s in screens {
        io::write_u64(&mut w, s.seed)?;
    }
    for s in screens {
        io::write_f32s(&mut w, s.phase.iter().map(|&v| v as f32))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_screen_batch(path: impl AsRef<Path>) -> Result<Vec<PhaseScreen>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic: [u8; 4] = io::read_array(&mut r)?;
    if &magic != SCREEN_MAGIC {
        return Err(Error::Format("not a screen batch file".into()));
    }
    let version = io::read_u32(&mut r)?;
    if version != SCREEN_VERSION {
        return Err(Error::Format(format!("unsupported screen batch version {version}")));
    }
    let n = io::read_u32(&mut r)? as usize;
    let grid = Grid::new(n, io::read_f64(&mut r)?)?;
    let mut f = [0.0; 5];
    for v in &mut f {
        *v = io::read_f64(&mut r)?;
    }
    let spec = TurbulenceSpec::new(f[0], f[1], f[2], f[3], f[4])?;
    let count = io::read_u64(&mut r)? as usize;
    let seeds = (0..count).map(|_| io::read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
    let screens = seeds
        .into_iter()
        .map(|seed| {
            let phase = io::read_f32s(&mut r, n * n)?.into_iter().map(f64::from).collect();
            PhaseScreen::new(grid, phase, spec, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after screen data", rest.len())));
    }
    Ok(screens)
}
