//! Angular-spectrum propagation, phase-only modulation and photon counting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Poisson;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::field::{intensity, ComplexField, Grid, PhaseMap, RealImage};
use crate::io;
use crate::seed;

/// Free-space kernel `exp(i·d·(sqrt(k² − kx² − ky²) − k))` in FFT order.
/// The constant carrier `e^{ikd}` is left out: it is a global phase, and at
/// `kd ~ 10⁷` rad it would cost about 1e-9 rad of rounding per sample.
/// Evanescent components are zero, so `|H| ∈ {0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferFunction {
    grid: Grid,
    values: Vec<Complex64>,
}

impl TransferFunction {
    pub fn new(grid: &Grid, wavelength: f64, distance: f64) -> Result<Self> {
        transfer_function(grid, wavelength, distance)
    }

    /// All-pass kernel (an ideal imaging relay).
    pub fn identity(grid: &Grid) -> Self {
        Self { grid: *grid, values: vec![Complex64::new(1.0, 0.0); grid.len()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Pixel-wise product, i.e. propagation through both distances in turn.
    pub fn then(&self, other: &TransferFunction) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect() })
    }
}

pub fn transfer_function(grid: &Grid, wavelength: f64, distance: f64) -> Result<TransferFunction> {
    if !(distance.is_finite() && distance >= 0.0) {
        return Err(Error::InvalidParameter(format!("distance must be non-negative, got {distance}")));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::InvalidParameter(format!("wavelength must be positive, got {wavelength}")));
    }
    let n = grid.n();
    let k = 2.0 * std::f64::consts::PI / wavelength;
    let mut values = Vec::with_capacity(grid.len());
    for r in 0..n {
        let ky = grid.freq(r);
        for c in 0..n {
            let kx = grid.freq(c);
            let kt2 = kx * kx + ky * ky;
            let kz2 = k * k - kt2;
            values.push(if kz2 > 0.0 {
                // kz − k without cancellation
                Complex64::from_polar(1.0, -distance * kt2 / (k + kz2.sqrt()))
            } else {
                Complex64::new(0.0, 0.0)
            });
        }
    }
    Ok(TransferFunction { grid: *grid, values })
}

fn filter(f: &ComplexField, h: &TransferFunction, conjugate: bool) -> Result<ComplexField> {
    f.grid().ensure_same(&h.grid)?;
    let fft = Fft2::cached(f.grid().n());
    let mut data = f.data().to_vec();
    fft.forward(&mut data);
    for (v, k) in data.iter_mut().zip(&h.values) {
        *v *= if conjugate { k.conj() } else { *k };
    }
    fft.inverse(&mut data);
    ComplexField::new(*f.grid(), data)
}

/// `F⁻¹(F(f)·H)`.
pub fn propagate(f: &ComplexField, h: &TransferFunction) -> Result<ComplexField> {
    filter(f, h, false)
}

/// `F⁻¹(F(f)/H)` on the propagating band and zero elsewhere. Since `|H| = 1`
/// there, this is the adjoint of [`propagate`].
pub fn propagate_inverse(f: &ComplexField, h: &TransferFunction) -> Result<ComplexField> {
    filter(f, h, true)
}

/// `f·exp(i·phase)` pixel-wise.
pub fn apply_phase(f: &ComplexField, mask: &impl PhaseMap) -> Result<ComplexField> {
    f.grid().ensure_same(mask.grid())?;
    let data = f.data().iter().zip(mask.phase()).map(|(v, &p)| v * Complex64::from_polar(1.0, p)).collect();
    ComplexField::new(*f.grid(), data)
}

/// Camera intensity of `mode` after the turbulence screen, an optional
/// correction displayed in the same plane, and propagation by `h`.
pub fn simulate_channel(
    mode: &ComplexField,
    screen: &impl PhaseMap,
    h: &TransferFunction,
    correction: Option<&dyn PhaseMap>,
) -> Result<RealImage> {
    Ok(intensity(&propagate(&channel_field(mode, screen, correction)?, h)?))
}

/// Field in the screen plane after turbulence and optional correction.
pub fn channel_field(mode: &ComplexField, screen: &impl PhaseMap, correction: Option<&dyn PhaseMap>) -> Result<ComplexField> {
    mode.grid().ensure_same(screen.grid())?;
    let mut data = mode.data().to_vec();
    let phase = screen.phase();
    match correction {
        Some(c) => {
            mode.grid().ensure_same(c.grid())?;
            for ((v, &p), &q) in data.iter_mut().zip(phase).zip(c.phase()) {
                *v *= Complex64::from_polar(1.0, p + q);
            }
        }
        None => {
            for (v, &p) in data.iter_mut().zip(phase) {
                *v *= Complex64::from_polar(1.0, p);
            }
        }
    }
    ComplexField::new(*mode.grid(), data)
}

/// Photon counts accumulated over `exposure` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct CountImage {
    grid: Grid,
    counts: Vec<u32>,
    exposure: u32,
    seeds: Vec<u64>,
    mean_total_counts: f64,
    background_rate: f64,
}

impl CountImage {
    pub fn new(grid: Grid, counts: Vec<u32>, exposure: u32) -> Result<Self> {
        if counts.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", grid.len()),
                got: format!("{} pixels", counts.len()),
            });
        }
        if exposure == 0 {
            return Err(Error::InvalidParameter("exposure must be at least one frame".into()));
        }
        Ok(Self { grid, counts, exposure, seeds: Vec::new(), mean_total_counts: 0.0, background_rate: 0.0 })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn exposure(&self) -> u32 {
        self.exposure
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Seeds of the accumulated frames, in order.
    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Adds another frame set taken with the same settings.
    pub fn accumulate(&mut self, other: &CountImage) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a = a.saturating_add(*b);
        }
        self.exposure += other.exposure;
        self.seeds.extend_from_slice(&other.seeds);
        self.mean_total_counts += other.mean_total_counts;
        Ok(())
    }

    pub fn to_real(&self) -> RealImage {
        RealImage::new(self.grid, self.counts.iter().map(|&c| c as f64).collect()).expect("shape checked at construction")
    }

    /// Writes `<stem>.pgm` and a `<stem>.txt` sidecar with the sampling metadata.
    pub fn export(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let n = self.grid.n();
        let values: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        io::write_pgm16_auto(stem.with_extension("pgm"), n, n, &values)?;
        let mut meta = String::new();
        let _ = writeln!(meta, "n {n}");
        let _ = writeln!(meta, "pitch_mm {}", self.grid.pitch());
        let _ = writeln!(meta, "exposure {}", self.exposure);
        let _ = writeln!(meta, "mean_total_counts {}", self.mean_total_counts);
        let _ = writeln!(meta, "background_rate {}", self.background_rate);
        let _ = writeln!(meta, "total_counts {}", self.total());
        let _ = writeln!(meta, "max_count {}", self.counts.iter().max().copied().unwrap_or(0));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(meta, "seeds {}", seeds.join(" "));
        fs::write(stem.with_extension("txt"), meta)?;
        Ok(())
    }
}

/// One frame of independent Poisson counts with per-pixel mean
/// `mean_total_counts·I/ΣI + background_rate`.
pub fn sample_photons(image: &RealImage, mean_total_counts: f64, background_rate: f64, seed: u64) -> Result<CountImage> {
    if !(mean_total_counts.is_finite() && mean_total_counts >= 0.0) {
        return Err(Error::InvalidParameter(format!("mean_total_counts must be non-negative, got {mean_total_counts}")));
    }
    if !(background_rate.is_finite() && background_rate >= 0.0) {
        return Err(Error::InvalidParameter(format!("background_rate must be non-negative, got {background_rate}")));
    }
    if image.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("image has negative or non-finite pixels".into()));
    }
    let total = image.sum();
    if total <= 0.0 {
        return Err(Error::ZeroImage);
    }
    let mut rng = seed::rng(seed);
    let scale = mean_total_counts / total;
    let counts = image
        .data()
        .iter()
        .map(|&v| {
            let mean = v * scale + background_rate;
            if mean > 0.0 {
                let d = Poisson::new(mean).expect("mean is positive and finite");
                rng.sample(d) as u32
            } else {
                0
            }
        })
        .collect();
    Ok(CountImage {
        grid: *image.grid(),
        counts,
        exposure: 1,
        seeds: vec![seed],
        mean_total_counts,
        background_rate,
    })
}

/// Dark frame: Poisson counts of mean `background_rate` in every pixel.
pub fn sample_dark_frame(grid: &Grid, background_rate: f64, seed: u64) -> Result<CountImage> {
    sample_photons(&RealImage::new(*grid, vec![1.0; grid.len()])?, 0.0, background_rate, seed)
}

/// `max(signal − background·(exposure_s/exposure_b), 0)` pixel-wise.
pub fn background_subtract(signal: &CountImage, background: &CountImage) -> Result<RealImage> {
    signal.grid.ensure_same(&background.grid)?;
    let ratio = signal.exposure as f64 / background.exposure as f64;
    let data = signal
        .counts
        .iter()
        .zip(&background.counts)
        .map(|(&s, &b)| (s as f64 - b as f64 * ratio).max(0.0))
        .collect();
    RealImage::new(signal.grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{lg_mode, superpose, LgIndex, ModeSuperposition};
    use crate::turbulence::{generate_phase_screen, TurbulenceSpec};

    struct Mask(Grid, Vec<f64>);

    impl PhaseMap for Mask {
        fn grid(&self) -> &Grid {
            &self.0
        }
        fn phase(&self) -> &[f64] {
            &self.1
        }
    }

    fn grid() -> Grid {
        Grid::default()
    }

    fn petals(l: i32) -> ComplexField {
        superpose(&grid(), &ModeSuperposition::balanced(l, 0, 0.0).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn kernel_properties() {
        let g = grid();
        let h0 = transfer_function(&g, 633e-6, 0.0).unwrap();
        assert!(h0.values().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
        let h1 = transfer_function(&g, 633e-6, 300.0).unwrap();
        let h2 = transfer_function(&g, 633e-6, 700.0).unwrap();
        let h12 = transfer_function(&g, 633e-6, 1000.0).unwrap();
        let prod = h1.then(&h2).unwrap();
        for (a, b) in prod.values().iter().zip(h12.values()) {
            assert!((a - b).norm() < 1e-10);
            assert!((b.norm() - 1.0).abs() < 1e-12);
        }
        assert!(transfer_function(&g, 633e-6, -1.0).is_err());
    }

    #[test]
    fn evanescent_band_is_zeroed() {
        // pitch below λ/2 puts the grid corners past the light cone
        let g = Grid::new(64, 2e-4).unwrap();
        let h = transfer_function(&g, 633e-6, 1.0).unwrap();
        let zero = h.values().iter().filter(|v| v.norm() == 0.0).count();
        assert!(zero > 0);
        assert!(h.values().iter().all(|v| v.norm() == 0.0 || (v.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn identity_and_unitarity() {
        let g = grid();
        let f = petals(3);
        let same = propagate(&f, &transfer_function(&g, 633e-6, 0.0).unwrap()).unwrap();
        for (a, b) in same.data().iter().zip(f.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        let h = transfer_function(&g, 633e-6, 1000.0).unwrap();
        let out = propagate(&f, &h).unwrap();
        assert!((out.power() - f.power()).abs() < 1e-9);
        let back = propagate_inverse(&out, &h).unwrap();
        for (a, b) in back.data().iter().zip(f.data()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    fn second_moment_waist(img: &RealImage) -> f64 {
        let g = img.grid();
        let n = g.n();
        let (mut acc, mut tot) = (0.0, 0.0);
        for r in 0..n {
            for c in 0..n {
                let v = img.data()[r * n + c];
                acc += v * g.coord(c).powi(2);
                tot += v;
            }
        }
        2.0 * (acc / tot).sqrt()
    }

    #[test]
    fn gaussian_beam_spreads_as_expected() {
        let g = grid();
        let (w0, lambda) = (1.0, 633e-6);
        let zr = std::f64::consts::PI * w0 * w0 / lambda;
        let beam = lg_mode(&g, LgIndex::new(0, 0).unwrap(), w0).unwrap();
        assert!((second_moment_waist(&intensity(&beam)) - w0).abs() < 1e-6);
        for z in [500.0, 5000.0] {
            let out = propagate(&beam, &transfer_function(&g, lambda, z).unwrap()).unwrap();
            let expected = w0 * (1.0 + (z / zr).powi(2)).sqrt();
            let measured = second_moment_waist(&intensity(&out));
            assert!((measured / expected - 1.0).abs() < 0.01, "z={z}: {measured} vs {expected}");
        }
    }

    #[test]
    fn phase_application() {
        let g = grid();
        let f = petals(2);
        let zero = Mask(g, vec![0.0; g.len()]);
        assert_eq!(apply_phase(&f, &zero).unwrap(), f);
        let m: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 1000) as f64 * 0.01 - 5.0).collect();
        let neg = Mask(g, m.iter().map(|v| -v).collect());
        let m = Mask(g, m);
        let once = apply_phase(&f, &m).unwrap();
        let twice = apply_phase(&once, &neg).unwrap();
        for (a, b) in twice.data().iter().zip(f.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in intensity(&once).data().iter().zip(intensity(&f).data()) {
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
    }

    #[test]
    fn channel_cancellation() {
        let g = grid();
        let mode = petals(5);
        let h = transfer_function(&g, 633e-6, 1000.0).unwrap();
        let screen = generate_phase_screen(&g, &TurbulenceSpec::for_grid(&g, 90e-13), 4).unwrap();
        let flat = Mask(g, vec![0.0; g.len()]);
        let baseline = simulate_channel(&mode, &flat, &h, None).unwrap();
        assert_eq!(baseline, intensity(&propagate(&mode, &h).unwrap()));
        let undo = Mask(g, screen.phase().iter().map(|v| -v).collect());
        let corrected = simulate_channel(&mode, &screen, &h, Some(&undo)).unwrap();
        for (a, b) in corrected.data().iter().zip(baseline.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let distorted = simulate_channel(&mode, &screen, &h, None).unwrap();
        assert!(distorted.normalized_cross_correlation(&baseline).unwrap() < 0.9);
    }

    #[test]
    fn photon_sampling_basics() {
        let g = Grid::new(64, 0.06).unwrap();
        let mut data = vec![0.0; g.len()];
        data[100] = 1.0;
        data[200] = 3.0;
        let img = RealImage::new(g, data).unwrap();
        let frame = sample_photons(&img, 1000.0, 0.0, 1).unwrap();
        assert!(frame.counts().iter().enumerate().all(|(i, &c)| c == 0 || i == 100 || i == 200));
        assert_eq!(frame, sample_photons(&img, 1000.0, 0.0, 1).unwrap());
        let bg = sample_photons(&img, 0.0, 0.1, 2).unwrap();
        assert!(bg.total() > 0);
        assert!(matches!(sample_photons(&RealImage::zeros(g), 10.0, 0.0, 1), Err(Error::ZeroImage)));
    }

    #[test]
    fn photon_totals_follow_poisson_statistics() {
        let g = Grid::new(64, 0.06).unwrap();
        let img = intensity(&lg_mode(&g, LgIndex::new(1, 0).unwrap(), 0.6).unwrap());
        let (mean, bg, runs) = (500.0, 0.01, 400);
        let totals: Vec<f64> = (0..runs).map(|s| sample_photons(&img, mean, bg, s).unwrap().total() as f64).collect();
        let expected = mean + g.len() as f64 * bg;
        let avg = totals.iter().sum::<f64>() / runs as f64;
        // the sum of independent Poissons is Poisson with the summed mean
        let sigma = (expected / runs as f64).sqrt();
        assert!((avg - expected).abs() < 3.0 * sigma, "{avg} vs {expected}");
    }

    #[test]
    fn background_subtraction() {
        let g = Grid::new(64, 0.06).unwrap();
        let img = intensity(&lg_mode(&g, LgIndex::new(2, 0).unwrap(), 0.6).unwrap());
        let s = sample_photons(&img, 5000.0, 0.5, 3).unwrap();
        assert!(background_subtract(&s, &s).unwrap().data().iter().all(|&v| v == 0.0));
        let empty = CountImage::new(g, vec![0; g.len()], 1).unwrap();
        assert_eq!(background_subtract(&s, &empty).unwrap(), s.to_real());
        let mut long = empty.clone();
        long.accumulate(&CountImage::new(g, vec![1; g.len()], 1).unwrap()).unwrap();
        assert_eq!(long.exposure(), 2);
        // one-frame signal against a two-frame background of 1 count each: 1 − 1·½
        let one = CountImage::new(g, vec![1; g.len()], 1).unwrap();
        assert!(background_subtract(&one, &long).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn accumulated_photons_reproduce_petals() {
        let img = intensity(&petals(5));
        let frames = 10;
        let mut acc = sample_photons(&img, 1e5, 0.002, 100).unwrap();
        let mut bg = sample_photons(&img, 0.0, 0.002, 200).unwrap();
        for k in 1..frames {
            acc.accumulate(&sample_photons(&img, 1e5, 0.002, 100 + k).unwrap()).unwrap();
            bg.accumulate(&sample_photons(&img, 0.0, 0.002, 200 + k).unwrap()).unwrap();
        }
        let clean = background_subtract(&acc, &bg).unwrap();
        let ncc = clean.normalized_cross_correlation(&img).unwrap();
        assert!(ncc >= 0.95, "ncc {ncc}");
    }

    #[test]
    fn photon_images_converge() {
        let g = Grid::new(64, 0.06).unwrap();
        let img = intensity(&lg_mode(&g, LgIndex::new(3, 0).unwrap(), 0.6).unwrap()).normalized().unwrap();
        let frame = sample_photons(&img, 1e7, 0.0, 9).unwrap();
        let total = frame.total() as f64;
        let l1: f64 = frame.counts().iter().zip(img.data()).map(|(&c, &p)| (c as f64 / total - p).abs()).sum();
        assert!(l1 <= 0.02, "L1 {l1}");
    }

    #[test]
    fn export_writes_pgm_and_sidecar() {
        let g = Grid::new(64, 0.06).unwrap();
        let img = intensity(&lg_mode(&g, LgIndex::new(1, 0).unwrap(), 0.6).unwrap());
        let frame = sample_photons(&img, 1e4, 0.0, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        frame.export(dir.path().join("frame")).unwrap();
        let (w, h, _) = io::read_pgm16(dir.path().join("frame.pgm")).unwrap();
        assert_eq!((w, h), (64, 64));
        let meta = fs::read_to_string(dir.path().join("frame.txt")).unwrap();
        assert!(meta.contains("seeds 5"));
        assert!(meta.contains("exposure 1"));
    }
}
