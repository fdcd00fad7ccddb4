//! Cross-talk matrices over a mode alphabet and the resulting channel capacity.
//!
//! Detection is an ideal modal projection made right after the correction
//! modulator. Free-space propagation to a camera is unitary, so projecting
//! there against equally propagated analyzers gives the same numbers.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{inner_product, ComplexField, Grid, ModeSuperposition, PhaseMap, RealImage};
use crate::gdo::PhaseMask;
use crate::io;
use crate::optics::{channel_field, propagate, TransferFunction};
use crate::seed;
use crate::turbulence::{PhaseScreen, ScreenGenerator, TurbulenceSpec};

/// Ordered list of N ≥ 2 transmitted symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeAlphabet {
    symbols: Vec<ModeSuperposition>,
}

impl ModeAlphabet {
    pub fn new(symbols: Vec<ModeSuperposition>) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(Error::InvalidParameter(format!("alphabet needs at least 2 symbols, got {}", symbols.len())));
        }
        Ok(Self { symbols })
    }

    /// Equal `±ℓ` superpositions with `p_r = 0`, one per listed `ℓ`.
    pub fn balanced(ls: impl IntoIterator<Item = i32>) -> Result<Self> {
        Self::new(ls.into_iter().map(|l| ModeSuperposition::balanced(l, 0, 0.0)).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[ModeSuperposition] {
        &self.symbols
    }

    pub fn fields(&self, grid: &Grid, waist: f64) -> Result<Vec<ComplexField>> {
        self.symbols.iter().map(|s| s.field(grid, waist)).collect()
    }

    /// Fails unless all symbol pairs overlap by at most `tol` on this grid.
    pub fn check_orthogonal(&self, grid: &Grid, waist: f64, tol: f64) -> Result<()> {
        let fields = self.fields(grid, waist)?;
        for i in 0..fields.len() {
            for j in i + 1..fields.len() {
                let overlap = inner_product(&fields[i], &fields[j])?.norm();
                if overlap > tol {
                    return Err(Error::InvalidParameter(format!(
                        "symbols {i} and {j} overlap by {overlap:e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Alphabet reordered so that symbol `i` of the result is `perm[i]` of self.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        Self::new(perm.iter().map(|&i| self.symbols[i].clone()).collect())
    }

    pub fn labels(&self) -> Vec<String> {
        self.symbols.iter().map(label).collect()
    }
}

impl Default for ModeAlphabet {
    /// Nine `±ℓ` petal states, ℓ = 1…9.
    fn default() -> Self {
        Self::balanced(1..=9).expect("ℓ ≤ 9 is within range")
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidParameter(format!("{perm:?} is not a permutation of 0..{n}")));
    }
    Ok(())
}

/// Compact ASCII symbol name, e.g. `l3p0+l-3p0`.
pub fn label(s: &ModeSuperposition) -> String {
    let parts: Vec<String> = s.terms().iter().map(|(i, _)| format!("l{}p{}", i.azimuthal, i.radial)).collect();
    parts.join("+")
}

/// `P(d|s)`, stored row-major with rows = detected, columns = sent.
#[derive(Clone, Debug, PartialEq)]
pub struct CrosstalkMatrix {
    n: usize,
    p: Vec<f64>,
}

impl CrosstalkMatrix {
    /// Builds from per-sent-symbol detection weights, normalizing each column.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        if n < 2 {
            return Err(Error::InvalidParameter("cross-talk matrix needs N ≥ 2".into()));
        }
        let mut p = vec![0.0; n * n];
        for (s, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::ShapeMismatch { expected: format!("{n} detections"), got: col.len().to_string() });
            }
            if col.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidParameter("detection weights must be finite and non-negative".into()));
            }
            let total: f64 = col.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidParameter(format!("column {s} has no detections")));
            }
            for (d, v) in col.iter().enumerate() {
                p[d * n + s] = v / total;
            }
        }
        Ok(Self { n, p })
    }

    pub fn identity(n: usize) -> Self {
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + i] = 1.0;
        }
        Self { n, p }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `P(detected | sent)`.
    pub fn get(&self, detected: usize, sent: usize) -> f64 {
        self.p[detected * self.n + sent]
    }

    pub fn column_sum(&self, sent: usize) -> f64 {
        (0..self.n).map(|d| self.get(d, sent)).sum()
    }

    pub fn mean_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum::<f64>() / self.n as f64
    }

    /// Same permutation applied to detected and sent labels.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let n = self.n;
        let mut p = vec![0.0; n * n];
        for d in 0..n {
            for s in 0..n {
                p[d * n + s] = self.get(perm[d], perm[s]);
            }
        }
        Ok(Self { n, p })
    }

    /// Header of sent labels, one row per detected label, 6 significant digits.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut s = String::from("detected\\sent");
        for l in labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for d in 0..self.n {
            s.push_str(&labels[d]);
            for c in 0..self.n {
                let _ = write!(s, ",{}", io::sig6(self.get(d, c)));
            }
            s.push('\n');
        }
        s
    }

    /// Heatmap with `cell × cell` pixel blocks; 0 is black and 1 is white.
    pub fn write_heatmap(&self, path: impl AsRef<Path>, cell: usize) -> Result<()> {
        let side = self.n * cell;
        let mut img = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                img[y * side + x] = self.get(y / cell, x / cell);
            }
        }
        io::write_pgm16(path, side, side, &img, 0.0, 1.0)
    }
}

/// `|⟨analyzer|field⟩|²` with the analyzer built at the given waist.
pub fn projective_measurement(field: &ComplexField, analyzer: &ModeSuperposition, waist: f64) -> Result<f64> {
    projective_measurement_field(field, &analyzer.field(field.grid(), waist)?)
}

/// `|⟨analyzer|field⟩|²` for a prepared, normalized analyzer field.
pub fn projective_measurement_field(field: &ComplexField, analyzer: &ComplexField) -> Result<f64> {
    Ok(inner_product(analyzer, field)?.norm_sqr())
}

/// `(1/N) Σ_{d,s} P(d|s) log₂(P(d|s)·N / Σ_{s'} P(d|s'))`, with `0·log 0 = 0`.
pub fn mutual_information(m: &CrosstalkMatrix) -> f64 {
    let n = m.n;
    let mut total = 0.0;
    for d in 0..n {
        let row: f64 = (0..n).map(|s| m.get(d, s)).sum();
        for s in 0..n {
            let p = m.get(d, s);
            if p > 0.0 {
                total += p * (p * n as f64 / row).log2();
            }
        }
    }
    total / n as f64
}

/// Access to one frozen turbulence realization from the receiver's side:
/// any field can be launched and its camera frame recorded, but the screen
/// itself is hidden.
pub struct FrozenChannel<'a> {
    screen: &'a PhaseScreen,
    camera: &'a TransferFunction,
}

impl<'a> FrozenChannel<'a> {
    pub fn new(screen: &'a PhaseScreen, camera: &'a TransferFunction) -> Self {
        Self { screen, camera }
    }

    pub fn camera(&self) -> &TransferFunction {
        self.camera
    }

    /// Unit-sum camera frame of `launched` sent through the screen.
    pub fn observe(&self, launched: &ComplexField) -> Result<RealImage> {
        self.observe_with(launched, None)
    }

    /// Same, with an extra phase displayed in the screen plane.
    pub fn observe_with(&self, launched: &ComplexField, extra: Option<&dyn PhaseMap>) -> Result<RealImage> {
        let f = channel_field(launched, self.screen, extra)?;
        crate::field::intensity(&propagate(&f, self.camera)?).normalized()
    }
}

/// Produces the phase to display on the correction modulator.
pub trait Corrector: Sync {
    fn correct(&self, hologram: &ComplexField, channel: &FrozenChannel<'_>, seed: u64) -> Result<PhaseMask>;
}

#[derive(Clone, Copy)]
pub enum CorrectionMode<'a> {
    None,
    /// Conjugate of the true screen.
    Ideal,
    Corrector(&'a dyn Corrector),
}

/// Everything needed to realize channel uses: grid, mode size, turbulence
/// statistics, camera propagation and the master seed for the screens.
#[derive(Clone, Debug)]
pub struct ChannelConfig {
    pub grid: Grid,
    pub waist: f64,
    pub spec: TurbulenceSpec,
    pub camera: TransferFunction,
    pub master_seed: u64,
}

impl ChannelConfig {
    pub fn with_cn2(&self, cn2: f64) -> Self {
        Self { spec: self.spec.with_cn2(cn2), ..self.clone() }
    }

    /// Seed of the screen for `trial` of symbol `symbol`.
    pub fn screen_seed(&self, symbol: usize, trial: usize) -> u64 {
        seed::derive(self.master_seed, &format!("channel-screen-{symbol}"), trial as u64)
    }
}

/// Field in the measurement plane for one channel use.
pub fn received_field(
    hologram: &ComplexField,
    screen: &PhaseScreen,
    camera: &TransferFunction,
    mode: &CorrectionMode<'_>,
    seed: u64,
) -> Result<ComplexField> {
    let correction = match mode {
        CorrectionMode::None => None,
        CorrectionMode::Ideal => Some(PhaseMask::from_map(screen).negated()),
        CorrectionMode::Corrector(c) => Some(c.correct(hologram, &FrozenChannel::new(screen, camera), seed)?),
    };
    channel_field(hologram, screen, correction.as_ref().map(|c| c as &dyn PhaseMap))
}

/// Trial-averaged, column-normalized detection statistics. Every symbol sees
/// its own screens; the seeds depend only on the master seed, symbol index
/// and trial, so corrected and uncorrected runs share realizations.
pub fn crosstalk_matrix(
    alphabet: &ModeAlphabet,
    cfg: &ChannelConfig,
    trials: usize,
    mode: &CorrectionMode<'_>,
) -> Result<CrosstalkMatrix> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let fields = alphabet.fields(&cfg.grid, cfg.waist)?;
    let gen = ScreenGenerator::new(cfg.grid, cfg.spec)?;
    let n = alphabet.len();
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..trials).map(move |t| (s, t))).collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let screen_seed = cfg.screen_seed(s, t);
            let screen = gen.generate(screen_seed);
            let received = received_field(&fields[s], &screen, &cfg.camera, mode, seed::derive(screen_seed, "correct", 0))?;
            let probs = fields.iter().map(|a| projective_measurement_field(&received, a)).collect::<Result<Vec<_>>>()?;
            let total: f64 = probs.iter().sum();
            if total <= 0.0 {
                return Err(Error::ZeroImage);
            }
            Ok(probs.into_iter().map(|p| p / total).collect())
        })
        .collect::<Result<_>>()?;
    let mut columns = vec![vec![0.0; n]; n];
    for ((s, _), row) in jobs.iter().zip(&rows) {
        for (acc, v) in columns[*s].iter_mut().zip(row) {
            *acc += v;
        }
    }
    CrosstalkMatrix::from_columns(&columns)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cn2: f64,
    pub mi_uncorrected: f64,
    pub mi_corrected: f64,
    pub diagonal_uncorrected: f64,
    pub diagonal_corrected: f64,
}

/// Mutual information with and without correction at each strength.
pub fn capacity_sweep(
    alphabet: &ModeAlphabet,
    cfg: &ChannelConfig,
    cn2_list: &[f64],
    trials: usize,
    correction: &CorrectionMode<'_>,
) -> Result<Vec<SweepRow>> {
    if cn2_list.is_empty() {
        return Err(Error::InvalidParameter("cn2 list is empty".into()));
    }
    cn2_list
        .iter()
        .map(|&cn2| {
            let c = cfg.with_cn2(cn2);
            let raw = crosstalk_matrix(alphabet, &c, trials, &CorrectionMode::None)?;
            let fixed = crosstalk_matrix(alphabet, &c, trials, correction)?;
            Ok(SweepRow {
                cn2,
                mi_uncorrected: mutual_information(&raw),
                mi_corrected: mutual_information(&fixed),
                diagonal_uncorrected: raw.mean_diagonal(),
                diagonal_corrected: fixed.mean_diagonal(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("cn2,mi_uncorrected,mi_corrected,diagonal_uncorrected,diagonal_corrected\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            io::sig6(r.cn2),
            io::sig6(r.mi_uncorrected),
            io::sig6(r.mi_corrected),
            io::sig6(r.diagonal_uncorrected),
            io::sig6(r.diagonal_corrected)
        );
    }
    s
}
