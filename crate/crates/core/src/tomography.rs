//! Qubit tomography in the {|LG_{+ℓ,0}⟩, |LG_{−ℓ,0}⟩} subspace.
//!
//! Basis order is `|0⟩ = |+ℓ⟩`, `|1⟩ = |−ℓ⟩`. The six analyzers are
//! `|0⟩`, `|1⟩` and `(|0⟩ + e^{iφ}|1⟩)/√2` for φ = 0, π, π/2, 3π/2, giving
//!
//! ```text
//! S3 = (P₀ − P₁)/(P₀ + P₁) = ρ₀₀ − ρ₁₁
//! S1 = (P_0 − P_π)/(P_0 + P_π) = 2 Re ρ₀₁
//! S2 = (P_{π/2} − P_{3π/2})/(P_{π/2} + P_{3π/2}) = −2 Im ρ₀₁
//! ```
//!
//! Normalizing each pair separately discards whatever the channel scattered
//! out of the qubit subspace.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::channel::projective_measurement_field;
use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, LgIndex, ModeSuperposition};
use crate::io;

const PHYSICAL_TOL: f64 = 1e-10;

/// 2×2 Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix {
    m: [[Complex64; 2]; 2],
}

impl DensityMatrix {
    pub fn new(m: [[Complex64; 2]; 2]) -> Result<Self> {
        let rho = Self { m };
        let herm = (m[0][1] - m[1][0].conj()).norm().max(m[0][0].im.abs()).max(m[1][1].im.abs());
        if herm > PHYSICAL_TOL {
            return Err(Error::NonPhysical(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = (m[0][0] + m[1][1]).re;
        if (tr - 1.0).abs() > PHYSICAL_TOL {
            return Err(Error::NonPhysical(format!("trace {tr} is not 1")));
        }
        let (lo, _) = rho.eigenvalues();
        if lo < -PHYSICAL_TOL {
            return Err(Error::NonPhysical(format!("negative eigenvalue {lo:e}")));
        }
        Ok(rho)
    }

    /// `|ψ⟩⟨ψ|` for `|ψ⟩ = α|0⟩ + β|1⟩`, normalized.
    pub fn pure(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotNormalized(norm * norm));
        }
        let (a, b) = (alpha / norm, beta / norm);
        Ok(Self { m: [[a * a.conj(), a * b.conj()], [b * a.conj(), b * b.conj()]] })
    }

    pub fn entries(&self) -> [[Complex64; 2]; 2] {
        self.m
    }

    pub fn entry(&self, r: usize, c: usize) -> Complex64 {
        self.m[r][c]
    }

    pub fn trace(&self) -> f64 {
        (self.m[0][0] + self.m[1][1]).re
    }

    /// Eigenvalues `(low, high)` of the Hermitian part.
    pub fn eigenvalues(&self) -> (f64, f64) {
        hermitian_eigen(&self.m).0
    }

    /// `U ρ U†`.
    pub fn transformed(&self, u: &[[Complex64; 2]; 2]) -> Self {
        let ud = dagger(u);
        Self { m: mul(&mul(u, &self.m), &ud) }
    }

    /// Eight numbers, two rows: `Re ρ₀₀ Im ρ₀₀ Re ρ₀₁ Im ρ₀₁` / `Re ρ₁₀ ...`.
    pub fn to_text_block(&self) -> String {
        let mut s = String::new();
        for row in &self.m {
            let _ = writeln!(
                s,
                "{:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                row[0].re, row[0].im, row[1].re, row[1].im
            );
        }
        s
    }

    /// `row,col,re,im` lines under a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,re,im\n");
        for (r, row) in self.m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let _ = writeln!(s, "{r},{c},{},{}", io::sig6(v.re), io::sig6(v.im));
            }
        }
        s
    }

    /// Bar chart: four bars for the real parts, a gap, four for the imaginary
    /// parts, ordered ρ₀₀ ρ₀₁ ρ₁₀ ρ₁₁. The zero line sits at mid-height and
    /// ±1 spans the full height.
    pub fn write_bar_chart(&self, path: impl AsRef<Path>) -> Result<()> {
        let (bar, gap, height) = (24usize, 8usize, 128usize);
        let values: Vec<f64> = self.m.iter().flatten().map(|v| v.re).chain(self.m.iter().flatten().map(|v| v.im)).collect();
        let width = 8 * (bar + gap) + 3 * gap;
        let mut img = vec![0.0; width * height];
        let mid = height / 2;
        for (i, v) in values.iter().enumerate() {
            let x0 = gap + i * (bar + gap) + if i >= 4 { 3 * gap } else { 0 };
            let extent = (v.clamp(-1.0, 1.0) * (mid as f64 - 1.0)).round() as i64;
            let (lo, hi) = if extent >= 0 { (mid as i64 - extent, mid as i64) } else { (mid as i64, mid as i64 - extent) };
            for y in lo.max(0)..=hi.min(height as i64 - 1) {
                for x in x0..x0 + bar {
                    img[y as usize * width + x] = 1.0;
                }
            }
        }
        for x in 0..width {
            img[mid * width + x] = 0.5;
        }
        io::write_pgm16(path, width, height, &img, 0.0, 1.0)
    }
}

fn mul(a: &[[Complex64; 2]; 2], b: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

fn dagger(a: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

/// Closed-form eigen-decomposition of a 2×2 Hermitian matrix:
/// `((λ_low, λ_high), (v_low, v_high))` with unit eigenvectors.
fn hermitian_eigen(m: &[[Complex64; 2]; 2]) -> ((f64, f64), ([Complex64; 2], [Complex64; 2])) {
    let (a, d) = (m[0][0].re, m[1][1].re);
    let b = 0.5 * (m[0][1] + m[1][0].conj());
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d).powi(2) + b.norm_sqr()).sqrt();
    let (lo, hi) = (mean - radius, mean + radius);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    if b.norm() <= 1e-300 {
        let (e0, e1) = ([one, zero], [zero, one]);
        return if a <= d { ((lo, hi), (e0, e1)) } else { ((lo, hi), (e1, e0)) };
    }
    // (M − λ)v = 0 with v = (b, λ − a); for λ_low use the better-conditioned row
    let vec_for = |lambda: f64| {
        let v = if (lambda - a).abs() >= (lambda - d).abs() {
            [b, Complex64::new(lambda - a, 0.0)]
        } else {
            [Complex64::new(lambda - d, 0.0), b.conj()]
        };
        let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        [v[0] / n, v[1] / n]
    };
    ((lo, hi), (vec_for(lo), vec_for(hi)))
}

fn outer(v: &[Complex64; 2], weight: f64) -> [[Complex64; 2]; 2] {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = v[r] * v[c].conj() * weight;
        }
    }
    out
}

fn add(a: [[Complex64; 2]; 2], b: [[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

/// Principal square root of a PSD 2×2 matrix through its eigen-decomposition.
fn sqrt_psd(m: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let ((lo, hi), (vlo, vhi)) = hermitian_eigen(m);
    add(outer(&vlo, lo.max(0.0).sqrt()), outer(&vhi, hi.max(0.0).sqrt()))
}

/// Uhlmann fidelity `(tr sqrt(√ρ σ √ρ))²`. With `M = √ρ σ √ρ` having
/// eigenvalues μ₁, μ₂, the trace of its root squared is `tr M + 2 sqrt(det M)`,
/// which avoids amplifying rounding in a near-zero μ.
pub fn fidelity(rho1: &DensityMatrix, rho3: &DensityMatrix) -> Result<f64> {
    for r in [rho1, rho3] {
        DensityMatrix::new(r.m)?;
    }
    let s = sqrt_psd(&rho1.m);
    let m = mul(&mul(&s, &rho3.m), &s);
    let tr = (m[0][0] + m[1][1]).re;
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).re;
    Ok((tr + 2.0 * det.max(0.0).sqrt()).clamp(0.0, 1.0))
}

/// The six analyzers for azimuthal index ℓ, as fields on one grid.
#[derive(Clone, Debug)]
pub struct ProjectorSet {
    l: i32,
    analyzers: Vec<ModeSuperposition>,
    fields: Vec<ComplexField>,
}

/// Relative phases of the four superposition analyzers, in measurement order.
pub const ANALYZER_PHASES: [f64; 4] = [0.0, PI, PI / 2.0, 3.0 * PI / 2.0];

impl ProjectorSet {
    pub fn new(l: i32, grid: &Grid, waist: f64) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidParameter("qubit subspace needs ℓ ≠ 0".into()));
        }
        let mut analyzers = vec![
            ModeSuperposition::single(LgIndex::new(l, 0)?),
            ModeSuperposition::single(LgIndex::new(-l, 0)?),
        ];
        for phi in ANALYZER_PHASES {
            analyzers.push(ModeSuperposition::balanced(l, 0, phi)?);
        }
        let fields = analyzers.iter().map(|a| a.field(grid, waist)).collect::<Result<_>>()?;
        Ok(Self { l, analyzers, fields })
    }

    pub fn azimuthal(&self) -> i32 {
        self.l
    }

    pub fn analyzers(&self) -> &[ModeSuperposition] {
        &self.analyzers
    }

    pub fn fields(&self) -> &[ComplexField] {
        &self.fields
    }

    /// Field of `α|+ℓ⟩ + β|−ℓ⟩` (normalized) built from the basis analyzers.
    pub fn qubit_field(&self, alpha: Complex64, beta: Complex64) -> Result<ComplexField> {
        let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        let (a, b) = (alpha / norm, beta / norm);
        let data = self.fields[0].data().iter().zip(self.fields[1].data()).map(|(p, m)| a * p + b * m).collect();
        ComplexField::new(*self.fields[0].grid(), data)?.normalized()
    }
}

/// Born-rule probabilities for the six analyzers, in [`ProjectorSet`] order.
pub fn measure_probabilities(field: &ComplexField, projectors: &ProjectorSet) -> Result<[f64; 6]> {
    let mut out = [0.0; 6];
    for (p, a) in out.iter_mut().zip(&projectors.fields) {
        *p = projective_measurement_field(field, a)?;
    }
    Ok(out)
}

/// Share of the field inside the qubit subspace, `P₀ + P₁`.
pub fn subspace_weight(probs: &[f64; 6]) -> f64 {
    probs[0] + probs[1]
}

fn contrast(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        (a - b) / (a + b)
    } else {
        0.0
    }
}

/// Linear inversion from basis-normalized contrasts, then projection onto the
/// physical states by clipping negative eigenvalues and renormalizing.
pub fn reconstruct_density(probs: &[f64; 6]) -> DensityMatrix {
    let s3 = contrast(probs[0], probs[1]);
    let s1 = contrast(probs[2], probs[3]);
    let s2 = contrast(probs[4], probs[5]);
    let raw = [
        [Complex64::new(0.5 * (1.0 + s3), 0.0), Complex64::new(0.5 * s1, -0.5 * s2)],
        [Complex64::new(0.5 * s1, 0.5 * s2), Complex64::new(0.5 * (1.0 - s3), 0.0)],
    ];
    let ((lo, hi), (vlo, vhi)) = hermitian_eigen(&raw);
    let (lo, hi) = (lo.max(0.0), hi.max(0.0));
    let total = lo + hi;
    let mut m = add(outer(&vlo, lo / total), outer(&vhi, hi / total));
    // exact Hermitian symmetry and real diagonal
    m[0][0] = Complex64::new(m[0][0].re, 0.0);
    m[1][1] = Complex64::new(1.0 - m[0][0].re, 0.0);
    m[1][0] = m[0][1].conj();
    DensityMatrix { m }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_state(rng: &mut impl Rng) -> DensityMatrix {
        let p: f64 = rng.random();
        let (a, b) = (DensityMatrix::pure(c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5), c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).unwrap(),
            DensityMatrix::pure(c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5), c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).unwrap());
        let mut m = [[c(0.0, 0.0); 2]; 2];
        for r in 0..2 {
            for col in 0..2 {
                m[r][col] = a.m[r][col] * p + b.m[r][col] * (1.0 - p);
            }
        }
        DensityMatrix::new(m).unwrap()
    }

    fn random_unitary(rng: &mut impl Rng) -> [[Complex64; 2]; 2] {
        let (t, p1, p2, g): (f64, f64, f64, f64) = (rng.random::<f64>() * PI, rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0);
        let e = |x: f64| Complex64::from_polar(1.0, x);
        [[e(g + p1) * t.cos(), e(g + p2) * t.sin()], [-e(g - p2) * t.sin(), e(g - p1) * t.cos()]]
    }

    /// Independent qubit formula: F = tr(ρσ) + 2 sqrt(det ρ · det σ).
    fn fidelity_oracle(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
        let tr = (0..2).flat_map(|r| (0..2).map(move |k| (r, k))).map(|(r, k)| a.m[r][k] * b.m[k][r]).sum::<Complex64>().re;
        let det = |m: &[[Complex64; 2]; 2]| (m[0][0] * m[1][1] - m[0][1] * m[1][0]).re.max(0.0);
        tr + 2.0 * (det(&a.m) * det(&b.m)).sqrt()
    }

    #[test]
    fn fidelity_basics() {
        let up = DensityMatrix::pure(c(1.0, 0.0), c(0.0, 0.0)).unwrap();
        let down = DensityMatrix::pure(c(0.0, 0.0), c(1.0, 0.0)).unwrap();
        let plus = DensityMatrix::pure(c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        assert!((fidelity(&plus, &plus).unwrap() - 1.0).abs() < 1e-10);
        assert!(fidelity(&up, &down).unwrap() < 1e-10);
        assert!((fidelity(&up, &plus).unwrap() - 0.5).abs() < 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (a, b) = (random_state(&mut rng), random_state(&mut rng));
            let f = fidelity(&a, &b).unwrap();
            assert!((f - fidelity(&b, &a).unwrap()).abs() <= 1e-10);
            assert!((f - fidelity_oracle(&a, &b)).abs() <= 1e-10);
            assert!((fidelity(&a, &a).unwrap() - 1.0).abs() <= 1e-10);
            let u = random_unitary(&mut rng);
            let g = fidelity(&a.transformed(&u), &b.transformed(&u)).unwrap();
            assert!((f - g).abs() <= 1e-10);
        }
    }

    #[test]
    fn non_physical_inputs_are_rejected() {
        assert!(DensityMatrix::new([[c(1.2, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-0.2, 0.0)]]).is_err());
        assert!(DensityMatrix::new([[c(0.5, 0.0), c(0.1, 0.0)], [c(0.2, 0.0), c(0.5, 0.0)]]).is_err());
        assert!(DensityMatrix::new([[c(0.6, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.6, 0.0)]]).is_err());
        let bogus = DensityMatrix { m: [[c(2.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]] };
        assert!(matches!(fidelity(&bogus, &bogus), Err(Error::NonPhysical(_))));
    }

    fn projectors() -> ProjectorSet {
        ProjectorSet::new(3, &Grid::default(), 1.0).unwrap()
    }

    #[test]
    fn eigenstate_statistics() {
        let p = projectors();
        let probs = measure_probabilities(&p.fields()[0], &p).unwrap();
        let expected = [1.0, 0.0, 0.5, 0.5, 0.5, 0.5];
        for (a, b) in probs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{probs:?}");
        }
        let sup = p.qubit_field(c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        let probs = measure_probabilities(&sup, &p).unwrap();
        assert!((probs[2] - 1.0).abs() < 1e-6 && probs[3].abs() < 1e-6);
        let shifted = sup.scaled(Complex64::from_polar(1.0, 1.1));
        let again = measure_probabilities(&shifted, &p).unwrap();
        for (a, b) in probs.iter().zip(again) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_examples() {
        let p = projectors();
        let sup = p.qubit_field(c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        let rho = reconstruct_density(&measure_probabilities(&sup, &p).unwrap());
        for r in 0..2 {
            for k in 0..2 {
                assert!((rho.entry(r, k) - c(0.5, 0.0)).norm() < 1e-6);
            }
        }
        let rho = reconstruct_density(&measure_probabilities(&p.fields()[0], &p).unwrap());
        assert!((rho.entry(0, 0).re - 1.0).abs() < 1e-6 && rho.entry(1, 1).re.abs() < 1e-6);
    }

    #[test]
    fn clipping_yields_physical_states() {
        // contrasts outside the Bloch ball and degenerate pairs
        for probs in [[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], [0.0; 6], [0.3, 0.1, 0.9, 0.0, 0.2, 0.2]] {
            let rho = reconstruct_density(&probs);
            let m = rho.entries();
            assert!((rho.trace() - 1.0).abs() <= 1e-12);
            assert_eq!(m[0][1], m[1][0].conj());
            assert!(rho.eigenvalues().0 >= -1e-12);
            assert!(DensityMatrix::new(m).is_ok());
        }
    }

    #[test]
    fn random_pure_states_round_trip() {
        let p = projectors();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (a, b) = (c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5), c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let truth = DensityMatrix::pure(a, b).unwrap();
            let field = p.qubit_field(a, b).unwrap();
            let rho = reconstruct_density(&measure_probabilities(&field, &p).unwrap());
            assert!(fidelity(&truth, &rho).unwrap() >= 0.999);
        }
    }

    #[test]
    fn text_outputs() {
        let rho = DensityMatrix::pure(c(1.0, 0.0), c(0.0, 1.0)).unwrap();
        let block = rho.to_text_block();
        assert_eq!(block.lines().count(), 2);
        assert_eq!(block.split_whitespace().count(), 8);
        let csv = rho.to_csv();
        assert!(csv.starts_with("row,col,re,im\n"));
        assert!(csv.contains("0,1,0,-0.5"));
        let dir = tempfile::tempdir().unwrap();
        rho.write_bar_chart(dir.path().join("rho.pgm")).unwrap();
        assert!(io::read_pgm16(dir.path().join("rho.pgm")).is_ok());
    }
}
