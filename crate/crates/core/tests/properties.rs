use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use lgcorrect::channel::{mutual_information, CrosstalkMatrix};
use lgcorrect::cnn::{argmax, softmax};
use lgcorrect::field::{Grid, PhaseMap};
use lgcorrect::gdo::{wrap_phase, PhaseMask};
use lgcorrect::tomography::{fidelity, DensityMatrix};
use lgcorrect::turbulence::{fried_parameter, TurbulenceSpec};

fn qubit() -> impl Strategy<Value = (Complex64, Complex64)> {
    (0.0..PI, 0.0..2.0 * PI).prop_map(|(t, p)| (Complex64::new((t / 2.0).cos(), 0.0), Complex64::from_polar((t / 2.0).sin(), p)))
}

/// Mixture of a pure state with the maximally mixed state.
fn state() -> impl Strategy<Value = DensityMatrix> {
    (qubit(), 0.0..=1.0f64).prop_map(|((a, b), purity)| {
        let p = DensityMatrix::pure(a, b).unwrap().entries();
        let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                let mixed = if r == c { 0.5 } else { 0.0 };
                m[r][c] = p[r][c] * purity + Complex64::new(mixed * (1.0 - purity), 0.0);
            }
        }
        DensityMatrix::new(m).unwrap()
    })
}

fn unitary() -> impl Strategy<Value = [[Complex64; 2]; 2]> {
    (0.0..PI, 0.0..2.0 * PI, 0.0..2.0 * PI, 0.0..2.0 * PI).prop_map(|(t, a, b, g)| {
        let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
        [
            [Complex64::from_polar(c, a), Complex64::from_polar(s, b)],
            [-Complex64::from_polar(s, g - b + a), Complex64::from_polar(c, g)],
        ]
    })
}

fn columns() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..7).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0.0..1.0f64, n), n)).prop_filter("non-zero columns", |cols| {
        cols.iter().all(|c| c.iter().sum::<f64>() > 1e-3)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn crosstalk_columns_sum_to_one(cols in columns()) {
        let m = CrosstalkMatrix::from_columns(&cols).unwrap();
        for s in 0..m.n() {
            prop_assert!((m.column_sum(s) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn mutual_information_is_bounded(cols in columns()) {
        let m = CrosstalkMatrix::from_columns(&cols).unwrap();
        let mi = mutual_information(&m);
        prop_assert!(mi >= -1e-12);
        prop_assert!(mi <= (m.n() as f64).log2() + 1e-12);
    }

    #[test]
    fn mutual_information_ignores_symbol_relabelling(cols in columns(), rot in 0usize..7) {
        let m = CrosstalkMatrix::from_columns(&cols).unwrap();
        let n = m.n();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let p = m.permuted(&perm).unwrap();
        prop_assert!((mutual_information(&m) - mutual_information(&p)).abs() <= 1e-12);
    }

    #[test]
    fn fidelity_is_symmetric_and_bounded(a in state(), b in state()) {
        let f = fidelity(&a, &b).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
        prop_assert!((f - fidelity(&b, &a).unwrap()).abs() <= 1e-10);
        prop_assert!((fidelity(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn fidelity_is_unitarily_invariant(a in state(), b in state(), u in unitary()) {
        let f = fidelity(&a, &b).unwrap();
        let g = fidelity(&a.transformed(&u), &b.transformed(&u)).unwrap();
        prop_assert!((f - g).abs() <= 1e-9);
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-30.0..30.0f64, 2..8), c in -100.0..100.0f64) {
        let p = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let q = softmax(&shifted);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (x, y) in p.iter().zip(&q) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert_eq!(argmax(&p), argmax(&logits));
    }

    #[test]
    fn wrapped_phase_is_canonical(x in -1e4..1e4f64) {
        let w = wrap_phase(x);
        prop_assert!(w > -PI && w <= PI);
        let turns = (x - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() <= 1e-9);
    }

    #[test]
    fn masks_store_wrapped_phase(values in prop::collection::vec(-50.0..50.0f64, 64 * 64)) {
        let mask = PhaseMask::new(Grid::new(64, 0.1).unwrap(), values).unwrap();
        prop_assert!(mask.phase().iter().all(|&p| p > -PI && p <= PI));
    }

    #[test]
    fn fried_parameter_follows_the_power_law(cn2 in 1e-14..1e-10f64, factor in 1.1..10.0f64) {
        let spec = TurbulenceSpec::new(633e-6, 1000.0, cn2, 2.0 * PI / 1000.0, 30.0).unwrap();
        let r0 = fried_parameter(&spec);
        let scaled = fried_parameter(&spec.with_cn2(cn2 * factor));
        prop_assert!((scaled / r0 - factor.powf(-0.6)).abs() <= 1e-12);
    }
}
