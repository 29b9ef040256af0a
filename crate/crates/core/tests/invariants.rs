use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;
use symm_spectra::boundary::{normalize_selfadjoint_pair, relation_angle, BoundaryParameter};
use symm_spectra::linalg::{c, cr, herm_fn, max_abs, min_eig_herm, CMat, CVec};
use symm_spectra::oracle::DiracOracle;
use symm_spectra::spectral::{fourier_transform, sigma_inner, Atom, SpectralMeasure, TransformResult};
use symm_spectra::sysdef::WeightedFunction;
use symm_spectra::Tolerances;

fn upper() -> impl Strategy<Value = Complex64> {
    (-4.0..4.0f64, 0.1..3.0f64).prop_map(|(re, im)| c(re, im))
}

fn atoms() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-5.0..5.0f64, 0.01..2.0f64, -1.0..1.0f64), 1..6)
}

fn measure(raw: &[(f64, f64, f64)]) -> SpectralMeasure {
    let atoms = raw
        .iter()
        .map(|&(s, a, b)| {
            // rank-one mass v v* with v = (√a, b)
            let v = CMat::from_column_slice(2, 1, &[cr(a.sqrt()), c(0.0, b)]);
            Atom { s, mass: &v * v.adjoint() }
        })
        .collect();
    SpectralMeasure::from_atoms(2, (-6.0, 6.0), atoms)
}

fn values_on(grid: &[f64], seed: f64) -> TransformResult {
    TransformResult {
        s_grid: grid.to_vec(),
        values: grid.iter().map(|&s| CVec::from_vec(vec![c((seed * s).cos(), s), c(seed, (s + seed).sin())])).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dirac_m_is_herglotz_and_symmetric(lam in upper(), b in -1.5..1.5f64) {
        let tol = Tolerances::default();
        let p = DiracOracle::problem(&tol);
        let tau = BoundaryParameter::from_selfadjoint(&CMat::from_element(1, 1, cr(b)), &tol).unwrap();
        prop_assert!(p.herglotz_defect(&tau, lam).unwrap() >= -tol.tol_id);
        let up = p.m_value(&tau, lam).unwrap();
        let down = p.m_value(&tau, lam.conj()).unwrap();
        prop_assert!(max_abs(&(down.adjoint() - &up)) <= tol.tol_id * max_abs(&up).max(1.0));
    }

    #[test]
    fn base_solve_is_memoized(lam in upper()) {
        let p = DiracOracle::problem(&Tolerances::default());
        let a = p.base_solve(lam).unwrap();
        let b = p.base_solve(lam).unwrap();
        prop_assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn distribution_is_monotone(raw in atoms(), s1 in -6.0..6.0f64, ds in 0.0..6.0f64) {
        let sigma = measure(&raw);
        let inc = sigma.increment(s1, (s1 + ds).min(6.0));
        prop_assert!(min_eig_herm(&inc) >= -1e-12);
        prop_assert!(sigma.monotonicity_defect() >= -1e-12);
    }

    #[test]
    fn inner_product_is_conjugate_symmetric(raw in atoms(), u in -2.0..2.0f64, v in -2.0..2.0f64) {
        let sigma = measure(&raw);
        let grid = sigma.sample_grid();
        let g = values_on(&grid, u);
        let h = values_on(&grid, v);
        let gh = sigma_inner(&g, &h, &sigma).unwrap();
        let hg = sigma_inner(&h, &g, &sigma).unwrap();
        prop_assert!((gh - hg.conj()).norm() <= 1e-12 * gh.norm().max(1.0));
        prop_assert!(sigma_inner(&g, &g, &sigma).unwrap().re >= -1e-12);
    }

    #[test]
    fn transform_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, w in 0.5..6.0f64) {
        let p = DiracOracle::problem(&Tolerances::default());
        let grid: Vec<f64> = (0..201).map(|k| k as f64 / 200.0).collect();
        let f = WeightedFunction::from_fn(grid.clone(), |t| CMat::from_column_slice(2, 1, &[cr(t), cr((w * t).sin())])).unwrap();
        let g = WeightedFunction::from_fn(grid.clone(), |t| CMat::from_column_slice(2, 1, &[c(0.0, (w * t).cos()), cr(1.0)])).unwrap();
        let combo = WeightedFunction::new(
            grid.clone(),
            f.values.iter().zip(&g.values).map(|(x, y)| x * cr(a) + y * c(0.0, b)).collect(),
        ).unwrap();
        let s = [-3.0, 0.0, 1.7, 5.2];
        let ff = fourier_transform(&p, &f, &s).unwrap();
        let gg = fourier_transform(&p, &g, &s).unwrap();
        let cc = fourier_transform(&p, &combo, &s).unwrap();
        for k in 0..s.len() {
            let want = &ff.values[k] * cr(a) + &gg.values[k] * c(0.0, b);
            prop_assert!((&cc.values[k] - &want).norm() <= 1e-10 * want.norm().max(1.0));
        }
    }

    #[test]
    fn normalized_pair_spans_the_same_relation(d in prop::collection::vec(-1.5..1.5f64, 3), x in prop::collection::vec(-1.0..1.0f64, 4)) {
        let tol = Tolerances::default();
        let b = CMat::from_row_slice(2, 2, &[cr(d[0]), c(d[1], d[2]), c(d[1], -d[2]), cr(-d[0])]);
        let xm = CMat::from_row_slice(2, 2, &[cr(2.0 + x[0]), cr(x[1]), cr(x[2]), cr(2.0 + x[3])]);
        let c0 = &xm * herm_fn(&b, f64::cos);
        let c1 = &xm * herm_fn(&b, f64::sin);
        let bn = normalize_selfadjoint_pair(&c0, &c1, &tol).unwrap();
        prop_assert!(max_abs(&(&bn - bn.adjoint())) < 1e-12);
        prop_assert!(relation_angle(&c0, &c1, &herm_fn(&bn, f64::cos), &herm_fn(&bn, f64::sin)) <= tol.tau_sub);
    }
}
