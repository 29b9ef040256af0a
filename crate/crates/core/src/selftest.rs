//! Acceptance checks against the closed-form oracles.
//!
//! Every check returns the worst measured quantity next to the threshold it is held to.
//! Thresholds follow [`Tolerances`], so tightening the tolerances tightens the checks.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boundary::{
    build_frame_a, normalize_selfadjoint_pair, relation_angle, validate_nevanlinna_pair, BoundaryParameter,
};
use crate::error::{Error, Result};
use crate::linalg::{c, cr, eye, herm_fn, max_abs, rows, CMat, I};
use crate::oracle::{DiracOracle, DiracTau, ExampleSystem, FdProblem};
use crate::propagate::{propagate, wronskian_residual, IntegratorOptions};
use crate::spectral::{
    admissibility_check, extract_atoms, fourier_transform, inverse_transform, parseval_defect, stieltjes_invert, Atom,
    SpectralMeasure, StieltjesOptions,
};
use crate::sysdef::{SymmetricSystem, WeightedFunction};
use crate::tolerances::Tolerances;
use crate::weyl::{frame_shift_check, l2delta_norm_sq, MFunction, WeylProblem};

pub const CRITERIA: usize = 10;

const SEED: u64 = 0x5eed_0001;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Worst value of the primary quantity.
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<28} {}  measured {:.3e} threshold {:.3e}  {:.1}s  {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.measured,
            self.threshold,
            self.seconds,
            self.detail
        )
    }
}

struct Outcome {
    passed: bool,
    measured: f64,
    threshold: f64,
    detail: String,
}

impl Outcome {
    fn below(measured: f64, threshold: f64, detail: String) -> Self {
        Outcome { passed: measured <= threshold, measured, threshold, detail }
    }

    fn and(mut self, ok: bool, why: &str) -> Self {
        if !ok {
            self.passed = false;
            self.detail = format!("{}; {why}", self.detail);
        }
        self
    }
}

pub fn name(id: usize) -> &'static str {
    match id {
        1 => "example m-function",
        2 => "example spectral density",
        3 => "dirac m-function",
        4 => "dirac atoms",
        5 => "identities",
        6 => "resolvent",
        7 => "transform round trip",
        8 => "admissibility",
        9 => "frame change",
        10 => "boundary parameters",
        _ => "unknown",
    }
}

/// Run one criterion (1..=10).
pub fn run(id: usize, tol: &Tolerances) -> CriterionResult {
    let start = Instant::now();
    let (out, limit) = match id {
        1 => (criterion_1(tol), Some(30.0)),
        2 => (criterion_2(tol), Some(60.0)),
        3 => (criterion_3(tol), Some(10.0)),
        4 => (criterion_4(tol), None),
        5 => (criterion_5(tol), None),
        6 => (criterion_6(tol), None),
        7 => (criterion_7(tol), None),
        8 => (criterion_8(tol), None),
        9 => (criterion_9(tol), None),
        10 => (criterion_10(tol), None),
        _ => (Err(Error::Domain(format!("no criterion {id}"))), None),
    };
    let seconds = start.elapsed().as_secs_f64();
    let out = match out {
        Ok(o) => o,
        Err(e) => Outcome { passed: false, measured: f64::NAN, threshold: f64::NAN, detail: format!("error: {e}") },
    };
    let out = match limit {
        Some(l) => out.and(seconds <= l, &format!("took longer than {l}s")),
        None => out,
    };
    CriterionResult { id, name: name(id), passed: out.passed, measured: out.measured, threshold: out.threshold, detail: out.detail, seconds }
}

pub fn run_all(tol: &Tolerances) -> Vec<CriterionResult> {
    (1..=CRITERIA).map(|id| run(id, tol)).collect()
}

fn rel_err(got: &CMat, want: &CMat) -> f64 {
    max_abs(&(got - want)) / max_abs(want).max(1e-300)
}

fn upper_grid() -> Vec<Complex64> {
    let mut v = Vec::new();
    for im in [0.3, 0.9, 1.5, 2.1] {
        for re in [-3.0, -1.5, 0.0, 1.5, 3.0] {
            v.push(c(re, im));
        }
    }
    v
}

/// Minimal m of the example against its closed form.
fn criterion_1(tol: &Tolerances) -> Result<Outcome> {
    let ex = ExampleSystem::default();
    let p = Arc::new(ex.problem(tol));
    let m = p.m_function_singular_minimal()?;
    let mut worst = 0.0f64;
    for lam in upper_grid() {
        worst = worst.max(rel_err(&m.eval(lam)?, &ex.m(lam)?));
    }
    Ok(Outcome::below(worst, 1e-6, "20 points in the upper half-plane".into()))
}

fn density_error(ex: &ExampleSystem, s: &SpectralMeasure) -> f64 {
    s.density_grid.iter().zip(&s.density_values).map(|(&x, d)| max_abs(&(d - ex.sigma_density(x)))).fold(0.0, f64::max)
}

/// Σ′ of the example from its closed-form m with the configured ε schedule, and from the
/// computed m with a coarse schedule.
fn criterion_2(tol: &Tolerances) -> Result<Outcome> {
    let ex = ExampleSystem::default();
    let window = (-PI, PI);
    let e2 = ex.clone();
    let closed = MFunction::new(2, "closed form", move |l| e2.m(l));
    let opts = StieltjesOptions::default().with_eps(tol.eps_schedule.clone());
    let s = stieltjes_invert(&closed, window, &opts)?;
    let err_closed = density_error(&ex, &s);

    let mut num_tol = tol.clone();
    num_tol.tol_ode = tol.tol_ode * 100.0;
    let p = Arc::new(ex.problem(&num_tol));
    let m = p.m_function_singular_minimal()?;
    let opts = StieltjesOptions { initial_points: 33, refine_tol: 1e-2, ..StieltjesOptions::default().with_eps(vec![0.2, 0.1, 0.05]) };
    let s_num = stieltjes_invert(&m, window, &opts)?;
    let err_num = density_error(&ex, &s_num);
    let atoms = s.atoms.len() + s_num.atoms.len();
    let worst = err_closed.max(err_num);
    Ok(Outcome::below(
        worst,
        1e-3,
        format!("closed form {err_closed:.2e} ({} pts), computed m {err_num:.2e} ({} pts)", s.density_grid.len(), s_num.density_grid.len()),
    )
    .and(atoms == 0, "spurious atoms"))
}

fn dirac_taus() -> [DiracOracle; 2] {
    [DiracOracle::new(DiracTau::Canonical), DiracOracle::new(DiracTau::Swapped)]
}

/// tan λ and −cot λ on both half-planes.
fn criterion_3(tol: &Tolerances) -> Result<Outcome> {
    let p = Arc::new(DiracOracle::problem(tol));
    let mut pts = Vec::new();
    for k in 0..10 {
        let re = -4.3 + 0.93 * k as f64;
        for im in [0.35, -0.35, 1.1, -1.9, 2.6] {
            pts.push(c(re, im));
        }
    }
    let mut worst = 0.0f64;
    for o in dirac_taus() {
        let m = p.m_function(&o.boundary_parameter())?;
        for &lam in &pts {
            let got = m.eval(lam)?[(0, 0)];
            let want = o.m(lam);
            worst = worst.max((got - want).norm() / want.norm().max(1e-300));
        }
    }
    Ok(Outcome::below(worst, tol.tol_id, format!("{} points per boundary parameter", pts.len())))
}

/// Eigenvalues and unit masses of the Dirac system on [0, 20].
fn criterion_4(tol: &Tolerances) -> Result<Outcome> {
    let p = Arc::new(DiracOracle::problem(tol));
    let o = DiracOracle::new(DiracTau::Canonical);
    let m = p.m_function(&o.boundary_parameter())?;
    let window = (0.0, 20.0);
    let atoms = extract_atoms(&m, window, &StieltjesOptions::default())?;
    let want = o.eigenvalues_in(window.0, window.1);
    if atoms.len() != want.len() {
        return Ok(Outcome {
            passed: false,
            measured: f64::INFINITY,
            threshold: 1e-6,
            detail: format!("found {} atoms, expected {}", atoms.len(), want.len()),
        });
    }
    let loc = atoms.iter().zip(&want).map(|(a, w)| (a.s - w).abs()).fold(0.0, f64::max);
    let mass = atoms.iter().map(|a| (a.mass[(0, 0)] - o.mass()).norm()).fold(0.0, f64::max);
    Ok(Outcome::below(loc, 1e-6, format!("{} atoms, mass error {mass:.2e}", atoms.len())).and(mass <= 1e-4, "mass error above 1e-4"))
}

/// Dirac system with a randomly rotated J-unitary completion of U.
fn random_dirac_frame(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(WeylProblem, BoundaryParameter)> {
    let theta: f64 = rng.gen_range(-PI..PI);
    let b: f64 = rng.gen_range(-1.0..1.0);
    let (cs, sn) = (theta.cos(), theta.sin());
    let rot = CMat::from_row_slice(2, 2, &[cr(cs), cr(-sn), cr(sn), cr(cs)]);
    let shear = CMat::from_row_slice(2, 2, &[cr(1.0), cr(b), cr(0.0), cr(1.0)]);
    let ut = rot * shear;
    let fa = build_frame_a(DiracOracle::decomp(), &rows(&ut, 1, 1), Some(&ut), tol)?;
    let p = WeylProblem::new(DiracOracle::system(), fa, DiracOracle::frame_b(tol), tol.clone());
    let bt = CMat::from_element(1, 1, cr(rng.gen_range(-1.2..1.2)));
    Ok((p, BoundaryParameter::from_selfadjoint(&bt, tol)?))
}

struct IdentityWorst {
    wronskian: f64,
    kernel: f64,
    herglotz: f64,
    nevanlinna: f64,
}

fn identity_sweep(p: &WeylProblem, tau: &BoundaryParameter, xs: &[f64], horizon: f64, w: &mut IdentityWorst) -> Result<()> {
    let lams: Vec<Complex64> = (0..20).map(|k| c(-3.0 + 0.3 * k as f64, 0.2 + 0.1 * (k % 7) as f64)).collect();
    for &l in &lams {
        w.herglotz = w.herglotz.min(p.herglotz_defect(tau, l)?);
        w.kernel = w.kernel.max(p.kernel_identity_residual(tau, l, xs)?);
    }
    for k in 0..5 {
        let (mu, la) = (lams[3 * k], lams[3 * k + 1]);
        w.nevanlinna = w.nevanlinna.max(max_abs(&p.nevanlinna_identity_residual(tau, mu, la)?));
        w.nevanlinna = w.nevanlinna.max(max_abs(&p.nevanlinna_identity_residual(tau, mu, la.conj())?));
    }
    let sys = p.sys();
    let opts = IntegratorOptions::from_tolerances(p.tol());
    let n = sys.n();
    for l in [c(0.7, 0.4), c(-2.1, 1.3)] {
        let y = propagate(sys, l, &eye(n), sys.a, horizon, &opts)?;
        let ym = propagate(sys, l.conj(), &eye(n), sys.a, horizon, &opts)?;
        w.wronskian = w.wronskian.max(wronskian_residual(sys.j(), &y, &ym));
    }
    Ok(())
}

/// Wronskian, Green kernel, Herglotz and the Nevanlinna identity on every oracle system.
fn criterion_5(tol: &Tolerances) -> Result<Outcome> {
    let mut w = IdentityWorst { wronskian: 0.0, kernel: 0.0, herglotz: 0.0, nevanlinna: 0.0 };
    let dirac = DiracOracle::problem(tol);
    let xs = [0.0, 0.3, 0.7, 1.0];
    for o in dirac_taus() {
        identity_sweep(&dirac, &o.boundary_parameter(), &xs, 1.0, &mut w)?;
    }
    let ex = ExampleSystem::default();
    identity_sweep(&ex.problem(tol), &BoundaryParameter::canonical(0), &[0.0, 0.7, 3.0, 7.5], 10.0, &mut w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (p, tau) = random_dirac_frame(&mut rng, tol)?;
    identity_sweep(&p, &tau, &xs, 1.0, &mut w)?;

    let wr_t = 50.0 * tol.tol_ode;
    let nev_t = 10.0 * tol.tol_id;
    let detail = format!(
        "wronskian {:.2e}/{wr_t:.0e}, kernel {:.2e}/{:.0e}, herglotz {:.2e}/{:.0e}, nevanlinna {:.2e}/{nev_t:.0e}",
        w.wronskian, w.kernel, tol.tol_id, w.herglotz, -tol.tol_id, w.nevanlinna
    );
    // report the worst ratio to its threshold
    let ratio = (w.wronskian / wr_t).max(w.kernel / tol.tol_id).max(-w.herglotz / tol.tol_id).max(w.nevanlinna / nev_t);
    Ok(Outcome::below(ratio, 1.0, detail))
}

/// Random smooth vector function: a few complex Fourier modes.
fn random_modes(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, f64, Complex64)> {
    (0..3 * n)
        .map(|k| (k % n, rng.gen_range(0.2..4.0), c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
        .collect()
}

fn eval_modes(modes: &[(usize, f64, Complex64)], n: usize, t: f64) -> CMat {
    let mut v = CMat::zeros(n, 1);
    for &(row, freq, amp) in modes {
        v[(row, 0)] += amp * (freq * t).cos() + amp * I * (0.5 * freq * t).sin();
    }
    v
}

fn bump(t: f64, lo: f64, hi: f64) -> f64 {
    let x = (2.0 * t - lo - hi) / (hi - lo);
    if x.abs() < 1.0 {
        (-1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Resolvent of both oracles: ODE residual, boundary conditions and, for the Dirac system,
/// agreement with a finite-difference solve.
fn criterion_6(tol: &Tolerances) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut ode = 0.0f64;
    let mut bc = 0.0f64;
    let mut fd = 0.0f64;
    let dirac = DiracOracle::problem(tol);
    let sys = DiracOracle::system();
    let tgrid = grid(0.0, 1.0, 4001);
    for trial in 0..5 {
        let o = dirac_taus()[trial % 2];
        let tau = o.boundary_parameter();
        let modes = random_modes(&mut rng, 2);
        let f = WeightedFunction::from_fn(tgrid.clone(), |t| eval_modes(&modes, 2, t))?;
        let lam = random_lambda(&mut rng);
        let out = dirac.apply_resolvent(&tau, &f, lam)?;
        let norm = l2delta_norm_sq(&sys, &f)?.sqrt();
        ode = ode.max(dirac.resolvent_residual(&out, &f).into_iter().fold(0.0, f64::max) / norm);
        bc = bc.max(dirac.resolvent_boundary_residual(&tau, &out)?.max());
        let (c0, c1) = tau.at(lam);
        let fdp = FdProblem { sys: &sys, utilde: eye(2), xb: eye(2), c0, c1 };
        let (nodes, ys) = fdp.resolvent(lam, &|t| eval_modes(&modes, 2, t), 200)?;
        for (k, y) in ys.iter().enumerate() {
            debug_assert!((nodes[k] - tgrid[20 * k]).abs() < 1e-12);
            fd = fd.max(max_abs(&(y - &out.y.values[20 * k])) / norm);
        }
    }
    let ex = ExampleSystem::default();
    let p = ex.problem(tol);
    let esys = ex.system();
    let tau = BoundaryParameter::canonical(0);
    let eg = grid(0.0, 6.0, 4001);
    for _ in 0..5 {
        let modes = random_modes(&mut rng, 3);
        let f = WeightedFunction::from_fn(eg.clone(), |t| eval_modes(&modes, 3, t) * cr(bump(t, 0.5, 5.5)))?;
        let lam = random_lambda(&mut rng);
        let out = p.apply_resolvent(&tau, &f, lam)?;
        let norm = l2delta_norm_sq(&esys, &f)?.sqrt();
        ode = ode.max(p.resolvent_residual(&out, &f).into_iter().fold(0.0, f64::max) / norm);
        bc = bc.max(p.resolvent_boundary_residual(&tau, &out)?.max());
    }
    let worst = ode.max(bc).max(fd);
    Ok(Outcome::below(worst, 1e-6, format!("ode {ode:.2e} (relative to |f|), boundary {bc:.2e}, finite differences {fd:.2e}")))
}

fn random_lambda(rng: &mut ChaCha8Rng) -> Complex64 {
    let im: f64 = rng.gen_range(0.3..1.5);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    c(rng.gen_range(-3.0..3.0), sign * im)
}

/// Transform and inverse transform of a smooth function with the Dirac spectral measure.
fn criterion_7(tol: &Tolerances) -> Result<Outcome> {
    let p = DiracOracle::problem(tol);
    let o = DiracOracle::new(DiracTau::Canonical);
    let window = (-200.0, 200.0);
    let atoms = o
        .eigenvalues_in(window.0, window.1)
        .into_iter()
        .map(|s| Atom { s, mass: CMat::from_element(1, 1, cr(o.mass())) })
        .collect();
    let sigma = SpectralMeasure::from_atoms(1, window, atoms);
    let tgrid = grid(0.0, 1.0, 2001);
    let f = WeightedFunction::from_fn(tgrid.clone(), |t| {
        let b = bump(t, 0.02, 0.98);
        CMat::from_column_slice(2, 1, &[c(b, 0.3 * b * t), cr(b * (3.0 * t).sin())])
    })?;
    let fhat = fourier_transform(&p, &f, &sigma.sample_grid())?;
    let back = inverse_transform(&p, &fhat, &sigma, &tgrid)?;
    let scale = f.values.iter().map(max_abs).fold(0.0, f64::max);
    let round = back.values.iter().zip(&f.values).map(|(a, b)| max_abs(&(a - b))).fold(0.0, f64::max) / scale;
    let rep = parseval_defect(&p, &f, &sigma)?;
    let rel = rep.defect / rep.norm_sq;
    Ok(Outcome::below(round, 1e-4, format!("parseval defect {:.2e} of |f|^2 = {:.3e}", rep.defect, rep.norm_sq))
        .and(rel <= 1e-3, "parseval defect above 1e-3 |f|^2")
        .and(rep.defect >= -1e-6, "negative parseval defect"))
}

/// SF₀ limits for the Dirac system along iy, with M₄ = i tanh y.
fn criterion_8(tol: &Tolerances) -> Result<Outcome> {
    let ys = [1e2, 1e3, 1e4, 1e5, 1e6];
    let m4 = |l: Complex64| Ok(CMat::from_element(1, 1, I * l.im.tanh()));
    let mut lim = 0.0f64;
    let mut growth = 0.0f64;
    let mut all = true;
    for o in dirac_taus() {
        let r = admissibility_check(m4, &o.boundary_parameter(), &ys, tol.tau_lim)?;
        lim = lim.max(r.limit1).max(r.limit2).max(r.limit_m4_over_y);
        for (&y, g) in ys.iter().zip(&r.growth) {
            let want = y * y.tanh();
            growth = growth.max((g - want).abs() / want);
        }
        all &= r.sf0 && r.all_tau_sf0;
    }
    // the closed form above agrees with the computed M₄ where both are representable
    let p = DiracOracle::problem(tol);
    let mut blocks = 0.0f64;
    for y in [0.5, 2.0, 8.0, 20.0] {
        let b = p.weyl_blocks(I * y)?;
        blocks = blocks.max((b.m4[(0, 0)] - I * y.tanh()).norm());
    }
    Ok(Outcome::below(lim, tol.tau_lim, format!("growth error {growth:.2e}, computed M4 error {blocks:.2e}"))
        .and(all, "not in SF0")
        .and(growth <= 1e-6, "growth of Im M4 off")
        .and(blocks <= tol.tol_id, "computed M4 disagrees with closed form"))
}

/// m under two completions of the same U differs by a constant Hermitian B·P_H.
fn criterion_9(tol: &Tolerances) -> Result<Outcome> {
    let lams = [c(0.0, 1.0), c(0.5, 0.8), c(-1.2, 0.3)];
    let b = 0.37;
    let dsys = DiracOracle::system();
    let u2 = CMat::from_row_slice(2, 2, &[cr(1.0), cr(b), cr(0.0), cr(1.0)]);
    let d = frame_shift_check(
        &dsys,
        &rows(&eye(2), 1, 1),
        &eye(2),
        &u2,
        &DiracOracle::frame_b(tol),
        &BoundaryParameter::canonical(1),
        &lams,
        tol,
    )?;
    let ex = ExampleSystem::default();
    let esys: SymmetricSystem = ex.system();
    let mut u3 = eye(3);
    u3[(0, 2)] = cr(b);
    let e = frame_shift_check(
        &esys,
        &rows(&eye(3), 1, 2),
        &eye(3),
        &u3,
        ex.problem(tol).frame_b(),
        &BoundaryParameter::canonical(0),
        &lams,
        tol,
    )?;
    let worst = d.variation.max(e.variation);
    Ok(Outcome::below(
        worst,
        tol.tol_id,
        format!("dirac shift {:.4}, example shift {:.4}", d.shift[(0, 0)].re, e.shift[(0, 0)].re),
    ))
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMat {
    let a = CMat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    (&a + a.adjoint()) * cr(0.5 * scale)
}

/// Normalizing self-adjoint pairs and classifying Nevanlinna pairs.
fn criterion_10(tol: &Tolerances) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
    let mut angle = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=3);
        let bm = random_hermitian(&mut rng, n, 1.0);
        let x = CMat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))) + eye(n) * cr(2.0);
        let c0 = &x * herm_fn(&bm, f64::cos);
        let c1 = &x * herm_fn(&bm, f64::sin);
        let b = normalize_selfadjoint_pair(&c0, &c1, tol)?;
        angle = angle.max(relation_angle(&c0, &c1, &herm_fn(&b, f64::cos), &herm_fn(&b, f64::sin)));
    }
    let lams: Vec<Complex64> = vec![c(0.3, 1.0), c(-2.0, 0.5), c(1.0, -0.7), c(0.0, 3.0)];
    let good = [
        BoundaryParameter::canonical(2),
        BoundaryParameter::swapped(2),
        BoundaryParameter::from_selfadjoint(&random_hermitian(&mut rng, 2, 1.0), tol)?,
        BoundaryParameter::holomorphic(1, Arc::new(|l| (eye(1) * l, -eye(1))), "graph of lambda"),
    ];
    let bad = [
        BoundaryParameter::holomorphic(1, Arc::new(|l: Complex64| (eye(1) * l.conj(), -eye(1))), "conjugate"),
        BoundaryParameter::holomorphic(1, Arc::new(|l| (eye(1) * l, eye(1))), "wrong sign"),
        BoundaryParameter::holomorphic(2, Arc::new(|_| (eye(2), eye(2) * I)), "non-symmetric constant"),
    ];
    let good_ok = good.iter().filter(|t| validate_nevanlinna_pair(t, &lams, tol).valid).count();
    let bad_ok = bad.iter().filter(|t| !validate_nevanlinna_pair(t, &lams, tol).valid).count();
    Ok(Outcome::below(angle, tol.tau_sub, format!("valid {good_ok}/{}, rejected {bad_ok}/{}", good.len(), bad.len()))
        .and(good_ok == good.len() && bad_ok == bad.len(), "pair classification wrong"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_criteria_pass() {
        let tol = Tolerances::default();
        for id in [3, 8, 9, 10] {
            let r = run(id, &tol);
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn unknown_criterion_fails() {
        let r = run(11, &Tolerances::default());
        assert!(!r.passed);
        assert!(r.detail.contains("no criterion"));
    }
}
