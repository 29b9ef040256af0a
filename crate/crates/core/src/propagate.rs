//! Propagation of matrix solutions of J y′ − B y = λ Δ y.
//!
//! The integrator is Dormand–Prince 5(4) with its native continuous extension,
//! so off-grid values and derivatives are available between accepted steps.

use num_complex::Complex64;

use crate::boundary::BoundaryFrameA;
use crate::error::{Error, Result};
use crate::linalg::{cr, max_abs, CMat};
use crate::quadrature::{gauss_legendre_matrix, merge_cuts};
use crate::sysdef::SymmetricSystem;
use crate::tolerances::Tolerances;

// Dormand–Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Keep the continuous extension of every step. Endpoint-only runs skip it.
    pub dense: bool,
}

impl IntegratorOptions {
    pub fn from_tolerances(tol: &Tolerances) -> Self {
        IntegratorOptions { rtol: tol.tol_ode, atol: tol.tol_ode, max_steps: 2_000_000, dense: true }
    }

    pub fn endpoint_only(mut self) -> Self {
        self.dense = false;
        self
    }
}

#[derive(Debug, Clone)]
struct Step {
    t0: f64,
    h: f64,
    cont: [CMat; 5],
}

impl Step {
    fn eval(&self, t: f64) -> CMat {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let s = 1.0 - th;
        let [c0, c1, c2, c3, c4] = &self.cont;
        let inner = c3 + c4 * cr(s);
        let r = c2 + inner * cr(th);
        c0 + (c1 + r * cr(s)) * cr(th)
    }

    fn deriv(&self, t: f64) -> CMat {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let s = 1.0 - th;
        let [_, c1, c2, c3, c4] = &self.cont;
        let q = c3 + c4 * cr(s);
        let dq = -c4;
        let r = c2 + &q * cr(th);
        let dr = &q + dq * cr(th);
        let sv = c1 + &r * cr(s);
        let ds = -&r + dr * cr(s);
        (sv + ds * cr(th)) * cr(1.0 / self.h)
    }
}

/// A matrix-valued solution with a continuous extension on [t_start, t_end].
#[derive(Debug, Clone)]
pub struct OperatorSolution {
    lambda: Complex64,
    t_start: f64,
    t_end: f64,
    y_start: CMat,
    y_end: CMat,
    steps: Vec<Step>,
    /// Integrated in s = −t; all public accessors use t.
    mirrored: bool,
}

/// Anything that can be evaluated pointwise as an n×k matrix function.
pub trait Sampled {
    fn eval(&self, t: f64) -> CMat;
    /// Points where the representation changes (used as quadrature cuts).
    fn cuts(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl Sampled for OperatorSolution {
    fn eval(&self, t: f64) -> CMat {
        self.value_at(t)
    }
    fn cuts(&self) -> Vec<f64> {
        self.grid()
    }
}

impl<F: Fn(f64) -> CMat> Sampled for F {
    fn eval(&self, t: f64) -> CMat {
        self(t)
    }
}

impl OperatorSolution {
    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    /// Left end of the covered interval.
    pub fn t_start(&self) -> f64 {
        if self.mirrored {
            -self.t_end
        } else {
            self.t_start
        }
    }

    /// Right end of the covered interval.
    pub fn t_end(&self) -> f64 {
        if self.mirrored {
            -self.t_start
        } else {
            self.t_end
        }
    }

    /// True for solutions integrated from right to left.
    pub fn is_backward(&self) -> bool {
        self.mirrored
    }

    pub fn nrows(&self) -> usize {
        self.y_start.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.y_start.ncols()
    }

    /// Value at t_start().
    pub fn initial(&self) -> &CMat {
        if self.mirrored {
            &self.y_end
        } else {
            &self.y_start
        }
    }

    /// Value at t_end().
    pub fn terminal(&self) -> &CMat {
        if self.mirrored {
            &self.y_start
        } else {
            &self.y_end
        }
    }

    pub fn has_dense_output(&self) -> bool {
        !self.steps.is_empty() || self.t_start == self.t_end
    }

    /// Accepted step boundaries.
    pub fn grid(&self) -> Vec<f64> {
        let mut g: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        g.push(self.t_end);
        if self.steps.is_empty() {
            g.insert(0, self.t_start);
        }
        if self.mirrored {
            g = g.into_iter().rev().map(|s| -s).collect();
        }
        g
    }

    fn locate(&self, t: f64) -> usize {
        match self.steps.binary_search_by(|s| s.t0.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Value at t via the continuous extension; exact at the end points.
    pub fn value_at(&self, t: f64) -> CMat {
        let t = if self.mirrored { -t } else { t };
        if t == self.t_start {
            return self.y_start.clone();
        }
        if t == self.t_end {
            return self.y_end.clone();
        }
        assert!(
            !self.steps.is_empty(),
            "solution was propagated without dense output; only end points are available"
        );
        self.steps[self.locate(t)].eval(t)
    }

    pub fn derivative_at(&self, t: f64) -> CMat {
        assert!(!self.steps.is_empty(), "solution has no dense output");
        if self.mirrored {
            -self.steps[self.locate(-t)].deriv(-t)
        } else {
            self.steps[self.locate(t)].deriv(t)
        }
    }

    /// Y·c, reusing the step structure (the continuous extension is linear).
    pub fn right_mul(&self, c: &CMat) -> OperatorSolution {
        OperatorSolution {
            lambda: self.lambda,
            t_start: self.t_start,
            t_end: self.t_end,
            y_start: &self.y_start * c,
            y_end: &self.y_end * c,
            steps: self
                .steps
                .iter()
                .map(|s| Step {
                    t0: s.t0,
                    h: s.h,
                    cont: [&s.cont[0] * c, &s.cont[1] * c, &s.cont[2] * c, &s.cont[3] * c, &s.cont[4] * c],
                })
                .collect(),
            mirrored: self.mirrored,
        }
    }

    /// Join backward pieces that cover adjacent intervals from right to left into one
    /// backward solution. Values must agree at the joints.
    pub fn concat_backward(pieces: Vec<OperatorSolution>) -> Result<OperatorSolution> {
        let (Some(first), Some(last)) = (pieces.first(), pieces.last()) else {
            return Err(Error::Domain("nothing to concatenate".into()));
        };
        if pieces.iter().any(|p| !p.mirrored) || pieces.windows(2).any(|w| w[0].t_end != w[1].t_start) {
            return Err(Error::Domain("pieces must be contiguous backward solutions".into()));
        }
        Ok(OperatorSolution {
            lambda: first.lambda,
            t_start: first.t_start,
            t_end: last.t_end,
            y_start: first.y_start.clone(),
            y_end: last.y_end.clone(),
            steps: pieces.iter().flat_map(|p| p.steps.iter().cloned()).collect(),
            mirrored: true,
        })
    }

    /// Restrict to [t_start, t], cutting the step containing t.
    ///
    /// Panics for backward solutions.
    pub fn truncated(&self, t: f64) -> OperatorSolution {
        assert!(!self.mirrored, "truncation of backward solutions is not supported");
        if t >= self.t_end {
            return self.clone();
        }
        let mut steps: Vec<Step> = self.steps.iter().filter(|s| s.t0 < t).cloned().collect();
        let y_end = self.value_at(t);
        if let Some(last) = steps.last_mut() {
            if last.t0 + last.h > t {
                let h = t - last.t0;
                *last = refit_step(last, h);
            }
        }
        OperatorSolution { lambda: self.lambda, t_start: self.t_start, t_end: t, y_start: self.y_start.clone(), y_end, steps, mirrored: false }
    }
}

/// Re-express the quartic continuous extension of `s` on the shorter step [t0, t0+h].
/// End values, end derivatives and the midpoint determine the quartic.
fn refit_step(s: &Step, h: f64) -> Step {
    let r = h / s.h;
    let p = |th: f64| s.eval(s.t0 + th * s.h);
    let y0 = p(0.0);
    let y1 = p(r);
    let f0 = s.deriv(s.t0) * cr(h);
    let f1 = s.deriv(s.t0 + h) * cr(h);
    let ymid = p(0.5 * r);
    let c1 = &y1 - &y0;
    let c2 = &f0 - &c1;
    let c3 = &c1 - &f1 - &c2;
    // P(1/2) = y0 + (c1 + (c2 + (c3 + c4/2)/2)/2)/2 fixes c4
    let base = &y0 + (&c1 + (&c2 + &c3 * cr(0.5)) * cr(0.5)) * cr(0.5);
    let c4 = (&ymid - base) * cr(16.0);
    Step { t0: s.t0, h, cont: [y0, c1, c2, c3, c4] }
}

/// Resumable integration of a matrix initial-value problem.
pub struct Propagator<'a> {
    sys: &'a SymmetricSystem,
    lambda: Complex64,
    opts: IntegratorOptions,
    t: f64,
    y: CMat,
    h: f64,
    steps_taken: usize,
    sol: OperatorSolution,
}


impl<'a> Propagator<'a> {
    pub fn new(sys: &'a SymmetricSystem, lambda: Complex64, init: &CMat, t0: f64, opts: &IntegratorOptions) -> Result<Self> {
        if init.nrows() != sys.n() {
            return Err(Error::Dimension(format!("initial value has {} rows, expected {}", init.nrows(), sys.n())));
        }
        Ok(Propagator {
            sys,
            lambda,
            opts: opts.clone(),
            t: t0,
            y: init.clone(),
            h: 0.0,
            steps_taken: 0,
            sol: OperatorSolution {
                lambda,
                t_start: t0,
                t_end: t0,
                y_start: init.clone(),
                y_end: init.clone(),
                steps: Vec::new(),
                mirrored: false,
            },
        })
    }

    /// Propagator running from `t0` towards smaller t. `time()` and `extend_to` use
    /// the mirrored variable s = −t.
    fn new_backward(sys: &'a SymmetricSystem, lambda: Complex64, init: &CMat, t0: f64, opts: &IntegratorOptions) -> Result<Self> {
        let mut p = Propagator::new(sys, lambda, init, -t0, opts)?;
        p.sol.mirrored = true;
        Ok(p)
    }

    fn generator(&self, t: f64) -> CMat {
        if self.sol.mirrored {
            -self.sys.generator(-t, self.lambda)
        } else {
            self.sys.generator(t, self.lambda)
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn current(&self) -> &CMat {
        &self.y
    }

    pub fn solution(&self) -> &OperatorSolution {
        &self.sol
    }

    pub fn into_solution(self) -> OperatorSolution {
        self.sol
    }

    /// Continue the integration up to `target`, honouring the system breakpoints.
    pub fn extend_to(&mut self, target: f64) -> Result<()> {
        if target <= self.t {
            return Ok(());
        }
        let sign = if self.sol.mirrored { -1.0 } else { 1.0 };
        let mut stops: Vec<f64> =
            self.sys.breakpoints().iter().map(|&b| sign * b).filter(|&b| b > self.t && b < target).collect();
        stops.sort_by(|x, y| x.partial_cmp(y).unwrap());
        stops.push(target);
        for stop in stops {
            self.segment(stop)?;
        }
        Ok(())
    }

    fn rhs(&self, t: f64, y: &CMat) -> CMat {
        self.generator(t) * y
    }

    fn segment(&mut self, t1: f64) -> Result<()> {
        let lam = self.lambda;
        let mut k1 = self.rhs(self.t, &self.y);
        let span = t1 - self.t;
        if self.h <= 0.0 {
            let a = max_abs(&self.generator(self.t));
            self.h = if a > 0.0 { (0.05 / a).min(span) } else { span };
        }
        let mut last_reject = false;
        while self.t < t1 {
            let remaining = t1 - self.t;
            let mut h = self.h.min(remaining);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::StepUnderflow { lambda: lam, t: self.t });
            }
            if self.steps_taken >= self.opts.max_steps {
                return Err(Error::TooManySteps { lambda: lam, t: self.t, max_steps: self.opts.max_steps });
            }
            self.steps_taken += 1;
            let t = self.t;
            let y = &self.y;
            let hc = cr(h);
            let k2 = self.rhs(t + C2 * h, &(y + &k1 * (hc * A21)));
            let k3 = self.rhs(t + C3 * h, &(y + (&k1 * cr(A31) + &k2 * cr(A32)) * hc));
            let k4 = self.rhs(t + C4 * h, &(y + (&k1 * cr(A41) + &k2 * cr(A42) + &k3 * cr(A43)) * hc));
            let k5 = self.rhs(
                t + C5 * h,
                &(y + (&k1 * cr(A51) + &k2 * cr(A52) + &k3 * cr(A53) + &k4 * cr(A54)) * hc),
            );
            let tn = if last { t1 } else { t + h };
            let k6 = self.rhs(
                tn,
                &(y + (&k1 * cr(A61) + &k2 * cr(A62) + &k3 * cr(A63) + &k4 * cr(A64) + &k5 * cr(A65)) * hc),
            );
            let ynew = y + (&k1 * cr(A71) + &k3 * cr(A73) + &k4 * cr(A74) + &k5 * cr(A75) + &k6 * cr(A76)) * hc;
            let k7 = self.rhs(tn, &ynew);
            let errm = (&k1 * cr(E1) + &k3 * cr(E3) + &k4 * cr(E4) + &k5 * cr(E5) + &k6 * cr(E6) + &k7 * cr(E7)) * hc;
            let mut acc = 0.0;
            for ((e, a), b) in errm.iter().zip(y.iter()).zip(ynew.iter()) {
                let sc = self.opts.atol + self.opts.rtol * a.norm().max(b.norm());
                acc += (e.norm() / sc).powi(2);
            }
            let err = (acc / errm.len().max(1) as f64).sqrt();
            if !err.is_finite() {
                self.h = h * 0.2;
                last_reject = true;
                continue;
            }
            if err <= 1.0 {
                if self.opts.dense {
                    let c1 = &ynew - y;
                    let c2 = &k1 * hc - &c1;
                    let c3 = &c1 - &k7 * hc - &c2;
                    let c4 = (&k1 * cr(D1) + &k3 * cr(D3) + &k4 * cr(D4) + &k5 * cr(D5) + &k6 * cr(D6) + &k7 * cr(D7)) * hc;
                    self.sol.steps.push(Step { t0: t, h: tn - t, cont: [y.clone(), c1, c2, c3, c4] });
                }
                self.t = tn;
                self.y = ynew;
                k1 = k7;
                let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 5.0);
                if last_reject {
                    fac = fac.min(1.0);
                }
                // the final clipped step says little about the natural step size
                if !last || h >= self.h {
                    self.h = h * fac;
                }
                last_reject = false;
            } else {
                let fac = (0.9 * err.powf(-0.2)).max(0.2);
                self.h = h * fac;
                last_reject = true;
            }
        }
        self.sol.t_end = self.t;
        self.sol.y_end = self.y.clone();
        Ok(())
    }
}

/// Integrate from `t0` down to `t1 < t0` with matrix value `init` at `t0`.
pub fn propagate_backward(
    sys: &SymmetricSystem,
    lambda: Complex64,
    init: &CMat,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<OperatorSolution> {
    let mut p = Propagator::new_backward(sys, lambda, init, t0, opts)?;
    p.extend_to(-t1)?;
    Ok(p.into_solution())
}

/// Integrate from `t0` to `t1` with matrix initial value `init`.
pub fn propagate(
    sys: &SymmetricSystem,
    lambda: Complex64,
    init: &CMat,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<OperatorSolution> {
    let mut p = Propagator::new(sys, lambda, init, t0, opts)?;
    p.extend_to(t1)?;
    Ok(p.into_solution())
}

fn check_beta(sys: &SymmetricSystem, beta: f64) -> Result<()> {
    if !(beta > sys.a && beta <= sys.b && beta.is_finite()) {
        return Err(Error::Domain(format!("truncation time {beta} outside ({}, {}]", sys.a, sys.b)));
    }
    Ok(())
}

/// Fundamental solution with Y(a, λ) = Ũ⁻¹.
pub fn fundamental_solution(
    sys: &SymmetricSystem,
    frame: &BoundaryFrameA,
    lambda: Complex64,
    beta: f64,
    tol: &Tolerances,
) -> Result<OperatorSolution> {
    check_beta(sys, beta)?;
    propagate(sys, lambda, frame.utilde_inv(), sys.a, beta, &IntegratorOptions::from_tolerances(tol))
}

/// φ_U with Ũ φ_U(a, λ) = (I; 0).
pub fn phi_solution(
    sys: &SymmetricSystem,
    frame: &BoundaryFrameA,
    lambda: Complex64,
    beta: f64,
    tol: &Tolerances,
) -> Result<OperatorSolution> {
    check_beta(sys, beta)?;
    propagate(sys, lambda, &frame.phi_initial(), sys.a, beta, &IntegratorOptions::from_tolerances(tol))
}

/// ψ with Ũ ψ(a, λ) = (−(i/2)P_Ĥ; −P_H).
pub fn psi_solution(
    sys: &SymmetricSystem,
    frame: &BoundaryFrameA,
    lambda: Complex64,
    beta: f64,
    tol: &Tolerances,
) -> Result<OperatorSolution> {
    check_beta(sys, beta)?;
    propagate(sys, lambda, &frame.psi_initial(), sys.a, beta, &IntegratorOptions::from_tolerances(tol))
}

/// max over the grid of ‖Y*(x, λ̄) J Y(x, λ) − J‖, where `y_mirror` is the solution at λ̄
/// with the same initial value.
pub fn wronskian_residual(j: &CMat, y: &OperatorSolution, y_mirror: &OperatorSolution) -> f64 {
    let hi = y.t_end().min(y_mirror.t_end());
    let mut grid = merge_cuts(&y.grid(), &y_mirror.grid(), y.t_start(), hi);
    // midpoints exercise the continuous extension as well
    let mids: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    grid.extend(mids);
    grid.iter()
        .map(|&t| max_abs(&(y_mirror.value_at(t).adjoint() * j * y.value_at(t) - j)))
        .fold(0.0, f64::max)
}

/// ‖J y′ − B y − λ Δ y‖ / (1 + ‖y‖) at time t, with y′ from the continuous extension.
pub fn ode_residual(sys: &SymmetricSystem, y: &OperatorSolution, t: f64) -> f64 {
    let v = y.value_at(t);
    let d = y.derivative_at(t);
    let r = sys.j() * d - sys.b_at(t) * &v - sys.delta_at(t) * &v * y.lambda();
    max_abs(&r) / (1.0 + max_abs(&v))
}

/// ∫_{t0}^{t1} z*(t) Δ(t) y(t) dt, 5-point Gauss–Legendre on the union of both step grids.
pub fn solution_gram(sys: &SymmetricSystem, y: &dyn Sampled, z: &dyn Sampled, t0: f64, t1: f64) -> CMat {
    let cuts = merge_cuts(&y.cuts(), &z.cuts(), t0, t1);
    let cuts = refine_cuts(&cuts, sys.breakpoints());
    gauss_legendre_matrix(&cuts, |t| z.eval(t).adjoint() * sys.delta_at(t) * y.eval(t))
        .unwrap_or_else(|| CMat::zeros(z.eval(t0).ncols(), y.eval(t0).ncols()))
}

fn refine_cuts(cuts: &[f64], extra: &[f64]) -> Vec<f64> {
    if cuts.len() < 2 {
        return cuts.to_vec();
    }
    let (lo, hi) = (cuts[0], *cuts.last().unwrap());
    merge_cuts(cuts, extra, lo, hi)
}

/// The pairing [y, z]_t = z*(t) J y(t).
pub fn form_at(j: &CMat, y: &dyn Sampled, z: &dyn Sampled, t: f64) -> CMat {
    z.eval(t).adjoint() * j * y.eval(t)
}

#[derive(Debug, Clone)]
pub struct LimitEstimate {
    pub value: CMat,
    /// Change between the last two extrapolated values.
    pub change: f64,
    pub levels: Vec<(f64, CMat)>,
}

/// Richardson-extrapolated limit of the sequence (β_k, v_k) as β_k → b.
pub fn extrapolate_limit(b: f64, levels: &[(f64, CMat)], tol: f64) -> Result<LimitEstimate> {
    let Some((_, last)) = levels.last() else {
        return Err(Error::LimitUndetermined { change: f64::INFINITY, tol });
    };
    if levels.len() == 1 {
        return Ok(LimitEstimate { value: last.clone(), change: 0.0, levels: levels.to_vec() });
    }
    let rich = |(b1, v1): &(f64, CMat), (b2, v2): &(f64, CMat)| -> CMat {
        if b.is_infinite() {
            // model v = L + c/β
            (v2 * cr(*b2) - v1 * cr(*b1)) * cr(1.0 / (b2 - b1))
        } else {
            // model v = L + c(b − β)
            let (d1, d2) = (b - b1, b - b2);
            (v2 * cr(d1) - v1 * cr(d2)) * cr(1.0 / (d1 - d2))
        }
    };
    let n = levels.len();
    let r_last = rich(&levels[n - 2], &levels[n - 1]);
    let change = if n >= 3 {
        let r_prev = rich(&levels[n - 3], &levels[n - 2]);
        max_abs(&(&r_last - &r_prev))
    } else {
        max_abs(&(&levels[n - 1].1 - &levels[n - 2].1))
    };
    let scale = max_abs(&r_last).max(1.0);
    if change > tol * scale {
        return Err(Error::LimitUndetermined { change, tol });
    }
    Ok(LimitEstimate { value: r_last, change, levels: levels.to_vec() })
}

/// [y, z]_b: the end-point value for a regular b, otherwise the extrapolated limit
/// of z*(β) J y(β) along `beta_schedule`.
pub fn b_form(
    sys: &SymmetricSystem,
    y: &dyn Sampled,
    z: &dyn Sampled,
    beta_schedule: &[f64],
    tol: &Tolerances,
) -> Result<LimitEstimate> {
    if sys.regular_b {
        let v = form_at(sys.j(), y, z, sys.b);
        return Ok(LimitEstimate { value: v.clone(), change: 0.0, levels: vec![(sys.b, v)] });
    }
    if beta_schedule.windows(2).any(|w| w[1] <= w[0]) || beta_schedule.is_empty() {
        return Err(Error::Domain("beta schedule must be non-empty and increasing".into()));
    }
    let levels: Vec<(f64, CMat)> = beta_schedule.iter().map(|&b| (b, form_at(sys.j(), y, z, b))).collect();
    extrapolate_limit(sys.b, &levels, tol.limit_tol)
}

/// Geometric truncation schedule β_k = a + (β₀ − a)·2^k, capped below b.
pub fn beta_schedule(sys: &SymmetricSystem, beta0: f64, levels: usize) -> Vec<f64> {
    (0..levels)
        .map(|k| sys.a + (beta0 - sys.a) * 2f64.powi(k as i32))
        .filter(|&b| b < sys.b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, eye, zeros};
    use crate::sysdef::SpaceDecomposition;
    use std::sync::Arc;

    fn dirac() -> SymmetricSystem {
        let d = SpaceDecomposition::new(1, 0).unwrap();
        SymmetricSystem::new(0.0, 1.0, true, d, Arc::new(|_| zeros(2, 2)), Arc::new(|_| eye(2))).unwrap()
    }

    fn rotation(t: f64, lam: Complex64) -> CMat {
        let (cs, sn) = ((lam * t).cos(), (lam * t).sin());
        CMat::from_row_slice(2, 2, &[cs, sn, -sn, cs])
    }

    #[test]
    fn dirac_fundamental_is_rotation() {
        let sys = dirac();
        let tol = Tolerances::default();
        for lam in [c(3.0, 0.0), c(1.0, 2.0), c(-0.5, -1.5)] {
            let y = propagate(&sys, lam, &eye(2), 0.0, 1.0, &IntegratorOptions::from_tolerances(&tol)).unwrap();
            for i in 0..=40 {
                let t = i as f64 / 40.0;
                let exact = rotation(t, lam);
                assert!(max_abs(&(y.value_at(t) - &exact)) < 1e-8 * max_abs(&exact), "λ={lam} t={t}");
            }
        }
    }

    #[test]
    fn backward_run_matches_rotation() {
        let sys = dirac();
        let lam = c(2.0, 1.0);
        let opts = IntegratorOptions::from_tolerances(&Tolerances::default());
        let y = propagate_backward(&sys, lam, &rotation(1.0, lam), 1.0, 0.0, &opts).unwrap();
        assert!(y.is_backward());
        assert_eq!((y.t_start(), y.t_end()), (0.0, 1.0));
        assert!(max_abs(&(y.initial() - eye(2))) < 1e-8);
        for t in [0.0, 0.13, 0.5, 0.91, 1.0] {
            assert!(max_abs(&(y.value_at(t) - rotation(t, lam))) < 1e-8);
            assert!(ode_residual(&sys, &y, t.min(0.999)) < 1e-7);
        }
        let g = y.grid();
        assert!(g.windows(2).all(|w| w[0] < w[1]) && g[0] == 0.0 && *g.last().unwrap() == 1.0);
    }

    #[test]
    fn zero_lambda_is_constant() {
        let sys = dirac();
        let init = CMat::from_row_slice(2, 2, &[cr(2.0), cr(1.0), cr(0.0), cr(0.5)]);
        let y = propagate(&sys, cr(0.0), &init, 0.0, 1.0, &IntegratorOptions::from_tolerances(&Tolerances::default()))
            .unwrap();
        assert_eq!(y.terminal(), &init);
    }

    #[test]
    fn resumable_matches_single_run() {
        let sys = dirac();
        let opts = IntegratorOptions::from_tolerances(&Tolerances::default());
        let lam = c(2.0, 0.5);
        let mut p = Propagator::new(&sys, lam, &eye(2), 0.0, &opts).unwrap();
        p.extend_to(0.4).unwrap();
        p.extend_to(1.0).unwrap();
        let exact = rotation(1.0, lam);
        assert!(max_abs(&(p.current() - exact)) < 1e-8);
        assert!((p.solution().t_end() - 1.0).abs() == 0.0);
    }

    #[test]
    fn dense_output_residual_is_small() {
        let sys = dirac();
        let tol = Tolerances::default();
        let y = propagate(&sys, c(5.0, 1.0), &eye(2), 0.0, 1.0, &IntegratorOptions::from_tolerances(&tol)).unwrap();
        let worst = (0..97).map(|i| ode_residual(&sys, &y, (i as f64 + 0.37) / 97.0)).fold(0.0, f64::max);
        assert!(worst < 1e-7, "residual {worst}");
    }

    #[test]
    fn right_mul_commutes_with_evaluation() {
        let sys = dirac();
        let y = propagate(&sys, c(1.0, 1.0), &eye(2), 0.0, 1.0, &IntegratorOptions::from_tolerances(&Tolerances::default()))
            .unwrap();
        let cm = CMat::from_row_slice(2, 1, &[c(1.0, 2.0), cr(-1.0)]);
        let v = y.right_mul(&cm);
        for t in [0.0, 0.123, 0.5, 0.99, 1.0] {
            assert!(max_abs(&(v.value_at(t) - y.value_at(t) * &cm)) < 1e-14);
        }
    }

    #[test]
    fn truncation_keeps_values() {
        let sys = dirac();
        let y = propagate(&sys, c(4.0, 0.3), &eye(2), 0.0, 1.0, &IntegratorOptions::from_tolerances(&Tolerances::default()))
            .unwrap();
        let tr = y.truncated(0.61);
        for t in [0.1, 0.3, 0.6, 0.605, 0.61] {
            assert!(max_abs(&(tr.value_at(t) - y.value_at(t))) < 1e-12, "t={t}");
        }
    }

    #[test]
    fn wronskian_of_rotation() {
        let sys = dirac();
        let opts = IntegratorOptions::from_tolerances(&Tolerances::default());
        let lam = c(2.0, 1.0);
        let y = propagate(&sys, lam, &eye(2), 0.0, 1.0, &opts).unwrap();
        let ym = propagate(&sys, lam.conj(), &eye(2), 0.0, 1.0, &opts).unwrap();
        assert!(wronskian_residual(sys.j(), &y, &ym) < 50.0 * 1e-10);
    }

    #[test]
    fn gram_of_rotation_column() {
        let sys = dirac();
        let y = propagate(&sys, cr(2.0), &eye(2), 0.0, 1.0, &IntegratorOptions::from_tolerances(&Tolerances::default()))
            .unwrap();
        let g = solution_gram(&sys, &y, &y, 0.0, 1.0);
        assert!(max_abs(&(g - eye(2))) < 1e-9);
    }

    #[test]
    fn b_form_regular_is_endpoint_value() {
        let sys = dirac();
        let y = propagate(&sys, c(1.0, 1.0), &eye(2), 0.0, 1.0, &IntegratorOptions::from_tolerances(&Tolerances::default()))
            .unwrap();
        let lim = b_form(&sys, &y, &y, &[], &Tolerances::default()).unwrap();
        assert_eq!(lim.value, y.terminal().adjoint() * sys.j() * y.terminal());
    }

    #[test]
    fn breakpoints_are_step_boundaries() {
        let d = SpaceDecomposition::new(1, 0).unwrap();
        let sys = SymmetricSystem::new(
            0.0,
            1.0,
            true,
            d,
            Arc::new(|_| zeros(2, 2)),
            Arc::new(|t| if t < 0.3 { eye(2) } else { eye(2) * cr(4.0) }),
        )
        .unwrap()
        .with_breakpoints(vec![0.3]);
        let lam = cr(2.0);
        let y = propagate(&sys, lam, &eye(2), 0.0, 1.0, &IntegratorOptions::from_tolerances(&Tolerances::default()))
            .unwrap();
        assert!(y.grid().contains(&0.3));
        let exact = rotation(0.7, lam * 4.0) * rotation(0.3, lam);
        assert!(max_abs(&(y.terminal() - exact)) < 1e-8);
    }
}
