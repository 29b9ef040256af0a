//! Base solutions, Weyl blocks, m-functions, Green's kernels and the resolvent.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::sync::{Arc, PoisonError, RwLock};

use num_complex::Complex64;

use crate::boundary::{build_frame_a, BoundaryFrameA, BoundaryFrameB, BoundaryParameter, GammaBlocks};
use crate::error::{Error, Result};
use crate::linalg::{
    cr, determinant, eye, herm_eigen_desc, herm_part, im_part, max_abs, min_eig_herm, rows, solve_checked, vstack,
    zeros, CMat, I,
};
use crate::propagate::{propagate, propagate_backward, solution_gram, IntegratorOptions, OperatorSolution, Propagator};
use crate::quadrature::cumulative_trapezoid;
use crate::sysdef::{l2delta_gram, SymmetricSystem, WeightedFunction};
use crate::tolerances::Tolerances;

/// Magnitude beyond which a propagated fundamental matrix is considered overflowing.
const OVERFLOW_GUARD: f64 = 1e150;

/// Insert-only concurrent memo table. Concurrent misses may compute the same value
/// twice; the first stored value wins.
pub struct Memo<K, V> {
    map: RwLock<HashMap<K, Arc<V>>>,
}

impl<K: Eq + Hash + Clone, V> Default for Memo<K, V> {
    fn default() -> Self {
        Memo { map: RwLock::new(HashMap::new()) }
    }
}

impl<K: Eq + Hash + Clone, V> Memo<K, V> {
    pub fn get(&self, k: &K) -> Option<Arc<V>> {
        self.map.read().unwrap_or_else(PoisonError::into_inner).get(k).cloned()
    }

    pub fn get_or_try_insert(&self, k: K, f: impl FnOnce() -> Result<V>) -> Result<Arc<V>> {
        if let Some(v) = self.get(&k) {
            return Ok(v);
        }
        let v = Arc::new(f()?);
        let mut w = self.map.write().unwrap_or_else(PoisonError::into_inner);
        Ok(w.entry(k).or_insert(v).clone())
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap_or_else(PoisonError::into_inner).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

type LamKey = (u64, u64);

fn key(z: Complex64) -> LamKey {
    // + 0.0 folds −0 into +0
    ((z.re + 0.0).to_bits(), (z.im + 0.0).to_bits())
}

/// The block matrix (m₀, M₂; M₃, M₄) at λ.
#[derive(Debug, Clone, PartialEq)]
pub struct WeylBlocks {
    pub lambda: Complex64,
    pub m0: CMat,
    pub m2: CMat,
    pub m3: CMat,
    pub m4: CMat,
}

impl WeylBlocks {
    pub fn full(&self) -> CMat {
        let (k, h) = (self.m0.nrows(), self.m4.nrows());
        let mut m = zeros(k + h, k + h);
        m.view_mut((0, 0), (k, k)).copy_from(&self.m0);
        m.view_mut((0, k), (k, h)).copy_from(&self.m2);
        m.view_mut((k, 0), (h, k)).copy_from(&self.m3);
        m.view_mut((k, k), (h, h)).copy_from(&self.m4);
        m
    }

    /// Largest deviation from m₀*(λ̄) = m₀(λ), M₂*(λ̄) = M₃(λ), M₄*(λ̄) = M₄(λ), with
    /// `conj` the blocks at λ̄.
    pub fn symmetry_residual(&self, conj: &WeylBlocks) -> f64 {
        let d0 = max_abs(&(conj.m0.adjoint() - &self.m0));
        let d2 = if self.m2.is_empty() { 0.0 } else { max_abs(&(conj.m2.adjoint() - &self.m3)) };
        let d4 = if self.m4.is_empty() { 0.0 } else { max_abs(&(conj.m4.adjoint() - &self.m4)) };
        d0.max(d2).max(d4)
    }

    /// Smallest eigenvalue of Im M(λ) / Im λ.
    pub fn nevanlinna_margin(&self) -> f64 {
        min_eig_herm(&im_part(&self.full())) / self.lambda.im
    }
}

type MEval = Arc<dyn Fn(Complex64) -> Result<CMat> + Send + Sync>;
type Indicator = Arc<dyn Fn(f64) -> Result<Complex64> + Send + Sync>;

/// An m-function evaluator together with a description of where it came from.
#[derive(Clone)]
pub struct MFunction {
    eval: MEval,
    indicator: Option<Indicator>,
    pub dim: usize,
    pub provenance: String,
}

impl fmt::Debug for MFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MFunction").field("dim", &self.dim).field("provenance", &self.provenance).finish()
    }
}

impl MFunction {
    pub fn new(dim: usize, provenance: impl Into<String>, eval: impl Fn(Complex64) -> Result<CMat> + Send + Sync + 'static) -> Self {
        MFunction { eval: Arc::new(eval), indicator: None, dim, provenance: provenance.into() }
    }

    /// Attach a real-analytic scalar whose real zeros are the poles of m.
    pub fn with_indicator(mut self, f: impl Fn(f64) -> Result<Complex64> + Send + Sync + 'static) -> Self {
        self.indicator = Some(Arc::new(f));
        self
    }

    pub fn eval(&self, lambda: Complex64) -> Result<CMat> {
        (self.eval)(lambda)
    }

    pub fn indicator(&self, s: f64) -> Option<Result<Complex64>> {
        self.indicator.as_ref().map(|f| f(s))
    }

    pub fn has_indicator(&self) -> bool {
        self.indicator.is_some()
    }
}

/// Everything derived from one constraint solve at λ.
pub struct BaseSolve {
    pub lambda: Complex64,
    /// Y with Y(a) = Ũ⁻¹, on [a, phi_horizon].
    pub y: OperatorSolution,
    pub phi_horizon: f64,
    /// Orthonormal columns spanning the admissible Γ_a-coordinates: the square-integrable
    /// directions at a singular end point, the identity otherwise.
    pub basis: CMat,
    /// Solutions with Γ_a-coordinates `basis`, trusted on [a, horizon].
    pub admissible: OperatorSolution,
    pub horizon: f64,
    pub gamma_basis: GammaBlocks,
    /// v₀ = admissible·xv and u = admissible·xu.
    pub xv: CMat,
    pub xu: CMat,
    pub blocks: WeylBlocks,
    pub cond: f64,
}

impl BaseSolve {
    /// Γ_a-coordinates of v₀.
    pub fn v0_coef(&self) -> CMat {
        &self.basis * &self.xv
    }

    /// Coefficients w.r.t. `admissible` of the solution with Γ_a-coordinates `c`.
    pub fn coordinates(&self, c: &CMat) -> CMat {
        self.basis.adjoint() * c
    }
}

/// Distinguished solution v_τ(·, λ) and its data.
pub struct VTau {
    pub lambda: Complex64,
    pub m: CMat,
    /// Γ_a-coordinates of v_τ.
    pub coef: CMat,
    pub v: OperatorSolution,
    pub horizon: f64,
    pub gamma_b: GammaBlocks,
}

/// Output of the resolvent: y on the grid of f together with y′ and the boundary
/// coefficients y(a) = φ(a)·head and y = v_τ·tail to the right of the support of f.
#[derive(Debug, Clone)]
pub struct ResolventOutput {
    pub lambda: Complex64,
    pub y: WeightedFunction,
    pub derivative: Vec<CMat>,
    pub head: CMat,
    pub tail: CMat,
}

#[derive(Debug, Clone, Copy)]
pub struct ResolventBoundary {
    pub gamma1a: f64,
    pub hat: f64,
    pub tau: f64,
}

impl ResolventBoundary {
    pub fn max(&self) -> f64 {
        self.gamma1a.max(self.hat).max(self.tau)
    }
}

/// A system with its two boundary frames, plus memoized solves.
pub struct WeylProblem {
    sys: Arc<SymmetricSystem>,
    frame_a: BoundaryFrameA,
    frame_b: BoundaryFrameB,
    tol: Tolerances,
    blocks: Memo<LamKey, WeylBlocks>,
    solves: Memo<LamKey, BaseSolve>,
    vtaus: Memo<(u64, LamKey), VTau>,
    phis: Memo<(LamKey, u64), OperatorSolution>,
}

impl fmt::Debug for WeylProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeylProblem")
            .field("system", &self.sys.name)
            .field("frame_b", &self.frame_b)
            .field("cached_blocks", &self.blocks.len())
            .finish()
    }
}

impl WeylProblem {
    pub fn new(sys: SymmetricSystem, frame_a: BoundaryFrameA, frame_b: BoundaryFrameB, tol: Tolerances) -> Self {
        Self::shared(Arc::new(sys), frame_a, frame_b, tol)
    }

    pub fn shared(sys: Arc<SymmetricSystem>, frame_a: BoundaryFrameA, frame_b: BoundaryFrameB, tol: Tolerances) -> Self {
        WeylProblem {
            sys,
            frame_a,
            frame_b,
            tol,
            blocks: Memo::default(),
            solves: Memo::default(),
            vtaus: Memo::default(),
            phis: Memo::default(),
        }
    }

    pub fn sys(&self) -> &SymmetricSystem {
        &self.sys
    }

    pub fn frame_a(&self) -> &BoundaryFrameA {
        &self.frame_a
    }

    pub fn frame_b(&self) -> &BoundaryFrameB {
        &self.frame_b
    }

    pub fn tol(&self) -> &Tolerances {
        &self.tol
    }

    fn opts(&self) -> IntegratorOptions {
        IntegratorOptions::from_tolerances(&self.tol)
    }

    fn h0(&self) -> usize {
        self.sys.decomp.h0()
    }

    /// Right-hand sides (−P_H; P_Ĥ; 0) and (0; 0; I).
    fn constraint_rhs(&self) -> CMat {
        let d = self.sys.decomp;
        let hb = self.frame_b.dim_hb;
        let (k, cols) = (d.p + d.q + hb, d.h0() + hb);
        let mut r = zeros(k, cols);
        for i in 0..d.p {
            r[(i, i)] = cr(-1.0);
        }
        for i in 0..d.q {
            r[(d.p + i, d.p + i)] = cr(1.0);
        }
        for i in 0..hb {
            r[(d.p + d.q + i, d.h0() + i)] = cr(1.0);
        }
        r
    }

    /// (Γ₁a; i(Γ̂_a − Γ̂_b)) applied to Y·basis; Γ_a(Y c) = c since Y(a) = Ũ⁻¹.
    fn constraint_top(&self, basis: &CMat, gb: &GammaBlocks) -> CMat {
        let d = self.sys.decomp;
        let e1 = rows(basis, d.h0(), d.p);
        let hat = (rows(basis, d.p, d.q) - &gb.ghat) * I;
        vstack(&[&e1, &hat])
    }

    fn base_from(
        &self,
        lambda: Complex64,
        (y, phi_horizon): (OperatorSolution, f64),
        (admissible, horizon): (OperatorSolution, f64),
        basis: CMat,
        gb: GammaBlocks,
    ) -> Result<BaseSolve> {
        let d = self.sys.decomp;
        let hb = self.frame_b.dim_hb;
        let k = vstack(&[&self.constraint_top(&basis, &gb), &gb.g0]);
        if k.nrows() != k.ncols() {
            return Err(Error::Dimension(format!(
                "constraint system is {}×{}; unequal deficiency indices are not supported",
                k.nrows(),
                k.ncols()
            )));
        }
        let (x, cond) = solve_checked(&k, &self.constraint_rhs(), self.tol.kappa_max)
            .map_err(|cond| Error::NearSpectrum { lambda, cond })?;
        let xv = x.columns(0, d.h0()).into_owned();
        let xu = x.columns(d.h0(), hb).into_owned();
        let v0_coef = &basis * &xv;
        let u_coef = &basis * &xu;
        let m0 = rows(&v0_coef, 0, d.h0()) + d.proj_hat() * c_half_i();
        let blocks = WeylBlocks {
            lambda,
            m0,
            m2: rows(&u_coef, 0, d.h0()),
            m3: -(&gb.g1 * &xv),
            m4: -(&gb.g1 * &xu),
        };
        Ok(BaseSolve { lambda, y, phi_horizon, basis, admissible, horizon, gamma_basis: gb, xv, xu, blocks, cond })
    }

    fn solve_regular(&self, lambda: Complex64, dense: bool) -> Result<BaseSolve> {
        let sys = &self.sys;
        let mut opts = self.opts();
        if !dense {
            opts = opts.endpoint_only();
        }
        let y = propagate(sys, lambda, self.frame_a.utilde_inv(), sys.a, sys.b, &opts)?;
        let gb = self.frame_b.gamma_pointwise(sys.j(), y.terminal(), sys.b);
        self.base_from(lambda, (y.clone(), sys.b), (y, sys.b), eye(sys.n()), gb)
    }

    /// Singular end point: the forward Gram matrix ∫Y*ΔY over [a, β] classifies the
    /// square-integrable directions by an eigenvalue gap; the admissible solutions are then
    /// recomputed by a backward sweep with re-orthonormalization, which is stable for
    /// exactly those directions. Blocks are accepted once two consecutive truncation
    /// levels agree.
    fn solve_singular(&self, lambda: Complex64) -> Result<BaseSolve> {
        let sys = &self.sys;
        if lambda.im == 0.0 {
            return Err(Error::LimitClassification { lambda, reason: "no square-integrable splitting on the real axis".into() });
        }
        let n = sys.n();
        let d = sys.decomp.p + sys.decomp.q + self.frame_b.dim_hb;
        if d > n {
            return Err(Error::Dimension(format!("{d} admissible directions requested in dimension {n}")));
        }
        let sched = self.frame_b.schedule(sys);
        let mut prop = Propagator::new(sys, lambda, self.frame_a.utilde_inv(), sys.a, &self.opts())?;
        let mut gram = zeros(n, n);
        let mut frozen = false;
        let mut classified: Option<CMat> = None;
        let mut prev: Option<CMat> = None;
        let mut reason = String::from("truncation schedule exhausted before the blocks converged");
        for &beta in &sched {
            let t_prev = prop.time();
            if !frozen {
                let growth = max_abs(prop.current()).max(1.0).ln();
                if t_prev > sys.a && growth * (beta - sys.a) / (t_prev - sys.a) > OVERFLOW_GUARD.ln() {
                    frozen = true;
                } else {
                    prop.extend_to(beta)?;
                    gram += solution_gram(sys, prop.solution(), prop.solution(), t_prev, beta);
                    if d == n {
                        classified = Some(eye(n));
                    } else {
                        let (vals, vecs) = herm_eigen_desc(&herm_part(&gram));
                        let ratio = vals[n - d - 1] / vals[n - d].abs().max(f64::MIN_POSITIVE);
                        if ratio >= self.tol.gap_min {
                            classified = Some(vecs.columns(n - d, d).into_owned());
                        } else {
                            reason = format!("Gram eigenvalue gap {ratio:.3e} below {:.1e} at beta = {beta}", self.tol.gap_min);
                            classified = None;
                            prev = None;
                        }
                    }
                }
            }
            let Some(dvec) = &classified else { continue };
            let t_fwd = prop.time();
            let rate = if t_fwd > sys.a { max_abs(prop.current()).max(1.0).ln() / (t_fwd - sys.a) } else { 0.0 };
            // forward values are accurate to ε·e^{rate·β}; past that a generic start well
            // above β is attracted onto the admissible directions instead
            let (w, top) = if !frozen && rate * (beta - sys.a) <= 13.8 {
                (prop.current() * dvec, beta)
            } else {
                let mut top = beta + 40.0 / rate.max(1e-3);
                if top >= sys.b {
                    top = 0.5 * (beta + sys.b);
                }
                (generic_frame(n, d), top)
            };
            let chunk = if rate > 0.0 { 18.0 / rate } else { top - sys.a };
            let admissible = match self.backward_sweep(lambda, &w, top, chunk) {
                Ok(s) => s,
                Err(e) => {
                    reason = e.to_string();
                    prev = None;
                    continue;
                }
            };
            let basis = self.frame_a.utilde() * admissible.initial();
            let gb = self.frame_b.gamma_pointwise(sys.j(), &admissible.value_at(beta), beta);
            let base = match self.base_from(lambda, (prop.solution().clone(), t_fwd), (admissible, beta), basis, gb) {
                Ok(b) => b,
                Err(e) => {
                    reason = e.to_string();
                    prev = None;
                    continue;
                }
            };
            let packed = base.blocks.full();
            if let Some(p) = &prev {
                let change = max_abs(&(&packed - p));
                if change <= self.tol.m_cauchy * max_abs(&packed).max(1.0) {
                    return Ok(base);
                }
                reason = format!("blocks changed by {change:.3e} at beta = {beta}");
            }
            prev = Some(packed);
        }
        Err(Error::LimitClassification { lambda, reason })
    }

    /// Integrate the columns of `w` from `top` down to a, re-orthonormalizing every
    /// `chunk`, and normalize so that Ũ·value(a) has orthonormal columns.
    fn backward_sweep(&self, lambda: Complex64, w: &CMat, top: f64, chunk: f64) -> Result<OperatorSolution> {
        let a = self.sys.a;
        let opts = self.opts();
        let mut pieces = Vec::new();
        let mut rs = Vec::new();
        let mut start = w.clone().qr().q();
        let mut t = top;
        while t > a {
            let lo = if t - chunk <= a + 1e-9 * chunk { a } else { t - chunk };
            let z = propagate_backward(&self.sys, lambda, &start, t, lo, &opts)?;
            let at_lo = if lo == a { self.frame_a.utilde() * z.initial() } else { z.initial().clone() };
            if !crate::linalg::is_finite(&at_lo) {
                return Err(Error::LimitClassification { lambda, reason: format!("backward sweep overflows at t = {lo}") });
            }
            let qr = at_lo.qr();
            start = qr.q();
            rs.push(qr.r());
            pieces.push(z);
            t = lo;
        }
        // piece k equals piece k+1 times R_k; rescale everything to the normalization of the last piece
        let mut coef = eye(w.ncols());
        let mut scaled = Vec::with_capacity(pieces.len());
        for (z, r) in pieces.iter().zip(&rs).rev() {
            let rinv = r.clone().try_inverse().ok_or_else(|| Error::LimitClassification {
                lambda,
                reason: "admissible directions collapsed during the backward sweep".into(),
            })?;
            coef = rinv * coef;
            scaled.push(z.right_mul(&coef));
        }
        scaled.reverse();
        OperatorSolution::concat_backward(scaled)
    }

    /// Base solve with dense output, memoized per λ.
    pub fn base_solve(&self, lambda: Complex64) -> Result<Arc<BaseSolve>> {
        self.solves.get_or_try_insert(key(lambda), || {
            if self.frame_b.is_regular() {
                self.solve_regular(lambda, true)
            } else {
                self.solve_singular(lambda)
            }
        })
    }

    /// (v₀, u) from the constraint solve.
    pub fn base_solutions(&self, lambda: Complex64) -> Result<(OperatorSolution, OperatorSolution)> {
        let b = self.base_solve(lambda)?;
        Ok((b.admissible.right_mul(&b.xv), b.admissible.right_mul(&b.xu)))
    }

    pub fn weyl_blocks(&self, lambda: Complex64) -> Result<WeylBlocks> {
        if let Some(b) = self.solves.get(&key(lambda)) {
            return Ok(b.blocks.clone());
        }
        let b = self.blocks.get_or_try_insert(key(lambda), || {
            let base = if self.frame_b.is_regular() { self.solve_regular(lambda, false)? } else { self.solve_singular(lambda)? };
            Ok(base.blocks)
        })?;
        Ok((*b).clone())
    }

    /// m_τ = m₀ + M₂(C₀ − C₁M₄)⁻¹C₁M₃.
    pub fn m_value(&self, tau: &BoundaryParameter, lambda: Complex64) -> Result<CMat> {
        let blocks = self.weyl_blocks(lambda)?;
        self.m_from_blocks(tau, &blocks)
    }

    fn check_tau(&self, tau: &BoundaryParameter) -> Result<()> {
        if tau.dim() != self.frame_b.dim_hb {
            return Err(Error::Dimension(format!(
                "boundary parameter acts on dimension {}, frame has dim H_b = {}",
                tau.dim(),
                self.frame_b.dim_hb
            )));
        }
        Ok(())
    }

    pub fn m_from_blocks(&self, tau: &BoundaryParameter, b: &WeylBlocks) -> Result<CMat> {
        self.check_tau(tau)?;
        if self.frame_b.dim_hb == 0 || tau.c1_is_zero() {
            return Ok(b.m0.clone());
        }
        let (c0, c1) = tau.at(b.lambda);
        let x = &c0 - &c1 * &b.m4;
        let (sol, _) = solve_checked(&x, &(&c1 * &b.m3), self.tol.kappa_max)
            .map_err(|cond| Error::NearSpectrum { lambda: b.lambda, cond })?;
        Ok(&b.m0 + &b.m2 * sol)
    }

    /// v_τ(·, λ) propagated from Ũ⁻¹((m_τ − (i/2)P_Ĥ); −P_H), memoized per (τ, λ).
    pub fn v_tau(&self, tau: &BoundaryParameter, lambda: Complex64) -> Result<Arc<VTau>> {
        self.check_tau(tau)?;
        self.vtaus.get_or_try_insert((tau.id(), key(lambda)), || {
            let base = self.base_solve(lambda)?;
            let m = self.m_from_blocks(tau, &base.blocks)?;
            let d = self.sys.decomp;
            let top = &m - d.proj_hat() * c_half_i();
            let coef = vstack(&[&top, &(-d.proj_h_rows())]);
            let v = base.admissible.right_mul(&base.coordinates(&coef));
            let gamma_b = self.frame_b.gamma_pointwise(self.sys.j(), &v.value_at(base.horizon), base.horizon);
            Ok(VTau { lambda, m, coef, v, horizon: base.horizon, gamma_b })
        })
    }

    /// v_τ from the constraint system with the τ-row C₀Γ₀b + C₁Γ₁b in place of Γ₀b.
    pub fn v_tau_direct(&self, tau: &BoundaryParameter, lambda: Complex64) -> Result<(CMat, OperatorSolution)> {
        self.check_tau(tau)?;
        let base = self.base_solve(lambda)?;
        let (c0, c1) = tau.at(lambda);
        let gb = &base.gamma_basis;
        let tau_row = if self.frame_b.dim_hb == 0 { zeros(0, base.basis.ncols()) } else { &c0 * &gb.g0 + &c1 * &gb.g1 };
        let k = vstack(&[&self.constraint_top(&base.basis, gb), &tau_row]);
        let rhs = self.constraint_rhs().columns(0, self.h0()).into_owned();
        let (x, _) = solve_checked(&k, &rhs, self.tol.kappa_max).map_err(|cond| Error::NearSpectrum { lambda, cond })?;
        let coef = &base.basis * &x;
        let d = self.sys.decomp;
        let m = rows(&coef, 0, d.h0()) + d.proj_hat() * c_half_i();
        Ok((m, base.admissible.right_mul(&x)))
    }

    /// det of the τ-constraint matrix at real s (regular frames only); its real zeros are
    /// the eigenvalues of the τ-problem.
    pub fn constraint_determinant(&self, tau: &BoundaryParameter, s: Complex64) -> Result<Complex64> {
        self.check_tau(tau)?;
        if !self.frame_b.is_regular() {
            return Err(Error::Domain("the constraint determinant needs a regular end point".into()));
        }
        let sys = &self.sys;
        let y = propagate(sys, s, self.frame_a.utilde_inv(), sys.a, sys.b, &self.opts().endpoint_only())?;
        let gb = self.frame_b.gamma_pointwise(sys.j(), y.terminal(), sys.b);
        let (c0, c1) = tau.at(s);
        let basis = eye(sys.n());
        let k = vstack(&[&self.constraint_top(&basis, &gb), &(&c0 * &gb.g0 + &c1 * &gb.g1)]);
        Ok(determinant(&k))
    }

    /// φ_U(x, λ) on [a, horizon].
    pub fn phi_at(&self, lambda: Complex64, x: f64) -> Result<CMat> {
        let base = self.base_solve(lambda)?;
        self.check_point(x, base.phi_horizon)?;
        Ok(base.y.value_at(x).columns(0, self.h0()).into_owned())
    }

    /// φ_U(·, λ) on [a, t_end], memoized per (λ, t_end). Real λ is allowed.
    pub fn phi_until(&self, lambda: Complex64, t_end: f64) -> Result<Arc<OperatorSolution>> {
        let sys = &self.sys;
        if !(t_end > sys.a && t_end <= sys.b && t_end.is_finite()) {
            return Err(Error::Domain(format!("{t_end} outside ({}, {}]", sys.a, sys.b)));
        }
        self.phis.get_or_try_insert((key(lambda), t_end.to_bits()), || {
            propagate(sys, lambda, &self.frame_a.phi_initial(), sys.a, t_end, &self.opts())
        })
    }

    fn check_point(&self, x: f64, horizon: f64) -> Result<()> {
        if !(x >= self.sys.a && x <= horizon) {
            return Err(Error::Domain(format!("{x} outside the solved range [{}, {horizon}]", self.sys.a)));
        }
        Ok(())
    }

    /// G_τ(x, t, λ) = v_τ(x, λ)φ_U*(t, λ̄) for x > t and φ_U(x, λ)v_τ*(t, λ̄) for x < t.
    pub fn green_kernel(&self, tau: &BoundaryParameter, x: f64, t: f64, lambda: Complex64) -> Result<CMat> {
        if x == t {
            return Err(Error::Domain("the Green's kernel jumps on the diagonal x = t".into()));
        }
        let (lo, hi) = if x > t { (t, x) } else { (x, t) };
        let _ = lo;
        let vl = self.v_tau(tau, lambda)?;
        let vc = self.v_tau(tau, lambda.conj())?;
        self.check_point(hi, vl.horizon.min(vc.horizon))?;
        if x > t {
            Ok(vl.v.value_at(x) * self.phi_at(lambda.conj(), t)?.adjoint())
        } else {
            Ok(self.phi_at(lambda, x)? * vc.v.value_at(t).adjoint())
        }
    }

    /// max over `xs` of ‖φ_U(x, λ)v_τ*(x, λ̄) − v_τ(x, λ)φ_U*(x, λ̄) − J‖.
    pub fn kernel_identity_residual(&self, tau: &BoundaryParameter, lambda: Complex64, xs: &[f64]) -> Result<f64> {
        let vl = self.v_tau(tau, lambda)?;
        let vc = self.v_tau(tau, lambda.conj())?;
        let mut worst = 0.0_f64;
        for &x in xs {
            let pl = self.phi_at(lambda, x)?;
            let pc = self.phi_at(lambda.conj(), x)?;
            let r = &pl * vc.v.value_at(x).adjoint() - vl.v.value_at(x) * pc.adjoint() - self.sys.j();
            worst = worst.max(max_abs(&r));
        }
        Ok(worst)
    }

    /// y = ∫ G_τ(·, t, λ)Δ(t)f(t) dt on the grid of f, via the split
    /// y(x) = v_τ(x)∫_a^x φ_U*(t, λ̄)Δf + φ_U(x)∫_x^b v_τ*(t, λ̄)Δf with running trapezoid sums.
    pub fn apply_resolvent(&self, tau: &BoundaryParameter, f: &WeightedFunction, lambda: Complex64) -> Result<ResolventOutput> {
        let n = self.sys.n();
        let h0 = self.h0();
        if f.grid.is_empty() {
            return Ok(ResolventOutput {
                lambda,
                y: f.clone(),
                derivative: Vec::new(),
                head: zeros(h0, 0),
                tail: zeros(h0, 0),
            });
        }
        if f.nrows() != n {
            return Err(Error::Dimension(format!("f has {} rows, system dimension is {n}", f.nrows())));
        }
        let k = f.ncols();
        let vl = self.v_tau(tau, lambda)?;
        let vc = self.v_tau(tau, lambda.conj())?;
        let bl = self.base_solve(lambda)?;
        let bc = self.base_solve(lambda.conj())?;
        let hz = vl.horizon.min(vc.horizon).min(bl.phi_horizon).min(bc.phi_horizon);
        self.check_point(f.grid[0], hz)?;
        self.check_point(*f.grid.last().unwrap(), hz)?;

        let mut phil = Vec::with_capacity(f.grid.len());
        let mut vls = Vec::with_capacity(f.grid.len());
        let mut dfs = Vec::with_capacity(f.grid.len());
        let mut ai = Vec::with_capacity(f.grid.len());
        let mut bi = Vec::with_capacity(f.grid.len());
        let mut phic = Vec::with_capacity(f.grid.len());
        let mut vcs = Vec::with_capacity(f.grid.len());
        for (&x, fx) in f.grid.iter().zip(&f.values) {
            let pl = bl.y.value_at(x).columns(0, h0).into_owned();
            let pc = bc.y.value_at(x).columns(0, h0).into_owned();
            let vcx = vc.v.value_at(x);
            let df = self.sys.delta_at(x) * fx;
            ai.push(pc.adjoint() * &df);
            bi.push(vcx.adjoint() * &df);
            phil.push(pl);
            vls.push(vl.v.value_at(x));
            phic.push(pc);
            vcs.push(vcx);
            dfs.push(df);
        }
        let acum = cumulative_trapezoid(&f.grid, &ai);
        let bcum = cumulative_trapezoid(&f.grid, &bi);
        let btot = bcum.last().cloned().unwrap_or_else(|| zeros(h0, k));
        let mut ys = Vec::with_capacity(f.grid.len());
        let mut dys = Vec::with_capacity(f.grid.len());
        for (i, &x) in f.grid.iter().enumerate() {
            let a_i = &acum[i];
            let b_i = &btot - &bcum[i];
            ys.push(&vls[i] * a_i + &phil[i] * &b_i);
            let dv = vl.v.derivative_at(x);
            let dphi = bl.y.derivative_at(x).columns(0, h0).into_owned();
            let jump = &vls[i] * phic[i].adjoint() - &phil[i] * vcs[i].adjoint();
            dys.push(dv * a_i + dphi * &b_i + jump * &dfs[i]);
        }
        Ok(ResolventOutput {
            lambda,
            y: WeightedFunction { grid: f.grid.clone(), values: ys },
            derivative: dys,
            head: btot,
            tail: acum.last().cloned().unwrap_or_else(|| zeros(h0, k)),
        })
    }

    /// Pointwise ‖J y′ − B y − λΔy − Δf‖ along the grid of f.
    pub fn resolvent_residual(&self, out: &ResolventOutput, f: &WeightedFunction) -> Vec<f64> {
        let j = self.sys.j();
        f.grid
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let d = self.sys.delta_at(x);
                let y = &out.y.values[i];
                let r = j * &out.derivative[i] - self.sys.b_at(x) * y - &d * y * out.lambda - d * &f.values[i];
                max_abs(&r)
            })
            .collect()
    }

    /// Γ₁a y, i(Γ̂_a − Γ̂_b)y and C₀Γ₀b y + C₁Γ₁b y for a resolvent output.
    pub fn resolvent_boundary_residual(&self, tau: &BoundaryParameter, out: &ResolventOutput) -> Result<ResolventBoundary> {
        let lambda = out.lambda;
        let d = self.sys.decomp;
        let ya = if out.y.grid.first() == Some(&self.sys.a) {
            out.y.values[0].clone()
        } else {
            self.phi_at(lambda, self.sys.a)? * &out.head
        };
        let ga = self.frame_a.gamma_values(&ya);
        let vt = self.v_tau(tau, lambda)?;
        let gb = GammaBlocks {
            g0: &vt.gamma_b.g0 * &out.tail,
            ghat: &vt.gamma_b.ghat * &out.tail,
            g1: &vt.gamma_b.g1 * &out.tail,
        };
        let hat = if d.q == 0 { 0.0 } else { max_abs(&((&ga.ghat - &gb.ghat) * I)) };
        let tau_res = if self.frame_b.dim_hb == 0 {
            0.0
        } else {
            let (c0, c1) = tau.at(lambda);
            max_abs(&(c0 * &gb.g0 + c1 * &gb.g1))
        };
        Ok(ResolventBoundary { gamma1a: max_abs(&ga.g1), hat, tau: tau_res })
    }

    /// ∫ z*Δy over the solved range: the whole interval for a regular end point; for a
    /// singular one the integral is extended chunk by chunk until the increments are
    /// negligible or start to grow again.
    pub fn tail_gram(&self, y: &OperatorSolution, z: &OperatorSolution, hi: f64) -> CMat {
        let sys = &self.sys;
        if self.frame_b.is_regular() {
            return solution_gram(sys, y, z, sys.a, hi);
        }
        let chunk = match &self.frame_b.kind {
            crate::boundary::FrameBKind::Singular { beta0, .. } => (beta0 - sys.a) / 8.0,
            _ => unreachable!(),
        };
        let mut total = zeros(z.ncols(), y.ncols());
        let mut t = sys.a;
        let mut min_inc = f64::INFINITY;
        while t < hi {
            let t1 = (t + chunk).min(hi);
            let inc = solution_gram(sys, y, z, t, t1);
            let size = max_abs(&inc);
            let scale = max_abs(&total).max(1.0);
            if min_inc < 1e-6 * scale && size > 4.0 * min_inc && size > 1e-300 {
                break;
            }
            total += inc;
            min_inc = min_inc.min(size);
            if size <= 1e-14 * scale && t1 - sys.a > 4.0 * chunk {
                break;
            }
            t = t1;
        }
        total
    }

    /// Im m_τ(λ)/Im λ − ∫v_τ*Δv_τ.
    pub fn herglotz_matrix(&self, tau: &BoundaryParameter, lambda: Complex64) -> Result<CMat> {
        if lambda.im == 0.0 {
            return Err(Error::Domain("Im lambda must be nonzero".into()));
        }
        let vt = self.v_tau(tau, lambda)?;
        let integral = self.tail_gram(&vt.v, &vt.v, vt.horizon);
        Ok(herm_part(&(im_part(&vt.m) * cr(1.0 / lambda.im) - integral)))
    }

    pub fn herglotz_defect(&self, tau: &BoundaryParameter, lambda: Complex64) -> Result<f64> {
        Ok(min_eig_herm(&self.herglotz_matrix(tau, lambda)?))
    }

    /// m_τ(μ) − m_τ*(λ) − (μ − λ̄)∫v_τ*(t, λ)Δ(t)v_τ(t, μ) dt.
    pub fn nevanlinna_identity_residual(&self, tau: &BoundaryParameter, mu: Complex64, lambda: Complex64) -> Result<CMat> {
        if !tau.is_constant_selfadjoint() {
            return Err(Error::NotSelfAdjoint("the identity needs a constant self-adjoint pair".into()));
        }
        let vm = self.v_tau(tau, mu)?;
        let vl = self.v_tau(tau, lambda)?;
        let integral = self.tail_gram(&vm.v, &vl.v, vm.horizon.min(vl.horizon));
        Ok(&vm.m - vl.m.adjoint() - integral * (mu - lambda.conj()))
    }

    /// m-function of τ as a shareable evaluator; regular problems carry the constraint
    /// determinant as pole indicator.
    pub fn m_function(self: &Arc<Self>, tau: &BoundaryParameter) -> Result<MFunction> {
        self.check_tau(tau)?;
        let me = Arc::clone(self);
        let t = tau.clone();
        let prov = format!("system={} tau={} frame_b={}", self.sys.name, tau.label, if self.frame_b.is_regular() { "regular" } else { "singular" });
        let mf = MFunction::new(self.h0(), prov, move |lam| me.m_value(&t, lam));
        if self.frame_b.is_regular() {
            let me = Arc::clone(self);
            let t = tau.clone();
            Ok(mf.with_indicator(move |s| me.constraint_determinant(&t, cr(s))))
        } else {
            Ok(mf)
        }
    }

    /// m-function of the minimal configuration at a singular end point (H_b = {0}).
    pub fn m_function_singular_minimal(self: &Arc<Self>) -> Result<MFunction> {
        if self.frame_b.is_regular() || self.frame_b.dim_hb != 0 {
            return Err(Error::InvalidFrame("needs a singular frame with H_b = {0}".into()));
        }
        self.m_function(&BoundaryParameter::canonical(0).labelled("minimal"))
    }
}

fn c_half_i() -> Complex64 {
    I * 0.5
}

/// A fixed full-rank n×d start for backward sweeps.
fn generic_frame(n: usize, d: usize) -> CMat {
    CMat::from_fn(n, d, |i, k| Complex64::from_polar(1.0 + 0.1 * ((i * 7 + k * 3) % 5) as f64, 0.7 * (i + 1) as f64 * (k + 2) as f64 + 0.3 * (i * i) as f64))
}

/// Mean of m⁽²⁾ − m⁽¹⁾ over the sample points and how far the samples stray from it.
#[derive(Debug, Clone)]
pub struct FrameShift {
    pub shift: CMat,
    pub variation: f64,
    pub hermitian_defect: f64,
    /// ‖B̃ − B̃P_H‖
    pub outside_h: f64,
}

/// Evaluate m from two completions Ũ₁, Ũ₂ of the same U and return the constant
/// Hermitian difference B̃ = m⁽²⁾ − m⁽¹⁾, which must have the form B·P_H.
pub fn frame_shift_check(
    sys: &SymmetricSystem,
    u: &CMat,
    utilde1: &CMat,
    utilde2: &CMat,
    frame_b: &BoundaryFrameB,
    tau: &BoundaryParameter,
    lambdas: &[Complex64],
    tol: &Tolerances,
) -> Result<FrameShift> {
    if lambdas.len() < 3 {
        return Err(Error::Domain("at least three lambda values are needed".into()));
    }
    let d = sys.decomp;
    let sys = Arc::new(sys.clone());
    let fa1 = build_frame_a(d, u, Some(utilde1), tol)?;
    let fa2 = build_frame_a(d, u, Some(utilde2), tol)?;
    let p1 = WeylProblem::shared(Arc::clone(&sys), fa1, frame_b.clone(), tol.clone());
    let p2 = WeylProblem::shared(sys, fa2, frame_b.clone(), tol.clone());
    let diffs: Vec<CMat> = lambdas
        .iter()
        .map(|&l| Ok(p2.m_value(tau, l)? - p1.m_value(tau, l)?))
        .collect::<Result<_>>()?;
    let mean = diffs.iter().fold(zeros(d.h0(), d.h0()), |acc, m| acc + m) * cr(1.0 / diffs.len() as f64);
    let scale = max_abs(&mean).max(1.0);
    let variation = diffs.iter().map(|m| max_abs(&(m - &mean))).fold(0.0, f64::max);
    if variation > tol.tol_id * scale {
        return Err(Error::FrameInconsistency(format!("difference varies with lambda by {variation:.3e}")));
    }
    let herm = max_abs(&(&mean - mean.adjoint()));
    if herm > tol.tol_id * scale {
        return Err(Error::FrameInconsistency(format!("difference is not Hermitian ({herm:.3e})")));
    }
    let outside = max_abs(&(&mean - &mean * d.proj_h()));
    if outside > tol.tol_id * scale {
        return Err(Error::FrameInconsistency(format!("difference does not vanish off H ({outside:.3e})")));
    }
    Ok(FrameShift { shift: mean, variation, hermitian_defect: herm, outside_h: outside })
}

/// ‖f‖_Δ² = tr ∫ f*Δf.
pub fn l2delta_norm_sq(sys: &SymmetricSystem, f: &WeightedFunction) -> Result<f64> {
    Ok(l2delta_gram(sys, f, f)?.trace().re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::oracle::{DiracOracle, DiracTau, ExampleSystem};

    fn dirac() -> Arc<WeylProblem> {
        Arc::new(DiracOracle::problem(&Tolerances::default()))
    }

    #[test]
    fn dirac_blocks_match_closed_form() {
        let p = dirac();
        for lam in [I, c(0.4, 0.3), c(-2.0, 1.5), cr(0.7)] {
            let b = p.weyl_blocks(lam).unwrap();
            let [m0, m2, m3, m4] = DiracOracle::blocks(lam);
            assert!((b.m0[(0, 0)] - m0).norm() < 1e-8 * m0.norm().max(1.0), "{lam}: {} vs {m0}", b.m0[(0, 0)]);
            assert!((b.m2[(0, 0)] - m2).norm() < 1e-8 * m2.norm().max(1.0));
            assert!((b.m3[(0, 0)] - m3).norm() < 1e-8 * m3.norm().max(1.0));
            assert!((b.m4[(0, 0)] - m4).norm() < 1e-8 * m4.norm().max(1.0));
        }
    }

    #[test]
    fn dirac_swapped_tau() {
        let p = dirac();
        let d = DiracOracle::new(DiracTau::Swapped);
        let m = p.m_value(&d.boundary_parameter(), c(0.3, 0.8)).unwrap();
        assert!((m[(0, 0)] - d.m(c(0.3, 0.8))).norm() < 1e-8);
        let (md, _) = p.v_tau_direct(&d.boundary_parameter(), c(0.3, 0.8)).unwrap();
        assert!((md[(0, 0)] - m[(0, 0)]).norm() < 1e-8);
    }

    #[test]
    fn dirac_symmetry_and_nevanlinna() {
        let p = dirac();
        let lam = c(1.0, 1.0);
        let b = p.weyl_blocks(lam).unwrap();
        let bc = p.weyl_blocks(lam.conj()).unwrap();
        assert!(b.symmetry_residual(&bc) < 1e-8);
        assert!(b.nevanlinna_margin() > -1e-8);
    }

    #[test]
    fn dirac_identities() {
        let p = dirac();
        let tau = BoundaryParameter::canonical(1);
        let lam = c(0.5, 1.0);
        let xs: Vec<f64> = (0..11).map(|k| 0.1 * k as f64).collect();
        assert!(p.kernel_identity_residual(&tau, lam, &xs).unwrap() < 1e-8);
        assert!(p.herglotz_defect(&tau, lam).unwrap().abs() < 1e-8);
        let r = p.nevanlinna_identity_residual(&tau, I, c(0.0, 2.0)).unwrap();
        assert!(max_abs(&r) < 1e-7, "{}", max_abs(&r));
    }

    #[test]
    fn dirac_green_symmetry_and_jump() {
        let p = dirac();
        let tau = BoundaryParameter::canonical(1);
        let lam = c(0.3, 0.9);
        let g = p.green_kernel(&tau, 0.7, 0.2, lam).unwrap();
        let gs = p.green_kernel(&tau, 0.2, 0.7, lam.conj()).unwrap();
        assert!(max_abs(&(g.adjoint() - gs)) < 1e-12);
        assert!(p.green_kernel(&tau, 0.5, 0.5, lam).is_err());
    }

    #[test]
    fn resolvent_of_zero_is_zero() {
        let p = dirac();
        let tau = BoundaryParameter::canonical(1);
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let f = WeightedFunction::zeros(grid, 2, 1);
        let out = p.apply_resolvent(&tau, &f, I).unwrap();
        assert!(out.y.values.iter().all(|v| max_abs(v) == 0.0));
    }

    #[test]
    fn example_minimal_m_at_i() {
        let ex = ExampleSystem::default();
        let p = Arc::new(ex.problem(&Tolerances::default()));
        let mf = p.m_function_singular_minimal().unwrap();
        let m = mf.eval(I).unwrap();
        let exact = ex.m(I).unwrap();
        assert!(max_abs(&(&m - &exact)) < 1e-6 * max_abs(&exact), "{m} vs {exact}");
    }

    #[test]
    fn memo_keeps_first_value() {
        let m: Memo<u32, u32> = Memo::default();
        assert_eq!(*m.get_or_try_insert(1, || Ok(5)).unwrap(), 5);
        assert_eq!(*m.get_or_try_insert(1, || Ok(7)).unwrap(), 5);
        assert!(m.get_or_try_insert(2, || Err(Error::Domain("x".into()))).is_err());
        assert_eq!(m.len(), 1);
    }
}
