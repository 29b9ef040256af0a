//! Boundary frames at both end points and Nevanlinna boundary parameters.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    block, c, cond2, cr, eye, hstack, im_part, max_abs, max_principal_angle, min_eig_herm, null_space, rank, rows,
    vstack, zeros, CMat, I,
};
use crate::propagate::{b_form, extrapolate_limit, Sampled};
use crate::sysdef::{build_canonical_j, SpaceDecomposition, SymmetricSystem};
use crate::tolerances::Tolerances;

/// Row blocks (Γ₀, Γ̂, Γ₁) of a boundary map applied to a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaBlocks {
    pub g0: CMat,
    pub ghat: CMat,
    pub g1: CMat,
}

impl GammaBlocks {
    /// (Γ₀; Γ̂) stacked.
    pub fn top(&self) -> CMat {
        vstack(&[&self.g0, &self.ghat])
    }

    pub fn stacked(&self) -> CMat {
        vstack(&[&self.g0, &self.ghat, &self.g1])
    }

    fn split(m: &CMat, r0: usize, rq: usize, r1: usize) -> Self {
        GammaBlocks { g0: rows(m, 0, r0), ghat: rows(m, r0, rq), g1: rows(m, r0 + rq, r1) }
    }
}

/// Γ_a y = Ũ y(a), built from U and a J-unitary extension Ũ.
#[derive(Debug, Clone)]
pub struct BoundaryFrameA {
    decomp: SpaceDecomposition,
    u: CMat,
    utilde: CMat,
    utilde_inv: CMat,
}

/// Residuals of the three U-relations and of Ũ*JŨ = J.
#[derive(Debug, Clone, Copy)]
pub struct FrameAResiduals {
    pub hat_hat: f64,
    pub h_hat: f64,
    pub h_h: f64,
    pub j_unitary: f64,
}

impl BoundaryFrameA {
    pub fn decomp(&self) -> SpaceDecomposition {
        self.decomp
    }

    pub fn u(&self) -> &CMat {
        &self.u
    }

    pub fn utilde(&self) -> &CMat {
        &self.utilde
    }

    pub fn utilde_inv(&self) -> &CMat {
        &self.utilde_inv
    }

    /// Initial value Ũ⁻¹ w of the solution whose boundary values at a are w.
    pub fn initial_for(&self, w: &CMat) -> CMat {
        &self.utilde_inv * w
    }

    /// φ_U(a) = Ũ⁻¹ (I_{H₀}; 0).
    pub fn phi_initial(&self) -> CMat {
        let d = self.decomp;
        self.initial_for(&vstack(&[&eye(d.h0()), &zeros(d.p, d.h0())]))
    }

    /// The same initial value assembled directly from the blocks of U.
    pub fn phi_initial_explicit(&self) -> CMat {
        let SpaceDecomposition { p, q } = self.decomp;
        let u = &self.u;
        let (u1, u2, u3) = (block(u, 0, q, 0, p), block(u, 0, q, p, q), block(u, 0, q, p + q, p));
        let (u4, u5, u6) = (block(u, q, p, 0, p), block(u, q, p, p, q), block(u, q, p, p + q, p));
        let top = hstack(&[&u6.adjoint(), &(u3.adjoint() * I)]);
        let mid = hstack(&[&(u5.adjoint() * (-I)), &u2.adjoint()]);
        let bot = hstack(&[&(-u4.adjoint()), &(u1.adjoint() * (-I))]);
        vstack(&[&top, &mid, &bot])
    }

    /// ψ(a) = Ũ⁻¹ (−(i/2)P_Ĥ; −P_H).
    pub fn psi_initial(&self) -> CMat {
        let d = self.decomp;
        let top = d.proj_hat() * c(0.0, -0.5);
        let bot = -d.proj_h_rows();
        self.initial_for(&vstack(&[&top, &bot]))
    }

    /// Boundary values of a matrix of initial data.
    pub fn gamma_values(&self, ya: &CMat) -> GammaBlocks {
        let d = self.decomp;
        GammaBlocks::split(&(&self.utilde * ya), d.p, d.q, d.p)
    }

    pub fn residuals(&self) -> FrameAResiduals {
        let d = self.decomp;
        let j = build_canonical_j(d.p, d.q).expect("valid decomposition");
        let r = &self.u * &j * self.u.adjoint();
        let (q, p) = (d.q, d.p);
        let hat_hat = max_abs(&(block(&r, 0, q, 0, q) - eye(q) * I));
        let h_hat = max_abs(&block(&r, q, p, 0, q));
        let h_h = max_abs(&block(&r, q, p, q, p));
        let j_unitary = max_abs(&(self.utilde.adjoint() * &j * &self.utilde - &j));
        FrameAResiduals { hat_hat, h_hat, h_h, j_unitary }
    }
}

/// Validates U and completes it to a J-unitary Ũ (or checks the supplied one).
pub fn build_frame_a(
    decomp: SpaceDecomposition,
    u: &CMat,
    utilde_hint: Option<&CMat>,
    tol: &Tolerances,
) -> Result<BoundaryFrameA> {
    let (p, q, n) = (decomp.p, decomp.q, decomp.n());
    if u.shape() != (p + q, n) {
        return Err(Error::Dimension(format!("U has shape {:?}, expected ({}, {n})", u.shape(), p + q)));
    }
    if rank(u, 1e-12) != p + q {
        return Err(Error::InvalidFrame("U does not have full row rank".into()));
    }
    let j = build_canonical_j(p, q)?;
    let scale = max_abs(u).powi(2).max(1.0);
    let r = u * &j * u.adjoint();
    let checks = [
        (block(&r, 0, q, 0, q) - eye(q) * I, "i u2 u2* - u1 u3* + u3 u1* = iI"),
        (block(&r, q, p, 0, q), "i u5 u2* - u4 u3* + u6 u1* = 0"),
        (block(&r, q, p, q, p), "i u5 u5* + u6 u4* - u4 u6* = 0"),
    ];
    for (m, name) in checks {
        let d = max_abs(&m);
        if d > tol.tau_frame * scale {
            return Err(Error::InvalidFrame(format!("relation {name} violated (residual {d:.3e})")));
        }
    }
    let utilde = match utilde_hint {
        Some(h) => {
            if h.shape() != (n, n) {
                return Err(Error::Dimension("Utilde must be n×n".into()));
            }
            let d = max_abs(&(rows(h, p, p + q) - u));
            if d > tol.tau_frame * max_abs(u).max(1.0) {
                return Err(Error::InvalidFrame(format!("Utilde does not extend U (defect {d:.3e})")));
            }
            h.clone()
        }
        None => complete_j_unitary(&j, u, p)?,
    };
    let ju = max_abs(&(utilde.adjoint() * &j * &utilde - &j));
    if ju > tol.tau_frame * max_abs(&utilde).powi(2).max(1.0) {
        return Err(Error::InvalidFrame(format!("Utilde* J Utilde != J (residual {ju:.3e})")));
    }
    // Ũ⁻¹ = J⁻¹ Ũ* J = −J Ũ* J for J-unitary Ũ
    let utilde_inv = -(&j * utilde.adjoint() * &j);
    Ok(BoundaryFrameA { decomp, u: u.clone(), utilde, utilde_inv })
}

/// Top rows W (p×n) with [W; U] J-unitary, of least Frobenius norm.
///
/// W J U* = (0, −I_p) is linear in W; the general solution is W_p + Z N with N an
/// orthonormal basis of the rows annihilated by J U*. The remaining condition
/// W J W* = 0 becomes Y − Y* = −W_p J W_p* with Y = Z T, T = N J W_p*, whose
/// solutions are Y = −A/2 + H, H Hermitian. H is chosen by least squares.
fn complete_j_unitary(j: &CMat, u: &CMat, p: usize) -> Result<CMat> {
    let n = u.ncols();
    let k = j * u.adjoint();
    let q = u.nrows() - p;
    let rhs = hstack(&[&zeros(p, q), &(-eye(p))]);
    let kpinv = k
        .clone()
        .pseudo_inverse(1e-14)
        .map_err(|e| Error::InvalidFrame(format!("pseudo-inverse failed: {e}")))?;
    let wp = &rhs * kpinv;
    let nb = null_space(&k.adjoint(), 1e-10).adjoint();
    if nb.nrows() != p {
        return Err(Error::InvalidFrame(format!("complement has dimension {}, expected {p}", nb.nrows())));
    }
    let t = &nb * j * wp.adjoint();
    let tinv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidFrame("degenerate J-complement".into()))?;
    let a = &wp * j * wp.adjoint();
    let y = least_norm_hermitian(&(a * cr(-0.5)), &tinv);
    let z = y * &tinv;
    let w = wp + z * nb;
    let mut ut = zeros(n, n);
    ut.view_mut((0, 0), (p, n)).copy_from(&w);
    ut.view_mut((p, 0), (q + p, n)).copy_from(u);
    Ok(ut)
}

/// Y = H + a with H Hermitian minimizing ‖(H + a) T⁻¹‖_F.
fn least_norm_hermitian(a: &CMat, tinv: &CMat) -> CMat {
    let p = a.nrows();
    let mut basis: Vec<CMat> = Vec::new();
    for r in 0..p {
        for s in r..p {
            let mut e = zeros(p, p);
            e[(r, s)] = cr(1.0);
            e[(s, r)] = cr(1.0);
            basis.push(e);
            if s > r {
                let mut e = zeros(p, p);
                e[(r, s)] = c(0.0, 1.0);
                e[(s, r)] = c(0.0, -1.0);
                basis.push(e);
            }
        }
    }
    let m = p * p;
    let mut design = DMatrix::<f64>::zeros(2 * m, basis.len());
    let mut target = DVector::<f64>::zeros(2 * m);
    let at = a * tinv;
    for (col, e) in basis.iter().enumerate() {
        let et = e * tinv;
        for (i, z) in et.iter().enumerate() {
            design[(i, col)] = z.re;
            design[(m + i, col)] = z.im;
        }
    }
    for (i, z) in at.iter().enumerate() {
        target[i] = -z.re;
        target[m + i] = -z.im;
    }
    let coef = design.svd(true, true).solve(&target, 1e-14).unwrap_or_else(|_| DVector::zeros(basis.len()));
    let mut h = zeros(p, p);
    for (e, x) in basis.iter().zip(coef.iter()) {
        h += e * cr(*x);
    }
    h + a
}

/// Γ_a y = Ũ y(a) split into rows (p, q, p).
pub fn gamma_a(frame: &BoundaryFrameA, y: &crate::propagate::OperatorSolution) -> GammaBlocks {
    frame.gamma_values(y.initial())
}

pub type ThetaFn = Arc<dyn Fn(f64) -> CMat + Send + Sync>;

#[derive(Clone)]
pub enum FrameBKind {
    /// Γ_b y = X_b y(b).
    Regular { xb: CMat },
    /// Entries [y, θ_j]_b grouped into the Γ₀b, Γ̂_b and Γ₁b blocks. Each θ is an n×1 evaluator.
    Singular { theta0: Vec<ThetaFn>, theta_hat: Vec<ThetaFn>, theta1: Vec<ThetaFn>, beta0: f64, levels: usize },
}

#[derive(Clone)]
pub struct BoundaryFrameB {
    pub kind: FrameBKind,
    /// dim H̃_b
    pub dim_tilde_hb: usize,
    /// dim H_b
    pub dim_hb: usize,
    pub q: usize,
}

impl fmt::Debug for BoundaryFrameB {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            FrameBKind::Regular { xb } => format!("Regular({xb:?})"),
            FrameBKind::Singular { beta0, levels, .. } => format!("Singular(beta0={beta0}, levels={levels})"),
        };
        f.debug_struct("BoundaryFrameB")
            .field("kind", &kind)
            .field("dim_tilde_hb", &self.dim_tilde_hb)
            .field("dim_hb", &self.dim_hb)
            .finish()
    }
}

pub fn build_frame_b_regular(decomp: SpaceDecomposition, xb: &CMat, tol: &Tolerances) -> Result<BoundaryFrameB> {
    let n = decomp.n();
    if xb.shape() != (n, n) {
        return Err(Error::Dimension(format!("X_b has shape {:?}, expected {n}×{n}", xb.shape())));
    }
    let j = build_canonical_j(decomp.p, decomp.q)?;
    let d = max_abs(&(xb.adjoint() * &j * xb - &j));
    if d > tol.tau_frame * max_abs(xb).powi(2).max(1.0) {
        return Err(Error::InvalidFrame(format!("X_b* J X_b != J (residual {d:.3e})")));
    }
    Ok(BoundaryFrameB { kind: FrameBKind::Regular { xb: xb.clone() }, dim_tilde_hb: decomp.p, dim_hb: decomp.p, q: decomp.q })
}

/// Singular frame from θ evaluators. `beta0` and `levels` define the truncation schedule.
pub fn build_frame_b_singular(
    decomp: SpaceDecomposition,
    theta0: Vec<ThetaFn>,
    theta_hat: Vec<ThetaFn>,
    theta1: Vec<ThetaFn>,
    beta0: f64,
    levels: usize,
) -> Result<BoundaryFrameB> {
    if theta_hat.len() != decomp.q {
        return Err(Error::Dimension(format!("need {} theta functions for the middle block", decomp.q)));
    }
    if theta0.len() != theta1.len() {
        return Err(Error::InvalidFrame("unequal indices: dim H~_b != dim H_b is not supported by the solvers".into()));
    }
    let n = decomp.n();
    for th in theta0.iter().chain(theta_hat.iter()).chain(theta1.iter()) {
        if th(beta0).shape() != (n, 1) {
            return Err(Error::Dimension(format!("theta functions must be {n}×1")));
        }
    }
    if levels < 2 {
        return Err(Error::Domain("at least two truncation levels are needed".into()));
    }
    let (dt, dh) = (theta0.len(), theta1.len());
    Ok(BoundaryFrameB {
        kind: FrameBKind::Singular { theta0, theta_hat, theta1, beta0, levels },
        dim_tilde_hb: dt,
        dim_hb: dh,
        q: decomp.q,
    })
}

impl BoundaryFrameB {
    pub fn is_regular(&self) -> bool {
        matches!(self.kind, FrameBKind::Regular { .. })
    }

    /// Truncation schedule for singular frames (empty for regular ones).
    pub fn schedule(&self, sys: &SymmetricSystem) -> Vec<f64> {
        match &self.kind {
            FrameBKind::Regular { .. } => Vec::new(),
            FrameBKind::Singular { beta0, levels, .. } => crate::propagate::beta_schedule(sys, *beta0, *levels),
        }
    }

    /// Blocks evaluated pointwise at time `t` from the value y(t): X_b y(t) for regular
    /// frames and θ_j(t)* J y(t) for singular ones.
    pub fn gamma_pointwise(&self, j: &CMat, y_t: &CMat, t: f64) -> GammaBlocks {
        match &self.kind {
            FrameBKind::Regular { xb } => {
                let p = self.dim_hb;
                GammaBlocks::split(&(xb * y_t), p, self.q, p)
            }
            FrameBKind::Singular { theta0, theta_hat, theta1, .. } => {
                let jy = j * y_t;
                let pair = |ths: &Vec<ThetaFn>| {
                    let mut m = zeros(ths.len(), y_t.ncols());
                    for (r, th) in ths.iter().enumerate() {
                        m.set_row(r, &(th(t).adjoint() * &jy).row(0));
                    }
                    m
                };
                GammaBlocks { g0: pair(theta0), ghat: pair(theta_hat), g1: pair(theta1) }
            }
        }
    }
}

/// Γ_b y: end-point rows for regular frames, extrapolated pairings [y, θ_j]_b otherwise.
pub fn gamma_b(sys: &SymmetricSystem, frame: &BoundaryFrameB, y: &dyn Sampled, tol: &Tolerances) -> Result<GammaBlocks> {
    match &frame.kind {
        FrameBKind::Regular { .. } => Ok(frame.gamma_pointwise(sys.j(), &y.eval(sys.b), sys.b)),
        FrameBKind::Singular { .. } => {
            let sched = frame.schedule(sys);
            let levels: Vec<(f64, CMat)> = sched
                .iter()
                .map(|&b| (b, frame.gamma_pointwise(sys.j(), &y.eval(b), b).stacked()))
                .collect();
            let lim = extrapolate_limit(sys.b, &levels, tol.limit_tol)?;
            let (r0, rq) = (frame.dim_tilde_hb, frame.q);
            Ok(GammaBlocks::split(&lim.value, r0, rq, frame.dim_hb))
        }
    }
}

/// Max deviation between [y, z]_b and (Γ₀b y, Γ₁b z) − (Γ₁b y, Γ₀b z) + i(Γ̂_b y, Γ̂_b z)
/// over all pairs of test solutions.
pub fn frame_identity_residual(
    sys: &SymmetricSystem,
    frame: &BoundaryFrameB,
    tests: &[&dyn Sampled],
    tol: &Tolerances,
) -> Result<f64> {
    let sched = frame.schedule(sys);
    let gammas: Vec<GammaBlocks> = tests.iter().map(|y| gamma_b(sys, frame, *y, tol)).collect::<Result<_>>()?;
    let mut worst = 0.0_f64;
    for (a, y) in tests.iter().enumerate() {
        for (b, z) in tests.iter().enumerate() {
            let lhs = b_form(sys, *y, *z, &sched, tol)?.value;
            let (gy, gz) = (&gammas[a], &gammas[b]);
            let rhs = gz.g1.adjoint() * &gy.g0 - gz.g0.adjoint() * &gy.g1 + gz.ghat.adjoint() * &gy.ghat * I;
            worst = worst.max(max_abs(&(lhs - rhs)));
        }
    }
    Ok(worst)
}

static NEXT_TAU_ID: AtomicU64 = AtomicU64::new(1);

pub type PairFn = Arc<dyn Fn(Complex64) -> (CMat, CMat) + Send + Sync>;

#[derive(Clone)]
pub enum TauKind {
    ConstantSelfAdjoint { c0: CMat, c1: CMat },
    Holomorphic { dim: usize, eval: PairFn },
}

/// A Nevanlinna pair τ(λ) = {(C₀(λ), C₁(λ))}.
#[derive(Clone)]
pub struct BoundaryParameter {
    pub kind: TauKind,
    pub label: String,
    id: u64,
}

impl fmt::Debug for BoundaryParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            TauKind::ConstantSelfAdjoint { c0, c1 } => {
                write!(f, "BoundaryParameter({}, C0={c0:?}, C1={c1:?})", self.label)
            }
            TauKind::Holomorphic { dim, .. } => write!(f, "BoundaryParameter({}, holomorphic dim {dim})", self.label),
        }
    }
}

impl BoundaryParameter {
    fn with_kind(kind: TauKind, label: String) -> Self {
        BoundaryParameter { kind, label, id: NEXT_TAU_ID.fetch_add(1, Ordering::Relaxed) }
    }

    /// A constant pair; validated as self-adjoint (Im(C₁C₀*) = 0, full rank).
    pub fn constant(c0: CMat, c1: CMat, tol: &Tolerances) -> Result<Self> {
        if c0.shape() != c1.shape() || c0.nrows() != c0.ncols() {
            return Err(Error::Dimension("C0 and C1 must be square of equal size".into()));
        }
        let rep = check_selfadjoint_pair(&c0, &c1, tol);
        if let Some(msg) = rep {
            return Err(Error::NotSelfAdjoint(msg));
        }
        let label = format!("constant({}x{})", c0.nrows(), c0.ncols());
        Ok(Self::with_kind(TauKind::ConstantSelfAdjoint { c0, c1 }, label))
    }

    /// (cos B, sin B) for Hermitian B.
    pub fn from_selfadjoint(b: &CMat, tol: &Tolerances) -> Result<Self> {
        if max_abs(&(b - b.adjoint())) > tol.tau_herm * max_abs(b).max(1.0) {
            return Err(Error::NotSelfAdjoint("B is not Hermitian".into()));
        }
        let c0 = crate::linalg::herm_fn(b, f64::cos);
        let c1 = crate::linalg::herm_fn(b, f64::sin);
        Ok(Self::constant(c0, c1, tol)?.labelled("cos B, sin B"))
    }

    /// (I, 0)
    pub fn canonical(dim: usize) -> Self {
        Self::with_kind(TauKind::ConstantSelfAdjoint { c0: eye(dim), c1: zeros(dim, dim) }, "(I, 0)".into())
    }

    /// (0, I)
    pub fn swapped(dim: usize) -> Self {
        Self::with_kind(TauKind::ConstantSelfAdjoint { c0: zeros(dim, dim), c1: eye(dim) }, "(0, I)".into())
    }

    pub fn holomorphic(dim: usize, eval: PairFn, label: impl Into<String>) -> Self {
        Self::with_kind(TauKind::Holomorphic { dim, eval }, label.into())
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            TauKind::ConstantSelfAdjoint { c0, .. } => c0.nrows(),
            TauKind::Holomorphic { dim, .. } => *dim,
        }
    }

    pub fn is_constant_selfadjoint(&self) -> bool {
        matches!(self.kind, TauKind::ConstantSelfAdjoint { .. })
    }

    /// (C₀(λ), C₁(λ))
    pub fn at(&self, lambda: Complex64) -> (CMat, CMat) {
        match &self.kind {
            TauKind::ConstantSelfAdjoint { c0, c1 } => (c0.clone(), c1.clone()),
            TauKind::Holomorphic { eval, .. } => eval(lambda),
        }
    }

    /// True when C₁ vanishes identically (known structurally).
    pub fn c1_is_zero(&self) -> bool {
        match &self.kind {
            TauKind::ConstantSelfAdjoint { c1, .. } => c1.iter().all(|z| *z == cr(0.0)),
            TauKind::Holomorphic { .. } => false,
        }
    }
}

fn check_selfadjoint_pair(c0: &CMat, c1: &CMat, tol: &Tolerances) -> Option<String> {
    let dim = c0.nrows();
    let scale = (max_abs(c0) + max_abs(c1)).powi(2).max(1e-300);
    let im = max_abs(&im_part(&(c1 * c0.adjoint())));
    if im > 1e-10 * scale {
        return Some(format!("Im(C1 C0*) != 0 (residual {im:.3e})"));
    }
    if rank(&hstack(&[c0, c1]), 1e-10) != dim {
        return Some("rank(C0, C1) is deficient".into());
    }
    let _ = tol;
    None
}

#[derive(Debug, Clone)]
pub struct PairSample {
    pub lambda: Complex64,
    /// Im λ · min eig Im(C₁C₀*) (scaled); should be ≥ 0.
    pub sign_margin: f64,
    /// ‖C₁(λ)C₀*(λ̄) − C₀(λ)C₁*(λ̄)‖
    pub symmetry_residual: f64,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct NevanlinnaReport {
    pub valid: bool,
    pub selfadjoint: bool,
    pub samples: Vec<PairSample>,
    pub failures: Vec<String>,
}

pub fn validate_nevanlinna_pair(tau: &BoundaryParameter, lambdas: &[Complex64], tol: &Tolerances) -> NevanlinnaReport {
    let dim = tau.dim();
    let mut failures = Vec::new();
    let mut samples = Vec::new();
    let mut selfadjoint = false;
    if let TauKind::ConstantSelfAdjoint { c0, c1 } = &tau.kind {
        match check_selfadjoint_pair(c0, c1, tol) {
            None => selfadjoint = true,
            Some(m) => failures.push(m),
        }
    }
    for &lam in lambdas {
        let (c0, c1) = tau.at(lam);
        let (c0m, c1m) = tau.at(lam.conj());
        let scale = (max_abs(&c0) + max_abs(&c1)).powi(2).max(1e-300);
        let imc = im_part(&(&c1 * c0.adjoint()));
        let sign_margin = if lam.im == 0.0 { 0.0 } else { lam.im.signum() * min_eig_herm(&imc) / scale };
        let symmetry_residual = max_abs(&(&c1 * c0m.adjoint() - &c0 * c1m.adjoint())) / scale;
        let rk = rank(&hstack(&[&c0, &c1]), 1e-10);
        if sign_margin < -tol.tol_id {
            failures.push(format!("Im(lambda) Im(C1 C0*) not >= 0 at lambda = {lam} (margin {sign_margin:.3e})"));
        }
        if symmetry_residual > tol.tol_id {
            failures.push(format!("C1(l) C0*(conj l) != C0(l) C1*(conj l) at lambda = {lam} ({symmetry_residual:.3e})"));
        }
        if rk != dim {
            failures.push(format!("rank(C0, C1) = {rk} < {dim} at lambda = {lam}"));
        }
        samples.push(PairSample { lambda: lam, sign_margin, symmetry_residual, rank: rk });
    }
    NevanlinnaReport { valid: failures.is_empty(), selfadjoint, samples, failures }
}

/// Hermitian B with {(C₀, C₁)} = {(cos B, sin B)} as relations, eigenvalues in (−π/2, π/2].
pub fn normalize_selfadjoint_pair(c0: &CMat, c1: &CMat, tol: &Tolerances) -> Result<CMat> {
    let dim = c0.nrows();
    if c0.shape() != (dim, dim) || c1.shape() != (dim, dim) {
        return Err(Error::Dimension("C0 and C1 must be square of equal size".into()));
    }
    let plus = c0 + c1 * I;
    let minus = c0 - c1 * I;
    for (m, name) in [(&plus, "C0 + iC1"), (&minus, "C0 - iC1")] {
        if cond2(m) > 1e12 {
            return Err(Error::NotSelfAdjoint(format!("{name} is singular")));
        }
    }
    // W = (C0 + iC1)⁻¹(C0 − iC1) is unchanged by C ↦ X C, and equals e^{−2iB}
    let w = plus.clone().lu().solve(&minus).ok_or_else(|| Error::NotSelfAdjoint("C0 + iC1 is singular".into()))?;
    let unit = max_abs(&(w.adjoint() * &w - eye(dim)));
    if unit > 1e-8 {
        return Err(Error::NotSelfAdjoint(format!("Cayley transform is not unitary (defect {unit:.3e})")));
    }
    let (qm, t) = w.schur().unpack();
    let mut theta = DVector::<f64>::zeros(dim);
    for k in 0..dim {
        let mut a = t[(k, k)].arg();
        if a > std::f64::consts::PI - 1e-12 {
            a -= 2.0 * std::f64::consts::PI;
        }
        theta[k] = a;
    }
    let d = CMat::from_diagonal(&theta.map(|a| cr(-0.5 * a)));
    let b = &qm * d * qm.adjoint();
    let b = (&b + b.adjoint()) * cr(0.5);
    let _ = tol;
    Ok(b)
}

/// Largest principal angle between the kernels of (C₀, C₁) and (C₀′, C₁′).
pub fn relation_angle(c0: &CMat, c1: &CMat, d0: &CMat, d1: &CMat) -> f64 {
    let k1 = null_space(&hstack(&[c0, c1]), 1e-10);
    let k2 = null_space(&hstack(&[d0, d1]), 1e-10);
    max_principal_angle(&k1, &k2, 1e-10)
}

/// A member of a collection: C₀ = (C₀₁, C₀₂) split along H₁ ⊕ H₂, and C₁ acting on H₁.
#[derive(Debug, Clone)]
pub struct CollectionPair {
    pub c01: CMat,
    pub c02: CMat,
    pub c1: CMat,
}

pub type CollectionFn = Arc<dyn Fn(Complex64) -> CollectionPair + Send + Sync>;

#[derive(Debug, Clone)]
pub struct CollectionReport {
    pub valid: bool,
    pub psd_margin: f64,
    pub nsd_margin: f64,
    pub coupling_residual: f64,
    pub min_singular_plus: f64,
    pub min_singular_minus: f64,
    pub failures: Vec<String>,
}

/// Checks a pair of families τ₊ (upper half-plane) and τ₋ (lower) for membership in the
/// collection class. `tau_minus` is evaluated at conjugate points.
pub fn validate_collection(
    tau_plus: &CollectionFn,
    tau_minus: &CollectionFn,
    lambdas_upper: &[Complex64],
    tol: &Tolerances,
) -> CollectionReport {
    let mut rep = CollectionReport {
        valid: true,
        psd_margin: f64::INFINITY,
        nsd_margin: f64::INFINITY,
        coupling_residual: 0.0,
        min_singular_plus: f64::INFINITY,
        min_singular_minus: f64::INFINITY,
        failures: Vec::new(),
    };
    for &lam in lambdas_upper {
        if lam.im <= 0.0 {
            rep.failures.push(format!("sample {lam} is not in the upper half-plane"));
            continue;
        }
        let cp = tau_plus(lam);
        let dm = tau_minus(lam.conj());
        // 2 Im(C1 C01*) + C02 C02* ⪰ 0
        let psd = im_part(&(&cp.c1 * cp.c01.adjoint())) * cr(2.0) + &cp.c02 * cp.c02.adjoint();
        rep.psd_margin = rep.psd_margin.min(min_eig_herm(&psd));
        // 2 Im(D1 D01*) + D02 D02* ⪯ 0
        let nsd = im_part(&(&dm.c1 * dm.c01.adjoint())) * cr(2.0) + &dm.c02 * dm.c02.adjoint();
        rep.nsd_margin = rep.nsd_margin.min(-crate::linalg::herm_eigenvalues(&nsd).last().cloned().unwrap_or(0.0));
        let coupling = &cp.c1 * dm.c01.adjoint() - &cp.c01 * dm.c1.adjoint() + &cp.c02 * dm.c02.adjoint() * I;
        rep.coupling_residual = rep.coupling_residual.max(max_abs(&coupling));
        let h1 = cp.c1.ncols();
        let mut c1p1 = zeros(cp.c1.nrows(), h1 + cp.c02.ncols());
        c1p1.view_mut((0, 0), (cp.c1.nrows(), h1)).copy_from(&cp.c1);
        let plus = hstack(&[&cp.c01, &cp.c02]) - c1p1 * I;
        let minus = &dm.c01 + &dm.c1 * I;
        let smin = |m: &CMat| -> f64 {
            if m.nrows() != m.ncols() {
                return 0.0;
            }
            crate::linalg::singular_values(m).last().cloned().unwrap_or(f64::INFINITY)
        };
        rep.min_singular_plus = rep.min_singular_plus.min(smin(&plus));
        rep.min_singular_minus = rep.min_singular_minus.min(smin(&minus));
    }
    let eps = tol.tol_id;
    if rep.psd_margin < -eps {
        rep.failures.push(format!("upper-half-plane positivity fails (min eigenvalue {:.3e})", rep.psd_margin));
    }
    if rep.nsd_margin < -eps {
        rep.failures.push(format!("lower-half-plane negativity fails (max eigenvalue {:.3e})", -rep.nsd_margin));
    }
    if rep.coupling_residual > eps {
        rep.failures.push(format!("coupling identity fails (residual {:.3e})", rep.coupling_residual));
    }
    if rep.min_singular_plus < 1e-10 {
        rep.failures.push("C0 - i C1 P1 is not invertible".into());
    }
    if rep.min_singular_minus < 1e-10 {
        rep.failures.push("D01 + i D1 is not invertible".into());
    }
    rep.valid = rep.failures.is_empty();
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_example(b: f64) -> (SpaceDecomposition, CMat) {
        let d = SpaceDecomposition::new(1, 1).unwrap();
        let u = CMat::from_row_slice(2, 3, &[cr(0.0), cr(1.0), cr(0.0), cr(b.cos()), cr(0.0), cr(b.sin())]);
        (d, u)
    }

    #[test]
    fn completion_of_documented_frame() {
        let tol = Tolerances::default();
        let (d, u) = frame_example(0.0);
        let f = build_frame_a(d, &u, None, &tol).unwrap();
        let z = cr(0.0);
        let expected = CMat::from_row_slice(3, 3, &[z, z, cr(-1.0), z, cr(1.0), z, cr(1.0), z, z]);
        assert!(max_abs(&(f.utilde() - expected)) < 1e-14);
    }

    #[test]
    fn completion_for_angle_b() {
        let tol = Tolerances::default();
        for b in [0.3, -1.2, 2.0] {
            let (d, u) = frame_example(b);
            let f = build_frame_a(d, &u, None, &tol).unwrap();
            let z = cr(0.0);
            let expected = CMat::from_row_slice(
                3,
                3,
                &[cr(b.sin()), z, cr(-b.cos()), z, cr(1.0), z, cr(b.cos()), z, cr(b.sin())],
            );
            assert!(max_abs(&(f.utilde() - &expected)) < 1e-13, "b={b}");
            let phi = f.phi_initial();
            let phi_expected = CMat::from_row_slice(3, 2, &[cr(b.sin()), z, z, cr(1.0), cr(-b.cos()), z]);
            assert!(max_abs(&(&phi - &phi_expected)) < 1e-13);
            assert!(max_abs(&(f.phi_initial_explicit() - phi_expected)) < 1e-13);
        }
    }

    #[test]
    fn identity_frame_gamma_blocks() {
        let tol = Tolerances::default();
        let d = SpaceDecomposition::new(1, 1).unwrap();
        let u = rows(&eye(3), 1, 2);
        let completed = build_frame_a(d, &u, None, &tol).unwrap();
        assert!(max_abs(&(completed.utilde() - eye(3))) < 1e-14);
        let f = build_frame_a(d, &u, Some(&eye(3)), &tol).unwrap();
        let y = CMat::from_column_slice(3, 1, &[c(1.0, 2.0), cr(3.0), cr(-4.0)]);
        let g = f.gamma_values(&y);
        assert_eq!(g.g0[(0, 0)], c(1.0, 2.0));
        assert_eq!(g.ghat[(0, 0)], cr(3.0));
        assert_eq!(g.g1[(0, 0)], cr(-4.0));
        let psi = f.psi_initial();
        let expected = CMat::from_row_slice(3, 2, &[cr(0.0), cr(0.0), cr(0.0), c(0.0, -0.5), cr(-1.0), cr(0.0)]);
        assert!(max_abs(&(psi - expected)) < 1e-15);
    }

    #[test]
    fn invalid_relation_is_named() {
        let tol = Tolerances::default();
        let d = SpaceDecomposition::new(1, 1).unwrap();
        let u = CMat::from_row_slice(2, 3, &[cr(0.0), cr(2.0), cr(0.0), cr(1.0), cr(0.0), cr(0.0)]);
        match build_frame_a(d, &u, None, &tol) {
            Err(Error::InvalidFrame(m)) => assert!(m.contains("iI")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn regular_frame_b_validation() {
        let tol = Tolerances::default();
        let d = SpaceDecomposition::new(1, 0).unwrap();
        assert!(build_frame_b_regular(d, &eye(2), &tol).is_ok());
        let bad = eye(2) * cr(2.0);
        assert!(matches!(build_frame_b_regular(d, &bad, &tol), Err(Error::InvalidFrame(_))));
        let (d3, u) = frame_example(0.7);
        let f = build_frame_a(d3, &u, None, &tol).unwrap();
        assert!(build_frame_b_regular(d3, f.utilde(), &tol).is_ok());
    }

    #[test]
    fn nevanlinna_pair_examples() {
        let tol = Tolerances::default();
        let samples = [c(0.3, 1.0), c(-2.0, 0.5), c(1.0, -1.0), c(0.0, -3.0)];
        let rep = validate_nevanlinna_pair(&BoundaryParameter::canonical(1), &samples, &tol);
        assert!(rep.valid && rep.selfadjoint);
        let graph = BoundaryParameter::holomorphic(1, Arc::new(|l| (eye(1) * l, -eye(1))), "lambda");
        assert!(validate_nevanlinna_pair(&graph, &samples, &tol).valid);
        let bad = BoundaryParameter::holomorphic(1, Arc::new(|l: Complex64| (eye(1) * l.conj(), -eye(1))), "conj");
        let rep = validate_nevanlinna_pair(&bad, &samples, &tol);
        assert!(!rep.valid);
        assert!(rep.samples[0].sign_margin < 0.0);
    }

    #[test]
    fn normalize_examples() {
        let tol = Tolerances::default();
        let b = normalize_selfadjoint_pair(&eye(1), &zeros(1, 1), &tol).unwrap();
        assert!(max_abs(&b) < 1e-15);
        let b = normalize_selfadjoint_pair(&zeros(2, 2), &eye(2), &tol).unwrap();
        assert!(max_abs(&(b - eye(2) * cr(std::f64::consts::FRAC_PI_2))) < 1e-14);
        let th = 0.3_f64;
        let b = normalize_selfadjoint_pair(&(eye(2) * cr(2.0 * th.cos())), &(eye(2) * cr(2.0 * th.sin())), &tol).unwrap();
        assert!(max_abs(&(b - eye(2) * cr(th))) < 1e-14);
    }

    #[test]
    fn normalize_rejects_non_selfadjoint() {
        let tol = Tolerances::default();
        // C0 + iC1 singular
        let r = normalize_selfadjoint_pair(&eye(1), &(eye(1) * I), &tol);
        assert!(matches!(r, Err(Error::NotSelfAdjoint(_))));
    }

    #[test]
    fn collection_examples() {
        let tol = Tolerances::default();
        let samples = [c(0.0, 1.0), c(2.0, 0.3), c(-1.0, 4.0)];
        // H̃_b = H₁ ⊕ H₂ with H₁ = H_b of dimension 1, H₂ of dimension 1
        let plus: CollectionFn =
            Arc::new(|_| CollectionPair { c01: block(&eye(2), 0, 2, 0, 1), c02: block(&eye(2), 0, 2, 1, 1), c1: zeros(2, 1) });
        let minus: CollectionFn = Arc::new(|_| CollectionPair { c01: eye(1), c02: zeros(1, 1), c1: zeros(1, 1) });
        assert!(validate_collection(&plus, &minus, &samples, &tol).valid);

        let eps = 1e-3;
        let perturbed: CollectionFn = Arc::new(move |_| CollectionPair {
            c01: block(&eye(2), 0, 2, 0, 1),
            c02: block(&eye(2), 0, 2, 1, 1),
            c1: block(&eye(2), 0, 2, 0, 1) * cr(eps),
        });
        let rep = validate_collection(&perturbed, &minus, &samples, &tol);
        assert!(!rep.valid);
        assert!((rep.coupling_residual - eps).abs() < 1e-15);

        let lifted: CollectionFn = Arc::new(|l| CollectionPair { c01: eye(1) * l, c02: zeros(1, 0), c1: -eye(1) });
        assert!(validate_collection(&lifted, &lifted, &samples, &tol).valid);
    }
}
