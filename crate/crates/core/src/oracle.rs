//! Closed-form reference systems: a three-dimensional example on [0, ∞) with a
//! singular right end point, and the constant Dirac system on [0, 1].

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::Arc;

use num_complex::Complex64;

use crate::boundary::{build_frame_a, build_frame_b_regular, build_frame_b_singular, BoundaryFrameA, BoundaryFrameB,
    BoundaryParameter, ThetaFn};
use crate::error::{Error, Result};
use crate::linalg::{c, cr, eye, max_abs, rows, zeros, CMat, CVec, I};
use crate::spectral::TransformResult;
use crate::sysdef::{SpaceDecomposition, SymmetricSystem, WeightedFunction};
use crate::tolerances::Tolerances;
use crate::weyl::WeylProblem;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The example system with weight δ on the first and third components:
/// Δ(t) = δ(t) ė₁ė₁* + ė₂ė₂* + ė₃ė₃*, B = 0, p = q = 1, on [0, ∞).
#[derive(Clone)]
pub struct ExampleSystem {
    delta: ScalarFn,
    phi: ScalarFn,
    pub c: f64,
}

impl std::fmt::Debug for ExampleSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExampleSystem").field("c", &self.c).finish()
    }
}

impl Default for ExampleSystem {
    /// δ(t) = e^{−t}, Φ(t) = 1 − e^{−t}, C = 1.
    fn default() -> Self {
        ExampleSystem { delta: Arc::new(|t: f64| (-t).exp()), phi: Arc::new(|t: f64| -(-t).exp_m1()), c: 1.0 }
    }
}

impl ExampleSystem {
    /// δ > 0 with antiderivative Φ (Φ(0) = 0) and total mass C.
    pub fn new(delta: ScalarFn, phi: ScalarFn, c: f64) -> Result<Self> {
        let ex = ExampleSystem { delta, phi, c };
        let samples: Vec<f64> = (0..200).map(|k| 0.25 * k as f64).collect();
        if samples.iter().any(|&t| !((ex.delta)(t) > 0.0)) {
            return Err(Error::Coefficient { t: 0.0, what: "delta must be positive".into() });
        }
        if samples.windows(2).any(|w| (ex.phi)(w[1]) < (ex.phi)(w[0])) || (ex.phi)(0.0).abs() > 1e-14 {
            return Err(Error::Coefficient { t: 0.0, what: "Phi must start at 0 and increase".into() });
        }
        if ((ex.phi)(1e3) - c).abs() > 1e-6 * c.abs().max(1.0) {
            return Err(Error::Coefficient { t: 1e3, what: "Phi does not approach C".into() });
        }
        Ok(ex)
    }

    pub fn delta(&self, t: f64) -> f64 {
        (self.delta)(t)
    }

    pub fn phi(&self, t: f64) -> f64 {
        (self.phi)(t)
    }

    pub fn decomp() -> SpaceDecomposition {
        SpaceDecomposition { p: 1, q: 1 }
    }

    /// Columns ė₁ = (1, 0, −i)/√2, ė₂ = e₂, ė₃ = (1, 0, i)/√2.
    pub fn rotated_basis() -> CMat {
        let s = FRAC_1_SQRT_2;
        CMat::from_row_slice(3, 3, &[cr(s), cr(0.0), cr(s), cr(0.0), cr(1.0), cr(0.0), c(0.0, -s), cr(0.0), c(0.0, s)])
    }

    pub fn delta_matrix(&self, t: f64) -> CMat {
        let d = self.delta(t);
        let z = cr(0.0);
        CMat::from_row_slice(
            3,
            3,
            &[cr(0.5 * (d + 1.0)), z, c(0.0, 0.5 * (d - 1.0)), z, cr(1.0), z, c(0.0, -0.5 * (d - 1.0)), z, cr(0.5 * (d + 1.0))],
        )
    }

    pub fn system(&self) -> SymmetricSystem {
        let me = self.clone();
        SymmetricSystem::new(
            0.0,
            f64::INFINITY,
            false,
            Self::decomp(),
            Arc::new(|_| zeros(3, 3)),
            Arc::new(move |t| me.delta_matrix(t)),
        )
        .expect("example system is well formed")
        .with_name("paper-example")
    }

    /// Ũ = I.
    pub fn frame_a(&self, tol: &Tolerances) -> BoundaryFrameA {
        build_frame_a(Self::decomp(), &rows(&eye(3), 1, 2), Some(&eye(3)), tol).expect("identity frame is valid")
    }

    /// θ(t) = (i/√2) e^{−C} e^{Φ(t)} (1, 0, −i).
    pub fn theta(&self, t: f64) -> CMat {
        let s = FRAC_1_SQRT_2 * (self.phi(t) - self.c).exp();
        CMat::from_column_slice(3, 1, &[c(0.0, s), cr(0.0), cr(s)])
    }

    /// Singular frame with H_b = {0} and Γ̂_b y = [y, θ]_∞.
    pub fn frame_b(&self, beta0: f64, levels: usize) -> BoundaryFrameB {
        let me = self.clone();
        let th: ThetaFn = Arc::new(move |t| me.theta(t));
        build_frame_b_singular(Self::decomp(), Vec::new(), vec![th], Vec::new(), beta0, levels)
            .expect("example frame is valid")
    }

    pub fn problem(&self, tol: &Tolerances) -> WeylProblem {
        WeylProblem::new(self.system(), self.frame_a(tol), self.frame_b(8.0, 8), tol.clone())
    }

    /// Fundamental matrix with columns e^{−iλΦ}(1,0,−i), e^{−iλt}e₂, e^{iλt}(1,0,i).
    pub fn fundamental(&self, t: f64, lambda: Complex64) -> CMat {
        let e1 = (-I * lambda * self.phi(t)).exp();
        let e2 = (-I * lambda * t).exp();
        let e3 = (I * lambda * t).exp();
        let z = cr(0.0);
        CMat::from_row_slice(3, 3, &[e1, z, e3, z, e2, z, -I * e1, z, I * e3])
    }

    /// m(λ) = [[i, i√2 e^{iλC}], [0, i/2]] in the upper half-plane, m(λ̄)* below.
    pub fn m(&self, lambda: Complex64) -> Result<CMat> {
        if lambda.im == 0.0 {
            return Err(Error::Domain("the example m-function is only defined off the real axis".into()));
        }
        if lambda.im < 0.0 {
            return Ok(self.m(lambda.conj())?.adjoint());
        }
        let e = (I * lambda * self.c).exp();
        Ok(CMat::from_row_slice(2, 2, &[I, I * SQRT_2 * e, cr(0.0), c(0.0, 0.5)]))
    }

    /// The square-integrable solution v(t, λ) for Im λ > 0.
    pub fn v(&self, t: f64, lambda: Complex64) -> CMat {
        let et = (I * lambda * t).exp();
        let ep = (-I * lambda * self.phi(t)).exp();
        let k = I * FRAC_1_SQRT_2 * (I * lambda * self.c).exp();
        CMat::from_row_slice(3, 2, &[I * et, k * (ep + et), cr(0.0), cr(0.0), -et, k * (-I * ep + I * et)])
    }

    /// φ(t, λ) = Y(t, λ) (I; 0).
    pub fn phi_solution(&self, t: f64, lambda: Complex64) -> CMat {
        let ep = (-I * lambda * self.phi(t)).exp();
        let et = (I * lambda * t).exp();
        let em = (-I * lambda * t).exp();
        CMat::from_row_slice(3, 2, &[(ep + et) * 0.5, cr(0.0), cr(0.0), em, (-ep + et) * (I * 0.5), cr(0.0)])
    }

    /// Σ′(s) = (1/π) [[1, e^{isC}/√2], [e^{−isC}/√2, 1/2]].
    pub fn sigma_density(&self, s: f64) -> CMat {
        let e = Complex64::from_polar(FRAC_1_SQRT_2, s * self.c);
        CMat::from_row_slice(2, 2, &[cr(1.0), e, e.conj(), cr(0.5)]) * cr(1.0 / PI)
    }

    /// Σ(s) with Σ(0) = 0.
    pub fn sigma_distribution(&self, s: f64) -> CMat {
        let k = c(0.0, 1.0 / (SQRT_2 * self.c));
        let e = Complex64::from_polar(1.0, s * self.c);
        CMat::from_row_slice(2, 2, &[cr(s), -k * (e - 1.0), k * (e.conj() - 1.0), cr(0.5 * s)]) * cr(1.0 / PI)
    }

    /// Transform of f = ḟ₁ė₁ + ḟ₂ė₂ + ḟ₃ė₃ given by its components (3×1 samples) in the
    /// rotated basis, by the trapezoid rule on the sample grid.
    pub fn transform(&self, f_components: &WeightedFunction, s_grid: &[f64]) -> Result<TransformResult> {
        if f_components.nrows() != 3 && !f_components.grid.is_empty() {
            return Err(Error::Dimension("components must be 3×1".into()));
        }
        let w = crate::quadrature::trapezoid_weights(&f_components.grid);
        let values = s_grid
            .iter()
            .map(|&s| {
                let mut f1 = cr(0.0);
                let mut f2 = cr(0.0);
                for ((&t, fv), &wt) in f_components.grid.iter().zip(&f_components.values).zip(&w) {
                    let ep = Complex64::from_polar(1.0, s * self.phi(t));
                    let et = Complex64::from_polar(1.0, s * t);
                    f1 += (ep * self.delta(t) * fv[(0, 0)] + et.conj() * fv[(2, 0)]) * (FRAC_1_SQRT_2 * wt);
                    f2 += et * fv[(1, 0)] * wt;
                }
                CVec::from_vec(vec![f1, f2])
            })
            .collect();
        Ok(TransformResult { s_grid: s_grid.to_vec(), values })
    }
}

/// Which boundary parameter the Dirac oracle uses at the right end point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiracTau {
    /// (C₀, C₁) = (I, 0): m = tan λ.
    Canonical,
    /// (C₀, C₁) = (0, I): m = −cot λ.
    Swapped,
}

/// The system y′ = −λJy on [0, 1] with Ũ = X_b = I.
#[derive(Debug, Clone, Copy)]
pub struct DiracOracle {
    pub tau: DiracTau,
}

impl DiracOracle {
    pub fn new(tau: DiracTau) -> Self {
        DiracOracle { tau }
    }

    pub fn decomp() -> SpaceDecomposition {
        SpaceDecomposition { p: 1, q: 0 }
    }

    pub fn system() -> SymmetricSystem {
        SymmetricSystem::new(0.0, 1.0, true, Self::decomp(), Arc::new(|_| zeros(2, 2)), Arc::new(|_| eye(2)))
            .expect("dirac system is well formed")
            .with_name("dirac-oracle")
    }

    pub fn frame_a(tol: &Tolerances) -> BoundaryFrameA {
        build_frame_a(Self::decomp(), &rows(&eye(2), 1, 1), Some(&eye(2)), tol).expect("identity frame")
    }

    pub fn frame_b(tol: &Tolerances) -> BoundaryFrameB {
        build_frame_b_regular(Self::decomp(), &eye(2), tol).expect("identity frame")
    }

    pub fn problem(tol: &Tolerances) -> WeylProblem {
        WeylProblem::new(Self::system(), Self::frame_a(tol), Self::frame_b(tol), tol.clone())
    }

    pub fn boundary_parameter(&self) -> BoundaryParameter {
        match self.tau {
            DiracTau::Canonical => BoundaryParameter::canonical(1),
            DiracTau::Swapped => BoundaryParameter::swapped(1),
        }
    }

    /// Y(t, λ) = [[cos λt, sin λt], [−sin λt, cos λt]].
    pub fn fundamental(t: f64, lambda: Complex64) -> CMat {
        let (cs, sn) = ((lambda * t).cos(), (lambda * t).sin());
        CMat::from_row_slice(2, 2, &[cs, sn, -sn, cs])
    }

    pub fn m(&self, lambda: Complex64) -> Complex64 {
        match self.tau {
            DiracTau::Canonical => lambda.tan(),
            DiracTau::Swapped => -1.0 / lambda.tan(),
        }
    }

    /// (m₀, M₂, M₃, M₄) = (tan λ, sec λ, sec λ, tan λ).
    pub fn blocks(lambda: Complex64) -> [Complex64; 4] {
        let t = lambda.tan();
        let s = 1.0 / lambda.cos();
        [t, s, s, t]
    }

    /// k-th eigenvalue, k ∈ ℤ.
    pub fn eigenvalue(&self, k: i64) -> f64 {
        match self.tau {
            DiracTau::Canonical => (k as f64 + 0.5) * PI,
            DiracTau::Swapped => k as f64 * PI,
        }
    }

    pub fn eigenvalues_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let shift = match self.tau {
            DiracTau::Canonical => 0.5,
            DiracTau::Swapped => 0.0,
        };
        let k0 = (lo / PI - shift).ceil() as i64;
        let k1 = (hi / PI - shift).floor() as i64;
        (k0..=k1).map(|k| self.eigenvalue(k)).filter(|&s| s >= lo && s <= hi).collect()
    }

    /// Every atom has unit mass.
    pub fn mass(&self) -> f64 {
        1.0
    }

    /// φ(t, s) = (cos st, −sin st).
    pub fn eigenfunction(t: f64, s: f64) -> CMat {
        CMat::from_column_slice(2, 1, &[cr((s * t).cos()), cr(-(s * t).sin())])
    }

    /// v₀ = Y (tan λ, −1)ᵀ
    pub fn v0(t: f64, lambda: Complex64) -> CMat {
        Self::fundamental(t, lambda) * CMat::from_column_slice(2, 1, &[lambda.tan(), cr(-1.0)])
    }

    /// u = Y (sec λ, 0)ᵀ
    pub fn u(t: f64, lambda: Complex64) -> CMat {
        Self::fundamental(t, lambda) * CMat::from_column_slice(2, 1, &[1.0 / lambda.cos(), cr(0.0)])
    }
}

/// Boundary data for the finite-difference boundary-value solver on a regular system
/// with q = 0: Γ₁a y(a) = 0 via Ũ and C₀Γ₀b y(b) + C₁Γ₁b y(b) = 0 via X_b.
pub struct FdProblem<'a> {
    pub sys: &'a SymmetricSystem,
    pub utilde: CMat,
    pub xb: CMat,
    pub c0: CMat,
    pub c1: CMat,
}

impl<'a> FdProblem<'a> {
    fn check(&self) -> Result<()> {
        if self.sys.decomp.q != 0 || !self.sys.regular_b {
            return Err(Error::Domain("finite-difference oracle supports regular systems with q = 0".into()));
        }
        Ok(())
    }

    /// Box-scheme matrix for nodes t_0..t_N, optionally with a jump node split at index `split`
    /// (nodes duplicated there). Returns the assembled dense matrix.
    fn assemble(&self, nodes: &[f64], lambda: Complex64, split: Option<usize>) -> CMat {
        let sys = self.sys;
        let n = sys.n();
        let p = sys.decomp.p;
        let nn = nodes.len();
        let nvars = n * (nn + usize::from(split.is_some()));
        let mut a = zeros(nvars, nvars);
        // variable index of node i (left copy at the split node)
        let var = |i: usize, right: bool| -> usize {
            match split {
                Some(s) if i > s || (i == s && right) => n * (i + 1),
                _ => n * i,
            }
        };
        let mut row = 0;
        // Γ₁a y(a) = 0
        let g1a = rows(&self.utilde, n - p, p);
        a.view_mut((row, var(0, false)), (p, n)).copy_from(&g1a);
        row += p;
        let j = sys.j();
        for i in 0..nn - 1 {
            let (t0, t1) = (nodes[i], nodes[i + 1]);
            let h = t1 - t0;
            let tm = 0.5 * (t0 + t1);
            let m = sys.b_at(tm) + sys.delta_at(tm) * lambda;
            let left = -j * cr(1.0 / h) - &m * cr(0.5);
            let right = j * cr(1.0 / h) - &m * cr(0.5);
            a.view_mut((row, var(i, true)), (n, n)).copy_from(&left);
            a.view_mut((row, var(i + 1, false)), (n, n)).copy_from(&right);
            row += n;
        }
        if let Some(s) = split {
            // y(t_s+) − y(t_s−) = rhs
            a.view_mut((row, var(s, true)), (n, n)).copy_from(&eye(n));
            let cur = a.view((row, var(s, false)), (n, n)).into_owned();
            a.view_mut((row, var(s, false)), (n, n)).copy_from(&(cur - eye(n)));
            row += n;
        }
        let gb = &self.xb;
        let cond = &self.c0 * rows(gb, 0, p) + &self.c1 * rows(gb, n - p, p);
        a.view_mut((row, var(nn - 1, true)), (p, n)).copy_from(&cond);
        a
    }

    fn solve_once(&self, nodes: &[f64], lambda: Complex64, f: &dyn Fn(f64) -> CMat) -> Result<Vec<CMat>> {
        let n = self.sys.n();
        let p = self.sys.decomp.p;
        let a = self.assemble(nodes, lambda, None);
        let mut rhs = zeros(a.nrows(), 1);
        for i in 0..nodes.len() - 1 {
            let tm = 0.5 * (nodes[i] + nodes[i + 1]);
            let v = self.sys.delta_at(tm) * f(tm);
            rhs.view_mut((p + n * i, 0), (n, 1)).copy_from(&v);
        }
        let x = a.lu().solve(&rhs).ok_or(Error::NearSpectrum { lambda, cond: f64::INFINITY })?;
        Ok((0..nodes.len()).map(|i| x.rows(n * i, n).into_owned()).collect())
    }

    /// Solution of J y′ − B y = λΔy + Δf with the boundary conditions, at `n_intervals + 1`
    /// uniform nodes, Richardson-extrapolated from N and 2N intervals.
    pub fn resolvent(&self, lambda: Complex64, f: &dyn Fn(f64) -> CMat, n_intervals: usize) -> Result<(Vec<f64>, Vec<CMat>)> {
        self.check()?;
        let (a, b) = (self.sys.a, self.sys.b);
        let coarse: Vec<f64> = (0..=n_intervals).map(|i| a + (b - a) * i as f64 / n_intervals as f64).collect();
        let fine: Vec<f64> = (0..=2 * n_intervals).map(|i| a + (b - a) * i as f64 / (2 * n_intervals) as f64).collect();
        let yc = self.solve_once(&coarse, lambda, f)?;
        let yf = self.solve_once(&fine, lambda, f)?;
        let out = (0..coarse.len()).map(|i| (&yf[2 * i] * cr(4.0) - &yc[i]) * cr(1.0 / 3.0)).collect();
        Ok((coarse, out))
    }

    fn green_once(&self, nodes: &[f64], s: usize, lambda: Complex64) -> Result<Vec<(CMat, CMat)>> {
        let n = self.sys.n();
        let a = self.assemble(nodes, lambda, Some(s));
        let nr = a.nrows();
        let mut rhs = zeros(nr, n);
        // jump rows sit just before the final p rows
        let jump_row = nr - self.sys.decomp.p - n;
        rhs.view_mut((jump_row, 0), (n, n)).copy_from(&(-self.sys.j()));
        let x = a.lu().solve(&rhs).ok_or(Error::NearSpectrum { lambda, cond: f64::INFINITY })?;
        let var = |i: usize, right: bool| if i > s || (i == s && right) { n * (i + 1) } else { n * i };
        Ok((0..nodes.len()).map(|i| (x.rows(var(i, false), n).into_owned(), x.rows(var(i, true), n).into_owned())).collect())
    }

    /// G(x, t₀, λ) at uniform nodes (t₀ must be a node of the coarse grid); for x = t₀ the
    /// one-sided limits are returned as a pair.
    pub fn green(&self, lambda: Complex64, t0: f64, n_intervals: usize) -> Result<(Vec<f64>, Vec<(CMat, CMat)>)> {
        self.check()?;
        let (a, b) = (self.sys.a, self.sys.b);
        let pos = (t0 - a) / (b - a) * n_intervals as f64;
        let s = pos.round() as usize;
        if (pos - s as f64).abs() > 1e-9 || s == 0 || s >= n_intervals {
            return Err(Error::Domain("t0 must be an interior node of the grid".into()));
        }
        let coarse: Vec<f64> = (0..=n_intervals).map(|i| a + (b - a) * i as f64 / n_intervals as f64).collect();
        let fine: Vec<f64> = (0..=2 * n_intervals).map(|i| a + (b - a) * i as f64 / (2 * n_intervals) as f64).collect();
        let gc = self.green_once(&coarse, s, lambda)?;
        let gf = self.green_once(&fine, 2 * s, lambda)?;
        let rich = |f: &CMat, c: &CMat| (f * cr(4.0) - c) * cr(1.0 / 3.0);
        let out = (0..coarse.len())
            .map(|i| (rich(&gf[2 * i].0, &gc[i].0), rich(&gf[2 * i].1, &gc[i].1)))
            .collect();
        Ok((coarse, out))
    }
}

/// Largest deviation of the closed-form fundamental matrix of the example from the ODE,
/// measured by central differences (sanity check of the closed form).
pub fn example_fundamental_residual(ex: &ExampleSystem, lambda: Complex64, ts: &[f64]) -> f64 {
    let sys = ex.system();
    let h = 1e-5;
    ts.iter()
        .map(|&t| {
            let d = (ex.fundamental(t + h, lambda) - ex.fundamental(t - h, lambda)) * cr(0.5 / h);
            let y = ex.fundamental(t, lambda);
            max_abs(&(sys.j() * d - sys.delta_at(t) * y * lambda))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eig_herm;

    #[test]
    fn example_fundamental_at_zero() {
        let ex = ExampleSystem::default();
        let y = ex.fundamental(0.0, c(0.3, 0.7));
        let z = cr(0.0);
        let expected = CMat::from_row_slice(3, 3, &[cr(1.0), z, cr(1.0), z, cr(1.0), z, -I, z, I]);
        assert!(max_abs(&(y - expected)) < 1e-15);
        assert!(example_fundamental_residual(&ex, c(1.0, 0.5), &[0.1, 1.0, 3.0]) < 1e-8);
    }

    #[test]
    fn example_m_values() {
        let ex = ExampleSystem::default();
        let m = ex.m(I).unwrap();
        assert!((m[(0, 1)] - I * SQRT_2 * (-1.0f64).exp()).norm() < 1e-15);
        assert!(ex.m(cr(1.0)).is_err());
        for k in 0..20 {
            let lam = c(-3.0 + 0.3 * k as f64, 0.1 + 0.2 * k as f64);
            let m = ex.m(lam).unwrap();
            assert!(min_eig_herm(&crate::linalg::im_part(&m)) >= -1e-14);
            assert!(max_abs(&(ex.m(lam.conj()).unwrap().adjoint() - &m)) < 1e-15);
        }
    }

    #[test]
    fn example_theta_pairing() {
        let ex = ExampleSystem::default();
        let sys = ex.system();
        let th = ex.theta(60.0);
        let v = th.adjoint() * sys.j() * &th;
        assert!((v[(0, 0)] - I).norm() < 1e-12);
    }

    #[test]
    fn example_density_is_psd_and_matches_distribution() {
        let ex = ExampleSystem::default();
        let s0 = ex.sigma_density(0.0);
        assert!((s0[(0, 1)] - cr(FRAC_1_SQRT_2 / PI)).norm() < 1e-15);
        for k in 0..100 {
            let s = -10.0 + 0.2 * k as f64 + 0.013;
            assert!(min_eig_herm(&ex.sigma_density(s)) > -1e-15);
            let h = 1e-5;
            let d = (ex.sigma_distribution(s + h) - ex.sigma_distribution(s - h)) * cr(0.5 / h);
            assert!(max_abs(&(d - ex.sigma_density(s))) < 1e-9);
        }
        assert!(max_abs(&ex.sigma_distribution(0.0)) < 1e-15);
    }

    #[test]
    fn example_v_is_a_solution_and_decays() {
        let ex = ExampleSystem::default();
        let lam = c(0.7, 0.9);
        // v = Y·coefficients, so v(t) Y(t)⁻¹ must be constant
        let c0 = ex.fundamental(0.0, lam).try_inverse().unwrap() * ex.v(0.0, lam);
        for t in [0.5, 2.0, 7.0] {
            let ct = ex.fundamental(t, lam).try_inverse().unwrap() * ex.v(t, lam);
            assert!(max_abs(&(ct - &c0)) < 1e-12);
        }
    }

    #[test]
    fn dirac_closed_forms() {
        let d = DiracOracle::new(DiracTau::Canonical);
        assert!((d.m(I) - c(0.0, 1f64.tanh())).norm() < 1e-15);
        assert!((d.m(I).im - 0.761594).abs() < 1e-6);
        let sw = DiracOracle::new(DiracTau::Swapped);
        assert_eq!(sw.eigenvalues_in(0.1, 4.0), vec![PI]);
        assert_eq!(d.eigenvalues_in(0.0, 10.0).len(), 3);
        let y = DiracOracle::fundamental(0.4, cr(2.0));
        let j = crate::sysdef::build_canonical_j(1, 0).unwrap();
        assert!(max_abs(&(y.adjoint() * &j * &y - &j)) < 1e-15);
    }

    #[test]
    fn fd_green_matches_closed_form() {
        // τ = (I, 0): G(x, t) = v(x)φ*(t, λ̄) for x > t
        let sys = DiracOracle::system();
        let fd = FdProblem { sys: &sys, utilde: eye(2), xb: eye(2), c0: eye(1), c1: zeros(1, 1) };
        let lam = I;
        let (nodes, g) = fd.green(lam, 0.25, 200).unwrap();
        let i = nodes.iter().position(|&t| (t - 0.75).abs() < 1e-12).unwrap();
        let v = DiracOracle::v0(0.75, lam);
        let phi = DiracOracle::eigenfunction(0.25, 0.0);
        let phi_conj = DiracOracle::fundamental(0.25, lam.conj()) * CMat::from_column_slice(2, 1, &[cr(1.0), cr(0.0)]);
        let exact = v * phi_conj.adjoint();
        let _ = phi;
        assert!(max_abs(&(&g[i].0 - exact)) < 1e-8, "{}", max_abs(&(&g[i].0 - DiracOracle::v0(0.75, lam))));
    }
}
