//! System definition: space decomposition, coefficients and the weighted L² geometry.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{c, cr, eye, max_abs, min_eig_herm, singular_values, zeros, CMat};
use crate::propagate::{propagate, IntegratorOptions};
use crate::quadrature::gauss_legendre_on;
use crate::tolerances::Tolerances;

/// Dimensions (p, q) of H and Ĥ; the full space has n = 2p + q.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceDecomposition {
    pub p: usize,
    pub q: usize,
}

impl SpaceDecomposition {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Dimension("p must be at least 1".into()));
        }
        Ok(SpaceDecomposition { p, q })
    }

    pub fn n(&self) -> usize {
        2 * self.p + self.q
    }

    /// dim H₀ = p + q
    pub fn h0(&self) -> usize {
        self.p + self.q
    }

    /// Projection of H₀ = H ⊕ Ĥ onto H, as a (p+q)×(p+q) matrix.
    pub fn proj_h(&self) -> CMat {
        let mut m = zeros(self.h0(), self.h0());
        for i in 0..self.p {
            m[(i, i)] = cr(1.0);
        }
        m
    }

    /// Projection of H₀ onto Ĥ.
    pub fn proj_hat(&self) -> CMat {
        let mut m = zeros(self.h0(), self.h0());
        for i in self.p..self.h0() {
            m[(i, i)] = cr(1.0);
        }
        m
    }

    /// P_H viewed as a map H₀ → H (p×(p+q)).
    pub fn proj_h_rows(&self) -> CMat {
        let mut m = zeros(self.p, self.h0());
        for i in 0..self.p {
            m[(i, i)] = cr(1.0);
        }
        m
    }

    /// P_Ĥ viewed as a map H₀ → Ĥ (q×(p+q)).
    pub fn proj_hat_rows(&self) -> CMat {
        let mut m = zeros(self.q, self.h0());
        for i in 0..self.q {
            m[(i, self.p + i)] = cr(1.0);
        }
        m
    }
}

/// The canonical signature operator for (p, q).
pub fn build_canonical_j(p: usize, q: usize) -> Result<CMat> {
    let d = SpaceDecomposition::new(p, q)?;
    let n = d.n();
    let mut j = zeros(n, n);
    for i in 0..p {
        j[(i, p + q + i)] = cr(-1.0);
        j[(p + q + i, i)] = cr(1.0);
    }
    for i in 0..q {
        j[(p + i, p + i)] = c(0.0, 1.0);
    }
    Ok(j)
}

pub type MatrixFn = Arc<dyn Fn(f64) -> CMat + Send + Sync>;

/// The system J y′ − B(t) y = λ Δ(t) y on [a, b⟩.
#[derive(Clone)]
pub struct SymmetricSystem {
    pub a: f64,
    pub b: f64,
    pub regular_b: bool,
    pub decomp: SpaceDecomposition,
    pub name: String,
    j: CMat,
    b_fn: MatrixFn,
    delta_fn: MatrixFn,
    breakpoints: Vec<f64>,
}

impl fmt::Debug for SymmetricSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricSystem")
            .field("name", &self.name)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("regular_b", &self.regular_b)
            .field("decomp", &self.decomp)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl SymmetricSystem {
    pub fn new(
        a: f64,
        b: f64,
        regular_b: bool,
        decomp: SpaceDecomposition,
        b_fn: MatrixFn,
        delta_fn: MatrixFn,
    ) -> Result<Self> {
        if !(a.is_finite() && b > a) {
            return Err(Error::Domain(format!("interval [{a}, {b}) is empty or unbounded on the left")));
        }
        if regular_b && !b.is_finite() {
            return Err(Error::Domain("a regular right endpoint must be finite".into()));
        }
        let j = build_canonical_j(decomp.p, decomp.q)?;
        let n = decomp.n();
        for (name, m) in [("B", b_fn(a)), ("Delta", delta_fn(a))] {
            if m.shape() != (n, n) {
                return Err(Error::Dimension(format!("{name}(a) has shape {:?}, expected {n}×{n}", m.shape())));
            }
        }
        Ok(SymmetricSystem {
            a,
            b,
            regular_b,
            decomp,
            name: String::new(),
            j,
            b_fn,
            delta_fn,
            breakpoints: Vec::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Coefficient discontinuities; the integrator never steps across them.
    pub fn with_breakpoints(mut self, mut bp: Vec<f64>) -> Self {
        bp.retain(|t| *t > self.a && *t < self.b && t.is_finite());
        bp.sort_by(|x, y| x.partial_cmp(y).unwrap());
        bp.dedup();
        self.breakpoints = bp;
        self
    }

    pub fn n(&self) -> usize {
        self.decomp.n()
    }

    pub fn j(&self) -> &CMat {
        &self.j
    }

    pub fn b_at(&self, t: f64) -> CMat {
        (self.b_fn)(t)
    }

    pub fn delta_at(&self, t: f64) -> CMat {
        (self.delta_fn)(t)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// −J(B(t) + λΔ(t)), the matrix of the explicit first-order form.
    pub fn generator(&self, t: f64, lambda: Complex64) -> CMat {
        let m = self.b_at(t) + self.delta_at(t) * lambda;
        -(&self.j * m)
    }

    /// Checks Hermiticity of B and positive semidefiniteness of Δ at the sample points.
    pub fn validate_structure(&self, samples: &[f64], tol: &Tolerances) -> Result<()> {
        for &t in samples {
            let bm = self.b_at(t);
            let dm = self.delta_at(t);
            if !crate::linalg::is_finite(&bm) || !crate::linalg::is_finite(&dm) {
                return Err(Error::Coefficient { t, what: "non-finite coefficient".into() });
            }
            let scale = max_abs(&bm).max(1.0);
            let hb = max_abs(&(&bm - bm.adjoint()));
            if hb > tol.tau_herm * scale {
                return Err(Error::Coefficient { t, what: format!("B is not Hermitian (defect {hb:.3e})") });
            }
            let dscale = max_abs(&dm).max(1.0);
            let hd = max_abs(&(&dm - dm.adjoint()));
            if hd > tol.tau_herm * dscale {
                return Err(Error::Coefficient { t, what: format!("Delta is not Hermitian (defect {hd:.3e})") });
            }
            let ev = min_eig_herm(&dm);
            if ev < -tol.tau_herm * dscale {
                return Err(Error::Coefficient { t, what: format!("Delta is not positive semidefinite (eigenvalue {ev:.3e})") });
            }
        }
        Ok(())
    }

    /// For a regular right endpoint, checks that ∫‖B‖ and ∫‖Δ‖ are finite.
    pub fn check_integrability(&self) -> Result<(f64, f64)> {
        if !self.regular_b {
            return Ok((f64::NAN, f64::NAN));
        }
        let mut cuts = vec![self.a];
        cuts.extend_from_slice(&self.breakpoints);
        cuts.push(self.b);
        let mut ib = 0.0;
        let mut id = 0.0;
        for w in cuts.windows(2) {
            let sub = 64;
            let h = (w[1] - w[0]) / sub as f64;
            for k in 0..sub {
                let lo = w[0] + k as f64 * h;
                ib += gauss_legendre_on(lo, lo + h, |t| max_abs(&self.b_at(t)));
                id += gauss_legendre_on(lo, lo + h, |t| max_abs(&self.delta_at(t)));
            }
        }
        if ib.is_finite() && id.is_finite() {
            Ok((ib, id))
        } else {
            Err(Error::Coefficient { t: self.b, what: "coefficients are not integrable".into() })
        }
    }
}

/// Sampled vector (or matrix) function on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFunction {
    pub grid: Vec<f64>,
    pub values: Vec<CMat>,
}

impl WeightedFunction {
    pub fn new(grid: Vec<f64>, values: Vec<CMat>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::GridMismatch(format!("{} grid points but {} values", grid.len(), values.len())));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("grid is not strictly increasing".into()));
        }
        if let Some(first) = values.first() {
            let shape = first.shape();
            if values.iter().any(|v| v.shape() != shape) {
                return Err(Error::Dimension("inconsistent value shapes".into()));
            }
        }
        Ok(WeightedFunction { grid, values })
    }

    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> CMat) -> Result<Self> {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Vec<f64>, n: usize, k: usize) -> Self {
        let values = vec![zeros(n, k); grid.len()];
        WeightedFunction { grid, values }
    }

    pub fn nrows(&self) -> usize {
        self.values.first().map(|v| v.nrows()).unwrap_or(0)
    }

    pub fn ncols(&self) -> usize {
        self.values.first().map(|v| v.ncols()).unwrap_or(0)
    }

    pub fn check_within(&self, sys: &SymmetricSystem) -> Result<()> {
        match (self.grid.first(), self.grid.last()) {
            (Some(&lo), Some(&hi)) if lo < sys.a - 1e-12 || hi > sys.b + 1e-12 => Err(Error::Domain(format!(
                "grid [{lo}, {hi}] leaves the interval [{}, {}]",
                sys.a, sys.b
            ))),
            _ => Ok(()),
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        WeightedFunction { grid: self.grid.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }
}

/// ∫ g*(t)Δ(t)f(t) dt by the trapezoid rule on the common grid, as a matrix
/// (columns of g against columns of f).
pub fn l2delta_gram(sys: &SymmetricSystem, f: &WeightedFunction, g: &WeightedFunction) -> Result<CMat> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch("f and g are sampled on different grids".into()));
    }
    let n = sys.n();
    if f.grid.is_empty() {
        return Ok(zeros(g.ncols(), f.ncols()));
    }
    if f.nrows() != n || g.nrows() != n {
        return Err(Error::Dimension(format!("functions must have {n} rows")));
    }
    let integrand: Vec<CMat> = f
        .grid
        .iter()
        .zip(f.values.iter().zip(g.values.iter()))
        .map(|(&t, (fv, gv))| gv.adjoint() * sys.delta_at(t) * fv)
        .collect();
    let mut acc = zeros(g.ncols(), f.ncols());
    for i in 1..f.grid.len() {
        let h = f.grid[i] - f.grid[i - 1];
        acc += (&integrand[i] + &integrand[i - 1]) * cr(0.5 * h);
    }
    Ok(acc)
}

/// (f, g)_Δ for vector-valued f and g.
pub fn l2delta_inner(sys: &SymmetricSystem, f: &WeightedFunction, g: &WeightedFunction) -> Result<Complex64> {
    if f.ncols() > 1 || g.ncols() > 1 {
        return Err(Error::Dimension("l2delta_inner expects vector-valued functions".into()));
    }
    let m = l2delta_gram(sys, f, g)?;
    Ok(if m.is_empty() { cr(0.0) } else { m[(0, 0)] })
}

#[derive(Debug, Clone)]
pub struct DefinitenessReport {
    pub definite: bool,
    /// Per λ: smallest/largest singular value of the stacked samples of ΔY.
    pub ratios: Vec<(Complex64, f64)>,
    pub note: &'static str,
}

/// Sampled test for a nontrivial solution y with Δy ≡ 0 on the grid.
pub fn check_definiteness(
    sys: &SymmetricSystem,
    lambdas: &[Complex64],
    grid: &[f64],
    tol: &Tolerances,
) -> Result<DefinitenessReport> {
    if grid.len() < 2 {
        return Err(Error::GridMismatch("definiteness needs at least two grid points".into()));
    }
    let n = sys.n();
    let opts = IntegratorOptions::from_tolerances(tol);
    let mut ratios = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let y = propagate(sys, lambda, &eye(n), grid[0], *grid.last().unwrap(), &opts)?;
        let mut stacked = zeros(n * grid.len(), n);
        for (i, &t) in grid.iter().enumerate() {
            let dy = sys.delta_at(t) * y.value_at(t);
            stacked.view_mut((i * n, 0), (n, n)).copy_from(&dy);
        }
        let s = singular_values(&stacked);
        let ratio = match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
            _ => 0.0,
        };
        ratios.push((lambda, ratio));
    }
    let definite = ratios.iter().all(|&(_, r)| r >= tol.tau_def);
    Ok(DefinitenessReport {
        definite,
        ratios,
        note: "heuristic: tested only at the sampled lambda values and grid points",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirac() -> SymmetricSystem {
        let d = SpaceDecomposition::new(1, 0).unwrap();
        SymmetricSystem::new(0.0, 1.0, true, d, Arc::new(|_| zeros(2, 2)), Arc::new(|_| eye(2))).unwrap()
    }

    #[test]
    fn canonical_j_examples() {
        let j = build_canonical_j(1, 0).unwrap();
        assert_eq!(j, CMat::from_row_slice(2, 2, &[cr(0.0), cr(-1.0), cr(1.0), cr(0.0)]));
        let j = build_canonical_j(1, 1).unwrap();
        let i = c(0.0, 1.0);
        let z = cr(0.0);
        let expected = CMat::from_row_slice(3, 3, &[z, z, cr(-1.0), z, i, z, cr(1.0), z, z]);
        assert_eq!(j, expected);
        assert!(build_canonical_j(0, 2).is_err());
    }

    #[test]
    fn canonical_j_is_signature() {
        for p in 1..4 {
            for q in 0..4 {
                let j = build_canonical_j(p, q).unwrap();
                let n = 2 * p + q;
                assert_eq!(&j * j.adjoint(), eye(n));
                assert_eq!(&j + j.adjoint(), zeros(n, n));
            }
        }
    }

    #[test]
    fn norm_of_rotation_column_is_one() {
        let sys = dirac();
        let lam = 2.7;
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
        let f = WeightedFunction::from_fn(grid, |t| {
            CMat::from_column_slice(2, 1, &[cr((lam * t).cos()), cr(-(lam * t).sin())])
        })
        .unwrap();
        let v = l2delta_inner(&sys, &f, &f).unwrap();
        assert!((v - cr(1.0)).norm() < 1e-14);
        let z = WeightedFunction::zeros(f.grid.clone(), 2, 1);
        assert_eq!(l2delta_inner(&sys, &z, &z).unwrap(), cr(0.0));
    }

    #[test]
    fn mismatched_grids_rejected() {
        let sys = dirac();
        let f = WeightedFunction::zeros(vec![0.0, 0.5, 1.0], 2, 1);
        let g = WeightedFunction::zeros(vec![0.0, 0.4, 1.0], 2, 1);
        assert!(matches!(l2delta_inner(&sys, &f, &g), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn definiteness_examples() {
        let tol = Tolerances::default();
        let lams = [c(0.0, 1.0), c(0.0, -1.0), cr(0.7)];
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        assert!(check_definiteness(&dirac(), &lams, &grid, &tol).unwrap().definite);
        let d = SpaceDecomposition::new(1, 0).unwrap();
        let null =
            SymmetricSystem::new(0.0, 1.0, true, d, Arc::new(|_| zeros(2, 2)), Arc::new(|_| zeros(2, 2))).unwrap();
        assert!(!check_definiteness(&null, &lams, &grid, &tol).unwrap().definite);
    }

    #[test]
    fn structure_validation_names_offending_time() {
        let d = SpaceDecomposition::new(1, 0).unwrap();
        let bad = SymmetricSystem::new(
            0.0,
            1.0,
            true,
            d,
            Arc::new(|t| {
                let mut m = zeros(2, 2);
                if t > 0.5 {
                    m[(0, 1)] = cr(1.0);
                }
                m
            }),
            Arc::new(|_| eye(2)),
        )
        .unwrap();
        let err = bad.validate_structure(&[0.0, 0.25, 0.75], &Tolerances::default()).unwrap_err();
        match err {
            Error::Coefficient { t, .. } => assert_eq!(t, 0.75),
            e => panic!("unexpected {e}"),
        }
        assert!(dirac().check_integrability().is_ok());
    }
}
