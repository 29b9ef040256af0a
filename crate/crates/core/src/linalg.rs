//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

/// Largest entry modulus. Zero for empty matrices.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Spectral norm via SVD.
pub fn norm2(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// 2-norm condition number; infinite for rank-deficient input.
pub fn cond2(m: &CMat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn rank(m: &CMat, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&hi) = s.first() else { return 0 };
    if hi == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * hi).count()
}

/// (m + m*)/2
pub fn herm_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * cr(0.5)
}

/// (m − m*)/(2i), the Hermitian imaginary part.
pub fn im_part(m: &CMat) -> CMat {
    (m - m.adjoint()) * c(0.0, -0.5)
}

/// Eigenvalues of the Hermitian part, ascending.
pub fn herm_eigenvalues(m: &CMat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = herm_part(m).symmetric_eigen().eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn min_eig_herm(m: &CMat) -> f64 {
    herm_eigenvalues(m).first().cloned().unwrap_or(0.0)
}

/// Hermitian eigen-decomposition with eigenvalues sorted descending.
pub fn herm_eigen_desc(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let eig = herm_part(m).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (j, &i) in idx.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Apply a real function to a Hermitian matrix through its eigen-decomposition.
pub fn herm_fn(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let eig = herm_part(m).symmetric_eigen();
    let d = CMat::from_diagonal(&eig.eigenvalues.map(|x| cr(f(x))));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Orthonormal basis of the null space of `m` (columns), using a padded square SVD
/// so that the full right singular basis is available.
pub fn null_space(m: &CMat, rel_tol: f64) -> CMat {
    let (r, n) = m.shape();
    if n == 0 {
        return CMat::zeros(0, 0);
    }
    let rows = r.max(n);
    let mut sq = CMat::zeros(rows, n);
    sq.view_mut((0, 0), (r, n)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let thresh = rel_tol * smax.max(f64::MIN_POSITIVE);
    let cols: Vec<usize> = (0..n)
        .filter(|&i| svd.singular_values[i] <= thresh || smax == 0.0)
        .collect();
    let mut out = CMat::zeros(n, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        let row = vt.row(i).adjoint();
        out.set_column(j, &row);
    }
    out
}

/// Orthonormal basis for the column space.
pub fn orth(m: &CMat, rel_tol: f64) -> CMat {
    let (r, _) = m.shape();
    if m.is_empty() {
        return CMat::zeros(r, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > rel_tol * smax)
        .collect();
    let mut out = CMat::zeros(r, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        out.set_column(j, &u.column(i));
    }
    out
}

/// Largest principal angle between the column spaces of `a` and `b`.
/// Returns π/2 if the dimensions differ.
pub fn max_principal_angle(a: &CMat, b: &CMat, rel_tol: f64) -> f64 {
    let qa = orth(a, rel_tol);
    let qb = orth(b, rel_tol);
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if qa.ncols() == 0 {
        return 0.0;
    }
    // sin of the largest angle is the norm of the component of qb outside span(qa)
    let resid = &qb - &qa * (qa.adjoint() * &qb);
    norm2(&resid).min(1.0).asin()
}

/// Solve `k x = rhs` after row equilibration, refusing when the equilibrated
/// condition number exceeds `kappa_max`. Returns the solution and the condition.
pub fn solve_checked(k: &CMat, rhs: &CMat, kappa_max: f64) -> Result<(CMat, f64), f64> {
    let n = k.nrows();
    let mut ks = k.clone();
    let mut rs = rhs.clone();
    for i in 0..n {
        let s = ks.row(i).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        if s > 0.0 {
            let inv = cr(1.0 / s);
            ks.row_mut(i).scale_mut(1.0 / s);
            for j in 0..rs.ncols() {
                rs[(i, j)] *= inv;
            }
        }
    }
    let kappa = cond2(&ks);
    if !(kappa <= kappa_max) {
        return Err(kappa);
    }
    let lu = ks.lu();
    match lu.solve(&rs) {
        Some(x) => Ok((x, kappa)),
        None => Err(f64::INFINITY),
    }
}

pub fn inverse(m: &CMat) -> Option<CMat> {
    m.clone().try_inverse()
}

pub fn determinant(m: &CMat) -> Complex64 {
    if m.is_empty() {
        return cr(1.0);
    }
    m.clone().lu().determinant()
}

/// Copy a sub-block.
pub fn block(m: &CMat, r0: usize, nr: usize, c0: usize, nc: usize) -> CMat {
    m.view((r0, c0), (nr, nc)).into_owned()
}

pub fn rows(m: &CMat, r0: usize, nr: usize) -> CMat {
    m.rows(r0, nr).into_owned()
}

/// Stack matrices vertically. All must share the column count.
pub fn vstack(parts: &[&CMat]) -> CMat {
    let nc = parts.iter().map(|p| p.ncols()).max().unwrap_or(0);
    let nr: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = CMat::zeros(nr, nc);
    let mut r = 0;
    for p in parts {
        if p.nrows() > 0 {
            out.view_mut((r, 0), (p.nrows(), p.ncols())).copy_from(*p);
        }
        r += p.nrows();
    }
    out
}

pub fn hstack(parts: &[&CMat]) -> CMat {
    let nr = parts.iter().map(|p| p.nrows()).max().unwrap_or(0);
    let nc: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = CMat::zeros(nr, nc);
    let mut col = 0;
    for p in parts {
        if p.ncols() > 0 {
            out.view_mut((0, col), (p.nrows(), p.ncols())).copy_from(*p);
        }
        col += p.ncols();
    }
    out
}

/// Relative difference ‖a − b‖_max / max(‖b‖_max, floor).
pub fn rel_diff(a: &CMat, b: &CMat, floor: f64) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(floor)
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Row-major nested `[re, im]` pairs.
pub fn to_pairs(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

/// Inverse of [`to_pairs`]; `None` for ragged input.
pub fn from_pairs(rows: &[Vec<[f64; 2]>]) -> Option<CMat> {
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return None;
    }
    Some(CMat::from_fn(rows.len(), nc, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn null_space_of_wide_matrix() {
        let m = CMat::from_row_slice(1, 3, &[cr(1.0), cr(0.0), cr(0.0)]);
        let ns = null_space(&m, 1e-12);
        assert_eq!(ns.ncols(), 2);
        assert!(max_abs(&(&m * &ns)) < 1e-14);
    }

    #[test]
    fn principal_angle_detects_same_span() {
        let a = CMat::from_row_slice(3, 1, &[cr(1.0), cr(1.0), cr(0.0)]);
        let b = a.clone() * c(0.0, 3.0);
        assert!(max_principal_angle(&a, &b, 1e-12) < 1e-12);
        let e = CMat::from_row_slice(3, 1, &[cr(1.0), cr(-1.0), cr(0.0)]);
        assert_relative_eq!(max_principal_angle(&a, &e, 1e-12), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn solve_checked_rejects_singular() {
        let k = CMat::from_row_slice(2, 2, &[cr(1.0), cr(2.0), cr(2.0), cr(4.0)]);
        assert!(solve_checked(&k, &eye(2), 1e10).is_err());
        let k = CMat::from_row_slice(2, 2, &[cr(1e8), cr(0.0), cr(0.0), cr(1e-8)]);
        let (x, kappa) = solve_checked(&k, &eye(2), 1e10).unwrap();
        assert!(kappa < 2.0);
        assert_relative_eq!(x[(1, 1)].re, 1e8, max_relative = 1e-12);
    }

    #[test]
    fn im_part_is_hermitian() {
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 2.0), c(0.0, 1.0), c(3.0, 0.0), c(0.0, -1.0)]);
        let h = im_part(&m);
        assert!(max_abs(&(&h - h.adjoint())) < 1e-15);
        assert_relative_eq!(h[(0, 0)].re, 2.0);
    }
}
