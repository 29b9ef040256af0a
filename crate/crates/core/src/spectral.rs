//! Spectral functions, the generalized Fourier transform and related checks.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryParameter;
use crate::error::{Error, Result};
use crate::linalg::{cr, from_pairs, herm_part, im_part, inverse, max_abs, min_eig_herm, to_pairs, zeros, CMat, CVec, I};
use crate::quadrature::trapezoid_weights;
use crate::sysdef::WeightedFunction;
use crate::weyl::{l2delta_norm_sq, MFunction, WeylProblem};

/// f̂ sampled on a grid of real points.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformResult {
    pub s_grid: Vec<f64>,
    pub values: Vec<CVec>,
}

impl TransformResult {
    pub fn zeros(s_grid: Vec<f64>, dim: usize) -> Self {
        let values = vec![CVec::zeros(dim); s_grid.len()];
        TransformResult { s_grid, values }
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    fn index_of(&self, s: f64) -> Option<usize> {
        let tol = 1e-9 * s.abs().max(1.0);
        let k = self.s_grid.partition_point(|&x| x < s - tol);
        (k < self.s_grid.len() && (self.s_grid[k] - s).abs() <= tol).then_some(k)
    }
}

/// A point mass of a spectral function.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub s: f64,
    pub mass: CMat,
}

/// Atoms plus an absolutely continuous density Σ′ sampled on a grid, valid on `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MeasureDoc", try_from = "MeasureDoc")]
pub struct SpectralMeasure {
    pub dim: usize,
    pub atoms: Vec<Atom>,
    pub density_grid: Vec<f64>,
    pub density_values: Vec<CMat>,
    pub window: (f64, f64),
    /// Points where Im m grew like 1/ε but no atom could be confirmed.
    pub candidates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AtomDoc {
    s: f64,
    mass: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct DensityDoc {
    s: Vec<f64>,
    values: Vec<Vec<Vec<[f64; 2]>>>,
}

#[derive(Serialize, Deserialize)]
struct MeasureDoc {
    dim: usize,
    window: [f64; 2],
    atoms: Vec<AtomDoc>,
    density: DensityDoc,
    #[serde(default)]
    candidates: Vec<f64>,
}

impl From<SpectralMeasure> for MeasureDoc {
    fn from(m: SpectralMeasure) -> Self {
        MeasureDoc {
            dim: m.dim,
            window: [m.window.0, m.window.1],
            atoms: m.atoms.iter().map(|a| AtomDoc { s: a.s, mass: to_pairs(&a.mass) }).collect(),
            density: DensityDoc { s: m.density_grid, values: m.density_values.iter().map(to_pairs).collect() },
            candidates: m.candidates,
        }
    }
}

impl TryFrom<MeasureDoc> for SpectralMeasure {
    type Error = String;

    fn try_from(d: MeasureDoc) -> std::result::Result<Self, String> {
        let shape_ok = |m: &CMat| m.nrows() == d.dim && m.ncols() == d.dim;
        let mut atoms = Vec::with_capacity(d.atoms.len());
        for a in &d.atoms {
            let mass = from_pairs(&a.mass).filter(shape_ok).ok_or_else(|| format!("atom at {} has a malformed mass", a.s))?;
            atoms.push(Atom { s: a.s, mass });
        }
        if d.density.s.len() != d.density.values.len() {
            return Err("density grid and values differ in length".into());
        }
        let density_values = d
            .density
            .values
            .iter()
            .map(|v| from_pairs(v).filter(shape_ok).ok_or_else(|| "malformed density value".to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(SpectralMeasure {
            dim: d.dim,
            atoms,
            density_grid: d.density.s,
            density_values,
            window: (d.window[0], d.window[1]),
            candidates: d.candidates,
        })
    }
}

impl SpectralMeasure {
    pub fn empty(dim: usize, window: (f64, f64)) -> Self {
        SpectralMeasure { dim, atoms: Vec::new(), density_grid: Vec::new(), density_values: Vec::new(), window, candidates: Vec::new() }
    }

    pub fn from_atoms(dim: usize, window: (f64, f64), mut atoms: Vec<Atom>) -> Self {
        atoms.sort_by(|a, b| a.s.total_cmp(&b.s));
        SpectralMeasure { atoms, ..Self::empty(dim, window) }
    }

    /// Σ′(s) by linear interpolation; `None` outside the density grid.
    pub fn density_at(&self, s: f64) -> Option<CMat> {
        let g = &self.density_grid;
        if g.is_empty() || s < g[0] || s > g[g.len() - 1] {
            return None;
        }
        let k = g.partition_point(|&x| x <= s);
        if k >= g.len() {
            return Some(self.density_values[g.len() - 1].clone());
        }
        if k == 0 {
            return Some(self.density_values[0].clone());
        }
        let w = (s - g[k - 1]) / (g[k] - g[k - 1]);
        Some(&self.density_values[k - 1] * cr(1.0 - w) + &self.density_values[k] * cr(w))
    }

    /// Σ(s₂) − Σ(s₁) for s₁ ≤ s₂: atoms in (s₁, s₂] plus the integral of the interpolated density.
    pub fn increment(&self, s1: f64, s2: f64) -> CMat {
        let mut acc = zeros(self.dim, self.dim);
        for a in self.atoms.iter().filter(|a| a.s > s1 && a.s <= s2) {
            acc += &a.mass;
        }
        let g = &self.density_grid;
        if g.len() < 2 {
            return acc;
        }
        let lo = s1.max(g[0]);
        let hi = s2.min(g[g.len() - 1]);
        if hi <= lo {
            return acc;
        }
        let mut pts = vec![lo];
        pts.extend(g.iter().copied().filter(|&x| x > lo && x < hi));
        pts.push(hi);
        for w in pts.windows(2) {
            let (Some(a), Some(b)) = (self.density_at(w[0]), self.density_at(w[1])) else { continue };
            acc += (a + b) * cr(0.5 * (w[1] - w[0]));
        }
        acc
    }

    /// Σ(s) normalized by Σ(0) = 0.
    pub fn distribution(&self, s: f64) -> Result<CMat> {
        let (lo, hi) = self.window;
        if !(lo <= 0.0 && 0.0 <= hi) || s < lo || s > hi {
            return Err(Error::Domain(format!("Σ({s}) needs both 0 and s inside the window [{lo}, {hi}]")));
        }
        Ok(if s >= 0.0 { self.increment(0.0, s) } else { -self.increment(s, 0.0) })
    }

    /// Most negative eigenvalue over all masses and density samples (0 if none).
    pub fn psd_defect(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| &a.mass)
            .chain(self.density_values.iter())
            .map(|m| min_eig_herm(&herm_part(m)))
            .fold(0.0, f64::min)
    }

    /// Most negative eigenvalue of Σ(s₂) − Σ(s₁) over consecutive sample points.
    pub fn monotonicity_defect(&self) -> f64 {
        let pts = self.sample_grid();
        pts.windows(2).map(|w| min_eig_herm(&herm_part(&self.increment(w[0], w[1])))).fold(0.0, f64::min)
    }

    /// Atom locations and density nodes, sorted; the natural grid for transforms.
    pub fn sample_grid(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.atoms.iter().map(|a| a.s).chain(self.density_grid.iter().copied()).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        pts
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Domain(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Domain(e.to_string()))
    }

    /// `s,d_00_re,d_00_im,…` rows of the density.
    pub fn density_csv(&self) -> String {
        let mut out = String::from("s");
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.push_str(&format!(",d_{i}{j}_re,d_{i}{j}_im"));
            }
        }
        out.push('\n');
        for (s, d) in self.density_grid.iter().zip(&self.density_values) {
            out.push_str(&format!("{s:e}"));
            for i in 0..self.dim {
                for j in 0..self.dim {
                    out.push_str(&format!(",{:e},{:e}", d[(i, j)].re, d[(i, j)].im));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Controls for [`stieltjes_invert`] and [`extract_atoms`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StieltjesOptions {
    /// Strictly decreasing; the density extrapolates the last two levels to ε = 0.
    pub eps_schedule: Vec<f64>,
    /// Offset keeping the sampled range away from the window ends.
    pub end_offset: f64,
    pub initial_points: usize,
    /// Midpoint refinement stops once linear interpolation is this accurate (relative).
    pub refine_tol: f64,
    pub max_refine: usize,
    /// Accepted size of the change between consecutive extrapolations, relative to the raw values.
    pub resolution_tol: f64,
    /// Points of the sign-change scan for atoms.
    pub scan_points: usize,
    pub bisect_tol: f64,
    pub mass_eps: Vec<f64>,
    /// Atoms lighter than this are discarded.
    pub min_mass: f64,
    /// Look for atoms (through the pole indicator when available).
    pub atoms: bool,
}

impl Default for StieltjesOptions {
    fn default() -> Self {
        StieltjesOptions {
            eps_schedule: vec![1e-2, 1e-3, 1e-4],
            end_offset: 1e-6,
            initial_points: 257,
            refine_tol: 1e-3,
            max_refine: 4,
            resolution_tol: 0.5,
            scan_points: 4096,
            bisect_tol: 1e-10,
            mass_eps: vec![1e-4, 1e-5, 1e-6],
            min_mass: 1e-8,
            atoms: true,
        }
    }
}

impl StieltjesOptions {
    pub fn with_eps(mut self, eps: Vec<f64>) -> Self {
        self.eps_schedule = eps;
        self
    }

    fn validate(&self, window: (f64, f64)) -> Result<()> {
        let e = &self.eps_schedule;
        if e.len() < 2 || e.iter().any(|&x| !(x > 0.0)) || e.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Resolution("ε schedule must have at least two strictly decreasing positive levels".into()));
        }
        if !(window.0 < window.1) || !window.0.is_finite() || !window.1.is_finite() {
            return Err(Error::Domain(format!("bad window [{}, {}]", window.0, window.1)));
        }
        if self.initial_points < 2 || self.scan_points < 2 {
            return Err(Error::Domain("need at least two sample points".into()));
        }
        if 2.0 * self.end_offset >= window.1 - window.0 {
            return Err(Error::Domain("end offset swallows the window".into()));
        }
        Ok(())
    }
}

/// (1/π)·Im m(s + iε) at each level of the schedule.
struct LineSample {
    s: f64,
    raw: Vec<CMat>,
}

fn line_sample(m: &MFunction, s: f64, eps: &[f64]) -> Result<LineSample> {
    let raw = eps.iter().map(|&e| Ok(im_part(&m.eval(Complex64::new(s, e))?) * cr(1.0 / PI))).collect::<Result<_>>()?;
    Ok(LineSample { s, raw })
}

fn sample_many(m: &MFunction, pts: &[f64], eps: &[f64]) -> Result<Vec<LineSample>> {
    pts.par_iter().map(|&s| line_sample(m, s, eps)).collect()
}

/// Poisson kernel contribution (1/π)·ε/((s − s_k)² + ε²) of each atom.
fn atom_smoothing(atoms: &[Atom], s: f64, eps: f64, dim: usize) -> CMat {
    let mut acc = zeros(dim, dim);
    for a in atoms {
        let d = s - a.s;
        acc += &a.mass * cr(eps / (PI * (d * d + eps * eps)));
    }
    acc
}

fn richardson(da: &CMat, db: &CMat, ea: f64, eb: f64) -> CMat {
    (db * cr(ea) - da * cr(eb)) * cr(1.0 / (ea - eb))
}

struct Processed {
    density: CMat,
    /// Change between the last two extrapolations, against the raw scale.
    change: f64,
    raw_scale: f64,
    growth: f64,
    last_norm: f64,
}

fn process(sample: &LineSample, atoms: &[Atom], eps: &[f64], dim: usize) -> Processed {
    let l = eps.len();
    let d: Vec<CMat> = sample.raw.iter().zip(eps).map(|(r, &e)| r - atom_smoothing(atoms, sample.s, e, dim)).collect();
    let density = richardson(&d[l - 2], &d[l - 1], eps[l - 2], eps[l - 1]);
    let change = if l >= 3 { max_abs(&(&density - richardson(&d[l - 3], &d[l - 2], eps[l - 3], eps[l - 2]))) } else { 0.0 };
    let raw_scale = d.iter().map(max_abs).fold(0.0, f64::max);
    let (na, nb) = (max_abs(&d[l - 2]), max_abs(&d[l - 1]));
    let growth = if na > 0.0 { nb / na } else if nb > 0.0 { f64::INFINITY } else { 1.0 };
    Processed { density, change, raw_scale, growth, last_norm: nb }
}

/// Σ′ on the window from (1/π)Im m on horizontal lines with ε → 0 extrapolation.
/// Atoms found through the pole indicator (or confirmed at points where Im m grows like
/// 1/ε) are subtracted from the smoothed data before extrapolating and reported separately.
pub fn stieltjes_invert(m: &MFunction, window: (f64, f64), opts: &StieltjesOptions) -> Result<SpectralMeasure> {
    opts.validate(window)?;
    let dim = m.dim;
    let eps = &opts.eps_schedule;
    let eps_last = eps[eps.len() - 1];
    let lo = window.0 + opts.end_offset;
    let hi = window.1 - opts.end_offset;

    let mut atoms = if opts.atoms && m.has_indicator() { extract_atoms(m, window, opts)? } else { Vec::new() };

    let n0 = opts.initial_points;
    let pts: Vec<f64> = (0..n0).map(|k| lo + (hi - lo) * k as f64 / (n0 - 1) as f64).collect();
    let mut samples = sample_many(m, &pts, eps)?;

    // points still growing like 1/ε after deflation are atoms the indicator did not see
    let mut candidates = Vec::new();
    if opts.atoms {
        let fresh: Vec<f64> = samples
            .iter()
            .filter_map(|smp| {
                let p = process(smp, &atoms, eps, dim);
                (p.growth >= 1.5 && p.last_norm * eps_last * PI >= opts.min_mass).then_some(smp.s)
            })
            .collect();
        let h = (hi - lo) / (n0 - 1) as f64;
        for s in fresh {
            if atoms.iter().any(|a| (a.s - s).abs() < h) {
                continue;
            }
            match refine_atom(m, s, h, opts) {
                Ok(Some(a)) => atoms.push(a),
                _ => candidates.push(s),
            }
        }
        atoms.sort_by(|a, b| a.s.total_cmp(&b.s));
    }

    let excluded = |s: f64| atoms.iter().any(|a| (a.s - s).abs() <= 10.0 * eps_last);
    let scale_of = |samples: &[LineSample]| {
        samples.iter().filter(|x| !excluded(x.s)).map(|x| max_abs(&process(x, &atoms, eps, dim).density)).fold(0.0, f64::max)
    };

    for _ in 0..opts.max_refine {
        let scale = scale_of(&samples).max(1e-300);
        let mut mids = Vec::new();
        for w in samples.windows(2) {
            let mid = 0.5 * (w[0].s + w[1].s);
            if excluded(w[0].s) || excluded(w[1].s) || excluded(mid) {
                continue;
            }
            mids.push(mid);
        }
        if mids.is_empty() {
            break;
        }
        let new = sample_many(m, &mids, eps)?;
        let mut by_s: Vec<LineSample> = Vec::with_capacity(samples.len() + new.len());
        let mut refined = false;
        let mut it = new.into_iter().peekable();
        for (i, smp) in samples.iter().enumerate() {
            by_s.push(LineSample { s: smp.s, raw: smp.raw.clone() });
            if let Some(next) = samples.get(i + 1) {
                if let Some(mid) = it.next_if(|x| x.s > smp.s && x.s < next.s) {
                    let dl = process(smp, &atoms, eps, dim).density;
                    let dr = process(next, &atoms, eps, dim).density;
                    let dm = process(&mid, &atoms, eps, dim).density;
                    if max_abs(&(dm - (dl + dr) * cr(0.5))) > opts.refine_tol * scale {
                        refined = true;
                    }
                    by_s.push(mid);
                }
            }
        }
        samples = by_s;
        if !refined {
            break;
        }
    }

    let mut grid = Vec::with_capacity(samples.len());
    let mut values = Vec::with_capacity(samples.len());
    let scale = scale_of(&samples);
    for smp in samples.iter().filter(|x| !excluded(x.s)) {
        let p = process(smp, &atoms, eps, dim);
        if p.change > opts.resolution_tol * p.raw_scale.max(scale) && p.change > 1e-12 {
            return Err(Error::Resolution(format!(
                "ε extrapolation does not settle at s = {} (change {:.3e}); use a finer ε schedule or extract atoms",
                smp.s, p.change
            )));
        }
        grid.push(smp.s);
        values.push(herm_part(&p.density));
    }
    Ok(SpectralMeasure { dim, atoms, density_grid: grid, density_values: values, window, candidates })
}

/// Real poles of m in the window with their masses lim ε·Im m(s + iε).
/// Uses sign changes of the (phase-normalized) pole indicator when m carries one, and a
/// peak scan of Im m otherwise.
pub fn extract_atoms(m: &MFunction, window: (f64, f64), opts: &StieltjesOptions) -> Result<Vec<Atom>> {
    opts.validate(window)?;
    let n = opts.scan_points;
    let lo = window.0 + opts.end_offset;
    let hi = window.1 - opts.end_offset;
    let h = (hi - lo) / (n - 1) as f64;
    let pts: Vec<f64> = (0..n).map(|k| lo + h * k as f64).collect();
    let mut atoms = Vec::new();
    if m.has_indicator() {
        let vals: Vec<Complex64> = pts.par_iter().map(|&s| m.indicator(s).expect("indicator present")).collect::<Result<_>>()?;
        let reference = vals.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(cr(1.0));
        if reference.norm() == 0.0 {
            return Err(Error::Resolution("pole indicator vanishes identically on the window".into()));
        }
        let phase = reference.conj() / reference.norm();
        let real = |z: Complex64| (z * phase).re;
        let mut roots = Vec::new();
        for k in 0..n - 1 {
            let (fa, fb) = (real(vals[k]), real(vals[k + 1]));
            if fa == 0.0 {
                roots.push(pts[k]);
            } else if fa * fb < 0.0 {
                roots.push(bisect(|s| Ok(real(m.indicator(s).expect("indicator present")?)), pts[k], pts[k + 1], fa, opts.bisect_tol)?);
            }
        }
        if roots.windows(2).any(|w| w[1] - w[0] < 2.0 * h) {
            return Err(Error::Resolution(format!("poles closer than two scan steps ({h:.3e}); increase scan_points")));
        }
        for s in roots {
            let mass = atom_mass(m, s, &opts.mass_eps)?;
            if max_abs(&mass) >= opts.min_mass {
                atoms.push(Atom { s, mass });
            }
        }
    } else {
        let tr: Vec<f64> = pts
            .par_iter()
            .map(|&s| Ok(im_part(&m.eval(Complex64::new(s, h))?).trace().re))
            .collect::<Result<_>>()?;
        for k in 0..n {
            let left = if k > 0 { tr[k - 1] } else { f64::NEG_INFINITY };
            let right = if k + 1 < n { tr[k + 1] } else { f64::NEG_INFINITY };
            if tr[k] > left && tr[k] >= right {
                if let Some(a) = refine_atom(m, pts[k], h, opts)? {
                    if !atoms.iter().any(|b: &Atom| (b.s - a.s).abs() < h) {
                        atoms.push(a);
                    }
                }
            }
        }
    }
    atoms.sort_by(|a, b| a.s.total_cmp(&b.s));
    Ok(atoms)
}

fn bisect(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64, tol: f64) -> Result<f64> {
    while b - a > tol * a.abs().max(1.0) {
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    Ok(0.5 * (a + b))
}

/// Locate a pole near `s0` by maximizing tr Im m on shrinking horizontal lines, then
/// confirm it through the 1/ε scaling of Im m. `None` if the peak is not a pole.
fn refine_atom(m: &MFunction, s0: f64, h: f64, opts: &StieltjesOptions) -> Result<Option<Atom>> {
    let peak = |s: f64, e: f64| -> Result<f64> { Ok(im_part(&m.eval(Complex64::new(s, e))?).trace().re) };
    let (mut a, mut b) = (s0 - h, s0 + h);
    let mut e = h / 10.0;
    let floor = opts.bisect_tol * s0.abs().max(1.0);
    loop {
        let s = golden_max(|x| peak(x, e), a, b, e / 10.0)?;
        if e <= floor {
            a = s;
            break;
        }
        let w = 5.0 * e;
        a = s - w;
        b = s + w;
        e = (e / 100.0).max(floor);
    }
    let s = a;
    let me = &opts.mass_eps;
    let probes = [me[me.len() - 2], me[me.len() - 1]];
    let ma = probes[0] * peak(s, probes[0])?;
    let mb = probes[1] * peak(s, probes[1])?;
    if !(mb > opts.min_mass) || (ma - mb).abs() > 1e-2 * mb {
        return Ok(None);
    }
    let mass = atom_mass(m, s, &opts.mass_eps)?;
    Ok((max_abs(&mass) >= opts.min_mass).then_some(Atom { s, mass }))
}

fn golden_max(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// lim ε·Im m(s + iε) from the last two levels of `eps` with linear extrapolation.
fn atom_mass(m: &MFunction, s: f64, eps: &[f64]) -> Result<CMat> {
    if eps.len() < 2 {
        return Err(Error::Resolution("mass estimate needs two ε levels".into()));
    }
    let l = eps.len();
    let (ea, eb) = (eps[l - 2], eps[l - 1]);
    let ma = im_part(&m.eval(Complex64::new(s, ea))?) * cr(ea);
    let mb = im_part(&m.eval(Complex64::new(s, eb))?) * cr(eb);
    Ok(herm_part(&richardson(&ma, &mb, ea, eb)))
}

/// f̂(s) = ∫ φ_U*(t, s)Δ(t)f(t) dt by the trapezoid rule on the grid of f.
pub fn fourier_transform(problem: &WeylProblem, f: &WeightedFunction, s_grid: &[f64]) -> Result<TransformResult> {
    let sys = problem.sys();
    let h0 = sys.decomp.h0();
    if f.grid.is_empty() {
        return Ok(TransformResult::zeros(s_grid.to_vec(), h0));
    }
    check_vector(f, sys.n())?;
    f.check_within(sys)?;
    let t_end = *f.grid.last().expect("nonempty");
    if t_end <= sys.a {
        return Ok(TransformResult::zeros(s_grid.to_vec(), h0));
    }
    let w = trapezoid_weights(&f.grid);
    let weighted: Vec<CMat> = f.grid.iter().zip(&f.values).zip(&w).map(|((&t, v), &wt)| sys.delta_at(t) * v * cr(wt)).collect();
    let values = s_grid
        .par_iter()
        .map(|&s| {
            let phi = problem.phi_until(cr(s), t_end)?;
            let mut acc = CVec::zeros(h0);
            for (&t, fv) in f.grid.iter().zip(&weighted) {
                acc += (phi.value_at(t).adjoint() * fv).column(0);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(TransformResult { s_grid: s_grid.to_vec(), values })
}

fn check_vector(f: &WeightedFunction, n: usize) -> Result<()> {
    if f.nrows() != n || f.ncols() != 1 {
        return Err(Error::Dimension(format!("expected {n}×1 samples, got {}×{}", f.nrows(), f.ncols())));
    }
    Ok(())
}

/// Points of `g.s_grid` inside the density grid with their trapezoid weights and Σ′ values.
fn density_nodes(g: &TransformResult, sigma: &SpectralMeasure) -> Vec<(usize, f64, CMat)> {
    let d = &sigma.density_grid;
    if d.len() < 2 {
        return Vec::new();
    }
    let idx: Vec<usize> = (0..g.s_grid.len()).filter(|&k| g.s_grid[k] >= d[0] && g.s_grid[k] <= d[d.len() - 1]).collect();
    let pts: Vec<f64> = idx.iter().map(|&k| g.s_grid[k]).collect();
    let w = trapezoid_weights(&pts);
    idx.into_iter()
        .zip(w)
        .map(|(k, wt)| (k, wt, sigma.density_at(g.s_grid[k]).expect("inside the density grid")))
        .collect()
}

fn atom_indices(g: &TransformResult, sigma: &SpectralMeasure) -> Result<Vec<usize>> {
    sigma
        .atoms
        .iter()
        .map(|a| g.index_of(a.s).ok_or_else(|| Error::GridMismatch(format!("atom at {} is missing from the s grid", a.s))))
        .collect()
}

/// (g, h) in L²(Σ): Σ_k h(s_k)*·mass_k·g(s_k) + ∫ h*Σ′g ds on the common grid.
pub fn sigma_inner(g: &TransformResult, h: &TransformResult, sigma: &SpectralMeasure) -> Result<Complex64> {
    if g.s_grid != h.s_grid {
        return Err(Error::GridMismatch("transforms are sampled on different grids".into()));
    }
    if g.s_grid.is_empty() {
        return Ok(cr(0.0));
    }
    if g.dim() != sigma.dim || h.dim() != sigma.dim {
        return Err(Error::Dimension(format!("transforms must have {} components", sigma.dim)));
    }
    let mut acc = cr(0.0);
    for (a, k) in sigma.atoms.iter().zip(atom_indices(g, sigma)?) {
        acc += h.values[k].dotc(&(&a.mass * &g.values[k]));
    }
    for (k, wt, d) in density_nodes(g, sigma) {
        acc += h.values[k].dotc(&(d * &g.values[k])) * wt;
    }
    Ok(acc)
}

/// (V*g)(t) = Σ_k φ_U(t, s_k)·mass_k·g(s_k) + ∫ φ_U(t, s)Σ′(s)g(s) ds on `t_grid`.
pub fn inverse_transform(problem: &WeylProblem, g: &TransformResult, sigma: &SpectralMeasure, t_grid: &[f64]) -> Result<WeightedFunction> {
    let sys = problem.sys();
    let n = sys.n();
    if g.s_grid.is_empty() || t_grid.is_empty() {
        return Ok(WeightedFunction::zeros(t_grid.to_vec(), n, 1));
    }
    if g.dim() != sigma.dim {
        return Err(Error::Dimension(format!("transform must have {} components", sigma.dim)));
    }
    let t_end = *t_grid.last().expect("nonempty");
    if t_grid[0] < sys.a || t_end > sys.b {
        return Err(Error::Domain(format!("t grid leaves [{}, {}]", sys.a, sys.b)));
    }
    let mut terms: Vec<(f64, CVec)> = Vec::new();
    for (a, k) in sigma.atoms.iter().zip(atom_indices(g, sigma)?) {
        terms.push((g.s_grid[k], &a.mass * &g.values[k]));
    }
    for (k, wt, d) in density_nodes(g, sigma) {
        terms.push((g.s_grid[k], d * &g.values[k] * cr(wt)));
    }
    let t_top = if t_end > sys.a { t_end } else { return Ok(WeightedFunction::zeros(t_grid.to_vec(), n, 1)) };
    let parts: Vec<Vec<CMat>> = terms
        .par_iter()
        .map(|(s, c)| {
            let phi = problem.phi_until(cr(*s), t_top)?;
            Ok(t_grid.iter().map(|&t| phi.value_at(t) * c).map(|v| CMat::from_column_slice(n, 1, v.as_slice())).collect())
        })
        .collect::<Result<_>>()?;
    let mut values = vec![zeros(n, 1); t_grid.len()];
    for p in parts {
        for (acc, v) in values.iter_mut().zip(p) {
            *acc += v;
        }
    }
    WeightedFunction::new(t_grid.to_vec(), values)
}

/// ‖f‖²_Δ against ‖f̂‖²_{L²(Σ)} over the window of Σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsevalReport {
    pub norm_sq: f64,
    pub transform_norm_sq: f64,
    /// ‖f‖²_Δ − ‖f̂‖²; non-negative up to quadrature error.
    pub defect: f64,
    /// Share of ‖f̂‖² carried by the outer tenth of the window on either side.
    pub edge_fraction: f64,
}

pub fn parseval_defect(problem: &WeylProblem, f: &WeightedFunction, sigma: &SpectralMeasure) -> Result<ParsevalReport> {
    let norm_sq = l2delta_norm_sq(problem.sys(), f)?;
    let grid = sigma.sample_grid();
    let fhat = fourier_transform(problem, f, &grid)?;
    let transform_norm_sq = sigma_inner(&fhat, &fhat, sigma)?.re;
    let (lo, hi) = sigma.window;
    let band = 0.1 * (hi - lo);
    let mut edge = sigma.clone();
    edge.atoms.retain(|a| a.s < lo + band || a.s > hi - band);
    for (s, d) in edge.density_grid.iter().zip(edge.density_values.iter_mut()) {
        if *s >= lo + band && *s <= hi - band {
            *d = zeros(sigma.dim, sigma.dim);
        }
    }
    let edge_sq = sigma_inner(&fhat, &fhat, &edge)?.re;
    Ok(ParsevalReport {
        norm_sq,
        transform_norm_sq,
        defect: norm_sq - transform_norm_sq,
        edge_fraction: if transform_norm_sq > 0.0 { edge_sq / transform_norm_sq } else { 0.0 },
    })
}

/// The two limits along λ = iy that decide membership in SF₀, plus the growth conditions
/// on M₄ that make every τ admissible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub ys: Vec<f64>,
    /// ‖(1/y)(C₀ − C₁M₄)⁻¹C₁‖ along the schedule.
    pub expr1: Vec<f64>,
    /// ‖(1/y)M₄(C₀ − C₁M₄)⁻¹C₀‖ along the schedule.
    pub expr2: Vec<f64>,
    pub limit1: f64,
    pub limit2: f64,
    pub sf0: bool,
    /// ‖M₄(iy)‖/y and its extrapolated limit.
    pub m4_over_y: Vec<f64>,
    pub limit_m4_over_y: f64,
    /// y·λ_min(Im M₄(iy)).
    pub growth: Vec<f64>,
    pub growth_unbounded: bool,
    /// Both growth conditions hold, so every boundary parameter gives an SF₀ function.
    pub all_tau_sf0: bool,
}

/// Extrapolate e(y) = L + c/y from the last two samples.
fn limit_in_y(ys: &[f64], vals: &[CMat]) -> f64 {
    let n = ys.len();
    if n == 1 {
        return max_abs(&vals[0]);
    }
    let (ya, yb) = (ys[n - 2], ys[n - 1]);
    max_abs(&((&vals[n - 1] * cr(yb) - &vals[n - 2] * cr(ya)) * cr(1.0 / (yb - ya))))
}

pub fn admissibility_check(
    m4: impl Fn(Complex64) -> Result<CMat>,
    tau: &BoundaryParameter,
    ys: &[f64],
    tau_lim: f64,
) -> Result<AdmissibilityReport> {
    if ys.is_empty() || ys.iter().any(|&y| !(y > 0.0)) || ys.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("y schedule must be positive and increasing".into()));
    }
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    let mut q = Vec::new();
    let mut growth = Vec::new();
    for &y in ys {
        let lam = I * y;
        let m = m4(lam)?;
        let (c0, c1) = tau.at(lam);
        if m.nrows() != c0.ncols() {
            return Err(Error::Dimension(format!("M₄ is {}×{} but τ acts on dimension {}", m.nrows(), m.ncols(), c0.ncols())));
        }
        let k = inverse(&(&c0 - &c1 * &m)).ok_or(Error::NearSpectrum { lambda: lam, cond: f64::INFINITY })?;
        let s = cr(1.0 / y);
        e1.push(&k * &c1 * s);
        e2.push(&m * &k * &c0 * s);
        q.push(&m * s);
        growth.push(y * min_eig_herm(&im_part(&m)));
    }
    let limit1 = limit_in_y(ys, &e1);
    let limit2 = limit_in_y(ys, &e2);
    let limit_m4_over_y = limit_in_y(ys, &q);
    let growth_unbounded = growth.windows(2).all(|w| w[1] > w[0]) && growth.len() >= 2 && growth[growth.len() - 1] >= 10.0 * growth[0].max(0.0) && growth[0] > 0.0;
    let sf0 = limit1 <= tau_lim && limit2 <= tau_lim;
    Ok(AdmissibilityReport {
        ys: ys.to_vec(),
        expr1: e1.iter().map(max_abs).collect(),
        expr2: e2.iter().map(max_abs).collect(),
        limit1,
        limit2,
        sf0,
        m4_over_y: q.iter().map(max_abs).collect(),
        limit_m4_over_y,
        growth,
        growth_unbounded,
        all_tau_sf0: limit_m4_over_y <= tau_lim && growth_unbounded,
    })
}

/// Principal log with the cut along the negative real axis.
fn ln(z: Complex64) -> Complex64 {
    z.ln()
}

/// Cauchy transform of the part of Σ continued past the window: atoms by their edge spacing
/// and mass, the density by its edge value. Divergent real constants are dropped; they are
/// Hermitian and absorbed by the fitted constant.
pub fn tail_correction(sigma: &SpectralMeasure, lambda: Complex64) -> CMat {
    let dim = sigma.dim;
    let mut acc = zeros(dim, dim);
    let half_turn = I * PI * lambda.im.signum();
    let a = &sigma.atoms;
    if a.len() >= 2 {
        let hu = a[a.len() - 1].s - a[a.len() - 2].s;
        let hl = a[1].s - a[0].s;
        if hu > 0.0 {
            acc -= &a[a.len() - 1].mass * (ln(cr(a[a.len() - 1].s + 0.5 * hu) - lambda) / hu);
        }
        if hl > 0.0 {
            acc += &a[0].mass * ((ln(cr(a[0].s - 0.5 * hl) - lambda) + half_turn) / hl);
        }
    }
    let g = &sigma.density_grid;
    if g.len() >= 2 {
        let (l, u) = (g[0], g[g.len() - 1]);
        acc -= &sigma.density_values[g.len() - 1] * ln(cr(u) - lambda);
        acc += &sigma.density_values[0] * (ln(cr(l) - lambda) + half_turn);
    }
    acc
}

/// Σ_k mass_k/(s_k − λ) + ∫Σ′(s)/(s − λ)ds (piecewise-linear Σ′, integrated exactly)
/// + tail correction + `linear_term`.
pub fn reconstruct_m_from_sigma(sigma: &SpectralMeasure, lambda: Complex64, linear_term: Option<&CMat>) -> Result<CMat> {
    if lambda.im == 0.0 {
        return Err(Error::Domain("reconstruction needs λ off the real axis".into()));
    }
    let dim = sigma.dim;
    let mut acc = zeros(dim, dim);
    for a in &sigma.atoms {
        acc += &a.mass / (cr(a.s) - lambda);
    }
    let g = &sigma.density_grid;
    let d = &sigma.density_values;
    for k in 1..g.len() {
        let (s0, s1) = (g[k - 1], g[k]);
        let h = s1 - s0;
        // D(s) = d0 + (d1 − d0)(s − s0)/h; ∫ D/(s − λ) = (d1 − d0) + (d0 + (d1 − d0)(λ − s0)/h)·log ratio
        let slope = (&d[k] - &d[k - 1]) / cr(h);
        let logr = ln(cr(s1) - lambda) - ln(cr(s0) - lambda);
        acc += &slope * cr(h) + (&d[k - 1] + &slope * (lambda - s0)) * logr;
    }
    if !sigma.atoms.is_empty() || g.len() >= 2 {
        acc += tail_correction(sigma, lambda);
    }
    if let Some(c) = linear_term {
        if c.nrows() != dim || c.ncols() != dim {
            return Err(Error::Dimension(format!("linear term must be {dim}×{dim}")));
        }
        acc += c;
    }
    Ok(acc)
}

/// Hermitian constant A with m(λ_ref) ≈ reconstruct(λ_ref) + A.
pub fn fit_hermitian_constant(sigma: &SpectralMeasure, m_ref: &CMat, lambda_ref: Complex64) -> Result<CMat> {
    let r = reconstruct_m_from_sigma(sigma, lambda_ref, None)?;
    Ok(herm_part(&(m_ref - r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::oracle::{DiracOracle, DiracTau, ExampleSystem};
    use crate::tolerances::Tolerances;
    use std::sync::Arc;

    fn pole() -> MFunction {
        MFunction::new(1, "pole", |l| Ok(CMat::from_element(1, 1, -1.0 / l)))
    }

    fn quick() -> StieltjesOptions {
        StieltjesOptions { initial_points: 33, scan_points: 256, ..Default::default() }
    }

    #[test]
    fn constant_m_has_no_spectrum() {
        let m = MFunction::new(2, "const", |_| Ok(CMat::from_row_slice(2, 2, &[cr(1.0), c(0.0, 2.0), c(0.0, -2.0), cr(-3.0)])));
        let s = stieltjes_invert(&m, (-1.0, 1.0), &quick()).unwrap();
        assert!(s.atoms.is_empty());
        assert!(s.density_values.iter().all(|d| max_abs(d) < 1e-14));
    }

    #[test]
    fn unit_pole_is_an_atom() {
        let s = stieltjes_invert(&pole(), (-1.0, 1.0), &quick()).unwrap();
        assert_eq!(s.atoms.len(), 1, "{:?}", s.atoms);
        assert!(s.atoms[0].s.abs() < 1e-9);
        assert!((s.atoms[0].mass[(0, 0)].re - 1.0).abs() < 1e-6);
        assert!(s.density_values.iter().all(|d| max_abs(d) < 1e-6));
        let atoms = extract_atoms(&pole(), (-1.0, 1.0), &quick()).unwrap();
        assert_eq!(atoms.len(), 1);
        assert!((atoms[0].mass[(0, 0)].re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reconstruct_single_atom() {
        let sigma = SpectralMeasure::from_atoms(1, (-1.0, 1.0), vec![Atom { s: 0.0, mass: CMat::identity(1, 1) }]);
        for lam in [I, c(0.3, -2.0)] {
            let r = reconstruct_m_from_sigma(&sigma, lam, None).unwrap();
            assert!((r[(0, 0)] + 1.0 / lam).norm() < 1e-15);
        }
        let empty = SpectralMeasure::empty(2, (0.0, 1.0));
        let lt = CMat::identity(2, 2) * cr(0.5);
        assert_eq!(reconstruct_m_from_sigma(&empty, I, Some(&lt)).unwrap(), lt);
    }

    #[test]
    fn example_density_from_closed_form() {
        let ex = ExampleSystem::default();
        let e2 = ex.clone();
        let m = MFunction::new(2, "closed", move |l| e2.m(l));
        let s = stieltjes_invert(&m, (-PI, PI), &StieltjesOptions { initial_points: 65, ..Default::default() }).unwrap();
        assert!(s.atoms.is_empty());
        let err = s.density_grid.iter().zip(&s.density_values).map(|(&x, d)| max_abs(&(d - ex.sigma_density(x)))).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        assert!(s.psd_defect() > -1e-10);
        assert!(s.monotonicity_defect() > -1e-10);
        let d = s.distribution(1.0).unwrap();
        assert!(max_abs(&(d - ex.sigma_distribution(1.0))) < 1e-4);

        // Poisson smoothing of the reconstruction reproduces Im m close to the axis
        let eps0 = 1e-3;
        for x in [-2.5, -0.4, 0.0, 1.3, 2.9] {
            let lam = c(x, eps0);
            let r = reconstruct_m_from_sigma(&s, lam, None).unwrap();
            let want = im_part(&ex.m(lam).unwrap());
            assert!(max_abs(&(im_part(&r) - &want)) <= 1e-3 * max_abs(&want), "{x}");
        }
    }

    #[test]
    fn inner_product_of_example_density() {
        let ex = ExampleSystem::default();
        let n = 2001;
        let grid: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / (n - 1) as f64).collect();
        let vals = grid.iter().map(|&x| ex.sigma_density(x)).collect();
        let sigma = SpectralMeasure { density_grid: grid.clone(), density_values: vals, ..SpectralMeasure::empty(2, (0.0, 2.0 * PI)) };
        let g = TransformResult { s_grid: grid.clone(), values: vec![CVec::from_vec(vec![cr(1.0), cr(0.0)]); n] };
        let v = sigma_inner(&g, &g, &sigma).unwrap();
        assert!((v - cr(2.0)).norm() < 1e-12);
        let h = TransformResult { s_grid: grid.clone(), values: grid.iter().map(|&x| CVec::from_vec(vec![c(x.cos(), 1.0), c(0.0, x)])).collect() };
        let a = sigma_inner(&g, &h, &sigma).unwrap();
        let b = sigma_inner(&h, &g, &sigma).unwrap();
        assert!((a - b.conj()).norm() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let mut s = SpectralMeasure::from_atoms(2, (0.0, 3.0), vec![Atom { s: 1.5, mass: CMat::from_row_slice(2, 2, &[cr(1.0), c(0.0, 0.5), c(0.0, -0.5), cr(2.0)]) }]);
        s.density_grid = vec![0.0, 1.0];
        s.density_values = vec![CMat::identity(2, 2), CMat::identity(2, 2) * cr(2.0)];
        let back = SpectralMeasure::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(s.density_csv().starts_with("s,d_00_re,d_00_im,d_01_re"));
        assert!(SpectralMeasure::from_json(r#"{"dim":2,"window":[0,1],"atoms":[{"s":0,"mass":[[[1,0]]]}],"density":{"s":[],"values":[]}}"#).is_err());
    }

    #[test]
    fn dirac_atoms_from_indicator() {
        let p = Arc::new(DiracOracle::problem(&Tolerances::default()));
        for tau in [DiracTau::Canonical, DiracTau::Swapped] {
            let o = DiracOracle::new(tau);
            let m = p.m_function(&o.boundary_parameter()).unwrap();
            let atoms = extract_atoms(&m, (-0.5, 7.0), &StieltjesOptions { scan_points: 512, ..Default::default() }).unwrap();
            let want = o.eigenvalues_in(-0.5, 7.0);
            assert_eq!(atoms.len(), want.len());
            for (a, w) in atoms.iter().zip(&want) {
                assert!((a.s - w).abs() < 1e-8, "{} vs {w}", a.s);
                assert!((a.mass[(0, 0)].re - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn dirac_window_without_spectrum() {
        let p = Arc::new(DiracOracle::problem(&Tolerances::default()));
        let m = p.m_function(&DiracOracle::new(DiracTau::Canonical).boundary_parameter()).unwrap();
        let s = stieltjes_invert(&m, (0.1, 1.0), &StieltjesOptions { initial_points: 17, scan_points: 64, ..Default::default() }).unwrap();
        assert!(s.atoms.is_empty());
        assert!(s.density_values.iter().all(|d| max_abs(d) < 1e-6));
    }

    #[test]
    fn admissibility_on_dirac_closed_form() {
        let ys = [1e2, 1e3, 1e4, 1e5, 1e6];
        let m4 = |l: Complex64| Ok(CMat::from_element(1, 1, I * (l.im).tanh()));
        for tau in [BoundaryParameter::canonical(1), BoundaryParameter::swapped(1)] {
            let r = admissibility_check(m4, &tau, &ys, 1e-6).unwrap();
            assert!(r.sf0);
            assert!(r.all_tau_sf0);
        }
    }

    #[test]
    fn transform_of_zero() {
        let p = DiracOracle::problem(&Tolerances::default());
        let f = WeightedFunction::zeros(vec![0.0, 0.5, 1.0], 2, 1);
        let r = fourier_transform(&p, &f, &[0.0, 1.0]).unwrap();
        assert!(r.values.iter().all(|v| v.norm() == 0.0));
        let sigma = SpectralMeasure::from_atoms(1, (-1.0, 2.0), vec![Atom { s: 0.0, mass: CMat::identity(1, 1) }]);
        let back = inverse_transform(&p, &r, &sigma, &[0.0, 0.5]).unwrap();
        assert!(back.values.iter().all(|v| max_abs(v) == 0.0));
    }
}
