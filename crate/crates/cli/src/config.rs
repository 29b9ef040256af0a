//! The JSON job description and its translation into library objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symm_spectra::boundary::{
    build_frame_a, build_frame_b_regular, build_frame_b_singular, BoundaryFrameA, BoundaryFrameB, BoundaryParameter,
    ThetaFn,
};
use symm_spectra::linalg::{zeros, CMat};
use symm_spectra::oracle::{DiracOracle, ExampleSystem};
use symm_spectra::spectral::StieltjesOptions;
use symm_spectra::sysdef::{SpaceDecomposition, SymmetricSystem};
use symm_spectra::weyl::WeylProblem;
use symm_spectra::Tolerances;

use crate::error::{CliError, CliResult};

pub const MAX_TAU_DEGREE: usize = 4;

/// A complex number written as `[re, im]` or as a plain real.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cx {
    Pair([f64; 2]),
    Real(f64),
}

impl Cx {
    pub fn value(self) -> Complex64 {
        match self {
            Cx::Pair([re, im]) => Complex64::new(re, im),
            Cx::Real(re) => Complex64::new(re, 0.0),
        }
    }
}

/// Row-major nested arrays.
pub type MatrixSpec = Vec<Vec<Cx>>;

pub fn matrix(spec: &MatrixSpec, what: &str) -> CliResult<CMat> {
    let rows = spec.len();
    let cols = spec.first().map_or(0, |r| r.len());
    if spec.iter().any(|r| r.len() != cols) {
        return Err(CliError::Config(format!("{what}: rows have different lengths")));
    }
    Ok(CMat::from_fn(rows, cols, |i, k| spec[i][k].value()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub frame_a: Option<FrameASpec>,
    #[serde(default)]
    pub frame_b: Option<FrameBSpec>,
    #[serde(default)]
    pub tau: Option<TauSpec>,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
    #[serde(default)]
    pub job: JobSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Registry(String),
    Inline(InlineSystem),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Endpoint {
    Finite(f64),
    /// "inf"
    Named(String),
}

/// Coefficient entry: a constant, or one polynomial per piece in powers of (t − piece start).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EntrySpec {
    Constant(Cx),
    Pieces(Vec<Vec<Cx>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    #[serde(default)]
    pub name: Option<String>,
    pub interval: (f64, Endpoint),
    pub p: usize,
    pub q: usize,
    #[serde(default)]
    pub regular_b: Option<bool>,
    /// Start points of the polynomial pieces; defaults to the left end point only.
    #[serde(default)]
    pub breaks: Option<Vec<f64>>,
    #[serde(rename = "B", default)]
    pub b: Option<Vec<Vec<EntrySpec>>>,
    #[serde(rename = "Delta")]
    pub delta: Vec<Vec<EntrySpec>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameASpec {
    #[serde(rename = "U")]
    pub u: MatrixSpec,
    #[serde(rename = "Utilde", default)]
    pub utilde: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FrameBSpec {
    Regular {
        #[serde(rename = "Xb")]
        xb: MatrixSpec,
    },
    Theta {
        theta: String,
        #[serde(default)]
        beta0: Option<f64>,
        #[serde(default)]
        levels: Option<usize>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Pair {
        #[serde(rename = "C0")]
        c0: MatrixSpec,
        #[serde(rename = "C1")]
        c1: MatrixSpec,
    },
    SelfAdjoint {
        #[serde(rename = "B_sa")]
        b_sa: MatrixSpec,
    },
    /// C₀(λ) = Σ C0[k] λᵏ and likewise C₁.
    Polynomial { polynomial: PolynomialTau },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialTau {
    #[serde(rename = "C0")]
    pub c0: Vec<MatrixSpec>,
    #[serde(rename = "C1")]
    pub c1: Vec<MatrixSpec>,
    /// Evaluate at λ̄ instead of λ. Such pairs are never Nevanlinna pairs unless constant;
    /// the option exists so that `validate` can be shown one.
    #[serde(default)]
    pub conjugate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinSpec {
    pub from: f64,
    pub to: f64,
    pub n: usize,
}

impl LinSpec {
    pub fn points(&self) -> Vec<f64> {
        match self.n {
            0 => Vec::new(),
            1 => vec![self.from],
            n => (0..n).map(|k| self.from + (self.to - self.from) * k as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    #[serde(default)]
    pub lambdas: Option<Vec<Cx>>,
    /// Same syntax as `--lambda-grid`.
    #[serde(default)]
    pub lambda_grid: Option<String>,
    #[serde(default)]
    pub lambda: Option<Cx>,
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default)]
    pub eps: Option<Vec<f64>>,
    #[serde(default)]
    pub stieltjes: Option<StieltjesOptions>,
    /// CSV of samples, relative to the config file.
    #[serde(default)]
    pub input: Option<String>,
    #[serde(default)]
    pub direction: Option<Direction>,
    /// Spectral measure document written by `spectral`, relative to the config file.
    #[serde(default)]
    pub measure: Option<String>,
    #[serde(default)]
    pub s_grid: Option<LinSpec>,
    #[serde(default)]
    pub t_grid: Option<LinSpec>,
}

/// Parsed config together with its canonical hash and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: JobConfig,
    pub hash: String,
    pub base_dir: PathBuf,
}

/// sha256 of the canonical (key-sorted, compact) form of the document.
pub fn config_hash(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("json values serialize");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_config(text: &str) -> CliResult<(JobConfig, String)> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    let hash = config_hash(&value);
    let config: JobConfig = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("field `{path}`: {}", e.inner()))
    })?;
    Ok((config, hash))
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let (config, hash) = parse_config(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, hash, base_dir })
}

/// Built-in systems with closed forms.
#[derive(Debug, Clone)]
pub enum Registry {
    Dirac,
    Example(ExampleSystem),
}

impl Registry {
    pub fn lookup(name: &str) -> CliResult<Self> {
        match name {
            "dirac-oracle" => Ok(Registry::Dirac),
            "paper-example" => Ok(Registry::Example(ExampleSystem::default())),
            _ => Err(CliError::Config(format!("unknown registry system `{name}` (known: dirac-oracle, paper-example)"))),
        }
    }
}

/// Tolerances: defaults, then the config, then the environment.
pub fn tolerances(config: &JobConfig) -> Tolerances {
    let mut tol = config.tolerances.clone().unwrap_or_default();
    let env = Tolerances::from_env();
    let def = Tolerances::default();
    if env.tol_ode != def.tol_ode {
        tol.tol_ode = env.tol_ode;
    }
    if env.tol_id != def.tol_id {
        tol.tol_id = env.tol_id;
    }
    if env.eps_schedule != def.eps_schedule {
        tol.eps_schedule = env.eps_schedule;
    }
    tol
}

pub fn build_system(spec: &SystemSpec) -> CliResult<(SymmetricSystem, Option<Registry>)> {
    match spec {
        SystemSpec::Registry(name) => {
            let reg = Registry::lookup(name)?;
            let sys = match &reg {
                Registry::Dirac => DiracOracle::system(),
                Registry::Example(ex) => ex.system(),
            };
            Ok((sys, Some(reg)))
        }
        SystemSpec::Inline(s) => Ok((inline_system(s)?, None)),
    }
}

struct Piecewise {
    starts: Vec<f64>,
    /// entry → piece → coefficients
    coef: Vec<Vec<Vec<Complex64>>>,
    n: usize,
}

impl Piecewise {
    fn new(spec: &[Vec<EntrySpec>], starts: &[f64], n: usize, what: &str) -> CliResult<Self> {
        if spec.len() != n || spec.iter().any(|r| r.len() != n) {
            return Err(CliError::Config(format!("{what} must be {n}×{n}")));
        }
        let mut coef = Vec::with_capacity(n * n);
        for (i, row) in spec.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                let pieces = match e {
                    EntrySpec::Constant(c) => vec![vec![c.value()]; starts.len()],
                    EntrySpec::Pieces(p) => {
                        if p.len() != starts.len() {
                            return Err(CliError::Config(format!(
                                "{what}[{i}][{k}] has {} pieces, breaks define {}",
                                p.len(),
                                starts.len()
                            )));
                        }
                        p.iter().map(|c| c.iter().map(|z| z.value()).collect()).collect()
                    }
                };
                coef.push(pieces);
            }
        }
        Ok(Piecewise { starts: starts.to_vec(), coef, n })
    }

    fn eval(&self, t: f64) -> CMat {
        let piece = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        let x = t - self.starts[piece];
        CMat::from_fn(self.n, self.n, |i, k| {
            self.coef[i * self.n + k][piece].iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
        })
    }
}

fn inline_system(s: &InlineSystem) -> CliResult<SymmetricSystem> {
    let a = s.interval.0;
    let b = match &s.interval.1 {
        Endpoint::Finite(b) => *b,
        Endpoint::Named(name) if matches!(name.as_str(), "inf" | "infinity" | "+inf") => f64::INFINITY,
        Endpoint::Named(name) => return Err(CliError::Config(format!("interval end `{name}` is neither a number nor \"inf\""))),
    };
    let decomp = SpaceDecomposition::new(s.p, s.q)?;
    let n = decomp.n();
    let starts = s.breaks.clone().unwrap_or_else(|| vec![a]);
    if starts.first() != Some(&a) || starts.windows(2).any(|w| w[1] <= w[0]) || starts.last().is_some_and(|&x| x >= b) {
        return Err(CliError::Config("breaks must start at the left end point, increase, and stay inside the interval".into()));
    }
    let delta = Piecewise::new(&s.delta, &starts, n, "Delta")?;
    let bfn: Arc<dyn Fn(f64) -> CMat + Send + Sync> = match &s.b {
        Some(spec) => {
            let pw = Piecewise::new(spec, &starts, n, "B")?;
            Arc::new(move |t| pw.eval(t))
        }
        None => Arc::new(move |_| zeros(n, n)),
    };
    let regular = s.regular_b.unwrap_or(b.is_finite());
    let sys = SymmetricSystem::new(a, b, regular, decomp, bfn, Arc::new(move |t| delta.eval(t)))?
        .with_name(s.name.clone().unwrap_or_else(|| "inline".into()))
        .with_breakpoints(starts[1..].to_vec());
    Ok(sys)
}

pub fn build_frame_a_spec(
    spec: Option<&FrameASpec>,
    sys: &SymmetricSystem,
    reg: Option<&Registry>,
    tol: &Tolerances,
) -> CliResult<BoundaryFrameA> {
    match (spec, reg) {
        (Some(f), _) => {
            let u = matrix(&f.u, "frame_a.U")?;
            let ut = f.utilde.as_ref().map(|m| matrix(m, "frame_a.Utilde")).transpose()?;
            Ok(build_frame_a(sys.decomp, &u, ut.as_ref(), tol)?)
        }
        (None, Some(Registry::Dirac)) => Ok(DiracOracle::frame_a(tol)),
        (None, Some(Registry::Example(ex))) => Ok(ex.frame_a(tol)),
        (None, None) => Err(CliError::Config("an inline system needs frame_a".into())),
    }
}

pub fn build_frame_b_spec(
    spec: Option<&FrameBSpec>,
    sys: &SymmetricSystem,
    reg: Option<&Registry>,
    tol: &Tolerances,
) -> CliResult<BoundaryFrameB> {
    match (spec, reg) {
        (Some(FrameBSpec::Regular { xb }), _) => {
            if !sys.regular_b {
                return Err(CliError::Config("frame_b.Xb needs a regular right end point".into()));
            }
            Ok(build_frame_b_regular(sys.decomp, &matrix(xb, "frame_b.Xb")?, tol)?)
        }
        (Some(FrameBSpec::Theta { theta, beta0, levels }), _) => {
            if sys.regular_b {
                return Err(CliError::Config("theta frames are for singular right end points".into()));
            }
            match Registry::lookup(theta)? {
                Registry::Example(ex) => {
                    let beta0 = beta0.unwrap_or(8.0);
                    let levels = levels.unwrap_or(8);
                    if beta0 <= sys.a {
                        return Err(CliError::Config("frame_b.beta0 must exceed the left end point".into()));
                    }
                    let th: ThetaFn = Arc::new(move |t| ex.theta(t));
                    Ok(build_frame_b_singular(sys.decomp, Vec::new(), vec![th], Vec::new(), beta0, levels)?)
                }
                Registry::Dirac => Err(CliError::Config("dirac-oracle has no theta functions".into())),
            }
        }
        (None, Some(Registry::Dirac)) => Ok(DiracOracle::frame_b(tol)),
        (None, Some(Registry::Example(ex))) => Ok(ex.frame_b(8.0, 8)),
        (None, None) => Err(CliError::Config("an inline system needs frame_b".into())),
    }
}

pub fn build_tau(spec: Option<&TauSpec>, dim_hb: usize, tol: &Tolerances) -> CliResult<BoundaryParameter> {
    let tau = match spec {
        None => BoundaryParameter::canonical(dim_hb),
        Some(TauSpec::Pair { c0, c1 }) => BoundaryParameter::constant(matrix(c0, "tau.C0")?, matrix(c1, "tau.C1")?, tol)?,
        Some(TauSpec::SelfAdjoint { b_sa }) => BoundaryParameter::from_selfadjoint(&matrix(b_sa, "tau.B_sa")?, tol)?,
        Some(TauSpec::Polynomial { polynomial }) => polynomial_tau(polynomial)?,
    };
    if tau.dim() != dim_hb {
        return Err(CliError::Validation(format!("tau acts on dimension {}, but dim H_b = {dim_hb}", tau.dim())));
    }
    Ok(tau)
}

fn polynomial_tau(p: &PolynomialTau) -> CliResult<BoundaryParameter> {
    if p.c0.is_empty() || p.c1.is_empty() {
        return Err(CliError::Config("tau.polynomial needs at least one coefficient for C0 and C1".into()));
    }
    if p.c0.len() > MAX_TAU_DEGREE + 1 || p.c1.len() > MAX_TAU_DEGREE + 1 {
        return Err(CliError::Config(format!("tau.polynomial degree is limited to {MAX_TAU_DEGREE}")));
    }
    let c0: Vec<CMat> = p.c0.iter().map(|m| matrix(m, "tau.polynomial.C0")).collect::<CliResult<_>>()?;
    let c1: Vec<CMat> = p.c1.iter().map(|m| matrix(m, "tau.polynomial.C1")).collect::<CliResult<_>>()?;
    let dim = c0[0].nrows();
    if c0.iter().chain(&c1).any(|m| m.shape() != (dim, dim)) {
        return Err(CliError::Config("tau.polynomial coefficients must all be square of one size".into()));
    }
    let horner = move |cs: &[CMat], l: Complex64| cs.iter().rev().fold(zeros(dim, dim), |acc, c| acc * l + c);
    let conj = p.conjugate;
    let eval = move |l: Complex64| {
        let l = if conj { l.conj() } else { l };
        (horner(&c0, l), horner(&c1, l))
    };
    let label = if conj { "polynomial in conj(lambda)" } else { "polynomial" };
    Ok(BoundaryParameter::holomorphic(dim, Arc::new(eval), label))
}

/// Everything a numerical command needs.
pub struct Setup {
    pub problem: Arc<WeylProblem>,
    pub tau: BoundaryParameter,
    pub tol: Tolerances,
    pub registry: Option<Registry>,
    pub hash: String,
    pub base_dir: PathBuf,
    pub job: JobSpec,
}

impl Setup {
    pub fn build(loaded: &LoadedConfig) -> CliResult<Self> {
        let cfg = &loaded.config;
        let tol = tolerances(cfg);
        let (sys, reg) = build_system(&cfg.system)?;
        let fa = build_frame_a_spec(cfg.frame_a.as_ref(), &sys, reg.as_ref(), &tol)?;
        let fb = build_frame_b_spec(cfg.frame_b.as_ref(), &sys, reg.as_ref(), &tol)?;
        let tau = build_tau(cfg.tau.as_ref(), fb.dim_hb, &tol)?;
        let problem = Arc::new(WeylProblem::new(sys, fa, fb, tol.clone()));
        Ok(Setup { problem, tau, tol, registry: reg, hash: loaded.hash.clone(), base_dir: loaded.base_dir.clone(), job: cfg.job.clone() })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_config_parses() {
        let (cfg, hash) = parse_config(r#"{"system": "dirac-oracle", "tau": {"C0": [[1]], "C1": [[0]]}}"#).unwrap();
        assert!(matches!(cfg.system, SystemSpec::Registry(ref s) if s == "dirac-oracle"));
        assert_eq!(hash.len(), 64);
        // key order does not change the hash
        let (_, h2) = parse_config(r#"{"tau": {"C1": [[0]], "C0": [[1]]}, "system": "dirac-oracle"}"#).unwrap();
        assert_eq!(hash, h2);
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse_config(r#"{"system": "dirac-oracle", "job": {"window": [0, "x"]}}"#).unwrap_err();
        assert!(e.to_string().contains("job.window"), "{e}");
        let e = parse_config("{\n  \"system\": \n}").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn piecewise_coefficients() {
        let spec = r#"{"interval": [0, 2], "p": 1, "q": 0, "breaks": [0, 1],
            "Delta": [[[[1], [2, 1]], 0], [0, 1]]}"#;
        let s: InlineSystem = serde_json::from_str(spec).unwrap();
        let sys = inline_system(&s).unwrap();
        assert_eq!(sys.delta_at(0.5)[(0, 0)].re, 1.0);
        assert_eq!(sys.delta_at(1.5)[(0, 0)].re, 2.5);
        assert_eq!(sys.delta_at(1.5)[(1, 1)].re, 1.0);
        assert_eq!(sys.breakpoints(), &[1.0]);
    }

    #[test]
    fn polynomial_tau_degree_limit() {
        let m = vec![vec![Cx::Real(1.0)]];
        let p = PolynomialTau { c0: vec![m.clone(); 6], c1: vec![m], conjugate: false };
        assert!(polynomial_tau(&p).is_err());
    }
}
