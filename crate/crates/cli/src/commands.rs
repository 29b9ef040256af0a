use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use symm_spectra::boundary::validate_nevanlinna_pair;
use symm_spectra::linalg::{max_abs, to_pairs, CMat, CVec};
use symm_spectra::oracle::ExampleSystem;
use symm_spectra::selftest;
use symm_spectra::spectral::{
    fourier_transform, inverse_transform, parseval_defect, stieltjes_invert, ParsevalReport, SpectralMeasure,
    StieltjesOptions, TransformResult,
};
use symm_spectra::sysdef::{check_definiteness, SymmetricSystem, WeightedFunction};
use symm_spectra::weyl::l2delta_norm_sq;
use symm_spectra::Tolerances;

use crate::config::{
    build_frame_a_spec, build_frame_b_spec, build_system, build_tau, load_config, tolerances, Direction, LoadedConfig,
    Registry, Setup,
};
use crate::error::{CliError, CliResult, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION};
use crate::io::{pair, parse_lambda_grid, read_samples, to_json, vector_csv, Header};

/// Flags shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub json: bool,
    pub window: Option<(f64, f64)>,
    pub lambda_grid: Option<String>,
    pub eps: Option<Vec<f64>>,
}

/// What a command produced: the main document, extra files, a note for stderr and the exit code.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub text: String,
    pub files: Vec<(PathBuf, String)>,
    pub note: Option<String>,
    pub exit: i32,
}

impl Output {
    fn doc(text: String) -> Self {
        Output { text, ..Default::default() }
    }
}

fn config(opts: &Options) -> CliResult<LoadedConfig> {
    let path = opts.config.as_ref().ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    load_config(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn sample_grid(sys: &SymmetricSystem, span: f64, n: usize) -> Vec<f64> {
    let hi = if sys.b.is_finite() { sys.b } else { sys.a + span };
    let mut g: Vec<f64> = (0..n).map(|k| sys.a + (hi - sys.a) * k as f64 / (n - 1) as f64).collect();
    for &bp in sys.breakpoints() {
        g.extend([bp - 1e-9, bp]);
    }
    g.retain(|&t| t >= sys.a && t <= hi);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

const NEVANLINNA_SAMPLES: [(f64, f64); 5] = [(0.0, 1.0), (1.0, 0.5), (-2.0, 2.0), (0.3, -1.0), (2.5, -0.25)];

pub fn cmd_validate(opts: &Options) -> CliResult<Output> {
    let loaded = config(opts)?;
    let cfg = &loaded.config;
    let tol = tolerances(cfg);
    let mut checks = Vec::new();
    let mut push = |name, r: CliResult<String>| {
        let passed = r.is_ok();
        let detail = r.unwrap_or_else(|e| e.to_string());
        checks.push(Check { name, passed, detail });
        passed
    };
    let built = build_system(&cfg.system);
    let sys_ok = push("system", built.as_ref().map(|(s, _)| format!("{} on [{}, {}), n = {}", s.name, s.a, s.b, s.n())).map_err(clone_err));
    if let (true, Ok((sys, reg))) = (sys_ok, built) {
        let samples = sample_grid(&sys, 20.0, 401);
        push("coefficients", sys.validate_structure(&samples, &tol).map(|_| format!("{} samples", samples.len())).map_err(Into::into));
        if sys.regular_b {
            push("integrability", sys.check_integrability().map(|(ib, id)| format!("int |B| = {ib:.3e}, int |Delta| = {id:.3e}")).map_err(Into::into));
        }
        let lams = [Complex64::new(0.0, 1.0), Complex64::new(0.5, 0.7)];
        let dgrid = sample_grid(&sys, 5.0, 41);
        let dgrid: Vec<f64> = dgrid.into_iter().filter(|&t| t <= sys.a + 5.0).collect();
        push(
            "definiteness",
            check_definiteness(&sys, &lams, &dgrid, &tol).map_err(CliError::from).and_then(|r| {
                let worst = r.ratios.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
                if r.definite {
                    Ok(format!("smallest singular value ratio {worst:.3e} ({})", r.note))
                } else {
                    Err(CliError::Validation(format!("singular value ratio {worst:.3e} below {:.1e}", tol.tau_def)))
                }
            }),
        );
        push("frame_a", build_frame_a_spec(cfg.frame_a.as_ref(), &sys, reg.as_ref(), &tol).map(|f| format!("J-unitarity defect {:.3e}", f.residuals().j_unitary)));
        let fb = build_frame_b_spec(cfg.frame_b.as_ref(), &sys, reg.as_ref(), &tol);
        let fb_ok = push("frame_b", fb.as_ref().map(|f| format!("dim H_b = {}", f.dim_hb)).map_err(clone_err));
        if let (true, Ok(fb)) = (fb_ok, fb) {
            let lams: Vec<Complex64> = NEVANLINNA_SAMPLES.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
            push(
                "tau",
                build_tau(cfg.tau.as_ref(), fb.dim_hb, &tol).and_then(|tau| {
                    let r = validate_nevanlinna_pair(&tau, &lams, &tol);
                    if r.valid {
                        Ok(format!("{} ({})", tau.label, if r.selfadjoint { "self-adjoint" } else { "Nevanlinna pair" }))
                    } else {
                        Err(CliError::Validation(format!("not a Nevanlinna pair: {}", r.failures.join("; "))))
                    }
                }),
            );
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    let text = if opts.json {
        #[derive(Serialize)]
        struct Doc<'a> {
            #[serde(flatten)]
            header: Header<'a>,
            passed: bool,
            checks: &'a [Check],
        }
        to_json(&Doc { header: Header::new("validate", &loaded.hash, &tol), passed, checks: &checks })
    } else {
        let mut s = String::new();
        for c in &checks {
            s.push_str(&format!("{} {:<14} {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        s
    };
    Ok(Output { text, exit: if passed { EXIT_OK } else { EXIT_VALIDATION }, ..Default::default() })
}

fn clone_err(e: &CliError) -> CliError {
    match e {
        CliError::Usage(s) => CliError::Usage(s.clone()),
        CliError::Config(s) => CliError::Config(s.clone()),
        CliError::Validation(s) => CliError::Validation(s.clone()),
        CliError::Numerical(s) => CliError::Numerical(s.clone()),
    }
}

fn lambdas(opts: &Options, setup: &Setup) -> CliResult<Vec<Complex64>> {
    if let Some(spec) = &opts.lambda_grid {
        return parse_lambda_grid(spec);
    }
    if let Some(spec) = &setup.job.lambda_grid {
        return parse_lambda_grid(spec);
    }
    if let Some(l) = &setup.job.lambdas {
        return Ok(l.iter().map(|z| z.value()).collect());
    }
    Err(CliError::Usage("no lambda values: pass --lambda-grid or set job.lambdas".into()))
}

#[derive(Debug, Clone, Serialize)]
struct MRow {
    lambda: [f64; 2],
    m: Option<Vec<Vec<[f64; 2]>>>,
    status: String,
}

pub fn cmd_mfunction(opts: &Options) -> CliResult<Output> {
    let loaded = config(opts)?;
    let setup = Setup::build(&loaded)?;
    let lams = lambdas(opts, &setup)?;
    let p = &setup.problem;
    let rows: Vec<(Complex64, Result<CMat, String>)> =
        lams.par_iter().map(|&l| (l, p.m_value(&setup.tau, l).map_err(|e| e.to_string()))).collect();
    let dim = p.frame_a().decomp().h0();
    let text = if opts.json {
        #[derive(Serialize)]
        struct Doc<'a> {
            #[serde(flatten)]
            header: Header<'a>,
            system: &'a str,
            tau: &'a str,
            dim: usize,
            rows: Vec<MRow>,
        }
        let rows = rows
            .iter()
            .map(|(l, r)| MRow {
                lambda: pair(*l),
                m: r.as_ref().ok().map(to_pairs),
                status: r.as_ref().err().cloned().unwrap_or_else(|| "ok".into()),
            })
            .collect();
        to_json(&Doc { header: Header::new("mfunction", &setup.hash, &setup.tol), system: &p.sys().name, tau: &setup.tau.label, dim, rows })
    } else {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["lambda_re".to_string(), "lambda_im".to_string()];
        for i in 0..dim {
            for k in 0..dim {
                header.push(format!("m_{i}{k}_re"));
                header.push(format!("m_{i}{k}_im"));
            }
        }
        header.push("status".into());
        w.write_record(&header).expect("in-memory csv");
        for (l, r) in &rows {
            let mut rec = vec![l.re.to_string(), l.im.to_string()];
            match r {
                Ok(m) => {
                    for i in 0..dim {
                        for k in 0..dim {
                            rec.push(m[(i, k)].re.to_string());
                            rec.push(m[(i, k)].im.to_string());
                        }
                    }
                    rec.push("ok".into());
                }
                Err(e) => {
                    rec.extend(std::iter::repeat_n(String::new(), 2 * dim * dim));
                    rec.push(e.clone());
                }
            }
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
    };
    let failed = rows.iter().filter(|r| r.1.is_err()).count();
    let note = (failed > 0).then(|| format!("{failed} of {} lambda values could not be evaluated", rows.len()));
    Ok(Output { text, note, ..Default::default() })
}

fn window(opts: &Options, setup: &Setup) -> Option<(f64, f64)> {
    opts.window.or(setup.job.window.map(|[a, b]| (a, b)))
}

fn stieltjes_options(opts: &Options, setup: &Setup) -> StieltjesOptions {
    let mut o = setup.job.stieltjes.clone().unwrap_or_else(|| StieltjesOptions::default().with_eps(setup.tol.eps_schedule.clone()));
    if let Some(e) = &setup.job.eps {
        o.eps_schedule = e.clone();
    }
    if let Some(e) = &opts.eps {
        o.eps_schedule = e.clone();
    }
    o
}

fn compute_measure(opts: &Options, setup: &Setup, win: (f64, f64)) -> CliResult<(SpectralMeasure, StieltjesOptions, String)> {
    let sopts = stieltjes_options(opts, setup);
    let m = setup.problem.m_function(&setup.tau)?;
    let sigma = stieltjes_invert(&m, win, &sopts)?;
    Ok((sigma, sopts, m.provenance.clone()))
}

#[derive(Debug, Clone, Serialize)]
struct Tail {
    /// ‖Σ′‖ at the first and last density samples.
    edge_density: [f64; 2],
    /// Atoms within a tenth of the window of either end.
    edge_atoms: usize,
    candidates: Vec<f64>,
}

fn tail(sigma: &SpectralMeasure) -> Tail {
    let (lo, hi) = sigma.window;
    let band = 0.1 * (hi - lo);
    Tail {
        edge_density: [
            sigma.density_values.first().map_or(0.0, max_abs),
            sigma.density_values.last().map_or(0.0, max_abs),
        ],
        edge_atoms: sigma.atoms.iter().filter(|a| a.s < lo + band || a.s > hi - band).count(),
        candidates: sigma.candidates.clone(),
    }
}

fn density_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "spectral".into());
    out.with_file_name(format!("{stem}.density.csv"))
}

pub fn cmd_spectral(opts: &Options) -> CliResult<Output> {
    let loaded = config(opts)?;
    let setup = Setup::build(&loaded)?;
    let win = window(opts, &setup).ok_or_else(|| CliError::Usage("no window: pass --window a,b or set job.window".into()))?;
    let (sigma, sopts, provenance) = compute_measure(opts, &setup, win)?;
    #[derive(Serialize)]
    struct Doc<'a> {
        #[serde(flatten)]
        header: Header<'a>,
        system: &'a str,
        tau: &'a str,
        m_provenance: &'a str,
        options: &'a StieltjesOptions,
        tail: Tail,
        measure: &'a SpectralMeasure,
    }
    let text = to_json(&Doc {
        header: Header::new("spectral", &setup.hash, &setup.tol),
        system: &setup.problem.sys().name,
        tau: &setup.tau.label,
        m_provenance: &provenance,
        options: &sopts,
        tail: tail(&sigma),
        measure: &sigma,
    });
    let mut out = Output::doc(text);
    if let Some(path) = &opts.out {
        out.files.push((density_path(path), sigma.density_csv()));
    }
    Ok(out)
}

fn load_measure(path: &Path) -> CliResult<SpectralMeasure> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: line {}: {e}", path.display(), e.line())))?;
    let inner = value.get("measure").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn measure_for(opts: &Options, setup: &Setup) -> CliResult<Option<SpectralMeasure>> {
    if let Some(rel) = &setup.job.measure {
        return load_measure(&setup.resolve(rel)).map(Some);
    }
    match window(opts, setup) {
        Some(w) => compute_measure(opts, setup, w).map(|r| Some(r.0)),
        None => Ok(None),
    }
}

fn input_samples(setup: &Setup) -> CliResult<(Vec<f64>, Vec<CMat>)> {
    let rel = setup.job.input.as_ref().ok_or_else(|| CliError::Usage("job.input (a CSV of samples) is required".into()))?;
    read_samples(&setup.resolve(rel))
}

fn function_on_interval(setup: &Setup, grid: Vec<f64>, values: Vec<CMat>) -> CliResult<WeightedFunction> {
    let sys = setup.problem.sys();
    if let (Some(&lo), Some(&hi)) = (grid.first(), grid.last()) {
        if lo < sys.a || hi > sys.b {
            return Err(CliError::Validation(format!("samples on [{lo}, {hi}] reach outside the interval [{}, {})", sys.a, sys.b)));
        }
    }
    if values.first().is_some_and(|v| v.nrows() != sys.n()) {
        return Err(CliError::Validation(format!("samples have {} components, the system has {}", values[0].nrows(), sys.n())));
    }
    Ok(WeightedFunction::new(grid, values)?)
}

/// Difference between the generic transform and the closed-form one of the example.
fn example_check(ex: &ExampleSystem, f: &WeightedFunction, fhat: &TransformResult) -> CliResult<f64> {
    let r = ExampleSystem::rotated_basis();
    let comps = WeightedFunction::new(f.grid.clone(), f.values.iter().map(|v| r.adjoint() * v).collect())?;
    let closed = ex.transform(&comps, &fhat.s_grid)?;
    Ok(closed.values.iter().zip(&fhat.values).map(|(a, b)| (a - b).camax()).fold(0.0, f64::max))
}

pub fn cmd_transform(opts: &Options) -> CliResult<Output> {
    let loaded = config(opts)?;
    let setup = Setup::build(&loaded)?;
    let direction = setup.job.direction.unwrap_or(Direction::Forward);
    let (grid, values) = input_samples(&setup)?;
    let sigma = measure_for(opts, &setup)?;
    let p = &setup.problem;
    #[derive(Serialize, Default)]
    struct Footer {
        parseval: Option<ParsevalReport>,
        closed_form_difference: Option<f64>,
    }
    let mut footer = Footer::default();
    let (x_name, name, out_grid, out_values): (&str, &str, Vec<f64>, Vec<Vec<Complex64>>) = match direction {
        Direction::Forward => {
            let f = function_on_interval(&setup, grid, values)?;
            let s_grid = match (&setup.job.s_grid, &sigma) {
                (Some(s), _) => s.points(),
                (None, Some(sig)) => sig.sample_grid(),
                (None, None) => return Err(CliError::Usage("set job.s_grid, job.measure or a window".into())),
            };
            let fhat = fourier_transform(p, &f, &s_grid)?;
            if let Some(sig) = &sigma {
                footer.parseval = Some(parseval_defect(p, &f, sig)?);
            }
            if let Some(Registry::Example(ex)) = &setup.registry {
                if p.frame_a().utilde() == &symm_spectra::linalg::eye(3) {
                    footer.closed_form_difference = Some(example_check(ex, &f, &fhat)?);
                }
            }
            ("s", "fhat", fhat.s_grid, fhat.values.iter().map(|v| v.iter().copied().collect()).collect())
        }
        Direction::Inverse => {
            let sig = sigma.ok_or_else(|| CliError::Usage("the inverse transform needs job.measure or a window".into()))?;
            let h0 = p.frame_a().decomp().h0();
            if values.first().is_some_and(|v| v.nrows() != h0) {
                return Err(CliError::Validation(format!("samples have {} components, the transform has {h0}", values[0].nrows())));
            }
            let g = TransformResult { s_grid: grid, values: values.iter().map(|v| CVec::from_iterator(v.nrows(), v.iter().copied())).collect() };
            let t_grid = setup.job.t_grid.ok_or_else(|| CliError::Usage("the inverse transform needs job.t_grid".into()))?.points();
            let f = inverse_transform(p, &g, &sig, &t_grid)?;
            ("t", "f", f.grid, f.values.iter().map(|v| v.iter().copied().collect()).collect())
        }
    };
    if opts.json {
        #[derive(Serialize)]
        struct Doc<'a> {
            #[serde(flatten)]
            header: Header<'a>,
            direction: Direction,
            grid: &'a [f64],
            values: Vec<Vec<[f64; 2]>>,
            footer: &'a Footer,
        }
        let vals = out_values.iter().map(|v| v.iter().map(|&z| pair(z)).collect()).collect();
        Ok(Output::doc(to_json(&Doc { header: Header::new("transform", &setup.hash, &setup.tol), direction, grid: &out_grid, values: vals, footer: &footer })))
    } else {
        let mut out = Output::doc(vector_csv(x_name, name, &out_grid, &out_values));
        out.note = Some(format!("config {} footer {}", setup.hash, serde_json::to_string(&footer).expect("serializes")));
        Ok(out)
    }
}

pub fn cmd_resolvent(opts: &Options) -> CliResult<Output> {
    let loaded = config(opts)?;
    let setup = Setup::build(&loaded)?;
    let lambda = match setup.job.lambda {
        Some(z) => z.value(),
        None => *lambdas(opts, &setup)?.first().ok_or_else(|| CliError::Usage("empty lambda grid".into()))?,
    };
    let (grid, values) = input_samples(&setup)?;
    let f = function_on_interval(&setup, grid, values)?;
    let p = &setup.problem;
    let out = p.apply_resolvent(&setup.tau, &f, lambda)?;
    let norm = l2delta_norm_sq(p.sys(), &f)?.sqrt();
    let ode = p.resolvent_residual(&out, &f).into_iter().fold(0.0, f64::max);
    let bc = p.resolvent_boundary_residual(&setup.tau, &out)?;
    #[derive(Serialize)]
    struct Residuals {
        ode_max: f64,
        f_norm: f64,
        gamma1_a: f64,
        hat: f64,
        tau: f64,
    }
    let res = Residuals { ode_max: ode, f_norm: norm, gamma1_a: bc.gamma1a, hat: bc.hat, tau: bc.tau };
    let cols: Vec<Vec<Complex64>> = out.y.values.iter().map(|v| v.iter().copied().collect()).collect();
    if opts.json {
        #[derive(Serialize)]
        struct Doc<'a> {
            #[serde(flatten)]
            header: Header<'a>,
            lambda: [f64; 2],
            grid: &'a [f64],
            y: Vec<Vec<[f64; 2]>>,
            residuals: Residuals,
        }
        let y = cols.iter().map(|v| v.iter().map(|&z| pair(z)).collect()).collect();
        Ok(Output::doc(to_json(&Doc { header: Header::new("resolvent", &setup.hash, &setup.tol), lambda: pair(lambda), grid: &out.y.grid, y, residuals: res })))
    } else {
        let mut o = Output::doc(vector_csv("t", "y", &out.y.grid, &cols));
        o.note = Some(format!("config {} residuals {}", setup.hash, serde_json::to_string(&res).expect("serializes")));
        Ok(o)
    }
}

pub fn cmd_selftest(opts: &Options) -> CliResult<Output> {
    let tol = Tolerances::from_env();
    let results = selftest::run_all(&tol);
    let passed = results.iter().all(|r| r.passed);
    let text = if opts.json {
        #[derive(Serialize)]
        struct Doc<'a> {
            command: &'a str,
            version: &'a str,
            tolerances: &'a Tolerances,
            passed: bool,
            results: &'a [selftest::CriterionResult],
        }
        to_json(&Doc { command: "selftest", version: env!("CARGO_PKG_VERSION"), tolerances: &tol, passed, results: &results })
    } else {
        let mut s: String = results.iter().map(|r| r.line() + "\n").collect();
        let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
        if failed.is_empty() {
            s.push_str("all criteria passed\n");
        } else {
            s.push_str(&format!("failed criteria: {}\n", failed.join(", ")));
        }
        s
    };
    Ok(Output { text, exit: if passed { EXIT_OK } else { EXIT_NUMERICAL }, ..Default::default() })
}
