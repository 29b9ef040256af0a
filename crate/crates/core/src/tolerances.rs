use serde::{Deserialize, Serialize};

/// Numerical tolerances shared by all modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Integrator absolute/relative tolerance.
    pub tol_ode: f64,
    /// Identity checks (symmetry, Herglotz, kernel identities).
    pub tol_id: f64,
    /// Hermiticity, relative to ‖B(t)‖.
    pub tau_herm: f64,
    /// Definiteness threshold, relative.
    pub tau_def: f64,
    /// Absolute floor for quadrature-based checks.
    pub tau_quad: f64,
    pub tau_frame: f64,
    /// Principal-angle tolerance for subspace comparison.
    pub tau_sub: f64,
    /// Boundary-form factorization residual.
    pub tau_form: f64,
    /// Admissibility limits.
    pub tau_lim: f64,
    /// Largest accepted (equilibrated) condition number of a constraint solve.
    pub kappa_max: f64,
    /// Eigenvalue ratio separating square-integrable from growing solutions.
    pub gap_min: f64,
    /// Convergence tolerance of boundary limits over the truncation schedule.
    pub limit_tol: f64,
    /// Cauchy tolerance for m over the truncation schedule.
    pub m_cauchy: f64,
    /// Default ε schedule for Stieltjes inversion.
    pub eps_schedule: Vec<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_ode: 1e-10,
            tol_id: 1e-8,
            tau_herm: 1e-12,
            tau_def: 1e-8,
            tau_quad: 1e-10,
            tau_frame: 1e-10,
            tau_sub: 1e-8,
            tau_form: 1e-6,
            tau_lim: 1e-6,
            kappa_max: 1e10,
            gap_min: 1e3,
            limit_tol: 1e-8,
            m_cauchy: 1e-7,
            eps_schedule: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

pub const ENV_TOL_ODE: &str = "SYMM_SPECTRA_TOL_ODE";
pub const ENV_TOL_ID: &str = "SYMM_SPECTRA_TOL_ID";
pub const ENV_EPS_SCHEDULE: &str = "SYMM_SPECTRA_EPS_SCHEDULE";

impl Tolerances {
    /// Defaults overridden by the environment variables, if set and parseable.
    pub fn from_env() -> Self {
        let mut t = Tolerances::default();
        if let Some(v) = env_f64(ENV_TOL_ODE) {
            t.tol_ode = v;
        }
        if let Some(v) = env_f64(ENV_TOL_ID) {
            t.tol_id = v;
        }
        if let Ok(s) = std::env::var(ENV_EPS_SCHEDULE) {
            let parsed: Option<Vec<f64>> = s.split(',').map(|x| x.trim().parse().ok()).collect();
            if let Some(v) = parsed.filter(|v| !v.is_empty()) {
                t.eps_schedule = v;
            }
        }
        t
    }
}

fn env_f64(key: &str) -> Option<f64> {
    std::env::var(key)
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v > 0.0)
}
