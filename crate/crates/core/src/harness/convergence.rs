//! Error-versus-parameter tables with a fitted log-log rate.

use std::str::FromStr;

use serde::Serialize;

use crate::fields::builtin_field;
use crate::linalg::Vector;
use crate::model::build_model;
use crate::perturbation::check_feps_convergence;
use crate::sde::{closure_consistency, pt_step_difference, SdeParams};
use crate::{Error, Result};

use super::config::Config;

/// Which error is tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    /// `sup|𝓕_εφ - 𝓕φ|` over the sup sample, against `ε`.
    Feps,
    /// Grid distance between `R(λ,N_ε)f` and the Monte Carlo `R(λ,N)f`,
    /// against `ε`.
    ResolventEps,
    /// `|E φ(X^{dt}(t)) - E φ(X^{2dt}(t))|` on coupled paths, against `dt`.
    SdeDt,
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feps" => Ok(Study::Feps),
            "resolvent-eps" => Ok(Study::ResolventEps),
            "sde-dt" => Ok(Study::SdeDt),
            other => Err(Error::InvalidArgument(format!(
                "unknown study '{other}' (expected feps, resolvent-eps or sde-dt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub study: Study,
    pub parameter: String,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Statistical resolution of each error (zero for deterministic studies).
    pub noise: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln value`; `None` when an
    /// error is zero.
    pub fitted_rate: Option<f64>,
    pub notes: Vec<String>,
}

/// Least-squares slope of `ln y` against `ln x`; `None` unless every entry is
/// positive and there are at least two distinct abscissae.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn strictly_monotone(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0]) || values.windows(2).all(|w| w[1] < w[0])
}

/// Indices of `values` sorted by decreasing value.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

/// Tabulates the error of `study` at each of `values` (at least three,
/// strictly monotone, positive).
pub fn convergence_study(cfg: &Config, study: Study, values: &[f64]) -> Result<ConvergenceTable> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument("a convergence study needs at least three values".into()));
    }
    if !strictly_monotone(values) || values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("values must be positive and strictly monotone".into()));
    }
    let model = build_model(&cfg.model)?;
    let field = builtin_field(&cfg.drift, model.dim)?;
    let phi = cfg.phi.build(model.dim)?;
    let mut notes = Vec::new();
    let (parameter, errors, noise) = match study {
        Study::Feps => {
            let mut errors = Vec::with_capacity(values.len());
            for &eps in values {
                let r = check_feps_convergence(&phi, &field, &[eps], &cfg.sup_sampler)?;
                errors.push(r[0].lhs);
            }
            notes.push(format!(
                "sup over {} points of radius {}",
                cfg.sup_sampler.count, cfg.sup_sampler.radius
            ));
            ("eps", errors, vec![0.0; values.len()])
        }
        Study::ResolventEps => {
            let order = descending_order(values);
            let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
            let params = SdeParams {
                n_paths: cfg.suite.closure_paths.unwrap_or(cfg.sde.n_paths),
                ..cfg.sde.clone()
            };
            let study = closure_consistency(
                &model,
                &field,
                &phi,
                cfg.suite.closure_lambda,
                &sorted,
                &cfg.suite.closure_grid,
                &params,
                &cfg.solver,
            )?;
            let bar = study.oracle.iter().map(|o| o.error_bar).fold(0.0, f64::max);
            let mut errors = vec![0.0; values.len()];
            let mut noise = vec![0.0; values.len()];
            for (k, &i) in order.iter().enumerate() {
                errors[i] = study.distances[k];
                noise[i] = bar + study.solver_errors[k];
            }
            notes.push(format!(
                "lambda = {}, Monte Carlo oracle error bar {:e} with {} paths, dt = {}",
                cfg.suite.closure_lambda, bar, params.n_paths, params.dt
            ));
            ("eps", errors, noise)
        }
        Study::SdeDt => {
            let mut x = Vector::zeros(model.dim);
            x[0] = cfg.suite.sde_x;
            let mut errors = Vec::with_capacity(values.len());
            let mut noise = Vec::with_capacity(values.len());
            for &dt in values {
                let params = SdeParams { dt, ..cfg.sde.clone() };
                let (mean, se) = pt_step_difference(&model, &field, &phi, cfg.suite.sde_t, &x, &params)?;
                errors.push(mean.abs());
                noise.push(3.0 * se);
            }
            notes.push(format!(
                "coupled dt/2dt paths at t = {}, {} paths",
                cfg.suite.sde_t, cfg.sde.n_paths
            ));
            ("dt", errors, noise)
        }
    };
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Quadrature("non-finite error in convergence study".into()));
    }
    let tiny = errors.iter().map(|e| e.abs()).fold(0.0, f64::max) * 1e-12;
    let degenerate = errors.iter().all(|e| *e <= tiny.max(1e-300));
    let fitted_rate = if degenerate {
        notes.push("all errors are zero to rounding; rate undefined".into());
        None
    } else if errors.iter().any(|e| *e <= 0.0) {
        notes.push("some errors are exactly zero; rate undefined".into());
        None
    } else {
        log_log_slope(values, &errors)
    };
    let floor: Vec<String> = values
        .iter()
        .zip(errors.iter().zip(&noise))
        .filter(|(_, (e, n))| **n > 0.0 && **e <= **n)
        .map(|(v, _)| v.to_string())
        .collect();
    if !floor.is_empty() {
        notes.push(format!("errors at or below the noise level for {}", floor.join(", ")));
    }
    Ok(ConvergenceTable {
        study,
        parameter: parameter.into(),
        values: values.to_vec(),
        errors,
        noise,
        fitted_rate,
        notes,
    })
}

impl ConvergenceTable {
    /// CSV with columns `parameter,value,error,noise,fitted_rate`.
    pub fn to_csv(&self) -> Result<String> {
        use super::emit::format_float;
        let mut w = csv::Writer::from_writer(Vec::new());
        let rate = self.fitted_rate.map(format_float).unwrap_or_default();
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["parameter", "value", "error", "noise", "fitted_rate"]).map_err(err)?;
        for i in 0..self.values.len() {
            w.write_record([
                self.parameter.clone(),
                format_float(self.values[i]),
                format_float(self.errors[i]),
                format_float(self.noise[i]),
                rate.clone(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV of UTF-8 strings"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::DriftConfig;

    #[test]
    fn slope_of_power_law() {
        let x = [0.4, 0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!((log_log_slope(&x, &y).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(log_log_slope(&x, &[1.0, 0.0, 1.0, 1.0]), None);
        assert_eq!(log_log_slope(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn rejects_short_or_unsorted_values() {
        let cfg = Config::default();
        assert!(convergence_study(&cfg, Study::Feps, &[0.1, 0.2]).is_err());
        assert!(convergence_study(&cfg, Study::Feps, &[0.1, 0.3, 0.2]).is_err());
        assert!(convergence_study(&cfg, Study::Feps, &[0.1, -0.2, -0.3]).is_err());
        assert!("nope".parse::<Study>().is_err());
    }

    #[test]
    fn feps_rate_is_linear() {
        let mut cfg = Config::default();
        cfg.sup_sampler.count = 256;
        let t = convergence_study(&cfg, Study::Feps, &[0.4, 0.2, 0.1, 0.05, 0.025]).unwrap();
        let rate = t.fitted_rate.unwrap();
        assert!((rate - 1.0).abs() <= 0.15, "{rate} {:?}", t.errors);
    }

    #[test]
    fn feps_without_drift_is_degenerate() {
        let mut cfg = Config::default();
        cfg.drift = DriftConfig::named("zero", 1.0);
        cfg.sup_sampler.count = 64;
        let t = convergence_study(&cfg, Study::Feps, &[0.1, 0.05, 0.025]).unwrap();
        assert!(t.errors.iter().all(|e| *e == 0.0));
        assert_eq!(t.fitted_rate, None);
        assert!(!t.notes.is_empty());
        assert!(t.to_csv().unwrap().lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn sde_dt_without_drift_is_at_noise_floor() {
        let mut cfg = Config::default();
        cfg.drift = DriftConfig::named("zero", 1.0);
        cfg.sde.n_paths = 2000;
        let t = convergence_study(&cfg, Study::SdeDt, &[0.05, 0.025, 0.0125]).unwrap();
        assert!(t.errors.iter().all(|e| *e < 1e-12), "{:?}", t.errors);
    }

    #[test]
    fn sde_dt_with_drift_decreases() {
        let mut cfg = Config::default();
        cfg.sde.n_paths = 20_000;
        let t = convergence_study(&cfg, Study::SdeDt, &[0.125, 0.0625, 0.03125]).unwrap();
        assert!(t.errors[0] > t.noise[0], "{t:?}");
        assert!(t.errors[2] < t.errors[0], "{t:?}");
    }
}
