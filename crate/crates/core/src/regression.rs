//! GLM-style regression of the household SAR on covariates.
//!
//! Each household gets its own attack rate `sar_i = link⁻¹(x_i · beta)` and
//! contributes its chain binomial probability to the likelihood. There is no
//! dispersion parameter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{Covariate, HouseholdObservation, Interval, SarLikelihood, ScenarioCache};
use crate::model::{self, HouseholdConfig, Scenario};
use crate::numerics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Logit,
    Log,
    Identity,
}

impl LinkFunction {
    pub fn name(self) -> &'static str {
        match self {
            LinkFunction::Logit => "logit",
            LinkFunction::Log => "log",
            LinkFunction::Identity => "identity",
        }
    }

    /// Maps a probability onto the linear-predictor scale.
    pub fn apply(self, p: f64) -> f64 {
        match self {
            LinkFunction::Logit => (p / (1.0 - p)).ln(),
            LinkFunction::Log => p.ln(),
            LinkFunction::Identity => p,
        }
    }

    /// Maps a linear predictor back to the probability scale. Log and
    /// identity links can leave `[0, 1]`; see [`LinkFunction::inverse_checked`].
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            LinkFunction::Log => eta.exp(),
            LinkFunction::Identity => eta,
        }
    }

    /// `None` when the inverse falls outside the unit interval.
    pub fn inverse_checked(self, eta: f64) -> Option<f64> {
        let p = self.inverse(eta);
        (0.0..=1.0).contains(&p).then_some(p)
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(LinkFunction::Logit),
            "log" => Ok(LinkFunction::Log),
            "identity" => Ok(LinkFunction::Identity),
            other => Err(Error::domain(format!("unknown link function `{other}`"))),
        }
    }
}

/// What a design-matrix column encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Numeric { name: String },
    /// Indicator for `covariate == level`; the lexicographically first level
    /// is the reference and has no column.
    Indicator { covariate: String, level: String },
}

impl Term {
    pub fn label(&self) -> String {
        match self {
            Term::Intercept => "(intercept)".to_string(),
            Term::Numeric { name } => name.clone(),
            Term::Indicator { covariate, level } => format!("{covariate}={level}"),
        }
    }

    fn value(&self, id: &str, covariates: &BTreeMap<String, Covariate>) -> Result<f64> {
        let lookup = |name: &str| {
            covariates.get(name).ok_or_else(|| Error::MissingCovariate {
                household: id.to_string(),
                field: name.to_string(),
            })
        };
        match self {
            Term::Intercept => Ok(1.0),
            Term::Numeric { name } => match lookup(name)? {
                Covariate::Numeric(v) if v.is_finite() => Ok(*v),
                other => Err(Error::domain(format!(
                    "household {id}: covariate `{name}` = {other} is not a finite number"
                ))),
            },
            Term::Indicator { covariate, level } => {
                Ok(if lookup(covariate)?.to_string() == *level { 1.0 } else { 0.0 })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub terms: Vec<Term>,
    pub rows: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn column_names(&self) -> Vec<String> {
        self.terms.iter().map(Term::label).collect()
    }

    pub fn n_columns(&self) -> usize {
        self.terms.len()
    }
}

/// Builds the `n x (K + 1)` design matrix with a leading intercept column.
pub fn design_matrix(data: &[HouseholdObservation], predictors: &[String]) -> Result<DesignMatrix> {
    design_matrix_with_reference(data, predictors, &BTreeMap::new())
}

/// [`design_matrix`] with chosen reference levels for categorical
/// predictors, keyed by covariate name. Unlisted covariates use their
/// lexicographically first level.
pub fn design_matrix_with_reference(
    data: &[HouseholdObservation],
    predictors: &[String],
    reference: &BTreeMap<String, String>,
) -> Result<DesignMatrix> {
    for name in reference.keys() {
        if !predictors.contains(name) {
            return Err(Error::domain(format!("reference level given for `{name}`, which is not a predictor")));
        }
    }
    let mut seen = BTreeSet::new();
    let mut terms = vec![Term::Intercept];
    for name in predictors {
        if !seen.insert(name.as_str()) {
            return Err(Error::SingularModel(format!("predictor `{name}` listed twice")));
        }
        let mut numeric = true;
        let mut levels = BTreeSet::new();
        for obs in data {
            let value = obs.covariates.get(name).ok_or_else(|| Error::MissingCovariate {
                household: obs.id.clone(),
                field: name.clone(),
            })?;
            if let Covariate::Numeric(v) = value {
                if !v.is_finite() {
                    return Err(Error::domain(format!(
                        "household {}: covariate `{name}` is not finite",
                        obs.id
                    )));
                }
            } else {
                numeric = false;
            }
            levels.insert(value.to_string());
        }
        if numeric && !reference.contains_key(name) {
            terms.push(Term::Numeric { name: name.clone() });
        } else {
            let base = match reference.get(name) {
                Some(level) if levels.contains(level) => level.clone(),
                Some(level) => {
                    return Err(Error::domain(format!("covariate `{name}` has no level `{level}`")));
                }
                None => levels.first().cloned().unwrap_or_default(),
            };
            terms.extend(
                levels
                    .into_iter()
                    .filter(|level| *level != base)
                    .map(|level| Term::Indicator {
                        covariate: name.clone(),
                        level,
                    }),
            );
        }
    }
    let rows = data
        .iter()
        .map(|obs| terms.iter().map(|t| t.value(&obs.id, &obs.covariates)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(DesignMatrix { terms, rows })
}

fn check_identifiable(x: &DesignMatrix) -> Result<()> {
    let k = x.n_columns();
    for (j, term) in x.terms.iter().enumerate() {
        if x.rows.iter().all(|r| r[j] == 0.0) {
            return Err(Error::SingularModel(format!("column `{}` is identically zero", term.label())));
        }
    }
    let mut gram = vec![vec![0.0; k]; k];
    for row in &x.rows {
        for i in 0..k {
            for j in 0..k {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    if numerics::invert(&gram).is_none() {
        return Err(Error::SingularModel("design matrix columns are linearly dependent".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct GlmCell {
    row: Vec<f64>,
    s0: u32,
    i0: u32,
    weight: f64,
    scenarios: Arc<Vec<Scenario>>,
}

/// Household data and design prepared for repeated likelihood evaluation.
#[derive(Debug, Clone)]
struct GlmLikelihood {
    cells: Vec<GlmCell>,
    link: LinkFunction,
}

impl GlmLikelihood {
    fn new(data: &[HouseholdObservation], x: &DesignMatrix, link: LinkFunction) -> Result<Self> {
        if x.rows.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: data.len(),
                found: x.rows.len(),
            });
        }
        let mut cache = ScenarioCache::default();
        let mut cells: Vec<GlmCell> = Vec::new();
        let mut index: BTreeMap<(Vec<u64>, u32, u32, u32, u32), usize> = BTreeMap::new();
        for (obs, row) in data.iter().zip(&x.rows) {
            obs.validate()?;
            if row.len() != x.n_columns() {
                return Err(Error::DimensionMismatch {
                    expected: x.n_columns(),
                    found: row.len(),
                });
            }
            let d = obs.effective_generations();
            let key = (
                row.iter().map(|v| v.to_bits()).collect(),
                obs.s0,
                obs.i0,
                obs.infected,
                d,
            );
            match index.get(&key) {
                Some(&i) => cells[i].weight += 1.0,
                None => {
                    index.insert(key, cells.len());
                    cells.push(GlmCell {
                        row: row.clone(),
                        s0: obs.s0,
                        i0: obs.i0,
                        weight: 1.0,
                        scenarios: cache.get(obs.infected, d)?,
                    });
                }
            }
        }
        Ok(Self { cells, link })
    }

    fn log_likelihood(&self, beta: &[f64]) -> f64 {
        let mut total = 0.0;
        for cell in &self.cells {
            let eta: f64 = cell.row.iter().zip(beta).map(|(x, b)| x * b).sum();
            let Some(sar) = self.link.inverse_checked(eta) else {
                return f64::NEG_INFINITY;
            };
            let config = HouseholdConfig {
                s0: cell.s0,
                i0: cell.i0,
                sar,
            };
            let p = model::pmf_from_scenarios(&cell.scenarios, &config);
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += cell.weight * p.ln();
        }
        total
    }
}

/// Log-likelihood of the regression model at coefficients `beta`.
/// `-inf` when any household's attack rate leaves `[0, 1]`.
pub fn glm_log_likelihood(
    data: &[HouseholdObservation],
    x: &DesignMatrix,
    beta: &[f64],
    link: LinkFunction,
) -> Result<f64> {
    if beta.len() != x.n_columns() {
        return Err(Error::DimensionMismatch {
            expected: x.n_columns(),
            found: beta.len(),
        });
    }
    Ok(GlmLikelihood::new(data, x, link)?.log_likelihood(beta))
}

/// Fitted regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub link: LinkFunction,
    pub coefficients: Vec<f64>,
    /// Inverse observed information; `None` when it could not be computed.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub predictor_names: Vec<String>,
    pub terms: Vec<Term>,
}

impl GlmFit {
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.len()).map(|i| c[i][i].sqrt()).collect())
    }

    /// Per-coefficient normal-approximation intervals.
    pub fn normal_intervals(&self, level: f64) -> Result<Vec<Interval>> {
        let se = self
            .std_errors()
            .ok_or_else(|| Error::Unavailable("coefficient covariance is not available".into()))?;
        let z = numerics::normal_quantile(0.5 * (1.0 + level))?;
        Ok(self
            .coefficients
            .iter()
            .zip(se)
            .map(|(b, s)| Interval {
                lower: b - z * s,
                upper: b + z * s,
            })
            .collect())
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.predictor_names
            .iter()
            .position(|n| n == label)
            .map(|i| self.coefficients[i])
    }
}

const GLM_TOL: f64 = 1e-10;
const GLM_MAX_ITER_PER_PARAM: usize = 4000;

/// Maximum-likelihood fit of the regression model.
pub fn fit_glm(data: &[HouseholdObservation], predictors: &[String], link: LinkFunction) -> Result<GlmFit> {
    fit_glm_with_reference(data, predictors, link, &BTreeMap::new())
}

/// [`fit_glm`] with chosen reference levels; see [`design_matrix_with_reference`].
pub fn fit_glm_with_reference(
    data: &[HouseholdObservation],
    predictors: &[String],
    link: LinkFunction,
    reference: &BTreeMap<String, String>,
) -> Result<GlmFit> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let x = design_matrix_with_reference(data, predictors, reference)?;
    check_identifiable(&x)?;
    let lik = GlmLikelihood::new(data, &x, link)?;

    let pooled = SarLikelihood::new(data)?.fit_point()?.sar_hat.clamp(0.01, 0.99);
    let mut start = vec![0.0; x.n_columns()];
    start[0] = link.apply(pooled);

    let nll = |b: &[f64]| {
        let v = -lik.log_likelihood(b);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let opt = numerics::minimize_multivariate(nll, &start, GLM_TOL, GLM_MAX_ITER_PER_PARAM * x.n_columns())?;
    if !opt.converged {
        log::warn!("{link}-link fit did not converge after {} iterations", opt.iterations);
    }

    let covariance = numerics::hessian_fd(|b| -lik.log_likelihood(b), &opt.argmin)
        .ok()
        .and_then(|h| numerics::invert(&h))
        .filter(|c| (0..c.len()).all(|i| c[i][i] >= 0.0 && c[i][i].is_finite()));

    Ok(GlmFit {
        link,
        loglik: lik.log_likelihood(&opt.argmin),
        coefficients: opt.argmin,
        covariance,
        converged: opt.converged,
        iterations: opt.iterations,
        predictor_names: x.column_names(),
        terms: x.terms,
    })
}

/// Fitted SAR for a household with the given covariates. Log and identity
/// links can predict outside `[0, 1]`; such values are clamped with a warning.
pub fn predict_sar(fit: &GlmFit, covariates: &BTreeMap<String, Covariate>) -> Result<f64> {
    let mut eta = 0.0;
    for (term, beta) in fit.terms.iter().zip(&fit.coefficients) {
        eta += beta * term.value("<prediction>", covariates)?;
    }
    let sar = fit.link.inverse(eta);
    if !(0.0..=1.0).contains(&sar) {
        log::warn!("{} link predicts SAR {sar} outside [0, 1]; clamping", fit.link);
    }
    Ok(sar.clamp(0.0, 1.0))
}
