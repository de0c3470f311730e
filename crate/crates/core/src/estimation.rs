//! Maximum-likelihood estimation of a single secondary attack rate shared by
//! independently observed households.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use crate::model::Horizon;
use crate::error::{Error, Result};
use crate::model::{self, HouseholdConfig, Scenario};
use crate::numerics;

/// Lower and upper edge of the SAR search domain.
pub const SEARCH_LOWER: f64 = 1e-9;
pub const SEARCH_UPPER: f64 = 1.0 - 1e-9;
/// Estimates closer than this to 0 or 1 are reported as exactly 0 or 1.
pub const BOUNDARY_SNAP: f64 = 1e-6;
const FIT_TOL: f64 = 1e-10;
const WILKS_TOL: f64 = 1e-10;
/// Objective value used in place of `+inf` inside the search domain.
pub(crate) const PENALTY: f64 = 1e300;

/// A covariate value attached to a household.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariate {
    Numeric(f64),
    Categorical(String),
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covariate::Numeric(v) => write!(f, "{v}"),
            Covariate::Categorical(s) => f.write_str(s),
        }
    }
}

/// One household's outbreak record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdObservation {
    pub id: String,
    pub s0: u32,
    pub i0: u32,
    /// Infected among the `s0` initial susceptibles.
    pub infected: u32,
    pub horizon: Horizon,
    pub covariates: BTreeMap<String, Covariate>,
}

impl HouseholdObservation {
    pub fn new(id: impl Into<String>, s0: u32, i0: u32, infected: u32, horizon: Horizon) -> Result<Self> {
        let obs = Self {
            id: id.into(),
            s0,
            i0,
            infected,
            horizon,
            covariates: BTreeMap::new(),
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: Covariate) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.i0 == 0 {
            return Err(Error::domain(format!("household {}: i0 must be at least 1", self.id)));
        }
        if self.infected > self.s0 {
            return Err(Error::domain(format!(
                "household {}: infected {} exceeds s0 {}",
                self.id, self.infected, self.s0
            )));
        }
        if self.horizon == Horizon::Generations(0) {
            return Err(Error::domain(format!(
                "household {}: observation horizon must be at least one generation",
                self.id
            )));
        }
        Ok(())
    }

    /// Generations that matter for this household's likelihood term.
    pub fn effective_generations(&self) -> u32 {
        self.horizon.effective(self.s0)
    }
}

/// How a confidence interval was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    /// Likelihood-ratio set calibrated by the chi-square(1) quantile.
    Wilks,
    /// Wald interval from the inverse observed information.
    Normal,
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::Wilks => "wilks",
            CiMethod::Normal => "normal",
        })
    }
}

impl std::str::FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wilks" => Ok(CiMethod::Wilks),
            "normal" => Ok(CiMethod::Normal),
            other => Err(Error::domain(format!("unknown interval method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Fitted SAR with its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarEstimate {
    pub sar_hat: f64,
    /// `None` when the estimate is on the boundary or the observed
    /// information is not positive.
    pub std_error: Option<f64>,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub ci_method: CiMethod,
    pub ci_level: f64,
    pub loglik: f64,
}

impl SarEstimate {
    pub fn interval(&self) -> Interval {
        Interval {
            lower: self.ci_lower,
            upper: self.ci_upper,
        }
    }

    pub fn on_boundary(&self) -> bool {
        self.sar_hat == 0.0 || self.sar_hat == 1.0
    }
}

/// Point estimate before an interval has been attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFit {
    pub sar_hat: f64,
    pub std_error: Option<f64>,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct CellKey {
    s0: u32,
    i0: u32,
    infected: u32,
    generations: u32,
}

#[derive(Debug, Clone)]
struct Cell {
    s0: u32,
    i0: u32,
    weight: f64,
    scenarios: Arc<Vec<Scenario>>,
}

/// Scenario sets keyed by `(total, generations)`. They do not depend on the
/// SAR, so one cache serves every likelihood evaluation.
#[derive(Debug, Default, Clone)]
pub struct ScenarioCache {
    sets: HashMap<(u32, u32), Arc<Vec<Scenario>>>,
}

impl ScenarioCache {
    pub fn get(&mut self, total: u32, generations: u32) -> Result<Arc<Vec<Scenario>>> {
        if let Some(s) = self.sets.get(&(total, generations)) {
            return Ok(Arc::clone(s));
        }
        let set = Arc::new(model::enumerate_scenarios(total, generations)?);
        self.sets.insert((total, generations), Arc::clone(&set));
        Ok(set)
    }
}

/// Household data prepared for repeated evaluation of the shared-SAR
/// log-likelihood. Identical households are pooled into weighted cells.
#[derive(Debug, Clone)]
pub struct SarLikelihood {
    cells: Vec<Cell>,
    n_households: usize,
}

impl SarLikelihood {
    pub fn new(data: &[HouseholdObservation]) -> Result<Self> {
        let mut cache = ScenarioCache::default();
        Self::with_cache(data, &mut cache)
    }

    pub fn with_cache(data: &[HouseholdObservation], cache: &mut ScenarioCache) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut counts: BTreeMap<CellKey, usize> = BTreeMap::new();
        let mut empty = 0;
        for obs in data {
            obs.validate()?;
            if obs.s0 == 0 {
                empty += 1;
            }
            *counts
                .entry(CellKey {
                    s0: obs.s0,
                    i0: obs.i0,
                    infected: obs.infected,
                    generations: obs.effective_generations(),
                })
                .or_default() += 1;
        }
        if empty > 0 {
            log::warn!("{empty} household(s) have no susceptibles and contribute nothing to the likelihood");
        }
        let cells = counts
            .into_iter()
            .map(|(key, n)| {
                Ok(Cell {
                    s0: key.s0,
                    i0: key.i0,
                    weight: n as f64,
                    scenarios: cache.get(key.infected, key.generations)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cells,
            n_households: data.len(),
        })
    }

    pub fn n_households(&self) -> usize {
        self.n_households
    }

    /// Log-likelihood at `sar`; `-inf` when some household is impossible.
    pub fn log_likelihood(&self, sar: f64) -> f64 {
        let mut total = 0.0;
        for cell in &self.cells {
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

    fn negative(&self, sar: f64) -> f64 {
        let nll = -self.log_likelihood(sar);
        if nll.is_finite() {
            nll
        } else {
            PENALTY
        }
    }

    /// Maximum-likelihood estimate and its standard error.
    pub fn fit_point(&self) -> Result<PointFit> {
        let opt = numerics::minimize_scalar(|a| self.negative(a), SEARCH_LOWER, SEARCH_UPPER, FIT_TOL)?;
        let raw = opt.argmin[0];
        let sar_hat = if raw < BOUNDARY_SNAP {
            0.0
        } else if raw > 1.0 - BOUNDARY_SNAP {
            1.0
        } else {
            raw
        };
        let std_error = if sar_hat == 0.0 || sar_hat == 1.0 {
            None
        } else {
            numerics::hessian_fd(|a| -self.log_likelihood(a[0]), &[sar_hat])
                .ok()
                .map(|h| h[0][0])
                .filter(|&info| info > 0.0 && info.is_finite())
                .map(|info| 1.0 / info.sqrt())
        };
        Ok(PointFit {
            sar_hat,
            std_error,
            loglik: self.log_likelihood(sar_hat),
        })
    }

    /// Likelihood-ratio interval around a fitted point.
    pub fn wilks_interval(&self, fit: &PointFit, level: f64) -> Result<Interval> {
        let threshold = numerics::chisq1_quantile(level)?;
        if !fit.loglik.is_finite() {
            return Err(Error::Unavailable(
                "log-likelihood at the estimate is not finite".into(),
            ));
        }
        let outside = |a: f64| 2.0 * (fit.loglik - self.log_likelihood(a)) > threshold;
        let search = |inside: f64, edge: f64| {
            if inside == edge || !outside(edge) {
                return edge;
            }
            let (mut ok, mut bad) = (inside, edge);
            while (bad - ok).abs() > WILKS_TOL {
                let mid = 0.5 * (ok + bad);
                if outside(mid) {
                    bad = mid;
                } else {
                    ok = mid;
                }
            }
            0.5 * (ok + bad)
        };
        Ok(Interval {
            lower: search(fit.sar_hat, 0.0),
            upper: search(fit.sar_hat, 1.0),
        })
    }

    /// Fit with an interval of the requested kind.
    pub fn fit(&self, method: CiMethod, level: f64) -> Result<SarEstimate> {
        let point = self.fit_point()?;
        let interval = match method {
            CiMethod::Wilks => self.wilks_interval(&point, level)?,
            CiMethod::Normal => wald_interval(point.sar_hat, point.std_error, level)?,
        };
        Ok(SarEstimate {
            sar_hat: point.sar_hat,
            std_error: point.std_error,
            ci_lower: interval.lower,
            ci_upper: interval.upper,
            ci_method: method,
            ci_level: level,
            loglik: point.loglik,
        })
    }
}

fn wald_interval(center: f64, std_error: Option<f64>, level: f64) -> Result<Interval> {
    let se = std_error.ok_or_else(|| {
        Error::Unavailable("no standard error for a boundary or degenerate estimate".into())
    })?;
    let z = numerics::normal_quantile(0.5 * (1.0 + level))?;
    Ok(Interval {
        lower: (center - z * se).max(0.0),
        upper: (center + z * se).min(1.0),
    })
}

/// Sum over households of the log-probability of each observed total.
pub fn log_likelihood(data: &[HouseholdObservation], sar: f64) -> Result<f64> {
    model::check_probability("sar", sar)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    Ok(SarLikelihood::new(data)?.log_likelihood(sar))
}

/// Maximum-likelihood SAR with a 95% Wilks interval.
pub fn fit_sar(data: &[HouseholdObservation]) -> Result<SarEstimate> {
    fit_sar_with(data, CiMethod::Wilks, 0.95)
}

pub fn fit_sar_with(data: &[HouseholdObservation], method: CiMethod, level: f64) -> Result<SarEstimate> {
    SarLikelihood::new(data)?.fit(method, level)
}

/// Likelihood-ratio confidence interval for the SAR at `level`.
pub fn wilks_ci(data: &[HouseholdObservation], level: f64) -> Result<Interval> {
    let lik = SarLikelihood::new(data)?;
    let point = lik.fit_point()?;
    lik.wilks_interval(&point, level)
}

/// Symmetric normal-approximation interval, truncated to `[0, 1]`.
pub fn normal_ci(estimate: &SarEstimate, level: f64) -> Result<Interval> {
    wald_interval(estimate.sar_hat, estimate.std_error, level)
}
