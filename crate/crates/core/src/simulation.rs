//! Seeded forward simulation of household outbreaks and the confidence
//! interval coverage experiment.
//!
//! Every replication draws from its own ChaCha8 stream (`seed`, stream =
//! replication index), so replications are independent of each other and of
//! the order in which they run.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{CiMethod, Horizon, HouseholdObservation, SarLikelihood};
use crate::model::{check_probability, HouseholdConfig, Scenario};
use crate::numerics;

/// Generator recorded in output metadata.
pub const RNG_NAME: &str = "ChaCha8Rng(seed_from_u64, stream=replication)";

/// Household sizes 2..6 and their default weights.
pub const DEFAULT_SIZE_DISTRIBUTION: [(u32, f64); 5] = [(2, 0.28), (3, 0.23), (4, 0.25), (5, 0.16), (6, 0.08)];

/// The random stream for replication `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// How many index cases each simulated household gets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum I0Rule {
    Fixed(u32),
    /// `(i0, weight)` pairs.
    Distribution(Vec<(u32, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_households: usize,
    pub sar: f64,
    pub horizon: Horizon,
    /// `(household size, weight)` pairs.
    pub household_size_dist: Vec<(u32, f64)>,
    pub i0_rule: I0Rule,
    pub seed: u64,
    pub replications: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_households: 100,
            sar: 0.5,
            horizon: Horizon::Final,
            household_size_dist: DEFAULT_SIZE_DISTRIBUTION.to_vec(),
            i0_rule: I0Rule::Fixed(1),
            seed: 1,
            replications: 1000,
        }
    }
}

fn check_weights(what: &str, pairs: &[(u32, f64)]) -> Result<()> {
    if pairs.iter().any(|&(_, w)| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain(format!("{what} weights must be finite and non-negative")));
    }
    if !pairs.iter().any(|&(_, w)| w > 0.0) {
        return Err(Error::domain(format!("{what} needs at least one positive weight")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("sar", self.sar)?;
        if self.n_households == 0 {
            return Err(Error::domain("n_households must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::domain("replications must be at least 1"));
        }
        if self.horizon == Horizon::Generations(0) {
            return Err(Error::domain("horizon must be at least one generation"));
        }
        check_weights("household size", &self.household_size_dist)?;
        if self.household_size_dist.iter().any(|&(s, _)| s == 0) {
            return Err(Error::domain("household sizes must be positive"));
        }
        match &self.i0_rule {
            I0Rule::Fixed(0) => return Err(Error::domain("i0 must be at least 1")),
            I0Rule::Fixed(_) => {}
            I0Rule::Distribution(d) => {
                check_weights("i0", d)?;
                if d.iter().any(|&(i, _)| i == 0) {
                    return Err(Error::domain("i0 values must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

/// A simulated outbreak: the realised chain and its total.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbreak {
    pub chain: Scenario,
    pub total: u32,
}

/// Samples one outbreak generation by generation until the horizon, the
/// chain dies out, or nobody is left to infect.
pub fn simulate_outbreak<R: Rng + ?Sized>(config: &HouseholdConfig, horizon: Horizon, rng: &mut R) -> Outbreak {
    let limit = match horizon {
        Horizon::Generations(d) => d.max(1) as usize,
        Horizon::Final => usize::MAX,
    };
    let mut counts = Vec::new();
    let mut susceptible = config.s0;
    let mut infectious = config.i0;
    while counts.len() < limit {
        if susceptible == 0 && !counts.is_empty() {
            break;
        }
        let p = 1.0 - (1.0 - config.sar).powi(infectious as i32);
        let new = if susceptible == 0 || p <= 0.0 {
            0
        } else {
            Binomial::new(u64::from(susceptible), p.min(1.0))
                .expect("probability checked")
                .sample(rng) as u32
        };
        counts.push(new);
        if new == 0 {
            break;
        }
        susceptible -= new;
        infectious = new;
    }
    let total = counts.iter().sum();
    Outbreak {
        chain: Scenario::new(counts).expect("simulated chains are well formed"),
        total,
    }
}

/// One simulated study of `n_households` independent households.
pub fn simulate_study<R: Rng + ?Sized>(sim: &SimConfig, rng: &mut R) -> Result<Vec<HouseholdObservation>> {
    sim.validate()?;
    let sizes = WeightedIndex::new(sim.household_size_dist.iter().map(|&(_, w)| w))
        .map_err(|e| Error::domain(e.to_string()))?;
    let i0_dist = match &sim.i0_rule {
        I0Rule::Fixed(_) => None,
        I0Rule::Distribution(d) => {
            Some(WeightedIndex::new(d.iter().map(|&(_, w)| w)).map_err(|e| Error::domain(e.to_string()))?)
        }
    };
    (0..sim.n_households)
        .map(|k| {
            let size = sim.household_size_dist[sizes.sample(rng)].0;
            let i0 = match (&sim.i0_rule, &i0_dist) {
                (I0Rule::Fixed(i), _) => *i,
                (I0Rule::Distribution(d), Some(w)) => d[w.sample(rng)].0,
                _ => unreachable!(),
            }
            .min(size);
            let config = HouseholdConfig::new(size - i0, i0, sim.sar)?;
            let outbreak = simulate_outbreak(&config, sim.horizon, rng);
            HouseholdObservation::new(format!("h{}", k + 1), config.s0, i0, outbreak.total, sim.horizon)
        })
        .collect()
}

/// Realised coverage of one interval method at one nominal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: CiMethod,
    pub nominal_level: f64,
    /// Share of estimable replications whose interval covered the true SAR.
    pub realized_coverage: Option<f64>,
    pub n_households: usize,
    pub sar: f64,
    pub horizon: Horizon,
    pub replications: usize,
    /// Replications for which the interval could be computed.
    pub n_estimable: usize,
}

#[derive(Debug, Clone, Default)]
struct ReplicationOutcome {
    /// Per level: `Some(covered)` when the interval existed.
    wilks: Vec<Option<bool>>,
    normal: Vec<Option<bool>>,
}

fn run_replication(sim: &SimConfig, levels: &[f64], index: usize) -> Result<ReplicationOutcome> {
    let mut rng = substream(sim.seed, index as u64);
    let data = simulate_study(sim, &mut rng)?;
    let mut outcome = ReplicationOutcome {
        wilks: vec![None; levels.len()],
        normal: vec![None; levels.len()],
    };
    let lik = SarLikelihood::new(&data)?;
    let Ok(point) = lik.fit_point() else {
        return Ok(outcome);
    };
    for (k, &level) in levels.iter().enumerate() {
        if let Ok(ci) = lik.wilks_interval(&point, level) {
            outcome.wilks[k] = Some(ci.contains(sim.sar));
        }
        if let Some(se) = point.std_error {
            let z = numerics::normal_quantile(0.5 * (1.0 + level))?;
            let lower = (point.sar_hat - z * se).max(0.0);
            let upper = (point.sar_hat + z * se).min(1.0);
            outcome.normal[k] = Some(lower <= sim.sar && sim.sar <= upper);
        }
    }
    Ok(outcome)
}

/// Simulates `sim.replications` studies, fits each, and tabulates how often
/// the Wilks and normal intervals at each level cover the true SAR.
///
/// Replications run on all available cores; results do not depend on the
/// thread count.
pub fn coverage_experiment(sim: &SimConfig, levels: &[f64]) -> Result<Vec<CoverageRow>> {
    sim.validate()?;
    for &level in levels {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::domain(format!("confidence level {level} is outside (0, 1)")));
        }
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(sim.replications);
    let outcomes: Vec<ReplicationOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..sim.replications)
                        .step_by(workers)
                        .map(|r| run_replication(sim, levels, r).map(|o| (r, o)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut all = Vec::with_capacity(sim.replications);
        for h in handles {
            all.extend(h.join().expect("replication worker panicked")?);
        }
        all.sort_by_key(|(r, _)| *r);
        Ok::<_, Error>(all.into_iter().map(|(_, o)| o).collect())
    })?;

    let mut rows = Vec::with_capacity(2 * levels.len());
    for method in [CiMethod::Wilks, CiMethod::Normal] {
        for (k, &level) in levels.iter().enumerate() {
            let hits: Vec<bool> = outcomes
                .iter()
                .filter_map(|o| match method {
                    CiMethod::Wilks => o.wilks[k],
                    CiMethod::Normal => o.normal[k],
                })
                .collect();
            let covered = hits.iter().filter(|&&c| c).count();
            rows.push(CoverageRow {
                method,
                nominal_level: level,
                realized_coverage: (!hits.is_empty()).then(|| covered as f64 / hits.len() as f64),
                n_households: sim.n_households,
                sar: sim.sar,
                horizon: sim.horizon,
                replications: sim.replications,
                n_estimable: hits.len(),
            });
        }
    }
    Ok(rows)
}
