//! Exact probability computations for the Reed-Frost chain binomial model.
//!
//! A household of `N = s0 + i0` members is seeded by `i0` index cases at
//! generation 0. In every generation each remaining susceptible escapes
//! infection from all `I_g` currently infectious members with probability
//! `(1 - sar)^I_g`, so the number of new cases is binomial. Infectious members
//! recover after one generation.
//!
//! The probability of observing `x` cumulative infections after `d`
//! generations is the sum of the chain probabilities of every scenario
//! `i_1 -> ... -> i_d` with `sum(i) = x`. The scenarios are the compositions of
//! `x` into at most `d` parts, padded with trailing zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest outbreak total accepted by [`enumerate_scenarios`].
pub const ENUMERATION_CAP: u32 = 25;

/// How long a household was followed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Horizon {
    /// Observed for this many generations after the index cases.
    Generations(u32),
    /// Observed until the outbreak concluded.
    Final,
}

impl Horizon {
    /// Number of generations that actually matter for a household with `s0`
    /// initial susceptibles. Never less than one.
    pub fn effective(self, s0: u32) -> u32 {
        let full = s0.max(1);
        match self {
            Horizon::Generations(d) => d.clamp(1, full),
            Horizon::Final => full,
        }
    }
}

impl std::fmt::Display for Horizon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Horizon::Generations(d) => write!(f, "{d}"),
            Horizon::Final => f.write_str("final"),
        }
    }
}

/// Initial composition of a household and its secondary attack rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseholdConfig {
    pub s0: u32,
    pub i0: u32,
    pub sar: f64,
}

impl HouseholdConfig {
    pub fn new(s0: u32, i0: u32, sar: f64) -> Result<Self> {
        check_probability("sar", sar)?;
        Ok(Self { s0, i0, sar })
    }

    /// Household size `N = s0 + i0`.
    pub fn size(&self) -> u32 {
        self.s0 + self.i0
    }

    pub fn with_sar(self, sar: f64) -> Result<Self> {
        Self::new(self.s0, self.i0, sar)
    }
}

/// Snapshot of an outbreak at one generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutbreakState {
    pub generation: u32,
    pub infectious: u32,
    pub susceptible: u32,
    /// Per-susceptible probability of being infected in the next generation.
    pub infection_prob: f64,
}

impl OutbreakState {
    pub fn new(generation: u32, infectious: u32, susceptible: u32, sar: f64) -> Result<Self> {
        Ok(Self {
            generation,
            infectious,
            susceptible,
            infection_prob: infection_probability(sar, infectious)?,
        })
    }

    /// The generation-0 state of a household.
    pub fn initial(config: &HouseholdConfig) -> Self {
        Self {
            generation: 0,
            infectious: config.i0,
            susceptible: config.s0,
            infection_prob: 1.0 - escape(config.sar, config.i0),
        }
    }
}

/// New-infection counts per generation, `i_1 .. i_d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scenario(Vec<u32>);

impl Scenario {
    /// Builds a scenario, rejecting empty chains and chains that resume
    /// after a generation with no new cases.
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::domain("a scenario needs at least one generation"));
        }
        if let Some(dead) = counts.iter().position(|&c| c == 0) {
            if counts[dead..].iter().any(|&c| c > 0) {
                return Err(Error::domain(format!(
                    "scenario {counts:?} has new cases after the chain died out"
                )));
            }
        }
        Ok(Self(counts))
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl From<Scenario> for Vec<u32> {
    fn from(s: Scenario) -> Self {
        s.0
    }
}

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {p} is outside [0, 1]")))
    }
}

/// `(1 - sar)^infectious`, the chance a susceptible escapes every infectious member.
#[inline]
fn escape(sar: f64, infectious: u32) -> f64 {
    (1.0 - sar).powi(infectious as i32)
}

/// Probability that a susceptible is infected by at least one of
/// `infectious` members: `1 - (1 - sar)^infectious`.
pub fn infection_probability(sar: f64, infectious: u32) -> Result<f64> {
    check_probability("sar", sar)?;
    Ok(1.0 - escape(sar, infectious))
}

pub(crate) fn binomial_coefficient(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for j in 0..k {
        c = c * f64::from(n - j) / f64::from(j + 1);
    }
    c.round()
}

/// Binomial mass with the success and failure probabilities passed
/// separately so that `fail` keeps full precision when it is tiny.
#[inline]
fn binomial_mass(n: u32, k: u32, success: f64, fail: f64) -> f64 {
    binomial_coefficient(n, k) * success.powi(k as i32) * fail.powi((n - k) as i32)
}

/// Probability of `i_next` new infections given the current state.
pub fn transition_pmf(i_next: u32, state: &OutbreakState, sar: f64) -> Result<f64> {
    check_probability("sar", sar)?;
    if i_next > state.susceptible {
        return Err(Error::domain(format!(
            "{i_next} new infections exceed {} susceptibles",
            state.susceptible
        )));
    }
    let fail = escape(sar, state.infectious);
    Ok(binomial_mass(state.susceptible, i_next, 1.0 - fail, fail))
}

/// Chain probability without validation. The first zero entry contributes
/// the probability that nobody left is infected; anything after it is ignored.
fn chain_probability_unchecked(counts: &[u32], config: &HouseholdConfig) -> f64 {
    let mut susceptible = config.s0;
    let mut infectious = config.i0;
    let mut p = 1.0;
    for &c in counts {
        let fail = escape(config.sar, infectious);
        p *= binomial_mass(susceptible, c, 1.0 - fail, fail);
        if c == 0 || p == 0.0 {
            break;
        }
        susceptible -= c;
        infectious = c;
    }
    p
}

/// Chain probability and its derivative with respect to the SAR.
fn chain_probability_and_derivative(counts: &[u32], config: &HouseholdConfig) -> (f64, f64) {
    let sar = config.sar;
    let mut susceptible = config.s0;
    let mut infectious = config.i0;
    let mut p = 1.0;
    let mut dlog = 0.0;
    for &c in counts {
        let fail = escape(sar, infectious);
        let factor = binomial_mass(susceptible, c, 1.0 - fail, fail);
        p *= factor;
        if p == 0.0 {
            return (0.0, 0.0);
        }
        // d/dsar of c ln(1 - (1-sar)^I) + (S - c) I ln(1 - sar)
        let i = f64::from(infectious);
        if c > 0 {
            dlog += f64::from(c) * i * (1.0 - sar).powi(infectious as i32 - 1) / (1.0 - fail);
        }
        dlog -= f64::from(susceptible - c) * i / (1.0 - sar);
        if c == 0 {
            break;
        }
        susceptible -= c;
        infectious = c;
    }
    (p, p * dlog)
}

/// Like [`pmf_from_scenarios`], also returning the derivative of the
/// probability with respect to the SAR. Requires `0 < sar < 1`.
pub fn pmf_and_derivative_from_scenarios(scenarios: &[Scenario], config: &HouseholdConfig) -> (f64, f64) {
    scenarios
        .iter()
        .map(|s| chain_probability_and_derivative(s.counts(), config))
        .fold((0.0, 0.0), |(p, dp), (q, dq)| (p + q, dp + dq))
}

/// Probability of one specific chain `i_1 -> ... -> i_d`.
pub fn chain_probability(scenario: &Scenario, config: &HouseholdConfig) -> Result<f64> {
    check_probability("sar", config.sar)?;
    let scenario = Scenario::new(scenario.counts().to_vec())?;
    if scenario.total() > config.s0 {
        return Err(Error::domain(format!(
            "scenario {:?} infects more than the {} susceptibles",
            scenario.counts(),
            config.s0
        )));
    }
    Ok(chain_probability_unchecked(scenario.counts(), config))
}

/// Number of scenarios with `total` infections over `generations`
/// generations: the compositions of `total` into at most `generations` parts.
pub fn count_scenarios(total: u32, generations: u32) -> Result<u64> {
    if generations == 0 {
        return Err(Error::domain("generations must be at least 1"));
    }
    if total <= 1 || generations == 1 {
        return Ok(1);
    }
    let overflow = Error::Overflow { total, generations };
    let n = u64::from(total - 1);
    let parts = u64::from(generations.min(total));
    // C(n, j) built incrementally; C(n, j+1) = C(n, j) (n - j) / (j + 1) is exact.
    let mut binom: u128 = 1;
    let mut sum: u64 = 1;
    for j in 1..parts {
        binom = binom * u128::from(n - j + 1) / u128::from(j);
        let term = u64::try_from(binom).map_err(|_| overflow.clone())?;
        sum = sum.checked_add(term).ok_or_else(|| overflow.clone())?;
    }
    Ok(sum)
}

/// Every scenario producing `total` infections within `generations`
/// generations, each padded with zeros to length `generations`.
///
/// Scenarios are emitted in lexicographic order starting from
/// `(1, 1, ..., total - m + 1)` where `m = min(total, generations)` is the
/// longest chain that can produce `total` cases.
pub fn enumerate_scenarios(total: u32, generations: u32) -> Result<Vec<Scenario>> {
    if generations == 0 {
        return Err(Error::domain("generations must be at least 1"));
    }
    if total > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            total,
            cap: ENUMERATION_CAP,
        });
    }
    let d = generations as usize;
    let padded = |mut v: Vec<u32>| {
        v.resize(d, 0);
        Scenario(v)
    };
    if total == 0 {
        return Ok(vec![padded(Vec::new())]);
    }
    if total == 1 || generations == 1 {
        return Ok(vec![padded(vec![total])]);
    }

    // Chains longer than `total` generations would need an empty generation
    // before the last case, so only `m` slots can be positive.
    let m = generations.min(total) as usize;
    let n = count_scenarios(total, m as u32)? as usize;
    let mut out = Vec::with_capacity(n);

    let mut next = vec![1u32; m];
    next[m - 1] = total - m as u32 + 1;
    out.push(padded(next.clone()));

    let mut depth = m - 1;
    let mut running: u32 = total;
    for _ in 1..n {
        for slot in &mut next[depth..] {
            running -= *slot;
            *slot = 0;
        }
        depth -= 1;
        next[depth] += 1;
        running += 1;
        while running < total {
            depth += 1;
            if depth == m - 1 {
                next[depth] = total - running;
                running = total;
            } else {
                next[depth] += 1;
                running += 1;
            }
        }
        out.push(padded(next.clone()));
    }
    Ok(out)
}

/// Sum of chain probabilities over a pre-enumerated scenario set.
///
/// Scenario sets do not depend on the SAR, so callers evaluating the same
/// `(total, generations)` cell many times can enumerate once and reuse.
pub fn pmf_from_scenarios(scenarios: &[Scenario], config: &HouseholdConfig) -> f64 {
    scenarios
        .iter()
        .map(|s| chain_probability_unchecked(s.counts(), config))
        .sum()
}

/// Probability of `total` cumulative infections among the `s0` initial
/// susceptibles by the end of generation `generations`.
///
/// `generations` above `s0` are clamped to `s0` since the distribution has
/// stabilised by then.
pub fn incomplete_pmf(total: u32, config: &HouseholdConfig, generations: u32) -> Result<f64> {
    check_probability("sar", config.sar)?;
    if generations == 0 {
        return Err(Error::domain(
            "at least one generation must be observed",
        ));
    }
    if total > config.s0 {
        return Err(Error::domain(format!(
            "total {total} exceeds {} initial susceptibles",
            config.s0
        )));
    }
    let d = Horizon::Generations(generations).effective(config.s0);
    let scenarios = enumerate_scenarios(total, d)?;
    Ok(pmf_from_scenarios(&scenarios, config))
}

/// Probability of `total` infections once the outbreak has concluded.
pub fn final_size_pmf(total: u32, config: &HouseholdConfig) -> Result<f64> {
    incomplete_pmf(total, config, config.s0.max(1))
}

/// Full PMF over `0..=s0` at the given horizon.
pub fn pmf_vector(config: &HouseholdConfig, horizon: Horizon) -> Result<Vec<f64>> {
    if let Horizon::Generations(0) = horizon {
        return Err(Error::domain("at least one generation must be observed"));
    }
    let d = horizon.effective(config.s0);
    (0..=config.s0)
        .map(|x| incomplete_pmf(x, config, d))
        .collect()
}

/// Expected proportion of the initial susceptibles infected (the final
/// attack rate when `horizon` is [`Horizon::Final`]).
pub fn expected_far(config: &HouseholdConfig, horizon: Horizon) -> Result<f64> {
    if config.s0 == 0 {
        return Err(Error::domain("attack rate is undefined without susceptibles"));
    }
    let pmf = pmf_vector(config, horizon)?;
    let mean: f64 = pmf.iter().enumerate().map(|(x, p)| x as f64 * p).sum();
    Ok(mean / f64::from(config.s0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s0: u32, i0: u32, sar: f64) -> HouseholdConfig {
        HouseholdConfig::new(s0, i0, sar).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn infection_probability_examples() {
        assert_eq!(infection_probability(0.5, 1).unwrap(), 0.5);
        assert_eq!(infection_probability(0.37, 0).unwrap(), 0.0);
        assert!(close(infection_probability(0.2, 2).unwrap(), 0.36, 1e-15));
        assert!(infection_probability(1.2, 1).is_err());
        assert!(infection_probability(-0.1, 1).is_err());
    }

    #[test]
    fn transition_examples() {
        let s = OutbreakState::new(0, 1, 2, 0.5).unwrap();
        assert!(close(transition_pmf(0, &s, 0.5).unwrap(), 0.25, 1e-15));
        assert!(close(transition_pmf(1, &s, 0.5).unwrap(), 0.5, 1e-15));
        let s = OutbreakState::new(0, 2, 3, 0.2).unwrap();
        let expected = 3.0 * 0.36 * 0.36 * 0.64;
        assert!(close(transition_pmf(2, &s, 0.2).unwrap(), expected, 1e-15));
        assert!(transition_pmf(4, &s, 0.2).is_err());
    }

    #[test]
    fn state_carries_infection_probability() {
        let s = OutbreakState::new(1, 2, 3, 0.2).unwrap();
        assert!(close(s.infection_prob, 0.36, 1e-15));
        let s = OutbreakState::initial(&cfg(4, 1, 0.3));
        assert!(close(s.infection_prob, 0.3, 1e-15));
    }

    #[test]
    fn chain_examples() {
        let c = cfg(2, 1, 0.5);
        let p = |v: Vec<u32>| chain_probability(&Scenario::new(v).unwrap(), &c).unwrap();
        assert!(close(p(vec![1]), 0.5, 1e-15));
        assert!(close(p(vec![1, 1]), 0.25, 1e-15));
        assert!(close(p(vec![0]), 0.25, 1e-15));
        // trailing zeros after death change nothing
        assert!(close(p(vec![0, 0, 0]), 0.25, 1e-15));
    }

    #[test]
    fn malformed_scenarios_rejected() {
        assert!(Scenario::new(vec![1, 0, 1]).is_err());
        assert!(Scenario::new(vec![]).is_err());
        let too_many = Scenario::new(vec![2, 2]).unwrap();
        assert!(chain_probability(&too_many, &cfg(3, 1, 0.5)).is_err());
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_scenarios(3, 2).unwrap(), 3);
        assert_eq!(count_scenarios(4, 4).unwrap(), 8);
        for d in 1..10 {
            assert_eq!(count_scenarios(0, d).unwrap(), 1);
            assert_eq!(count_scenarios(1, d).unwrap(), 1);
        }
        assert_eq!(count_scenarios(9, 1).unwrap(), 1);
        // all compositions of n: 2^(n-1)
        assert_eq!(count_scenarios(20, 20).unwrap(), 1 << 19);
        assert_eq!(count_scenarios(20, 40).unwrap(), 1 << 19);
        assert!(count_scenarios(3, 0).is_err());
    }

    #[test]
    fn count_overflow_is_reported() {
        assert!(matches!(
            count_scenarios(65, 65),
            Err(Error::Overflow { .. })
        ));
        assert!(count_scenarios(200, 3).is_ok());
        assert_eq!(count_scenarios(64, 64).unwrap(), 1 << 63);
    }

    #[test]
    fn enumerate_examples() {
        let got: Vec<Vec<u32>> = enumerate_scenarios(3, 2)
            .unwrap()
            .into_iter()
            .map(Vec::from)
            .collect();
        assert_eq!(got, vec![vec![1, 2], vec![2, 1], vec![3, 0]]);

        let got: Vec<Vec<u32>> = enumerate_scenarios(1, 4)
            .unwrap()
            .into_iter()
            .map(Vec::from)
            .collect();
        assert_eq!(got, vec![vec![1, 0, 0, 0]]);

        let got: Vec<Vec<u32>> = enumerate_scenarios(0, 3)
            .unwrap()
            .into_iter()
            .map(Vec::from)
            .collect();
        assert_eq!(got, vec![vec![0, 0, 0]]);
    }

    #[test]
    fn enumerate_starts_with_slow_chain() {
        let first = enumerate_scenarios(7, 4).unwrap().remove(0);
        assert_eq!(first.counts(), &[1, 1, 1, 4]);
        let first = enumerate_scenarios(3, 5).unwrap().remove(0);
        assert_eq!(first.counts(), &[1, 1, 1, 0, 0]);
    }

    #[test]
    fn enumerate_guard() {
        assert!(matches!(
            enumerate_scenarios(26, 3),
            Err(Error::EnumerationCap { .. })
        ));
        assert!(enumerate_scenarios(3, 0).is_err());
    }

    #[test]
    fn incomplete_examples() {
        let c = cfg(2, 1, 0.5);
        assert!(close(incomplete_pmf(0, &c, 1).unwrap(), 0.25, 1e-15));
        assert!(close(incomplete_pmf(2, &c, 2).unwrap(), 0.5, 1e-15));
        assert!(incomplete_pmf(3, &c, 2).is_err());
        assert!(incomplete_pmf(1, &c, 0).is_err());
    }

    #[test]
    fn final_examples() {
        let c = cfg(2, 1, 0.5);
        let v = pmf_vector(&c, Horizon::Final).unwrap();
        for (got, want) in v.iter().zip([0.25, 0.25, 0.5]) {
            assert!(close(*got, want, 1e-15));
        }
        let v = pmf_vector(&cfg(6, 2, 0.0), Horizon::Final).unwrap();
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&p| p == 0.0));
        assert!(final_size_pmf(4, &cfg(4, 1, 0.8)).unwrap() > 0.99);
    }

    #[test]
    fn degenerate_households() {
        let v = pmf_vector(&cfg(0, 1, 0.4), Horizon::Final).unwrap();
        assert_eq!(v, vec![1.0]);
        let v = pmf_vector(&cfg(4, 0, 0.7), Horizon::Generations(2)).unwrap();
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn generations_clamped_to_s0() {
        let c = cfg(3, 1, 0.35);
        for x in 0..=3 {
            assert_eq!(
                incomplete_pmf(x, &c, 3).unwrap(),
                incomplete_pmf(x, &c, 11).unwrap()
            );
        }
    }

    #[test]
    fn far_examples() {
        let far = expected_far(&cfg(3, 1, 0.28), Horizon::Final).unwrap();
        assert!(close(far, 0.40, 0.01), "{far}");
        let far = expected_far(&cfg(2, 1, 0.61), Horizon::Final).unwrap();
        assert!(close(far, 0.76, 0.01), "{far}");
        for s0 in 1..6 {
            let far = expected_far(&cfg(s0, 2, 1.0), Horizon::Final).unwrap();
            assert!(close(far, 1.0, 1e-15));
        }
        assert!(expected_far(&cfg(0, 1, 0.5), Horizon::Final).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for (s0, i0, d) in [(4, 1, 2), (5, 2, 5), (3, 3, 1), (6, 1, 3)] {
            for x in 0..=s0 {
                let scen = enumerate_scenarios(x, d).unwrap();
                for sar in [0.1, 0.45, 0.8] {
                    let (p, dp) = pmf_and_derivative_from_scenarios(&scen, &cfg(s0, i0, sar));
                    assert!((p - incomplete_pmf(x, &cfg(s0, i0, sar), d).unwrap()).abs() < 1e-15);
                    let h = 1e-6;
                    let fd = (incomplete_pmf(x, &cfg(s0, i0, sar + h), d).unwrap()
                        - incomplete_pmf(x, &cfg(s0, i0, sar - h), d).unwrap())
                        / (2.0 * h);
                    assert!((dp - fd).abs() < 1e-7, "s0={s0} x={x} sar={sar}: {dp} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn escape_keeps_precision_near_one() {
        // (1 - sar)^3 is far below machine epsilon here; the mass must not vanish.
        let p = final_size_pmf(0, &cfg(1, 3, 1.0 - 1e-7)).unwrap();
        assert!(p > 0.0 && close(p.log10(), -21.0, 1e-6), "{p}");
    }
}
