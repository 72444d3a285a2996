//! Exact solver for finite constrained identical-payoff games.
//!
//! A [`FiniteGame`] lists every deterministic policy profile with its return
//! `R(pi)` and workload vector `w^pi`. The oracle maximizes the penalized
//! objective `R(pi) - lambda g(pi)` by enumeration, runs projected dual ascent
//! on `lambda`, and checks the equilibrium property: no agent has a feasible
//! unilateral deviation that raises `R`.
//!
//! With finitely many pure profiles, dual ascent usually ends up oscillating
//! between a feasible and an infeasible profile around a breakpoint of the
//! dual function `d(lambda) = max_pi R(pi) - lambda g(pi)`. The oscillation is
//! detected and resolved by locating the minimizer of `d` exactly on the
//! oscillation window; at that point some maximizer is feasible.

use serde::{Deserialize, Serialize};

use crate::dual::{kkt_check, KktRecord, DEFAULT_KKT_EPSILON};
use crate::error::{Error, Result};
use crate::fairness::{jain_index, FairnessThreshold};
use crate::sim::{ActionPrimitive, EnvConfig, Simulator};

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// How profile returns were computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Evaluation {
    LongRunAverage,
    Discounted { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileValue {
    pub ret: f64,
    pub workload: Vec<f64>,
}

/// One enumerated profile with its constraint value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub index: usize,
    pub profile: Vec<usize>,
    pub ret: f64,
    pub workload: Vec<f64>,
    pub jfi: f64,
    pub g: f64,
}

impl ProfileRow {
    pub fn feasible(&self) -> bool {
        self.g <= 0.0
    }

    pub fn penalized(&self, lambda: f64) -> f64 {
        self.ret - lambda * self.g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteGame {
    pub name: String,
    /// Policy labels per agent; `policy_names[i].len()` is `|Pi_i|`.
    pub policy_names: Vec<Vec<String>>,
    pub tau: FairnessThreshold,
    pub evaluation: Evaluation,
    rows: Vec<ProfileRow>,
}

fn profile_count(sizes: &[usize]) -> Option<usize> {
    sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s))
}

/// Profile `index` in mixed radix, agent 0 most significant.
fn decode(mut index: usize, sizes: &[usize]) -> Vec<usize> {
    let mut profile = vec![0; sizes.len()];
    for (slot, &size) in profile.iter_mut().zip(sizes).rev() {
        *slot = index % size;
        index /= size;
    }
    profile
}

impl FiniteGame {
    /// Builds a game from a value table in profile-index order.
    pub fn from_table(
        name: impl Into<String>,
        policy_names: Vec<Vec<String>>,
        tau: FairnessThreshold,
        evaluation: Evaluation,
        values: Vec<ProfileValue>,
    ) -> Result<Self> {
        let sizes = Self::validate_names(&policy_names)?;
        let count = profile_count(&sizes).ok_or_else(|| Error::Capacity("profile count overflows".into()))?;
        if values.len() != count {
            return Err(Error::Domain(format!("expected {count} profile values, got {}", values.len())));
        }
        let rows = values
            .into_iter()
            .enumerate()
            .map(|(index, v)| Self::row(index, decode(index, &sizes), v, tau, sizes.len()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { name: name.into(), policy_names, tau, evaluation, rows })
    }

    /// Builds a game by evaluating every profile, refusing more than `cap` profiles.
    pub fn from_evaluator<F>(
        name: impl Into<String>,
        policy_names: Vec<Vec<String>>,
        tau: FairnessThreshold,
        evaluation: Evaluation,
        cap: usize,
        mut evaluate: F,
    ) -> Result<Self>
    where
        F: FnMut(&[usize]) -> Result<ProfileValue>,
    {
        let sizes = Self::validate_names(&policy_names)?;
        let count = profile_count(&sizes)
            .filter(|&c| c <= cap)
            .ok_or_else(|| Error::Capacity(format!("game has more than {cap} profiles")))?;
        let rows = (0..count)
            .map(|index| {
                let profile = decode(index, &sizes);
                let value = evaluate(&profile)?;
                Self::row(index, profile, value, tau, sizes.len())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { name: name.into(), policy_names, tau, evaluation, rows })
    }

    fn validate_names(policy_names: &[Vec<String>]) -> Result<Vec<usize>> {
        if policy_names.len() < 2 {
            return Err(Error::Domain("a finite game needs at least two agents".into()));
        }
        let sizes: Vec<usize> = policy_names.iter().map(Vec::len).collect();
        if sizes.contains(&0) {
            return Err(Error::Domain("every agent needs at least one policy".into()));
        }
        Ok(sizes)
    }

    fn row(index: usize, profile: Vec<usize>, v: ProfileValue, tau: FairnessThreshold, n: usize) -> Result<ProfileRow> {
        if v.workload.len() != n {
            return Err(Error::Domain(format!(
                "profile {index}: workload has {} entries for {n} agents",
                v.workload.len()
            )));
        }
        if !v.ret.is_finite() {
            return Err(Error::Numerical(format!("profile {index}: non-finite return")));
        }
        let jfi = jain_index(&v.workload)?;
        Ok(ProfileRow { index, profile, ret: v.ret, workload: v.workload, jfi, g: tau.value() - jfi })
    }

    pub fn n_agents(&self) -> usize {
        self.policy_names.len()
    }

    pub fn policy_counts(&self) -> Vec<usize> {
        self.policy_names.iter().map(Vec::len).collect()
    }

    pub fn n_profiles(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[ProfileRow] {
        &self.rows
    }

    pub fn row_at(&self, index: usize) -> &ProfileRow {
        &self.rows[index]
    }

    pub fn index_of(&self, profile: &[usize]) -> Result<usize> {
        let sizes = self.policy_counts();
        if profile.len() != sizes.len() || profile.iter().zip(&sizes).any(|(p, s)| p >= s) {
            return Err(Error::Interface(format!("profile {profile:?} is not part of game {}", self.name)));
        }
        Ok(profile.iter().zip(&sizes).fold(0, |acc, (p, s)| acc * s + p))
    }

    pub fn profile_label(&self, index: usize) -> String {
        self.rows[index]
            .profile
            .iter()
            .zip(&self.policy_names)
            .map(|(&p, names)| names[p].as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Same game with a different threshold.
    pub fn with_tau(&self, tau: FairnessThreshold) -> Self {
        let mut game = self.clone();
        game.tau = tau;
        for row in &mut game.rows {
            row.g = tau.value() - row.jfi;
        }
        game
    }

    pub fn has_feasible_profile(&self) -> bool {
        self.rows.iter().any(ProfileRow::feasible)
    }

    /// Dual function `d(lambda) = max_pi R(pi) - lambda g(pi)`.
    pub fn dual_function(&self, lambda: f64) -> f64 {
        self.rows.iter().map(|r| r.penalized(lambda)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every open-loop action sequence of length `horizon` over `alphabet`
    /// per agent, evaluated on the simulator from `reset(0)` by discounted
    /// return and terminal workload.
    pub fn from_simulator(
        name: impl Into<String>,
        config: EnvConfig,
        horizon: usize,
        alphabet: &[ActionPrimitive],
        tau: FairnessThreshold,
        gamma: f64,
        cap: usize,
    ) -> Result<Self> {
        if horizon == 0 || alphabet.is_empty() {
            return Err(Error::Config("micro-environment needs a positive horizon and a nonempty alphabet".into()));
        }
        let sim = Simulator::new(config)?;
        let n = sim.config().n_agents;
        let per_agent = alphabet
            .len()
            .checked_pow(horizon as u32)
            .filter(|&c| c <= cap)
            .ok_or_else(|| Error::Capacity(format!("micro-environment has more than {cap} policies per agent")))?;
        let sequences: Vec<Vec<ActionPrimitive>> = (0..per_agent)
            .map(|i| decode(i, &vec![alphabet.len(); horizon]).into_iter().map(|k| alphabet[k]).collect())
            .collect();
        let labels: Vec<String> =
            sequences.iter().map(|seq| seq.iter().map(|a| a.name()).collect::<Vec<_>>().join(">")).collect();
        FiniteGame::from_evaluator(name, vec![labels; n], tau, Evaluation::Discounted { gamma }, cap, |profile| {
            let mut state = sim.reset(0);
            let mut ret = 0.0;
            let mut discount = 1.0;
            #[allow(clippy::needless_range_loop)]
            for t in 0..horizon {
                if state.done {
                    break;
                }
                let joint: Vec<ActionPrimitive> = profile.iter().map(|&p| sequences[p][t]).collect();
                let out = sim.step(&state, &joint)?;
                ret += discount * out.team_reward;
                discount *= gamma;
                state = out.next_state;
            }
            Ok(ProfileValue { ret, workload: state.workload.0.iter().map(|&w| f64::from(w)).collect() })
        })
    }
}

/// Full enumeration table with `g(pi) = tau - JFI(w^pi)`.
pub fn enumerate_profiles(game: &FiniteGame) -> Vec<ProfileRow> {
    game.rows.clone()
}

/// Penalized best response: `argmax_pi R(pi) - lambda g(pi)`, lowest index on ties.
pub fn exact_primal(game: &FiniteGame, lambda: f64) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for row in &game.rows {
        let v = row.penalized(lambda);
        if v > best_value {
            best_value = v;
            best = row.index;
        }
    }
    best
}

/// Outcome of the deviation scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum SmGneVerdict {
    Equilibrium,
    /// The profile itself violates the constraint.
    InfeasibleProfile {
        g: f64,
    },
    /// A feasible unilateral deviation strictly improves the return.
    Deviation {
        agent: usize,
        policy: usize,
        gain: f64,
    },
}

impl SmGneVerdict {
    pub fn is_equilibrium(&self) -> bool {
        matches!(self, SmGneVerdict::Equilibrium)
    }
}

/// Equilibrium check: feasible, and no feasible unilateral deviation raises `R`.
pub fn verify_smgne(game: &FiniteGame, profile: usize) -> SmGneVerdict {
    verify_smgne_with_tolerance(game, profile, 1e-12)
}

/// As [`verify_smgne`], ignoring deviation gains up to `tolerance`.
pub fn verify_smgne_with_tolerance(game: &FiniteGame, profile: usize, tolerance: f64) -> SmGneVerdict {
    let base = &game.rows[profile];
    if !base.feasible() {
        return SmGneVerdict::InfeasibleProfile { g: base.g };
    }
    let sizes = game.policy_counts();
    let mut worst: Option<(usize, usize, f64)> = None;
    for (agent, &size) in sizes.iter().enumerate() {
        for policy in (0..size).filter(|&p| p != base.profile[agent]) {
            let mut deviation = base.profile.clone();
            deviation[agent] = policy;
            let idx = deviation.iter().zip(&sizes).fold(0, |acc, (p, s)| acc * s + p);
            let row = &game.rows[idx];
            let gain = row.ret - base.ret;
            if row.feasible() && gain > tolerance && worst.is_none_or(|(_, _, g)| gain > g) {
                worst = Some((agent, policy, gain));
            }
        }
    }
    match worst {
        Some((agent, policy, gain)) => SmGneVerdict::Deviation { agent, policy, gain },
        None => SmGneVerdict::Equilibrium,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualAscentConfig {
    pub eta: f64,
    pub max_iter: usize,
    pub lambda0: f64,
    pub lambda_max: f64,
    pub kkt_epsilon: f64,
}

impl Default for DualAscentConfig {
    fn default() -> Self {
        Self { eta: 0.01, max_iter: 100_000, lambda0: 0.0, lambda_max: 1e6, kkt_epsilon: DEFAULT_KKT_EPSILON }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub iteration: usize,
    pub lambda: f64,
    pub profile: usize,
    pub ret: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscentStatus {
    /// Feasible profile and a stationary multiplier.
    Converged,
    /// Oscillation between feasible and infeasible profiles, resolved at the
    /// exact breakpoint of the dual function.
    Oscillation,
    /// The multiplier sits at its cap with an infeasible best response.
    CapReached,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationWindow {
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub midpoint: f64,
    /// Minimizer of the dual function inside the window.
    pub switching_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleCertificate {
    pub pi_star: usize,
    pub lambda_star: f64,
    pub g_value: f64,
    pub ret: f64,
    pub kkt: KktRecord,
    /// Set only when the deviation scan found no improving feasible deviation.
    pub deviation_checked: bool,
    pub verdict: SmGneVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualAscentResult {
    pub status: AscentStatus,
    /// `None` when no feasible profile was found (infeasibility report).
    pub certificate: Option<SaddleCertificate>,
    pub best_feasible_seen: Option<usize>,
    pub final_lambda: f64,
    pub oscillation: Option<OscillationWindow>,
    pub iterates: Vec<Iterate>,
}

impl DualAscentResult {
    pub fn infeasible(&self) -> bool {
        self.certificate.is_none()
    }
}

const STALL_WINDOW: usize = 10;
const STALL_TOL: f64 = 1e-6;
/// Feasibility flips required before an oscillation is declared.
const OSCILLATION_FLIPS: usize = 6;

/// Minimizer of the dual function on `[low, high]`, walking the upper envelope
/// of the lines `R(pi) - lambda g(pi)` from the left.
pub fn minimize_dual_on(game: &FiniteGame, low: f64, high: f64) -> f64 {
    let rows = &game.rows;
    let mut lambda = low;
    loop {
        let d = game.dual_function(lambda);
        let tol = 1e-12 * (1.0 + d.abs());
        // right derivative is the steepest slope (-g) among active lines
        let current = rows
            .iter()
            .filter(|r| r.penalized(lambda) >= d - tol)
            .min_by(|a, b| a.g.total_cmp(&b.g))
            .expect("nonempty game");
        if current.g <= 0.0 {
            return lambda;
        }
        let next = rows
            .iter()
            .filter(|r| r.g < current.g)
            .map(|r| (current.ret - r.ret) / (current.g - r.g))
            .filter(|&x| x > lambda)
            .fold(f64::INFINITY, f64::min);
        if next >= high {
            return high;
        }
        lambda = next;
    }
}

/// Best feasible profile among the maximizers of the penalized objective at `lambda`.
fn feasible_maximizer(game: &FiniteGame, lambda: f64) -> Option<usize> {
    let d = game.dual_function(lambda);
    let tol = 1e-9 * (1.0 + d.abs());
    game.rows
        .iter()
        .filter(|r| r.feasible() && r.penalized(lambda) >= d - tol)
        .max_by(|a, b| a.ret.total_cmp(&b.ret).then(b.index.cmp(&a.index)))
        .map(|r| r.index)
}

fn certify(game: &FiniteGame, profile: usize, lambda: f64, epsilon: f64) -> SaddleCertificate {
    let row = &game.rows[profile];
    let kkt = kkt_check(lambda, row.g, epsilon);
    let verdict = verify_smgne(game, profile);
    SaddleCertificate {
        pi_star: profile,
        lambda_star: lambda,
        g_value: row.g,
        ret: row.ret,
        kkt,
        deviation_checked: verdict.is_equilibrium(),
        verdict,
    }
}

/// Projected dual ascent `lambda <- [lambda + eta g(pi_t)]^+` with exact best responses.
pub fn exact_dual_ascent(game: &FiniteGame, config: &DualAscentConfig) -> Result<DualAscentResult> {
    if !(config.eta > 0.0 && config.eta.is_finite()) {
        return Err(Error::Config(format!("dual step must be positive, got {}", config.eta)));
    }
    let mut lambda = config.lambda0.clamp(0.0, config.lambda_max);
    let mut iterates = Vec::new();
    let mut best: Option<usize> = None;
    let mut flips: Vec<usize> = Vec::new();
    let mut status = AscentStatus::MaxIterations;
    let mut final_profile = None;
    let mut oscillation = None;

    for t in 0..config.max_iter {
        let profile = exact_primal(game, lambda);
        let row = &game.rows[profile];
        iterates.push(Iterate { iteration: t, lambda, profile, ret: row.ret, g: row.g });
        if row.feasible() && best.is_none_or(|b| row.ret > game.rows[b].ret) {
            best = Some(profile);
        }
        if t > 0 && iterates[t - 1].g.total_cmp(&0.0).is_le() != row.feasible() {
            flips.push(t);
        }

        let next = (lambda + config.eta * row.g).clamp(0.0, config.lambda_max);
        if row.feasible() {
            let stalled = t + 1 >= STALL_WINDOW
                && iterates[t + 1 - STALL_WINDOW..].iter().all(|it| (it.lambda - next).abs() < STALL_TOL);
            if next == lambda || stalled {
                status = AscentStatus::Converged;
                final_profile = Some(profile);
                lambda = next;
                break;
            }
        } else if next == lambda && lambda == config.lambda_max {
            status = AscentStatus::CapReached;
            break;
        }

        if flips.len() >= OSCILLATION_FLIPS {
            let window = &iterates[flips[flips.len() - OSCILLATION_FLIPS]..];
            let low = window.iter().map(|it| it.lambda).fold(f64::INFINITY, f64::min);
            let high = window.iter().map(|it| it.lambda).fold(f64::NEG_INFINITY, f64::max);
            let switching = minimize_dual_on(game, low, high);
            if let Some(p) = feasible_maximizer(game, switching) {
                status = AscentStatus::Oscillation;
                final_profile = Some(p);
                oscillation = Some(OscillationWindow {
                    lambda_low: low,
                    lambda_high: high,
                    midpoint: 0.5 * (low + high),
                    switching_lambda: switching,
                });
                lambda = switching;
                break;
            }
        }
        lambda = next;
    }

    // Slow ascent that never reached a feasible best response: finish the
    // walk exactly on the dual envelope.
    if status == AscentStatus::MaxIterations && best.is_none() && game.has_feasible_profile() {
        let switching = minimize_dual_on(game, lambda, config.lambda_max);
        if let Some(p) = feasible_maximizer(game, switching) {
            final_profile = Some(p);
            lambda = switching;
        }
    }
    let chosen = final_profile.or(best);
    Ok(DualAscentResult {
        status,
        certificate: chosen.map(|p| certify(game, p, lambda, config.kkt_epsilon)),
        best_feasible_seen: best,
        final_lambda: lambda,
        oscillation,
        iterates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chore::ChoreGame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tau(x: f64) -> FairnessThreshold {
        FairnessThreshold::new(x).unwrap()
    }

    fn chore() -> FiniteGame {
        ChoreGame::default().finite_game(tau(0.9)).unwrap()
    }

    #[test]
    fn enumeration_sizes() {
        let names = vec![vec!["a".to_string(), "b".to_string()]; 2];
        let values = vec![ProfileValue { ret: 0.0, workload: vec![1.0, 1.0] }; 4];
        let game = FiniteGame::from_table("t", names.clone(), tau(0.5), Evaluation::LongRunAverage, values).unwrap();
        assert_eq!(enumerate_profiles(&game).len(), 4);
        assert_eq!(game.rows()[2].profile, vec![1, 0]);
        assert_eq!(game.index_of(&[1, 1]).unwrap(), 3);

        let big = vec![(0..1000).map(|i| i.to_string()).collect::<Vec<_>>(); 3];
        let err = FiniteGame::from_evaluator(
            "big",
            big,
            tau(0.5),
            Evaluation::LongRunAverage,
            DEFAULT_ENUMERATION_CAP,
            |_| Ok(ProfileValue { ret: 0.0, workload: vec![0.0; 3] }),
        );
        assert!(matches!(err, Err(Error::Capacity(_))));
    }

    #[test]
    fn chore_table() {
        let game = chore();
        let row = |p: &[usize]| game.row_at(game.index_of(p).unwrap()).clone();
        let wr = row(&[0, 1]);
        assert!((wr.ret - 0.9).abs() < 1e-12);
        assert!((wr.jfi - 0.5).abs() < 1e-12);
        let rr = row(&[1, 1]);
        assert_eq!(rr.ret, 0.0);
        assert_eq!(rr.jfi, 1.0);
        let ww = row(&[0, 0]);
        assert!((ww.ret - 0.8).abs() < 1e-12);
        assert!((ww.g + 0.1).abs() < 1e-12);
    }

    #[test]
    fn chore_primal() {
        let game = chore();
        assert_eq!(game.profile_label(exact_primal(&game, 0.0)), "work,rest");
        assert_eq!(game.profile_label(exact_primal(&game, 1.0)), "work,work");
    }

    #[test]
    fn chore_dual_ascent_switches_near_one_fifth() {
        let game = chore();
        let res = exact_dual_ascent(&game, &DualAscentConfig { eta: 0.01, ..Default::default() }).unwrap();
        assert_eq!(res.status, AscentStatus::Oscillation);
        let osc = res.oscillation.unwrap();
        assert!((osc.switching_lambda - 0.2).abs() < 1e-9);
        assert!((osc.midpoint - 0.2).abs() < 0.02);
        let cert = res.certificate.unwrap();
        assert_eq!(game.profile_label(cert.pi_star), "work,work");
        assert!(cert.deviation_checked && cert.kkt.satisfied);
    }

    #[test]
    fn inactive_constraint_converges_immediately() {
        let game = chore().with_tau(tau(0.4));
        let res = exact_dual_ascent(&game, &DualAscentConfig::default()).unwrap();
        assert_eq!(res.status, AscentStatus::Converged);
        assert_eq!(res.iterates.len(), 1);
        assert_eq!(res.final_lambda, 0.0);
        assert_eq!(game.profile_label(res.certificate.unwrap().pi_star), "work,rest");
    }

    #[test]
    fn infeasible_threshold_is_reported() {
        // every profile with work is unequal except (work, work), which has JFI 1
        let names = vec![vec!["a".to_string(), "b".to_string()]; 2];
        let values = (0..4).map(|i| ProfileValue { ret: i as f64, workload: vec![1.0 + i as f64, 0.5] }).collect();
        let game = FiniteGame::from_table("unfair", names, tau(0.99), Evaluation::LongRunAverage, values).unwrap();
        assert!(!game.has_feasible_profile());
        let res =
            exact_dual_ascent(&game, &DualAscentConfig { eta: 0.5, lambda_max: 20.0, ..Default::default() }).unwrap();
        assert!(res.infeasible());
        assert_eq!(res.status, AscentStatus::CapReached);
        assert_eq!(res.final_lambda, 20.0);
    }

    #[test]
    fn chore_equilibrium_checks() {
        let game = chore();
        let wr = game.index_of(&[0, 1]).unwrap();
        assert!(matches!(verify_smgne(&game, wr), SmGneVerdict::InfeasibleProfile { .. }));
        let ww = game.index_of(&[0, 0]).unwrap();
        assert!(verify_smgne(&game, ww).is_equilibrium());
        // (rest, rest) is feasible but agent 0 can switch to work while staying... infeasible, so it holds
        let rr = game.index_of(&[1, 1]).unwrap();
        assert!(verify_smgne(&game, rr).is_equilibrium());
    }

    #[test]
    fn deviation_witness() {
        let names = vec![vec!["a".to_string(), "b".to_string()]; 2];
        let values = vec![
            ProfileValue { ret: 1.0, workload: vec![1.0, 1.0] },
            ProfileValue { ret: 2.0, workload: vec![1.0, 1.0] },
            ProfileValue { ret: 0.0, workload: vec![1.0, 1.0] },
            ProfileValue { ret: 0.0, workload: vec![1.0, 1.0] },
        ];
        let game = FiniteGame::from_table("w", names, tau(0.5), Evaluation::LongRunAverage, values).unwrap();
        assert_eq!(verify_smgne(&game, 0), SmGneVerdict::Deviation { agent: 1, policy: 1, gain: 1.0 });
        assert!(verify_smgne(&game, 1).is_equilibrium());
    }

    fn random_game(rng: &mut ChaCha8Rng) -> FiniteGame {
        let n = rng.gen_range(2..=3);
        let names: Vec<Vec<String>> =
            (0..n).map(|_| (0..rng.gen_range(2..=4)).map(|p| format!("p{p}")).collect()).collect();
        let count: usize = names.iter().map(Vec::len).product();
        let values = (0..count)
            .map(|_| ProfileValue {
                ret: rng.gen_range(0.0..1.0),
                workload: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            })
            .collect();
        FiniteGame::from_table("random", names, tau(rng.gen_range(0.5..0.95)), Evaluation::LongRunAverage, values)
            .unwrap()
    }

    #[test]
    fn dual_function_is_convex_and_bounds_feasible_returns() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let game = random_game(&mut rng);
            let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
            for w in grid.windows(3) {
                let mid = game.dual_function(w[1]);
                assert!(mid <= 0.5 * (game.dual_function(w[0]) + game.dual_function(w[2])) + 1e-12);
            }
            let res = exact_dual_ascent(&game, &DualAscentConfig { eta: 0.05, ..Default::default() }).unwrap();
            for it in &res.iterates {
                let d = game.dual_function(it.lambda);
                for row in game.rows().iter().filter(|r| r.feasible()) {
                    assert!(d >= row.ret - 1e-12);
                }
            }
        }
    }

    #[test]
    fn envelope_minimizer_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let game = random_game(&mut rng);
            let star = minimize_dual_on(&game, 0.0, 50.0);
            let d_star = game.dual_function(star);
            for i in 0..5000 {
                let lambda = i as f64 * 0.01;
                assert!(game.dual_function(lambda) >= d_star - 1e-9, "grid point {lambda} beats {star}");
            }
        }
    }

    #[test]
    fn micro_simulator_game() {
        use crate::sim::{SkillPreset, Station};
        let config = EnvConfig {
            n_agents: 2,
            skill_preset: SkillPreset::Uniform,
            start_stations: Some(vec![Station::Bed, Station::CartLeft]),
            ..Default::default()
        };
        let alphabet = [ActionPrimitive::Noop, ActionPrimitive::Pick, ActionPrimitive::Treat];
        let game =
            FiniteGame::from_simulator("micro", config, 1, &alphabet, tau(0.6), 0.9, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(game.n_profiles(), 9);
        let best = exact_primal(&game, 0.0);
        // agent 0 treats at the bed while agent 1 picks the backboard
        assert_eq!(game.profile_label(best), "treat,pick");
        assert_eq!(game.row_at(best).ret, 2.0);
        assert!(verify_smgne(&game, best).is_equilibrium());
    }

    #[test]
    fn slow_ascent_is_finished_on_the_envelope() {
        // the top profile misses the threshold by 1e-6, so steps of eta g barely move lambda
        let names = vec![vec!["a".to_string()], vec!["a".to_string(), "b".to_string()]];
        let values = vec![
            ProfileValue { ret: 2.0, workload: vec![1.0, 0.5] },
            ProfileValue { ret: 0.5, workload: vec![1.0, 1.0] },
        ];
        let t = 0.9 + 1e-6;
        let game = FiniteGame::from_table("slow", names, tau(t), Evaluation::LongRunAverage, values).unwrap();
        let result = exact_dual_ascent(&game, &DualAscentConfig { max_iter: 1000, ..Default::default() }).unwrap();
        assert_eq!(result.status, AscentStatus::MaxIterations);
        assert_eq!(result.best_feasible_seen, None);
        let cert = result.certificate.unwrap();
        assert_eq!(cert.pi_star, 1);
        let g0 = game.row_at(0).g;
        let g1 = game.row_at(1).g;
        assert!((cert.lambda_star - 1.5 / (g0 - g1)).abs() < 1e-9);
    }
}
