//! Tabular temporal-difference learners trained on the shaped team reward.
//!
//! Two backbones share one update rule: a centralized table over joint
//! actions, and independent per-agent tables that all receive the shared team
//! reward. The penalty mode decides how the reward is shaped:
//!
//! * `none`: `r`
//! * `fixed_gini`: `r - lambda * gini(w)` with a constant weight
//! * `fixed_jain`: `r - lambda * (tau - F(w))` with a constant weight
//! * `fair_gne`: the same Jain penalty with `lambda` driven by projected dual
//!   ascent on the observed constraint violation
//!
//! The learner itself never looks inside the environment beyond the state
//! key, the joint action and the scalar reward.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{
    kkt_check, shaped_reward_with, CadencePreset, DualRecord, DualSchedule, DualState, GEstimate, PenaltyForm,
    UpdateUnit, DEFAULT_KKT_EPSILON,
};
use crate::env::{MultiAgentEnv, StateKey};
use crate::error::{Error, Result};
use crate::fairness::{discounted_violation, gini_index, FairnessThreshold};
use crate::stats::{episode_metrics, summarize_metrics, EvalSummary};
use crate::trace::{EpisodeTrace, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Joint-action table for two agents, independent tables otherwise.
    #[default]
    Auto,
    CentralizedJoint,
    Independent,
}

impl Backbone {
    pub fn resolve(self, n_agents: usize) -> Backbone {
        match self {
            Backbone::Auto if n_agents <= 2 => Backbone::CentralizedJoint,
            Backbone::Auto => Backbone::Independent,
            other => other,
        }
    }
}

/// Adaptive-multiplier settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairGneConfig {
    pub tau: FairnessThreshold,
    pub eta_lambda: f64,
    pub lambda_max: f64,
    pub lambda0: f64,
    pub schedule: DualSchedule,
    pub form: PenaltyForm,
    pub kkt_epsilon: f64,
}

impl FairGneConfig {
    pub fn preset(tau: FairnessThreshold, cadence: CadencePreset) -> Self {
        Self {
            tau,
            eta_lambda: cadence.eta_lambda(),
            lambda_max: cadence.lambda_max(),
            lambda0: 0.0,
            schedule: cadence.schedule(),
            form: PenaltyForm::Signed,
            kkt_epsilon: DEFAULT_KKT_EPSILON,
        }
    }
}

impl Default for FairGneConfig {
    fn default() -> Self {
        Self::preset(FairnessThreshold::new(0.85).expect("valid threshold"), CadencePreset::MainText)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PenaltyMode {
    #[default]
    None,
    FixedGini {
        lambda: f64,
    },
    FixedJain {
        lambda: f64,
        tau: FairnessThreshold,
        #[serde(default)]
        form: PenaltyForm,
    },
    FairGne(FairGneConfig),
}

impl PenaltyMode {
    /// Threshold of the fairness constraint this mode enforces, if any.
    pub fn tau(&self) -> Option<FairnessThreshold> {
        match self {
            PenaltyMode::FixedJain { tau, .. } => Some(*tau),
            PenaltyMode::FairGne(c) => Some(c.tau),
            _ => None,
        }
    }

    pub fn initial_lambda(&self) -> f64 {
        match self {
            PenaltyMode::None => 0.0,
            PenaltyMode::FixedGini { lambda } | PenaltyMode::FixedJain { lambda, .. } => *lambda,
            PenaltyMode::FairGne(c) => c.lambda0.clamp(0.0, c.lambda_max),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PenaltyMode::None => "none".into(),
            PenaltyMode::FixedGini { lambda } => format!("gini_{lambda}"),
            PenaltyMode::FixedJain { lambda, tau, .. } => format!("jain_{lambda}_tau{}", tau.value()),
            PenaltyMode::FairGne(c) => format!("fair_gne_tau{}", c.tau.value()),
        }
    }

    /// Shaped reward at multiplier `lambda` for the post-step workload `w` with Jain index `jfi`.
    pub fn shape(&self, r: f64, lambda: f64, w: &[u32], jfi: f64) -> Result<f64> {
        Ok(match self {
            PenaltyMode::None => r,
            PenaltyMode::FixedGini { .. } => r - lambda * gini_index(w)?,
            PenaltyMode::FixedJain { tau, form, .. } => shaped_reward_with(r, lambda, tau.value(), jfi, *form),
            PenaltyMode::FairGne(c) => shaped_reward_with(r, lambda, c.tau.value(), jfi, c.form),
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            PenaltyMode::None => Ok(()),
            PenaltyMode::FixedGini { lambda } | PenaltyMode::FixedJain { lambda, .. } => {
                if lambda.is_finite() && *lambda >= 0.0 {
                    Ok(())
                } else {
                    bad(format!("fixed penalty weight must be finite and nonnegative, got {lambda}"))
                }
            }
            PenaltyMode::FairGne(c) => {
                DualState::new(c.tau, c.eta_lambda, c.lambda_max)?;
                if c.schedule.period == 0 {
                    return bad("dual update period must be at least 1".into());
                }
                if let GEstimate::GreedyRollouts { rollouts: 0 } = c.schedule.estimate {
                    return bad("greedy-rollout estimate needs at least one rollout".into());
                }
                if !(c.lambda0.is_finite() && c.lambda0 >= 0.0) {
                    return bad(format!("initial multiplier must be nonnegative, got {}", c.lambda0));
                }
                Ok(())
            }
        }
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.05, decay_fraction: 0.6 }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize, total: usize) -> f64 {
        let horizon = self.decay_fraction * total as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Which evaluated greedy policy a run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySelection {
    /// The greedy policy at the end of training.
    Final,
    /// The evaluated greedy policy with the highest return among those whose
    /// evaluation episodes all satisfied the fairness threshold; the final
    /// policy if none did. Unconstrained modes treat every policy as feasible.
    #[default]
    BestFeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: EpsilonSchedule,
    pub backbone: Backbone,
    pub penalty: PenaltyMode,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Threshold used for evaluation metrics when the penalty mode has none.
    pub eval_tau: FairnessThreshold,
    pub selection: PolicySelection,
    /// Keep every k-th multiplier update in the history; automatic when unset.
    pub history_stride: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            gamma: 0.99,
            alpha: 0.1,
            epsilon: EpsilonSchedule::default(),
            backbone: Backbone::Auto,
            penalty: PenaltyMode::None,
            eval_every: 500,
            eval_episodes: 10,
            eval_tau: FairnessThreshold::new(0.85).expect("valid threshold"),
            selection: PolicySelection::BestFeasible,
            history_stride: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        let e = &self.epsilon;
        if ![e.start, e.end].iter().all(|x| (0.0..=1.0).contains(x)) || !(0.0..=1.0).contains(&e.decay_fraction) {
            return bad("epsilon schedule values must lie in [0, 1]");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be at least 1");
        }
        if self.history_stride == Some(0) {
            return bad("history_stride must be at least 1");
        }
        self.penalty.validate()
    }

    /// Threshold used by evaluation metrics.
    pub fn metric_tau(&self) -> FairnessThreshold {
        self.penalty.tau().unwrap_or(self.eval_tau)
    }

    fn kkt_epsilon(&self) -> f64 {
        match &self.penalty {
            PenaltyMode::FairGne(c) => c.kkt_epsilon,
            _ => DEFAULT_KKT_EPSILON,
        }
    }
}

/// Tabular action values; unseen keys read as zero.
#[derive(Debug, Clone)]
pub struct QTable {
    mode: Backbone,
    n_agents: usize,
    n_actions: usize,
    width: usize,
    values: HashMap<StateKey, Vec<f64>>,
}

impl QTable {
    pub fn new(backbone: Backbone, n_agents: usize, n_actions: usize) -> Result<Self> {
        let mode = backbone.resolve(n_agents);
        let width = match mode {
            Backbone::CentralizedJoint => u32::try_from(n_agents)
                .ok()
                .and_then(|n| n_actions.checked_pow(n))
                .filter(|&w| w <= 1 << 16)
                .ok_or_else(|| Error::Capacity(format!("joint action space {n_actions}^{n_agents} is too large")))?,
            _ => n_agents * n_actions,
        };
        Ok(Self { mode, n_agents, n_actions, width, values: HashMap::new() })
    }

    pub fn mode(&self) -> Backbone {
        self.mode
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, key: &StateKey) -> Option<&[f64]> {
        self.values.get(key).map(Vec::as_slice)
    }

    fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, &a| acc * self.n_actions + a)
    }

    fn decode_joint(&self, mut index: usize) -> Vec<usize> {
        let mut actions = vec![0; self.n_agents];
        for slot in actions.iter_mut().rev() {
            *slot = index % self.n_actions;
            index /= self.n_actions;
        }
        actions
    }

    /// Greedy joint action from a row, lowest index on ties.
    fn greedy_from_row(&self, row: &[f64]) -> Vec<usize> {
        match self.mode {
            Backbone::CentralizedJoint => self.decode_joint(argmax(row)),
            _ => row.chunks(self.n_actions).map(argmax).collect(),
        }
    }

    /// Greedy joint action, or `None` for an unseen key.
    pub fn greedy(&self, key: &StateKey) -> Option<Vec<usize>> {
        self.values.get(key).map(|row| self.greedy_from_row(row))
    }

    /// Greedy action treating an unseen key as all zeros.
    fn greedy_or_first(&self, key: &StateKey) -> Vec<usize> {
        self.greedy(key).unwrap_or_else(|| vec![0; self.n_agents])
    }

    /// Per-agent bootstrap values: the joint max for a centralized table.
    fn max_values(&self, key: &StateKey) -> Vec<f64> {
        match (self.values.get(key), self.mode) {
            (None, Backbone::CentralizedJoint) => vec![0.0],
            (None, _) => vec![0.0; self.n_agents],
            (Some(row), Backbone::CentralizedJoint) => vec![row.iter().copied().fold(f64::NEG_INFINITY, f64::max)],
            (Some(row), _) => {
                row.chunks(self.n_actions).map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
            }
        }
    }

    /// One-step TD update toward `reward + gamma * max Q(next)` (no bootstrap when `next` is `None`).
    pub fn update(
        &mut self,
        key: StateKey,
        actions: &[usize],
        reward: f64,
        next: Option<&StateKey>,
        gamma: f64,
        alpha: f64,
    ) -> Result<()> {
        let bootstrap = match next {
            Some(k) => self.max_values(k),
            None => vec![0.0; if self.mode == Backbone::CentralizedJoint { 1 } else { self.n_agents }],
        };
        let joint = self.joint_index(actions);
        let (mode, n_actions, width) = (self.mode, self.n_actions, self.width);
        let row = self.values.entry(key).or_insert_with(|| vec![0.0; width]);
        let mut touch = |slot: usize, next_value: f64| -> Result<()> {
            let q = &mut row[slot];
            *q += alpha * (reward + gamma * next_value - *q);
            if q.is_finite() {
                Ok(())
            } else {
                Err(Error::Numerical(format!("non-finite action value at state {key}")))
            }
        };
        match mode {
            Backbone::CentralizedJoint => touch(joint, bootstrap[0]),
            _ => actions.iter().enumerate().try_for_each(|(i, &a)| touch(i * n_actions + a, bootstrap[i])),
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Serializable greedy policy: one joint action per visited state key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyPolicy {
    pub n_agents: usize,
    pub noop_action: usize,
    /// Multiplier in force when the policy was extracted.
    pub lambda: f64,
    pub penalty: PenaltyMode,
    pub tau: FairnessThreshold,
    pub actions: BTreeMap<StateKey, Vec<usize>>,
}

impl GreedyPolicy {
    pub fn from_table(
        q: &QTable,
        noop_action: usize,
        lambda: f64,
        penalty: PenaltyMode,
        tau: FairnessThreshold,
    ) -> Self {
        Self {
            n_agents: q.n_agents,
            noop_action,
            lambda,
            penalty,
            tau,
            actions: q.values.iter().map(|(k, row)| (*k, q.greedy_from_row(row))).collect(),
        }
    }

    /// An empty policy: every state falls back to noop.
    pub fn untrained<E: MultiAgentEnv>(env: &E, tau: FairnessThreshold) -> Self {
        Self {
            n_agents: env.n_agents(),
            noop_action: env.noop_action(),
            lambda: 0.0,
            penalty: PenaltyMode::None,
            tau,
            actions: BTreeMap::new(),
        }
    }

    pub fn act(&self, key: &StateKey) -> Option<&[usize]> {
        self.actions.get(key).map(Vec::as_slice)
    }
}

/// A rollout with actions chosen by `choose`; `None` means every agent falls back to noop.
fn rollout_with<E, F>(
    env: &E,
    seed: u64,
    mode: &PenaltyMode,
    lambda: f64,
    tau: FairnessThreshold,
    mut choose: F,
) -> Result<EpisodeTrace>
where
    E: MultiAgentEnv,
    F: FnMut(&StateKey) -> Option<Vec<usize>>,
{
    let n = env.n_agents();
    let mut state = env.reset(seed);
    let mut steps = Vec::new();
    let mut success = false;
    for t in 0.. {
        let key = env.state_key(&state);
        let (actions, fallback_agents) = match choose(&key) {
            Some(a) => (a, Vec::new()),
            None => (vec![env.noop_action(); n], (0..n).collect()),
        };
        let positions = env.position_labels(&state);
        let tr = env.step(&state, &actions)?;
        let shaped = mode.shape(tr.reward, lambda, env.workload(&tr.next), tr.fairness)?;
        steps.push(StepRecord {
            t,
            positions,
            actions: actions.iter().map(|&a| env.action_label(a).to_string()).collect(),
            team_reward: tr.reward,
            shaped_reward: shaped,
            jfi: tr.fairness,
            g: tau.value() - tr.fairness,
            lambda,
            fallback_agents,
        });
        success = tr.success;
        state = tr.next;
        if tr.done {
            break;
        }
    }
    Ok(EpisodeTrace {
        seed,
        tau: tau.value(),
        steps,
        final_workload: env.workload(&state).to_vec(),
        final_potential: env.potential(&state),
        max_potential: env.max_potential(),
        success,
    })
}

/// Epsilon-free rollout of `policy`; unseen states fall back to noop and are flagged in the trace.
pub fn greedy_rollout<E: MultiAgentEnv>(policy: &GreedyPolicy, env: &E, seed: u64) -> Result<EpisodeTrace> {
    if policy.n_agents != env.n_agents() {
        return Err(Error::Interface(format!(
            "policy for {} agents used with a {}-agent environment",
            policy.n_agents,
            env.n_agents()
        )));
    }
    rollout_with(env, seed, &policy.penalty, policy.lambda, policy.tau, |k| policy.act(k).map(<[usize]>::to_vec))
}

/// Mean discounted violation over a set of traces.
pub fn mean_discounted_violation(traces: &[EpisodeTrace], tau: FairnessThreshold, gamma: f64) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Domain("constraint estimate needs at least one rollout".into()));
    }
    let total = traces.iter().map(|t| discounted_violation(t, tau, gamma)).sum::<Result<f64>>()?;
    Ok(total / traces.len() as f64)
}

/// Monte Carlo estimate of the discounted violation from one greedy rollout per seed.
pub fn estimate_constraint<E: MultiAgentEnv>(
    policy: &GreedyPolicy,
    env: &E,
    seeds: &[u64],
    gamma: f64,
    tau: FairnessThreshold,
) -> Result<f64> {
    let traces = seeds.iter().map(|&s| greedy_rollout(policy, env, s)).collect::<Result<Vec<_>>>()?;
    mean_discounted_violation(&traces, tau, gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Training episodes completed.
    pub episode: usize,
    pub env_steps: u64,
    pub epsilon: f64,
    pub lambda: f64,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub seed: u64,
    pub backbone: Backbone,
    pub evaluations: Vec<EvalPoint>,
    /// Multiplier trajectory (thinned by the history stride); empty without a dual variable.
    pub lambda_history: Vec<DualRecord>,
    pub final_lambda: f64,
    pub env_steps: u64,
    pub n_states: usize,
    /// Evaluation index whose policy is reported, `None` for the final policy.
    pub selected_evaluation: Option<usize>,
    pub policy: GreedyPolicy,
}

impl TrainReport {
    pub fn final_evaluation(&self) -> Option<&EvalPoint> {
        self.evaluations.last()
    }

    pub fn selected(&self) -> Option<&EvalPoint> {
        self.selected_evaluation.map(|i| &self.evaluations[i])
    }
}

struct DualDriver {
    state: DualState,
    schedule: DualSchedule,
    stride: usize,
    history: Vec<DualRecord>,
    pending_steps: usize,
    pending_episodes: usize,
    statewise_sum: f64,
    statewise_count: usize,
    episode_sum: f64,
    episode_count: usize,
}

impl DualDriver {
    fn new(c: &FairGneConfig, stride: Option<usize>) -> Result<Self> {
        let mut state = DualState::new(c.tau, c.eta_lambda, c.lambda_max)?
            .with_lambda(c.lambda0)
            .with_update_period(c.schedule.period);
        state.kkt_epsilon = c.kkt_epsilon;
        state.record_history = false;
        let auto =
            if c.schedule.unit == UpdateUnit::EnvSteps && c.schedule.period < 50 { 50 / c.schedule.period } else { 1 };
        Ok(Self {
            state,
            schedule: c.schedule,
            stride: stride.unwrap_or(auto),
            history: Vec::new(),
            pending_steps: 0,
            pending_episodes: 0,
            statewise_sum: 0.0,
            statewise_count: 0,
            episode_sum: 0.0,
            episode_count: 0,
        })
    }

    fn apply(&mut self, g: f64) -> Result<()> {
        self.state.update(g)?;
        if self.state.iteration.is_multiple_of(self.stride as u64) {
            let kkt = kkt_check(self.state.lambda, g, self.state.kkt_epsilon);
            self.history.push(DualRecord {
                iteration: self.state.iteration,
                lambda: self.state.lambda,
                g_estimate: g,
                residual: kkt.residual,
                satisfied: kkt.satisfied,
            });
        }
        self.statewise_sum = 0.0;
        self.statewise_count = 0;
        self.episode_sum = 0.0;
        self.episode_count = 0;
        Ok(())
    }

    /// The estimate for the current update, or `None` when there is nothing to estimate from.
    fn estimate<F: FnMut(usize) -> Result<f64>>(&self, mut rollouts: F) -> Result<Option<f64>> {
        let statewise = (self.statewise_count > 0).then(|| self.statewise_sum / self.statewise_count as f64);
        Ok(match self.schedule.estimate {
            GEstimate::Statewise => statewise,
            GEstimate::TrainingEpisodes => {
                (self.episode_count > 0).then(|| self.episode_sum / self.episode_count as f64).or(statewise)
            }
            GEstimate::GreedyRollouts { rollouts: m } => Some(rollouts(m)?),
        })
    }
}

/// Trains on `env` and returns the evaluation history with the selected greedy policy.
pub fn train<E: MultiAgentEnv>(env: &E, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = env.n_agents();
    let n_actions = env.n_actions();
    let mut q = QTable::new(cfg.backbone, n, n_actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tau = cfg.metric_tau();
    let mut dual = match &cfg.penalty {
        PenaltyMode::FairGne(c) => Some(DualDriver::new(c, cfg.history_stride)?),
        _ => None,
    };
    let fixed_lambda = cfg.penalty.initial_lambda();
    let lambda_of = |dual: &Option<DualDriver>| dual.as_ref().map_or(fixed_lambda, |d| d.state.lambda);

    let mut evaluations = Vec::new();
    let mut best: Option<(usize, bool, f64, GreedyPolicy)> = None;
    let mut env_steps: u64 = 0;
    let mut eval_round: u64 = 0;
    let eval_seed =
        |round: u64, i: usize| cfg.seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(round + 1).wrapping_add(i as u64);

    for episode in 0..cfg.episodes {
        let epsilon = cfg.epsilon.value(episode, cfg.episodes);
        let mut state = env.reset(rng.gen());
        let mut discount = 1.0;
        let mut episode_g = 0.0;
        loop {
            let key = env.state_key(&state);
            let actions = explore(&q, &key, epsilon, n, n_actions, &mut rng);
            let tr = env.step(&state, &actions)?;
            env_steps += 1;
            let lambda = lambda_of(&dual);
            let shaped = cfg.penalty.shape(tr.reward, lambda, env.workload(&tr.next), tr.fairness)?;
            let next_key = env.state_key(&tr.next);
            let terminal = tr.done && tr.success;
            q.update(key, &actions, shaped, (!terminal).then_some(&next_key), cfg.gamma, cfg.alpha)?;

            if let Some(d) = dual.as_mut() {
                let g = d.state.tau.value() - tr.fairness;
                d.statewise_sum += g;
                d.statewise_count += 1;
                episode_g += discount * g;
                if tr.done {
                    d.episode_sum += episode_g;
                    d.episode_count += 1;
                }
                if d.schedule.unit == UpdateUnit::EnvSteps {
                    d.pending_steps += 1;
                    if d.pending_steps >= d.schedule.period {
                        d.pending_steps = 0;
                        let dtau = d.state.tau;
                        if let Some(g) =
                            d.estimate(|m| greedy_estimate(env, &q, &cfg.penalty, lambda, dtau, cfg.gamma, m))?
                        {
                            d.apply(g)?;
                        }
                    }
                }
            }
            discount *= cfg.gamma;
            state = tr.next;
            if tr.done {
                break;
            }
        }

        if let Some(d) = dual.as_mut().filter(|d| d.schedule.unit == UpdateUnit::Episodes) {
            d.pending_episodes += 1;
            if d.pending_episodes >= d.schedule.period {
                d.pending_episodes = 0;
                let (lambda, dtau) = (d.state.lambda, d.state.tau);
                if let Some(g) = d.estimate(|m| greedy_estimate(env, &q, &cfg.penalty, lambda, dtau, cfg.gamma, m))? {
                    d.apply(g)?;
                }
            }
        }

        let done_episodes = episode + 1;
        if done_episodes % cfg.eval_every == 0 || done_episodes == cfg.episodes {
            let lambda = lambda_of(&dual);
            let metrics = (0..cfg.eval_episodes)
                .map(|i| {
                    let trace =
                        rollout_with(env, eval_seed(eval_round, i), &cfg.penalty, lambda, tau, |k| q.greedy(k))?;
                    episode_metrics(&trace, tau, cfg.gamma, cfg.kkt_epsilon())
                })
                .collect::<Result<Vec<_>>>()?;
            eval_round += 1;
            let summary = summarize_metrics(&metrics)?;
            let feasible = cfg.penalty.tau().is_none() || summary.constraint_sat_rate >= 1.0;
            let index = evaluations.len();
            let better = match &best {
                None => true,
                Some((_, bf, br, _)) => (feasible, summary.mean_return) >= (*bf, *br),
            };
            if cfg.selection == PolicySelection::BestFeasible && better {
                let policy = GreedyPolicy::from_table(&q, env.noop_action(), lambda, cfg.penalty, tau);
                best = Some((index, feasible, summary.mean_return, policy));
            }
            evaluations.push(EvalPoint { episode: done_episodes, env_steps, epsilon, lambda, summary });
        }
    }

    let final_lambda = lambda_of(&dual);
    let (selected_evaluation, policy) = match best {
        Some((index, true, _, policy)) => (Some(index), policy),
        _ => (None, GreedyPolicy::from_table(&q, env.noop_action(), final_lambda, cfg.penalty, tau)),
    };
    Ok(TrainReport {
        method: cfg.penalty.label(),
        seed: cfg.seed,
        backbone: q.mode(),
        evaluations,
        lambda_history: dual.map(|d| d.history).unwrap_or_default(),
        final_lambda,
        env_steps,
        n_states: q.n_states(),
        selected_evaluation,
        policy,
    })
}

fn explore(q: &QTable, key: &StateKey, epsilon: f64, n: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match q.mode() {
        Backbone::CentralizedJoint => {
            if rng.gen::<f64>() < epsilon {
                (0..n).map(|_| rng.gen_range(0..n_actions)).collect()
            } else {
                q.greedy_or_first(key)
            }
        }
        _ => {
            let greedy = q.greedy_or_first(key);
            greedy
                .into_iter()
                .map(|a| if rng.gen::<f64>() < epsilon { rng.gen_range(0..n_actions) } else { a })
                .collect()
        }
    }
}

fn greedy_estimate<E: MultiAgentEnv>(
    env: &E,
    q: &QTable,
    mode: &PenaltyMode,
    lambda: f64,
    tau: FairnessThreshold,
    gamma: f64,
    rollouts: usize,
) -> Result<f64> {
    let traces = (0..rollouts as u64)
        .map(|s| rollout_with(env, s, mode, lambda, tau, |k| q.greedy(k)))
        .collect::<Result<Vec<_>>>()?;
    mean_discounted_violation(&traces, tau, gamma)
}
