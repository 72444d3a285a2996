//! Symbolic rescue-breath resuscitation simulator.
//!
//! Agents move on a ring of six stations, fetch the backboard and the
//! bag-valve mask, and treat the patient at the bed. Progress is measured by
//! an integer milestone potential `H`; the team reward is its increment, and
//! every increment is credited to the agent whose action caused it.
//!
//! Joint actions resolve sequentially in agent-index order, so conflicting
//! picks go to the lowest index. Invalid primitives resolve as `noop`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{MultiAgentEnv, StateKey, Transition};
use crate::error::{Error, Result};
use crate::fairness::jain_index;

/// Stations in ring order; `move` advances one step clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Station {
    CartLeft,
    CartRight,
    Table,
    CartSmall,
    PatientLegs,
    Bed,
}

impl Station {
    pub const ALL: [Station; 6] =
        [Station::CartLeft, Station::CartRight, Station::Table, Station::CartSmall, Station::PatientLegs, Station::Bed];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> Station {
        Self::ALL[(self.index() + 1) % Self::ALL.len()]
    }

    pub fn name(self) -> &'static str {
        match self {
            Station::CartLeft => "cart_left",
            Station::CartRight => "cart_right",
            Station::Table => "table",
            Station::CartSmall => "cart_small",
            Station::PatientLegs => "patient_legs",
            Station::Bed => "bed",
        }
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Item {
    Backboard,
    Bvm,
}

impl Item {
    pub const ALL: [Item; 2] = [Item::Backboard, Item::Bvm];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Where an item currently is. The backboard becomes `Placed` once stacked
/// under the patient and never moves again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemLocation {
    At(Station),
    HeldBy(usize),
    Placed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionPrimitive {
    Move,
    Pick,
    Place,
    Stack,
    Treat,
    CompressChest,
    GiveRescueBreaths,
    Noop,
}

impl ActionPrimitive {
    pub const ALL: [ActionPrimitive; 8] = [
        ActionPrimitive::Move,
        ActionPrimitive::Pick,
        ActionPrimitive::Place,
        ActionPrimitive::Stack,
        ActionPrimitive::Treat,
        ActionPrimitive::CompressChest,
        ActionPrimitive::GiveRescueBreaths,
        ActionPrimitive::Noop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Interface(format!("action index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionPrimitive::Move => "move",
            ActionPrimitive::Pick => "pick",
            ActionPrimitive::Place => "place",
            ActionPrimitive::Stack => "stack",
            ActionPrimitive::Treat => "treat",
            ActionPrimitive::CompressChest => "compress_chest",
            ActionPrimitive::GiveRescueBreaths => "give_rescue_breaths",
            ActionPrimitive::Noop => "noop",
        }
    }
}

impl fmt::Display for ActionPrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Capability flags: `setup` gates pick/place/stack, `treatment` gates
/// treat/compress/breaths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Skills {
    pub setup: bool,
    pub treatment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SkillPreset {
    /// Agent 0 setup-only; every other agent has both skills.
    #[default]
    Heterogeneous,
    /// Every agent has both skills.
    Uniform,
    /// Taken from `EnvConfig::skills`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(rename = "n")]
    pub n_agents: usize,
    #[serde(rename = "c_required")]
    pub compressions_required: u32,
    #[serde(rename = "b_required")]
    pub breaths_required: u32,
    pub horizon: usize,
    pub energy_max: u32,
    pub energy_enabled: bool,
    pub skill_preset: SkillPreset,
    /// Per-agent skills, required when `skill_preset = "custom"`.
    pub skills: Option<Vec<Skills>>,
    /// Per-agent start stations; defaults to [`default_start_stations`].
    pub start_stations: Option<Vec<Station>>,
    /// Draw start stations from the reset seed instead.
    pub randomize_start: bool,
    /// Append the workload counters to the tabular state key.
    pub workload_in_key: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            compressions_required: 3,
            breaths_required: 2,
            horizon: 50,
            energy_max: 2,
            energy_enabled: true,
            skill_preset: SkillPreset::Heterogeneous,
            skills: None,
            start_stations: None,
            randomize_start: false,
            workload_in_key: false,
        }
    }
}

/// Default start layout: agent 0 beside the backboard, agent 1 at the bed,
/// agent 2 beside the bag-valve mask, further agents at the table.
pub fn default_start_stations(n: usize) -> Vec<Station> {
    (0..n)
        .map(|i| match i {
            0 => Station::CartLeft,
            1 => Station::Bed,
            2 => Station::CartRight,
            _ => Station::Table,
        })
        .collect()
}

pub const MAX_AGENTS: usize = 8;

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_agents < 2 || self.n_agents > MAX_AGENTS {
            return bad(format!("n must lie in 2..={MAX_AGENTS}, got {}", self.n_agents));
        }
        if self.compressions_required < 1 || self.breaths_required < 1 {
            return bad("c_required and b_required must be at least 1".into());
        }
        if self.compressions_required + self.breaths_required > 200 {
            return bad("c_required + b_required must not exceed 200".into());
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.energy_enabled && (self.energy_max < 1 || self.energy_max > 255) {
            return bad("energy_max must lie in 1..=255 when energy is enabled".into());
        }
        if let Some(s) = &self.start_stations {
            if s.len() != self.n_agents {
                return bad(format!("start_stations has {} entries for {} agents", s.len(), self.n_agents));
            }
        }
        match (self.skill_preset, &self.skills) {
            (SkillPreset::Custom, None) => return bad("skill_preset custom requires skills".into()),
            (SkillPreset::Custom, Some(s)) if s.len() != self.n_agents => {
                return bad(format!("skills has {} entries for {} agents", s.len(), self.n_agents));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn max_potential(&self) -> u32 {
        4 + self.compressions_required + self.breaths_required
    }

    pub fn agent_skills(&self) -> Vec<Skills> {
        let both = Skills { setup: true, treatment: true };
        match self.skill_preset {
            SkillPreset::Heterogeneous => (0..self.n_agents)
                .map(|i| if i == 0 { Skills { setup: true, treatment: false } } else { both })
                .collect(),
            SkillPreset::Uniform => vec![both; self.n_agents],
            SkillPreset::Custom => self.skills.clone().unwrap_or_default(),
        }
    }
}

/// Per-agent validated task completions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorkloadVector(pub Vec<u32>);

impl WorkloadVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub station: Station,
    pub held: Option<Item>,
    pub energy: u32,
    pub skills: Skills,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimState {
    pub agents: Vec<AgentState>,
    pub items: [ItemLocation; 2],
    pub backboard_placed: bool,
    pub patient_assessed: bool,
    pub compressions_done: u32,
    pub breaths_done: u32,
    pub backboard_held_once: bool,
    pub bvm_held_once: bool,
    pub t: usize,
    pub workload: WorkloadVector,
    pub done: bool,
}

/// Milestone potential `H`: assessment, backboard held, backboard placed,
/// each compression, BVM held, each breath.
pub fn milestone_potential(state: &SimState) -> u32 {
    u32::from(state.patient_assessed)
        + u32::from(state.backboard_held_once)
        + u32::from(state.backboard_placed)
        + state.compressions_done
        + u32::from(state.bvm_held_once)
        + state.breaths_done
}

/// Tabular key over stations, energies, item locations, milestone flags and
/// counters. Time and workload are not part of it.
pub fn encode_state_key(state: &SimState) -> StateKey {
    let mut bytes = Vec::with_capacity(32);
    push_core_key(state, &mut bytes);
    // n is bounded by MAX_AGENTS so the core key always fits
    StateKey::from_bytes(&bytes).expect("core state key fits in 32 bytes")
}

fn push_core_key(state: &SimState, bytes: &mut Vec<u8>) {
    for a in &state.agents {
        bytes.push(a.station.index() as u8);
        bytes.push(a.energy as u8);
    }
    for loc in state.items {
        bytes.push(match loc {
            ItemLocation::At(s) => s.index() as u8,
            ItemLocation::Placed => 6,
            ItemLocation::HeldBy(i) => 7 + i as u8,
        });
    }
    bytes.push(u8::from(state.patient_assessed) | u8::from(state.backboard_placed) << 1);
    bytes.push(state.compressions_done as u8);
    bytes.push(state.breaths_done as u8);
}

impl SimState {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Structural invariants; used by tests and debug assertions.
    pub fn check_invariants(&self, config: &EnvConfig) -> Result<()> {
        let fail = |m: &str| Err(Error::Domain(format!("state invariant violated: {m}")));
        if self.compressions_done > config.compressions_required || self.breaths_done > config.breaths_required {
            return fail("counter above requirement");
        }
        if self.breaths_done > 0 && self.compressions_done != config.compressions_required {
            return fail("breaths before compressions complete");
        }
        if self.compressions_done > 0 && !self.backboard_placed {
            return fail("compressions without backboard");
        }
        if self.backboard_placed != (self.items[Item::Backboard.index()] == ItemLocation::Placed) {
            return fail("backboard flag disagrees with its location");
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.energy > config.energy_max {
                return fail("energy above capacity");
            }
            let held_here: Vec<Item> =
                Item::ALL.into_iter().filter(|it| self.items[it.index()] == ItemLocation::HeldBy(i)).collect();
            if held_here.len() > 1 || held_here.first().copied() != a.held {
                return fail("held item disagrees with item location");
            }
        }
        if self.workload.total() != milestone_potential(self) {
            return fail("workload total differs from potential");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: SimState,
    pub team_reward: f64,
    pub workload_delta: Vec<u32>,
    pub done: bool,
    pub success: bool,
    pub fairness_value: f64,
    /// The primitive that actually took effect per agent (invalid ones become `noop`).
    pub resolved: Vec<ActionPrimitive>,
}

/// The rescue-breath environment for a validated configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: EnvConfig,
    skills: Vec<Skills>,
}

impl Simulator {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let skills = config.agent_skills();
        Ok(Self { config, skills })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn max_potential(&self) -> u32 {
        self.config.max_potential()
    }

    pub fn reset(&self, seed: u64) -> SimState {
        let n = self.config.n_agents;
        let starts = if self.config.randomize_start {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| Station::ALL[rng.gen_range(0..Station::ALL.len())]).collect()
        } else {
            self.config.start_stations.clone().unwrap_or_else(|| default_start_stations(n))
        };
        let energy = if self.config.energy_enabled { self.config.energy_max } else { 0 };
        SimState {
            agents: starts
                .into_iter()
                .zip(&self.skills)
                .map(|(station, &skills)| AgentState { station, held: None, energy, skills })
                .collect(),
            items: [ItemLocation::At(Station::CartLeft), ItemLocation::At(Station::CartRight)],
            backboard_placed: false,
            patient_assessed: false,
            compressions_done: 0,
            breaths_done: 0,
            backboard_held_once: false,
            bvm_held_once: false,
            t: 0,
            workload: WorkloadVector::zeros(n),
            done: false,
        }
    }

    fn check_agent(&self, state: &SimState, agent: usize) -> Result<()> {
        if agent >= state.n_agents() {
            return Err(Error::Interface(format!("agent {agent} out of range for {} agents", state.n_agents())));
        }
        Ok(())
    }

    /// Whether `action` would take effect for `agent` in `state`, ignoring
    /// what other agents do in the same step.
    pub fn is_effective(&self, state: &SimState, agent: usize, action: ActionPrimitive) -> bool {
        let a = &state.agents[agent];
        let at_bed = a.station == Station::Bed;
        match action {
            ActionPrimitive::Move | ActionPrimitive::Noop => true,
            ActionPrimitive::Pick => {
                a.skills.setup
                    && a.held.is_none()
                    && Item::ALL.iter().any(|it| state.items[it.index()] == ItemLocation::At(a.station))
            }
            ActionPrimitive::Place => a.skills.setup && a.held.is_some(),
            ActionPrimitive::Stack => {
                a.skills.setup && at_bed && a.held == Some(Item::Backboard) && !state.backboard_placed
            }
            ActionPrimitive::Treat => a.skills.treatment && at_bed && !state.patient_assessed,
            ActionPrimitive::CompressChest => {
                a.skills.treatment
                    && at_bed
                    && state.backboard_placed
                    && state.compressions_done < self.config.compressions_required
                    && (!self.config.energy_enabled || a.energy >= 1)
            }
            ActionPrimitive::GiveRescueBreaths => {
                a.skills.treatment
                    && at_bed
                    && a.held == Some(Item::Bvm)
                    && state.compressions_done == self.config.compressions_required
                    && state.breaths_done < self.config.breaths_required
            }
        }
    }

    /// Primitives whose preconditions hold for `agent`; always includes
    /// `move` and `noop`.
    pub fn legal_actions(&self, state: &SimState, agent: usize) -> Result<Vec<ActionPrimitive>> {
        self.check_agent(state, agent)?;
        Ok(ActionPrimitive::ALL.into_iter().filter(|&a| self.is_effective(state, agent, a)).collect())
    }

    /// Applies `action` for `agent` in place. Returns whether the action took
    /// effect and whether it advanced the potential.
    fn apply(&self, s: &mut SimState, agent: usize, action: ActionPrimitive) -> (bool, bool) {
        if !self.is_effective(s, agent, action) {
            return (false, false);
        }
        let station = s.agents[agent].station;
        let mut advanced = false;
        match action {
            ActionPrimitive::Move => s.agents[agent].station = station.next(),
            ActionPrimitive::Pick => {
                let item = Item::ALL
                    .into_iter()
                    .find(|it| s.items[it.index()] == ItemLocation::At(station))
                    .expect("checked by is_effective");
                s.items[item.index()] = ItemLocation::HeldBy(agent);
                s.agents[agent].held = Some(item);
                let first = match item {
                    Item::Backboard => &mut s.backboard_held_once,
                    Item::Bvm => &mut s.bvm_held_once,
                };
                advanced = !*first;
                *first = true;
            }
            ActionPrimitive::Place => {
                let item = s.agents[agent].held.take().expect("checked by is_effective");
                s.items[item.index()] = ItemLocation::At(station);
            }
            ActionPrimitive::Stack => {
                s.agents[agent].held = None;
                s.items[Item::Backboard.index()] = ItemLocation::Placed;
                s.backboard_placed = true;
                advanced = true;
            }
            ActionPrimitive::Treat => {
                s.patient_assessed = true;
                advanced = true;
            }
            ActionPrimitive::CompressChest => {
                if self.config.energy_enabled {
                    s.agents[agent].energy -= 1;
                }
                s.compressions_done += 1;
                advanced = true;
            }
            ActionPrimitive::GiveRescueBreaths => {
                s.breaths_done += 1;
                advanced = true;
            }
            ActionPrimitive::Noop => {}
        }
        (true, advanced)
    }

    pub fn step(&self, state: &SimState, joint_action: &[ActionPrimitive]) -> Result<StepOutcome> {
        let n = state.n_agents();
        if joint_action.len() != n {
            return Err(Error::Interface(format!("expected {n} actions, got {}", joint_action.len())));
        }
        if state.done || state.t >= self.config.horizon {
            return Err(Error::Lifecycle(format!("episode already finished at t = {}", state.t)));
        }
        let before = milestone_potential(state);
        let mut next = state.clone();
        let mut delta = vec![0u32; n];
        let mut resolved = Vec::with_capacity(n);
        for (i, &action) in joint_action.iter().enumerate() {
            let (effective, advanced) = self.apply(&mut next, i, action);
            resolved.push(if effective { action } else { ActionPrimitive::Noop });
            delta[i] = u32::from(advanced);
        }
        if self.config.energy_enabled {
            for (agent, action) in next.agents.iter_mut().zip(&resolved) {
                if *action != ActionPrimitive::CompressChest {
                    agent.energy = (agent.energy + 1).min(self.config.energy_max);
                }
            }
        }
        for (w, d) in next.workload.0.iter_mut().zip(&delta) {
            *w += d;
        }
        next.t += 1;
        let after = milestone_potential(&next);
        let success = after == self.max_potential();
        next.done = success || next.t >= self.config.horizon;
        let fairness_value = jain_index(next.workload.as_slice())?;
        Ok(StepOutcome {
            team_reward: f64::from(after - before),
            workload_delta: delta,
            done: next.done,
            success,
            fairness_value,
            resolved,
            next_state: next,
        })
    }

    pub fn state_key(&self, state: &SimState) -> StateKey {
        if !self.config.workload_in_key {
            return encode_state_key(state);
        }
        let mut bytes = Vec::with_capacity(32);
        push_core_key(state, &mut bytes);
        bytes.extend(state.workload.0.iter().map(|&w| w.min(255) as u8));
        StateKey::from_bytes(&bytes).expect("workload key fits for n <= MAX_AGENTS")
    }
}

impl MultiAgentEnv for Simulator {
    type State = SimState;

    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn n_actions(&self) -> usize {
        ActionPrimitive::ALL.len()
    }

    fn noop_action(&self) -> usize {
        ActionPrimitive::Noop.index()
    }

    fn reset(&self, seed: u64) -> SimState {
        Simulator::reset(self, seed)
    }

    fn step(&self, state: &SimState, actions: &[usize]) -> Result<Transition<SimState>> {
        let joint = actions.iter().map(|&a| ActionPrimitive::from_index(a)).collect::<Result<Vec<_>>>()?;
        let out = Simulator::step(self, state, &joint)?;
        Ok(Transition {
            next: out.next_state,
            reward: out.team_reward,
            done: out.done,
            success: out.success,
            fairness: out.fairness_value,
        })
    }

    fn state_key(&self, state: &SimState) -> StateKey {
        Simulator::state_key(self, state)
    }

    fn workload<'a>(&self, state: &'a SimState) -> &'a [u32] {
        state.workload.as_slice()
    }

    fn potential(&self, state: &SimState) -> u32 {
        milestone_potential(state)
    }

    fn max_potential(&self) -> u32 {
        self.config.max_potential()
    }

    fn action_label(&self, action: usize) -> &'static str {
        ActionPrimitive::ALL.get(action).map_or("?", |a| a.name())
    }

    fn position_labels(&self, state: &SimState) -> Vec<String> {
        state.agents.iter().map(|a| a.station.name().to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActionPrimitive::*;

    fn sim() -> Simulator {
        Simulator::new(EnvConfig::default()).unwrap()
    }

    #[test]
    fn reset_defaults() {
        let s = sim().reset(0);
        assert_eq!(s.n_agents(), 3);
        assert_eq!(milestone_potential(&s), 0);
        assert_eq!(s.workload.as_slice(), &[0, 0, 0]);
        assert!(s.agents.iter().all(|a| a.held.is_none() && a.energy == 2));
        assert_eq!(s.items, [ItemLocation::At(Station::CartLeft), ItemLocation::At(Station::CartRight)]);

        let two = Simulator::new(EnvConfig { n_agents: 2, ..Default::default() }).unwrap();
        assert_eq!(two.reset(0).workload.as_slice(), &[0, 0]);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            EnvConfig { compressions_required: 0, ..Default::default() },
            EnvConfig { breaths_required: 0, ..Default::default() },
            EnvConfig { n_agents: 1, ..Default::default() },
            EnvConfig { horizon: 0, ..Default::default() },
            EnvConfig { skill_preset: SkillPreset::Custom, ..Default::default() },
            EnvConfig { start_stations: Some(vec![Station::Bed]), ..Default::default() },
        ] {
            assert!(matches!(Simulator::new(cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn ring_wraps() {
        assert_eq!(Station::Bed.next(), Station::CartLeft);
        let mut s = Station::Table;
        for _ in 0..6 {
            s = s.next();
        }
        assert_eq!(s, Station::Table);
    }

    fn full_state(c: u32, b: u32) -> SimState {
        let mut s = sim().reset(0);
        s.patient_assessed = true;
        s.backboard_held_once = true;
        s.backboard_placed = true;
        s.items[0] = ItemLocation::Placed;
        s.compressions_done = c;
        s.bvm_held_once = true;
        s.breaths_done = b;
        s
    }

    #[test]
    fn potential_ledger() {
        assert_eq!(milestone_potential(&full_state(3, 2)), 9);
        assert_eq!(sim().max_potential(), 9);
        let mut s = sim().reset(0);
        s.backboard_held_once = true;
        assert_eq!(milestone_potential(&s), 1);
    }

    #[test]
    fn noop_step() {
        let sim = sim();
        let out = sim.step(&sim.reset(0), &[Noop, Noop, Noop]).unwrap();
        assert_eq!(out.team_reward, 0.0);
        assert_eq!(out.workload_delta, vec![0, 0, 0]);
        assert_eq!(out.fairness_value, 1.0);
        assert!(!out.done);
    }

    #[test]
    fn pick_backboard_credits_agent_zero() {
        let sim = sim();
        let s = sim.reset(0);
        assert_eq!(s.agents[0].station, Station::CartLeft);
        let out = sim.step(&s, &[Pick, Noop, Noop]).unwrap();
        assert_eq!(out.team_reward, 1.0);
        assert_eq!(out.workload_delta, vec![1, 0, 0]);
        assert_eq!(out.next_state.agents[0].held, Some(Item::Backboard));
        assert!((out.fairness_value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn simultaneous_pick_goes_to_lowest_index() {
        let cfg = EnvConfig {
            n_agents: 2,
            skill_preset: SkillPreset::Uniform,
            start_stations: Some(vec![Station::CartLeft, Station::CartLeft]),
            ..Default::default()
        };
        let sim = Simulator::new(cfg).unwrap();
        let s = sim.reset(0);
        // every two-agent combination of pick with any other primitive
        for other in ActionPrimitive::ALL {
            let out = sim.step(&s, &[Pick, other]).unwrap();
            assert_eq!(out.next_state.agents[0].held, Some(Item::Backboard));
            assert_eq!(out.workload_delta[0], 1);
            if other == Pick {
                assert_eq!(out.resolved[1], Noop);
                assert_eq!(out.next_state.agents[1].held, None);
            }
            let out = sim.step(&s, &[other, Pick]).unwrap();
            if other == Pick {
                assert_eq!(out.next_state.agents[0].held, Some(Item::Backboard));
                assert_eq!(out.resolved[1], Noop);
            } else {
                assert_eq!(out.next_state.agents[1].held, Some(Item::Backboard));
            }
        }
    }

    #[test]
    fn legal_action_sets() {
        let sim = sim();
        let s = sim.reset(0);
        for i in 0..3 {
            let legal = sim.legal_actions(&s, i).unwrap();
            assert!(legal.contains(&Noop) && legal.contains(&Move));
            assert!(!legal.contains(&CompressChest));
        }
        assert!(sim.legal_actions(&s, 3).is_err());

        let mut s = full_state(3, 0);
        s.agents[1].held = Some(Item::Bvm);
        s.items[1] = ItemLocation::HeldBy(1);
        assert_eq!(s.agents[1].station, Station::Bed);
        let legal = sim.legal_actions(&s, 1).unwrap();
        assert!(legal.contains(&GiveRescueBreaths));
        assert!(!legal.contains(&Pick));
    }

    #[test]
    fn skills_gate_primitives() {
        let sim = sim();
        let mut s = sim.reset(0);
        s.agents[0].station = Station::Bed;
        let out = sim.step(&s, &[Treat, Noop, Noop]).unwrap();
        assert_eq!(out.resolved[0], Noop);
        assert_eq!(out.team_reward, 0.0);
        let out = sim.step(&s, &[Noop, Treat, Treat]).unwrap();
        assert_eq!(out.workload_delta, vec![0, 1, 0]);
    }

    #[test]
    fn energy_limits_compressions() {
        let cfg = EnvConfig { compressions_required: 5, ..Default::default() };
        let sim = Simulator::new(cfg).unwrap();
        let mut s = sim.reset(0);
        s.backboard_held_once = true;
        s.backboard_placed = true;
        s.items[0] = ItemLocation::Placed;
        s.workload.0 = vec![2, 0, 0];
        let mut compressed = Vec::new();
        for _ in 0..4 {
            let out = sim.step(&s, &[Noop, CompressChest, Noop]).unwrap();
            compressed.push(out.resolved[1] == CompressChest);
            s = out.next_state;
        }
        // two charges, then one step of recovery
        assert_eq!(compressed, vec![true, true, false, true]);
    }

    #[test]
    fn key_ignores_time_and_workload() {
        let sim = sim();
        let s0 = sim.reset(0);
        assert_eq!(encode_state_key(&s0), encode_state_key(&sim.reset(1)));
        let out = sim.step(&s0, &[Noop, Noop, Noop]).unwrap();
        assert_eq!(encode_state_key(&s0), encode_state_key(&out.next_state));
        let mut moved = s0.clone();
        moved.agents[2].station = Station::Table;
        assert_ne!(encode_state_key(&s0), encode_state_key(&moved));

        let with_w = Simulator::new(EnvConfig { workload_in_key: true, ..Default::default() }).unwrap();
        let mut w = s0.clone();
        w.workload.0[1] = 1;
        assert_ne!(with_w.state_key(&s0), with_w.state_key(&w));
        assert_eq!(sim.state_key(&s0), sim.state_key(&w));
    }

    #[test]
    fn lifecycle_and_arity_errors() {
        let sim = Simulator::new(EnvConfig { horizon: 1, ..Default::default() }).unwrap();
        let s = sim.reset(0);
        assert!(matches!(sim.step(&s, &[Noop]), Err(Error::Interface(_))));
        let out = sim.step(&s, &[Noop, Noop, Noop]).unwrap();
        assert!(out.done && !out.success);
        assert!(matches!(sim.step(&out.next_state, &[Noop, Noop, Noop]), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn scripted_rescue_succeeds_with_shared_workload() {
        let sim = sim();
        let mut s = sim.reset(0);
        let mut plan: Vec<[ActionPrimitive; 3]> = vec![[Pick, Treat, Pick]];
        plan.extend(std::iter::repeat_n([Move, Noop, Move], 4));
        plan.push([Move, Noop, Noop]);
        plan.push([Stack, Noop, Noop]);
        plan.push([Noop, CompressChest, CompressChest]);
        plan.push([Noop, CompressChest, Noop]);
        plan.push([Noop, Noop, GiveRescueBreaths]);
        plan.push([Noop, Noop, GiveRescueBreaths]);
        let mut total = 0.0;
        let mut last = None;
        for joint in plan {
            let out = sim.step(&s, &joint).unwrap();
            out.next_state.check_invariants(sim.config()).unwrap();
            total += out.team_reward;
            s = out.next_state.clone();
            last = Some(out);
        }
        let last = last.unwrap();
        assert!(last.success && last.done);
        assert_eq!(total, 9.0);
        assert_eq!(s.workload.as_slice(), &[2, 3, 4]);
        assert!((last.fairness_value - 81.0 / 87.0).abs() < 1e-12);
    }
}
