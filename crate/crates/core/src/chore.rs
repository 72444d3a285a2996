//! The chore game: a single-state repeated game in which each agent either
//! works or rests. Any work completes the chore for a team payoff of
//! `base - cost * workers`; nobody working pays nothing. Each worker gets one
//! unit of workload per round.
//!
//! With the defaults (two agents, base 1, cost 0.1) a lone worker earns 0.9,
//! two workers earn 0.8, and the unconstrained optimum leaves one agent with
//! all the work.

use serde::{Deserialize, Serialize};

use crate::env::{MultiAgentEnv, StateKey, Transition};
use crate::error::{Error, Result};
use crate::fairness::{jain_index, FairnessThreshold};
use crate::oracle::{Evaluation, FiniteGame, ProfileValue};

pub const WORK: usize = 0;
pub const REST: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChoreGame {
    pub n_agents: usize,
    pub base: f64,
    pub cost: f64,
    /// Rounds per episode when played as an environment.
    pub horizon: usize,
}

impl Default for ChoreGame {
    fn default() -> Self {
        Self { n_agents: 2, base: 1.0, cost: 0.1, horizon: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChoreState {
    pub t: usize,
    pub workload: Vec<u32>,
    pub done: bool,
}

impl ChoreGame {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::Config("the chore game needs at least two agents".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.base.is_finite() && self.cost.is_finite()) {
            return Err(Error::Config("payoff parameters must be finite".into()));
        }
        Ok(())
    }

    /// Team payoff of one round.
    pub fn payoff(&self, actions: &[usize]) -> f64 {
        let workers = actions.iter().filter(|&&a| a == WORK).count();
        if workers == 0 {
            0.0
        } else {
            self.base - self.cost * workers as f64
        }
    }

    /// The stationary-policy game with long-run average payoff and workload.
    pub fn finite_game(&self, tau: FairnessThreshold) -> Result<FiniteGame> {
        self.validate()?;
        let names = vec![vec!["work".to_string(), "rest".to_string()]; self.n_agents];
        let count = 1usize << self.n_agents;
        let values = (0..count)
            .map(|index| {
                let profile: Vec<usize> = (0..self.n_agents).map(|i| (index >> (self.n_agents - 1 - i)) & 1).collect();
                ProfileValue {
                    ret: self.payoff(&profile),
                    workload: profile.iter().map(|&a| if a == WORK { 1.0 } else { 0.0 }).collect(),
                }
            })
            .collect();
        FiniteGame::from_table("chore", names, tau, Evaluation::LongRunAverage, values)
    }
}

impl MultiAgentEnv for ChoreGame {
    type State = ChoreState;

    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn noop_action(&self) -> usize {
        REST
    }

    fn reset(&self, _seed: u64) -> ChoreState {
        ChoreState { t: 0, workload: vec![0; self.n_agents], done: false }
    }

    fn step(&self, state: &ChoreState, actions: &[usize]) -> Result<Transition<ChoreState>> {
        if actions.len() != self.n_agents {
            return Err(Error::Interface(format!("expected {} actions, got {}", self.n_agents, actions.len())));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a > REST) {
            return Err(Error::Interface(format!("chore action {bad} out of range")));
        }
        if state.done {
            return Err(Error::Lifecycle("chore episode already finished".into()));
        }
        let mut next = state.clone();
        for (w, &a) in next.workload.iter_mut().zip(actions) {
            *w += u32::from(a == WORK);
        }
        next.t += 1;
        next.done = next.t >= self.horizon;
        Ok(Transition {
            reward: self.payoff(actions),
            done: next.done,
            success: next.done,
            fairness: jain_index(&next.workload)?,
            next,
        })
    }

    fn state_key(&self, _state: &ChoreState) -> StateKey {
        StateKey::default()
    }

    fn workload<'a>(&self, state: &'a ChoreState) -> &'a [u32] {
        &state.workload
    }

    fn potential(&self, state: &ChoreState) -> u32 {
        state.t as u32
    }

    fn max_potential(&self) -> u32 {
        self.horizon as u32
    }

    fn action_label(&self, action: usize) -> &'static str {
        match action {
            WORK => "work",
            REST => "rest",
            _ => "?",
        }
    }

    fn position_labels(&self, _state: &ChoreState) -> Vec<String> {
        Vec::new()
    }
}
