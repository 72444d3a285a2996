//! Per-step episode records and their CSV export.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// One environment step as seen by an evaluation or training rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Per-agent position labels before the step (empty for position-free games).
    pub positions: Vec<String>,
    /// Per-agent action labels.
    pub actions: Vec<String>,
    pub team_reward: f64,
    pub shaped_reward: f64,
    /// Jain's index of the workload after the step.
    pub jfi: f64,
    /// Statewise violation `tau - jfi`.
    pub g: f64,
    pub lambda: f64,
    /// Agents whose state key was missing from the policy and fell back to noop.
    pub fallback_agents: Vec<usize>,
}

/// A full episode: step records plus terminal bookkeeping.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub tau: f64,
    pub steps: Vec<StepRecord>,
    pub final_workload: Vec<u32>,
    pub final_potential: u32,
    pub max_potential: u32,
    pub success: bool,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.team_reward).sum()
    }

    pub fn fairness_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.jfi).collect()
    }

    /// Writes one row per step: `t, station_i.., action_i.., team_reward,
    /// shaped_reward, jfi, g, lambda`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.final_workload.len();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("station_{i}")));
        header.extend((0..n).map(|i| format!("action_{i}")));
        header.extend(["team_reward", "shaped_reward", "jfi", "g", "lambda"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.steps {
            let mut row = vec![s.t.to_string()];
            row.extend((0..n).map(|i| s.positions.get(i).cloned().unwrap_or_default()));
            row.extend((0..n).map(|i| s.actions.get(i).cloned().unwrap_or_default()));
            row.extend([s.team_reward, s.shaped_reward, s.jfi, s.g, s.lambda].map(|x| x.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}
