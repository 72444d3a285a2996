//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or a JSON string and returns JSON, so the
//! page needs no generated TypeScript glue beyond `wasm-bindgen`'s loader.

use fair_gne::chore::ChoreGame;
use fair_gne::dual::{CadencePreset, PenaltyForm};
use fair_gne::fairness::{gini_index, jain_index, FairnessThreshold};
use fair_gne::learner::{greedy_rollout, train, FairGneConfig, PenaltyMode, TrainConfig};
use fair_gne::oracle::{exact_dual_ascent, DualAscentConfig};
use fair_gne::sim::{EnvConfig, Simulator};
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Out = std::result::Result<String, String>;

fn json<T: Serialize>(value: &T) -> Out {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn threshold(tau: f64) -> Result<FairnessThreshold, String> {
    FairnessThreshold::new(tau).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Indices {
    jfi: f64,
    gini: f64,
    g: f64,
    satisfied: bool,
}

pub fn fairness_report(workload_json: &str, tau: f64) -> Out {
    let w: Vec<f64> =
        serde_json::from_str(workload_json).map_err(|e| format!("workload must be a JSON array of numbers: {e}"))?;
    let jfi = jain_index(&w).map_err(|e| e.to_string())?;
    let gini = gini_index(&w).map_err(|e| e.to_string())?;
    let g = threshold(tau)?.value() - jfi;
    json(&Indices { jfi, gini, g, satisfied: g <= 0.0 })
}

#[derive(Serialize)]
struct Ascent {
    lambdas: Vec<f64>,
    profiles: Vec<String>,
    status: String,
    switching_lambda: f64,
    chosen: Option<String>,
    kkt_satisfied: bool,
}

pub fn chore_ascent(tau: f64, eta: f64, max_iter: usize) -> Out {
    let game = ChoreGame::default().finite_game(threshold(tau)?).map_err(|e| e.to_string())?;
    let cfg = DualAscentConfig { eta, max_iter: max_iter.max(1), ..Default::default() };
    let r = exact_dual_ascent(&game, &cfg).map_err(|e| e.to_string())?;
    json(&Ascent {
        lambdas: r.iterates.iter().map(|i| i.lambda).collect(),
        profiles: r.iterates.iter().map(|i| game.profile_label(i.profile)).collect(),
        status: format!("{:?}", r.status),
        switching_lambda: r.oscillation.map_or(r.final_lambda, |o| o.switching_lambda),
        chosen: r.certificate.as_ref().map(|c| game.profile_label(c.pi_star)),
        kkt_satisfied: r.certificate.as_ref().is_some_and(|c| c.kkt.satisfied),
    })
}

#[derive(Serialize)]
struct Training {
    episodes: Vec<usize>,
    success: Vec<f64>,
    jfi: Vec<f64>,
    lambda: Vec<f64>,
    final_workload: Vec<u32>,
    final_success: bool,
    actions: Vec<Vec<String>>,
}

/// Trains on the rescue-breath environment; `tau <= 0` trains the unconstrained baseline.
pub fn rescue_training(tau: f64, episodes: usize, seed: u64, clamped: bool) -> Out {
    let env = Simulator::new(EnvConfig::default()).map_err(|e| e.to_string())?;
    let penalty = if tau <= 0.0 {
        PenaltyMode::None
    } else {
        let form = if clamped { PenaltyForm::Clamped } else { PenaltyForm::Signed };
        PenaltyMode::FairGne(FairGneConfig { form, ..FairGneConfig::preset(threshold(tau)?, CadencePreset::Appendix) })
    };
    let cfg = TrainConfig {
        episodes: episodes.max(1),
        eval_every: (episodes / 40).max(1),
        eval_episodes: 3,
        penalty,
        seed,
        ..Default::default()
    };
    let report = train(&env, &cfg).map_err(|e| e.to_string())?;
    let trace = greedy_rollout(&report.policy, &env, 0).map_err(|e| e.to_string())?;
    let ev = &report.evaluations;
    json(&Training {
        episodes: ev.iter().map(|e| e.episode).collect(),
        success: ev.iter().map(|e| e.summary.success_rate).collect(),
        jfi: ev.iter().map(|e| e.summary.mean_jfi).collect(),
        lambda: ev.iter().map(|e| e.lambda).collect(),
        final_workload: trace.final_workload.clone(),
        final_success: trace.success,
        actions: trace.steps.iter().map(|s| s.actions.clone()).collect(),
    })
}

fn to_js(out: Out) -> Result<String, JsValue> {
    out.map_err(|e| JsValue::from_str(&e))
}

/// Jain index, Gini index and violation `tau - JFI` of a workload vector.
#[wasm_bindgen(js_name = fairness)]
pub fn fairness_js(workload_json: &str, tau: f64) -> Result<String, JsValue> {
    to_js(fairness_report(workload_json, tau))
}

/// Exact dual ascent on the two-agent chore game.
#[wasm_bindgen(js_name = choreAscent)]
pub fn chore_ascent_js(tau: f64, eta: f64, max_iter: usize) -> Result<String, JsValue> {
    to_js(chore_ascent(tau, eta, max_iter))
}

/// A short tabular training run with its learning curves and greedy episode.
#[wasm_bindgen(js_name = trainRescue)]
pub fn train_rescue_js(tau: f64, episodes: usize, seed: u32, clamped: bool) -> Result<String, JsValue> {
    to_js(rescue_training(tau, episodes, u64::from(seed), clamped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fairness_of_lopsided_workload() {
        let v: serde_json::Value = serde_json::from_str(&fairness_report("[2, 1, 1]", 0.9).unwrap()).unwrap();
        assert!((v["jfi"].as_f64().unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(v["satisfied"], false);
        assert!(fairness_report("[1, -1]", 0.9).is_err());
        assert!(fairness_report("nope", 0.9).is_err());
    }

    #[test]
    fn chore_ascent_switches_at_known_multiplier() {
        let v: serde_json::Value = serde_json::from_str(&chore_ascent(0.9, 0.01, 100_000).unwrap()).unwrap();
        assert!((v["switching_lambda"].as_f64().unwrap() - 0.2).abs() < 1e-9);
        assert_eq!(v["chosen"], "work,work");
    }

    #[test]
    fn short_training_run_reports_curves() {
        let v: serde_json::Value = serde_json::from_str(&rescue_training(0.75, 200, 1, false).unwrap()).unwrap();
        assert_eq!(v["episodes"].as_array().unwrap().len(), 40);
        assert_eq!(v["final_workload"].as_array().unwrap().len(), 3);
    }
}
