//! Evaluation metrics and the significance-testing protocol.
//!
//! Episodes are summarized by their terminal workload fairness, success flag,
//! constraint satisfaction and a per-episode KKT record. Methods are compared
//! with Welch's unequal-variance t-test, Cohen's d with pooled standard
//! deviation, and a Bonferroni-adjusted significance level.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::dual::{kkt_check, KktRecord};
use crate::error::{Error, Result};
use crate::fairness::{discounted_violation, jain_index, FairnessThreshold};
use crate::trace::EpisodeTrace;

/// Per-episode evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub total_reward: f64,
    pub terminal_jfi: f64,
    pub mean_step_jfi: f64,
    /// Multiplier active during the rollout.
    pub lambda: f64,
    pub discounted_g: f64,
    pub constraint_satisfied: bool,
    pub kkt: KktRecord,
}

pub fn episode_metrics(
    trace: &EpisodeTrace,
    tau: FairnessThreshold,
    gamma: f64,
    epsilon: f64,
) -> Result<EpisodeMetrics> {
    if trace.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty episode".into()));
    }
    let terminal_jfi = jain_index(&trace.final_workload)?;
    let lambda = trace.steps[0].lambda;
    let discounted_g = discounted_violation(trace, tau, gamma)?;
    Ok(EpisodeMetrics {
        success: trace.success,
        total_reward: trace.total_reward(),
        terminal_jfi,
        mean_step_jfi: trace.steps.iter().map(|s| s.jfi).sum::<f64>() / trace.len() as f64,
        lambda,
        discounted_g,
        constraint_satisfied: terminal_jfi >= tau.value(),
        kkt: kkt_check(lambda, discounted_g, epsilon),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let (mean, var) = mean_var(xs);
        Self { mean, std: if xs.len() > 1 { var.sqrt() } else { 0.0 } }
    }
}

/// Greedy-evaluation summary of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub success_rate: f64,
    /// Terminal-workload Jain index.
    pub mean_jfi: f64,
    pub jfi_std: f64,
    /// Jain index averaged over every step of every episode.
    pub mean_step_jfi: f64,
    pub mean_lambda: f64,
    pub lambda_std: f64,
    pub constraint_sat_rate: f64,
    pub kkt_sat_rate: f64,
    pub mean_return: f64,
    pub n_episodes: usize,
    pub n_seeds: usize,
}

pub fn summarize(traces: &[EpisodeTrace], tau: FairnessThreshold, gamma: f64, epsilon: f64) -> Result<EvalSummary> {
    let metrics = traces.iter().map(|t| episode_metrics(t, tau, gamma, epsilon)).collect::<Result<Vec<_>>>()?;
    summarize_metrics(&metrics)
}

pub fn summarize_metrics(metrics: &[EpisodeMetrics]) -> Result<EvalSummary> {
    if metrics.is_empty() {
        return Err(Error::Domain("cannot summarize zero episodes".into()));
    }
    let n = metrics.len() as f64;
    let rate = |f: fn(&EpisodeMetrics) -> bool| metrics.iter().filter(|m| f(m)).count() as f64 / n;
    let jfi = MeanStd::of(&metrics.iter().map(|m| m.terminal_jfi).collect::<Vec<_>>());
    let lambda = MeanStd::of(&metrics.iter().map(|m| m.lambda).collect::<Vec<_>>());
    Ok(EvalSummary {
        success_rate: rate(|m| m.success),
        mean_jfi: jfi.mean,
        jfi_std: jfi.std,
        mean_step_jfi: metrics.iter().map(|m| m.mean_step_jfi).sum::<f64>() / n,
        mean_lambda: lambda.mean,
        lambda_std: lambda.std,
        constraint_sat_rate: rate(|m| m.constraint_satisfied),
        kkt_sat_rate: rate(|m| m.kkt.satisfied),
        mean_return: metrics.iter().map(|m| m.total_reward).sum::<f64>() / n,
        n_episodes: metrics.len(),
        n_seeds: 1,
    })
}

/// Across-seed aggregate: each metric as mean and standard deviation of the per-seed values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub success: MeanStd,
    pub jfi: MeanStd,
    pub lambda: MeanStd,
    pub constraint_sat: MeanStd,
    pub kkt_sat: MeanStd,
    pub mean_return: MeanStd,
    pub n_seeds: usize,
    pub n_episodes: usize,
}

pub fn aggregate(per_seed: &[EvalSummary]) -> Result<SeedAggregate> {
    if per_seed.is_empty() {
        return Err(Error::Domain("cannot aggregate zero seeds".into()));
    }
    let col = |f: fn(&EvalSummary) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
    Ok(SeedAggregate {
        success: col(|s| s.success_rate),
        jfi: col(|s| s.mean_jfi),
        lambda: col(|s| s.mean_lambda),
        constraint_sat: col(|s| s.constraint_sat_rate),
        kkt_sat: col(|s| s.kkt_sat_rate),
        mean_return: col(|s| s.mean_return),
        n_seeds: per_seed.iter().map(|s| s.n_seeds).sum(),
        n_episodes: per_seed.iter().map(|s| s.n_episodes).sum(),
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

fn check_sample(xs: &[f64], name: &str) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::Domain(format!("sample {name} needs at least two values, got {}", xs.len())));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("sample {name} contains non-finite values")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_statistic: f64,
    pub degrees_freedom: f64,
    pub p_value: f64,
}

/// Two-sided Welch t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    check_sample(a, "a")?;
    check_sample(b, "b")?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchResult { t_statistic: 0.0, degrees_freedom: df, p_value: 1.0 }
        } else {
            WelchResult { t_statistic: f64::INFINITY.copysign(ma - mb), degrees_freedom: df, p_value: 0.0 }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(WelchResult { t_statistic: t, degrees_freedom: df, p_value: student_t_two_sided(t, df) })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Standardized mean difference with pooled standard deviation
/// (weights `n_a - 1` and `n_b - 1`). A zero pooled deviation yields a signed
/// infinity, or zero when the means coincide.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample(a, "a")?;
    check_sample(b, "b")?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    let diff = ma - mb;
    if pooled == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY.copysign(diff) });
    }
    Ok(diff / pooled)
}

pub fn bonferroni_threshold(alpha: f64, m: usize) -> f64 {
    alpha / m as f64
}

/// Flags `p_i <= alpha / m`.
pub fn bonferroni(p_values: &[f64], alpha: f64, m: usize) -> Result<Vec<bool>> {
    if p_values.is_empty() || m < p_values.len() {
        return Err(Error::Domain(format!("need 1 <= {} p-values <= m = {m}", p_values.len())));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("p-value {p} outside [0, 1]")));
    }
    let threshold = bonferroni_threshold(alpha, m);
    Ok(p_values.iter().map(|&p| p <= threshold).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_statistic: f64,
    pub degrees_freedom: f64,
    pub p_value: f64,
    pub cohens_d: f64,
    pub significant_bonferroni: bool,
    pub alpha_adjusted: f64,
}

/// Welch test, effect size and Bonferroni flag for one of `m` comparisons.
pub fn compare(a: &[f64], b: &[f64], alpha: f64, m: usize) -> Result<TestResult> {
    let w = welch_ttest(a, b)?;
    let alpha_adjusted = bonferroni_threshold(alpha, m);
    Ok(TestResult {
        t_statistic: w.t_statistic,
        degrees_freedom: w.degrees_freedom,
        p_value: w.p_value,
        cohens_d: cohens_d(a, b)?,
        significant_bonferroni: w.p_value <= alpha_adjusted,
        alpha_adjusted,
    })
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    /// Rendered multiplier column, e.g. `50 (fixed)` or `19.0 ± 0.4`.
    pub lambda_label: String,
    pub aggregate: SeedAggregate,
    /// Strongest comparison against the baselines, if any.
    pub test: Option<TestResult>,
}

fn pm(x: MeanStd) -> String {
    format!("{:.2} ± {:.2}", x.mean, x.std)
}

fn marker(test: &Option<TestResult>) -> &'static str {
    match test {
        Some(t) if t.significant_bonferroni && t.p_value < 0.01 => "‡",
        Some(t) if t.significant_bonferroni => "†",
        _ => "",
    }
}

pub fn render_markdown(rows: &[TableRow]) -> String {
    let with_tests = rows.iter().any(|r| r.test.is_some());
    let mut out = String::from("| Method | Success | λ | Workload JFI | Constraint Sat. | KKT Sat. |");
    out.push_str(if with_tests { " p | d |\n" } else { "\n" });
    out.push_str("|---|---|---|---|---|---|");
    out.push_str(if with_tests { "---|---|\n" } else { "\n" });
    for r in rows {
        let a = &r.aggregate;
        let _ = write!(
            out,
            "| {} | {} | {} | {}{} | {} | {} |",
            r.method,
            pm(a.success),
            r.lambda_label,
            pm(a.jfi),
            marker(&r.test),
            pm(a.constraint_sat),
            pm(a.kkt_sat)
        );
        if with_tests {
            match &r.test {
                Some(t) => {
                    let _ = write!(out, " {:.4} | {:.2} |", t.p_value, t.cohens_d);
                }
                None => out.push_str(" – | – |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(
        "method,success_mean,success_std,lambda,jfi_mean,jfi_std,constraint_sat_mean,constraint_sat_std,kkt_sat_mean,kkt_sat_std,p_value,cohens_d,significant\n",
    );
    for r in rows {
        let a = &r.aggregate;
        let (p, d, s) = match &r.test {
            Some(t) => (t.p_value.to_string(), t.cohens_d.to_string(), t.significant_bonferroni.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},\"{}\",{},{},{},{},{},{},{},{},{}",
            r.method,
            a.success.mean,
            a.success.std,
            r.lambda_label,
            a.jfi.mean,
            a.jfi.std,
            a.constraint_sat.mean,
            a.constraint_sat.std,
            a.kkt_sat.mean,
            a.kkt_sat.std,
            p,
            d,
            s
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::StepRecord;
    use proptest::prelude::*;

    pub(crate) type ReferencePair = (Vec<f64>, Vec<f64>, f64, f64, f64, f64);

    /// (a, b, t, df, p, d) computed offline with scipy.stats.ttest_ind(equal_var=False).
    pub(crate) fn reference_pairs() -> Vec<ReferencePair> {
        vec![
            (
                vec![0.89, 0.98, 0.80],
                vec![0.33, 0.33, 0.33],
                10.77720502487302,
                2.0,
                0.008500075484884547,
                8.799551054765928,
            ),
            (
                vec![19.1, 18.7, 19.5, 18.9],
                vec![5.4, 2.1, 8.9, 4.8],
                9.761434028262148,
                3.089494147167064,
                0.0020176503327242663,
                6.902376195489282,
            ),
            (
                vec![27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4],
                vec![27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4],
                -2.455356398286006,
                24.988529290231416,
                0.021378001462866985,
                -0.8965693907039232,
            ),
            (
                vec![0.86, 0.91, 0.78, 0.84, 0.88],
                vec![0.90, 0.95, 0.97],
                -2.8519170894407204,
                5.493066114750858,
                0.032123066417990925,
                -1.913474885806939,
            ),
            (
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                vec![2.5, 2.5, 3.5, 6.0, 7.5, 9.0, 1.0],
                -0.7902036646570126,
                10.223290914212827,
                0.44735068434935277,
                -0.4240790563902976,
            ),
        ]
    }

    #[test]
    fn matches_reference_pairs() {
        for (a, b, t, df, p, d) in reference_pairs() {
            let w = welch_ttest(&a, &b).unwrap();
            assert!((w.t_statistic - t).abs() < 1e-6 * t.abs().max(1.0), "t {} vs {t}", w.t_statistic);
            assert!((w.degrees_freedom - df).abs() < 1e-6);
            assert!((w.p_value - p).abs() < 1e-6);
            assert!((cohens_d(&a, &b).unwrap() - d).abs() < 1e-6);
        }
    }

    #[test]
    fn tail_agrees_with_students_t_cdf() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        for &df in &[1.0, 2.0, 3.5, 10.0, 57.3] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for &t in &[0.1, 0.7, 1.96, 3.0, 10.9] {
                let want = 2.0 * (1.0 - dist.cdf(t));
                assert!((student_t_two_sided(t, df) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_samples() {
        let a = [0.5, 0.7, 0.9];
        let w = welch_ttest(&a, &a).unwrap();
        assert_eq!((w.t_statistic, w.p_value), (0.0, 1.0));
        assert_eq!(cohens_d(&a, &a).unwrap(), 0.0);
        let c = [0.3, 0.3];
        assert_eq!(welch_ttest(&c, &c).unwrap().p_value, 1.0);
        assert!(welch_ttest(&[1.0], &c).is_err());
    }

    #[test]
    fn paper_scale_effect_size() {
        // pooled sd back-solved so that (0.89 - 0.33) / sd = 8.99
        let delta = 0.0623;
        let a = [0.89 - delta, 0.89, 0.89 + delta];
        let b = [0.33 - delta, 0.33, 0.33 + delta];
        assert!((cohens_d(&a, &b).unwrap() - 8.99).abs() < 0.01);
    }

    #[test]
    fn one_sd_shift() {
        let b = [1.0, 2.0, 3.0, 4.0];
        let sd = mean_var(&b).1.sqrt();
        let a: Vec<f64> = b.iter().map(|x| x + sd).collect();
        assert!((cohens_d(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(format!("{:.4}", bonferroni_threshold(0.05, 3)), "0.0167");
        assert_eq!(bonferroni(&[0.0082], 0.05, 3).unwrap(), vec![true]);
        assert_eq!(bonferroni(&[0.02], 0.05, 3).unwrap(), vec![false]);
        assert_eq!(bonferroni(&[0.04], 0.05, 1).unwrap(), vec![true]);
        assert!(bonferroni(&[1.5], 0.05, 1).is_err());
        assert!(bonferroni(&[0.1, 0.2], 0.05, 1).is_err());
    }

    fn trace(workload: Vec<u32>, success: bool, lambda: f64, tau: f64) -> EpisodeTrace {
        let jfi = jain_index(&workload).unwrap();
        EpisodeTrace {
            seed: 0,
            tau,
            steps: vec![StepRecord {
                t: 0,
                positions: vec![],
                actions: vec![],
                team_reward: 1.0,
                shaped_reward: 1.0,
                jfi,
                g: tau - jfi,
                lambda,
                fallback_agents: vec![],
            }],
            final_workload: workload,
            final_potential: 1,
            max_potential: 1,
            success,
        }
    }

    #[test]
    fn summary_examples() {
        let tau = FairnessThreshold::new(0.85).unwrap();
        let all_equal: Vec<_> = (0..5).map(|_| trace(vec![3, 3, 3], true, 0.0, 0.85)).collect();
        let s = summarize(&all_equal, tau, 0.99, 0.05).unwrap();
        assert_eq!((s.success_rate, s.mean_jfi, s.constraint_sat_rate), (1.0, 1.0, 1.0));

        let mixed: Vec<_> = (0..50).map(|i| trace(vec![3, 3, 3], i < 43, 0.0, 0.85)).collect();
        assert!((summarize(&mixed, tau, 0.99, 0.05).unwrap().success_rate - 0.86).abs() < 1e-12);

        let lone: Vec<_> = (1..6).map(|k| trace(vec![k, 0, 0], true, 1.0, 0.85)).collect();
        let s = summarize(&lone, tau, 0.99, 0.05).unwrap();
        assert!((s.mean_jfi - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.kkt_sat_rate, 0.0);
        assert!(summarize(&[], tau, 0.99, 0.05).is_err());
    }

    #[test]
    fn rates_recompute_from_raw_traces() {
        let tau = FairnessThreshold::new(0.7).unwrap();
        let traces: Vec<_> = (0..40u32)
            .map(|i| trace(vec![i % 4, (i / 4) % 3, 1 + i % 2], i % 3 == 0, f64::from(i % 5) * 0.5, 0.7))
            .collect();
        let s = summarize(&traces, tau, 0.9, 0.05).unwrap();
        let (mut sat, mut kkt) = (0, 0);
        for t in &traces {
            let sum: f64 = t.final_workload.iter().map(|&w| f64::from(w)).sum();
            let sq: f64 = t.final_workload.iter().map(|&w| f64::from(w).powi(2)).sum();
            let f = if sum == 0.0 { 1.0 } else { sum * sum / (3.0 * sq) };
            if f >= 0.7 {
                sat += 1;
            }
            let g = 0.7 - t.steps[0].jfi;
            let l = t.steps[0].lambda;
            if g <= 0.0 && (l * g).abs() <= 0.05 * (1.0 + l) {
                kkt += 1;
            }
        }
        assert_eq!(s.constraint_sat_rate, sat as f64 / 40.0);
        assert_eq!(s.kkt_sat_rate, kkt as f64 / 40.0);
    }

    #[test]
    fn table_layout() {
        let agg = aggregate(&[EvalSummary { n_seeds: 1, n_episodes: 50, ..Default::default() }]).unwrap();
        let rows =
            vec![TableRow { method: "none".into(), lambda_label: "0 (fixed)".into(), aggregate: agg, test: None }];
        let md = render_markdown(&rows);
        assert_eq!(md.lines().count(), 3);
        assert!(md.starts_with("| Method | Success | λ | Workload JFI | Constraint Sat. | KKT Sat. |\n"));
        assert_eq!(render_csv(&rows).lines().count(), 2);
    }

    proptest! {
        #[test]
        fn swapping_samples_negates_t(a in proptest::collection::vec(-5.0f64..5.0, 2..8),
                                      b in proptest::collection::vec(-5.0f64..5.0, 2..8)) {
            let ab = welch_ttest(&a, &b).unwrap();
            let ba = welch_ttest(&b, &a).unwrap();
            prop_assert!((ab.t_statistic + ba.t_statistic).abs() < 1e-9 * ab.t_statistic.abs().max(1.0));
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        }

        #[test]
        fn larger_shift_never_raises_p(b in proptest::collection::vec(-1.0f64..1.0, 3..8),
                                       s1 in 0.0f64..3.0, extra in 0.0f64..3.0) {
            let a: Vec<f64> = b.iter().rev().map(|x| x * 0.5).collect();
            let shift = |s: f64| a.iter().map(|x| x + s).collect::<Vec<_>>();
            let m = mean_var(&a).0 - mean_var(&b).0;
            prop_assume!(m >= 0.0);
            let p1 = welch_ttest(&shift(s1), &b).unwrap().p_value;
            let p2 = welch_ttest(&shift(s1 + extra), &b).unwrap().p_value;
            prop_assert!(p2 <= p1 + 1e-12);
        }
    }
}
