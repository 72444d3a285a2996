use fair_gne::fairness::FairnessThreshold;
use fair_gne::oracle::{exact_dual_ascent, exact_primal, DualAscentConfig, Evaluation, FiniteGame, ProfileValue};
use fair_gne::sim::{milestone_potential, ActionPrimitive, EnvConfig, SimState, Simulator, SkillPreset, Station};
use proptest::prelude::*;

fn run(env: &Simulator, seed: u64, script: &[Vec<u8>]) -> Vec<SimState> {
    let mut state = env.reset(seed);
    let mut states = vec![state.clone()];
    for joint in script {
        let actions: Vec<ActionPrimitive> =
            joint.iter().map(|&a| ActionPrimitive::from_index(a as usize).unwrap()).collect();
        let step = env.step(&state, &actions).unwrap();
        state = step.next_state;
        states.push(state.clone());
        if step.done {
            break;
        }
    }
    states
}

fn config() -> impl Strategy<Value = EnvConfig> {
    (
        prop_oneof![Just(SkillPreset::Heterogeneous), Just(SkillPreset::Uniform)],
        any::<bool>(),
        1u32..5,
        1u32..4,
        proptest::collection::vec(0usize..6, 3),
    )
        .prop_map(|(skill_preset, energy_enabled, c, b, starts)| EnvConfig {
            skill_preset,
            energy_enabled,
            compressions_required: c,
            breaths_required: b,
            start_stations: Some(starts.into_iter().map(|i| Station::ALL[i]).collect()),
            ..Default::default()
        })
}

fn script() -> impl Strategy<Value = Vec<Vec<u8>>> {
    proptest::collection::vec(proptest::collection::vec(0u8..8, 3), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn trajectories_respect_state_invariants(cfg in config(), seed in any::<u64>(), script in script()) {
        let env = Simulator::new(cfg.clone()).unwrap();
        let states = run(&env, seed, &script);
        for pair in states.windows(2) {
            prop_assert!(milestone_potential(&pair[1]) >= milestone_potential(&pair[0]));
            for (after, before) in pair[1].workload.as_slice().iter().zip(pair[0].workload.as_slice()) {
                prop_assert!(after >= before);
            }
        }
        for s in &states {
            s.check_invariants(&cfg).unwrap();
            prop_assert_eq!(s.workload.total(), milestone_potential(s));
        }
        prop_assert!(states.len() <= cfg.horizon + 1);
    }

    #[test]
    fn replays_are_identical(cfg in config(), seed in any::<u64>(), script in script()) {
        let env = Simulator::new(cfg).unwrap();
        prop_assert_eq!(run(&env, seed, &script), run(&env, seed, &script));
    }

    #[test]
    fn oracle_returns_feasible_penalized_optimum(
        n in 2usize..=3,
        sizes in proptest::collection::vec(1usize..=3, 3),
        tau in 0.4f64..0.95,
        raw in proptest::collection::vec((0.0f64..2.0, proptest::collection::vec(0.0f64..2.0, 3)), 27),
    ) {
        let names: Vec<Vec<String>> = sizes[..n].iter().map(|&k| (0..k).map(|p| format!("p{p}")).collect()).collect();
        let count: usize = sizes[..n].iter().product();
        let values = raw[..count]
            .iter()
            .map(|(ret, w)| ProfileValue { ret: *ret, workload: w[..n].to_vec() })
            .collect();
        let game = FiniteGame::from_table("prop", names, FairnessThreshold::new(tau).unwrap(), Evaluation::LongRunAverage, values).unwrap();
        let result = exact_dual_ascent(&game, &DualAscentConfig::default()).unwrap();
        match &result.certificate {
            Some(cert) => {
                let row = game.row_at(cert.pi_star);
                prop_assert!(row.feasible());
                let d = game.dual_function(cert.lambda_star);
                prop_assert!(d - row.penalized(cert.lambda_star) <= 1e-9 * (1.0 + d.abs()));
                // weak duality: no feasible profile beats the dual bound
                for r in game.rows().iter().filter(|r| r.feasible()) {
                    prop_assert!(r.ret <= d + 1e-9);
                }
            }
            None => prop_assert!(!game.has_feasible_profile()),
        }
        // the unconstrained best response is the top-return profile
        let top = exact_primal(&game, 0.0);
        prop_assert!(game.rows().iter().all(|r| r.ret <= game.row_at(top).ret));
    }
}
