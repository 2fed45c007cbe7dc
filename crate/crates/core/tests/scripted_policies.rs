use trustloop::agent::{run_trajectory, EnvFactory, EnvKind, TrajectoryPlan, Variant};
use trustloop::constraints::CandidateOrder;
use trustloop::env::wordle::WordList;
use trustloop::env::Trajectory;
use trustloop::gateway::{CompletionBackend, ScriptedBackend, ScriptedPolicy};
use trustloop::metrics::compliance_metrics;
use trustloop::profiler::heuristic_profile;
use trustloop::rng::trajectory_seed;
use trustloop::rules::RuleBank;

fn play(kind: EnvKind, variant: Variant, policy: ScriptedPolicy, n: u32) -> Vec<Trajectory> {
    let words = WordList::standard();
    let factory = EnvFactory::new(kind, variant == Variant::Guided, words.clone());
    let gateway = ScriptedBackend::new(policy, words);
    let profile = heuristic_profile(&factory.spec());
    let bank = RuleBank::default();
    let mut env = factory.make();
    (0..n)
        .map(|i| {
            let plan = TrajectoryPlan {
                epoch: 1,
                index: i,
                seed: trajectory_seed(2024, 1, i),
                variant,
                profile: (variant == Variant::Guided).then_some(&profile),
                bank: &bank,
                icl: &[],
                gateway: &gateway as &dyn CompletionBackend,
                fallback_order: CandidateOrder::ListOrder,
                temperature: 0.0,
                max_output_tokens: 64,
            };
            run_trajectory(env.as_mut(), &plan)
        })
        .collect()
}

#[test]
fn oracle_guided_wordle_solves_most_games() {
    let ts = play(EnvKind::Wordle, Variant::Guided, ScriptedPolicy::WordleOracle, 100);
    let solved = ts.iter().filter(|t| t.success && t.turn_count <= 6).count();
    assert!(solved >= 85, "solved {solved}/100");
    assert!(ts.iter().all(|t| t.success == (t.final_reward == 100.0)));
}

#[test]
fn adversary_under_the_gate_is_fully_compliant() {
    let ts = play(EnvKind::Wordle, Variant::Guided, ScriptedPolicy::WordleAdversarial, 20);
    let env = EnvFactory::new(EnvKind::Wordle, true, WordList::standard()).make();
    let c = compliance_metrics(&ts, env.as_ref());
    assert_eq!(c.compliance_ratio, Some(1.0));
    assert_eq!(c.recovery_rate, Some(1.0));
    assert!(ts.iter().all(|t| t.turn_count <= 6));
}

#[test]
fn adversary_without_the_gate_breaks_constraints() {
    let ts = play(EnvKind::Wordle, Variant::Baseline, ScriptedPolicy::WordleAdversarial, 20);
    let env = EnvFactory::new(EnvKind::Wordle, false, WordList::standard()).make();
    let c = compliance_metrics(&ts, env.as_ref());
    assert!(c.compliance_ratio.unwrap() < 0.5);
    assert!(ts.iter().all(|t| !t.success));
}

#[test]
fn exact_hint_exploit_always_wins_by_turn_eight() {
    let ts = play(EnvKind::Gmn, Variant::Baseline, ScriptedPolicy::GmnExactExploit, 100);
    assert!(ts.iter().all(|t| t.success && t.turn_count <= 8));
    let mean = ts.iter().map(|t| t.final_reward).sum::<f64>() / ts.len() as f64;
    assert!(mean >= 12.5, "{mean}");
    // Reward is 100 / t on the winning turn.
    for t in &ts {
        assert_eq!(t.final_reward, 100.0 / f64::from(t.turn_count));
    }
}

#[test]
fn binary_search_respects_the_turn_budget() {
    for variant in [Variant::Baseline, Variant::Guided] {
        let ts = play(EnvKind::Gmn, variant, ScriptedPolicy::GmnBinarySearch, 50);
        assert!(ts.iter().all(|t| t.turn_count <= 15));
        assert!(ts.iter().any(|t| t.success));
    }
}
