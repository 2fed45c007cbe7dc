use trustloop::agent::{run_trajectory, EnvFactory, EnvKind, TrajectoryPlan, Variant};
use trustloop::constraints::CandidateOrder;
use trustloop::env::wordle::WordList;
use trustloop::env::{EpochLog, Trajectory};
use trustloop::gateway::{ScriptedBackend, ScriptedPolicy};
use trustloop::profiler::heuristic_profile;
use trustloop::reasoning::{extract_rules, MinerConfig, ReasoningBackend};
use trustloop::rng::trajectory_seed;
use trustloop::rules::RuleBank;

fn epoch(kind: EnvKind, policy: ScriptedPolicy, e: u32, n: u32) -> (EnvFactory, EpochLog) {
    let words = WordList::standard();
    let factory = EnvFactory::new(kind, true, words.clone());
    let gateway = ScriptedBackend::new(policy, words);
    let profile = heuristic_profile(&factory.spec());
    let bank = RuleBank::default();
    let mut env = factory.make();
    let trajectories: Vec<Trajectory> = (0..n)
        .map(|i| {
            let plan = TrajectoryPlan {
                epoch: e,
                index: i,
                seed: trajectory_seed(5, e, i),
                variant: Variant::Guided,
                profile: Some(&profile),
                bank: &bank,
                icl: &[],
                gateway: &gateway,
                fallback_order: CandidateOrder::ListOrder,
                temperature: 0.0,
                max_output_tokens: 64,
            };
            run_trajectory(env.as_mut(), &plan)
        })
        .collect();
    (factory, EpochLog { epoch_index: e, trajectories })
}

/// Every mined rule must reproduce the winning move of each trajectory it
/// cites as support.
fn assert_sound(kind: EnvKind, policy: ScriptedPolicy) -> usize {
    let mut mined = 0;
    for e in 1..=4 {
        let (factory, log) = epoch(kind, policy.clone(), e, 20);
        let env = factory.make();
        let profile = heuristic_profile(&factory.spec());
        let x =
            extract_rules(&log, &profile, ReasoningBackend::Miner, env.as_ref(), None, MinerConfig::default()).unwrap();
        for rule in &x.rules {
            mined += 1;
            assert!(rule.provenance.source_trajectories.len() >= 3);
            for id in &rule.provenance.source_trajectories {
                let t = log.trajectories.iter().find(|t| &t.id() == id).expect("cited trajectory exists");
                assert!(t.success);
                let last = t.steps.len() - 1;
                let step = &t.steps[last];
                let ctx = env.rule_context(&step.observation_before, &t.history(last));
                assert!(rule.matches(&ctx, step.turn), "{} does not match {id}", rule.describe());
                let compliant = |_| env.compliant(&step.observation_before, &step.committed_action);
                assert!(rule.followed_by(&ctx, &step.committed_action, &compliant), "{} vs {id}", rule.describe());
            }
        }
    }
    mined
}

#[test]
fn sequential_rules_reproduce_their_support() {
    assert!(assert_sound(EnvKind::Gmn, ScriptedPolicy::GmnBinarySearch) > 0);
}

#[test]
fn cumulative_rules_reproduce_their_support() {
    assert!(assert_sound(EnvKind::Wordle, ScriptedPolicy::WordleOracle) > 0);
}
