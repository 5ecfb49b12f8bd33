//! End-to-end behaviour of the agent and harness on short budgets.

use std::collections::BTreeSet;
use std::path::Path;

use hess::agent::{HierAgent, HierAgentConfig, Policy};
use hess::envs::{Dynamics, MazeSpec, PointMazeEnv};
use hess::harness::{evaluate, load_checkpoint, read_metrics, run_dir, run_single, ExperimentConfig, LoadedPolicy, Variant};

fn tiny_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        total_env_steps: 2_000,
        eval_interval: 1_000,
        eval_episodes: 2,
        ..ExperimentConfig::default()
    };
    cfg.agent.learning_starts = 500;
    cfg.agent.repr.update_interval = 2;
    cfg.agent.repr.minibatches = 20;
    cfg.agent.explorer.m = 100;
    cfg.flat.learning_starts = 500;
    cfg
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn diff(a: &HierAgentConfig, b: &HierAgentConfig) -> BTreeSet<String> {
    let mut fa = Vec::new();
    let mut fb = Vec::new();
    flatten("", &toml::Value::try_from(a).unwrap(), &mut fa);
    flatten("", &toml::Value::try_from(b).unwrap(), &mut fb);
    assert_eq!(fa.len(), fb.len());
    fa.into_iter()
        .zip(fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0)
        .collect()
}

#[test]
fn variants_differ_only_in_their_switches() {
    let base = HierAgentConfig::default();
    let expected: &[(Variant, &[&str])] = &[
        (Variant::Hess, &[]),
        (Variant::NoStability, &["repr.lambda0"]),
        (Variant::NoStabilityNoPriority, &["repr.lambda0", "repr.prioritized"]),
        (Variant::NoPotential, &["explorer.alpha"]),
        (Variant::ImmediateCounts, &["explorer.novelty"]),
        (Variant::ReactiveRewards, &["explorer.p0", "high_intrinsic"]),
        (Variant::LessonLike, &["explorer.p0", "repr.lambda0", "repr.prioritized"]),
        (Variant::Flat, &[]),
        (Variant::DeZero, &["explorer.d_e"]),
    ];
    assert_eq!(expected.len(), Variant::ALL.len());
    for (v, keys) in expected {
        let got = diff(&base, &v.apply(&base));
        let want: BTreeSet<String> = keys.iter().map(|s| s.to_string()).collect();
        assert_eq!(got, want, "{v}");
    }
}

#[test]
fn high_level_subgoals_stay_near_their_start_embedding() {
    let spec = MazeSpec::point_maze();
    let cfg = HierAgentConfig {
        learning_starts: 600,
        ..HierAgentConfig::default()
    };
    let bound = cfg.explorer.r_g + cfg.explorer.d_e;
    let mut agent = HierAgent::new(hess::envs::observation_dim(&spec), cfg, 3).unwrap();
    let mut env = PointMazeEnv::new(spec, Dynamics::default()).unwrap();
    // No representation update happens within these episodes, so φ is the one
    // that produced every stored subgoal.
    let mut explored = 0.0;
    for _ in 0..5 {
        explored += agent.run_episode(&mut env, 10_000).unwrap().exploration_fraction;
    }
    assert!(agent.last_repr_update().is_none());
    assert!(explored > 0.0, "explorer never selected a subgoal");
    for t in agent.high_buffer().iter() {
        let z = agent.encode(&t.obs).unwrap();
        assert!(t.subgoal.distance(&z) <= bound + 1e-9, "{} > {bound}", t.subgoal.distance(&z));
    }
}

#[test]
fn ablation_identity_never_explores_and_has_no_stability_term() {
    let spec = MazeSpec::point_maze();
    let cfg = Variant::LessonLike.apply(&HierAgentConfig {
        learning_starts: 300,
        repr: hess::subgoal_repr::ReprConfig {
            update_interval: 1,
            minibatches: 10,
            ..Default::default()
        },
        ..HierAgentConfig::default()
    });
    let mut agent = HierAgent::new(hess::envs::observation_dim(&spec), cfg, 4).unwrap();
    let mut env = PointMazeEnv::new(spec, Dynamics::default()).unwrap();
    for _ in 0..3 {
        let s = agent.run_episode(&mut env, 10_000).unwrap();
        assert_eq!(s.exploration_fraction, 0.0);
        assert_eq!(agent.last_repr_update().unwrap().mean_stability_loss, 0.0);
    }
    assert!(agent.selections().is_empty());
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn runs_are_reproducible_and_checkpoints_reload() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment();
    for v in [Variant::Hess, Variant::Flat] {
        let a = run_dir(&tmp.path().join("a"), v, 7);
        let b = run_dir(&tmp.path().join("b"), v, 7);
        let rows = run_single(&cfg, v, 7, &a).unwrap();
        run_single(&cfg, v, 7, &b).unwrap();
        assert_eq!(read(&a.join("metrics.csv")), read(&b.join("metrics.csv")), "{v}");

        let steps: Vec<u64> = rows.iter().map(|r| r.env_step).collect();
        assert_eq!(steps, vec![1_000, 2_000]);
        assert_eq!(read_metrics(&a.join("metrics.csv")).unwrap().len(), rows.len());

        let (loaded_cfg, mut policy) = load_checkpoint(&a.join("checkpoint")).unwrap();
        assert_eq!(loaded_cfg.variant, v);
        assert_eq!(matches!(policy, LoadedPolicy::Hier(_)), v.is_hierarchical());
        let mut env = PointMazeEnv::new(MazeSpec::point_maze(), Dynamics::default()).unwrap();
        let sr = evaluate(&mut policy, &mut env, 1).unwrap();
        assert!((0.0..=1.0).contains(&sr));
    }
}

#[test]
fn greedy_policy_is_deterministic() {
    let spec = MazeSpec::point_maze();
    let agent = HierAgent::new(hess::envs::observation_dim(&spec), HierAgentConfig::default(), 9).unwrap();
    let mut env = PointMazeEnv::new(spec, Dynamics::default()).unwrap();
    let mut trace = Vec::new();
    for _ in 0..2 {
        let mut p = agent.policy();
        p.reset();
        let mut obs = env.reset();
        let mut actions = Vec::new();
        for _ in 0..60 {
            let a = p.act(&obs, env.state()).unwrap();
            actions.push(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            obs = env.step(&a).observation;
        }
        trace.push(actions);
    }
    assert_eq!(trace[0], trace[1]);
}
