use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{FlatAgentConfig, HierAgentConfig};
use crate::envs::{Dynamics, MazeSpec};
use crate::error::{Error, Result};
use crate::explorer::NoveltySource;

/// The method and its ablations / baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Hess,
    NoStability,
    NoStabilityNoPriority,
    NoPotential,
    ImmediateCounts,
    ReactiveRewards,
    LessonLike,
    Flat,
    DeZero,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Hess,
        Variant::NoStability,
        Variant::NoStabilityNoPriority,
        Variant::NoPotential,
        Variant::ImmediateCounts,
        Variant::ReactiveRewards,
        Variant::LessonLike,
        Variant::Flat,
        Variant::DeZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hess => "hess",
            Variant::NoStability => "no_stability",
            Variant::NoStabilityNoPriority => "no_stability_no_priority",
            Variant::NoPotential => "no_potential",
            Variant::ImmediateCounts => "immediate_counts",
            Variant::ReactiveRewards => "reactive_rewards",
            Variant::LessonLike => "lesson_like",
            Variant::Flat => "flat",
            Variant::DeZero => "de_zero",
        }
    }

    pub fn is_hierarchical(self) -> bool {
        self != Variant::Flat
    }

    /// Applies this variant's switches on top of a base configuration:
    ///
    /// | variant | switches |
    /// |---|---|
    /// | hess | none |
    /// | no_stability | `λ₀ = 0` |
    /// | no_stability_no_priority | `λ₀ = 0`, uniform triplets |
    /// | no_potential | `α = 0` |
    /// | immediate_counts | novelty from immediate visit mass |
    /// | reactive_rewards | `p0 = 0`, high-level intrinsic reward |
    /// | lesson_like | `p0 = 0`, `λ₀ = 0`, uniform triplets |
    /// | flat | single-level learner (hierarchy unused) |
    /// | de_zero | `d_e = 0` |
    pub fn apply(self, base: &HierAgentConfig) -> HierAgentConfig {
        let mut c = base.clone();
        match self {
            Variant::Hess | Variant::Flat => {}
            Variant::NoStability => c.repr.lambda0 = 0.0,
            Variant::NoStabilityNoPriority => {
                c.repr.lambda0 = 0.0;
                c.repr.prioritized = false;
            }
            Variant::NoPotential => c.explorer.alpha = 0.0,
            Variant::ImmediateCounts => c.explorer.novelty = NoveltySource::Immediate,
            Variant::ReactiveRewards => {
                c.explorer.p0 = 0.0;
                c.high_intrinsic = true;
            }
            Variant::LessonLike => {
                c.explorer.p0 = 0.0;
                c.repr.lambda0 = 0.0;
                c.repr.prioritized = false;
            }
            Variant::DeZero => c.explorer.d_e = 0.0,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Preset name: `point_maze`, `four_rooms`, optionally with an `_images` suffix.
    pub env: String,
    /// Inline maze description; overrides `env` when present.
    pub maze: Option<MazeSpec>,
    pub dynamics: Dynamics,
    pub total_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub variant: Variant,
    /// Env steps at which latent visualisations are exported (the final step always is).
    pub visual_steps: Vec<u64>,
    pub out_dir: PathBuf,
    pub agent: HierAgentConfig,
    pub flat: FlatAgentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "point_maze".into(),
            maze: None,
            dynamics: Dynamics::default(),
            total_env_steps: 300_000,
            eval_interval: 25_000,
            eval_episodes: 10,
            seeds: vec![0, 1, 2, 3, 4],
            variant: Variant::Hess,
            visual_steps: Vec::new(),
            out_dir: PathBuf::from("runs"),
            agent: HierAgentConfig::default(),
            flat: FlatAgentConfig::default(),
        }
    }
}

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "HESS_OUT_DIR";

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("eval_interval and eval_episodes must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.maze_spec()?.validate()?;
        self.agent.validate()
    }

    pub fn maze_spec(&self) -> Result<MazeSpec> {
        match &self.maze {
            Some(m) => Ok(m.clone()),
            None => MazeSpec::preset(&self.env),
        }
    }

    /// Agent configuration with the variant's switches applied.
    pub fn agent_for(&self, variant: Variant) -> HierAgentConfig {
        variant.apply(&self.agent)
    }

    /// `HESS_OUT_DIR` if set, the configured directory otherwise.
    pub fn resolved_out_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out_dir.clone())
    }
}
