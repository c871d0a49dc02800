//! The TOML run configuration. Every section and key is optional; omitted
//! keys take the defaults shown by `RunConfig::default()`.

use anyhow::{bail, Context, Result};
use iiprl_core::agent::TrainSchedule;
use iiprl_core::embedding::{EmbedConfig, HeadTraining};
use iiprl_core::environment::EnvConfig;
use iiprl_core::evaluation::{QueryMode, CENTRE_RATIOS};
use iiprl_core::imaging::GenSpec;
use iiprl_core::rewards::RewardKind;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. The generator, the identity head and the agent each
    /// derive their own named streams from it.
    pub seed: u64,
    pub data: DataSection,
    pub embed: EmbedSection,
    pub agent: AgentSection,
    pub eval: EvalSection,
}

/// Dataset source. Without `source` the synthetic generator is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Existing dataset directory (a `manifest.jsonl` plus images) copied
    /// by `gen-data` instead of generating one.
    pub source: Option<PathBuf>,
    pub identities: usize,
    pub images_per_view: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub clutter: [usize; 2],
    pub occluder_prob: f64,
    pub jitter: [f64; 2],
    pub train_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GenSpec::default();
        DataSection {
            source: None,
            identities: g.identities,
            images_per_view: g.images_per_view,
            frame_width: g.frame_width,
            frame_height: g.frame_height,
            clutter: g.clutter,
            occluder_prob: g.occluder_prob,
            jitter: g.jitter,
            train_fraction: g.train_fraction,
        }
    }
}

impl DataSection {
    pub fn gen_spec(&self, seed: u64) -> GenSpec {
        GenSpec {
            identities: self.identities,
            images_per_view: self.images_per_view,
            frame_width: self.frame_width,
            frame_height: self.frame_height,
            clutter: self.clutter,
            occluder_prob: self.occluder_prob,
            jitter: self.jitter,
            train_fraction: self.train_fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    pub features: EmbedConfig,
    pub training: HeadTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub reward: RewardKind,
    pub env: EnvConfig,
    pub schedule: TrainSchedule,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            reward: RewardKind::Rc,
            env: EnvConfig::default(),
            schedule: TrainSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Centre-crop ladder, and the ratio set of the random baseline.
    pub ratios: Vec<f64>,
    pub query: QueryMode,
    /// Longest rank reported in the CMC curve.
    pub max_rank: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ratios: CENTRE_RATIOS.to_vec(),
            query: QueryMode::Single,
            max_rank: 20,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataSection::default(),
            embed: EmbedSection::default(),
            agent: AgentSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {}", path.display(), e.message()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source.is_none() {
            self.data.gen_spec(self.seed).validate()?;
        }
        self.embed.features.validate()?;
        self.agent.env.validate()?;
        self.agent.schedule.validate()?;
        if self.eval.max_rank == 0 {
            bail!("eval.max_rank must be ≥ 1");
        }
        if self.eval.ratios.is_empty() {
            bail!("eval.ratios must not be empty");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
