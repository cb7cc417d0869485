//! Training configuration (TOML).

use std::path::Path;

use crate::agent::{A3cConfig, RewardWeights};
use crate::maze::{EnvConfig, RenderConfig};

use super::curriculum::{default_stages, Stage};
use super::episode::PerceptionMode;
use super::model::{ModelConfig, Module};
use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub vlm: f64,
    pub localization: f64,
    pub map_interp: f64,
    pub agent: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates { vlm: 2e-4, localization: 2e-4, map_interp: 5e-4, agent: 5e-4 }
    }
}

impl LearningRates {
    pub fn of(&self, m: Module) -> f64 {
        match m {
            Module::Vlm => self.vlm,
            Module::Localization => self.localization,
            Module::MapInterp => self.map_interp,
            Module::Agent => self.agent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: LearningRates,
    pub decay: f64,
    pub eps: f64,
    /// Per-module gradient-norm clip.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: LearningRates::default(), decay: 0.99, eps: 1e-5, grad_clip: 40.0 }
    }
}

/// Multipliers of the loss terms; a zero weight skips the term entirely.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub agent: f64,
    pub vlm: f64,
    pub loc_xent: f64,
    pub loc_dist: f64,
    pub loc_local_map: f64,
    pub reward_map: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { agent: 1.0, vlm: 1.0, loc_xent: 1.0, loc_dist: 0.1, loc_local_map: 1.0, reward_map: 1.0 }
    }
}

impl LossWeights {
    pub fn localization_active(&self) -> bool {
        self.loc_xent > 0.0 || self.loc_dist > 0.0 || self.loc_local_map > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Budget {
    /// Environment steps summed over workers.
    pub env_steps: u64,
    pub episodes: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { env_steps: 200_000_000, episodes: 10_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Starting maze size of each worker; the worker count is its length.
    pub workers: Vec<usize>,
    pub curriculum: Vec<Stage>,
    /// Round-robin on the calling thread instead of one thread per worker.
    pub deterministic: bool,
    pub mode: PerceptionMode,
    pub rollout_len: usize,
    pub history_capacity: usize,
    pub batch: usize,
    /// Iterations (summed over workers) between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    pub budget: Budget,
    pub optim: OptimConfig,
    pub losses: LossWeights,
    pub rewards: RewardWeights,
    pub a3c: A3cConfig,
    pub env: EnvConfig,
    pub render: RenderConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Four workers: two on 5x5, one on 7x7, one on 9x9.
    pub fn desk() -> Self {
        TrainConfig {
            seed: 1,
            workers: vec![5, 5, 7, 9],
            curriculum: default_stages(),
            deterministic: false,
            mode: PerceptionMode::Full,
            rollout_len: 20,
            history_capacity: 2000,
            batch: 20,
            checkpoint_every: 2000,
            budget: Budget::default(),
            optim: OptimConfig::default(),
            losses: LossWeights::default(),
            rewards: RewardWeights::default(),
            a3c: A3cConfig::default(),
            env: EnvConfig::default(),
            render: RenderConfig::default(),
            model: ModelConfig::default(),
        }
    }

    /// Sixteen workers: eight on 5x5 and two on each larger size.
    pub fn large_scale() -> Self {
        TrainConfig { workers: vec![5, 5, 5, 5, 5, 5, 5, 5, 7, 7, 9, 9, 11, 11, 13, 13], ..TrainConfig::desk() }
    }

    /// Single deterministic worker on 5x5 with ground-truth position and
    /// plan; only the agent is trained.
    pub fn oracle_agent() -> Self {
        TrainConfig {
            workers: vec![5],
            curriculum: vec![Stage { size: 5, threshold: 60.0 }],
            deterministic: true,
            mode: PerceptionMode::Both,
            losses: LossWeights { agent: 1.0, vlm: 0.0, loc_xent: 0.0, loc_dist: 0.0, loc_local_map: 0.0, reward_map: 0.0 },
            ..TrainConfig::desk()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.workers.is_empty() {
            return bad("at least one worker is required".into());
        }
        if self.curriculum.is_empty() {
            return bad("curriculum has no stages".into());
        }
        for s in &self.curriculum {
            if s.size < 5 || s.size % 2 == 0 || s.threshold <= 0.0 {
                return bad(format!("invalid curriculum stage {s:?}"));
            }
        }
        for &w in &self.workers {
            if !self.curriculum.iter().any(|s| s.size == w) {
                return bad(format!("worker start size {w} is not a curriculum stage"));
            }
        }
        if self.rollout_len == 0 || self.history_capacity == 0 || self.batch == 0 {
            return bad("rollout_len, history_capacity and batch must be positive".into());
        }
        if self.env.step_cap == 0 {
            return bad("env.step_cap must be positive".into());
        }
        let o = &self.optim;
        if !(o.decay > 0.0 && o.decay < 1.0 && o.eps > 0.0 && o.grad_clip > 0.0) {
            return bad("optimizer decay must lie in (0,1); eps and grad_clip must be positive".into());
        }
        if Module::ALL.iter().any(|&m| o.lr.of(m) < 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if self.model.vlm.local_size != self.model.rlc.local_size || self.model.rlc.local_size % 2 == 0 {
            return bad("vlm and localization local sizes must agree and be odd".into());
        }
        let l = &self.losses;
        if [l.agent, l.vlm, l.loc_xent, l.loc_dist, l.loc_local_map, l.reward_map].iter().any(|&w| w < 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        for cfg in [TrainConfig::desk(), TrainConfig::large_scale(), TrainConfig::oracle_agent()] {
            let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
        assert_eq!(TrainConfig::large_scale().workers.len(), 16);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = TrainConfig::from_toml("seed = 9\nworkers = [5]\n[optim.lr]\nagent = 0.001\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.optim.lr.agent, 0.001);
        assert_eq!(cfg.optim.lr.vlm, LearningRates::default().vlm);
        assert_eq!(cfg.rollout_len, 20);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml("workers = [6]").is_err());
        assert!(TrainConfig::from_toml("workers = []").is_err());
        assert!(TrainConfig::from_toml("batch = 0").is_err());
        assert!(TrainConfig::from_toml("[optim]\ndecay = 1.5").is_err());
        assert!(TrainConfig::from_toml("nonsense = = 1").is_err());
    }
}
