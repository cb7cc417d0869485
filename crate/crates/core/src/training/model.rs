//! The four learned modules bundled over one parameter set.

use rand::Rng;

use crate::agent::{AgentConfig, AgentNet};
use crate::localization::{RlcConfig, RlcNet};
use crate::map_interp::MapInterpNet;
use crate::numerics::{NumericsError, ParamId, ParamSet};
use crate::vlm::{VlmConfig, VlmNet};

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vlm: VlmConfig,
    pub rlc: RlcConfig,
    pub agent: AgentConfig,
}

/// Parameter-name prefix of each module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Vlm,
    Localization,
    MapInterp,
    Agent,
}

impl Module {
    pub const ALL: [Module; 4] = [Module::Vlm, Module::Localization, Module::MapInterp, Module::Agent];

    pub fn prefix(self) -> &'static str {
        match self {
            Module::Vlm => "vlm/",
            Module::Localization => "rlc/",
            Module::MapInterp => "mapint/",
            Module::Agent => "agent/",
        }
    }

    pub fn of_name(name: &str) -> Option<Module> {
        Module::ALL.into_iter().find(|m| name.starts_with(m.prefix()))
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vlm: VlmNet,
    pub rlc: RlcNet,
    pub mapint: MapInterpNet,
    pub agent: AgentNet,
}

impl Model {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<(Model, ParamSet), NumericsError> {
        if cfg.vlm.local_size != cfg.rlc.local_size {
            return Err(NumericsError::Shape(format!(
                "vlm local size {} differs from localization local size {}",
                cfg.vlm.local_size, cfg.rlc.local_size
            )));
        }
        let mut set = ParamSet::new();
        let vlm = VlmNet::register(&mut set, &cfg.vlm, rng)?;
        let rlc = RlcNet::register(&mut set, &cfg.rlc, rng)?;
        let mapint = MapInterpNet::register(&mut set, rng)?;
        let agent = AgentNet::register(&mut set, &cfg.agent, rng)?;
        Ok((Model { cfg: cfg.clone(), vlm, rlc, mapint, agent }, set))
    }

    /// Binds to a parameter set that already holds every module.
    pub fn lookup(cfg: &ModelConfig, set: &ParamSet) -> Option<Model> {
        Some(Model {
            cfg: cfg.clone(),
            vlm: VlmNet::lookup(set, &cfg.vlm)?,
            rlc: RlcNet::lookup(set, &cfg.rlc)?,
            mapint: MapInterpNet::lookup(set)?,
            agent: AgentNet::lookup(set)?,
        })
    }

    pub fn local_size(&self) -> usize {
        self.cfg.rlc.local_size
    }
}

pub fn module_of(set: &ParamSet, id: ParamId) -> Option<Module> {
    Module::of_name(set.name(id))
}
