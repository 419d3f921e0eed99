use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FaultError, FaultSpec, FaultTarget, Trigger};
use crate::memory::{ReplicaId, PAGE_SIZE};
use crate::platform::CoreId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultFamily {
    Register,
    MemoryBit,
    BackingBit,
    CorePermanent,
    ChannelBit,
}

impl FaultFamily {
    pub const ALL: [FaultFamily; 5] = [
        FaultFamily::Register,
        FaultFamily::MemoryBit,
        FaultFamily::BackingBit,
        FaultFamily::CorePermanent,
        FaultFamily::ChannelBit,
    ];
}

/// Relative sampling weight of each fault family. Zero leaves a family out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSpace {
    pub register: f64,
    pub memory_bit: f64,
    pub backing_bit: f64,
    pub core_permanent: f64,
    pub channel_bit: f64,
}

impl FaultSpace {
    pub fn only(family: FaultFamily) -> Self {
        let mut s = Self::default();
        *s.weight_mut(family) = 1.0;
        s
    }

    pub fn weight(&self, family: FaultFamily) -> f64 {
        match family {
            FaultFamily::Register => self.register,
            FaultFamily::MemoryBit => self.memory_bit,
            FaultFamily::BackingBit => self.backing_bit,
            FaultFamily::CorePermanent => self.core_permanent,
            FaultFamily::ChannelBit => self.channel_bit,
        }
    }

    pub fn weight_mut(&mut self, family: FaultFamily) -> &mut f64 {
        match family {
            FaultFamily::Register => &mut self.register,
            FaultFamily::MemoryBit => &mut self.memory_bit,
            FaultFamily::BackingBit => &mut self.backing_bit,
            FaultFamily::CorePermanent => &mut self.core_permanent,
            FaultFamily::ChannelBit => &mut self.channel_bit,
        }
    }

    pub fn families(&self) -> Result<Vec<(FaultFamily, f64)>, FaultError> {
        let mut out = Vec::new();
        for f in FaultFamily::ALL {
            let w = self.weight(f);
            if !w.is_finite() || w < 0.0 {
                return Err(FaultError::Profile(format!(
                    "weight of {f:?} must be finite and >= 0"
                )));
            }
            if w > 0.0 {
                out.push((f, w));
            }
        }
        if out.is_empty() {
            return Err(FaultError::EmptySpace);
        }
        Ok(out)
    }
}

/// Bounds from a fault-free profiling run, so sampled triggers hit live
/// state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    /// Instructions one replica retires over the whole run.
    pub instructions: u64,
    pub events: u64,
    pub pages: Vec<u32>,
    pub replicas: u32,
    /// Cores hosting replicas.
    pub cores: Vec<CoreId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    pub seed: u64,
    pub runs: u64,
    #[serde(default)]
    pub families: FaultSpace,
}

impl Campaign {
    pub fn plan(&self, profile: &Profile) -> Result<Vec<FaultSpec>, FaultError> {
        plan_campaign(self.seed, &self.families, self.runs, profile)
    }
}

/// Seed of run `index` in a campaign seeded with `seed`.
pub fn run_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// One single-fault spec per run, sampled from `space` within `profile`.
pub fn plan_campaign(
    seed: u64,
    space: &FaultSpace,
    runs: u64,
    profile: &Profile,
) -> Result<Vec<FaultSpec>, FaultError> {
    let families = space.families()?;
    for &(f, _) in &families {
        let missing = match f {
            FaultFamily::Register | FaultFamily::MemoryBit | FaultFamily::BackingBit
                if profile.replicas == 0 || profile.instructions == 0 =>
            {
                Some("no replicas or no instructions")
            }
            FaultFamily::MemoryBit | FaultFamily::BackingBit if profile.pages.is_empty() => {
                Some("no mapped pages")
            }
            FaultFamily::CorePermanent if profile.cores.is_empty() || profile.instructions == 0 => {
                Some("no cores or no instructions")
            }
            FaultFamily::ChannelBit if profile.events == 0 => Some("no events"),
            _ => None,
        };
        if let Some(why) = missing {
            return Err(FaultError::Profile(format!(
                "cannot sample {f:?}: profile has {why}"
            )));
        }
    }
    let pick = WeightedIndex::new(families.iter().map(|&(_, w)| w))
        .map_err(|e| FaultError::Profile(e.to_string()))?;

    let specs = (0..runs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed(seed, i));
            let family = families[pick.sample(&mut rng)].0;
            sample(family, &mut rng, profile)
        })
        .collect();
    Ok(specs)
}

fn sample(family: FaultFamily, rng: &mut ChaCha8Rng, p: &Profile) -> FaultSpec {
    let at = |rng: &mut ChaCha8Rng| Trigger::AtInstruction(rng.random_range(0..p.instructions));
    let replica = |rng: &mut ChaCha8Rng| ReplicaId(rng.random_range(0..p.replicas));
    let page = |rng: &mut ChaCha8Rng| p.pages[rng.random_range(0..p.pages.len())];
    match family {
        FaultFamily::Register => {
            let target = FaultTarget::Register {
                replica: replica(rng),
                reg: rng.random_range(0..8),
                bit: rng.random_range(0..64),
            };
            FaultSpec::new(target, at(rng))
        }
        FaultFamily::MemoryBit => {
            let target = FaultTarget::MemoryBit {
                replica: replica(rng),
                page: page(rng),
                byte: rng.random_range(0..PAGE_SIZE as u16),
                bit: rng.random_range(0..8),
            };
            FaultSpec::new(target, at(rng))
        }
        FaultFamily::BackingBit => {
            let target = FaultTarget::BackingBit {
                replica: replica(rng),
                page: page(rng),
                byte: rng.random_range(0..PAGE_SIZE as u16),
                bit: rng.random_range(0..8),
            };
            FaultSpec::new(target, at(rng))
        }
        FaultFamily::CorePermanent => {
            let core = p.cores[rng.random_range(0..p.cores.len())];
            FaultSpec::new(FaultTarget::CorePermanent { core }, at(rng))
        }
        FaultFamily::ChannelBit => FaultSpec::new(
            FaultTarget::ChannelBit {
                bit: rng.random_range(0..64),
            },
            Trigger::AtEventIndex(rng.random_range(0..p.events)),
        ),
    }
}
