//! Ablation variants as pure configuration transforms.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::objectives::DiscriminatorObjective;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    /// Four-term discriminator objective.
    DShared1,
    /// Generators only ever see dataset images.
    NoPool,
    /// Inverse-task routing from the first epoch.
    NoStage1,
    /// Same-task routing throughout.
    NoStage2,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Baseline,
        AblationVariant::DShared1,
        AblationVariant::NoPool,
        AblationVariant::NoStage1,
        AblationVariant::NoStage2,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::DShared1 => "d_shared1",
            AblationVariant::NoPool => "no_pool",
            AblationVariant::NoStage1 => "no_stage1",
            AblationVariant::NoStage2 => "no_stage2",
        }
    }

    /// Column heading used in comparison tables.
    pub const fn heading(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "D_shared",
            AblationVariant::DShared1 => "D_shared1",
            AblationVariant::NoPool => "No Image pool",
            AblationVariant::NoStage1 => "No stage-1",
            AblationVariant::NoStage2 => "No stage-2",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.into()))
    }
}

/// Applies the variant's single delta to `base`.
pub fn make_variant(variant: AblationVariant, base: &TrainConfig) -> TrainConfig {
    let mut cfg = base.clone();
    if variant == AblationVariant::Baseline {
        return cfg;
    }
    cfg.variant = variant;
    match variant {
        AblationVariant::Baseline => {}
        AblationVariant::DShared1 => cfg.d_objective = DiscriminatorObjective::Reduced,
        AblationVariant::NoPool => cfg.pool.capacity = 0,
        AblationVariant::NoStage1 => cfg.stage_switch_epoch = 0,
        AblationVariant::NoStage2 => cfg.stage_switch_epoch = cfg.total_epochs,
    }
    cfg
}

/// Variant by name, for command-line and config input.
pub fn make_variant_named(name: &str, base: &TrainConfig) -> Result<TrainConfig, Error> {
    Ok(make_variant(name.parse()?, base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::TrainingStage;
    use crate::trainer::select_stage;

    #[test]
    fn names_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.name().parse::<AblationVariant>().unwrap(), v);
        }
        assert!(matches!("no_gan".parse::<AblationVariant>(), Err(Error::UnknownVariant(_))));
    }

    #[test]
    fn baseline_is_identity() {
        let base = TrainConfig::desk(32);
        assert_eq!(make_variant(AblationVariant::Baseline, &base), base);
    }

    #[test]
    fn each_variant_changes_one_field() {
        let base = TrainConfig::desk(32);
        let d1 = make_variant(AblationVariant::DShared1, &base);
        assert_eq!(d1.d_objective.terms().len(), 4);
        assert_eq!(d1.pool, base.pool);
        let np = make_variant(AblationVariant::NoPool, &base);
        assert_eq!(np.pool.capacity, 0);
        assert_eq!(np.d_objective, base.d_objective);
        let ns1 = make_variant(AblationVariant::NoStage1, &base);
        assert_eq!(select_stage(0, &ns1), TrainingStage::Stage2);
        let ns2 = make_variant(AblationVariant::NoStage2, &base);
        assert_eq!(select_stage(base.total_epochs - 1, &ns2), TrainingStage::Stage1);
    }
}
