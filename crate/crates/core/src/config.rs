//! Hyperparameter configurations for the three model families.
//!
//! Field names in the serialized form follow the search-space symbols
//! (`modNum`, `tdFCnum`, `sdCker`, ...).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Activation, PoolKind};
use crate::error::{Error, Result};
use crate::mesh::MeshMap;
use crate::space::SearchSpace;

pub const CONFIG_VERSION: u32 = 1;
pub const NUM_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Intertwined,
    Cascade,
    Parallel,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Intertwined, Family::Cascade, Family::Parallel];

    pub fn name(self) -> &'static str {
        match self {
            Family::Intertwined => "intertwined",
            Family::Cascade => "cascade",
            Family::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "intertwined" => Ok(Family::Intertwined),
            "cascade" => Ok(Family::Cascade),
            "parallel" => Ok(Family::Parallel),
            other => Err(Error::Config(format!("unknown model family '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Minimizer {
    Sgd,
    Rmsprop,
}

impl std::str::FromStr for Minimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Minimizer::Sgd),
            "rmsprop" => Ok(Minimizer::Rmsprop),
            other => Err(Error::Config(format!("unknown minimizer '{other}'"))),
        }
    }
}

/// Extra settings for the cascade and parallel baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub conv_kernels: usize,
    pub conv_size: usize,
    pub conv_stride: usize,
    pub conv_layers: usize,
    pub lstm_units: usize,
    pub lstm_layers: usize,
    pub fc_layers: usize,
    pub fc_units: usize,
    #[serde(default = "default_conv_act")]
    pub conv_act: Activation,
    #[serde(default)]
    pub mesh: MeshMap,
}

fn default_conv_act() -> Activation {
    Activation::Relu
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            conv_kernels: 16,
            conv_size: 2,
            conv_stride: 1,
            conv_layers: 1,
            lstm_units: 50,
            lstm_layers: 1,
            fc_layers: 1,
            fc_units: 50,
            conv_act: default_conv_act(),
            mesh: MeshMap::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub version: u32,
    pub family: Family,
    #[serde(rename = "modNum")]
    pub mod_num: usize,
    #[serde(rename = "tdFCnum")]
    pub td_fc_num: Vec<usize>,
    #[serde(rename = "tdNact")]
    pub td_act: Activation,
    #[serde(rename = "sdCnum")]
    pub sdc_num: Vec<usize>,
    #[serde(rename = "sdCker")]
    pub sdc_ker: Vec<usize>,
    #[serde(rename = "sdCact")]
    pub sdc_act: Activation,
    #[serde(rename = "poolSize")]
    pub pool_size: usize,
    #[serde(rename = "pooltype")]
    pub pool_type: PoolKind,
    /// LSTM widths; the stack ends at the first zero.
    #[serde(rename = "LSnum")]
    pub ls_num: Vec<usize>,
    #[serde(rename = "LSdrop")]
    pub ls_drop: f64,
    /// Hidden FC widths; the stack ends at the first zero.
    #[serde(rename = "FCnum")]
    pub fc_num: Vec<usize>,
    #[serde(rename = "FCact")]
    pub fc_act: Activation,
    #[serde(rename = "FCdrop")]
    pub fc_drop: f64,
    pub minimizer: Minimizer,
    /// Electrodes × samples.
    pub input_shape: [usize; 2],
    pub baseline: Option<BaselineConfig>,
    /// Allows values outside the search space.
    pub custom: bool,
}

impl Default for HyperConfig {
    /// Two modules of 16 tdFC units and 16 kernels of size 3, average
    /// pooling by 2, one 50-unit LSTM, one 30-unit FC layer, selu, rmsprop.
    fn default() -> Self {
        HyperConfig {
            version: CONFIG_VERSION,
            family: Family::Intertwined,
            mod_num: 2,
            td_fc_num: vec![16, 16],
            td_act: Activation::Selu,
            sdc_num: vec![16, 16],
            sdc_ker: vec![3, 3],
            sdc_act: Activation::Selu,
            pool_size: 2,
            pool_type: PoolKind::Average,
            ls_num: vec![50],
            ls_drop: 0.1,
            fc_num: vec![30],
            fc_act: Activation::Selu,
            fc_drop: 0.1,
            minimizer: Minimizer::Rmsprop,
            input_shape: [19, 200],
            baseline: None,
            custom: false,
        }
    }
}

fn active(widths: &[usize]) -> &[usize] {
    let end = widths.iter().position(|&w| w == 0).unwrap_or(widths.len());
    &widths[..end]
}

impl HyperConfig {
    pub fn baseline(family: Family) -> Self {
        HyperConfig {
            family,
            baseline: Some(BaselineConfig::default()),
            ..Self::default()
        }
    }

    pub fn lstm_widths(&self) -> &[usize] {
        active(&self.ls_num)
    }

    pub fn fc_widths(&self) -> &[usize] {
        active(&self.fc_num)
    }

    pub fn baseline_settings(&self) -> Result<&BaselineConfig> {
        self.baseline
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} config needs a 'baseline' section", self.family.name())))
    }

    /// Structural checks, plus search-space membership unless `custom`.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let [l, k] = self.input_shape;
        if l == 0 || k == 0 {
            return Err(Error::Config("input shape must be nonzero".into()));
        }
        for (name, rate) in [("LSdrop", self.ls_drop), ("FCdrop", self.fc_drop)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {rate}")));
            }
        }
        match self.family {
            Family::Intertwined => {
                if self.mod_num == 0 {
                    return Err(Error::Config("modNum must be at least 1".into()));
                }
                for (name, list) in [("tdFCnum", &self.td_fc_num), ("sdCnum", &self.sdc_num), ("sdCker", &self.sdc_ker)] {
                    if list.len() < self.mod_num {
                        return Err(Error::Config(format!(
                            "{name} has {} entries but modNum is {}",
                            list.len(),
                            self.mod_num
                        )));
                    }
                    if list[..self.mod_num].contains(&0) {
                        return Err(Error::Config(format!("{name} entries must be positive")));
                    }
                }
                if self.pool_size == 0 {
                    return Err(Error::Config("poolSize must be positive".into()));
                }
            }
            Family::Cascade | Family::Parallel => {
                let b = self.baseline_settings()?;
                if b.conv_kernels == 0 || b.conv_size == 0 || b.conv_stride == 0 || b.conv_layers == 0 {
                    return Err(Error::Config("convolution settings must be positive".into()));
                }
                if b.lstm_layers > 0 && b.lstm_units == 0 {
                    return Err(Error::Config("LSTM layers need a positive width".into()));
                }
                if b.fc_layers > 0 && b.fc_units == 0 {
                    return Err(Error::Config("FC layers need a positive width".into()));
                }
                b.mesh.validate()?;
                if b.mesh.channels() != l {
                    return Err(Error::Config(format!(
                        "mesh '{}' places {} electrodes but the input has {l}",
                        b.mesh.id,
                        b.mesh.channels()
                    )));
                }
            }
        }
        if !self.custom {
            SearchSpace::standard().check_membership(self)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: HyperConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = HyperConfig::default();
        cfg.validate().unwrap();
        let json = cfg.to_json().unwrap();
        assert!(json.contains("\"modNum\": 2"));
        assert!(json.contains("\"pooltype\": \"average\""));
        let back = HyperConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn baselines_validate_and_round_trip() {
        for fam in [Family::Cascade, Family::Parallel] {
            let cfg = HyperConfig::baseline(fam);
            let back = HyperConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn hash_changes_with_content() {
        let a = HyperConfig::default();
        let mut b = a.clone();
        b.pool_size = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn short_lists_are_rejected() {
        let cfg = HyperConfig {
            mod_num: 3,
            ..HyperConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn off_grid_values_need_custom_flag() {
        let mut cfg = HyperConfig {
            td_fc_num: vec![7, 16],
            ..HyperConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.custom = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn widths_stop_at_first_zero() {
        let cfg = HyperConfig {
            ls_num: vec![0, 50],
            fc_num: vec![30, 0, 100],
            ..HyperConfig::default()
        };
        assert!(cfg.lstm_widths().is_empty());
        assert_eq!(cfg.fc_widths(), &[30]);
    }

    #[test]
    fn pool_aliases_parse() {
        let json = r#"{"pooltype": "MaxPooling"}"#;
        let cfg: HyperConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.pool_type, PoolKind::Max);
    }

    #[test]
    fn baseline_without_section_is_rejected() {
        let cfg = HyperConfig {
            family: Family::Cascade,
            ..HyperConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
