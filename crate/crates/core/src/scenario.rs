//! Scenario files: both agents' data plus mechanism and solver settings, in TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusConfig;
use crate::dynamic::{CommitmentMode, InventoryModel};
use crate::error::{Error, Result};
use crate::mechanism::{FeePolicy, StatusQuoSource};
use crate::transport::{RetailerSpec, SupplierSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Centralized,
    Cpp,
    Protocol,
}

fn default_menu_steps() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MenuConfig {
    /// Explicit plans; when absent a sweep from the status quo toward the
    /// efficient plan is offered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_menu_steps")]
    pub steps: usize,
    /// Fee constant; defaults to the additive fee's alpha.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for MenuConfig {
    fn default() -> Self {
        Self {
            plans: None,
            steps: default_menu_steps(),
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicConfig {
    pub model: InventoryModel,
    #[serde(default = "default_commitment")]
    pub commitment: CommitmentMode,
    /// Realized weekly demand; defaults to the forecast.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized: Option<Vec<f64>>,
}

fn default_commitment() -> CommitmentMode {
    CommitmentMode::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub mode: RunMode,
    pub retailer: RetailerSpec,
    pub supplier: SupplierSpec,
    #[serde(default)]
    pub fee: FeePolicy,
    #[serde(default)]
    pub status_quo: StatusQuoSource,
    #[serde(default)]
    pub menu: MenuConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicConfig>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let schema = |path: &str, e: Error| Error::Schema {
            path: path.into(),
            detail: e.to_string(),
        };
        self.retailer.validate().map_err(|e| schema("retailer", e))?;
        self.supplier.validate().map_err(|e| schema("supplier", e))?;
        if self.retailer.inbound_count() != self.supplier.inbound_count() {
            return Err(Error::Schema {
                path: "supplier.gross_profit".into(),
                detail: format!(
                    "supplier serves {} inbound nodes, retailer has {}",
                    self.supplier.inbound_count(),
                    self.retailer.inbound_count()
                ),
            });
        }
        self.fee.validate().map_err(|e| schema("fee", e))?;
        if let Some(plans) = &self.menu.plans {
            if plans.is_empty() || plans.iter().any(|p| p.len() != self.retailer.inbound_count()) {
                return Err(Error::Schema {
                    path: "menu.plans".into(),
                    detail: "every menu plan needs one entry per inbound node".into(),
                });
            }
        }
        if self.menu.steps == 0 {
            return Err(Error::Schema {
                path: "menu.steps".into(),
                detail: "at least one step".into(),
            });
        }
        if let Some(d) = &self.dynamic {
            d.model.validate().map_err(|e| schema("dynamic.model", e))?;
            if d.realized.as_ref().is_some_and(|r| r.len() != d.model.forecast.len()) {
                return Err(Error::Schema {
                    path: "dynamic.realized".into(),
                    detail: "realized demand must cover the forecast's weeks".into(),
                });
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            detail: e.inner().message().to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema {
            path: ".".into(),
            detail: e.to_string(),
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_toml(&text)
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario.to_toml()?)?;
    Ok(())
}
