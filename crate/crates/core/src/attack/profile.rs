//! Constraint profiles: named per-feature modifiability and value rules
//! modeling what an attacker can actually change in the problem space
//! (e.g. additive-only counters, benign-observed values only).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::dataset::{Constraint, FeatureSpec, ValueDomain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRule {
    pub feature: String,
    pub modifiable: bool,
    pub constraint: Constraint,
    pub value_domain: ValueDomain,
}

/// Either the dataset's own specs, or a named overlay. Under a named
/// profile every feature it does not mention becomes non-modifiable.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintProfile {
    DatasetDefaults,
    Named { name: String, rules: Vec<ProfileRule> },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    name: String,
    rules: Vec<ProfileRule>,
}

impl ConstraintProfile {
    pub fn name(&self) -> &str {
        match self {
            ConstraintProfile::DatasetDefaults => "dataset_defaults",
            ConstraintProfile::Named { name, .. } => name,
        }
    }

    pub fn load(path: &Path) -> Result<Self, AttackError> {
        let file = File::open(path).map_err(|e| AttackError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let doc: ProfileFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| AttackError::InvalidConfig(format!("profile {}: {e}", path.display())))?;
        Ok(ConstraintProfile::Named {
            name: doc.name,
            rules: doc.rules,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AttackError> {
        let ConstraintProfile::Named { name, rules } = self else {
            return Err(AttackError::InvalidConfig(
                "dataset_defaults profile has no file form".into(),
            ));
        };
        let file = File::create(path).map_err(|e| AttackError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(
            &mut w,
            &ProfileFile {
                name: name.clone(),
                rules: rules.clone(),
            },
        )
        .map_err(|e| AttackError::InvalidConfig(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| AttackError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }

    /// Applies the profile to the dataset's specs. Rules must reference
    /// existing feature names and may not mark a fixed feature modifiable.
    pub fn effective_specs(&self, specs: &[FeatureSpec]) -> Result<Vec<FeatureSpec>, AttackError> {
        match self {
            ConstraintProfile::DatasetDefaults => Ok(specs.to_vec()),
            ConstraintProfile::Named { rules, .. } => {
                let mut out: Vec<FeatureSpec> = specs
                    .iter()
                    .map(|s| FeatureSpec {
                        modifiable: false,
                        ..s.clone()
                    })
                    .collect();
                for rule in rules {
                    let idx = specs
                        .iter()
                        .position(|s| s.name == rule.feature)
                        .ok_or_else(|| AttackError::ProfileUnknownFeature {
                            name: rule.feature.clone(),
                        })?;
                    out[idx].modifiable = rule.modifiable;
                    out[idx].constraint = rule.constraint;
                    out[idx].value_domain = rule.value_domain;
                    out[idx]
                        .validate()
                        .map_err(|e| AttackError::InvalidConfig(e.to_string()))?;
                }
                Ok(out)
            }
        }
    }
}
