//! The domain schema: allowed typed relationships plus per-type attribute
//! domains. Every fact admitted into the graph is gated by this schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Value kind a declared attribute must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Text,
    Number,
    Year,
    Unit,
    Boolean,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueKind::Text => "text",
            ValueKind::Number => "number",
            ValueKind::Year => "year",
            ValueKind::Unit => "unit",
            ValueKind::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("conflicting attribute kind for {entity_type}.{attribute}")]
    ConflictingAttributeKind {
        entity_type: String,
        attribute: String,
    },
    #[error("allowed triple ({0}, {1}, {2}) references an undeclared name")]
    UndeclaredTripleName(String, String, String),
    #[error("attribute domain declared for unknown entity type {0}")]
    UnknownDomainType(String),
    #[error("schema file {path}: {message}")]
    File { path: String, message: String },
}

/// Entity types, relation labels, the set of allowed typed triples and the
/// per-type attribute domains.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub entity_types: BTreeSet<String>,
    pub relation_types: BTreeSet<String>,
    /// (source_type, relation, target_type) triples the graph may store.
    pub allowed: BTreeSet<(String, String, String)>,
    /// entity type -> attribute name -> value kind.
    pub attribute_domains: BTreeMap<String, BTreeMap<String, ValueKind>>,
}

impl Schema {
    pub fn new() -> Self {
        Schema::default()
    }

    pub fn declare_entity(&mut self, name: impl Into<String>) -> &mut Self {
        self.entity_types.insert(name.into());
        self
    }

    pub fn declare_relation(&mut self, name: impl Into<String>) -> &mut Self {
        self.relation_types.insert(name.into());
        self
    }

    pub fn declare_attribute(
        &mut self,
        entity_type: impl Into<String>,
        attribute: impl Into<String>,
        kind: ValueKind,
    ) -> &mut Self {
        let ty = entity_type.into();
        self.entity_types.insert(ty.clone());
        self.attribute_domains
            .entry(ty)
            .or_default()
            .insert(attribute.into(), kind);
        self
    }

    /// Allows a typed triple, declaring its names as a side effect.
    pub fn allow_triple(
        &mut self,
        src: impl Into<String>,
        label: impl Into<String>,
        dst: impl Into<String>,
    ) -> &mut Self {
        let (src, label, dst) = (src.into(), label.into(), dst.into());
        self.entity_types.insert(src.clone());
        self.entity_types.insert(dst.clone());
        self.relation_types.insert(label.clone());
        self.allowed.insert((src, label, dst));
        self
    }

    /// True iff `(src_type, label, dst_type)` is an allowed typed triple.
    pub fn allows(&self, src_type: &str, label: &str, dst_type: &str) -> bool {
        self.allowed.contains(&(
            src_type.to_string(),
            label.to_string(),
            dst_type.to_string(),
        ))
    }

    pub fn has_entity_type(&self, name: &str) -> bool {
        self.entity_types.contains(name)
    }

    /// Declared kind of `entity_type.attribute`, if any.
    pub fn declared_kind(&self, entity_type: &str, attribute: &str) -> Option<ValueKind> {
        self.attribute_domains
            .get(entity_type)
            .and_then(|attrs| attrs.get(attribute))
            .copied()
    }

    /// Checks internal consistency: allowed triples reference declared names
    /// and attribute domains only cover declared entity types.
    pub fn validate(&self) -> Result<(), SchemaError> {
        for (src, label, dst) in &self.allowed {
            if !self.entity_types.contains(src)
                || !self.entity_types.contains(dst)
                || !self.relation_types.contains(label)
            {
                return Err(SchemaError::UndeclaredTripleName(
                    src.clone(),
                    label.clone(),
                    dst.clone(),
                ));
            }
        }
        for ty in self.attribute_domains.keys() {
            if !self.entity_types.contains(ty) {
                return Err(SchemaError::UnknownDomainType(ty.clone()));
            }
        }
        Ok(())
    }

    /// Union of several schemas. Attribute domains merge key-wise; the same
    /// attribute declared with two different kinds is a conflict.
    pub fn merge(parts: &[Schema]) -> Result<Schema, SchemaError> {
        let mut out = Schema::new();
        for part in parts {
            out.entity_types.extend(part.entity_types.iter().cloned());
            out.relation_types
                .extend(part.relation_types.iter().cloned());
            out.allowed.extend(part.allowed.iter().cloned());
            for (ty, attrs) in &part.attribute_domains {
                let merged = out.attribute_domains.entry(ty.clone()).or_default();
                for (attr, kind) in attrs {
                    match merged.get(attr) {
                        Some(existing) if existing != kind => {
                            return Err(SchemaError::ConflictingAttributeKind {
                                entity_type: ty.clone(),
                                attribute: attr.clone(),
                            });
                        }
                        _ => {
                            merged.insert(attr.clone(), *kind);
                        }
                    }
                }
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Schema, SchemaError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| SchemaError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let schema: Schema =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| SchemaError::File {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<(), SchemaError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| SchemaError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| SchemaError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| SchemaError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    /// A company-centered ESG schema covering the entity and relation types
    /// that dominate real sustainability disclosures.
    pub fn default_esg() -> Schema {
        let mut s = Schema::new();
        for ty in [
            "Organization",
            "Facility",
            "Location",
            "Country",
            "KPIObservation",
            "SustainabilityClaim",
            "Goal",
            "Initiative",
            "Material",
            "Product",
            "Policy",
        ] {
            s.declare_entity(ty);
        }
        s.allow_triple("Organization", "reportsKPI", "KPIObservation");
        s.allow_triple("Organization", "claims", "SustainabilityClaim");
        s.allow_triple("Organization", "setsGoal", "Goal");
        s.allow_triple("Organization", "takesPartIn", "Initiative");
        s.allow_triple("Organization", "hasFacility", "Facility");
        s.allow_triple("Organization", "operatesIn", "Country");
        s.allow_triple("Organization", "adoptsPolicy", "Policy");
        s.allow_triple("Organization", "produces", "Product");
        s.allow_triple("Facility", "locatedIn", "Location");
        s.allow_triple("Facility", "reportsKPI", "KPIObservation");
        s.allow_triple("Location", "partOf", "Country");
        s.allow_triple("Product", "usesMaterial", "Material");
        s.allow_triple("Goal", "measuredBy", "KPIObservation");
        s.allow_triple("SustainabilityClaim", "supportedBy", "KPIObservation");
        s.allow_triple("Initiative", "targets", "Goal");

        s.declare_attribute("KPIObservation", "value", ValueKind::Number);
        s.declare_attribute("KPIObservation", "unit", ValueKind::Unit);
        s.declare_attribute("KPIObservation", "year", ValueKind::Year);
        s.declare_attribute("KPIObservation", "metric", ValueKind::Text);
        s.declare_attribute("KPIObservation", "text", ValueKind::Text);
        s.declare_attribute("Organization", "sector", ValueKind::Text);
        s.declare_attribute("Goal", "target_year", ValueKind::Year);
        s.declare_attribute("Goal", "description", ValueKind::Text);
        s.declare_attribute("SustainabilityClaim", "text", ValueKind::Text);
        s.declare_attribute("SustainabilityClaim", "year", ValueKind::Year);
        s.declare_attribute("Initiative", "name", ValueKind::Text);
        s.declare_attribute("Facility", "name", ValueKind::Text);
        s.declare_attribute("Material", "recycled", ValueKind::Boolean);
        s.declare_attribute("Product", "name", ValueKind::Text);
        s.declare_attribute("Policy", "description", ValueKind::Text);
        debug_assert!(s.validate().is_ok());
        s
    }
}
