//! Claim grounding: parse a claim into a target company plus typed key
//! elements mapped onto the schema.
//!
//! Whatever the provider returns, the output always contains at least one
//! `KPIObservation` element — quantifiable evidence must always be queryable,
//! so claims without explicit KPI content get an anchor element carrying the
//! full claim text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine_similarity, EmbedError, Embedder};
use crate::graph::{Graph, NodeId};
use crate::ingest::strip_code_fences;
use crate::provider::{ChatRequest, Provider, ProviderError, RequestTag};

/// The entity type every grounded claim is anchored on.
pub const KPI_OBSERVATION_TYPE: &str = "KPIObservation";

/// A sustainability claim to verify, with optional dataset metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl Claim {
    pub fn new(text: impl Into<String>) -> Result<Claim, GroundingError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GroundingError::EmptyClaim);
        }
        Ok(Claim { text, id: None })
    }
}

/// A typed key element extracted from the claim: the retrieval query unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedElement {
    pub entity_type: String,
    /// Raw attribute values as extracted (e.g. {"value": 30, "unit": "%"}).
    #[serde(default)]
    pub properties: BTreeMap<String, serde_json::Value>,
    /// The verbatim source phrase; this is the embedding input in retrieval.
    pub phrase: String,
}

/// Target company plus the typed key-element set extracted from a claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedClaim {
    pub company_name: String,
    /// The linked Organization node, if one matched. Absence is a signal the
    /// pipelines turn into an abstention, not a failure here.
    pub company_node: Option<NodeId>,
    pub elements: Vec<GroundedElement>,
}

impl GroundedClaim {
    pub fn has_kpi_anchor(&self) -> bool {
        self.elements
            .iter()
            .any(|e| e.entity_type == KPI_OBSERVATION_TYPE)
    }
}

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("claim text must be non-empty")]
    EmptyClaim,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

const GROUND_SYSTEM: &str = "You parse a corporate sustainability claim for verification \
against a knowledge graph. Identify the target company and the claim's key elements (KPIs, \
numeric values, goals, policies, initiatives), each mapped to one of the allowed entity types. \
Respond with a single JSON object: {\"company\": \"...\", \"elements\": [{\"type\": \"...\", \
\"props\": {...}, \"phrase\": \"...\"}]} where phrase is the verbatim claim fragment the \
element came from.";

/// Grounds a claim: ask the provider for the company and typed elements,
/// link the company to an Organization node by name similarity (linking
/// only — grounding never creates nodes), drop unknown-typed elements, and
/// append the `KPIObservation` anchor when missing.
pub fn ground_claim(
    claim: &Claim,
    graph: &Graph,
    provider: &dyn Provider,
    embedder: &dyn Embedder,
    link_threshold: f64,
) -> Result<GroundedClaim, GroundingError> {
    let types: Vec<&str> = graph
        .schema()
        .entity_types
        .iter()
        .map(String::as_str)
        .collect();
    let user = format!(
        "Allowed entity types: {}\n\nClaim: {}",
        types.join(", "),
        claim.text
    );
    let request = ChatRequest::new(RequestTag::Ground, GROUND_SYSTEM, user);
    let response = provider.complete(&request)?;

    let (company_name, mut elements) = parse_grounding_response(&response.text, graph);

    if !elements
        .iter()
        .any(|e| e.entity_type == KPI_OBSERVATION_TYPE)
    {
        let mut properties = BTreeMap::new();
        properties.insert(
            "text".to_string(),
            serde_json::Value::String(claim.text.clone()),
        );
        elements.push(GroundedElement {
            entity_type: KPI_OBSERVATION_TYPE.to_string(),
            properties,
            phrase: claim.text.clone(),
        });
    }

    let company_node = if company_name.is_empty() {
        None
    } else {
        link_company(graph, &company_name, embedder, link_threshold)?
    };

    Ok(GroundedClaim {
        company_name,
        company_node,
        elements,
    })
}

/// Best-effort parse of the provider's grounding JSON. Anything unusable
/// degrades to an empty company and no elements; the anchor invariant is
/// restored by the caller.
fn parse_grounding_response(text: &str, graph: &Graph) -> (String, Vec<GroundedElement>) {
    #[derive(Deserialize)]
    struct RawElement {
        #[serde(rename = "type")]
        entity_type: String,
        #[serde(default)]
        props: BTreeMap<String, serde_json::Value>,
        #[serde(default)]
        phrase: Option<String>,
    }
    #[derive(Deserialize)]
    struct RawGrounding {
        #[serde(default)]
        company: String,
        #[serde(default)]
        elements: Vec<serde_json::Value>,
    }

    let parsed: Option<RawGrounding> = serde_json::from_str(strip_code_fences(text)).ok();
    let Some(raw) = parsed else {
        return (String::new(), Vec::new());
    };
    let mut elements = Vec::new();
    for item in raw.elements {
        match serde_json::from_value::<RawElement>(item) {
            Ok(el) if graph.schema().has_entity_type(&el.entity_type) => {
                elements.push(GroundedElement {
                    phrase: el.phrase.unwrap_or_else(|| render_props(&el.props)),
                    entity_type: el.entity_type,
                    properties: el.props,
                });
            }
            Ok(el) => {
                tracing::debug!(entity_type = %el.entity_type, "dropping element of unknown type");
            }
            Err(e) => {
                tracing::debug!(error = %e, "dropping malformed grounding element");
            }
        }
    }
    (raw.company, elements)
}

fn render_props(props: &BTreeMap<String, serde_json::Value>) -> String {
    props
        .iter()
        .map(|(k, v)| format!("{k} {v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Finds the best-matching Organization node by name-embedding similarity.
/// Never creates nodes: a claim must not invent corporate entities.
fn link_company(
    graph: &Graph,
    company_name: &str,
    embedder: &dyn Embedder,
    link_threshold: f64,
) -> Result<Option<NodeId>, GroundingError> {
    let query = embedder.embed(company_name)?;
    let mut best: Option<(f64, NodeId)> = None;
    for id in graph.nodes_of_type("Organization") {
        let node = graph.node(id).expect("indexed node exists");
        let candidate = embedder.embed(&node.canonical_name)?;
        let sim = cosine_similarity(&query, &candidate)?;
        let better = match best {
            None => sim >= link_threshold,
            Some((best_sim, _)) => sim >= link_threshold && sim > best_sim,
        };
        if better {
            best = Some((sim, id));
        }
    }
    Ok(best.map(|(_, id)| id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::DeterministicEmbedder;
    use crate::graph::Properties;
    use crate::provider::MockProvider;
    use crate::schema::Schema;

    fn graph_with_company(name: &str) -> Graph {
        let mut g = Graph::new(Schema::default_esg());
        g.add_node("Organization", name, Properties::new()).unwrap();
        g
    }

    fn claim() -> Claim {
        Claim::new("Company X reduced its CO2 emissions by 30% in 2023").unwrap()
    }

    const WORKED_RESPONSE: &str = r#"{
        "company": "Company X",
        "elements": [
            {"type": "KPIObservation",
             "props": {"value": 30, "unit": "%", "year": 2023},
             "phrase": "reduced its CO2 emissions by 30% in 2023"}
        ]
    }"#;

    #[test]
    fn worked_example_grounds_company_and_kpi() {
        let graph = graph_with_company("Company X");
        let embedder = DeterministicEmbedder::default();
        let mut mock = MockProvider::new();
        mock.push_queue(RequestTag::Ground, WORKED_RESPONSE);
        let grounded = ground_claim(&claim(), &graph, &mock, &embedder, 0.85).unwrap();
        assert_eq!(grounded.company_name, "Company X");
        assert!(grounded.company_node.is_some());
        assert_eq!(grounded.elements.len(), 1);
        let el = &grounded.elements[0];
        assert_eq!(el.entity_type, "KPIObservation");
        assert_eq!(el.properties["value"], serde_json::json!(30));
        assert_eq!(el.properties["unit"], serde_json::json!("%"));
        assert_eq!(el.properties["year"], serde_json::json!(2023));
    }

    #[test]
    fn kpi_anchor_appended_when_provider_returns_only_company() {
        let graph = graph_with_company("Company X");
        let embedder = DeterministicEmbedder::default();
        let mut mock = MockProvider::new();
        mock.push_queue(RequestTag::Ground, r#"{"company": "Company X", "elements": []}"#);
        let c = claim();
        let grounded = ground_claim(&c, &graph, &mock, &embedder, 0.85).unwrap();
        assert_eq!(grounded.elements.len(), 1);
        let anchor = &grounded.elements[0];
        assert_eq!(anchor.entity_type, "KPIObservation");
        assert_eq!(anchor.properties["text"], serde_json::json!(c.text));
        assert_eq!(anchor.phrase, c.text);
    }

    #[test]
    fn company_absent_from_graph_is_a_signal_not_an_error() {
        let graph = graph_with_company("Entirely Different Industries");
        let embedder = DeterministicEmbedder::default();
        let mut mock = MockProvider::new();
        mock.push_queue(RequestTag::Ground, WORKED_RESPONSE);
        let grounded = ground_claim(&claim(), &graph, &mock, &embedder, 0.85).unwrap();
        assert!(grounded.company_node.is_none());
        assert!(!grounded.elements.is_empty());
    }

    #[test]
    fn unknown_typed_elements_are_dropped() {
        let graph = graph_with_company("Company X");
        let embedder = DeterministicEmbedder::default();
        let mut mock = MockProvider::new();
        mock.push_queue(
            RequestTag::Ground,
            r#"{"company": "Company X", "elements": [
                {"type": "Unicorn", "props": {}, "phrase": "magic"},
                {"type": "Goal", "props": {}, "phrase": "net zero"}
            ]}"#,
        );
        let grounded = ground_claim(&claim(), &graph, &mock, &embedder, 0.85).unwrap();
        let types: Vec<&str> = grounded
            .elements
            .iter()
            .map(|e| e.entity_type.as_str())
            .collect();
        assert_eq!(types, vec!["Goal", "KPIObservation"]);
    }

    #[test]
    fn garbage_response_still_yields_kpi_anchor() {
        let graph = graph_with_company("Company X");
        let embedder = DeterministicEmbedder::default();
        let mut mock = MockProvider::new();
        mock.push_queue(RequestTag::Ground, "I am sorry, I cannot parse claims today.");
        let grounded = ground_claim(&claim(), &graph, &mock, &embedder, 0.85).unwrap();
        assert!(grounded.has_kpi_anchor());
        assert!(grounded.company_node.is_none());
        assert!(grounded.company_name.is_empty());
    }

    #[test]
    fn grounding_never_mutates_the_graph() {
        let graph = graph_with_company("Company X");
        let before = graph.node_count();
        let embedder = DeterministicEmbedder::default();
        let mut mock = MockProvider::new();
        mock.push_queue(RequestTag::Ground, WORKED_RESPONSE);
        ground_claim(&claim(), &graph, &mock, &embedder, 0.85).unwrap();
        assert_eq!(graph.node_count(), before);
    }

    #[test]
    fn deterministic_given_deterministic_provider() {
        let graph = graph_with_company("Company X");
        let embedder = DeterministicEmbedder::default();
        let mut mock = MockProvider::new();
        mock.script_contains(RequestTag::Ground, "Company X", WORKED_RESPONSE);
        let a = ground_claim(&claim(), &graph, &mock, &embedder, 0.85).unwrap();
        let b = ground_claim(&claim(), &graph, &mock, &embedder, 0.85).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_claim_rejected() {
        assert!(matches!(
            Claim::new("   "),
            Err(GroundingError::EmptyClaim)
        ));
    }
}
