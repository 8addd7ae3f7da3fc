//! Schema-driven evidence-subgraph extraction.
//!
//! For each typed key element of a grounded claim: collect all nodes of that
//! type within k undirected hops of the company node, gate them by cosine
//! similarity between the element phrase embedding and the node embedding,
//! keep the top-n, and add the shortest path from the company node to each
//! survivor. The union over all elements is the evidence subgraph — reasoning
//! paths, not isolated facts.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::embed::{cosine_similarity, EmbedError, Embedder};
use crate::graph::{node_embedding_text, Edge, Graph, GraphError, GraphPath, NodeId};
use crate::grounding::{GroundedClaim, GroundedElement};

/// Retrieval defaults: 3 nodes per type, similarity gate 0.2, 3 hops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct RetrievalParams {
    pub top_n: usize,
    pub threshold: f64,
    pub k: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            top_n: 3,
            threshold: 0.2,
            k: 3,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.top_n < 1 || !(0.0..=1.0).contains(&self.threshold) || self.k < 1 {
            return Err(RetrievalError::InvalidParams(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("grounded claim has no company node")]
    MissingCompanyNode,
    #[error("invalid retrieval parameters: {0:?}")]
    InvalidParams(RetrievalParams),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Why a node entered the subgraph: which element selected it and along
/// which path it connects to the company node.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub element: GroundedElement,
    pub target: NodeId,
    pub similarity: f64,
    pub path: GraphPath,
}

/// The retrieved evidence subgraph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceSubgraph {
    pub nodes: BTreeSet<NodeId>,
    pub edges: BTreeSet<Edge>,
    pub paths: Vec<PathRecord>,
}

impl EvidenceSubgraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Runs the schema-driven context retrieval over a sealed graph.
///
/// Candidate similarity uses the node's cached embedding when present (the
/// text is canonical name + rendered properties), computing it on the fly
/// otherwise. Ties are broken by ascending node id; the company node itself
/// is eligible with a zero-length path when its type matches.
pub fn retrieve_context(
    graph: &Graph,
    grounded: &GroundedClaim,
    params: &RetrievalParams,
    embedder: &dyn Embedder,
) -> Result<EvidenceSubgraph, RetrievalError> {
    params.validate()?;
    let company = grounded
        .company_node
        .ok_or(RetrievalError::MissingCompanyNode)?;

    let mut subgraph = EvidenceSubgraph::default();
    for element in &grounded.elements {
        let candidates = graph.nodes_of_type_within_k(company, &element.entity_type, params.k)?;
        if candidates.is_empty() {
            continue;
        }
        let phrase_embedding = embedder.embed(&element.phrase)?;
        let mut gated: Vec<(NodeId, f64)> = Vec::new();
        for id in candidates {
            let node = graph.node(id).expect("candidate exists");
            let similarity = match &node.embedding {
                Some(cached) => cosine_similarity(&phrase_embedding, cached)?,
                None => {
                    let computed = embedder.embed(&node_embedding_text(node))?;
                    cosine_similarity(&phrase_embedding, &computed)?
                }
            };
            if similarity >= params.threshold {
                gated.push((id, similarity));
            }
        }
        // Descending similarity, ascending node id on ties.
        gated.sort_by(|(ida, sa), (idb, sb)| {
            sb.partial_cmp(sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ida.cmp(idb))
        });
        gated.truncate(params.top_n);

        for (target, similarity) in gated {
            let path = graph
                .shortest_path(company, target)?
                .expect("candidate is within k hops, so connected");
            subgraph.nodes.extend(path.nodes.iter().copied());
            subgraph.edges.extend(path.edges.iter().cloned());
            subgraph.paths.push(PathRecord {
                element: element.clone(),
                target,
                similarity,
                path,
            });
        }
    }
    Ok(subgraph)
}

/// Deterministic textual rendering of the subgraph: one line per path,
/// hops shown as `-[label]->` (or `<-[label]-` against the stored
/// direction), node properties inline. Lines are sorted and deduplicated;
/// an empty subgraph renders as the empty string.
pub fn render_context(subgraph: &EvidenceSubgraph, graph: &Graph) -> String {
    let mut lines = BTreeSet::new();
    for record in &subgraph.paths {
        lines.insert(render_path(&record.path, graph));
    }
    lines.into_iter().collect::<Vec<_>>().join("\n")
}

fn render_node(graph: &Graph, id: NodeId) -> String {
    let node = graph.node(id).expect("path node exists");
    if node.properties.is_empty() {
        node.canonical_name.clone()
    } else {
        let props = node
            .properties
            .iter()
            .map(|(k, v)| format!("{k}: {}", v.render()))
            .collect::<Vec<_>>()
            .join(", ");
        format!("{} {{{props}}}", node.canonical_name)
    }
}

fn render_path(path: &GraphPath, graph: &Graph) -> String {
    let mut line = render_node(graph, path.nodes[0]);
    for (step, edge) in path.edges.iter().enumerate() {
        let from = path.nodes[step];
        let to = path.nodes[step + 1];
        if edge.source == from && edge.target == to {
            line.push_str(&format!(" -[{}]-> ", edge.label));
        } else {
            line.push_str(&format!(" <-[{}]- ", edge.label));
        }
        line.push_str(&render_node(graph, to));
    }
    line
}

/// Debug dump of the subgraph in the snapshot record format, nodes before
/// edges.
pub fn dump_subgraph<W: Write>(
    subgraph: &EvidenceSubgraph,
    graph: &Graph,
    mut w: W,
) -> std::io::Result<()> {
    for &id in &subgraph.nodes {
        let node = graph.node(id).expect("subgraph node exists");
        let props: serde_json::Map<String, serde_json::Value> = node
            .properties
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect();
        let record = serde_json::json!({
            "kind": "node",
            "id": node.id,
            "type": node.entity_type,
            "props": props,
            "name": node.canonical_name,
        });
        writeln!(w, "{record}")?;
    }
    for edge in &subgraph.edges {
        let props: serde_json::Map<String, serde_json::Value> = edge
            .properties
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect();
        let record = serde_json::json!({
            "kind": "edge",
            "src": edge.source,
            "label": edge.label,
            "dst": edge.target,
            "props": props,
        });
        writeln!(w, "{record}")?;
    }
    Ok(())
}
