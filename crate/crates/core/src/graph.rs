//! Schema-validated labeled property graph with traversal primitives and
//! corpus-level statistics.
//!
//! Edges are directed facts, but traversal (k-hop neighborhoods, shortest
//! paths, component metrics) is undirected: reasoning chains must be
//! reachable regardless of edge orientation, while the stored direction is
//! preserved for display.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{Embedder, EmbeddingVector};
use crate::schema::{Schema, ValueKind};

/// Opaque node identifier, assigned by the graph and stable thereafter.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A property value, shaped by the schema's declared attribute kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropertyValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl PropertyValue {
    /// Whether this value satisfies a declared kind. Text with a `raw:`
    /// prefix is accepted under any kind: unparseable values are stored
    /// lossy-but-auditable instead of being dropped.
    pub fn matches_kind(&self, kind: ValueKind) -> bool {
        match (self, kind) {
            (PropertyValue::Text(_), ValueKind::Text | ValueKind::Unit) => true,
            (PropertyValue::Number(_), ValueKind::Number) => true,
            (PropertyValue::Number(n), ValueKind::Year) => n.fract() == 0.0,
            (PropertyValue::Bool(_), ValueKind::Boolean) => true,
            (PropertyValue::Text(s), _) => s.starts_with("raw:"),
            _ => false,
        }
    }

    /// Coerce a raw JSON scalar onto a declared kind. Values that cannot be
    /// parsed into the kind come back as `raw:`-prefixed text.
    pub fn coerce(kind: ValueKind, raw: &serde_json::Value) -> PropertyValue {
        use serde_json::Value;
        let as_raw = |v: &Value| {
            let s = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            PropertyValue::Text(format!("raw:{s}"))
        };
        match kind {
            ValueKind::Text | ValueKind::Unit => match raw {
                Value::String(s) => PropertyValue::Text(s.clone()),
                Value::Number(n) => PropertyValue::Text(n.to_string()),
                Value::Bool(b) => PropertyValue::Text(b.to_string()),
                other => as_raw(other),
            },
            ValueKind::Number => match raw {
                Value::Number(n) => match n.as_f64() {
                    Some(f) => PropertyValue::Number(f),
                    None => as_raw(raw),
                },
                Value::String(s) => match parse_number(s) {
                    Some(f) => PropertyValue::Number(f),
                    None => as_raw(raw),
                },
                other => as_raw(other),
            },
            ValueKind::Year => match raw {
                Value::Number(n) => match n.as_f64() {
                    Some(y) if y.fract() == 0.0 => PropertyValue::Number(y),
                    _ => as_raw(raw),
                },
                Value::String(s) => match s.trim().parse::<i64>() {
                    Ok(y) => PropertyValue::Number(y as f64),
                    Err(_) => as_raw(raw),
                },
                other => as_raw(other),
            },
            ValueKind::Boolean => match raw {
                Value::Bool(b) => PropertyValue::Bool(*b),
                Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
                    "true" | "yes" => PropertyValue::Bool(true),
                    "false" | "no" => PropertyValue::Bool(false),
                    _ => as_raw(raw),
                },
                other => as_raw(other),
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            PropertyValue::Bool(b) => serde_json::Value::Bool(*b),
            PropertyValue::Number(n) if n.fract() == 0.0 && n.abs() < 9e15 => {
                serde_json::json!(*n as i64)
            }
            PropertyValue::Number(n) => serde_json::json!(n),
            PropertyValue::Text(s) => serde_json::Value::String(s.clone()),
        }
    }

    /// Compact display rendering ("2300", "tCO2e", "true").
    pub fn render(&self) -> String {
        match self {
            PropertyValue::Bool(b) => b.to_string(),
            PropertyValue::Number(n) => {
                if n.fract() == 0.0 && n.abs() < 1e15 {
                    format!("{}", *n as i64)
                } else {
                    format!("{n}")
                }
            }
            PropertyValue::Text(s) => s.clone(),
        }
    }

    fn order_key(&self) -> (u8, u64, &str) {
        match self {
            PropertyValue::Bool(b) => (0, *b as u64, ""),
            PropertyValue::Number(n) => (1, n.to_bits(), ""),
            PropertyValue::Text(s) => (2, 0, s.as_str()),
        }
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let cleaned: String = s
        .trim()
        .chars()
        .filter(|c| *c != ',' && *c != '_')
        .collect();
    cleaned.parse::<f64>().ok().filter(|f| f.is_finite())
}

impl PartialEq for PropertyValue {
    fn eq(&self, other: &Self) -> bool {
        self.order_key() == other.order_key()
    }
}
impl Eq for PropertyValue {}
impl PartialOrd for PropertyValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for PropertyValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order_key().cmp(&other.order_key())
    }
}
impl Hash for PropertyValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.order_key().hash(state);
    }
}

pub type Properties = BTreeMap<String, PropertyValue>;

/// A typed entity with properties, a display name, and an optional cached
/// embedding used by retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub entity_type: String,
    pub canonical_name: String,
    pub properties: Properties,
    pub embedding: Option<EmbeddingVector>,
}

/// A directed labeled fact between two stored nodes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: NodeId,
    pub label: String,
    pub target: NodeId,
    #[serde(default)]
    pub properties: Properties,
}

impl Edge {
    pub fn new(source: NodeId, label: impl Into<String>, target: NodeId) -> Edge {
        Edge {
            source,
            label: label.into(),
            target,
            properties: Properties::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown entity type {0}")]
    UnknownEntityType(String),
    #[error("attribute {attribute} not declared for entity type {entity_type}")]
    UndeclaredAttribute {
        entity_type: String,
        attribute: String,
    },
    #[error("attribute {attribute} of {entity_type} does not match declared kind {expected}")]
    AttributeKindMismatch {
        entity_type: String,
        attribute: String,
        expected: ValueKind,
    },
    #[error("schema forbids ({src_type}, {label}, {dst_type})")]
    SchemaViolation {
        src_type: String,
        label: String,
        dst_type: String,
    },
    #[error("edge endpoint {0} does not exist")]
    MissingEndpoint(NodeId),
    #[error("node {0} does not exist")]
    MissingNode(NodeId),
    #[error("graph is sealed; no further writes are allowed")]
    Sealed,
    #[error("snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An undirected minimum-hop path. `edges[i]` connects `nodes[i]` and
/// `nodes[i+1]` (in whichever direction the fact was stored).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPath {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
}

impl GraphPath {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn end(&self) -> NodeId {
        *self.nodes.last().expect("path has at least one node")
    }
}

/// Corpus-level statistics.
#[derive(Debug, Clone, Serialize)]
pub struct GraphStats {
    pub n_entities: usize,
    pub n_relationships: usize,
    pub avg_total_degree: f64,
    /// Mean shortest-path length over the largest connected component.
    pub avg_shortest_path: f64,
    /// Maximum shortest-path length over the largest connected component.
    pub diameter: usize,
    pub avg_degree_by_type: BTreeMap<String, f64>,
    pub top_entity_types: Vec<(String, usize)>,
    pub top_relation_types: Vec<(String, usize)>,
}

/// Average undirected degree from entity/relationship counts alone.
pub fn avg_total_degree(n_entities: usize, n_relationships: usize) -> f64 {
    if n_entities == 0 {
        0.0
    } else {
        2.0 * n_relationships as f64 / n_entities as f64
    }
}

/// The labeled property graph. Single writer during the build phase; after
/// [`Graph::seal`] the structure is immutable and any number of readers may
/// share it.
#[derive(Debug, Clone)]
pub struct Graph {
    schema: Schema,
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<Edge>,
    edge_keys: HashSet<Edge>,
    type_index: BTreeMap<String, BTreeSet<NodeId>>,
    adjacency: HashMap<NodeId, Vec<usize>>,
    next_id: u64,
    sealed: bool,
}

impl Graph {
    pub fn new(schema: Schema) -> Graph {
        Graph {
            schema,
            nodes: BTreeMap::new(),
            edges: Vec::new(),
            edge_keys: HashSet::new(),
            type_index: BTreeMap::new(),
            adjacency: HashMap::new(),
            next_id: 0,
            sealed: false,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    /// Node ids of one entity type, ascending.
    pub fn nodes_of_type(&self, entity_type: &str) -> impl Iterator<Item = NodeId> + '_ {
        self.type_index
            .get(entity_type)
            .into_iter()
            .flat_map(|set| set.iter().copied())
    }

    /// Freezes the graph. Mutations after this point are errors.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    fn check_node_against_schema(
        &self,
        entity_type: &str,
        properties: &Properties,
    ) -> Result<(), GraphError> {
        if !self.schema.has_entity_type(entity_type) {
            return Err(GraphError::UnknownEntityType(entity_type.to_string()));
        }
        for (attr, value) in properties {
            let kind = self.schema.declared_kind(entity_type, attr).ok_or_else(|| {
                GraphError::UndeclaredAttribute {
                    entity_type: entity_type.to_string(),
                    attribute: attr.clone(),
                }
            })?;
            if !value.matches_kind(kind) {
                return Err(GraphError::AttributeKindMismatch {
                    entity_type: entity_type.to_string(),
                    attribute: attr.clone(),
                    expected: kind,
                });
            }
        }
        Ok(())
    }

    /// Stores a node after validating it against the schema.
    pub fn add_node(
        &mut self,
        entity_type: impl Into<String>,
        canonical_name: impl Into<String>,
        properties: Properties,
    ) -> Result<NodeId, GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let entity_type = entity_type.into();
        self.check_node_against_schema(&entity_type, &properties)?;
        let id = NodeId(self.next_id);
        self.next_id += 1;
        self.type_index
            .entry(entity_type.clone())
            .or_default()
            .insert(id);
        self.nodes.insert(
            id,
            Node {
                id,
                entity_type,
                canonical_name: canonical_name.into(),
                properties,
                embedding: None,
            },
        );
        Ok(id)
    }

    /// Merges extra properties into an existing node. Existing values win on
    /// conflict; the discarded value is logged.
    pub fn union_node_properties(
        &mut self,
        id: NodeId,
        extra: Properties,
    ) -> Result<(), GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let entity_type = self
            .nodes
            .get(&id)
            .ok_or(GraphError::MissingNode(id))?
            .entity_type
            .clone();
        // Validate only the genuinely new keys; existing ones stay untouched.
        let node = self.nodes.get(&id).expect("checked above");
        let mut incoming = Properties::new();
        for (attr, value) in extra {
            match node.properties.get(&attr) {
                Some(existing) if *existing != value => {
                    tracing::debug!(
                        node = %id,
                        attribute = %attr,
                        kept = %existing.render(),
                        discarded = %value.render(),
                        "property conflict on merge; existing value kept"
                    );
                }
                Some(_) => {}
                None => {
                    incoming.insert(attr, value);
                }
            }
        }
        self.check_node_against_schema(&entity_type, &incoming)?;
        let node = self.nodes.get_mut(&id).expect("checked above");
        node.properties.extend(incoming);
        Ok(())
    }

    /// Sets the cached embedding of a node.
    pub fn set_node_embedding(
        &mut self,
        id: NodeId,
        embedding: EmbeddingVector,
    ) -> Result<(), GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let node = self.nodes.get_mut(&id).ok_or(GraphError::MissingNode(id))?;
        node.embedding = Some(embedding);
        Ok(())
    }

    /// Stores an edge iff its typed triple is allowed by the schema.
    /// Identical parallel edges are deduplicated; returns whether the edge
    /// was newly inserted.
    pub fn add_edge(&mut self, edge: Edge) -> Result<bool, GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let src = self
            .nodes
            .get(&edge.source)
            .ok_or(GraphError::MissingEndpoint(edge.source))?;
        let dst = self
            .nodes
            .get(&edge.target)
            .ok_or(GraphError::MissingEndpoint(edge.target))?;
        if !self
            .schema
            .allows(&src.entity_type, &edge.label, &dst.entity_type)
        {
            return Err(GraphError::SchemaViolation {
                src_type: src.entity_type.clone(),
                label: edge.label.clone(),
                dst_type: dst.entity_type.clone(),
            });
        }
        if self.edge_keys.contains(&edge) {
            return Ok(false);
        }
        let index = self.edges.len();
        self.adjacency.entry(edge.source).or_default().push(index);
        self.adjacency.entry(edge.target).or_default().push(index);
        self.edge_keys.insert(edge.clone());
        self.edges.push(edge);
        Ok(true)
    }

    /// Undirected neighbors of a node, with the edge index used to reach each.
    fn neighbors(&self, id: NodeId) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.adjacency
            .get(&id)
            .into_iter()
            .flat_map(move |indices| {
                indices.iter().map(move |&i| {
                    let e = &self.edges[i];
                    let other = if e.source == id { e.target } else { e.source };
                    (other, i)
                })
            })
    }

    /// Undirected degree (each incident edge counts once per endpoint slot,
    /// so a self-loop contributes 2).
    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency.get(&id).map_or(0, |v| v.len())
    }

    /// BFS hop distances from `start`, undirected, up to `max_hops`.
    fn bfs_distances(&self, start: NodeId, max_hops: Option<usize>) -> HashMap<NodeId, usize> {
        let mut dist = HashMap::new();
        let mut queue = VecDeque::new();
        dist.insert(start, 0);
        queue.push_back(start);
        while let Some(current) = queue.pop_front() {
            let d = dist[&current];
            if let Some(cap) = max_hops {
                if d >= cap {
                    continue;
                }
            }
            for (next, _) in self.neighbors(current) {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(next) {
                    slot.insert(d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    /// All nodes of `entity_type` reachable from `start` within `k` undirected
    /// hops. The start node is included when it matches the type.
    pub fn nodes_of_type_within_k(
        &self,
        start: NodeId,
        entity_type: &str,
        k: usize,
    ) -> Result<BTreeSet<NodeId>, GraphError> {
        if !self.nodes.contains_key(&start) {
            return Err(GraphError::MissingNode(start));
        }
        let dist = self.bfs_distances(start, Some(k));
        Ok(dist
            .keys()
            .copied()
            .filter(|id| self.nodes[id].entity_type == entity_type)
            .collect())
    }

    /// Minimum-hop undirected path from `a` to `b`, or `None` when they are
    /// not connected. Ties are broken toward the lexicographically least
    /// node-id sequence, making the result deterministic.
    pub fn shortest_path(&self, a: NodeId, b: NodeId) -> Result<Option<GraphPath>, GraphError> {
        for id in [a, b] {
            if !self.nodes.contains_key(&id) {
                return Err(GraphError::MissingNode(id));
            }
        }
        if a == b {
            return Ok(Some(GraphPath {
                nodes: vec![a],
                edges: vec![],
            }));
        }
        let dist_a = self.bfs_distances(a, None);
        let total = match dist_a.get(&b) {
            Some(d) => *d,
            None => return Ok(None),
        };
        let dist_b = self.bfs_distances(b, None);

        // Greedy forward walk: at step i pick the smallest neighbor that still
        // lies on some shortest path, which yields the lexicographically least
        // node sequence.
        let mut nodes = vec![a];
        let mut edges = Vec::new();
        let mut current = a;
        for step in 0..total {
            let mut best: Option<(NodeId, usize)> = None;
            for (next, edge_index) in self.neighbors(current) {
                if dist_a.get(&next) != Some(&(step + 1)) {
                    continue;
                }
                if dist_b.get(&next) != Some(&(total - step - 1)) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((node, index)) => {
                        next < node || (next == node && self.edges[edge_index] < self.edges[index])
                    }
                };
                if better {
                    best = Some((next, edge_index));
                }
            }
            let (next, edge_index) =
                best.expect("a node on a shortest path always has a next hop");
            nodes.push(next);
            edges.push(self.edges[edge_index].clone());
            current = next;
        }
        Ok(Some(GraphPath { nodes, edges }))
    }

    /// Recomputes and caches the retrieval embedding of every node that does
    /// not have one yet: canonical name concatenated with rendered
    /// properties. Idempotent.
    pub fn ensure_node_embeddings(&mut self, embedder: &dyn Embedder) -> Result<usize, GraphError> {
        if self.sealed {
            return Err(GraphError::Sealed);
        }
        let pending: Vec<NodeId> = self
            .nodes
            .values()
            .filter(|n| n.embedding.is_none())
            .map(|n| n.id)
            .collect();
        let count = pending.len();
        for id in pending {
            let text = node_embedding_text(&self.nodes[&id]);
            let embedding = embedder
                .embed(&text)
                .map_err(|e| GraphError::Snapshot {
                    line: 0,
                    message: format!("embedding failed: {e}"),
                })?;
            self.nodes.get_mut(&id).expect("listed above").embedding = Some(embedding);
        }
        Ok(count)
    }

    /// Full re-scan: every stored edge must satisfy the schema. Used by
    /// soundness audits.
    pub fn revalidate(&self) -> Result<(), GraphError> {
        for node in self.nodes.values() {
            self.check_node_against_schema(&node.entity_type, &node.properties)?;
        }
        for edge in &self.edges {
            let src = self
                .nodes
                .get(&edge.source)
                .ok_or(GraphError::MissingEndpoint(edge.source))?;
            let dst = self
                .nodes
                .get(&edge.target)
                .ok_or(GraphError::MissingEndpoint(edge.target))?;
            if !self
                .schema
                .allows(&src.entity_type, &edge.label, &dst.entity_type)
            {
                return Err(GraphError::SchemaViolation {
                    src_type: src.entity_type.clone(),
                    label: edge.label.clone(),
                    dst_type: dst.entity_type.clone(),
                });
            }
        }
        // type_index must agree exactly with nodes.
        let indexed: usize = self.type_index.values().map(|s| s.len()).sum();
        if indexed != self.nodes.len() {
            return Err(GraphError::Snapshot {
                line: 0,
                message: "type index out of sync with node table".into(),
            });
        }
        Ok(())
    }

    /// Corpus statistics. Path metrics are computed over the largest
    /// connected component (undirected); O(V·E) per component, intended for
    /// artifact-scale graphs.
    pub fn stats(&self, top_k: usize) -> GraphStats {
        let n_entities = self.nodes.len();
        let n_relationships = self.edges.len();

        let mut degree_sum_by_type: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for node in self.nodes.values() {
            let entry = degree_sum_by_type
                .entry(node.entity_type.as_str())
                .or_insert((0, 0));
            entry.0 += self.degree(node.id);
            entry.1 += 1;
        }
        let avg_degree_by_type = degree_sum_by_type
            .into_iter()
            .map(|(ty, (sum, n))| (ty.to_string(), sum as f64 / n as f64))
            .collect();

        let mut type_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for node in self.nodes.values() {
            *type_counts.entry(node.entity_type.as_str()).or_insert(0) += 1;
        }
        let mut label_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for edge in &self.edges {
            *label_counts.entry(edge.label.as_str()).or_insert(0) += 1;
        }

        let (avg_shortest_path, diameter) = self.largest_component_path_metrics();

        GraphStats {
            n_entities,
            n_relationships,
            avg_total_degree: avg_total_degree(n_entities, n_relationships),
            avg_shortest_path,
            diameter,
            avg_degree_by_type,
            top_entity_types: top_counts(type_counts, top_k),
            top_relation_types: top_counts(label_counts, top_k),
        }
    }

    fn largest_component_path_metrics(&self) -> (f64, usize) {
        if self.nodes.is_empty() {
            return (0.0, 0);
        }
        // Find the largest component.
        let mut seen: HashSet<NodeId> = HashSet::new();
        let mut largest: Vec<NodeId> = Vec::new();
        for &id in self.nodes.keys() {
            if seen.contains(&id) {
                continue;
            }
            let component: Vec<NodeId> = self.bfs_distances(id, None).keys().copied().collect();
            seen.extend(component.iter().copied());
            if component.len() > largest.len() {
                largest = component;
            }
        }
        if largest.len() <= 1 {
            return (0.0, 0);
        }
        let mut total: u64 = 0;
        let mut pairs: u64 = 0;
        let mut diameter = 0usize;
        for &id in &largest {
            for (&other, &d) in self.bfs_distances(id, None).iter() {
                if other == id {
                    continue;
                }
                total += d as u64;
                pairs += 1;
                diameter = diameter.max(d);
            }
        }
        (total as f64 / pairs as f64, diameter)
    }

    /// Writes the graph as line-delimited JSON records, nodes before edges.
    pub fn save_snapshot<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        for node in self.nodes.values() {
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
        let mut ordered: Vec<&Edge> = self.edges.iter().collect();
        ordered.sort();
        for edge in ordered {
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

    /// Reads a snapshot produced by [`Graph::save_snapshot`]. Node property
    /// values are coerced back through the schema's declared kinds.
    pub fn load_snapshot<R: BufRead>(schema: Schema, reader: R) -> Result<Graph, GraphError> {
        let mut graph = Graph::new(schema);
        let mut id_map: HashMap<u64, NodeId> = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line_display = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| GraphError::Snapshot {
                    line: line_display,
                    message: e.to_string(),
                })?;
            let kind = value.get("kind").and_then(|v| v.as_str()).unwrap_or("");
            match kind {
                "node" => {
                    let file_id = require_u64(&value, "id", line_display)?;
                    let entity_type = require_str(&value, "type", line_display)?;
                    let name = require_str(&value, "name", line_display)?;
                    let mut props = Properties::new();
                    if let Some(map) = value.get("props").and_then(|v| v.as_object()) {
                        for (attr, raw) in map {
                            let kind = graph.schema.declared_kind(&entity_type, attr).ok_or(
                                GraphError::UndeclaredAttribute {
                                    entity_type: entity_type.clone(),
                                    attribute: attr.clone(),
                                },
                            )?;
                            props.insert(attr.clone(), PropertyValue::coerce(kind, raw));
                        }
                    }
                    let id = graph.add_node(entity_type, name, props)?;
                    id_map.insert(file_id, id);
                }
                "edge" => {
                    let src = require_u64(&value, "src", line_display)?;
                    let dst = require_u64(&value, "dst", line_display)?;
                    let label = require_str(&value, "label", line_display)?;
                    let source = *id_map.get(&src).ok_or(GraphError::Snapshot {
                        line: line_display,
                        message: format!("edge references unknown node id {src}"),
                    })?;
                    let target = *id_map.get(&dst).ok_or(GraphError::Snapshot {
                        line: line_display,
                        message: format!("edge references unknown node id {dst}"),
                    })?;
                    let mut properties = Properties::new();
                    if let Some(map) = value.get("props").and_then(|v| v.as_object()) {
                        for (attr, raw) in map {
                            properties.insert(attr.clone(), json_scalar_to_property(raw));
                        }
                    }
                    graph.add_edge(Edge {
                        source,
                        label,
                        target,
                        properties,
                    })?;
                }
                other => {
                    return Err(GraphError::Snapshot {
                        line: line_display,
                        message: format!("unknown record kind {other:?}"),
                    });
                }
            }
        }
        Ok(graph)
    }
}

/// The text a node's retrieval embedding is computed from.
pub fn node_embedding_text(node: &Node) -> String {
    let mut text = node.canonical_name.clone();
    for (attr, value) in &node.properties {
        text.push(' ');
        text.push_str(attr);
        text.push(' ');
        text.push_str(&value.render());
    }
    text
}

fn json_scalar_to_property(raw: &serde_json::Value) -> PropertyValue {
    match raw {
        serde_json::Value::Bool(b) => PropertyValue::Bool(*b),
        serde_json::Value::Number(n) => PropertyValue::Number(n.as_f64().unwrap_or(0.0)),
        serde_json::Value::String(s) => PropertyValue::Text(s.clone()),
        other => PropertyValue::Text(format!("raw:{other}")),
    }
}

fn require_str(
    value: &serde_json::Value,
    field: &str,
    line: usize,
) -> Result<String, GraphError> {
    value
        .get(field)
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or(GraphError::Snapshot {
            line,
            message: format!("missing or non-string field {field:?}"),
        })
}

fn require_u64(value: &serde_json::Value, field: &str, line: usize) -> Result<u64, GraphError> {
    value
        .get(field)
        .and_then(|v| v.as_u64())
        .ok_or(GraphError::Snapshot {
            line,
            message: format!("missing or non-integer field {field:?}"),
        })
}

fn top_counts(counts: BTreeMap<&str, usize>, top_k: usize) -> Vec<(String, usize)> {
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(name, count)| (name.to_string(), count))
        .collect();
    // Descending by count, ascending by name on ties.
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Schema;

    fn esg_graph() -> Graph {
        Graph::new(Schema::default_esg())
    }

    fn num(n: f64) -> PropertyValue {
        PropertyValue::Number(n)
    }

    #[test]
    fn add_node_and_retrieve() {
        let mut g = esg_graph();
        let id = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        assert_eq!(g.node(id).unwrap().canonical_name, "ACME");
    }

    #[test]
    fn add_node_unknown_type() {
        let mut g = esg_graph();
        let err = g.add_node("Spaceship", "X", Properties::new()).unwrap_err();
        assert!(matches!(err, GraphError::UnknownEntityType(_)));
    }

    #[test]
    fn add_node_kpi_observation_with_typed_properties() {
        let mut g = esg_graph();
        let mut props = Properties::new();
        props.insert("value".into(), num(2300.0));
        props.insert("unit".into(), PropertyValue::Text("tCO2e".into()));
        props.insert("year".into(), num(2025.0));
        let id = g.add_node("KPIObservation", "emissions 2025", props).unwrap();
        let node = g.node(id).unwrap();
        assert_eq!(node.properties["value"], num(2300.0));
        assert_eq!(node.properties["unit"].render(), "tCO2e");
        assert_eq!(node.properties["year"].render(), "2025");
    }

    #[test]
    fn add_node_undeclared_attribute() {
        let mut g = esg_graph();
        let mut props = Properties::new();
        props.insert("flavor".into(), PropertyValue::Text("mint".into()));
        let err = g.add_node("Organization", "ACME", props).unwrap_err();
        assert!(matches!(err, GraphError::UndeclaredAttribute { .. }));
    }

    #[test]
    fn add_node_kind_mismatch_and_raw_escape() {
        let mut g = esg_graph();
        let mut props = Properties::new();
        props.insert("value".into(), PropertyValue::Text("lots".into()));
        let err = g
            .add_node("KPIObservation", "bad", props.clone())
            .unwrap_err();
        assert!(matches!(err, GraphError::AttributeKindMismatch { .. }));
        // The raw: prefix marks a value that could not be parsed; it is kept.
        props.insert("value".into(), PropertyValue::Text("raw:lots".into()));
        assert!(g.add_node("KPIObservation", "raw", props).is_ok());
    }

    #[test]
    fn coerce_number_and_fallback() {
        let v = PropertyValue::coerce(ValueKind::Number, &serde_json::json!("2,300"));
        assert_eq!(v, num(2300.0));
        let v = PropertyValue::coerce(ValueKind::Number, &serde_json::json!("n/a"));
        assert_eq!(v, PropertyValue::Text("raw:n/a".into()));
        let v = PropertyValue::coerce(ValueKind::Year, &serde_json::json!(2023));
        assert_eq!(v.render(), "2023");
    }

    #[test]
    fn add_edge_allowed_and_rejected() {
        let mut g = esg_graph();
        let org = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        let obs = g
            .add_node("KPIObservation", "obs", Properties::new())
            .unwrap();
        assert!(g.add_edge(Edge::new(org, "reportsKPI", obs)).unwrap());
        let err = g.add_edge(Edge::new(org, "setsGoal", obs)).unwrap_err();
        match err {
            GraphError::SchemaViolation {
                src_type,
                label,
                dst_type,
            } => {
                assert_eq!(src_type, "Organization");
                assert_eq!(label, "setsGoal");
                assert_eq!(dst_type, "KPIObservation");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn add_edge_missing_endpoint() {
        let mut g = esg_graph();
        let org = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        let err = g
            .add_edge(Edge::new(org, "reportsKPI", NodeId(999)))
            .unwrap_err();
        assert!(matches!(err, GraphError::MissingEndpoint(NodeId(999))));
    }

    #[test]
    fn duplicate_edges_deduplicated() {
        let mut g = esg_graph();
        let org = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        let obs = g
            .add_node("KPIObservation", "obs", Properties::new())
            .unwrap();
        assert!(g.add_edge(Edge::new(org, "reportsKPI", obs)).unwrap());
        assert!(!g.add_edge(Edge::new(org, "reportsKPI", obs)).unwrap());
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn sealed_graph_rejects_writes() {
        let mut g = esg_graph();
        g.seal();
        assert!(matches!(
            g.add_node("Organization", "X", Properties::new()),
            Err(GraphError::Sealed)
        ));
    }

    fn star_graph() -> (Graph, NodeId, Vec<NodeId>) {
        let mut g = esg_graph();
        let org = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        let mut children = Vec::new();
        for i in 0..5 {
            let obs = g
                .add_node("KPIObservation", format!("obs{i}"), Properties::new())
                .unwrap();
            g.add_edge(Edge::new(org, "reportsKPI", obs)).unwrap();
            children.push(obs);
        }
        (g, org, children)
    }

    #[test]
    fn k_hop_star() {
        let (g, org, children) = star_graph();
        let found = g.nodes_of_type_within_k(org, "KPIObservation", 1).unwrap();
        assert_eq!(found, children.iter().copied().collect());
        let none = g.nodes_of_type_within_k(org, "KPIObservation", 0).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn k_hop_includes_matching_start() {
        let (g, org, _) = star_graph();
        let found = g.nodes_of_type_within_k(org, "Organization", 0).unwrap();
        assert_eq!(found, [org].into_iter().collect());
    }

    #[test]
    fn k_hop_chain() {
        let mut g = esg_graph();
        let org = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        let fac = g.add_node("Facility", "plant", Properties::new()).unwrap();
        let loc = g.add_node("Location", "site", Properties::new()).unwrap();
        g.add_edge(Edge::new(org, "hasFacility", fac)).unwrap();
        g.add_edge(Edge::new(fac, "locatedIn", loc)).unwrap();
        assert!(g.nodes_of_type_within_k(org, "Location", 1).unwrap().is_empty());
        assert_eq!(
            g.nodes_of_type_within_k(org, "Location", 2).unwrap(),
            [loc].into_iter().collect()
        );
    }

    #[test]
    fn k_hop_missing_start() {
        let (g, _, _) = star_graph();
        assert!(matches!(
            g.nodes_of_type_within_k(NodeId(77), "Organization", 1),
            Err(GraphError::MissingNode(_))
        ));
    }

    #[test]
    fn shortest_path_trivial_and_chain() {
        let mut g = esg_graph();
        let org = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        let fac = g.add_node("Facility", "plant", Properties::new()).unwrap();
        let loc = g.add_node("Location", "site", Properties::new()).unwrap();
        g.add_edge(Edge::new(org, "hasFacility", fac)).unwrap();
        g.add_edge(Edge::new(fac, "locatedIn", loc)).unwrap();

        let same = g.shortest_path(org, org).unwrap().unwrap();
        assert_eq!(same.len(), 0);
        assert_eq!(same.nodes, vec![org]);

        let path = g.shortest_path(org, loc).unwrap().unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(path.nodes, vec![org, fac, loc]);
    }

    #[test]
    fn shortest_path_not_connected() {
        let mut g = esg_graph();
        let a = g
            .add_node("Organization", "A", Properties::new())
            .unwrap();
        let b = g
            .add_node("Organization", "B", Properties::new())
            .unwrap();
        assert!(g.shortest_path(a, b).unwrap().is_none());
    }

    #[test]
    fn shortest_path_lexicographic_tie_break() {
        // Diamond with two equal-length routes org -> {f1, f2} -> loc; the
        // route through the smaller node id must win.
        let mut g = esg_graph();
        let org = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        let f1 = g.add_node("Facility", "f1", Properties::new()).unwrap();
        let f2 = g.add_node("Facility", "f2", Properties::new()).unwrap();
        let loc = g.add_node("Location", "site", Properties::new()).unwrap();
        g.add_edge(Edge::new(org, "hasFacility", f2)).unwrap();
        g.add_edge(Edge::new(org, "hasFacility", f1)).unwrap();
        g.add_edge(Edge::new(f2, "locatedIn", loc)).unwrap();
        g.add_edge(Edge::new(f1, "locatedIn", loc)).unwrap();
        let path = g.shortest_path(org, loc).unwrap().unwrap();
        assert_eq!(path.nodes, vec![org, f1, loc]);
    }

    #[test]
    fn stats_single_node_and_triangle() {
        let mut g = esg_graph();
        g.add_node("Organization", "solo", Properties::new())
            .unwrap();
        let s = g.stats(5);
        assert_eq!(s.avg_total_degree, 0.0);
        assert_eq!(s.diameter, 0);

        let mut g = esg_graph();
        let a = g.add_node("Organization", "a", Properties::new()).unwrap();
        let b = g.add_node("Facility", "b", Properties::new()).unwrap();
        let c = g.add_node("KPIObservation", "c", Properties::new()).unwrap();
        g.add_edge(Edge::new(a, "hasFacility", b)).unwrap();
        g.add_edge(Edge::new(a, "reportsKPI", c)).unwrap();
        g.add_edge(Edge::new(b, "reportsKPI", c)).unwrap();
        let s = g.stats(5);
        assert_eq!(s.n_entities, 3);
        assert_eq!(s.n_relationships, 3);
        assert_eq!(s.avg_total_degree, 2.0);
        assert_eq!(s.diameter, 1);
        assert_eq!(s.avg_shortest_path, 1.0);
    }

    #[test]
    fn stats_counts_only_formula() {
        let v = avg_total_degree(53_748, 59_344);
        assert_eq!(format!("{v:.2}"), "2.21");
    }

    #[test]
    fn stats_top_lists_ties_break_by_name() {
        let mut g = esg_graph();
        let a = g.add_node("Organization", "a", Properties::new()).unwrap();
        let b = g.add_node("Facility", "b", Properties::new()).unwrap();
        g.add_edge(Edge::new(a, "hasFacility", b)).unwrap();
        let s = g.stats(5);
        assert_eq!(
            s.top_entity_types,
            vec![("Facility".to_string(), 1), ("Organization".to_string(), 1)]
        );
    }

    #[test]
    fn empty_graph_stats() {
        let g = esg_graph();
        let s = g.stats(5);
        assert_eq!(s.n_entities, 0);
        assert_eq!(s.avg_total_degree, 0.0);
        assert!(s.top_entity_types.is_empty());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut g = esg_graph();
        let org = g
            .add_node("Organization", "ACME", Properties::new())
            .unwrap();
        let mut props = Properties::new();
        props.insert("value".into(), num(2300.0));
        props.insert("unit".into(), PropertyValue::Text("tCO2e".into()));
        props.insert("year".into(), num(2025.0));
        props.insert("metric".into(), PropertyValue::Text("raw:n/a".into()));
        let obs = g.add_node("KPIObservation", "emissions", props).unwrap();
        g.add_edge(Edge::new(org, "reportsKPI", obs)).unwrap();

        let mut buf = Vec::new();
        g.save_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.contains("\"kind\":\"node\""));

        let back = Graph::load_snapshot(Schema::default_esg(), &buf[..]).unwrap();
        assert_eq!(back.node_count(), 2);
        assert_eq!(back.edge_count(), 1);
        let mut buf2 = Vec::new();
        back.save_snapshot(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn revalidate_detects_clean_graph() {
        let (g, _, _) = star_graph();
        assert!(g.revalidate().is_ok());
    }

    mod properties_suite {
        use super::*;
        use proptest::prelude::*;

        // Random small graphs under a permissive schema; BFS results must
        // equal brute-force enumeration.
        fn permissive_schema(n_types: usize) -> Schema {
            let mut s = Schema::new();
            let types: Vec<String> = (0..n_types).map(|i| format!("T{i}")).collect();
            for a in &types {
                for b in &types {
                    s.allow_triple(a.clone(), "rel", b.clone());
                }
            }
            s
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn k_hop_matches_brute_force(
                n in 2usize..30,
                edges in proptest::collection::vec((0usize..30, 0usize..30), 0..60),
                k in 0usize..5,
                type_of in proptest::collection::vec(0usize..3, 30),
            ) {
                let mut g = Graph::new(permissive_schema(3));
                let mut ids = Vec::new();
                for i in 0..n {
                    ids.push(
                        g.add_node(format!("T{}", type_of[i]), format!("n{i}"), Properties::new())
                            .unwrap(),
                    );
                }
                for (a, b) in edges {
                    if a < n && b < n {
                        g.add_edge(Edge::new(ids[a], "rel", ids[b])).unwrap();
                    }
                }
                // Brute force: repeated frontier expansion over an explicit
                // undirected adjacency list.
                let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
                for e in g.edges() {
                    let s = ids.iter().position(|x| *x == e.source).unwrap();
                    let t = ids.iter().position(|x| *x == e.target).unwrap();
                    adj[s].push(t);
                    adj[t].push(s);
                }
                let start = 0usize;
                let mut reach = vec![false; n];
                reach[start] = true;
                let mut frontier = vec![start];
                for _ in 0..k {
                    let mut next = Vec::new();
                    for &u in &frontier {
                        for &v in &adj[u] {
                            if !reach[v] {
                                reach[v] = true;
                                next.push(v);
                            }
                        }
                    }
                    frontier = next;
                }
                for ty in 0..3 {
                    let expected: BTreeSet<NodeId> = (0..n)
                        .filter(|&i| reach[i] && type_of[i] == ty)
                        .map(|i| ids[i])
                        .collect();
                    let got = g
                        .nodes_of_type_within_k(ids[start], &format!("T{ty}"), k)
                        .unwrap();
                    prop_assert_eq!(got, expected);
                }
            }

            #[test]
            fn shortest_path_length_matches_brute_force(
                n in 2usize..25,
                edges in proptest::collection::vec((0usize..25, 0usize..25), 0..50),
            ) {
                let mut g = Graph::new(permissive_schema(1));
                let mut ids = Vec::new();
                for i in 0..n {
                    ids.push(g.add_node("T0", format!("n{i}"), Properties::new()).unwrap());
                }
                for (a, b) in edges {
                    if a < n && b < n {
                        g.add_edge(Edge::new(ids[a], "rel", ids[b])).unwrap();
                    }
                }
                // Brute-force all-pairs distances by Floyd-Warshall.
                let inf = usize::MAX / 4;
                let mut d = vec![vec![inf; n]; n];
                for i in 0..n { d[i][i] = 0; }
                for e in g.edges() {
                    let s = ids.iter().position(|x| *x == e.source).unwrap();
                    let t = ids.iter().position(|x| *x == e.target).unwrap();
                    d[s][t] = d[s][t].min(1);
                    d[t][s] = d[t][s].min(1);
                }
                for m in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            if d[i][m] + d[m][j] < d[i][j] {
                                d[i][j] = d[i][m] + d[m][j];
                            }
                        }
                    }
                }
                for i in 0..n.min(6) {
                    for j in 0..n.min(6) {
                        let got = g.shortest_path(ids[i], ids[j]).unwrap();
                        match got {
                            None => prop_assert_eq!(d[i][j], inf),
                            Some(path) => {
                                prop_assert_eq!(path.len(), d[i][j]);
                                // Path is valid: consecutive edges exist and connect.
                                prop_assert_eq!(path.nodes.len(), path.len() + 1);
                                for (step, e) in path.edges.iter().enumerate() {
                                    let a = path.nodes[step];
                                    let b = path.nodes[step + 1];
                                    prop_assert!(
                                        (e.source == a && e.target == b)
                                            || (e.source == b && e.target == a)
                                    );
                                }
                                // Acyclic: no repeated nodes.
                                let uniq: BTreeSet<_> = path.nodes.iter().collect();
                                prop_assert_eq!(uniq.len(), path.nodes.len());
                            }
                        }
                    }
                }
            }

            #[test]
            fn degree_identity(
                n in 1usize..20,
                edges in proptest::collection::vec((0usize..20, 0usize..20), 0..40),
            ) {
                let mut g = Graph::new(permissive_schema(1));
                let mut ids = Vec::new();
                for i in 0..n {
                    ids.push(g.add_node("T0", format!("n{i}"), Properties::new()).unwrap());
                }
                for (a, b) in edges {
                    if a < n && b < n {
                        g.add_edge(Edge::new(ids[a], "rel", ids[b])).unwrap();
                    }
                }
                let total: usize = ids.iter().map(|&id| g.degree(id)).sum();
                prop_assert_eq!(total, 2 * g.edge_count());
                let stats = g.stats(3);
                prop_assert_eq!(stats.avg_total_degree, 2.0 * g.edge_count() as f64 / n as f64);
                let sum_top: usize = stats.top_entity_types.iter().map(|(_, c)| c).sum();
                prop_assert!(sum_top <= g.node_count());
                let sum_rel: usize = stats.top_relation_types.iter().map(|(_, c)| c).sum();
                prop_assert!(sum_rel <= g.edge_count());
            }
        }
    }
}
