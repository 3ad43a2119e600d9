//! Hierarchical indoor scene graph: floors, rooms, big objects and small
//! objects, joined by containment edges between adjacent layers and spatial
//! edges within a layer.

pub mod labels;
mod world_file;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use world_file::{
    load_world_prior, parse_world_prior, BigObjectEntry, EdgeEntry, FloorEntry, LoadedWorld,
    NodeExtras, RoomEntry, SmallObjectEntry, WorldError, WorldFile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Layers ordered top-down: floor < room < big object < small object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerId {
    #[serde(rename = "V1")]
    Floor = 1,
    #[serde(rename = "V2")]
    Room = 2,
    #[serde(rename = "V3")]
    BigObject = 3,
    #[serde(rename = "V4")]
    SmallObject = 4,
}

impl LayerId {
    pub const ALL: [LayerId; 4] =
        [LayerId::Floor, LayerId::Room, LayerId::BigObject, LayerId::SmallObject];

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            1 => Some(LayerId::Floor),
            2 => Some(LayerId::Room),
            3 => Some(LayerId::BigObject),
            4 => Some(LayerId::SmallObject),
            _ => None,
        }
    }

    /// The layer one level up, if any.
    pub fn parent(self) -> Option<Self> {
        Self::from_level(self.level() - 1)
    }

    pub fn child(self) -> Option<Self> {
        Self::from_level(self.level() + 1)
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.level())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    On,
    Above,
    Below,
    NextTo,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::On, Relation::Above, Relation::Below, Relation::NextTo];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::On => "on",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::NextTo => "next-to",
        }
    }

    /// Phrase used in questions ("next to" rather than "next-to").
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::NextTo => "next to",
            other => other.as_str(),
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_lowercase().replace(['_', ' '], "-").as_str() {
            "on" => Some(Relation::On),
            "above" => Some(Relation::Above),
            "below" | "under" | "beneath" => Some(Relation::Below),
            "next-to" | "beside" | "near" => Some(Relation::NextTo),
            _ => None,
        }
    }

    /// Relation seen from the other endpoint. `on` has no inverse.
    pub fn inverse(self) -> Option<Self> {
        match self {
            Relation::On => None,
            Relation::Above => Some(Relation::Below),
            Relation::Below => Some(Relation::Above),
            Relation::NextTo => Some(Relation::NextTo),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Position = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub id: NodeId,
    pub layer: LayerId,
    pub label: String,
    /// External identifier from the world file, when one was given.
    pub key: Option<String>,
    pub instance_index: u32,
    pub position: Option<Position>,
    pub attributes: BTreeMap<String, String>,
    /// How a small object sits relative to its containment parent.
    pub relation: Option<Relation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialEdge {
    pub a: NodeId,
    pub b: NodeId,
    pub relation: Relation,
    pub weight: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} is at layer {layer}, expected {expected}")]
    Layer { node: NodeId, layer: LayerId, expected: String },
    #[error("invalid scene graph at node {node}: {reason}")]
    Invalid { node: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    nodes: Vec<SceneNode>,
    parents: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    spatial_edges: Vec<SpatialEdge>,
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SceneNode> {
        self.nodes.iter()
    }

    pub fn layer_nodes(&self, layer: LayerId) -> impl Iterator<Item = &SceneNode> {
        self.nodes.iter().filter(move |n| n.layer == layer)
    }

    pub fn count_layer(&self, layer: LayerId) -> usize {
        self.layer_nodes(layer).count()
    }

    pub fn spatial_edges(&self) -> &[SpatialEdge] {
        &self.spatial_edges
    }

    pub fn node(&self, id: NodeId) -> Result<&SceneNode, GraphError> {
        self.nodes.get(id.index()).ok_or(GraphError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn node_by_key(&self, key: &str) -> Option<&SceneNode> {
        self.nodes.iter().find(|n| n.key.as_deref() == Some(key))
    }

    /// Inserts a node below `parent` without checking layer adjacency.
    /// Loaders call [`SceneGraph::validate`] afterwards.
    pub(crate) fn push_node(
        &mut self,
        parent: Option<NodeId>,
        layer: LayerId,
        label: &str,
        key: Option<String>,
        position: Option<Position>,
        relation: Option<Relation>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let norm = labels::normalize(label);
        let instance_index = match parent {
            Some(p) => self.children[p.index()]
                .iter()
                .filter(|c| labels::normalize(&self.nodes[c.index()].label) == norm)
                .count() as u32,
            None => self
                .nodes
                .iter()
                .zip(&self.parents)
                .filter(|(n, par)| par.is_none() && labels::normalize(&n.label) == norm)
                .count() as u32,
        };
        self.nodes.push(SceneNode {
            id,
            layer,
            label: label.trim().to_string(),
            key,
            instance_index,
            position,
            attributes: BTreeMap::new(),
            relation,
        });
        self.parents.push(parent);
        self.children.push(Vec::new());
        if let Some(p) = parent {
            self.children[p.index()].push(id);
        }
        id
    }

    pub(crate) fn push_spatial_edge(&mut self, a: NodeId, b: NodeId, relation: Relation) {
        let weight = match (self.position(a), self.position(b)) {
            (Some(pa), Some(pb)) => distance(pa, pb),
            _ => 0.0,
        };
        self.spatial_edges.push(SpatialEdge { a, b, relation, weight });
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Result<&mut SceneNode, GraphError> {
        self.nodes.get_mut(id.index()).ok_or(GraphError::UnknownNode(id))
    }

    /// Nodes whose label matches `label` (case and number insensitive),
    /// optionally restricted to one layer, ordered by (layer, instance_index).
    pub fn find_nodes(&self, label: &str, layer: Option<LayerId>) -> Vec<&SceneNode> {
        let mut found: Vec<&SceneNode> = self
            .nodes
            .iter()
            .filter(|n| layer.is_none_or(|l| n.layer == l) && labels::matches(label, &n.label))
            .collect();
        found.sort_by_key(|n| (n.layer, n.instance_index, n.id));
        found
    }

    /// Like [`SceneGraph::find_nodes`] but restricted to the subtree rooted at `scope`.
    pub fn find_nodes_within(
        &self,
        scope: NodeId,
        label: &str,
        layer: Option<LayerId>,
    ) -> Vec<&SceneNode> {
        self.find_nodes(label, layer)
            .into_iter()
            .filter(|n| self.is_ancestor_or_self(scope, n.id))
            .collect()
    }

    pub fn parent(&self, id: NodeId) -> Result<Option<&SceneNode>, GraphError> {
        self.node(id)?;
        Ok(self.parents[id.index()].map(|p| &self.nodes[p.index()]))
    }

    pub fn parent_id(&self, id: NodeId) -> Option<NodeId> {
        self.parents.get(id.index()).copied().flatten()
    }

    pub fn children(&self, id: NodeId) -> Result<Vec<&SceneNode>, GraphError> {
        self.node(id)?;
        Ok(self.children[id.index()].iter().map(|c| &self.nodes[c.index()]).collect())
    }

    pub fn child_ids(&self, id: NodeId) -> &[NodeId] {
        self.children.get(id.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Ancestor-or-self of `id` at `layer`.
    pub fn ancestor_at(&self, id: NodeId, layer: LayerId) -> Option<NodeId> {
        let mut cur = Some(id);
        while let Some(c) = cur {
            let node = self.nodes.get(c.index())?;
            if node.layer == layer {
                return Some(c);
            }
            if node.layer < layer {
                return None;
            }
            cur = self.parents[c.index()];
        }
        None
    }

    pub fn is_ancestor_or_self(&self, ancestor: NodeId, id: NodeId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.parent_id(c);
        }
        false
    }

    /// Room containing a big or small object.
    pub fn room_of(&self, id: NodeId) -> Result<&SceneNode, GraphError> {
        let node = self.node(id)?;
        if node.layer < LayerId::BigObject {
            return Err(GraphError::Layer {
                node: id,
                layer: node.layer,
                expected: "V3 or V4".into(),
            });
        }
        let room = self.ancestor_at(id, LayerId::Room).ok_or_else(|| GraphError::Invalid {
            node: id.to_string(),
            reason: "object has no room ancestor".into(),
        })?;
        self.node(room)
    }

    /// Node position; small objects without one inherit their parent's.
    pub fn position(&self, id: NodeId) -> Option<Position> {
        let mut cur = Some(id);
        while let Some(c) = cur {
            let node = self.nodes.get(c.index())?;
            if let Some(p) = node.position {
                return Some(p);
            }
            if node.layer != LayerId::SmallObject {
                return None;
            }
            cur = self.parents[c.index()];
        }
        None
    }

    /// Nodes sharing `id`'s parent and layer, excluding `id` itself.
    pub fn siblings(&self, id: NodeId) -> Vec<NodeId> {
        let Some(node) = self.nodes.get(id.index()) else {
            return Vec::new();
        };
        let pool: Vec<NodeId> = match self.parent_id(id) {
            Some(p) => self.children[p.index()].clone(),
            None => self
                .nodes
                .iter()
                .filter(|n| self.parents[n.id.index()].is_none())
                .map(|n| n.id)
                .collect(),
        };
        pool.into_iter()
            .filter(|&s| s != id && self.nodes[s.index()].layer == node.layer)
            .collect()
    }

    /// All descendants of `id` in breadth-first order.
    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut frontier: Vec<NodeId> = self.child_ids(id).to_vec();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for n in frontier {
                out.push(n);
                next.extend_from_slice(self.child_ids(n));
            }
            frontier = next;
        }
        out
    }

    /// Inserts an observed small object under a big object. Re-inserting
    /// the same (parent, label, instance) returns the existing node and
    /// merges attributes.
    pub fn add_observed_node(
        &mut self,
        parent: NodeId,
        label: &str,
        instance_index: u32,
        attributes: &BTreeMap<String, String>,
    ) -> Result<NodeId, GraphError> {
        let parent_node = self.node(parent)?;
        if parent_node.layer != LayerId::BigObject {
            return Err(GraphError::Layer {
                node: parent,
                layer: parent_node.layer,
                expected: LayerId::BigObject.to_string(),
            });
        }
        let norm = labels::normalize(label);
        let existing = self.children[parent.index()].iter().copied().find(|c| {
            let n = &self.nodes[c.index()];
            labels::normalize(&n.label) == norm && n.instance_index == instance_index
        });
        let id = match existing {
            Some(id) => id,
            None => {
                let id = NodeId(self.nodes.len() as u32);
                self.nodes.push(SceneNode {
                    id,
                    layer: LayerId::SmallObject,
                    label: label.trim().to_string(),
                    key: None,
                    instance_index,
                    position: None,
                    attributes: BTreeMap::new(),
                    relation: Some(Relation::On),
                });
                self.parents.push(Some(parent));
                self.children.push(Vec::new());
                self.children[parent.index()].push(id);
                id
            }
        };
        let node = &mut self.nodes[id.index()];
        for (k, v) in attributes {
            node.attributes.insert(k.clone(), v.clone());
        }
        Ok(id)
    }

    pub fn set_attribute(&mut self, id: NodeId, name: &str, value: &str) -> Result<(), GraphError> {
        self.node_mut(id)?.attributes.insert(name.to_string(), value.to_string());
        Ok(())
    }

    /// Drops every small-object node, keeping ids of the remaining layers
    /// stable. Only valid when small objects were inserted after all other
    /// nodes, which holds for loaded worlds.
    pub fn without_small_objects(&self) -> SceneGraph {
        let keep = self
            .nodes
            .iter()
            .position(|n| n.layer == LayerId::SmallObject)
            .unwrap_or(self.nodes.len());
        debug_assert!(self.nodes[keep..].iter().all(|n| n.layer == LayerId::SmallObject));
        let mut out = SceneGraph {
            nodes: self.nodes[..keep].to_vec(),
            parents: self.parents[..keep].to_vec(),
            children: self.children[..keep]
                .iter()
                .map(|c| c.iter().copied().filter(|x| x.index() < keep).collect())
                .collect(),
            spatial_edges: self
                .spatial_edges
                .iter()
                .filter(|e| e.a.index() < keep && e.b.index() < keep)
                .cloned()
                .collect(),
        };
        for n in &mut out.nodes {
            n.attributes.clear();
        }
        out
    }

    /// Checks the structural invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), GraphError> {
        let name = |n: &SceneNode| n.key.clone().unwrap_or_else(|| format!("{} ({})", n.label, n.id));
        for node in &self.nodes {
            let parent = self.parents[node.id.index()];
            match (node.layer, parent) {
                (LayerId::Floor, None) => {}
                (LayerId::Floor, Some(_)) => {
                    return Err(GraphError::Invalid {
                        node: name(node),
                        reason: "floor node has a containment parent".into(),
                    })
                }
                (layer, None) => {
                    return Err(GraphError::Invalid {
                        node: name(node),
                        reason: format!("{layer} node has no containment parent"),
                    })
                }
                (layer, Some(p)) => {
                    let pl = self.node(p)?.layer;
                    if Some(pl) != layer.parent() {
                        return Err(GraphError::Invalid {
                            node: name(node),
                            reason: format!("{layer} node has parent at {pl}, expected {}", layer.parent().unwrap()),
                        });
                    }
                }
            }
            if matches!(node.layer, LayerId::Room | LayerId::BigObject) && node.position.is_none() {
                return Err(GraphError::Invalid {
                    node: name(node),
                    reason: format!("{} node has no position", node.layer),
                });
            }
        }
        for e in &self.spatial_edges {
            let (a, b) = (self.node(e.a)?, self.node(e.b)?);
            if a.layer != b.layer {
                return Err(GraphError::Invalid {
                    node: name(a),
                    reason: format!("spatial edge joins {} and {}", a.layer, b.layer),
                });
            }
        }
        Ok(())
    }
}

pub fn distance(a: Position, b: Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
