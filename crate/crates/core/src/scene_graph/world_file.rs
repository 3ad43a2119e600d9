//! JSON world files. A prior file holds floors, rooms and big objects; a
//! truth file additionally carries small objects, attribute maps and
//! perception flags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GraphError, LayerId, NodeId, Position, Relation, SceneGraph};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("{path}: cannot read world file: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("world file parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("invalid world: node `{node}`: {reason}")]
    Validation { node: String, reason: String },
}

impl From<GraphError> for WorldError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Invalid { node, reason } => WorldError::Validation { node, reason },
            other => WorldError::Validation { node: String::new(), reason: other.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub floors: Vec<FloorEntry>,
    #[serde(default)]
    pub spatial_edges: Vec<EdgeEntry>,
    /// Key of the node the agent starts at; defaults to the first floor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entrance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<LayerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default)]
    pub rooms: Vec<RoomEntry>,
    /// Never valid; accepted only so the validator can name the offender.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub big_objects: Vec<BigObjectEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomEntry {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<LayerId>,
    pub position: Position,
    #[serde(default)]
    pub big_objects: Vec<BigObjectEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigObjectEntry {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<LayerId>,
    pub position: Position,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub close_only: Vec<String>,
    /// Label perception reports instead of `label`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub small_objects: Vec<SmallObjectEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallObjectEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub close_only: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub occluded_from_parent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub a: String,
    pub b: String,
    pub relation: Relation,
}

/// Perception-only data attached to a node of a truth world.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeExtras {
    pub close_only: BTreeSet<String>,
    pub occluded_from_parent: bool,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedWorld {
    pub id: Option<String>,
    pub graph: SceneGraph,
    pub extras: BTreeMap<NodeId, NodeExtras>,
    pub entrance: Option<NodeId>,
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, WorldError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        WorldError::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}

impl WorldFile {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        parse_json(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world file serializes")
    }

    pub fn has_small_objects(&self) -> bool {
        self.big_objects().any(|b| !b.small_objects.is_empty())
    }

    fn big_objects(&self) -> impl Iterator<Item = &BigObjectEntry> {
        self.floors.iter().flat_map(|f| {
            f.big_objects.iter().chain(f.rooms.iter().flat_map(|r| r.big_objects.iter()))
        })
    }

    /// Builds the graph. With `truth == false` any small objects or
    /// attribute data is rejected.
    pub fn build(&self, truth: bool) -> Result<LoadedWorld, WorldError> {
        let mut graph = SceneGraph::new();
        let mut extras: BTreeMap<NodeId, NodeExtras> = BTreeMap::new();
        let mut keys: BTreeMap<String, NodeId> = BTreeMap::new();
        let mut small: Vec<(NodeId, &SmallObjectEntry)> = Vec::new();

        let register = |key: &str, id: NodeId, keys: &mut BTreeMap<String, NodeId>| {
            if keys.insert(key.to_string(), id).is_some() {
                return Err(WorldError::Validation { node: key.to_string(), reason: "duplicate id".into() });
            }
            Ok(())
        };

        for floor in &self.floors {
            let layer = floor.layer.unwrap_or(LayerId::Floor);
            let label = floor.label.clone().unwrap_or_else(|| "floor".to_string());
            let fid = graph.push_node(None, layer, &label, Some(floor.id.clone()), floor.position, None);
            register(&floor.id, fid, &mut keys)?;
            let mut bigs: Vec<(NodeId, &BigObjectEntry)> =
                floor.big_objects.iter().map(|b| (fid, b)).collect();
            for room in &floor.rooms {
                let rl = room.layer.unwrap_or(LayerId::Room);
                let rid = graph.push_node(Some(fid), rl, &room.label, Some(room.id.clone()), Some(room.position), None);
                register(&room.id, rid, &mut keys)?;
                bigs.extend(room.big_objects.iter().map(|b| (rid, b)));
            }
            for (parent, big) in bigs {
                let bl = big.layer.unwrap_or(LayerId::BigObject);
                let bid = graph.push_node(Some(parent), bl, &big.label, Some(big.id.clone()), Some(big.position), None);
                register(&big.id, bid, &mut keys)?;
                if !truth && (!big.attributes.is_empty() || !big.close_only.is_empty()) {
                    return Err(WorldError::Validation {
                        node: big.id.clone(),
                        reason: "prior files carry no attributes".into(),
                    });
                }
                if !truth && !big.small_objects.is_empty() {
                    return Err(WorldError::Validation {
                        node: big.id.clone(),
                        reason: "prior files carry no small objects".into(),
                    });
                }
                for (k, v) in &big.attributes {
                    graph.set_attribute(bid, k, v)?;
                }
                extras.insert(bid, extras_for(&big.id, &big.attributes, &big.close_only, false, &big.alias)?);
                small.extend(big.small_objects.iter().map(|s| (bid, s)));
            }
        }
        // Small objects come last so the prior keeps identical ids.
        for (parent, s) in small {
            let sid = graph.push_node(Some(parent), LayerId::SmallObject, &s.label, s.id.clone(), s.position, Some(s.relation.unwrap_or(Relation::On)));
            let name = s.id.clone().unwrap_or_else(|| format!("{} under {}", s.label, parent));
            if let Some(key) = &s.id {
                register(key, sid, &mut keys)?;
            }
            for (k, v) in &s.attributes {
                graph.set_attribute(sid, k, v)?;
            }
            extras.insert(sid, extras_for(&name, &s.attributes, &s.close_only, s.occluded_from_parent, &s.alias)?);
        }
        for edge in &self.spatial_edges {
            let lookup = |k: &String| {
                keys.get(k).copied().ok_or_else(|| WorldError::Validation {
                    node: k.clone(),
                    reason: "spatial edge references an unknown id".into(),
                })
            };
            let (a, b) = (lookup(&edge.a)?, lookup(&edge.b)?);
            graph.push_spatial_edge(a, b, edge.relation);
        }
        graph.validate()?;
        let entrance = match &self.entrance {
            Some(k) => Some(keys.get(k).copied().ok_or_else(|| WorldError::Validation {
                node: k.clone(),
                reason: "entrance references an unknown id".into(),
            })?),
            None => graph.layer_nodes(LayerId::Floor).next().map(|n| n.id),
        };
        Ok(LoadedWorld { id: self.id.clone(), graph, extras, entrance })
    }
}

fn extras_for(
    name: &str,
    attributes: &BTreeMap<String, String>,
    close_only: &[String],
    occluded: bool,
    alias: &Option<String>,
) -> Result<NodeExtras, WorldError> {
    for attr in close_only {
        if !attributes.contains_key(attr) {
            return Err(WorldError::Validation {
                node: name.to_string(),
                reason: format!("close_only attribute `{attr}` is not in the attribute map"),
            });
        }
    }
    Ok(NodeExtras {
        close_only: close_only.iter().cloned().collect(),
        occluded_from_parent: occluded,
        alias: alias.clone(),
    })
}

/// Parses a prior world file: floors, rooms and big objects only.
pub fn parse_world_prior(text: &str) -> Result<SceneGraph, WorldError> {
    Ok(WorldFile::from_json(text)?.build(false)?.graph)
}

pub fn load_world_prior(path: impl AsRef<Path>) -> Result<SceneGraph, WorldError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| WorldError::Io { path: path.display().to_string(), source })?;
    parse_world_prior(&text)
}

impl SceneGraph {
    /// Serializes the floor, room and big-object layers as a prior file.
    pub fn to_world_file(&self) -> WorldFile {
        let key = |id: NodeId| {
            self.node(id).ok().and_then(|n| n.key.clone()).unwrap_or_else(|| id.to_string())
        };
        let floors = self
            .layer_nodes(LayerId::Floor)
            .map(|f| FloorEntry {
                id: key(f.id),
                label: (f.label != "floor").then(|| f.label.clone()),
                layer: None,
                position: f.position,
                big_objects: Vec::new(),
                rooms: self
                    .child_ids(f.id)
                    .iter()
                    .filter_map(|&r| self.node(r).ok())
                    .filter(|r| r.layer == LayerId::Room)
                    .map(|r| RoomEntry {
                        id: key(r.id),
                        label: r.label.clone(),
                        layer: None,
                        position: r.position.unwrap_or([0.0, 0.0]),
                        big_objects: self
                            .child_ids(r.id)
                            .iter()
                            .filter_map(|&b| self.node(b).ok())
                            .map(|b| BigObjectEntry {
                                id: key(b.id),
                                label: b.label.clone(),
                                layer: None,
                                position: b.position.unwrap_or([0.0, 0.0]),
                                attributes: BTreeMap::new(),
                                close_only: Vec::new(),
                                alias: None,
                                small_objects: Vec::new(),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        let spatial_edges = self
            .spatial_edges()
            .iter()
            .filter(|e| self.node(e.a).is_ok_and(|n| n.layer <= LayerId::BigObject))
            .map(|e| EdgeEntry { a: key(e.a), b: key(e.b), relation: e.relation })
            .collect();
        WorldFile { id: None, floors, spatial_edges, entrance: None }
    }
}
