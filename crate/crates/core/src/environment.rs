//! Deterministic indoor simulator. The agent teleports between node anchors
//! and perceives according to layered visibility:
//!
//! * at a room it sees the big objects inside and their remote attributes;
//! * at a big object it sees the small objects on it (unless occluded) and
//!   their remote attributes;
//! * at any node it sees that node's full attribute map;
//! * `close_only` attributes are revealed only at the node itself.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rule_planner::{MoveGoal, Plan, PlanKind};
use crate::scene_graph::{
    self, labels, LayerId, LoadedWorld, NodeExtras, NodeId, Relation, SceneGraph, WorldError, WorldFile,
};

/// Full ground truth of one world, including small objects and perception flags.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldTruth {
    id: String,
    graph: SceneGraph,
    extras: BTreeMap<NodeId, NodeExtras>,
    entrance: Option<NodeId>,
}

impl WorldTruth {
    pub fn from_world_file(file: &WorldFile, fallback_id: &str) -> Result<Self, WorldError> {
        let LoadedWorld { id, graph, extras, entrance } = file.build(true)?;
        Ok(Self { id: id.unwrap_or_else(|| fallback_id.to_string()), graph, extras, entrance })
    }

    pub fn from_json(text: &str, fallback_id: &str) -> Result<Self, WorldError> {
        Self::from_world_file(&WorldFile::from_json(text)?, fallback_id)
    }

    /// Loads a truth file; the world id defaults to the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| WorldError::Io { path: path.display().to_string(), source })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("world");
        Self::from_json(&text, stem)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn graph(&self) -> &SceneGraph {
        &self.graph
    }

    /// The prior an agent starts from: floors, rooms and big objects, no attributes.
    pub fn prior_graph(&self) -> SceneGraph {
        self.graph.without_small_objects()
    }

    pub fn entrance(&self) -> Option<NodeId> {
        self.entrance
    }

    pub fn extras(&self, id: NodeId) -> Option<&NodeExtras> {
        self.extras.get(&id)
    }

    pub fn is_close_only(&self, id: NodeId, attr: &str) -> bool {
        self.extras.get(&id).is_some_and(|e| e.close_only.contains(attr))
    }

    pub fn is_occluded(&self, id: NodeId) -> bool {
        self.extras.get(&id).is_some_and(|e| e.occluded_from_parent)
    }

    /// The label perception reports for a node.
    pub fn perceived_label(&self, id: NodeId) -> String {
        match self.extras.get(&id).and_then(|e| e.alias.clone()) {
            Some(alias) => alias,
            None => self.graph.node(id).map(|n| n.label.clone()).unwrap_or_default(),
        }
    }

    /// Attributes of `id` perceivable from a different anchor.
    pub fn remote_attributes(&self, id: NodeId) -> BTreeMap<String, String> {
        let Ok(node) = self.graph.node(id) else {
            return BTreeMap::new();
        };
        node.attributes
            .iter()
            .filter(|(k, _)| !self.is_close_only(id, k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPose {
    pub anchor: NodeId,
    pub layer: LayerId,
    pub steps_taken: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleNode {
    pub id: NodeId,
    pub label: String,
    pub layer: LayerId,
    /// Relation to the anchor, for small objects seen from their big object.
    pub relation: Option<Relation>,
    pub parent: Option<NodeId>,
    pub instance_index: u32,
}

/// `subject relation object` between two perceived nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleRelation {
    pub subject: NodeId,
    pub relation: Relation,
    pub object: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub t: usize,
    pub anchor: NodeId,
    pub anchor_label: String,
    pub anchor_layer: LayerId,
    pub anchor_parent: Option<NodeId>,
    pub visible: Vec<VisibleNode>,
    pub relations: Vec<VisibleRelation>,
    pub revealed_attributes: BTreeMap<NodeId, BTreeMap<String, String>>,
    /// Node an Observe plan focused on.
    pub focus: Option<NodeId>,
    pub move_failed: bool,
}

impl Observation {
    pub fn attribute(&self, node: NodeId, name: &str) -> Option<&str> {
        self.revealed_attributes.get(&node).and_then(|m| m.get(name)).map(String::as_str)
    }

    pub fn is_visible(&self, node: NodeId) -> bool {
        self.visible.iter().any(|v| v.id == node)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("answer plans end the episode and are not executed by the environment")]
    AnswerPlan,
    #[error("world has no entrance node")]
    NoEntrance,
}

/// One episode's view of a world.
#[derive(Debug, Clone)]
pub struct Environment<'w> {
    world: &'w WorldTruth,
    pose: AgentPose,
    t: usize,
}

impl<'w> Environment<'w> {
    /// Places the agent at the entrance and returns the initial observation.
    pub fn reset(world: &'w WorldTruth) -> Result<(Self, AgentPose, Observation), EnvError> {
        let anchor = world.entrance.ok_or(EnvError::NoEntrance)?;
        let layer = world.graph.node(anchor).map_err(|_| EnvError::NoEntrance)?.layer;
        let pose = AgentPose { anchor, layer, steps_taken: 0 };
        let env = Self { world, pose, t: 0 };
        let o0 = env.observe(None, false);
        Ok((env, pose, o0))
    }

    pub fn pose(&self) -> AgentPose {
        self.pose
    }

    pub fn world(&self) -> &'w WorldTruth {
        self.world
    }

    pub fn execute(&mut self, plan: &Plan) -> Result<Observation, EnvError> {
        self.t += 1;
        match &plan.kind {
            PlanKind::Answer { .. } => {
                self.t -= 1;
                Err(EnvError::AnswerPlan)
            }
            PlanKind::Observe { focus, .. } => Ok(self.observe(*focus, false)),
            PlanKind::MoveTo(goal) => {
                self.pose.steps_taken += 1;
                match self.resolve(goal) {
                    Some(target) => {
                        self.pose.anchor = target;
                        self.pose.layer = self.world.graph.node(target).expect("resolved node exists").layer;
                        Ok(self.observe(None, false))
                    }
                    None => Ok(self.observe(None, true)),
                }
            }
        }
    }

    fn resolve(&self, goal: &MoveGoal) -> Option<NodeId> {
        let g = &self.world.graph;
        match goal {
            MoveGoal::Node { id, .. } => g.contains(*id).then_some(*id),
            MoveGoal::Label { layer, label } => {
                let layers: Vec<LayerId> = match layer {
                    Some(l) => vec![*l],
                    None => vec![LayerId::Room, LayerId::BigObject, LayerId::SmallObject, LayerId::Floor],
                };
                let here = g.position(self.pose.anchor).unwrap_or([0.0, 0.0]);
                for layer in layers {
                    let scope = match layer {
                        LayerId::Floor => None,
                        LayerId::Room => g.ancestor_at(self.pose.anchor, LayerId::Floor),
                        _ => g.ancestor_at(self.pose.anchor, LayerId::Room),
                    };
                    let candidates: Vec<NodeId> = match (layer, scope) {
                        (LayerId::Floor, _) => g.find_nodes(label, Some(layer)).iter().map(|n| n.id).collect(),
                        (_, Some(s)) => g.find_nodes_within(s, label, Some(layer)).iter().map(|n| n.id).collect(),
                        (_, None) => Vec::new(),
                    };
                    let best = candidates.into_iter().min_by(|a, b| {
                        let da = scene_graph::distance(here, g.position(*a).unwrap_or(here));
                        let db = scene_graph::distance(here, g.position(*b).unwrap_or(here));
                        da.total_cmp(&db).then(a.cmp(b))
                    });
                    if best.is_some() {
                        return best;
                    }
                }
                None
            }
        }
    }

    /// Observation at the current anchor under the visibility rules.
    fn observe(&self, focus: Option<NodeId>, move_failed: bool) -> Observation {
        let w = self.world;
        let g = &w.graph;
        let anchor = self.pose.anchor;
        let anchor_layer = self.pose.layer;
        let mut visible = Vec::new();
        let mut revealed: BTreeMap<NodeId, BTreeMap<String, String>> = BTreeMap::new();
        let mut relations = Vec::new();

        for &child in g.child_ids(anchor) {
            let node = g.node(child).expect("child exists");
            if node.layer == LayerId::SmallObject && w.is_occluded(child) {
                continue;
            }
            visible.push(VisibleNode {
                id: child,
                label: w.perceived_label(child),
                layer: node.layer,
                relation: node.relation,
                parent: Some(anchor),
                instance_index: node.instance_index,
            });
            if anchor_layer >= LayerId::Room {
                let remote = w.remote_attributes(child);
                if !remote.is_empty() {
                    revealed.insert(child, remote);
                }
            }
            if let Some(rel) = node.relation {
                relations.push(VisibleRelation { subject: child, relation: rel, object: anchor });
            }
        }
        if anchor_layer >= LayerId::Room {
            let seen = |id: NodeId| visible.iter().any(|v: &VisibleNode| v.id == id);
            let mut spatial = Vec::new();
            for e in g.spatial_edges() {
                if seen(e.a) && seen(e.b) {
                    spatial.push(VisibleRelation { subject: e.a, relation: e.relation, object: e.b });
                    if let Some(inv) = e.relation.inverse() {
                        spatial.push(VisibleRelation { subject: e.b, relation: inv, object: e.a });
                    }
                }
            }
            relations.extend(spatial);
        }
        let own = g.node(anchor).map(|n| n.attributes.clone()).unwrap_or_default();
        if !own.is_empty() {
            revealed.insert(anchor, own);
        }
        Observation {
            t: self.t,
            anchor,
            anchor_label: w.perceived_label(anchor),
            anchor_layer,
            anchor_parent: g.parent_id(anchor),
            visible,
            relations,
            revealed_attributes: revealed,
            focus,
            move_failed,
        }
    }
}

/// Whether `node`'s label as reported by perception names `label`.
pub fn perceived_matches(observation_label: &str, label: &str) -> bool {
    labels::matches(label, observation_label)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOME: &str = include_str!("../fixtures/home_world.json");

    fn world() -> WorldTruth {
        WorldTruth::from_json(HOME, "home").unwrap()
    }

    fn node(w: &WorldTruth, key: &str) -> NodeId {
        w.graph().node_by_key(key).unwrap().id
    }

    fn move_to(w: &WorldTruth, key: &str) -> Plan {
        let id = node(w, key);
        Plan::new(PlanKind::MoveTo(MoveGoal::Node { id, label: w.graph().node(id).unwrap().label.clone() }), 0)
    }

    #[test]
    fn reset_lists_rooms() {
        let w = world();
        let (_, pose, o0) = Environment::reset(&w).unwrap();
        assert_eq!(pose.layer, LayerId::Floor);
        let labels: Vec<&str> = o0.visible.iter().map(|v| v.label.as_str()).collect();
        assert_eq!(labels, vec!["living room", "kitchen", "bedroom", "study"]);
        assert!(o0.revealed_attributes.is_empty());
        let (_, _, again) = Environment::reset(&w).unwrap();
        assert_eq!(o0, again);
    }

    #[test]
    fn empty_floor_has_nothing_visible() {
        let w = WorldTruth::from_json(r#"{"floors":[{"id":"f","rooms":[]}]}"#, "empty").unwrap();
        let (_, _, o0) = Environment::reset(&w).unwrap();
        assert!(o0.visible.is_empty());
    }

    #[test]
    fn table_view_shows_book_state_but_not_title() {
        let w = world();
        let (mut env, _, _) = Environment::reset(&w).unwrap();
        let o = env.execute(&move_to(&w, "coffee_table")).unwrap();
        let book = node(&w, "book_open");
        let seen = o.visible.iter().find(|v| v.id == book).unwrap();
        assert_eq!((seen.label.as_str(), seen.layer, seen.relation), ("book", LayerId::SmallObject, Some(Relation::On)));
        assert_eq!(o.attribute(book, "state"), Some("open"));
        assert_eq!(o.attribute(book, "title"), None);
        let o = env.execute(&move_to(&w, "book_open")).unwrap();
        assert_eq!(o.attribute(book, "title"), Some("The Little Prince"));
    }

    #[test]
    fn room_view_reveals_remote_only() {
        let w = world();
        let (mut env, _, _) = Environment::reset(&w).unwrap();
        let o = env.execute(&move_to(&w, "living_room")).unwrap();
        let sofa = node(&w, "sofa");
        // Oracle: read the fixture's flags directly.
        assert!(!w.is_close_only(sofa, "color") && w.is_close_only(sofa, "material"));
        assert_eq!(o.attribute(sofa, "color"), Some("gray"));
        assert_eq!(o.attribute(sofa, "material"), None);
        assert!(o.visible.iter().all(|v| v.layer == LayerId::BigObject));
        assert!(o.relations.iter().any(|r| r.subject == sofa && r.relation == Relation::NextTo));
    }

    #[test]
    fn failed_move_keeps_pose_and_counts_a_step() {
        let w = world();
        let (mut env, _, _) = Environment::reset(&w).unwrap();
        env.execute(&move_to(&w, "living_room")).unwrap();
        let before = env.pose();
        let plan = Plan::new(PlanKind::MoveTo(MoveGoal::Label { layer: None, label: "piano".into() }), 1);
        let o = env.execute(&plan).unwrap();
        assert!(o.move_failed);
        assert_eq!(env.pose().anchor, before.anchor);
        assert_eq!(env.pose().steps_taken, before.steps_taken + 1);
        let obs = Plan::new(PlanKind::Observe { content: "look".into(), focus: None }, 2);
        env.execute(&obs).unwrap();
        assert_eq!(env.pose().steps_taken, before.steps_taken + 1);
        let answer = Plan::new(PlanKind::Answer { value: "x".into() }, 3);
        assert_eq!(env.execute(&answer), Err(EnvError::AnswerPlan));
    }

    #[test]
    fn label_goals_resolve_in_context() {
        let w = world();
        let (mut env, _, _) = Environment::reset(&w).unwrap();
        let go = |label: &str| Plan::new(PlanKind::MoveTo(MoveGoal::Label { layer: None, label: label.into() }), 0);
        // Objects are out of context from the floor.
        assert!(env.execute(&go("sofa")).unwrap().move_failed);
        assert!(!env.execute(&go("living room")).unwrap().move_failed);
        assert_eq!(env.execute(&go("sofa")).unwrap().anchor, node(&w, "sofa"));
        // Fridge is in another room.
        assert!(env.execute(&go("fridge")).unwrap().move_failed);
        assert_eq!(env.execute(&go("kitchen")).unwrap().anchor, node(&w, "kitchen"));
    }

    #[test]
    fn occluded_small_objects_hidden_from_parent() {
        let text = r#"{"floors":[{"id":"f","rooms":[{"id":"r","label":"living room","position":[0,0],
          "big_objects":[{"id":"s","label":"sofa","position":[1,0],
            "small_objects":[{"id":"c1","label":"cushion","attributes":{"color":"red"}},
                             {"id":"c2","label":"cushion","occluded_from_parent":true,"attributes":{"color":"blue"}}]}]}]}]}"#;
        let w = WorldTruth::from_json(text, "occ").unwrap();
        let (mut env, _, _) = Environment::reset(&w).unwrap();
        let o = env.execute(&move_to(&w, "s")).unwrap();
        assert_eq!(o.visible.len(), 1);
        assert!(!o.revealed_attributes.contains_key(&node(&w, "c2")));
        let o = env.execute(&move_to(&w, "c2")).unwrap();
        assert_eq!(o.attribute(node(&w, "c2"), "color"), Some("blue"));
    }
}
