//! Rule-based planning: where to stand to observe a target, and which
//! single plan to emit for the current subgoal.
//!
//! Observation placement:
//!
//! | target                   | perception  | observe from |
//! |--------------------------|-------------|--------------|
//! | object in V4             | -           | V3           |
//! | object in V3             | -           | V2           |
//! | attribute of V3 object   | remote      | V2           |
//! | attribute of V3 object   | close range | V3           |
//! | attribute of V4 object   | remote      | V3           |
//! | attribute of V4 object   | close range | V4           |

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::AgentPose;
use crate::pattern::{PatternChain, SubGoal, TargetKind};
use crate::scene_graph::{self, labels, LayerId, NodeId, Position, SceneGraph, SceneNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttrPerceptionClass {
    Remote,
    CloseRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MoveGoal {
    Node { id: NodeId, label: String },
    Label { layer: Option<LayerId>, label: String },
}

impl MoveGoal {
    pub fn label(&self) -> &str {
        match self {
            MoveGoal::Node { label, .. } | MoveGoal::Label { label, .. } => label,
        }
    }

    pub fn node(&self) -> Option<NodeId> {
        match self {
            MoveGoal::Node { id, .. } => Some(*id),
            MoveGoal::Label { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlanKind {
    MoveTo(MoveGoal),
    Observe { content: String, focus: Option<NodeId> },
    Answer { value: String },
}

/// What a plan is for, so the agent knows whether success advances the
/// subgoal index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanRole {
    /// Move to the binding of a navigation subgoal.
    Navigate,
    /// Visit a big object while looking for an unseen small object.
    Search,
    /// Move to the observation point of the target.
    Approach,
    /// Visit one of several observation points of a count/existence sweep.
    Sweep,
    /// Perceive the target from the current anchor.
    Observe,
    /// Answer from prior knowledge.
    Answer,
    /// Chosen by the fallback planner.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    #[serde(flatten)]
    pub kind: PlanKind,
    pub step_index: usize,
    pub role: PlanRole,
}

impl Plan {
    pub fn new(kind: PlanKind, step_index: usize) -> Self {
        let role = match &kind {
            PlanKind::MoveTo(_) => PlanRole::Navigate,
            PlanKind::Observe { .. } => PlanRole::Observe,
            PlanKind::Answer { .. } => PlanRole::Answer,
        };
        Self { kind, step_index, role }
    }

    pub fn with_role(mut self, role: PlanRole) -> Self {
        self.role = role;
        self
    }

    pub fn move_to(node: &SceneNode, t: usize, role: PlanRole) -> Self {
        Plan::new(PlanKind::MoveTo(MoveGoal::Node { id: node.id, label: node.label.clone() }), t).with_role(role)
    }

    pub fn is_answer(&self) -> bool {
        matches!(self.kind, PlanKind::Answer { .. })
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PlanKind::MoveTo(goal) => write!(f, "MoveTo({})", goal.label()),
            PlanKind::Observe { content, .. } => write!(f, "Observe({content})"),
            PlanKind::Answer { value } => write!(f, "Answer({value})"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no rule covers a {0} target")]
    Domain(LayerId),
    #[error("cannot resolve `{label}` for subgoal {step}")]
    ResolutionFailure { step: usize, label: String },
    #[error("planner precondition violated: {0}")]
    Precondition(String),
}

/// Where the agent goes to look at its target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationPolicy {
    /// The placement rules.
    #[default]
    RuleBased,
    /// Always observe from the room, the one-shot baseline.
    RoomLevel,
}

/// Layer the agent must occupy to perceive `target`. `attr_class` must be
/// given exactly when the target is an attribute step.
pub fn observation_layer(target: &SubGoal, attr_class: Option<AttrPerceptionClass>) -> Result<LayerId, PlanError> {
    use AttrPerceptionClass::*;
    use LayerId::*;
    match (target.is_attribute_step(), attr_class) {
        (true, None) => return Err(PlanError::Precondition("attribute target needs a perception class".into())),
        (false, Some(_)) => return Err(PlanError::Precondition("object target takes no perception class".into())),
        _ => {}
    }
    match (target.layer, attr_class) {
        (SmallObject, None) => Ok(BigObject),
        (BigObject, None) => Ok(Room),
        (BigObject, Some(Remote)) => Ok(Room),
        (BigObject, Some(CloseRange)) => Ok(BigObject),
        (SmallObject, Some(Remote)) => Ok(BigObject),
        (SmallObject, Some(CloseRange)) => Ok(SmallObject),
        (layer, _) => Err(PlanError::Domain(layer)),
    }
}

/// Everything the rule planner looks at for one decision.
#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub chain: &'a PatternChain,
    /// Current subgoal index.
    pub k: usize,
    /// Node bound to each subgoal so far.
    pub bindings: &'a [Option<NodeId>],
    /// The agent's working graph: the prior plus everything observed.
    pub graph: &'a SceneGraph,
    pub pose: &'a AgentPose,
    pub attr_class: Option<AttrPerceptionClass>,
    /// Every anchor visited or attempted this episode.
    pub explored: &'a BTreeSet<NodeId>,
    /// Observation points already covered by the current sweep.
    pub swept: &'a BTreeSet<NodeId>,
    pub policy: ObservationPolicy,
    /// Time step the plan is for.
    pub t: usize,
}

impl<'a> PlanningContext<'a> {
    fn here(&self) -> Position {
        self.graph.position(self.pose.anchor).unwrap_or([0.0, 0.0])
    }

    fn node(&self, id: NodeId) -> &'a SceneNode {
        self.graph.node(id).expect("planner ids come from the working graph")
    }

    fn floor(&self) -> Option<NodeId> {
        self.graph
            .ancestor_at(self.pose.anchor, LayerId::Floor)
            .or_else(|| self.graph.layer_nodes(LayerId::Floor).next().map(|n| n.id))
    }

    /// Subtree to resolve step `k` in: the latest bound earlier step, else the floor.
    fn scope(&self, k: usize) -> Option<NodeId> {
        self.bindings[..k.min(self.bindings.len())]
            .iter()
            .rev()
            .find_map(|b| *b)
            .or_else(|| self.floor())
    }

    /// Candidates for a step inside `scope`, nearest first.
    fn candidates(&self, step: &SubGoal, scope: NodeId) -> Vec<&'a SceneNode> {
        let g = self.graph;
        let mut found: Vec<&SceneNode> = match &step.label {
            Some(label) => g.find_nodes_within(scope, label, Some(step.layer)),
            None => g
                .layer_nodes(step.layer)
                .filter(|n| g.is_ancestor_or_self(scope, n.id))
                .collect(),
        };
        if let Some((name, value)) = step.constraint_pair() {
            found.retain(|n| n.attributes.get(name).is_some_and(|v| v.eq_ignore_ascii_case(value)));
        }
        self.sort_nearest(&mut found);
        found
    }

    fn sort_nearest(&self, nodes: &mut [&SceneNode]) {
        let here = self.here();
        let g = self.graph;
        nodes.sort_by(|a, b| {
            let da = scene_graph::distance(here, g.position(a.id).unwrap_or(here));
            let db = scene_graph::distance(here, g.position(b.id).unwrap_or(here));
            da.total_cmp(&db).then(a.instance_index.cmp(&b.instance_index)).then(a.id.cmp(&b.id))
        });
    }

    /// Next big object to visit while looking for an unseen small object:
    /// the current room first, then rooms by distance.
    fn search_target(&self, scope: NodeId) -> Option<&'a SceneNode> {
        let g = self.graph;
        let unexplored = |room: NodeId| -> Vec<&'a SceneNode> {
            let mut v: Vec<&SceneNode> = g
                .child_ids(room)
                .iter()
                .map(|&c| self.node(c))
                .filter(|n| n.layer == LayerId::BigObject && !self.explored.contains(&n.id))
                .collect();
            self.sort_nearest(&mut v);
            v
        };
        let scope_node = self.node(scope);
        let mut rooms: Vec<&SceneNode> = match scope_node.layer {
            LayerId::Room => vec![scope_node],
            LayerId::Floor => g.child_ids(scope).iter().map(|&r| self.node(r)).collect(),
            _ => Vec::new(),
        };
        if let Some(current) = g.ancestor_at(self.pose.anchor, LayerId::Room) {
            if rooms.iter().any(|r| r.id == current) && !unexplored(current).is_empty() {
                return unexplored(current).first().copied();
            }
        }
        self.sort_nearest(&mut rooms);
        rooms.into_iter().find_map(|r| unexplored(r.id).first().copied())
    }

    /// Resolves step `k`, searching big objects when it is an unseen small object.
    fn resolve_or_search(&self, k: usize) -> Result<Resolution<'a>, PlanError> {
        let step = &self.chain.steps()[k];
        let failure = || PlanError::ResolutionFailure { step: k, label: step.label.clone().unwrap_or_else(|| step.layer.to_string()) };
        let scope = self.scope(k).ok_or_else(failure)?;
        if let Some(found) = self.candidates(step, scope).first() {
            return Ok(Resolution::Found(found));
        }
        if step.layer == LayerId::SmallObject && self.node(scope).layer < LayerId::BigObject {
            if let Some(next) = self.search_target(scope) {
                return Ok(Resolution::Search(next));
            }
        }
        Err(failure())
    }
}

enum Resolution<'a> {
    Found(&'a SceneNode),
    Search(&'a SceneNode),
}

/// The single plan for the current subgoal.
pub fn next_plan(ctx: &PlanningContext<'_>) -> Result<Plan, PlanError> {
    let chain = ctx.chain;
    let s = chain.subject_index();
    if ctx.k > s || ctx.bindings.len() != chain.len() {
        return Err(PlanError::Precondition(format!("subgoal {} out of range for {}", ctx.k, chain)));
    }
    if chain.target_kind() == TargetKind::AttributeQuery && ctx.attr_class.is_none() {
        return Err(PlanError::Precondition("attribute target needs a perception class".into()));
    }
    if chain.target_kind() == TargetKind::RoomQuery {
        return room_query(ctx, s);
    }
    if ctx.policy == ObservationPolicy::RoomLevel {
        return room_level(ctx, s);
    }
    if ctx.k < s {
        return match ctx.resolve_or_search(ctx.k)? {
            Resolution::Found(node) => Ok(Plan::move_to(node, ctx.t, PlanRole::Navigate)),
            Resolution::Search(node) => Ok(Plan::move_to(node, ctx.t, PlanRole::Search)),
        };
    }
    match chain.target_kind() {
        TargetKind::AttributeQuery => {
            let subject = match ctx.resolve_or_search(s)? {
                Resolution::Found(n) => n,
                Resolution::Search(n) => return Ok(Plan::move_to(n, ctx.t, PlanRole::Search)),
            };
            let layer = observation_layer(chain.target(), ctx.attr_class)?;
            observe_from(ctx, subject.id, layer, subject.id)
        }
        TargetKind::ObjectQuery => {
            let target = chain.target();
            let layer = observation_layer(target, None)?;
            if target.relation.is_some() {
                let reference = (s > 0)
                    .then(|| ctx.bindings[s - 1])
                    .flatten()
                    .ok_or_else(|| PlanError::Precondition("relation query needs a bound reference object".into()))?;
                return observe_from(ctx, reference, layer, reference);
            }
            let subject = match ctx.resolve_or_search(s)? {
                Resolution::Found(n) => n,
                Resolution::Search(n) => return Ok(Plan::move_to(n, ctx.t, PlanRole::Search)),
            };
            observe_from(ctx, subject.id, layer, subject.id)
        }
        TargetKind::CountQuery | TargetKind::ExistenceQuery => sweep(ctx, s),
        TargetKind::RoomQuery => unreachable!("handled above"),
    }
}

/// Move to the ancestor of `about` at `layer`, or observe `focus` once there.
fn observe_from(ctx: &PlanningContext<'_>, about: NodeId, layer: LayerId, focus: NodeId) -> Result<Plan, PlanError> {
    let point = ctx
        .graph
        .ancestor_at(about, layer)
        .ok_or_else(|| PlanError::Precondition(format!("{about} has no {layer} ancestor")))?;
    if ctx.pose.anchor == point {
        Ok(Plan::new(PlanKind::Observe { content: String::new(), focus: Some(focus) }, ctx.t))
    } else {
        Ok(Plan::move_to(ctx.node(point), ctx.t, PlanRole::Approach))
    }
}

/// Count and existence targets are observed from every observation point
/// inside the scope; one point when the question names the container.
fn sweep(ctx: &PlanningContext<'_>, s: usize) -> Result<Plan, PlanError> {
    let target = ctx.chain.target();
    let layer = observation_layer(target, None)?;
    let scope = ctx.scope(s).ok_or_else(|| PlanError::ResolutionFailure { step: s, label: "scope".into() })?;
    let g = ctx.graph;
    let scope_node = ctx.node(scope);
    let mut points: Vec<&SceneNode> = if scope_node.layer >= layer {
        g.ancestor_at(scope, layer).map(|p| ctx.node(p)).into_iter().collect()
    } else {
        g.descendants(scope).into_iter().map(|d| ctx.node(d)).filter(|n| n.layer == layer).collect()
    };
    ctx.sort_nearest(&mut points);
    let anchor = ctx.pose.anchor;
    let pending: Vec<&&SceneNode> = points.iter().filter(|p| p.id != anchor && !ctx.swept.contains(&p.id)).collect();
    match pending.first() {
        Some(next) => Ok(Plan::move_to(next, ctx.t, PlanRole::Sweep)),
        None => Ok(Plan::new(PlanKind::Observe { content: String::new(), focus: Some(scope) }, ctx.t)),
    }
}

/// Rooms of big objects are prior knowledge; small objects must be found first.
fn room_query(ctx: &PlanningContext<'_>, s: usize) -> Result<Plan, PlanError> {
    let subject = &ctx.chain.steps()[s];
    if ctx.k < s && subject.layer == LayerId::SmallObject {
        return match ctx.resolve_or_search(ctx.k)? {
            Resolution::Found(node) => Ok(Plan::move_to(node, ctx.t, PlanRole::Navigate)),
            Resolution::Search(node) => Ok(Plan::move_to(node, ctx.t, PlanRole::Search)),
        };
    }
    // Earlier big-object steps only narrow the scope; resolve them without moving.
    let mut bindings = ctx.bindings.to_vec();
    for j in ctx.k..s {
        let step = &ctx.chain.steps()[j];
        let sub = PlanningContext { bindings: &bindings, ..*ctx };
        let scope = sub.scope(j).ok_or_else(|| PlanError::ResolutionFailure { step: j, label: "scope".into() })?;
        let node = sub.candidates(step, scope).first().map(|n| n.id).ok_or_else(|| PlanError::ResolutionFailure {
            step: j,
            label: step.label.clone().unwrap_or_default(),
        })?;
        bindings[j] = Some(node);
    }
    let sub = PlanningContext { bindings: &bindings, ..*ctx };
    let answer = |node: &SceneNode| -> Result<Plan, PlanError> {
        let room = if node.layer == LayerId::Room { node } else { ctx.graph.room_of(node.id).map_err(|_| PlanError::Domain(node.layer))? };
        Ok(Plan::new(PlanKind::Answer { value: room.label.clone() }, ctx.t))
    };
    match subject.layer {
        LayerId::Room | LayerId::BigObject => {
            let scope = sub.scope(s).ok_or_else(|| PlanError::ResolutionFailure { step: s, label: "scope".into() })?;
            match sub.candidates(subject, scope).first() {
                Some(node) => answer(node),
                None => Err(PlanError::ResolutionFailure { step: s, label: subject.label.clone().unwrap_or_default() }),
            }
        }
        LayerId::SmallObject => match sub.resolve_or_search(s)? {
            Resolution::Found(node) => answer(node),
            Resolution::Search(node) => Ok(Plan::move_to(node, ctx.t, PlanRole::Search)),
        },
        LayerId::Floor => Err(PlanError::Domain(LayerId::Floor)),
    }
}

/// Baseline policy: go to the room the question points at and look once.
fn room_level(ctx: &PlanningContext<'_>, s: usize) -> Result<Plan, PlanError> {
    let chain = ctx.chain;
    let mut bindings = ctx.bindings.to_vec();
    let mut room = None;
    for (j, step) in chain.steps().iter().enumerate().take(s + 1) {
        if step.layer > LayerId::BigObject || step.is_attribute_step() {
            break;
        }
        let sub = PlanningContext { bindings: &bindings, ..*ctx };
        let Some(scope) = sub.scope(j) else { break };
        let Some(node) = sub.candidates(step, scope).first().map(|n| n.id) else { break };
        bindings[j] = Some(node);
        room = ctx.graph.ancestor_at(node, LayerId::Room).or(room);
    }
    let room = room.ok_or_else(|| PlanError::ResolutionFailure {
        step: 0,
        label: chain.steps()[0].label.clone().unwrap_or_default(),
    })?;
    if ctx.pose.anchor != room {
        return Ok(Plan::move_to(ctx.node(room), ctx.t, PlanRole::Approach));
    }
    let focus = match chain.target_kind() {
        TargetKind::CountQuery | TargetKind::ExistenceQuery => Some(room),
        TargetKind::ObjectQuery if chain.target().relation.is_some() => s.checked_sub(1).and_then(|p| bindings[p]),
        _ => {
            let sub = PlanningContext { bindings: &bindings, ..*ctx };
            sub.candidates(&chain.steps()[s], room).first().map(|n| n.id)
        }
    };
    Ok(Plan::new(PlanKind::Observe { content: String::new(), focus }, ctx.t))
}

/// Whether a node's label satisfies a subgoal label.
pub fn label_fits(step: &SubGoal, label: &str) -> bool {
    step.label.as_deref().is_none_or(|l| labels::matches(l, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::WorldTruth;
    use crate::pattern::parse_pattern_string;

    const HOME: &str = include_str!("../fixtures/home_world.json");

    fn classes() -> [Option<AttrPerceptionClass>; 3] {
        [None, Some(AttrPerceptionClass::Remote), Some(AttrPerceptionClass::CloseRange)]
    }

    #[test]
    fn rule_table_is_exhaustive() {
        use AttrPerceptionClass::*;
        use LayerId::*;
        let expected = [
            ((SmallObject, false, None), Some(BigObject)),
            ((BigObject, false, None), Some(Room)),
            ((BigObject, true, Some(Remote)), Some(Room)),
            ((BigObject, true, Some(CloseRange)), Some(BigObject)),
            ((SmallObject, true, Some(Remote)), Some(BigObject)),
            ((SmallObject, true, Some(CloseRange)), Some(SmallObject)),
        ];
        for layer in LayerId::ALL {
            for attr in [false, true] {
                for class in classes() {
                    let step = if attr { SubGoal::attribute(layer, Some("x")) } else { SubGoal::node(layer, None) };
                    let got = observation_layer(&step, class).ok();
                    let want = expected
                        .iter()
                        .find(|((l, a, c), _)| *l == layer && *a == attr && *c == class)
                        .and_then(|(_, w)| *w);
                    assert_eq!(got, want, "{layer} attr={attr} {class:?}");
                }
            }
        }
    }

    struct Fixture {
        world: WorldTruth,
        graph: SceneGraph,
    }

    impl Fixture {
        fn new() -> Self {
            let world = WorldTruth::from_json(HOME, "home").unwrap();
            let graph = world.prior_graph();
            Self { world, graph }
        }

        fn id(&self, key: &str) -> NodeId {
            self.world.graph().node_by_key(key).unwrap().id
        }

        fn plan(&self, chain: &str, k: usize, bindings: &[Option<NodeId>], anchor: NodeId, class: Option<AttrPerceptionClass>) -> Result<Plan, PlanError> {
            let chain = parse_pattern_string(chain).unwrap();
            let mut b = bindings.to_vec();
            b.resize(chain.len(), None);
            let pose = AgentPose { anchor, layer: self.graph.node(anchor).unwrap().layer, steps_taken: 0 };
            let empty = BTreeSet::new();
            next_plan(&PlanningContext {
                chain: &chain,
                k,
                bindings: &b,
                graph: &self.graph,
                pose: &pose,
                attr_class: class,
                explored: &empty,
                swept: &empty,
                policy: ObservationPolicy::RuleBased,
                t: 0,
            })
        }
    }

    fn goal(p: &Plan) -> Option<NodeId> {
        match &p.kind {
            PlanKind::MoveTo(g) => g.node(),
            _ => None,
        }
    }

    const BOOK_CHAIN: &str = "V2[living room] -> V3[table] -> V4[book]{state=open} -> A[title]";

    #[test]
    fn book_first_step_goes_to_living_room() {
        let f = Fixture::new();
        let p = f.plan(BOOK_CHAIN, 0, &[], f.id("floor_1"), Some(AttrPerceptionClass::CloseRange)).unwrap();
        assert_eq!(goal(&p), Some(f.id("living_room")));
        let p = f.plan(BOOK_CHAIN, 1, &[Some(f.id("living_room"))], f.id("living_room"), Some(AttrPerceptionClass::CloseRange)).unwrap();
        assert_eq!(goal(&p), Some(f.id("coffee_table")));
    }

    #[test]
    fn book_final_step_moves_to_the_open_book() {
        let mut f = Fixture::new();
        let table = f.id("coffee_table");
        let open = f.graph.add_observed_node(table, "book", 0, &[("state".to_string(), "open".to_string())].into()).unwrap();
        f.graph.add_observed_node(table, "book", 1, &[("state".to_string(), "closed".to_string())].into()).unwrap();
        let b = [Some(f.id("living_room")), Some(table)];
        let p = f.plan(BOOK_CHAIN, 2, &b, table, Some(AttrPerceptionClass::CloseRange)).unwrap();
        assert_eq!(goal(&p), Some(open));
        assert_eq!(p.role, PlanRole::Approach);
        // Once there, observe.
        let p = f.plan(BOOK_CHAIN, 2, &b, open, Some(AttrPerceptionClass::CloseRange)).unwrap();
        assert!(matches!(p.kind, PlanKind::Observe { focus: Some(x), .. } if x == open));
        // A remote attribute is observed from the table.
        let p = f.plan(BOOK_CHAIN, 2, &b, table, Some(AttrPerceptionClass::Remote)).unwrap();
        assert!(matches!(p.kind, PlanKind::Observe { .. }));
    }

    #[test]
    fn room_of_big_object_is_prior_knowledge() {
        let f = Fixture::new();
        let p = f.plan("V3[sofa] -> V2", 0, &[], f.id("floor_1"), None).unwrap();
        // Oracle: walk parents on the prior graph.
        let mut cur = f.id("sofa");
        while f.graph.node(cur).unwrap().layer != LayerId::Room {
            cur = f.graph.parent_id(cur).unwrap();
        }
        let want = f.graph.node(cur).unwrap().label.clone();
        assert_eq!(p.kind, PlanKind::Answer { value: want });
        assert_eq!(p.kind, PlanKind::Answer { value: "living room".into() });
    }

    #[test]
    fn unknown_label_is_a_resolution_failure() {
        let f = Fixture::new();
        let b = [Some(f.id("living_room"))];
        let r = f.plan("V2[living room] -> V3[piano] -> A[color]", 1, &b, f.id("living_room"), Some(AttrPerceptionClass::Remote));
        assert!(matches!(r, Err(PlanError::ResolutionFailure { step: 1, .. })));
    }

    #[test]
    fn desk_tie_break_prefers_nearest() {
        let f = Fixture::new();
        let b = [Some(f.id("living_room"))];
        // From desk_1's position, desk_1 is nearest.
        let r = f.plan("V2[living room] -> V3[desk] -> V4[laptop] -> A[color]", 1, &b, f.id("desk_1"), Some(AttrPerceptionClass::Remote)).unwrap();
        assert_eq!(goal(&r), Some(f.id("desk_1")));
        let r = f.plan("V2[living room] -> V3[desk] -> V4[laptop] -> A[color]", 1, &b, f.id("living_room"), Some(AttrPerceptionClass::Remote)).unwrap();
        // living room (4,3): desk_0 (2,4.5) d=2.5, desk_1 (6.5,4.5) d=2.92
        assert_eq!(goal(&r), Some(f.id("desk_0")));
    }

    #[test]
    fn unseen_small_object_triggers_search_in_current_room_first() {
        let f = Fixture::new();
        let p = f.plan("V4[laptop] -> V2", 0, &[], f.id("kitchen"), None).unwrap();
        assert_eq!(p.role, PlanRole::Search);
        let target = goal(&p).unwrap();
        assert_eq!(f.graph.room_of(target).unwrap().id, f.id("kitchen"));
    }

    #[test]
    fn count_sweeps_all_big_objects_of_a_room() {
        let f = Fixture::new();
        let chain = "count: V2[living room] -> V4[cushion]";
        let lr = f.id("living_room");
        let p = f.plan(chain, 1, &[Some(lr)], lr, None).unwrap();
        assert_eq!(p.role, PlanRole::Sweep);
        let chain_desks = "count: V2[living room] -> V3[desk]";
        let p = f.plan(chain_desks, 1, &[Some(lr)], lr, None).unwrap();
        assert!(matches!(p.kind, PlanKind::Observe { focus: Some(x), .. } if x == lr));
    }

    #[test]
    fn never_moves_below_the_mandated_layer() {
        let f = Fixture::new();
        let lr = f.id("living_room");
        for (chain, class) in [
            ("V2[living room] -> V3[sofa] -> A[color]", Some(AttrPerceptionClass::Remote)),
            ("exists: V2[living room] -> V3[sofa]", None),
        ] {
            let p = f.plan(chain, 1, &[Some(lr)], lr, class).unwrap();
            assert!(matches!(p.kind, PlanKind::Observe { .. }), "{chain}: {p:?}");
        }
    }
}
