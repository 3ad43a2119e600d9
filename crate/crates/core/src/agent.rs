//! The episode loop: parse, then alternate one plan and one observation
//! until the question is answered or the plan budget runs out.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::environment::{perceived_matches, AgentPose, Environment, Observation, VisibleNode, WorldTruth};
use crate::language_parsing::{LanguageParser, ParsedQuestion, Question};
use crate::llm_planner::{FallbackContext, PlannerBackend, NOT_FOUND};
use crate::pattern::{PatternChain, TargetKind};
use crate::rule_planner::{
    label_fits, next_plan, AttrPerceptionClass, MoveGoal, ObservationPolicy, Plan, PlanError, PlanKind, PlanRole,
    PlanningContext,
};
use crate::scene_graph::{labels, LayerId, NodeId, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Consecutive failed verdicts tolerated before the fallback planner runs.
    pub retry_cap: u32,
    /// Plan budget; `None` means `4 * chain length + 8`.
    pub max_plans: Option<usize>,
    pub policy: ObservationPolicy,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { retry_cap: 2, max_plans: None, policy: ObservationPolicy::RuleBased }
    }
}

impl AgentConfig {
    pub fn plan_budget(&self, chain: &PatternChain) -> usize {
        self.max_plans.unwrap_or(4 * chain.len() + 8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Answered,
    NotFound,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Rule,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: usize,
    /// Subgoal index when the plan was made.
    pub k: usize,
    pub source: PlanSource,
    pub plan: Plan,
    pub observation: Observation,
    pub verdict: bool,
    /// The verdict came from checking the anchor against the prior graph.
    pub secondary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub question: String,
    pub world_id: String,
    pub gold_pattern: Option<String>,
    pub config: AgentConfig,
    pub parsed: Option<ParsedQuestion>,
    pub attr_class: Option<AttrPerceptionClass>,
    pub max_plans: usize,
    pub initial_observation: Option<Observation>,
    pub events: Vec<TraceEvent>,
    /// The terminating Answer plan, when there was one.
    pub final_plan: Option<Plan>,
    pub answer: String,
    pub status: EpisodeStatus,
    /// Moves executed.
    pub steps: u32,
    pub error: Option<String>,
    pub wall_ms: u64,
}

impl EpisodeTrace {
    /// Plans emitted, including a terminating Answer.
    pub fn plans(&self) -> usize {
        self.events.len() + usize::from(self.final_plan.is_some())
    }

    /// Header line, one line per event, and a final summary line.
    pub fn to_jsonl(&self) -> String {
        let header = serde_json::json!({ "header": {
            "question": self.question,
            "world_id": self.world_id,
            "gold_pattern": self.gold_pattern,
            "config": self.config,
            "prompts": crate::llm_client::prompts::ALL.iter().map(|p| p.id()).collect::<Vec<_>>(),
            "pattern": self.parsed.as_ref().map(|p| p.chain.render()),
            "parse_source": self.parsed.as_ref().map(|p| p.source),
            "attr_class": self.attr_class,
            "max_plans": self.max_plans,
            "initial_observation": self.initial_observation,
        }});
        let mut out = header.to_string();
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::json!({ "event": e }).to_string());
            out.push('\n');
        }
        let last = serde_json::json!({ "final": {
            "final_plan": self.final_plan,
            "answer": self.answer,
            "status": self.status,
            "steps": self.steps,
            "plans": self.plans(),
            "error": self.error,
            "wall_ms": self.wall_ms,
        }});
        out.push_str(&last.to_string());
        out.push('\n');
        out
    }
}

/// Translates between world node ids and the agent's working-graph ids.
/// Floors, rooms and big objects share ids with the prior; small objects
/// get local ids in the order they are first seen.
#[derive(Debug, Default)]
struct IdMap {
    to_local: HashMap<NodeId, NodeId>,
    to_world: HashMap<NodeId, NodeId>,
}

impl IdMap {
    fn local(&self, world: NodeId) -> NodeId {
        self.to_local.get(&world).copied().unwrap_or(world)
    }

    fn world(&self, local: NodeId) -> NodeId {
        self.to_world.get(&local).copied().unwrap_or(local)
    }

    fn plan_to_world(&self, plan: &Plan) -> Plan {
        let mut p = plan.clone();
        match &mut p.kind {
            PlanKind::MoveTo(MoveGoal::Node { id, .. }) => *id = self.world(*id),
            PlanKind::Observe { focus: Some(f), .. } => *f = self.world(*f),
            _ => {}
        }
        p
    }

    /// Merges an observation into the working graph.
    fn absorb(&mut self, graph: &mut SceneGraph, obs: &Observation) {
        let attrs = |id: NodeId| obs.revealed_attributes.get(&id).cloned().unwrap_or_default();
        let add = |this: &mut Self, graph: &mut SceneGraph, world: NodeId, label: &str, parent: Option<NodeId>, instance: u32| {
            if let Some(local) = this.to_local.get(&world) {
                for (k, v) in attrs(world) {
                    let _ = graph.set_attribute(*local, &k, &v);
                }
                return;
            }
            let Some(parent) = parent else { return };
            if let Ok(local) = graph.add_observed_node(parent, label, instance, &attrs(world)) {
                this.to_local.insert(world, local);
                this.to_world.insert(local, world);
            }
        };
        for v in &obs.visible {
            match v.layer {
                LayerId::SmallObject => add(self, graph, v.id, &v.label, v.parent, v.instance_index),
                _ => set_all(graph, v.id, &attrs(v.id)),
            }
        }
        if obs.anchor_layer == LayerId::SmallObject {
            // Reached by label without being seen first; its instance is unknown.
            add(self, graph, obs.anchor, &obs.anchor_label, obs.anchor_parent, 0);
        } else {
            set_all(graph, obs.anchor, &attrs(obs.anchor));
        }
    }
}

fn set_all(graph: &mut SceneGraph, id: NodeId, attrs: &BTreeMap<String, String>) {
    for (k, v) in attrs {
        let _ = graph.set_attribute(id, k, v);
    }
}

/// Whether an observation confirms the plan that produced it. World ids.
pub fn check_feedback(obs: &Observation, plan: &Plan, chain: &PatternChain) -> bool {
    match &plan.kind {
        PlanKind::Answer { .. } => true,
        PlanKind::MoveTo(goal) => !obs.move_failed && perceived_matches(&obs.anchor_label, goal.label()),
        PlanKind::Observe { focus, .. } => match chain.target_kind() {
            TargetKind::CountQuery | TargetKind::ExistenceQuery | TargetKind::RoomQuery => true,
            TargetKind::AttributeQuery => match (focus, chain.target().attribute_name()) {
                (Some(f), Some(name)) => obs.attribute(*f, name).is_some(),
                (Some(f), None) => obs.revealed_attributes.get(f).is_some_and(|m| !m.is_empty()),
                (None, _) => false,
            },
            TargetKind::ObjectQuery => match (chain.target().relation, focus) {
                (Some(_), Some(f)) => obs.anchor == *f || obs.is_visible(*f),
                (Some(_), None) => false,
                (None, _) => obs.visible.iter().any(|v| label_fits(chain.target(), &v.label)),
            },
        },
    }
}

/// Checks a failed move against the prior graph: the move counts as
/// successful when the anchor is the goal or lies inside it, even if
/// perception reported a different label.
pub fn secondary_perception(graph: &SceneGraph, anchor: NodeId, plan: &Plan) -> bool {
    match &plan.kind {
        PlanKind::MoveTo(MoveGoal::Node { id, .. }) => graph.contains(*id) && graph.is_ancestor_or_self(*id, anchor),
        PlanKind::MoveTo(MoveGoal::Label { label, .. }) => {
            graph.node(anchor).is_ok_and(|n| labels::matches(label, &n.label))
        }
        _ => false,
    }
}

/// Union of several observations, first sighting first; anchor and focus
/// come from the last one.
pub fn merge_observations(observations: &[Observation]) -> Option<Observation> {
    let last = observations.last()?;
    let mut merged = last.clone();
    merged.visible.clear();
    merged.relations.clear();
    merged.revealed_attributes.clear();
    let mut seen = BTreeSet::new();
    for o in observations {
        for v in &o.visible {
            if seen.insert(v.id) {
                merged.visible.push(v.clone());
            }
        }
        for r in &o.relations {
            if !merged.relations.contains(r) {
                merged.relations.push(*r);
            }
        }
        for (id, attrs) in &o.revealed_attributes {
            merged.revealed_attributes.entry(*id).or_default().extend(attrs.clone());
        }
    }
    Some(merged)
}

fn counted<'o>(obs: &'o Observation, chain: &PatternChain) -> Vec<&'o VisibleNode> {
    let target = chain.target();
    obs.visible
        .iter()
        .filter(|v| v.layer == target.layer && label_fits(target, &v.label))
        .filter(|v| match target.constraint_pair() {
            Some((n, val)) => obs.attribute(v.id, n).is_some_and(|x| x.eq_ignore_ascii_case(val)),
            None => true,
        })
        .collect()
}

/// Reads the answer to the whole question off an observation. World ids.
pub fn extract_answer(obs: &Observation, chain: &PatternChain) -> String {
    let target = chain.target();
    match chain.target_kind() {
        TargetKind::AttributeQuery => {
            let Some(focus) = obs.focus else { return NOT_FOUND.into() };
            let value = match target.attribute_name() {
                Some(name) => obs.attribute(focus, name),
                None => obs.revealed_attributes.get(&focus).and_then(|m| m.values().next()).map(String::as_str),
            };
            value.map_or_else(|| NOT_FOUND.into(), str::to_string)
        }
        TargetKind::CountQuery => counted(obs, chain).len().to_string(),
        TargetKind::ExistenceQuery => if counted(obs, chain).is_empty() { "no" } else { "yes" }.into(),
        TargetKind::RoomQuery => {
            if obs.anchor_layer == LayerId::Room {
                obs.anchor_label.clone()
            } else {
                NOT_FOUND.into()
            }
        }
        TargetKind::ObjectQuery => match (target.relation, obs.focus) {
            (Some(rel), Some(focus)) => {
                let mut names: Vec<String> = Vec::new();
                for v in &obs.visible {
                    let related = obs.relations.iter().any(|r| r.subject == v.id && r.object == focus && r.relation == rel);
                    if related && v.layer == target.layer && v.id != focus {
                        names.push(v.label.clone());
                    }
                }
                if names.is_empty() {
                    "nothing".into()
                } else {
                    names.join(", ")
                }
            }
            _ => obs
                .visible
                .iter()
                .find(|v| label_fits(target, &v.label))
                .map_or_else(|| NOT_FOUND.into(), |v| v.label.clone()),
        },
    }
}

/// A parser, a planner backend and the loop settings.
#[derive(Debug, Clone, Default)]
pub struct Agent {
    pub parser: LanguageParser,
    pub planner: PlannerBackend,
    pub config: AgentConfig,
}

impl Agent {
    pub fn new(parser: LanguageParser, planner: PlannerBackend, config: AgentConfig) -> Self {
        Self { parser, planner, config }
    }

    /// Runs one episode. Failures are reported in the trace, never raised.
    pub fn run_episode(&self, question: &Question, world: &WorldTruth) -> EpisodeTrace {
        let start = Instant::now();
        let mut trace = EpisodeTrace {
            question: question.text.clone(),
            world_id: world.id().to_string(),
            gold_pattern: question.gold.as_ref().map(|g| g.pattern.clone()),
            config: self.config,
            parsed: None,
            attr_class: None,
            max_plans: 0,
            initial_observation: None,
            events: Vec::new(),
            final_plan: None,
            answer: NOT_FOUND.into(),
            status: EpisodeStatus::Failed,
            steps: 0,
            error: None,
            wall_ms: 0,
        };
        if let Err(e) = self.run(question, world, &mut trace) {
            trace.status = EpisodeStatus::Failed;
            trace.error = Some(e);
        }
        trace.wall_ms = start.elapsed().as_millis() as u64;
        trace
    }

    fn run(&self, question: &Question, world: &WorldTruth, trace: &mut EpisodeTrace) -> Result<(), String> {
        let (mut env, mut pose, o0) = Environment::reset(world).map_err(|e| e.to_string())?;
        let mut graph = world.prior_graph();
        let mut ids = IdMap::default();
        ids.absorb(&mut graph, &o0);
        trace.initial_observation = Some(o0);

        let parsed = self.parser.parse(question, Some(&graph)).map_err(|e| e.to_string())?;
        let chain = parsed.chain.clone();
        trace.parsed = Some(parsed);
        trace.max_plans = self.config.plan_budget(&chain);
        if chain.target_kind() == TargetKind::AttributeQuery {
            let attr = chain.target().attribute_name().unwrap_or("attribute");
            let object = chain.subject().label.as_deref().unwrap_or("object");
            trace.attr_class = Some(self.planner.classify_attribute(attr, object).map_err(|e| e.to_string())?);
        }

        let s = chain.subject_index();
        let mut k = 0usize;
        let mut bindings: Vec<Option<NodeId>> = vec![None; chain.len()];
        let mut explored: BTreeSet<NodeId> = [pose.anchor].into();
        let mut swept: BTreeSet<NodeId> = BTreeSet::new();
        let mut phase: Vec<Observation> = Vec::new();
        let mut failures = 0u32;
        let mut history: Vec<String> = Vec::new();

        while trace.events.len() < trace.max_plans {
            let t = trace.events.len() + 1;
            let local_pose = AgentPose { anchor: ids.local(pose.anchor), ..pose };
            let fallback = |graph: &SceneGraph, explored: &BTreeSet<NodeId>, history: &[String]| {
                let ctx = FallbackContext {
                    question: &question.text,
                    chain: &chain,
                    graph,
                    pose: &local_pose,
                    explored,
                    history,
                    t,
                };
                self.planner.fallback_plan(&ctx).map(|p| (p.with_role(PlanRole::Fallback), PlanSource::Fallback))
            };
            let (mut plan, source) = if failures > self.config.retry_cap {
                fallback(&graph, &explored, &history).map_err(|e| e.to_string())?
            } else {
                let ctx = PlanningContext {
                    chain: &chain,
                    k,
                    bindings: &bindings,
                    graph: &graph,
                    pose: &local_pose,
                    attr_class: trace.attr_class,
                    explored: &explored,
                    swept: &swept,
                    policy: self.config.policy,
                    t,
                };
                match next_plan(&ctx) {
                    Ok(p) => (p, PlanSource::Rule),
                    Err(PlanError::ResolutionFailure { .. }) => fallback(&graph, &explored, &history).map_err(|e| e.to_string())?,
                    Err(e) => return Err(e.to_string()),
                }
            };
            if source == PlanSource::Fallback {
                failures = 0;
            }
            if let PlanKind::Answer { value } = &plan.kind {
                trace.answer = value.clone();
                trace.status = status_of(value);
                trace.final_plan = Some(plan);
                trace.steps = pose.steps_taken;
                return Ok(());
            }
            if let PlanKind::Observe { content, .. } = &mut plan.kind {
                if content.is_empty() {
                    *content = self.planner.simplify_question(&question.text, &chain, k, &history).map_err(|e| e.to_string())?;
                }
            }
            let world_plan = ids.plan_to_world(&plan);
            let obs = env.execute(&world_plan).map_err(|e| e.to_string())?;
            pose = env.pose();
            ids.absorb(&mut graph, &obs);
            let anchor = ids.local(pose.anchor);
            explored.insert(anchor);
            if let PlanKind::MoveTo(MoveGoal::Node { id, .. }) = &plan.kind {
                explored.insert(*id);
            }

            let mut verdict = check_feedback(&obs, &world_plan, &chain);
            let mut secondary = false;
            if !verdict && matches!(plan.kind, PlanKind::MoveTo(_)) && !obs.move_failed {
                secondary = secondary_perception(&graph, anchor, &plan);
                verdict = secondary;
            }
            history.push(format!("{plan} -> {}", if verdict { "ok" } else { "failed" }));
            trace.events.push(TraceEvent { t, k, source, plan: world_plan, observation: obs.clone(), verdict, secondary });
            trace.steps = pose.steps_taken;

            if !verdict {
                failures += 1;
                continue;
            }
            failures = 0;
            match (&plan.kind, plan.role) {
                (PlanKind::Observe { .. }, _) => {
                    phase.push(obs);
                    let merged = merge_observations(&phase).expect("phase has the final observation");
                    trace.answer = extract_answer(&merged, &chain);
                    trace.status = status_of(&trace.answer);
                    return Ok(());
                }
                (PlanKind::MoveTo(_), PlanRole::Navigate) => {
                    bindings[k] = Some(anchor);
                    k = (k + 1).min(s);
                }
                (PlanKind::MoveTo(_), PlanRole::Sweep) => {
                    swept.insert(anchor);
                    phase.push(obs);
                }
                (PlanKind::MoveTo(_), PlanRole::Fallback) => {
                    // Re-enter the chain at the step this anchor stands for.
                    let node = graph.node(anchor).map_err(|e| e.to_string())?;
                    let j = (0..=s.min(k)).rev().find(|&j| {
                        let step = &chain.steps()[j];
                        step.layer == node.layer && !step.is_attribute_step() && label_fits(step, &node.label)
                    });
                    if let Some(j) = j {
                        bindings[j] = Some(anchor);
                        for b in bindings.iter_mut().skip(j + 1) {
                            *b = None;
                        }
                        k = (j + 1).min(s);
                        swept.clear();
                        phase.clear();
                    }
                }
                _ => {}
            }
        }
        trace.status = EpisodeStatus::Failed;
        trace.error = Some(format!("plan budget of {} exhausted", trace.max_plans));
        Ok(())
    }
}

fn status_of(answer: &str) -> EpisodeStatus {
    if answer == NOT_FOUND {
        EpisodeStatus::NotFound
    } else {
        EpisodeStatus::Answered
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOME: &str = include_str!("../fixtures/home_world.json");
    const BOOK_Q: &str = "What is the title of the open book on the table in the living room?";

    fn world() -> WorldTruth {
        WorldTruth::from_json(HOME, "home").unwrap()
    }

    #[test]
    fn book_title_episode() {
        let w = world();
        let tr = Agent::default().run_episode(&BOOK_Q.into(), &w);
        assert_eq!(tr.status, EpisodeStatus::Answered, "{tr:#?}");
        assert_eq!(tr.answer, "The Little Prince");
        let moves: Vec<String> = tr.events.iter().map(|e| e.plan.to_string()).collect();
        assert_eq!(moves[..3], ["MoveTo(living room)", "MoveTo(coffee table)", "MoveTo(book)"]);
        assert!(tr.plans() <= tr.max_plans);
        assert_eq!(tr.steps, 3);
    }

    #[test]
    fn remote_attribute_is_read_from_the_room() {
        let w = world();
        let tr = Agent::default().run_episode(&"What color is the sofa in the living room?".into(), &w);
        assert_eq!(tr.answer, "gray");
        assert_eq!(tr.steps, 1);
    }

    #[test]
    fn second_desk_is_found_by_fallback() {
        let w = world();
        let tr = Agent::default().run_episode(&"What brand is the laptop on the desk in the living room?".into(), &w);
        assert_eq!(tr.answer, "lenovo", "{}", tr.to_jsonl());
        assert!(tr.events.iter().any(|e| e.source == PlanSource::Fallback));
    }

    #[test]
    fn room_of_a_big_object_needs_no_moves() {
        let w = world();
        let tr = Agent::default().run_episode(&"What room is the fridge in?".into(), &w);
        assert_eq!((tr.answer.as_str(), tr.steps, tr.events.len()), ("kitchen", 0, 0));
    }

    #[test]
    fn counts_and_existence() {
        let w = world();
        let a = Agent::default();
        assert_eq!(a.run_episode(&"How many desks are there in the living room?".into(), &w).answer, "2");
        assert_eq!(a.run_episode(&"Is there a piano in the kitchen?".into(), &w).answer, "no");
        assert_eq!(a.run_episode(&"Is there a cup on the dining table?".into(), &w).answer, "yes");
        assert_eq!(a.run_episode(&"How many books are in the living room?".into(), &w).answer, "2");
    }

    #[test]
    fn relation_queries() {
        let w = world();
        let a = Agent::default();
        let tr = a.run_episode(&"What is on the coffee table?".into(), &w);
        assert_eq!(tr.answer, "book, potted plant, book", "{}", tr.to_jsonl());
    }

    #[test]
    fn small_object_room_query_searches() {
        let w = world();
        let tr = Agent::default().run_episode(&"What room is the bag in?".into(), &w);
        assert_eq!(tr.answer, "bedroom", "{}", tr.to_jsonl());
    }

    #[test]
    fn unknown_object_ends_not_found_within_budget() {
        let w = world();
        let tr = Agent::default().run_episode(&"What color is the piano in the living room?".into(), &w);
        assert_eq!(tr.status, EpisodeStatus::NotFound);
        assert!(tr.plans() <= tr.max_plans);
    }

    #[test]
    fn unparsable_question_fails() {
        let w = world();
        let tr = Agent::default().run_episode(&"Tell me a joke".into(), &w);
        assert_eq!(tr.status, EpisodeStatus::Failed);
        assert!(tr.error.unwrap().contains("no parser backend"));
    }

    #[test]
    fn trace_jsonl_shape() {
        let w = world();
        let tr = Agent::default().run_episode(&BOOK_Q.into(), &w);
        let lines: Vec<serde_json::Value> = tr.to_jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert!(lines[0].get("header").is_some());
        assert_eq!(lines.len(), tr.events.len() + 2);
        assert_eq!(lines.last().unwrap()["final"]["answer"], "The Little Prince");
    }

    #[test]
    fn episodes_are_deterministic() {
        let w = world();
        let a = Agent::default();
        let mut x = a.run_episode(&BOOK_Q.into(), &w);
        let mut y = a.run_episode(&BOOK_Q.into(), &w);
        x.wall_ms = 0;
        y.wall_ms = 0;
        assert_eq!(x, y);
    }
}
