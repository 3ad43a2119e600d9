//! Language-model planning helpers: perception class of an attribute,
//! subquestion wording, and the fallback plan when the rules are stuck.
//!
//! Every helper has a deterministic lookup mock so episodes run offline.

use std::collections::BTreeSet;

use serde::Deserialize;

use crate::environment::AgentPose;
use crate::llm_client::{extract_json_object, prompts, ChatClient, LlmError};
use crate::pattern::{PatternChain, SubGoal, TargetKind};
use crate::rule_planner::{label_fits, AttrPerceptionClass, MoveGoal, Plan, PlanKind, PlanRole};
use crate::scene_graph::{self, labels, LayerId, NodeId, SceneGraph, SceneNode};

/// Where planner text comes from.
#[derive(Debug, Clone, Default)]
pub enum PlannerBackend {
    #[default]
    LookupMock,
    Chat(ChatClient),
}

const REMOTE: &[&str] = &["color", "colour", "quantity", "existence", "location", "shape", "size", "shirt"];
const CLOSE_RANGE: &[&str] = &["material", "state", "title", "brand", "text", "activity", "texture", "content", "label"];

/// Mock classification: a fixed table; unknown attributes are treated as
/// close range, which can only cost extra steps, never a missed answer.
pub fn lookup_attribute_class(attribute: &str) -> AttrPerceptionClass {
    let a = labels::normalize(attribute);
    if REMOTE.contains(&a.as_str()) && !CLOSE_RANGE.contains(&a.as_str()) {
        AttrPerceptionClass::Remote
    } else {
        AttrPerceptionClass::CloseRange
    }
}

pub fn parse_attribute_class(reply: &str) -> Result<AttrPerceptionClass, String> {
    let word: String = reply.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase().replace(['-', '_', ' '], "");
    match word.as_str() {
        "remote" => Ok(AttrPerceptionClass::Remote),
        "closerange" | "close" => Ok(AttrPerceptionClass::CloseRange),
        _ => Err(format!("expected Remote or CloseRange, got `{}`", reply.trim())),
    }
}

impl PlannerBackend {
    pub fn classify_attribute(&self, attribute: &str, object: &str) -> Result<AttrPerceptionClass, LlmError> {
        match self {
            PlannerBackend::LookupMock => Ok(lookup_attribute_class(attribute)),
            PlannerBackend::Chat(client) => client.ask(
                &prompts::CLASSIFY_ATTRIBUTE,
                &[("attribute", attribute), ("object", object)],
                parse_attribute_class,
            ),
        }
    }

    /// Natural-language subquestion for the step the agent is about to perceive.
    pub fn simplify_question(&self, question: &str, chain: &PatternChain, step: usize, history: &[String]) -> Result<String, LlmError> {
        match self {
            PlannerBackend::LookupMock => Ok(template_subquestion(chain, step)),
            PlannerBackend::Chat(client) => {
                let pattern = chain.render();
                let step_text = chain.steps().get(step).map(step_text).unwrap_or_default();
                let history = history.join("\n");
                client.ask(
                    &prompts::SIMPLIFY_QUESTION,
                    &[("question", question), ("pattern", &pattern), ("step", &step_text), ("history", &history)],
                    |reply| {
                        let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
                        if line.is_empty() {
                            Err("empty subquestion".to_string())
                        } else {
                            Ok(line.to_string())
                        }
                    },
                )
            }
        }
    }

    /// A plan when the rule planner cannot make progress.
    pub fn fallback_plan(&self, ctx: &FallbackContext<'_>) -> Result<Plan, LlmError> {
        match self {
            PlannerBackend::LookupMock => Ok(mock_fallback(ctx)),
            PlannerBackend::Chat(client) => {
                let pattern = ctx.chain.render();
                let explored = ctx
                    .explored
                    .iter()
                    .filter_map(|id| ctx.graph.node(*id).ok())
                    .map(|n| n.label.as_str())
                    .collect::<Vec<_>>()
                    .join(", ");
                let history = ctx.history.join("\n");
                client.ask(
                    &prompts::FALLBACK_PLAN,
                    &[("question", ctx.question), ("pattern", &pattern), ("explored", &explored), ("history", &history)],
                    |reply| parse_fallback_reply(reply, ctx.t),
                )
            }
        }
    }
}

fn step_text(step: &SubGoal) -> String {
    step.to_string()
}

fn subject_phrase(step: &SubGoal) -> String {
    let label = step.label.clone().unwrap_or_else(|| "object".to_string());
    match step.constraint_pair() {
        Some((_, value)) => format!("{value} {label}"),
        None => label,
    }
}

/// Mock subquestion wording, one form per target kind.
pub fn template_subquestion(chain: &PatternChain, step: usize) -> String {
    let steps = chain.steps();
    let s = chain.subject_index().min(step.min(steps.len() - 1));
    let subject = subject_phrase(&steps[s]);
    match chain.target_kind() {
        TargetKind::AttributeQuery => {
            let attr = chain.target().attribute_name().unwrap_or("appearance");
            format!("What is the {attr} of the {subject}?")
        }
        TargetKind::ExistenceQuery => format!("Is there a {subject}?"),
        TargetKind::CountQuery => {
            let plural = labels::pluralize(&subject);
            format!("How many {plural} are there?")
        }
        TargetKind::RoomQuery => format!("What room is the {subject} in?"),
        TargetKind::ObjectQuery => match chain.target().relation {
            Some(rel) if s > 0 => format!("What is {} the {}?", rel.phrase(), subject_phrase(&steps[s - 1])),
            _ => format!("Where is the {subject}?"),
        },
    }
}

/// What the fallback planner sees.
#[derive(Debug, Clone, Copy)]
pub struct FallbackContext<'a> {
    pub question: &'a str,
    pub chain: &'a PatternChain,
    pub graph: &'a SceneGraph,
    pub pose: &'a AgentPose,
    pub explored: &'a BTreeSet<NodeId>,
    pub history: &'a [String],
    pub t: usize,
}

/// Whether the chain allows this node's label at its layer. A chain with no
/// step at that layer allows anything.
fn compatible(chain: &PatternChain, node: &SceneNode) -> bool {
    let at_layer: Vec<&SubGoal> = chain.steps().iter().filter(|s| s.layer == node.layer && !s.is_attribute_step()).collect();
    at_layer.is_empty() || at_layer.iter().any(|s| label_fits(s, &node.label))
}

/// Mock fallback: the nearest unexplored sibling whose label fits the
/// chain, then the same one level up; otherwise give up.
pub fn mock_fallback(ctx: &FallbackContext<'_>) -> Plan {
    let g = ctx.graph;
    let here = g.position(ctx.pose.anchor).unwrap_or([0.0, 0.0]);
    let mut level = Some(ctx.pose.anchor);
    while let Some(anchor) = level {
        let mut options: Vec<&SceneNode> = g
            .siblings(anchor)
            .into_iter()
            .filter(|id| !ctx.explored.contains(id))
            .filter_map(|id| g.node(id).ok())
            .filter(|n| compatible(ctx.chain, n))
            .collect();
        options.sort_by(|a, b| {
            let da = scene_graph::distance(here, g.position(a.id).unwrap_or(here));
            let db = scene_graph::distance(here, g.position(b.id).unwrap_or(here));
            da.total_cmp(&db).then(a.id.cmp(&b.id))
        });
        if let Some(next) = options.first() {
            return Plan::move_to(next, ctx.t, PlanRole::Fallback);
        }
        level = g.parent_id(anchor).filter(|p| g.node(*p).is_ok_and(|n| n.layer > LayerId::Floor));
    }
    Plan::new(PlanKind::Answer { value: NOT_FOUND.to_string() }, ctx.t).with_role(PlanRole::Fallback)
}

pub const NOT_FOUND: &str = "not found";

#[derive(Deserialize)]
#[serde(tag = "kind")]
enum Reply {
    MoveTo { goal: String, layer: Option<String> },
    Observe { content: String },
    Answer { value: String },
}

pub fn parse_fallback_reply(reply: &str, t: usize) -> Result<Plan, String> {
    let json = extract_json_object(reply).ok_or_else(|| "no JSON object in reply".to_string())?;
    let parsed: Reply = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let kind = match parsed {
        Reply::MoveTo { goal, layer } => {
            let layer = match layer {
                Some(l) => Some(
                    l.trim_start_matches(['V', 'v'])
                        .parse::<u8>()
                        .ok()
                        .and_then(LayerId::from_level)
                        .ok_or_else(|| format!("bad layer `{l}`"))?,
                ),
                None => None,
            };
            if goal.trim().is_empty() {
                return Err("empty MoveTo goal".into());
            }
            PlanKind::MoveTo(MoveGoal::Label { layer, label: labels::normalize(&goal) })
        }
        Reply::Observe { content } => PlanKind::Observe { content, focus: None },
        Reply::Answer { value } => PlanKind::Answer { value },
    };
    Ok(Plan::new(kind, t).with_role(PlanRole::Fallback))
}
