//! Question text to pattern chain.
//!
//! Backends are tried in order and the first that recognizes the question
//! wins: a gold annotation shipped with the question, a template grammar
//! covering the common question families, and a language model.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_client::{extract_json_object, prompts, ChatClient, LlmError};
use crate::pattern::{parse_pattern_string, PatternChain, PatternError, SubGoal, TargetKind};
use crate::scene_graph::labels::{self, Vocabulary};
use crate::scene_graph::{LayerId, Relation, SceneGraph};

/// Reference parse shipped with a dataset question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub pattern: String,
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldAnnotation>,
}

impl Question {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), gold: None }
    }

    pub fn with_gold(mut self, gold: GoldAnnotation) -> Self {
        self.gold = Some(gold);
        self
    }
}

impl From<&str> for Question {
    fn from(text: &str) -> Self {
        Question::new(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseSource {
    Gold,
    Template,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedQuestion {
    #[serde(with = "chain_text")]
    pub chain: PatternChain,
    pub slots: BTreeMap<String, String>,
    pub source: ParseSource,
}

mod chain_text {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(chain: &PatternChain, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&chain.render())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PatternChain, D::Error> {
        let text = String::deserialize(d)?;
        parse_pattern_string(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("no parser backend recognized `{question}`")]
    Unparsed { question: String },
    #[error("gold pattern is invalid: {0}")]
    Gold(#[source] PatternError),
    #[error("slots do not cover the chain: {0}")]
    Slots(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone)]
pub enum ParserBackend {
    Gold,
    Template,
    Llm(ChatClient),
}

impl ParserBackend {
    pub fn source(&self) -> ParseSource {
        match self {
            ParserBackend::Gold => ParseSource::Gold,
            ParserBackend::Template => ParseSource::Template,
            ParserBackend::Llm(_) => ParseSource::Llm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanguageParser {
    backends: Vec<ParserBackend>,
    vocabulary: Vocabulary,
}

impl Default for LanguageParser {
    /// Gold, then templates. Add an LLM backend with [`LanguageParser::with_llm`].
    fn default() -> Self {
        Self::new(vec![ParserBackend::Gold, ParserBackend::Template])
    }
}

impl LanguageParser {
    pub fn new(backends: Vec<ParserBackend>) -> Self {
        Self { backends, vocabulary: Vocabulary::default() }
    }

    pub fn with_llm(mut self, client: ChatClient) -> Self {
        self.backends.push(ParserBackend::Llm(client));
        self
    }

    pub fn with_vocabulary(mut self, vocabulary: Vocabulary) -> Self {
        self.vocabulary = vocabulary;
        self
    }

    pub fn backends(&self) -> &[ParserBackend] {
        &self.backends
    }

    /// Parses a question. With a graph, unknown object labels are looked up
    /// in it and layer alternatives are ordered by what the graph contains.
    pub fn parse(&self, question: &Question, graph: Option<&SceneGraph>) -> Result<ParsedQuestion, ParseError> {
        if question.text.trim().is_empty() {
            return Err(ParseError::EmptyQuestion);
        }
        for backend in &self.backends {
            let parsed = match backend {
                ParserBackend::Gold => match &question.gold {
                    Some(gold) => Some(parse_gold(gold)?),
                    None => None,
                },
                ParserBackend::Template => template_parse(&question.text, &self.vocabulary, graph),
                ParserBackend::Llm(client) => Some(llm_parse(client, &question.text)?),
            };
            if let Some(mut p) = parsed {
                if let Some(g) = graph {
                    p.chain = prefer_variant(p.chain, g);
                }
                return Ok(p);
            }
        }
        Err(ParseError::Unparsed { question: question.text.clone() })
    }
}

fn parse_gold(gold: &GoldAnnotation) -> Result<ParsedQuestion, ParseError> {
    let chain = parse_pattern_string(&gold.pattern).map_err(ParseError::Gold)?;
    let slots = if gold.slots.is_empty() { slots_for(&chain) } else { gold.slots.clone() };
    check_slots(&chain, &slots).map_err(ParseError::Slots)?;
    Ok(ParsedQuestion { chain, slots, source: ParseSource::Gold })
}

#[derive(Deserialize)]
struct LlmReply {
    pattern: String,
    #[serde(default)]
    slots: BTreeMap<String, String>,
}

fn llm_parse(client: &ChatClient, question: &str) -> Result<ParsedQuestion, LlmError> {
    client.ask(&prompts::PARSE_PATTERN, &[("question", question)], |reply| {
        let json = extract_json_object(reply).ok_or("no JSON object in reply")?;
        let r: LlmReply = serde_json::from_str(json).map_err(|e| e.to_string())?;
        let chain = parse_pattern_string(&r.pattern).map_err(|e| e.to_string())?;
        let slots = if r.slots.is_empty() { slots_for(&chain) } else { r.slots };
        check_slots(&chain, &slots)?;
        Ok(ParsedQuestion { chain, slots, source: ParseSource::Llm })
    })
}

/// Named slots for a chain: `room`, `container`, `object`, `attribute`,
/// `constraint`, `relation`; any further labeled steps use `step{i}`.
pub fn slots_for(chain: &PatternChain) -> BTreeMap<String, String> {
    let mut slots = BTreeMap::new();
    let s = chain.subject_index();
    for (i, step) in chain.steps().iter().enumerate() {
        if let Some(label) = &step.label {
            let role = if i == s {
                "object"
            } else if step.layer == LayerId::Room {
                "room"
            } else {
                "container"
            };
            let key = if slots.contains_key(role) { format!("step{i}") } else { role.to_string() };
            slots.insert(key, label.clone());
        }
        if let Some((n, v)) = step.constraint_pair() {
            slots.insert("constraint".into(), format!("{n}={v}"));
        }
        if let Some(r) = step.relation {
            slots.insert("relation".into(), r.as_str().to_string());
        }
    }
    if let Some(a) = chain.target().attribute_name() {
        slots.insert("attribute".into(), a.to_string());
    }
    slots
}

/// Every labeled step must have its label among the slot values.
pub fn check_slots(chain: &PatternChain, slots: &BTreeMap<String, String>) -> Result<(), String> {
    for step in chain.steps() {
        if let Some(label) = &step.label {
            if !slots.values().any(|v| labels::normalize(v) == labels::normalize(label)) {
                return Err(format!("no slot for `{label}`"));
            }
        }
    }
    Ok(())
}

/// Moves the first variant consistent with the prior graph to the front.
/// Small-object steps cannot be checked against a prior and always pass.
pub fn prefer_variant(chain: PatternChain, graph: &SceneGraph) -> PatternChain {
    if chain.alternatives().is_empty() {
        return chain;
    }
    let fits = |c: &PatternChain| {
        c.steps().iter().all(|s| match (&s.label, s.layer) {
            (Some(label), layer) if layer <= LayerId::BigObject => !graph.find_nodes(label, Some(layer)).is_empty(),
            _ => true,
        })
    };
    let variants: Vec<PatternChain> = chain.variants().map(|v| v.clone().with_alternatives(Vec::new())).collect();
    match variants.iter().position(fits) {
        Some(0) | None => chain,
        Some(i) => {
            let mut rest = variants.clone();
            let first = rest.remove(i);
            first.with_alternatives(rest)
        }
    }
}

// ---- template grammar ----

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

macro_rules! regex {
    ($pattern:expr) => {{
        static CELL: OnceLock<Regex> = OnceLock::new();
        re(&CELL, $pattern)
    }};
}

/// Adjectives that become attribute constraints.
const VALUE_LEXICON: &[(&str, &str, &str)] = &[
    ("open", "state", "open"),
    ("closed", "state", "closed"),
    ("asleep", "state", "asleep"),
    ("sleeping", "state", "asleep"),
    ("awake", "state", "awake"),
    ("empty", "state", "empty"),
    ("full", "state", "full"),
    ("broken", "state", "broken"),
    ("red", "color", "red"),
    ("blue", "color", "blue"),
    ("green", "color", "green"),
    ("yellow", "color", "yellow"),
    ("black", "color", "black"),
    ("white", "color", "white"),
    ("gray", "color", "gray"),
    ("grey", "color", "gray"),
    ("brown", "color", "brown"),
    ("orange", "color", "orange"),
    ("purple", "color", "purple"),
    ("pink", "color", "pink"),
    ("silver", "color", "silver"),
    ("wooden", "material", "wood"),
    ("leather", "material", "leather"),
    ("metal", "material", "metal"),
    ("plastic", "material", "plastic"),
];

fn attribute_name(word: &str) -> String {
    match word.trim() {
        "colour" => "color".into(),
        "brand name" => "brand".into(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    label: String,
    constraint: Option<(String, String)>,
}

fn parse_segment(text: &str) -> Option<Segment> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    let with = regex!(r"^(?P<label>.+?) (?:in|with|wearing) (?:a|an) (?P<value>[a-z]+) (?P<attr>[a-z]+)$");
    if let Some(c) = with.captures(text) {
        return Some(Segment {
            label: labels::normalize(&c["label"]),
            constraint: Some((c["attr"].to_string(), c["value"].to_string())),
        });
    }
    let words: Vec<&str> = text.split(' ').collect();
    if words.len() > 1 {
        if let Some((_, attr, value)) = VALUE_LEXICON.iter().find(|(w, _, _)| *w == words[0]) {
            return Some(Segment {
                label: labels::normalize(&words[1..].join(" ")),
                constraint: Some((attr.to_string(), value.to_string())),
            });
        }
    }
    if words.len() > 1 {
        if let Some((_, attr, value)) = VALUE_LEXICON.iter().find(|(w, _, _)| Some(w) == words.last()) {
            return Some(Segment {
                label: labels::normalize(&words[..words.len() - 1].join(" ")),
                constraint: Some((attr.to_string(), value.to_string())),
            });
        }
    }
    Some(Segment { label: labels::normalize(text), constraint: None })
}

/// Head noun phrase followed by its containers, innermost first.
fn parse_np(np: &str) -> Option<Vec<Segment>> {
    let connector = regex!(
        r"\s+(?:(?:is|are)\s+)?(?:(?:sitting|lying|sleeping|standing|placed|located|kept|resting|left)\s+)?(?:on top of|on|in|at|inside)\s+the\s+"
    );
    connector.split(np.trim()).map(parse_segment).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Attribute,
    Room,
    Count,
    Exists,
    Relation(Relation),
}

struct Frame<'a> {
    vocab: &'a Vocabulary,
    graph: Option<&'a SceneGraph>,
}

impl Frame<'_> {
    fn layer_of(&self, label: &str) -> Option<LayerId> {
        if let Some(l) = self.vocab.layer_of(label) {
            return Some(l);
        }
        let g = self.graph?;
        [LayerId::Room, LayerId::BigObject]
            .into_iter()
            .find(|l| !g.find_nodes(label, Some(*l)).is_empty())
    }
}

fn node_step(layer: LayerId, seg: &Segment) -> SubGoal {
    let step = SubGoal::node(layer, Some(&seg.label));
    match &seg.constraint {
        Some((n, v)) if layer >= LayerId::BigObject => step.with_constraint(n, v),
        _ => step,
    }
}

/// Builds the chain(s) for one family from the segmented noun phrase.
fn build(frame: &Frame<'_>, family: Family, attr: Option<&str>, segments: Vec<Segment>) -> Option<PatternChain> {
    let (head, outer) = segments.split_first()?;
    let mut room = None;
    let mut containers = Vec::new();
    for (i, seg) in outer.iter().enumerate() {
        match frame.layer_of(&seg.label) {
            Some(LayerId::Room) if i + 1 == outer.len() => room = Some(seg),
            Some(LayerId::SmallObject) | Some(LayerId::Floor) | Some(LayerId::Room) => return None,
            _ => containers.push(seg),
        }
    }
    if containers.len() > 1 {
        return None;
    }
    let head_layers: Vec<LayerId> = match (frame.layer_of(&head.label), containers.is_empty()) {
        (Some(LayerId::BigObject), false) => return None,
        (Some(LayerId::Room | LayerId::Floor), _) => return None,
        (Some(l), _) => vec![l],
        (None, false) => vec![LayerId::SmallObject],
        (None, true) => vec![LayerId::BigObject, LayerId::SmallObject],
    };
    let mut prefix = Vec::new();
    if family != Family::Room {
        if let Some(r) = room {
            prefix.push(node_step(LayerId::Room, r));
        }
    }
    if let Some(c) = containers.first() {
        prefix.push(node_step(LayerId::BigObject, c));
    }
    let forced = match family {
        Family::Count => Some(TargetKind::CountQuery),
        Family::Exists => Some(TargetKind::ExistenceQuery),
        _ => None,
    };
    let mut variants = Vec::new();
    for &layer in &head_layers {
        let mut steps = prefix.clone();
        steps.push(node_step(layer, head));
        match family {
            Family::Attribute => steps.push(SubGoal::attribute(layer, attr)),
            Family::Room => steps.push(SubGoal::node(LayerId::Room, None)),
            Family::Relation(rel) => {
                let targets: &[LayerId] = match (layer, rel) {
                    (LayerId::SmallObject, _) => &[LayerId::SmallObject],
                    (_, Relation::On) => &[LayerId::SmallObject, LayerId::BigObject],
                    _ => &[LayerId::BigObject, LayerId::SmallObject],
                };
                for &t in targets {
                    let mut s = steps.clone();
                    s.push(SubGoal::node(t, None).with_relation(rel));
                    variants.push(s);
                }
                continue;
            }
            Family::Count | Family::Exists => {}
        }
        variants.push(steps);
    }
    let mut chains = variants.into_iter().filter_map(|s| PatternChain::new(s, forced).ok());
    let primary = chains.next()?;
    Some(primary.with_alternatives(chains.collect()))
}

fn clean(text: &str) -> String {
    let lowered = text.to_lowercase();
    let trimmed = lowered.trim().trim_end_matches(['?', '.', '!']).trim();
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Template backend alone. Returns `None` when no family matches.
pub fn template_parse(text: &str, vocab: &Vocabulary, graph: Option<&SceneGraph>) -> Option<ParsedQuestion> {
    let q = clean(text);
    let frame = Frame { vocab, graph };
    let (family, attr, np): (Family, Option<String>, String) = if let Some(c) = regex!(
        r"^(?:in )?(?:what|which) room is (?:the|a|an) (?P<np>.+?)(?: located)?(?: in)?$"
    )
    .captures(&q)
    {
        (Family::Room, None, c["np"].to_string())
    } else if let Some(c) = regex!(r"^where is (?:the|a|an) (?P<np>.+)$").captures(&q) {
        (Family::Room, None, c["np"].to_string())
    } else if let Some(c) = regex!(r"^what is (?:the|a|an) (?P<np>.+) doing$").captures(&q) {
        (Family::Attribute, Some("activity".into()), c["np"].to_string())
    } else if let Some(c) =
        regex!(r"^what is (?P<rel>on top of|on|above|below|under|beneath|next to|beside|near) (?:the|a|an) (?P<np>.+)$")
            .captures(&q)
    {
        let rel = match &c["rel"] {
            "on top of" => Relation::On,
            other => Relation::parse(other)?,
        };
        (Family::Relation(rel), None, c["np"].to_string())
    } else if let Some(c) = regex!(r"^what is the (?P<attr>[a-z]+(?: name)?) of (?:the|a|an) (?P<np>.+)$").captures(&q) {
        (Family::Attribute, Some(attribute_name(&c["attr"])), c["np"].to_string())
    } else if let Some(c) = regex!(r"^what (?P<attr>[a-z]+) is (?:the|a|an) (?P<np>.+)$").captures(&q) {
        if &c["attr"] == "room" {
            return None;
        }
        (Family::Attribute, Some(attribute_name(&c["attr"])), c["np"].to_string())
    } else if let Some(c) = regex!(r"^how many (?P<rest>.+)$").captures(&q) {
        let verbs = regex!(r"\b(?:are there|is there|can you see|can be seen|are|is)\b");
        let rest = verbs.replace_all(&c["rest"], " ");
        (Family::Count, None, rest.split_whitespace().collect::<Vec<_>>().join(" "))
    } else {
        let c = regex!(r"^(?:is|are) there (?:a|an|any|some) (?P<np>.+)$").captures(&q)?;
        (Family::Exists, None, c["np"].to_string())
    };
    let segments = parse_np(&np)?;
    let chain = build(&frame, family, attr.as_deref(), segments)?;
    let slots = slots_for(&chain);
    Some(ParsedQuestion { chain, slots, source: ParseSource::Template })
}
