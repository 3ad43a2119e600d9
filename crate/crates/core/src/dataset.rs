//! Question/answer corpora: a seeded world generator, template
//! instantiation with gold answers from an exhaustive world-truth oracle,
//! and the JSON Lines file format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::WorldTruth;
use crate::language_parsing::{GoldAnnotation, Question};
use crate::llm_planner::NOT_FOUND;
use crate::pattern::{parse_pattern_string, PatternChain, TargetKind};
use crate::scene_graph::labels;
use crate::scene_graph::{
    BigObjectEntry, EdgeEntry, FloorEntry, LayerId, NodeId, Relation, RoomEntry, SceneGraph, SmallObjectEntry, WorldFile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Template,
    MultiStep,
    SmallObject,
    People,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Template, Category::MultiStep, Category::SmallObject, Category::People];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Template => "template",
            Category::MultiStep => "multi_step",
            Category::SmallObject => "small_object",
            Category::People => "people",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "template" => Ok(Category::Template),
            "multi_step" | "multi" | "multi-step" => Ok(Category::MultiStep),
            "small_object" | "small" | "small-object" => Ok(Category::SmallObject),
            "people" | "person" => Ok(Category::People),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    pub category: Category,
    pub gold_answer: String,
    pub gold_pattern: String,
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
    pub world_id: String,
}

impl QARecord {
    /// The question with its gold parse attached.
    pub fn to_question(&self) -> Question {
        Question::new(&self.question).with_gold(GoldAnnotation { pattern: self.gold_pattern.clone(), slots: self.slots.clone() })
    }
}

// ---- oracle ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleAnswer {
    Unique(String),
    /// Entities matching the question disagree on the answer.
    Ambiguous,
    /// Nothing in the world matches the question.
    Missing,
}

fn truth_candidates(g: &SceneGraph, step: &crate::pattern::SubGoal, scope: Option<NodeId>) -> Vec<NodeId> {
    g.layer_nodes(step.layer)
        .filter(|n| step.label.as_deref().is_none_or(|l| labels::matches(l, &n.label)))
        .filter(|n| scope.is_none_or(|s| g.is_ancestor_or_self(s, n.id)))
        .filter(|n| match step.constraint_pair() {
            Some((k, v)) => n.attributes.get(k).is_some_and(|x| x.eq_ignore_ascii_case(v)),
            None => true,
        })
        .map(|n| n.id)
        .collect()
}

/// Nodes that can bind step `upto` when every earlier step is bound too.
fn bind(g: &SceneGraph, chain: &PatternChain, upto: usize) -> Vec<NodeId> {
    let mut frontier: Vec<Option<NodeId>> = vec![None];
    for step in &chain.steps()[..=upto] {
        let mut next: Vec<NodeId> = frontier.iter().flat_map(|scope| truth_candidates(g, step, *scope)).collect();
        next.sort();
        next.dedup();
        frontier = next.into_iter().map(Some).collect();
    }
    frontier.into_iter().flatten().collect()
}

fn unique(values: impl IntoIterator<Item = Option<String>>) -> OracleAnswer {
    let set: BTreeSet<Option<String>> = values.into_iter().collect();
    match set.len() {
        0 => OracleAnswer::Missing,
        1 => match set.into_iter().next().flatten() {
            Some(v) => OracleAnswer::Unique(v),
            None => OracleAnswer::Missing,
        },
        _ => OracleAnswer::Ambiguous,
    }
}

/// Answers a chain by exhaustive queries over the world truth.
pub fn oracle_answer(world: &WorldTruth, chain: &PatternChain) -> OracleAnswer {
    let g = world.graph();
    let s = chain.subject_index();
    let target = chain.target();
    let scopes = || -> Vec<Option<NodeId>> {
        if s == 0 {
            vec![None]
        } else {
            bind(g, chain, s - 1).into_iter().map(Some).collect()
        }
    };
    match chain.target_kind() {
        TargetKind::AttributeQuery => {
            let subjects = bind(g, chain, s);
            let name = target.attribute_name();
            unique(subjects.iter().map(|id| {
                let attrs = &g.node(*id).expect("bound").attributes;
                match name {
                    Some(n) => attrs.get(n).cloned(),
                    None => attrs.values().next().cloned(),
                }
            }))
        }
        TargetKind::RoomQuery => unique(bind(g, chain, s).iter().map(|id| {
            let node = g.node(*id).expect("bound");
            if node.layer == LayerId::Room {
                Some(node.label.clone())
            } else {
                g.room_of(*id).ok().map(|r| r.label.clone())
            }
        })),
        TargetKind::CountQuery | TargetKind::ExistenceQuery => {
            let scopes = scopes();
            if scopes.is_empty() {
                return OracleAnswer::Missing;
            }
            let exists = chain.target_kind() == TargetKind::ExistenceQuery;
            unique(scopes.into_iter().map(|scope| {
                let n = truth_candidates(g, target, scope).len();
                Some(if exists { if n > 0 { "yes".into() } else { "no".into() } } else { n.to_string() })
            }))
        }
        TargetKind::ObjectQuery => {
            let Some(rel) = target.relation else {
                return unique(bind(g, chain, s).iter().map(|id| g.node(*id).ok().map(|n| n.label.clone())));
            };
            if s == 0 {
                return OracleAnswer::Missing;
            }
            let refs = bind(g, chain, s - 1);
            unique(refs.iter().map(|r| {
                let names: Vec<String> = related(g, *r, rel, target.layer).into_iter().map(|id| g.node(id).expect("node").label.clone()).collect();
                Some(if names.is_empty() { "nothing".into() } else { names.join(", ") })
            }))
        }
    }
}

/// Nodes standing in `rel` to `reference`, in their parent's child order.
fn related(g: &SceneGraph, reference: NodeId, rel: Relation, layer: LayerId) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = g
        .child_ids(reference)
        .iter()
        .copied()
        .filter(|c| {
            let n = g.node(*c).expect("child");
            n.layer == layer && n.relation == Some(rel)
        })
        .collect();
    if let Some(parent) = g.parent_id(reference) {
        for &c in g.child_ids(parent) {
            let n = g.node(c).expect("child");
            let linked = g.spatial_edges().iter().any(|e| {
                (e.a == c && e.b == reference && e.relation == rel)
                    || (e.b == c && e.a == reference && e.relation.inverse() == Some(rel))
            });
            if linked && n.layer == layer && !out.contains(&c) {
                out.push(c);
            }
        }
    }
    out
}

// ---- templates ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    RoomOfBig,
    CountBigInRoom,
    AttrBig,
    ExistsBigInRoom,
    CountSmallInRoom,
    AttrSmallOnConstrainedBig,
    AttrConstrainedSmall,
    CountConstrainedSmall,
    AttrSmall,
    CountSmallOnBig,
    ExistsSmallOnBig,
    RoomOfSmall,
    RoomOfSmallOn,
    OnBig,
    PersonActivity,
    PersonShirtActivity,
    PersonRoom,
    CountPeople,
    ExistsPerson,
}

/// A question form with `${slot}` markers in both the text and the pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub category: Category,
    pub kind: TemplateKind,
    /// Fixed queried attribute, for kinds that do not enumerate one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    pub text: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateSet {
    pub templates: Vec<QuestionTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        serde_json::from_str(include_str!("../templates/default.json")).expect("bundled templates parse")
    }
}

impl TemplateSet {
    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        serde_json::from_str(text).map_err(|e| DatasetError::Templates(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DatasetError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }
}

fn fill(template: &str, slots: &BTreeMap<String, String>) -> String {
    let mut out = template.to_string();
    for (k, v) in slots {
        out = out.replace(&format!("${{{k}}}"), v);
    }
    out
}

fn fix_articles(text: &str) -> String {
    let mut words: Vec<String> = text.split(' ').map(str::to_string).collect();
    for i in 0..words.len().saturating_sub(1) {
        if words[i].eq_ignore_ascii_case("a") && words[i + 1].starts_with(['a', 'e', 'i', 'o', 'u']) {
            words[i] = format!("{}n", words[i]);
        }
    }
    words.join(" ")
}

/// Values a question may use as an adjective; they must be words the
/// template parser reads back as constraints.
const ADJECTIVE_VALUES: &[&str] = &[
    "open", "closed", "empty", "full", "red", "blue", "green", "yellow", "black", "white", "gray", "brown", "orange", "purple",
    "pink", "silver",
];

const ABSENT_BIG: &[&str] = &["piano", "bathtub"];
const ABSENT_SMALL: &[&str] = &["cat", "teddy bear"];

type Slots = BTreeMap<String, String>;

fn slots(pairs: &[(&str, &str)]) -> Slots {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

struct Index<'g> {
    g: &'g SceneGraph,
}

impl<'g> Index<'g> {
    fn labels_in(&self, scope: NodeId, layer: LayerId) -> BTreeSet<String> {
        self.g.descendants(scope).into_iter().filter_map(|d| self.g.node(d).ok()).filter(|n| n.layer == layer).map(|n| n.label.clone()).collect()
    }

    fn labels(&self, layer: LayerId) -> BTreeSet<String> {
        self.g.layer_nodes(layer).map(|n| n.label.clone()).collect()
    }

    fn rooms(&self) -> Vec<&'g crate::scene_graph::SceneNode> {
        self.g.layer_nodes(LayerId::Room).collect()
    }

    fn children(&self, id: NodeId) -> Vec<&'g crate::scene_graph::SceneNode> {
        self.g.child_ids(id).iter().filter_map(|c| self.g.node(*c).ok()).collect()
    }
}

/// Every slot assignment a template kind can take in this world.
fn instantiations(t: &QuestionTemplate, g: &SceneGraph) -> Vec<Slots> {
    let ix = Index { g };
    let mut out = Vec::new();
    let person = "person";
    match t.kind {
        TemplateKind::RoomOfBig => {
            for l in ix.labels(LayerId::BigObject) {
                out.push(slots(&[("object", &l)]));
            }
        }
        TemplateKind::CountBigInRoom | TemplateKind::AttrBig => {
            for r in ix.rooms() {
                for l in ix.labels_in(r.id, LayerId::BigObject) {
                    out.push(slots(&[("room", &r.label), ("object", &l)]));
                }
            }
        }
        TemplateKind::ExistsBigInRoom => {
            let mut all = ix.labels(LayerId::BigObject);
            all.extend(ABSENT_BIG.iter().map(|s| s.to_string()));
            for r in ix.rooms() {
                for l in &all {
                    out.push(slots(&[("room", &r.label), ("object", l)]));
                }
            }
        }
        TemplateKind::CountSmallInRoom => {
            for r in ix.rooms() {
                for l in ix.labels_in(r.id, LayerId::SmallObject).into_iter().filter(|l| l != person) {
                    out.push(slots(&[("room", &r.label), ("object", &l)]));
                }
            }
        }
        TemplateKind::AttrSmallOnConstrainedBig => {
            let attr = t.attribute.clone().unwrap_or_else(|| "color".into());
            for r in ix.rooms() {
                for b in ix.children(r.id) {
                    let Some(value) = b.attributes.get("color").filter(|v| ADJECTIVE_VALUES.contains(&v.as_str())) else { continue };
                    for s in ix.children(b.id).into_iter().filter(|s| s.label != person && s.attributes.contains_key(&attr)) {
                        out.push(slots(&[
                            ("room", &r.label),
                            ("container", &b.label),
                            ("container_attribute", "color"),
                            ("container_value", value),
                            ("object", &s.label),
                        ]));
                    }
                }
            }
        }
        TemplateKind::AttrConstrainedSmall | TemplateKind::CountConstrainedSmall => {
            for r in ix.rooms() {
                for b in ix.children(r.id) {
                    for s in ix.children(b.id).into_iter().filter(|s| s.label != person) {
                        for (ck, cv) in s.attributes.iter().filter(|(k, v)| (*k == "state" || *k == "color") && ADJECTIVE_VALUES.contains(&v.as_str())) {
                            let base = [("room", r.label.as_str()), ("container", &b.label), ("object", &s.label), ("constraint", ck), ("value", cv)];
                            if t.kind == TemplateKind::CountConstrainedSmall {
                                out.push(slots(&base));
                                continue;
                            }
                            for a in s.attributes.keys().filter(|a| *a != ck) {
                                let mut sl = slots(&base);
                                sl.insert("attribute".into(), a.clone());
                                out.push(sl);
                            }
                        }
                    }
                }
            }
        }
        TemplateKind::AttrSmall => {
            for r in ix.rooms() {
                for b in ix.children(r.id) {
                    for s in ix.children(b.id).into_iter().filter(|s| s.label != person) {
                        for a in s.attributes.keys() {
                            out.push(slots(&[("room", &r.label), ("container", &b.label), ("object", &s.label), ("attribute", a)]));
                        }
                    }
                }
            }
        }
        TemplateKind::CountSmallOnBig | TemplateKind::ExistsSmallOnBig => {
            let mut all: BTreeSet<String> = ix.labels(LayerId::SmallObject).into_iter().filter(|l| l != person).collect();
            if t.kind == TemplateKind::ExistsSmallOnBig {
                all.extend(ABSENT_SMALL.iter().map(|s| s.to_string()));
            }
            for r in ix.rooms() {
                for b in ix.children(r.id) {
                    let here: BTreeSet<String> = ix.children(b.id).iter().map(|s| s.label.clone()).collect();
                    let labels: &BTreeSet<String> = if t.kind == TemplateKind::ExistsSmallOnBig { &all } else { &here };
                    for l in labels.iter().filter(|l| l.as_str() != person) {
                        out.push(slots(&[("room", &r.label), ("container", &b.label), ("object", l)]));
                    }
                }
            }
        }
        TemplateKind::RoomOfSmall => {
            for l in ix.labels(LayerId::SmallObject).into_iter().filter(|l| l != person) {
                out.push(slots(&[("object", &l)]));
            }
        }
        TemplateKind::RoomOfSmallOn => {
            for b in g.layer_nodes(LayerId::BigObject) {
                // Containers named without a room must be unique in the world.
                if g.find_nodes(&b.label, Some(LayerId::BigObject)).len() != 1 {
                    continue;
                }
                for s in ix.children(b.id).into_iter().filter(|s| s.label != person) {
                    out.push(slots(&[("container", &b.label), ("object", &s.label)]));
                }
            }
        }
        TemplateKind::OnBig => {
            for r in ix.rooms() {
                for b in ix.children(r.id).into_iter().filter(|b| !g.child_ids(b.id).is_empty()) {
                    out.push(slots(&[("room", &r.label), ("container", &b.label)]));
                }
            }
        }
        TemplateKind::PersonActivity | TemplateKind::ExistsPerson => {
            for r in ix.rooms() {
                for b in ix.children(r.id) {
                    let has = ix.children(b.id).iter().any(|s| s.label == person);
                    if has || t.kind == TemplateKind::ExistsPerson {
                        out.push(slots(&[("room", &r.label), ("container", &b.label)]));
                    }
                }
            }
        }
        TemplateKind::PersonShirtActivity => {
            for r in ix.rooms() {
                for b in ix.children(r.id) {
                    for p in ix.children(b.id).into_iter().filter(|s| s.label == person) {
                        if let Some(shirt) = p.attributes.get("shirt") {
                            out.push(slots(&[("room", &r.label), ("container", &b.label), ("value", shirt)]));
                        }
                    }
                }
            }
        }
        TemplateKind::PersonRoom => {
            let shirts: BTreeSet<String> =
                g.layer_nodes(LayerId::SmallObject).filter(|n| n.label == person).filter_map(|n| n.attributes.get("shirt").cloned()).collect();
            for s in shirts {
                out.push(slots(&[("value", &s)]));
            }
        }
        TemplateKind::CountPeople => {
            for r in ix.rooms() {
                if !ix.labels_in(r.id, LayerId::SmallObject).contains(person) {
                    continue;
                }
                out.push(slots(&[("room", &r.label)]));
            }
        }
    }
    if let Some(attr) = &t.attribute {
        for s in &mut out {
            s.entry("attribute".into()).or_insert_with(|| attr.clone());
        }
    }
    if t.category == Category::People {
        for s in &mut out {
            s.insert("object".into(), person.into());
        }
    }
    for s in &mut out {
        if let Some(o) = s.get("object").cloned() {
            s.insert("objects".into(), labels::pluralize(&o));
        }
    }
    out
}

/// Single labeled step naming exactly one entity in the world.
pub fn is_overly_simple(chain: &PatternChain, g: &SceneGraph) -> bool {
    let labeled: Vec<_> = chain.steps().iter().filter(|s| s.label.is_some()).collect();
    match labeled.as_slice() {
        [only] => g.find_nodes(only.label.as_deref().unwrap_or_default(), Some(only.layer)).len() == 1,
        _ => false,
    }
}

/// Records wanted per category.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts(pub BTreeMap<Category, usize>);

impl CategoryCounts {
    pub fn uniform(n: usize) -> Self {
        Self(Category::ALL.iter().map(|c| (*c, n)).collect())
    }

    pub fn get(&self, c: Category) -> usize {
        self.0.get(&c).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }
}

impl FromStr for CategoryCounts {
    type Err = String;

    /// `template=5,multi=3,small=2,people=1`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut map = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected category=count, got `{part}`"))?;
            let n: usize = v.trim().parse().map_err(|_| format!("bad count `{v}`"))?;
            map.insert(k.parse::<Category>()?, n);
        }
        Ok(Self(map))
    }
}

/// Instantiates templates over a world. Candidates whose answer is
/// ambiguous, missing, or trivially simple are dropped; each category is
/// then sampled down to its count with a seeded shuffle.
pub fn generate(world: &WorldTruth, templates: &TemplateSet, seed: u64, counts: &CategoryCounts) -> Vec<QARecord> {
    let g = world.graph();
    let mut pool: BTreeMap<Category, Vec<(String, String, String, Slots)>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for t in &templates.templates {
        if counts.get(t.category) == 0 {
            continue;
        }
        for sl in instantiations(t, g) {
            let question = fix_articles(&fill(&t.text, &sl));
            let pattern = fill(&t.pattern, &sl);
            if question.contains("${") || pattern.contains("${") || !seen.insert(question.clone()) {
                continue;
            }
            let Ok(chain) = parse_pattern_string(&pattern) else { continue };
            if is_overly_simple(&chain, g) {
                continue;
            }
            let OracleAnswer::Unique(answer) = oracle_answer(world, &chain) else { continue };
            let mut named = sl.clone();
            named.remove("objects");
            pool.entry(t.category).or_default().push((question, answer, chain.render(), named));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for category in Category::ALL {
        let Some(mut items) = pool.remove(&category) else { continue };
        items.shuffle(&mut rng);
        for (i, (question, answer, pattern, slots)) in items.into_iter().take(counts.get(category)).enumerate() {
            records.push(QARecord {
                id: format!("{}-{}-{:04}", world.id(), category, i),
                question,
                category,
                gold_answer: answer,
                gold_pattern: pattern,
                slots,
                world_id: world.id().to_string(),
            });
        }
    }
    records
}

// ---- worlds ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldGenOptions {
    pub min_rooms: usize,
    pub max_rooms: usize,
    pub max_big_objects: usize,
    pub people: bool,
    /// Chance a small object is hidden from its big object's view.
    pub occlusion_rate: f64,
    /// Chance a detail attribute (title, brand, activity, material) is close range only.
    pub close_only_rate: f64,
}

impl Default for WorldGenOptions {
    fn default() -> Self {
        Self { min_rooms: 2, max_rooms: 4, max_big_objects: 12, people: true, occlusion_rate: 0.0, close_only_rate: 0.0 }
    }
}

impl WorldGenOptions {
    pub fn fully_visible(&self) -> bool {
        self.occlusion_rate == 0.0 && self.close_only_rate == 0.0
    }
}

const ROOM_CONTENTS: &[(&str, &[&str])] = &[
    ("living room", &["sofa", "coffee table", "armchair", "tv stand", "bookshelf", "desk"]),
    ("kitchen", &["fridge", "dining table", "counter", "stove", "cabinet"]),
    ("bedroom", &["bed", "wardrobe", "nightstand", "desk", "dresser"]),
    ("study", &["desk", "bookshelf", "chair", "cabinet"]),
    ("bathroom", &["sink", "cabinet", "toilet"]),
    ("dining room", &["dining table", "sideboard", "chair"]),
];

fn small_objects_for(big: &str) -> &'static [&'static str] {
    match big {
        "sofa" | "armchair" | "bed" | "chair" => &["cushion", "pillow", "bag", "book", "phone", "blanket"],
        "coffee table" | "dining table" | "desk" | "counter" | "nightstand" => {
            &["book", "cup", "laptop", "phone", "vase", "plate", "bowl", "potted plant", "lamp", "mug", "key"]
        }
        "bookshelf" => &["book", "vase", "clock"],
        _ => &["towel", "bottle", "box", "clock", "kettle"],
    }
}

const COLORS: &[&str] = &["red", "blue", "green", "yellow", "black", "white", "gray", "brown", "orange", "purple", "pink", "silver"];
const MATERIALS: &[&str] = &["wood", "metal", "leather", "fabric", "glass", "plastic", "marble"];
const TITLES: &[&str] = &["The Little Prince", "Dune", "Emma", "Ulysses", "Beloved", "Hamlet", "Walden", "Persuasion"];
const BRANDS: &[&str] = &["apple", "samsung", "lenovo", "dell", "sony", "nokia"];
const ACTIVITIES: &[&str] = &["reading", "sleeping", "eating", "typing", "watching tv", "talking on the phone"];
const PERSON_SPOTS: &[&str] = &["sofa", "armchair", "bed", "chair", "desk", "dining table"];

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty table")
}

fn small_attributes(rng: &mut ChaCha8Rng, label: &str) -> BTreeMap<String, String> {
    let mut a = BTreeMap::new();
    a.insert("color".to_string(), pick(rng, COLORS).to_string());
    match label {
        "book" => {
            a.insert("state".into(), pick(rng, &["open", "closed"]).into());
            a.insert("title".into(), pick(rng, TITLES).into());
        }
        "laptop" => {
            a.insert("state".into(), pick(rng, &["open", "closed"]).into());
            a.insert("brand".into(), pick(rng, BRANDS).into());
        }
        "phone" => {
            a.insert("brand".into(), pick(rng, BRANDS).into());
        }
        "cup" | "mug" | "bowl" | "bottle" => {
            a.insert("state".into(), pick(rng, &["empty", "full"]).into());
        }
        _ => {}
    }
    a
}

/// A random but valid truth world. Same seed, same world.
pub fn generate_world(id: &str, seed: u64, opts: &WorldGenOptions) -> WorldFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rooms = rng.gen_range(opts.min_rooms.max(1)..=opts.max_rooms.max(opts.min_rooms.max(1)));
    let mut room_pool: Vec<&(&str, &[&str])> = ROOM_CONTENTS.iter().collect();
    room_pool.shuffle(&mut rng);
    let per_room_cap = (opts.max_big_objects / n_rooms).max(1);
    let mut rooms = Vec::new();
    let mut edges = Vec::new();
    let mut people = 0;
    let detail = ["title", "brand", "activity", "material"];
    for (ri, (room_label, furniture)) in room_pool.into_iter().take(n_rooms).enumerate() {
        let origin = [10.0 * (ri % 2) as f64 + 5.0, 10.0 * (ri / 2) as f64 + 5.0];
        let n_big = rng.gen_range(1..=per_room_cap.min(4));
        let mut bigs = Vec::new();
        for bi in 0..n_big {
            let label = pick(&mut rng, furniture);
            let angle = bi as f64 * 1.3;
            let position = [origin[0] + 2.5 * angle.cos(), origin[1] + 2.5 * angle.sin()];
            let mut attributes = BTreeMap::new();
            attributes.insert("color".to_string(), pick(&mut rng, COLORS).to_string());
            attributes.insert("material".to_string(), pick(&mut rng, MATERIALS).to_string());
            let key = format!("r{ri}_b{bi}");
            let n_small = rng.gen_range(0..=3);
            let mut smalls = Vec::new();
            for si in 0..n_small {
                let label = pick(&mut rng, small_objects_for(label));
                let attributes = small_attributes(&mut rng, label);
                smalls.push(SmallObjectEntry {
                    id: Some(format!("{key}_s{si}")),
                    label: label.to_string(),
                    attributes,
                    close_only: Vec::new(),
                    occluded_from_parent: false,
                    relation: Some(Relation::On),
                    position: None,
                    alias: None,
                });
            }
            if opts.people && PERSON_SPOTS.contains(&label) && rng.gen_bool(0.4) {
                let mut attributes = BTreeMap::new();
                attributes.insert("shirt".to_string(), pick(&mut rng, COLORS).to_string());
                attributes.insert("activity".to_string(), pick(&mut rng, ACTIVITIES).to_string());
                smalls.push(SmallObjectEntry {
                    id: Some(format!("{key}_p{people}")),
                    label: "person".into(),
                    attributes,
                    close_only: Vec::new(),
                    occluded_from_parent: false,
                    relation: Some(Relation::On),
                    position: None,
                    alias: None,
                });
                people += 1;
            }
            if bi > 0 {
                edges.push(EdgeEntry { a: format!("r{ri}_b{}", bi - 1), b: key.clone(), relation: Relation::NextTo });
            }
            bigs.push(BigObjectEntry {
                id: key,
                label: label.to_string(),
                layer: None,
                position,
                attributes,
                close_only: Vec::new(),
                alias: None,
                small_objects: smalls,
            });
        }
        rooms.push(RoomEntry { id: format!("r{ri}"), label: room_label.to_string(), layer: None, position: origin, big_objects: bigs });
    }
    // Perception flags are drawn after the layout so the same seed gives the
    // same furniture with and without them.
    for room in &mut rooms {
        for big in &mut room.big_objects {
            if opts.close_only_rate > 0.0 {
                big.close_only = big.attributes.keys().filter(|k| detail.contains(&k.as_str()) && rng.gen_bool(opts.close_only_rate)).cloned().collect();
            }
            for small in &mut big.small_objects {
                if opts.close_only_rate > 0.0 {
                    small.close_only =
                        small.attributes.keys().filter(|k| detail.contains(&k.as_str()) && rng.gen_bool(opts.close_only_rate)).cloned().collect();
                }
                if opts.occlusion_rate > 0.0 {
                    small.occluded_from_parent = rng.gen_bool(opts.occlusion_rate);
                }
            }
        }
    }
    WorldFile {
        id: Some(id.to_string()),
        floors: vec![FloorEntry { id: "floor_1".into(), label: None, layer: None, position: Some([0.0, 0.0]), rooms, big_objects: Vec::new() }],
        spatial_edges: edges,
        entrance: None,
    }
}

// ---- files ----

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("record {id}: invalid gold pattern: {message}")]
    GoldPattern { id: String, message: String },
    #[error("templates: {0}")]
    Templates(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub worlds: Vec<String>,
}

impl Default for DatasetHeader {
    fn default() -> Self {
        Self { format: "eqa-qa".into(), version: 1, seed: None, worlds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<QARecord>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: DatasetHeader,
}

impl Dataset {
    pub fn new(records: Vec<QARecord>) -> Self {
        let worlds: BTreeSet<String> = records.iter().map(|r| r.world_id.clone()).collect();
        Self { header: DatasetHeader { worlds: worlds.into_iter().collect(), ..DatasetHeader::default() }, records }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.header.seed = Some(seed);
        self
    }

    /// Header line, then one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&HeaderLine { header: self.header.clone() }).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Reads records; the header line is optional. Blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut ds = Dataset::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| DatasetError::Malformed { line: i + 1, message: e.to_string() })?;
            if value.get("header").is_some() {
                let h: HeaderLine =
                    serde_json::from_value(value).map_err(|e| DatasetError::Malformed { line: i + 1, message: e.to_string() })?;
                ds.header = h.header;
                continue;
            }
            let r: QARecord = serde_json::from_value(value).map_err(|e| DatasetError::Malformed { line: i + 1, message: e.to_string() })?;
            parse_pattern_string(&r.gold_pattern).map_err(|e| DatasetError::GoldPattern { id: r.id.clone(), message: e.to_string() })?;
            ds.records.push(r);
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| DatasetError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DatasetError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_jsonl(&text)
    }
}

/// Answer the oracle gives for a stored record, for consistency checks.
pub fn recheck(world: &WorldTruth, record: &QARecord) -> OracleAnswer {
    match parse_pattern_string(&record.gold_pattern) {
        Ok(chain) => oracle_answer(world, &chain),
        Err(_) => OracleAnswer::Missing,
    }
}

pub fn is_not_found(answer: &str) -> bool {
    answer == NOT_FOUND
}
