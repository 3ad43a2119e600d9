//! Standard pattern chains over the layered semantic space.
//!
//! Textual form, used in datasets and traces:
//!
//! ```text
//! chain  := [kind ":"] steps ("|" steps)*
//! steps  := step ("->" step)*
//! step   := ("V1".."V4" ["(A)"] | "A") ["[" label "]"] ["{" name "=" value "}"] ["<" relation ">"]
//! kind   := "count" | "exists"
//! ```
//!
//! `A[title]` is the queried attribute of the preceding object step.
//! `V4(A){state=open}` is an object step constrained by an attribute value.
//! `<on>` marks the spatial relation an object query asks about.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene_graph::{LayerId, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    ObjectQuery,
    AttributeQuery,
    RoomQuery,
    CountQuery,
    ExistenceQuery,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttrConstraint {
    /// The pattern marks the step as attribute-qualified without naming it.
    Unbound,
    Bound { name: String, value: String },
}

impl AttrConstraint {
    pub fn bound(name: &str, value: &str) -> Self {
        AttrConstraint::Bound { name: name.to_string(), value: value.to_string() }
    }

    pub fn pair(&self) -> Option<(&str, &str)> {
        match self {
            AttrConstraint::Bound { name, value } => Some((name, value)),
            AttrConstraint::Unbound => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubGoal {
    pub layer: LayerId,
    pub label: Option<String>,
    pub attribute_constraint: Option<AttrConstraint>,
    /// `Some` only on a final attribute step; the inner value is the
    /// attribute name when known.
    pub queried_attribute: Option<Option<String>>,
    pub relation: Option<Relation>,
}

impl SubGoal {
    pub fn node(layer: LayerId, label: Option<&str>) -> Self {
        SubGoal {
            layer,
            label: label.map(str::to_string),
            attribute_constraint: None,
            queried_attribute: None,
            relation: None,
        }
    }

    pub fn attribute(layer: LayerId, name: Option<&str>) -> Self {
        SubGoal {
            queried_attribute: Some(name.map(str::to_string)),
            ..SubGoal::node(layer, None)
        }
    }

    pub fn with_constraint(mut self, name: &str, value: &str) -> Self {
        self.attribute_constraint = Some(AttrConstraint::bound(name, value));
        self
    }

    pub fn with_relation(mut self, relation: Relation) -> Self {
        self.relation = Some(relation);
        self
    }

    pub fn is_attribute_step(&self) -> bool {
        self.queried_attribute.is_some()
    }

    pub fn attribute_name(&self) -> Option<&str> {
        self.queried_attribute.as_ref().and_then(|a| a.as_deref())
    }

    pub fn constraint_pair(&self) -> Option<(&str, &str)> {
        self.attribute_constraint.as_ref().and_then(AttrConstraint::pair)
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, slots: bool) -> fmt::Result {
        if self.is_attribute_step() {
            f.write_str("A")?;
            if let (true, Some(name)) = (slots, self.attribute_name()) {
                write!(f, "[{name}]")?;
            }
            return Ok(());
        }
        write!(f, "{}", self.layer)?;
        if self.attribute_constraint.is_some() {
            f.write_str("(A)")?;
        }
        if !slots {
            return Ok(());
        }
        if let Some(label) = &self.label {
            write!(f, "[{label}]")?;
        }
        if let Some((n, v)) = self.constraint_pair() {
            write!(f, "{{{n}={v}}}")?;
        }
        if let Some(r) = self.relation {
            write!(f, "<{r}>")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternChain {
    steps: Vec<SubGoal>,
    target_kind: TargetKind,
    alternatives: Vec<PatternChain>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatternError {
    #[error("pattern syntax error at offset {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("pattern structure error: {0}")]
    Structure(String),
}

impl PatternChain {
    /// Builds a chain, inferring the target kind unless one is forced
    /// (count and existence queries share the object-query shape).
    pub fn new(steps: Vec<SubGoal>, forced: Option<TargetKind>) -> Result<Self, PatternError> {
        let kind = infer_kind(&steps, forced)?;
        let chain = PatternChain { steps, target_kind: kind, alternatives: Vec::new() };
        chain.check()?;
        Ok(chain)
    }

    pub fn with_alternatives(mut self, alternatives: Vec<PatternChain>) -> Self {
        self.alternatives = alternatives;
        self
    }

    pub fn steps(&self) -> &[SubGoal] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn target_kind(&self) -> TargetKind {
        self.target_kind
    }

    pub fn alternatives(&self) -> &[PatternChain] {
        &self.alternatives
    }

    /// The final step.
    pub fn target(&self) -> &SubGoal {
        self.steps.last().expect("chains are non-empty")
    }

    /// Index of the object step the question is about: the step before a
    /// trailing attribute or room step, otherwise the last step.
    pub fn subject_index(&self) -> usize {
        match self.target_kind {
            TargetKind::AttributeQuery | TargetKind::RoomQuery => self.steps.len().saturating_sub(2),
            _ => self.steps.len() - 1,
        }
    }

    pub fn subject(&self) -> &SubGoal {
        &self.steps[self.subject_index()]
    }

    /// Layer-only rendering, e.g. `V2 -> V3 -> V4(A) -> A`.
    pub fn skeleton(&self) -> String {
        struct Skel<'a>(&'a PatternChain);
        impl fmt::Display for Skel<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.write(f, false)
            }
        }
        Skel(self).to_string()
    }

    /// Canonical rendering including slots and alternatives.
    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Primary chain followed by its alternatives.
    pub fn variants(&self) -> impl Iterator<Item = &PatternChain> {
        std::iter::once(self).chain(self.alternatives.iter())
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, slots: bool) -> fmt::Result {
        match self.target_kind {
            TargetKind::CountQuery => f.write_str("count: ")?,
            TargetKind::ExistenceQuery => f.write_str("exists: ")?,
            _ => {}
        }
        self.write_steps(f, slots)?;
        for alt in &self.alternatives {
            f.write_str(" | ")?;
            alt.write_steps(f, slots)?;
        }
        Ok(())
    }

    fn write_steps(&self, f: &mut fmt::Formatter<'_>, slots: bool) -> fmt::Result {
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            s.write(f, slots)?;
        }
        Ok(())
    }

    fn check(&self) -> Result<(), PatternError> {
        let n = self.steps.len();
        if n == 0 {
            return Err(PatternError::Structure("empty chain".into()));
        }
        for (i, s) in self.steps.iter().enumerate() {
            let last = i + 1 == n;
            if s.is_attribute_step() {
                if !last {
                    return Err(PatternError::Structure(format!("attribute step A at position {i} is not final")));
                }
                if i == 0 || self.steps[i - 1].layer < LayerId::BigObject {
                    return Err(PatternError::Structure("A must follow a V3 or V4 object step".into()));
                }
                if s.layer != self.steps[i - 1].layer {
                    return Err(PatternError::Structure("A must share the layer of the preceding step".into()));
                }
            }
            if s.attribute_constraint.is_some() && s.layer < LayerId::BigObject {
                return Err(PatternError::Structure(format!("attribute constraint on {} step", s.layer)));
            }
            if i > 0 && !last && s.layer < self.steps[i - 1].layer {
                return Err(PatternError::Structure(format!(
                    "layers must descend: {} follows {}",
                    s.layer,
                    self.steps[i - 1].layer
                )));
            }
            if i > 0 && last && self.target_kind != TargetKind::RoomQuery && s.layer < self.steps[i - 1].layer {
                return Err(PatternError::Structure(format!("final {} step climbs above {}", s.layer, self.steps[i - 1].layer)));
            }
        }
        Ok(())
    }
}

fn infer_kind(steps: &[SubGoal], forced: Option<TargetKind>) -> Result<TargetKind, PatternError> {
    let last = steps.last().ok_or_else(|| PatternError::Structure("empty chain".into()))?;
    let natural = if last.is_attribute_step() {
        TargetKind::AttributeQuery
    } else if steps.len() >= 2 && last.layer == LayerId::Room && steps[steps.len() - 2].layer > LayerId::Room {
        TargetKind::RoomQuery
    } else {
        TargetKind::ObjectQuery
    };
    match forced {
        None => Ok(natural),
        Some(k @ (TargetKind::CountQuery | TargetKind::ExistenceQuery)) if natural == TargetKind::ObjectQuery => Ok(k),
        Some(k) if k == natural => Ok(k),
        Some(k) => Err(PatternError::Structure(format!("{k:?} does not fit a {natural:?} shape"))),
    }
}

impl fmt::Display for SubGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, true)
    }
}

impl fmt::Display for PatternChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, true)
    }
}

impl std::str::FromStr for PatternChain {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pattern_string(s)
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.text[self.pos..].starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn err(&self, message: impl Into<String>) -> PatternError {
        PatternError::Syntax { position: self.pos, message: message.into() }
    }

    fn until(&mut self, close: char) -> Result<&'a str, PatternError> {
        let rest = &self.text[self.pos..];
        match rest.find(close) {
            Some(end) => {
                let inner = &rest[..end];
                self.pos += end + close.len_utf8();
                Ok(inner.trim())
            }
            None => Err(self.err(format!("missing `{close}`"))),
        }
    }
}

/// Parses the textual pattern form.
pub fn parse_pattern_string(text: &str) -> Result<PatternChain, PatternError> {
    let mut cur = Cursor { text, pos: 0 };
    cur.skip_ws();
    let forced = if cur.eat("count:") {
        Some(TargetKind::CountQuery)
    } else if cur.eat("exists:") {
        Some(TargetKind::ExistenceQuery)
    } else {
        None
    };
    let mut variants = Vec::new();
    loop {
        let steps = parse_steps(&mut cur)?;
        variants.push(PatternChain::new(steps, forced)?);
        cur.skip_ws();
        if cur.eat("|") {
            continue;
        }
        if cur.pos < text.len() {
            return Err(cur.err("unexpected trailing input"));
        }
        break;
    }
    let mut iter = variants.into_iter();
    let primary = iter.next().expect("at least one variant");
    Ok(primary.with_alternatives(iter.collect()))
}

fn parse_steps(cur: &mut Cursor<'_>) -> Result<Vec<SubGoal>, PatternError> {
    let mut steps: Vec<SubGoal> = Vec::new();
    loop {
        cur.skip_ws();
        let step = parse_step(cur, steps.last().map(|s| s.layer))?;
        steps.push(step);
        cur.skip_ws();
        if !cur.eat("->") {
            return Ok(steps);
        }
    }
}

fn parse_step(cur: &mut Cursor<'_>, previous: Option<LayerId>) -> Result<SubGoal, PatternError> {
    let mut step = if cur.eat("A") {
        let layer = previous.ok_or_else(|| PatternError::Structure("chain cannot start with A".into()))?;
        SubGoal::attribute(layer, None)
    } else if cur.eat("V") {
        let digit = cur.peek().and_then(|c| c.to_digit(10)).ok_or_else(|| cur.err("expected layer digit"))?;
        let layer = LayerId::from_level(digit as u8).ok_or_else(|| cur.err(format!("no layer V{digit}")))?;
        cur.pos += 1;
        let mut s = SubGoal::node(layer, None);
        if cur.eat("(A)") {
            s.attribute_constraint = Some(AttrConstraint::Unbound);
        }
        s
    } else {
        return Err(cur.err("expected `V1`..`V4` or `A`"));
    };
    cur.skip_ws();
    if cur.eat("[") {
        let inner = cur.until(']')?;
        if inner.is_empty() {
            return Err(cur.err("empty label"));
        }
        if step.is_attribute_step() {
            step.queried_attribute = Some(Some(inner.to_string()));
        } else {
            step.label = Some(inner.to_string());
        }
        cur.skip_ws();
    }
    if cur.eat("{") {
        let start = cur.pos;
        let inner = cur.until('}')?;
        let (name, value) = inner
            .split_once('=')
            .map(|(n, v)| (n.trim(), v.trim()))
            .filter(|(n, v)| !n.is_empty() && !v.is_empty())
            .ok_or(PatternError::Syntax { position: start, message: "expected {name=value}".into() })?;
        if step.is_attribute_step() {
            return Err(PatternError::Structure("A steps carry no constraint".into()));
        }
        step.attribute_constraint = Some(AttrConstraint::bound(name, value));
        cur.skip_ws();
    }
    if cur.eat("<") {
        let start = cur.pos;
        let inner = cur.until('>')?;
        step.relation = Some(Relation::parse(inner).ok_or(PatternError::Syntax {
            position: start,
            message: format!("unknown relation `{inner}`"),
        })?);
    }
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn book_title_chain() {
        let c = parse_pattern_string("V2 -> V3 -> V4(A) -> A").unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.target_kind(), TargetKind::AttributeQuery);
        assert_eq!(c.target().layer, LayerId::SmallObject);
        assert!(c.target().is_attribute_step());
        assert_eq!(c.subject_index(), 2);
    }

    #[test]
    fn room_query_and_round_trip() {
        let c = parse_pattern_string("V3->V2").unwrap();
        assert_eq!(c.target_kind(), TargetKind::RoomQuery);
        assert_eq!(c.len(), 2);
        assert_eq!(c.render(), "V3 -> V2");
        let single = parse_pattern_string("V3").unwrap();
        assert_eq!(single.target(), &single.steps()[0]);
    }

    #[test]
    fn attribute_step_placement_errors() {
        assert!(matches!(parse_pattern_string("A -> V2"), Err(PatternError::Structure(_))));
        assert!(matches!(parse_pattern_string("V3 -> A -> V2"), Err(PatternError::Structure(_))));
        assert!(matches!(parse_pattern_string("V2 -> A"), Err(PatternError::Structure(_))));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse_pattern_string("V2 -> X3") {
            Err(PatternError::Syntax { position, .. }) => assert_eq!(position, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_pattern_string("V5"), Err(PatternError::Syntax { .. })));
        assert!(matches!(parse_pattern_string("V2[kitchen"), Err(PatternError::Syntax { .. })));
        assert!(matches!(parse_pattern_string("V3 -> V4<inside>"), Err(PatternError::Syntax { .. })));
        assert!(matches!(parse_pattern_string(""), Err(PatternError::Syntax { .. })));
    }

    #[test]
    fn slots_render_and_target() {
        let text = "V2[living room] -> V3[table] -> V4(A)[book]{state=open} -> A[title]";
        let c = parse_pattern_string(text).unwrap();
        assert_eq!(c.render(), text);
        assert_eq!(c.skeleton(), "V2 -> V3 -> V4(A) -> A");
        assert_eq!(c.target().attribute_name(), Some("title"));
        assert_eq!(c.subject().constraint_pair(), Some(("state", "open")));
        // Constraint without the (A) marker canonicalizes to include it.
        let c2 = parse_pattern_string("V3[bed]->V4[person]{state=asleep}").unwrap();
        assert_eq!(c2.render(), "V3[bed] -> V4(A)[person]{state=asleep}");
    }

    #[test]
    fn kinds_and_alternatives() {
        let c = parse_pattern_string("count: V2[living room] -> V3[desk]").unwrap();
        assert_eq!(c.target_kind(), TargetKind::CountQuery);
        let e = parse_pattern_string("exists: V3[bed] -> V4[bag]").unwrap();
        assert_eq!(e.target_kind(), TargetKind::ExistenceQuery);
        assert!(parse_pattern_string("count: V3 -> A").is_err());
        let alt = parse_pattern_string("V3[sofa] -> V2 | V4[sofa] -> V2").unwrap();
        assert_eq!(alt.alternatives().len(), 1);
        assert_eq!(alt.alternatives()[0].steps()[0].layer, LayerId::SmallObject);
        assert_eq!(alt.render(), "V3[sofa] -> V2 | V4[sofa] -> V2");
        let rel = parse_pattern_string("V2[living room] -> V3[sofa] -> V3<next-to>").unwrap();
        assert_eq!(rel.target_kind(), TargetKind::ObjectQuery);
        assert_eq!(rel.target().relation, Some(Relation::NextTo));
    }

    fn label() -> impl Strategy<Value = String> {
        "[a-z]{1,8}( [a-z]{1,8})?"
    }

    fn arb_chain() -> impl Strategy<Value = PatternChain> {
        let layers = prop::collection::vec(2u8..=4, 1..4).prop_map(|mut v| {
            v.sort();
            v
        });
        (
            layers,
            prop::collection::vec(proptest::option::of(label()), 4),
            proptest::option::of((label(), label())),
            0u8..4,
            proptest::option::of(label()),
            proptest::option::of(0usize..4),
        )
            .prop_filter_map("valid chain", |(layers, labels, constraint, tail, attr, rel)| {
                let mut steps: Vec<SubGoal> = layers
                    .iter()
                    .zip(&labels)
                    .map(|(l, lab)| SubGoal::node(LayerId::from_level(*l).unwrap(), lab.as_deref()))
                    .collect();
                let last_layer = steps.last().unwrap().layer;
                if let Some((n, v)) = &constraint {
                    if last_layer >= LayerId::BigObject {
                        steps.last_mut().unwrap().attribute_constraint = Some(AttrConstraint::bound(n, v));
                    }
                }
                let forced = match tail {
                    0 if last_layer >= LayerId::BigObject => {
                        steps.push(SubGoal::attribute(last_layer, attr.as_deref()));
                        None
                    }
                    1 if last_layer >= LayerId::BigObject => {
                        steps.push(SubGoal::node(LayerId::Room, None));
                        None
                    }
                    2 => Some(TargetKind::CountQuery),
                    3 => Some(TargetKind::ExistenceQuery),
                    _ => None,
                };
                if let (Some(r), None) = (rel, forced) {
                    if !steps.last().unwrap().is_attribute_step() && steps.len() > 1 {
                        steps.last_mut().unwrap().relation = Some(Relation::ALL[r]);
                    }
                }
                PatternChain::new(steps, forced).ok()
            })
    }

    proptest! {
        #[test]
        fn parse_render_identity(chain in arb_chain()) {
            let text = chain.render();
            let back = parse_pattern_string(&text).unwrap();
            prop_assert_eq!(&back, &chain);
            prop_assert_eq!(back.target(), &back.steps()[back.len() - 1]);
        }
    }
}
