//! Answer scoring with a pluggable judge and benchmark aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, EpisodeStatus};
use crate::dataset::{Category, QARecord};
use crate::environment::WorldTruth;
use crate::exec::map_ordered;
use crate::llm_client::{prompts, ChatClient, LlmError};

/// A judge score, 1 (unrelated) to 5 (same answer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct JudgeScore(u8);

impl JudgeScore {
    pub const MIN: JudgeScore = JudgeScore(1);
    pub const MAX: JudgeScore = JudgeScore(5);

    pub fn new(value: u8) -> Result<Self, EvalError> {
        if (1..=5).contains(&value) {
            Ok(Self(value))
        } else {
            Err(EvalError::ScoreOutOfRange(value.into()))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for JudgeScore {
    type Error = EvalError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<JudgeScore> for u8 {
    fn from(s: JudgeScore) -> u8 {
        s.0
    }
}

impl fmt::Display for JudgeScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("judge score {0} outside 1..=5")]
    ScoreOutOfRange(i64),
    #[error("no scores to aggregate")]
    Empty,
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Default)]
pub enum JudgeBackend {
    /// Deterministic 5/3/1 ladder over normalized strings.
    #[default]
    Mock,
    Chat(ChatClient),
}

/// Lowercase, punctuation to spaces, collapsed whitespace.
pub fn normalize_answer(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

const ARTICLES: &[&str] = &["a", "an", "the"];

fn content_tokens(s: &str) -> BTreeSet<String> {
    normalize_answer(s).split(' ').filter(|t| !t.is_empty() && !ARTICLES.contains(t)).map(str::to_string).collect()
}

pub fn mock_judge(gold: &str, predicted: &str) -> JudgeScore {
    if normalize_answer(gold) == normalize_answer(predicted) {
        return JudgeScore(5);
    }
    let (g, p) = (content_tokens(gold), content_tokens(predicted));
    if !g.is_empty() && !p.is_empty() && (g.is_subset(&p) || p.is_subset(&g)) {
        JudgeScore(3)
    } else {
        JudgeScore(1)
    }
}

/// Reads a reply that must be a single integer in range.
pub fn parse_judge_reply(reply: &str) -> Result<JudgeScore, String> {
    let t = reply.trim().trim_end_matches('.');
    let n: i64 = t.parse().map_err(|_| format!("expected a single integer, got `{t}`"))?;
    u8::try_from(n).ok().and_then(|v| JudgeScore::new(v).ok()).ok_or_else(|| format!("score {n} outside 1..=5"))
}

pub fn judge(question: &str, gold: &str, predicted: &str, backend: &JudgeBackend) -> Result<JudgeScore, EvalError> {
    for (name, v) in [("question", question), ("gold answer", gold), ("predicted answer", predicted)] {
        if v.trim().is_empty() {
            return Err(EvalError::EmptyInput(name));
        }
    }
    match backend {
        JudgeBackend::Mock => Ok(mock_judge(gold, predicted)),
        JudgeBackend::Chat(client) => {
            Ok(client.ask(&prompts::JUDGE, &[("question", question), ("answer", gold), ("response", predicted)], parse_judge_reply)?)
        }
    }
}

/// Mean of (score - 1) / 4, as a percentage.
pub fn llm_match(scores: &[JudgeScore]) -> Result<f64, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: u64 = scores.iter().map(|s| u64::from(s.0 - 1)).sum();
    Ok(total as f64 * 100.0 / (4.0 * scores.len() as f64))
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkConfig {
    pub agent: Agent,
    pub judge: JudgeBackend,
    /// Worker threads; 1 runs sequentially.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub id: String,
    pub category: Category,
    pub question: String,
    pub gold: String,
    pub answer: String,
    pub status: EpisodeStatus,
    pub score: JudgeScore,
    pub steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub c: f64,
    pub mean_steps: f64,
}

impl Aggregate {
    fn of(results: &[&RecordResult]) -> Option<Self> {
        let scores: Vec<JudgeScore> = results.iter().map(|r| r.score).collect();
        let c = llm_match(&scores).ok()?;
        let steps: u64 = results.iter().map(|r| u64::from(r.steps)).sum();
        Some(Self { n: results.len(), c, mean_steps: steps as f64 / results.len() as f64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub overall: Option<Aggregate>,
    pub categories: BTreeMap<Category, Aggregate>,
    /// Records whose world was not in the registry.
    pub missing_worlds: Vec<String>,
    pub records: Vec<RecordResult>,
}

impl BenchmarkReport {
    fn from_results(mut records: Vec<RecordResult>, missing_worlds: Vec<String>) -> Self {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let all: Vec<&RecordResult> = records.iter().collect();
        let overall = Aggregate::of(&all);
        let mut categories = BTreeMap::new();
        for c in Category::ALL {
            let part: Vec<&RecordResult> = records.iter().filter(|r| r.category == c).collect();
            if let Some(a) = Aggregate::of(&part) {
                categories.insert(c, a);
            }
        }
        Self { overall, categories, missing_worlds, records }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>6} {:>8} {:>10}", "category", "N", "C", "mean steps");
        let mut row = |name: &str, a: &Aggregate| {
            let _ = writeln!(out, "{:<14} {:>6} {:>8.1} {:>10.2}", name, a.n, a.c, a.mean_steps);
        };
        for (c, a) in &self.categories {
            row(c.as_str(), a);
        }
        if let Some(a) = &self.overall {
            row("overall", a);
        }
        if !self.missing_worlds.is_empty() {
            let _ = writeln!(out, "missing worlds: {}", self.missing_worlds.join(", "));
        }
        out
    }
}

/// Runs every record through the agent and judge. Records whose world is
/// missing, or whose judging fails, score the minimum and the run goes on.
pub fn run_benchmark(records: &[QARecord], worlds: &HashMap<String, WorldTruth>, config: &BenchmarkConfig) -> BenchmarkReport {
    let results = map_ordered(records, config.workers.max(1), |r| {
        let Some(world) = worlds.get(&r.world_id) else {
            return RecordResult {
                id: r.id.clone(),
                category: r.category,
                question: r.question.clone(),
                gold: r.gold_answer.clone(),
                answer: String::new(),
                status: EpisodeStatus::Failed,
                score: JudgeScore::MIN,
                steps: 0,
                error: Some(format!("unknown world `{}`", r.world_id)),
            };
        };
        let trace = config.agent.run_episode(&r.to_question(), world);
        let (score, judge_error) = match judge(&r.question, &r.gold_answer, &trace.answer, &config.judge) {
            Ok(s) => (s, None),
            Err(e) => (JudgeScore::MIN, Some(format!("judge: {e}"))),
        };
        RecordResult {
            id: r.id.clone(),
            category: r.category,
            question: r.question.clone(),
            gold: r.gold_answer.clone(),
            answer: trace.answer,
            status: trace.status,
            score,
            steps: trace.steps,
            error: trace.error.or(judge_error),
        }
    });
    let missing: BTreeSet<String> = records.iter().filter(|r| !worlds.contains_key(&r.world_id)).map(|r| r.id.clone()).collect();
    BenchmarkReport::from_results(results, missing.into_iter().collect())
}
