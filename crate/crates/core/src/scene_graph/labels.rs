//! Label normalization and the default object-layer vocabulary.

use std::collections::BTreeMap;

use super::LayerId;

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("people", "person"),
    ("persons", "person"),
    ("shelves", "shelf"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("mice", "mouse"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("series", "series"),
    ("species", "species"),
    ("clothes", "clothes"),
    ("glasses", "glass"),
    ("dishes", "dish"),
];

/// Words whose trailing "s" is part of the singular form.
const SINGULAR_S: &[&str] = &["glass", "dress", "bus", "cactus", "lens", "iris", "canvas", "gas", "chess"];

/// Singularizes one lowercase word with a naive suffix table.
pub fn singularize(word: &str) -> String {
    if let Some((_, s)) = IRREGULAR_PLURALS.iter().find(|(p, _)| *p == word) {
        return (*s).to_string();
    }
    if SINGULAR_S.contains(&word) || word.len() <= 2 {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if stem.len() > 1 {
            return format!("{stem}y");
        }
    }
    for suffix in ["sses", "xes", "ches", "shes", "zes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    match word.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => word.to_string(),
    }
}

/// Pluralizes a normalized label (last word only).
pub fn pluralize(label: &str) -> String {
    let (head, last) = match label.rsplit_once(' ') {
        Some((h, l)) => (format!("{h} "), l),
        None => (String::new(), label),
    };
    if let Some((p, _)) = IRREGULAR_PLURALS.iter().find(|(_, s)| *s == last) {
        if *p != "persons" {
            return format!("{head}{p}");
        }
    }
    let plural = if last.ends_with('y')
        && !matches!(last.chars().rev().nth(1), Some('a' | 'e' | 'o' | 'u'))
    {
        format!("{}ies", &last[..last.len() - 1])
    } else if ["s", "x", "ch", "sh", "z"].iter().any(|s| last.ends_with(s)) {
        format!("{last}es")
    } else {
        format!("{last}s")
    };
    format!("{head}{plural}")
}

/// Lowercases, collapses whitespace, maps `-`/`_` to spaces and singularizes
/// the final word.
pub fn normalize(label: &str) -> String {
    let lowered = label.to_lowercase().replace(['_', '-'], " ");
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    while words.len() > 1 && matches!(words[0], "the" | "a" | "an") {
        words.remove(0);
    }
    match words.split_last() {
        Some((last, rest)) => {
            let mut out: Vec<String> = rest.iter().map(|w| w.to_string()).collect();
            out.push(singularize(last));
            out.join(" ")
        }
        None => String::new(),
    }
}

/// Whether a query label names a node label. A query matches its exact
/// normalized form or a trailing head-noun phrase, so "table" matches
/// "coffee table" but "coffee" does not.
pub fn matches(query: &str, node_label: &str) -> bool {
    let q = normalize(query);
    let n = normalize(node_label);
    if q.is_empty() {
        return false;
    }
    q == n || n.ends_with(&format!(" {q}"))
}

/// Maps labels to their default layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    layers: BTreeMap<String, LayerId>,
}

const ROOMS: &[&str] = &[
    "living room", "kitchen", "bedroom", "bathroom", "study", "dining room", "family room",
    "office", "hallway", "garage", "laundry room", "lobby", "closet", "nursery", "den",
    "playroom", "guest room", "master bedroom", "hall", "balcony",
];

const BIG_OBJECTS: &[&str] = &[
    "sofa", "couch", "table", "coffee table", "dining table", "desk", "bed", "chair",
    "armchair", "cabinet", "shelf", "bookshelf", "tv", "television", "fridge",
    "refrigerator", "stove", "oven", "sink", "toilet", "bathtub", "shower", "wardrobe",
    "dresser", "counter", "nightstand", "piano", "cupboard", "bench", "stool", "tv stand",
    "sideboard", "washing machine", "fireplace", "ottoman", "crib",
];

const SMALL_OBJECTS: &[&str] = &[
    "book", "phone", "cup", "bag", "laptop", "person", "remote", "pillow", "cushion",
    "bottle", "potted plant", "plant", "vase", "mug", "key", "glass", "plate", "bowl",
    "apple", "towel", "clock", "lamp", "toy", "box", "magazine", "pen", "shoe", "hat",
    "candle", "picture", "doll", "blanket", "teddy bear", "kettle", "cat", "dog",
];

impl Default for Vocabulary {
    fn default() -> Self {
        let mut layers = BTreeMap::new();
        for r in ROOMS {
            layers.insert(normalize(r), LayerId::Room);
        }
        for o in BIG_OBJECTS {
            layers.insert(normalize(o), LayerId::BigObject);
        }
        for o in SMALL_OBJECTS {
            layers.insert(normalize(o), LayerId::SmallObject);
        }
        Self { layers }
    }
}

impl Vocabulary {
    pub fn empty() -> Self {
        Self { layers: BTreeMap::new() }
    }

    pub fn insert(&mut self, label: &str, layer: LayerId) {
        self.layers.insert(normalize(label), layer);
    }

    /// Default layer for a label. Exact entries win; otherwise the head noun
    /// decides ("dining table" → table), and anything ending in "room" is a room.
    pub fn layer_of(&self, label: &str) -> Option<LayerId> {
        let norm = normalize(label);
        if let Some(layer) = self.layers.get(&norm) {
            return Some(*layer);
        }
        let mut words: Vec<&str> = norm.split(' ').collect();
        while words.len() > 1 {
            words.remove(0);
            if let Some(layer) = self.layers.get(&words.join(" ")) {
                return Some(*layer);
            }
        }
        norm.ends_with("room").then_some(LayerId::Room)
    }
}
