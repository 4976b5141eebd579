use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::inventory::{Inventory, PhonemeClass};

pub const GARBAGE_LABEL: &str = "gar";

/// Symbols that pass through map derivation untouched. The file format treats
/// a class as special when all its members are special symbols, so maps can be
/// read without an inventory at hand.
pub fn is_special_symbol(symbol: &str) -> bool {
    symbol == "sil" || symbol == "sp"
}

#[derive(Debug, Error)]
pub enum P2VError {
    #[error("map '{map}': {msg}")]
    Invalid { map: String, msg: String },
    #[error("map '{map}' line {line}: {msg}")]
    Parse { map: String, line: usize, msg: String },
    #[error("pairing '{a}' with '{b}': {msg}")]
    Pair { a: String, b: String, msg: String },
    #[error("garbage threshold on '{map}': {msg}")]
    Threshold { map: String, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Viseme,
    Garbage,
    Special,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisemeClass {
    pub label: String,
    pub members: Vec<String>,
    pub kind: ClassKind,
}

impl VisemeClass {
    pub fn viseme(label: impl Into<String>, members: Vec<String>) -> Self {
        VisemeClass { label: label.into(), members, kind: ClassKind::Viseme }
    }

    pub fn garbage(members: Vec<String>) -> Self {
        VisemeClass { label: GARBAGE_LABEL.into(), members, kind: ClassKind::Garbage }
    }

    pub fn special(label: impl Into<String>, members: Vec<String>) -> Self {
        VisemeClass { label: label.into(), members, kind: ClassKind::Special }
    }
}

/// A partition of part of the phoneme alphabet into labeled viseme classes,
/// with an optional garbage class for symbols outside the partition and
/// passthrough classes for silence-like symbols. Classes are disjoint,
/// non-empty, and keep their declaration order.
#[derive(Debug, Clone)]
pub struct P2VMap {
    name: String,
    classes: Vec<VisemeClass>,
    index: HashMap<String, usize>,
}

impl PartialEq for P2VMap {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.classes == other.classes
    }
}

impl P2VMap {
    pub fn new(name: impl Into<String>, classes: Vec<VisemeClass>) -> Result<Self, P2VError> {
        let name = name.into();
        let invalid = |msg: String| P2VError::Invalid { map: name.clone(), msg };
        if classes.is_empty() {
            return Err(invalid("a map needs at least one class".into()));
        }
        let mut labels = HashSet::new();
        let mut index = HashMap::new();
        let mut garbage_seen = false;
        for (ci, class) in classes.iter().enumerate() {
            if class.label.is_empty() || class.label.chars().any(char::is_whitespace) {
                return Err(invalid(format!("bad class label '{}'", class.label)));
            }
            if !labels.insert(class.label.clone()) {
                return Err(invalid(format!("duplicate class label '{}'", class.label)));
            }
            if class.members.is_empty() {
                return Err(invalid(format!("class '{}' is empty", class.label)));
            }
            match class.kind {
                ClassKind::Garbage => {
                    if garbage_seen {
                        return Err(invalid("more than one garbage class".into()));
                    }
                    garbage_seen = true;
                }
                ClassKind::Special => {
                    if let Some(m) = class.members.iter().find(|m| !is_special_symbol(m)) {
                        return Err(invalid(format!(
                            "special class '{}' contains non-special symbol '{m}'",
                            class.label
                        )));
                    }
                }
                ClassKind::Viseme => {}
            }
            for m in &class.members {
                if m.is_empty() || m.chars().any(char::is_whitespace) {
                    return Err(invalid(format!("bad symbol '{m}' in class '{}'", class.label)));
                }
                if index.insert(m.clone(), ci).is_some() {
                    return Err(invalid(format!("symbol '{m}' appears in more than one class")));
                }
            }
        }
        Ok(P2VMap { name, classes, index })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn classes(&self) -> &[VisemeClass] {
        &self.classes
    }

    /// The proper viseme classes, excluding garbage and passthroughs.
    pub fn viseme_classes(&self) -> impl Iterator<Item = &VisemeClass> {
        self.classes.iter().filter(|c| c.kind == ClassKind::Viseme)
    }

    pub fn garbage(&self) -> Option<&VisemeClass> {
        self.classes.iter().find(|c| c.kind == ClassKind::Garbage)
    }

    pub fn specials(&self) -> impl Iterator<Item = &VisemeClass> {
        self.classes.iter().filter(|c| c.kind == ClassKind::Special)
    }

    pub fn class_of(&self, symbol: &str) -> Option<&VisemeClass> {
        self.index.get(symbol).map(|&i| &self.classes[i])
    }

    /// The viseme label a phoneme maps to, garbage and passthroughs included.
    pub fn viseme_of(&self, symbol: &str) -> Option<&str> {
        self.class_of(symbol).map(|c| c.label.as_str())
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    pub fn covered_symbols(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().flat_map(|c| c.members.iter().map(String::as_str))
    }

    /// Ratio of viseme classes to the phonemes they cover; garbage and
    /// passthrough classes are excluded from both counts.
    pub fn compression_factor(&self) -> Result<f64, P2VError> {
        let mut v = 0usize;
        let mut p = 0usize;
        for class in self.viseme_classes() {
            v += 1;
            p += class.members.len();
        }
        if v == 0 {
            return Err(P2VError::Invalid {
                map: self.name.clone(),
                msg: "no viseme classes to take a compression factor over".into(),
            });
        }
        Ok(v as f64 / p as f64)
    }

    /// Parses the `label: member member ...` format. `#` comments and blank
    /// lines are ignored. The label `gar` marks the garbage class; a class
    /// whose members are all silence-like symbols is a passthrough.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, P2VError> {
        let name = name.into();
        let mut classes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| P2VError::Parse { map: name.clone(), line: lineno + 1, msg };
            let (label, rest) = line
                .split_once(':')
                .ok_or_else(|| parse_err(format!("expected 'label: members', got '{line}'")))?;
            let label = label.trim();
            let members: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if members.is_empty() {
                return Err(parse_err(format!("class '{label}' has no members")));
            }
            let kind = if label == GARBAGE_LABEL {
                ClassKind::Garbage
            } else if members.iter().all(|m| is_special_symbol(m)) {
                ClassKind::Special
            } else {
                ClassKind::Viseme
            };
            classes.push(VisemeClass { label: label.to_string(), members, kind });
        }
        P2VMap::new(name, classes)
    }

    /// Loads a map file, naming the map after the file stem.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, P2VError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "map".to_string());
        P2VMap::parse(name, &fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for class in &self.classes {
            out.push_str(&class.label);
            out.push(':');
            for m in &class.members {
                out.push(' ');
                out.push_str(m);
            }
            out.push('\n');
        }
        out
    }

    /// Non-fatal oddities relative to an alphabet: symbols outside it,
    /// classes mixing vowels with consonants, and special symbols sitting in
    /// ordinary classes.
    pub fn validate_against(&self, inventory: &Inventory) -> Vec<String> {
        let mut warnings = Vec::new();
        for class in &self.classes {
            let mut saw_vowel = false;
            let mut saw_consonant = false;
            for m in &class.members {
                match inventory.klass_of(m) {
                    None => warnings.push(format!(
                        "class '{}': symbol '{m}' is not in the alphabet",
                        class.label
                    )),
                    Some(PhonemeClass::Vowel) => saw_vowel = true,
                    Some(PhonemeClass::Consonant) => saw_consonant = true,
                    Some(k) if k.is_special() && class.kind != ClassKind::Special => warnings
                        .push(format!(
                            "class '{}': special symbol '{m}' in an ordinary class",
                            class.label
                        )),
                    Some(_) => {}
                }
            }
            if saw_vowel && saw_consonant && class.kind == ClassKind::Viseme {
                warnings.push(format!("class '{}' mixes vowels and consonants", class.label));
            }
        }
        warnings
    }

    /// Non-special alphabet symbols this map does not cover.
    pub fn missing_from(&self, inventory: &Inventory) -> Vec<String> {
        inventory
            .iter()
            .filter(|p| !p.klass.is_special() && !self.contains(&p.symbol))
            .map(|p| p.symbol.clone())
            .collect()
    }
}

/// Combines a consonant-only map with a vowel-only map into one map covering
/// the alphabet: classes are relabeled v01.. in order (consonants first),
/// uncovered non-special symbols pool into garbage, and each special symbol
/// passes through as its own class.
pub fn pair_maps(
    name: impl Into<String>,
    consonants: &P2VMap,
    vowels: &P2VMap,
    inventory: &Inventory,
) -> Result<P2VMap, P2VError> {
    let name = name.into();
    let pair_err = |msg: String| P2VError::Pair {
        a: consonants.name.clone(),
        b: vowels.name.clone(),
        msg,
    };
    for (map, want) in [(consonants, PhonemeClass::Consonant), (vowels, PhonemeClass::Vowel)] {
        for class in map.viseme_classes() {
            for m in &class.members {
                match inventory.klass_of(m) {
                    Some(k) if k == want => {}
                    Some(k) => {
                        return Err(pair_err(format!(
                            "map '{}' class '{}': '{m}' is a {k}, expected {want}",
                            map.name, class.label,
                        )))
                    }
                    None => {
                        return Err(pair_err(format!(
                            "map '{}' class '{}': '{m}' is not in the alphabet",
                            map.name, class.label,
                        )))
                    }
                }
            }
        }
    }
    let cons_symbols: HashSet<&str> =
        consonants.viseme_classes().flat_map(|c| c.members.iter().map(String::as_str)).collect();
    if let Some(shared) = vowels
        .viseme_classes()
        .flat_map(|c| c.members.iter())
        .find(|m| cons_symbols.contains(m.as_str()))
    {
        return Err(pair_err(format!("both maps cover '{shared}'")));
    }

    let mut classes = Vec::new();
    for class in consonants.viseme_classes().chain(vowels.viseme_classes()) {
        classes.push(VisemeClass::viseme(
            format!("v{:02}", classes.len() + 1),
            class.members.clone(),
        ));
    }
    let mut garbage: Vec<String> = Vec::new();
    for source in [consonants, vowels] {
        if let Some(g) = source.garbage() {
            garbage.extend(g.members.iter().cloned());
        }
    }
    let covered: HashSet<String> = classes
        .iter()
        .flat_map(|c| c.members.iter())
        .chain(garbage.iter())
        .cloned()
        .collect();
    for p in inventory.iter() {
        if !p.klass.is_special() && !covered.contains(&p.symbol) {
            garbage.push(p.symbol.clone());
        }
    }
    if !garbage.is_empty() {
        classes.push(VisemeClass::garbage(garbage));
    }
    for p in inventory.iter() {
        if p.klass.is_special() {
            classes.push(VisemeClass::special(p.symbol.clone(), vec![p.symbol.clone()]));
        }
    }
    P2VMap::new(name, classes)
}

/// Merges under-trained classes into garbage: any viseme class whose training
/// count falls below mean - k_se * (sigma / sqrt n) over the viseme classes
/// (sample sigma, n = number of viseme classes) has its members moved to the
/// garbage class. Counts are required for every viseme class.
pub fn garbage_threshold(
    map: &P2VMap,
    counts: &BTreeMap<String, u64>,
    k_se: f64,
) -> Result<P2VMap, P2VError> {
    let threshold_err = |msg: String| P2VError::Threshold { map: map.name.clone(), msg };
    if !k_se.is_finite() || k_se < 0.0 {
        return Err(threshold_err(format!("k_se must be finite and non-negative, got {k_se}")));
    }
    let mut values = Vec::new();
    for class in map.viseme_classes() {
        match counts.get(&class.label) {
            Some(&c) => values.push(c as f64),
            None => return Err(threshold_err(format!("no count for class '{}'", class.label))),
        }
    }
    let known: HashSet<&str> = map.viseme_classes().map(|c| c.label.as_str()).collect();
    if let Some(extra) = counts.keys().find(|k| !known.contains(k.as_str())) {
        return Err(threshold_err(format!("count for unknown class '{extra}'")));
    }
    if values.is_empty() {
        return Err(threshold_err("no viseme classes".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sigma = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let threshold = mean - k_se * sigma / n.sqrt();

    let mut garbage: Vec<String> = Vec::new();
    let mut merged: Vec<String> = Vec::new();
    let mut classes: Vec<VisemeClass> = Vec::new();
    let mut garbage_position = None;
    for class in &map.classes {
        match class.kind {
            ClassKind::Garbage => {
                garbage_position = Some(classes.len());
                garbage.extend(class.members.iter().cloned());
            }
            ClassKind::Viseme => {
                let count = counts[&class.label] as f64;
                if count < threshold {
                    merged.extend(class.members.iter().cloned());
                } else {
                    classes.push(class.clone());
                }
            }
            ClassKind::Special => classes.push(class.clone()),
        }
    }
    garbage.extend(merged);
    if !garbage.is_empty() {
        let at = garbage_position.unwrap_or(classes.len()).min(classes.len());
        classes.insert(at, VisemeClass::garbage(garbage));
    }
    P2VMap::new(map.name.clone(), classes)
}
