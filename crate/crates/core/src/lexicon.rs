use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use thiserror::Error;

use crate::inventory::{strip_stress, Inventory};
use crate::p2vmap::P2VMap;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: word '{word}' uses unknown phoneme '{symbol}'")]
    UnknownPhoneme { line: usize, word: String, symbol: String },
    #[error("line {line}: duplicate pronunciation for '{word}'")]
    DuplicatePronunciation { line: usize, word: String },
    #[error("word '{0}' is not in the dictionary")]
    OutOfVocabulary(String),
    #[error("phoneme '{0}' is not covered by the map")]
    Uncovered(String),
    #[error("utterance id '{0}' repeats")]
    DuplicateUtteranceId(String),
    #[error("token counts sum to {sum} but total words is {total}")]
    InconsistentCounts { sum: u64, total: u64 },
    #[error("no tokens")]
    NoTokens,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictOptions {
    /// Strip trailing stress digits from phoneme symbols on load.
    pub strip_stress: bool,
}

impl Default for DictOptions {
    fn default() -> Self {
        DictOptions { strip_stress: true }
    }
}

/// Word-to-pronunciation dictionary. Word keys are case-insensitive (stored
/// upper-case); each word keeps its pronunciations in file order. The same
/// container carries viseme-level pronunciations after translation, where
/// repeated entries are meaningful and therefore kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PronDict {
    entries: BTreeMap<String, Vec<Vec<String>>>,
}

impl PronDict {
    pub fn new() -> Self {
        PronDict::default()
    }

    pub fn push(&mut self, word: &str, pronunciation: Vec<String>) {
        self.entries.entry(word.to_uppercase()).or_default().push(pronunciation);
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<String>]> {
        self.entries.get(&word.to_uppercase()).map(Vec::as_slice)
    }

    pub fn len_words(&self) -> usize {
        self.entries.len()
    }

    pub fn len_pronunciations(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Vec<String>])> {
        self.entries.iter().map(|(w, ps)| (w.as_str(), ps.as_slice()))
    }

    /// Every distinct symbol used by any pronunciation.
    pub fn symbols(&self) -> BTreeSet<String> {
        self.entries
            .values()
            .flatten()
            .flat_map(|p| p.iter().cloned())
            .collect()
    }

    pub fn parse(text: &str, inventory: &Inventory, opts: DictOptions) -> Result<Self, LexiconError> {
        let mut dict = PronDict::new();
        let mut seen: HashSet<(String, Vec<String>)> = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split_whitespace();
            let word = parts.next().expect("non-empty line has a first token").to_uppercase();
            let mut pron: Vec<String> = Vec::new();
            for tok in parts {
                let symbol = if opts.strip_stress { strip_stress(tok) } else { tok };
                if !inventory.contains(symbol) {
                    return Err(LexiconError::UnknownPhoneme {
                        line,
                        word,
                        symbol: symbol.to_string(),
                    });
                }
                pron.push(symbol.to_string());
            }
            if pron.is_empty() {
                return Err(LexiconError::Parse {
                    line,
                    msg: format!("word '{word}' has no phonemes"),
                });
            }
            if !seen.insert((word.clone(), pron.clone())) {
                return Err(LexiconError::DuplicatePronunciation { line, word });
            }
            dict.push(&word, pron);
        }
        Ok(dict)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (word, prons) in &self.entries {
            for p in prons {
                out.push_str(word);
                out.push('\t');
                out.push_str(&p.join(" "));
                out.push('\n');
            }
        }
        out
    }
}

pub fn load_dict(
    path: impl AsRef<Path>,
    inventory: &Inventory,
    opts: DictOptions,
) -> Result<PronDict, LexiconError> {
    let text = std::fs::read_to_string(path)?;
    PronDict::parse(&text, inventory, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Word,
    Phoneme,
    Viseme,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Word => "word",
            Level::Phoneme => "phoneme",
            Level::Viseme => "viseme",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub fold: String,
    pub labels: Vec<String>,
}

/// One utterance per line: `id<TAB>fold<TAB>label label ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub level: Level,
    pub utterances: Vec<Utterance>,
}

impl Transcript {
    pub fn new(level: Level, utterances: Vec<Utterance>) -> Result<Self, LexiconError> {
        let mut ids = HashSet::new();
        for u in &utterances {
            if !ids.insert(u.id.as_str()) {
                return Err(LexiconError::DuplicateUtteranceId(u.id.clone()));
            }
        }
        Ok(Transcript { level, utterances })
    }

    pub fn parse(text: &str, level: Level) -> Result<Self, LexiconError> {
        let mut utterances = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = raw.split('\t');
            let id = fields.next().unwrap_or("").trim();
            let fold = fields
                .next()
                .ok_or_else(|| LexiconError::Parse { line, msg: "missing fold field".into() })?
                .trim();
            let labels = fields
                .next()
                .ok_or_else(|| LexiconError::Parse { line, msg: "missing label field".into() })?;
            if fields.next().is_some() {
                return Err(LexiconError::Parse { line, msg: "too many tab-separated fields".into() });
            }
            if id.is_empty() {
                return Err(LexiconError::Parse { line, msg: "empty utterance id".into() });
            }
            utterances.push(Utterance {
                id: id.to_string(),
                fold: fold.to_string(),
                labels: labels.split_whitespace().map(str::to_string).collect(),
            });
        }
        Transcript::new(level, utterances)
    }

    pub fn from_path(path: impl AsRef<Path>, level: Level) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path)?;
        Transcript::parse(&text, level)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&u.id);
            out.push('\t');
            out.push_str(&u.fold);
            out.push('\t');
            out.push_str(&u.labels.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn fold_tags(&self) -> BTreeSet<&str> {
        self.utterances.iter().map(|u| u.fold.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantPolicy {
    /// Take each word's first listed pronunciation.
    First,
    /// Keep every combination of pronunciation choices.
    All,
}

/// One utterance's phoneme-level reading(s). Under `VariantPolicy::First`
/// there is exactly one variant; under `All`, the cross-product of the
/// words' pronunciations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceExpansion {
    pub id: String,
    pub fold: String,
    pub variants: Vec<Vec<String>>,
}

pub fn words_to_phonemes(
    t: &Transcript,
    dict: &PronDict,
    policy: VariantPolicy,
) -> Result<Vec<UtteranceExpansion>, LexiconError> {
    let mut out = Vec::with_capacity(t.utterances.len());
    for u in &t.utterances {
        let mut variants: Vec<Vec<String>> = vec![Vec::new()];
        for word in &u.labels {
            let prons = dict
                .pronunciations(word)
                .ok_or_else(|| LexiconError::OutOfVocabulary(word.clone()))?;
            match policy {
                VariantPolicy::First => {
                    for v in &mut variants {
                        v.extend(prons[0].iter().cloned());
                    }
                }
                VariantPolicy::All => {
                    let mut next = Vec::with_capacity(variants.len() * prons.len());
                    for v in &variants {
                        for p in prons {
                            let mut w = v.clone();
                            w.extend(p.iter().cloned());
                            next.push(w);
                        }
                    }
                    variants = next;
                }
            }
        }
        out.push(UtteranceExpansion { id: u.id.clone(), fold: u.fold.clone(), variants });
    }
    Ok(out)
}

/// First-pronunciation expansion straight to a phoneme transcript.
pub fn words_to_phonemes_first(t: &Transcript, dict: &PronDict) -> Result<Transcript, LexiconError> {
    let expansions = words_to_phonemes(t, dict, VariantPolicy::First)?;
    let utterances = expansions
        .into_iter()
        .map(|e| Utterance {
            id: e.id,
            fold: e.fold,
            labels: e.variants.into_iter().next().expect("First policy yields one variant"),
        })
        .collect();
    Transcript::new(Level::Phoneme, utterances)
}

/// Label-by-label substitution of phonemes with their viseme class labels;
/// per-utterance lengths are preserved.
pub fn phonemes_to_visemes(t: &Transcript, map: &P2VMap) -> Result<Transcript, LexiconError> {
    let mut utterances = Vec::with_capacity(t.utterances.len());
    for u in &t.utterances {
        let labels = u
            .labels
            .iter()
            .map(|p| {
                map.viseme_of(p)
                    .map(str::to_string)
                    .ok_or_else(|| LexiconError::Uncovered(p.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        utterances.push(Utterance { id: u.id.clone(), fold: u.fold.clone(), labels });
    }
    Transcript::new(Level::Viseme, utterances)
}

/// Translates every pronunciation to viseme labels. Collisions introduced by
/// the translation are kept; they are exactly the visual homophones.
pub fn viseme_dict(dict: &PronDict, map: &P2VMap) -> Result<PronDict, LexiconError> {
    let mut out = PronDict::new();
    for (word, prons) in dict.iter() {
        for p in prons {
            let translated = p
                .iter()
                .map(|ph| {
                    map.viseme_of(ph)
                        .map(str::to_string)
                        .ok_or_else(|| LexiconError::Uncovered(ph.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(word, translated);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomophoneGroup {
    pub labels: Vec<String>,
    /// Distinct words sharing this viseme string, sorted.
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomophoneReport {
    /// Number of distinct viseme strings (tokens).
    pub token_count: usize,
    pub groups: Vec<HomophoneGroup>,
}

/// Groups a viseme-level dictionary by identical pronunciation strings.
pub fn homophone_tokens(vdict: &PronDict) -> HomophoneReport {
    let mut by_string: BTreeMap<Vec<String>, BTreeSet<String>> = BTreeMap::new();
    for (word, prons) in vdict.iter() {
        for p in prons {
            by_string.entry(p.clone()).or_default().insert(word.to_string());
        }
    }
    let groups: Vec<HomophoneGroup> = by_string
        .into_iter()
        .map(|(labels, words)| HomophoneGroup { labels, words: words.into_iter().collect() })
        .collect();
    HomophoneReport { token_count: groups.len(), groups }
}

/// Expected success of guessing a word by picking a token uniformly, then a
/// word within the token weighted by the token's share of the vocabulary:
/// sum of (TC_i / W) * (1 / N).
pub fn guessing_baseline(token_counts: &[u64], total_words: u64) -> Result<f64, LexiconError> {
    if token_counts.is_empty() {
        return Err(LexiconError::NoTokens);
    }
    let sum: u64 = token_counts.iter().sum();
    if sum != total_words || total_words == 0 {
        return Err(LexiconError::InconsistentCounts { sum, total: total_words });
    }
    let n = token_counts.len() as f64;
    Ok(token_counts.iter().map(|&tc| tc as f64 / total_words as f64 / n).sum())
}
