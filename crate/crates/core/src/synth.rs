//! Synthetic corpora with a planted viseme structure.
//!
//! A [`PlantedWorld`] fixes a phoneme alphabet, a ground-truth map, and an
//! emission geometry: every viseme class gets a base mean on a grid with
//! `separation` standard deviations between neighbours, and every phoneme
//! in the class is displaced from that base by at most `epsilon` standard
//! deviations. With `epsilon` zero the phonemes of a class are acoustically
//! indistinguishable, which is exactly the degenerate case a derivation
//! run should collapse into the planted classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::hmm::FeatureStream;
use crate::inventory::Inventory;
use crate::lexicon::{Level, PronDict, Transcript, Utterance};
use crate::p2vmap::P2VMap;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("vocabulary word {word} uses {symbol}, which has no planted emission")]
    Uncovered { word: String, symbol: String },
    #[error("vocabulary is empty")]
    EmptyVocab,
    #[error("bad frame range {min}..{max}")]
    BadFrameRange { min: usize, max: usize },
    #[error("bad words-per-utterance range {min}..{max}")]
    BadWordRange { min: usize, max: usize },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("epsilon must be non-negative, got {0}")]
    BadEpsilon(f64),
    #[error("derived map does not cover planted symbol {0}")]
    NotCovered(String),
    #[error("world file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Inventory(#[from] crate::inventory::InventoryError),
    #[error(transparent)]
    Map(#[from] crate::p2vmap::P2VError),
    #[error(transparent)]
    Dict(#[from] crate::lexicon::LexiconError),
    #[error(transparent)]
    Feature(#[from] crate::hmm::FeatureError),
}

/// A fully specified synthetic world. `sigma` is the within-class standard
/// deviation, `separation` the gap between adjacent class bases in sigma
/// units, and `epsilon` the per-phoneme displacement scale in sigma units.
#[derive(Debug, Clone)]
pub struct PlantedWorld {
    pub inventory: Inventory,
    pub map: P2VMap,
    pub dim: usize,
    pub sigma: f64,
    pub separation: f64,
    pub epsilon: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl PlantedWorld {
    fn check(&self) -> Result<(), SynthError> {
        if self.dim == 0 {
            return Err(SynthError::ZeroDim);
        }
        if self.sigma <= 0.0 || self.sigma.is_nan() {
            return Err(SynthError::BadSigma(self.sigma));
        }
        if self.epsilon < 0.0 {
            return Err(SynthError::BadEpsilon(self.epsilon));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(SynthError::BadFrameRange { min: self.min_frames, max: self.max_frames });
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(SynthError::BadWordRange { min: self.min_words, max: self.max_words });
        }
        Ok(())
    }

    /// The emission mean of every planted phoneme: class base plus the
    /// phoneme's own displacement. Displacements are drawn once, in class
    /// order, from a generator that depends only on the world seed, so the
    /// same world always plants the same means.
    pub fn phoneme_means(&self) -> Result<BTreeMap<String, Vec<f64>>, SynthError> {
        self.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e3779b97f4a7c15));
        let mut means = BTreeMap::new();
        for (i, class) in self.map.viseme_classes().enumerate() {
            let base = i as f64 * self.separation * self.sigma;
            for member in &class.members {
                let mean: Vec<f64> = (0..self.dim)
                    .map(|_| {
                        let u: f64 = rng.gen_range(-1.0..1.0);
                        base + self.epsilon * self.sigma * u
                    })
                    .collect();
                means.insert(member.clone(), mean);
            }
        }
        Ok(means)
    }

    /// Serializes the world in the sectioned `key: value` format read back
    /// by [`PlantedWorld::parse`].
    pub fn to_text(&self, vocab: &PronDict) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim: {}", self.dim);
        let _ = writeln!(out, "sigma: {}", self.sigma);
        let _ = writeln!(out, "separation: {}", self.separation);
        let _ = writeln!(out, "epsilon: {}", self.epsilon);
        let _ = writeln!(out, "frames: {} {}", self.min_frames, self.max_frames);
        let _ = writeln!(out, "words: {} {}", self.min_words, self.max_words);
        let _ = writeln!(out, "seed: {}", self.seed);
        out.push_str("\n[inventory]\n");
        out.push_str(&self.inventory.to_text());
        out.push_str("\n[map]\n");
        out.push_str(&self.map.to_text());
        out.push_str("\n[vocab]\n");
        out.push_str(&vocab.to_text());
        out
    }

    /// Parses the sectioned world format: scalar `key: value` lines
    /// followed by `[inventory]`, `[map]`, and `[vocab]` sections in the
    /// same notation those types use on their own.
    pub fn parse(name: &str, text: &str) -> Result<(Self, PronDict), SynthError> {
        let mut scalars: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut section = String::new();
        let mut inventory_text = String::new();
        let mut map_text = String::new();
        let mut vocab_text = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            match section.as_str() {
                "" => {
                    let (key, value) = line.split_once(':').ok_or(SynthError::Parse {
                        line: lineno + 1,
                        msg: format!("expected 'key: value', got '{line}'"),
                    })?;
                    scalars
                        .insert(key.trim().to_string(), (lineno + 1, value.trim().to_string()));
                }
                "inventory" => {
                    inventory_text.push_str(line);
                    inventory_text.push('\n');
                }
                "map" => {
                    map_text.push_str(line);
                    map_text.push('\n');
                }
                "vocab" => {
                    vocab_text.push_str(line);
                    vocab_text.push('\n');
                }
                other => {
                    return Err(SynthError::Parse {
                        line: lineno + 1,
                        msg: format!("unknown section [{other}]"),
                    })
                }
            }
        }

        fn scalar<T: std::str::FromStr>(
            scalars: &BTreeMap<String, (usize, String)>,
            key: &str,
        ) -> Result<T, SynthError> {
            let (line, value) = scalars
                .get(key)
                .ok_or(SynthError::Parse { line: 0, msg: format!("missing key '{key}'") })?;
            value.parse().map_err(|_| SynthError::Parse {
                line: *line,
                msg: format!("bad value for '{key}': '{value}'"),
            })
        }
        fn range(
            scalars: &BTreeMap<String, (usize, String)>,
            key: &str,
        ) -> Result<(usize, usize), SynthError> {
            let (line, value) = scalars
                .get(key)
                .ok_or(SynthError::Parse { line: 0, msg: format!("missing key '{key}'") })?;
            let parts: Vec<&str> = value.split_whitespace().collect();
            let bad = || SynthError::Parse {
                line: *line,
                msg: format!("expected '{key}: min max', got '{value}'"),
            };
            if parts.len() != 2 {
                return Err(bad());
            }
            Ok((parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?))
        }

        let inventory = Inventory::parse(&inventory_text)?;
        let map = P2VMap::parse(format!("{name}-planted"), &map_text)?;
        let vocab = PronDict::parse(&vocab_text, &inventory, Default::default())?;
        let (min_frames, max_frames) = range(&scalars, "frames")?;
        let (min_words, max_words) = range(&scalars, "words")?;
        let world = PlantedWorld {
            inventory,
            map,
            dim: scalar(&scalars, "dim")?,
            sigma: scalar(&scalars, "sigma")?,
            separation: scalar(&scalars, "separation")?,
            epsilon: scalar(&scalars, "epsilon")?,
            min_frames,
            max_frames,
            min_words,
            max_words,
            seed: scalar(&scalars, "seed")?,
        };
        world.check()?;
        Ok((world, vocab))
    }
}

/// A generated corpus: one stream per utterance plus exact word-level and
/// phoneme-level transcripts.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub streams: Vec<FeatureStream>,
    pub words: Transcript,
    pub phonemes: Transcript,
}

/// Draws `n_utterances` utterances from the world. Words are sampled
/// uniformly from the vocabulary, each phoneme holds a uniform number of
/// frames in the configured range, and frames are spherical Gaussians
/// around the planted phoneme mean. One sub-seed is derived per utterance
/// from the world seed, so regeneration is reproducible utterance by
/// utterance.
pub fn generate(
    world: &PlantedWorld,
    n_utterances: usize,
    vocab: &PronDict,
) -> Result<SynthCorpus, SynthError> {
    let means = world.phoneme_means()?;
    if vocab.is_empty() {
        return Err(SynthError::EmptyVocab);
    }
    let word_list: Vec<&str> = vocab.words().collect();
    for word in &word_list {
        for pron in vocab.pronunciations(word).into_iter().flatten() {
            for symbol in pron {
                if !means.contains_key(symbol) {
                    return Err(SynthError::Uncovered {
                        word: word.to_string(),
                        symbol: symbol.clone(),
                    });
                }
            }
        }
    }

    let mut seed_rng = ChaCha8Rng::seed_from_u64(world.seed);
    let seeds: Vec<u64> = (0..n_utterances).map(|_| seed_rng.gen()).collect();

    let mut streams = Vec::with_capacity(n_utterances);
    let mut word_utts = Vec::with_capacity(n_utterances);
    let mut phone_utts = Vec::with_capacity(n_utterances);
    for (u, &seed) in seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let id = format!("utt-{:04}", u + 1);
        let n_words = rng.gen_range(world.min_words..=world.max_words);
        let words: Vec<String> = (0..n_words)
            .map(|_| word_list[rng.gen_range(0..word_list.len())].to_string())
            .collect();
        let mut phonemes = Vec::new();
        for word in &words {
            phonemes.extend(vocab.pronunciations(word).unwrap()[0].iter().cloned());
        }
        let mut frames = Vec::new();
        for symbol in &phonemes {
            let mean = &means[symbol];
            let len = rng.gen_range(world.min_frames..=world.max_frames);
            for _ in 0..len {
                let frame: Vec<f64> = mean
                    .iter()
                    .map(|&m| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + world.sigma * z
                    })
                    .collect();
                frames.push(frame);
            }
        }
        streams.push(FeatureStream { id: id.clone(), frames, labels: phonemes.clone() });
        word_utts.push(Utterance { id: id.clone(), fold: "all".into(), labels: words });
        phone_utts.push(Utterance { id, fold: "all".into(), labels: phonemes });
    }
    Ok(SynthCorpus {
        streams,
        words: Transcript::new(Level::Word, word_utts)?,
        phonemes: Transcript::new(Level::Phoneme, phone_utts)?,
    })
}

/// Variation-of-information distance between the planted partition and a
/// derived one, over the planted viseme-class members. Garbage and special
/// classes of the planted map contribute nothing; symbols the derived map
/// routes to garbage count as one extra derived block. Zero if and only if
/// the two partitions agree.
pub fn plant_recovery_check(world: &PlantedWorld, derived: &P2VMap) -> Result<f64, SynthError> {
    let mut planted_block: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, class) in world.map.viseme_classes().enumerate() {
        for m in &class.members {
            planted_block.insert(m, i);
        }
    }
    let mut derived_block: BTreeMap<&str, &str> = BTreeMap::new();
    for symbol in planted_block.keys() {
        let label = derived
            .viseme_of(symbol)
            .ok_or_else(|| SynthError::NotCovered(symbol.to_string()))?;
        derived_block.insert(symbol, label);
    }

    let n = planted_block.len() as f64;
    let mut joint: BTreeMap<(usize, &str), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<&str, f64> = BTreeMap::new();
    for (symbol, &a) in &planted_block {
        let b = derived_block[symbol];
        *joint.entry((a, b)).or_default() += 1.0 / n;
        *pa.entry(a).or_default() += 1.0 / n;
        *pb.entry(b).or_default() += 1.0 / n;
    }
    let h = |probs: &[f64]| -> f64 { -probs.iter().map(|&p| p * p.ln()).sum::<f64>() };
    let ha = h(&pa.values().copied().collect::<Vec<_>>());
    let hb = h(&pb.values().copied().collect::<Vec<_>>());
    let mut mi = 0.0;
    for (&(a, b), &pab) in &joint {
        mi += pab * (pab / (pa[&a] * pb[b])).ln();
    }
    // Block probabilities are multiples of 1/n, so any genuine disagreement
    // is far above rounding noise; snap that noise to an exact zero.
    let d = (ha + hb - 2.0 * mi).max(0.0);
    Ok(if d < 1e-9 { 0.0 } else { d })
}
