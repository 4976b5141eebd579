//! Token-network decoding: maximum likelihood bigram estimation with floor
//! smoothing, and time-synchronous Viterbi recognition over a network of
//! token HMM chains.

use thiserror::Error;

use crate::lexicon::PronDict;

use super::features::FeatureStream;
use super::model::{HmmModel, ModelSet, LOG_ZERO, ROW_SUM_TOL};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("corpus has no utterances")]
    EmptyCorpus,
    #[error("stream {0} has no frames")]
    EmptyStream(String),
    #[error("stream {id}: dimension {got}, expected {want}")]
    DimMismatch { id: String, want: usize, got: usize },
    #[error("token {0} has no model and no dictionary entry")]
    UnknownToken(String),
    #[error("token {token}: no model for unit {unit}")]
    UnknownUnit { token: String, unit: String },
    #[error("network row {row} sums to {sum}, expected 1")]
    BadNetwork { row: String, sum: f64 },
    #[error("no feasible path through the network for stream {0}")]
    NoPath(String),
}

/// A bigram token network: start probabilities, token-to-token bigrams,
/// and per-token end probabilities. Every outgoing row, including the
/// start row, sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramNetwork {
    pub tokens: Vec<String>,
    pub start: Vec<f64>,
    /// Probability that an utterance is empty.
    pub start_end: f64,
    pub bigram: Vec<Vec<f64>>,
    pub end: Vec<f64>,
}

impl BigramNetwork {
    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let sum: f64 = self.start.iter().sum::<f64>() + self.start_end;
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(DecodeError::BadNetwork { row: "<start>".into(), sum });
        }
        for (i, row) in self.bigram.iter().enumerate() {
            let sum: f64 = row.iter().sum::<f64>() + self.end[i];
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(DecodeError::BadNetwork { row: self.tokens[i].clone(), sum });
            }
        }
        Ok(())
    }
}

/// Estimates a bigram network from transcripts by maximum likelihood, then
/// gives every unseen successor cell `floor` mass and renormalizes each row.
/// With `floor` zero the estimate is left untouched. Token order is sorted.
pub fn build_bigram(corpus: &[Vec<String>], floor: f64) -> Result<BigramNetwork, DecodeError> {
    if corpus.is_empty() {
        return Err(DecodeError::EmptyCorpus);
    }
    let mut tokens: Vec<String> = corpus
        .iter()
        .flatten()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    tokens.sort();
    let index: std::collections::HashMap<&str, usize> =
        tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let v = tokens.len();

    let mut start_counts = vec![0u64; v];
    let mut start_end_count = 0u64;
    let mut big = vec![vec![0u64; v]; v];
    let mut end = vec![0u64; v];
    for utt in corpus {
        match utt.first() {
            Some(first) => start_counts[index[first.as_str()]] += 1,
            None => start_end_count += 1,
        }
        for pair in utt.windows(2) {
            big[index[pair[0].as_str()]][index[pair[1].as_str()]] += 1;
        }
        if let Some(last) = utt.last() {
            end[index[last.as_str()]] += 1;
        }
    }

    // Normalize a row of (successor counts, end count), flooring zeros.
    let smooth = |counts: &[u64], end_count: u64| -> (Vec<f64>, f64) {
        let total: u64 = counts.iter().sum::<u64>() + end_count;
        let mut probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let mut end_p = end_count as f64 / total as f64;
        if floor > 0.0 {
            for p in probs.iter_mut() {
                if *p == 0.0 {
                    *p = floor;
                }
            }
            if end_p == 0.0 {
                end_p = floor;
            }
            let sum: f64 = probs.iter().sum::<f64>() + end_p;
            for p in probs.iter_mut() {
                *p /= sum;
            }
            end_p /= sum;
        }
        (probs, end_p)
    };

    let (start, start_end) = smooth(&start_counts, start_end_count);
    let mut bigram = Vec::with_capacity(v);
    let mut end_probs = Vec::with_capacity(v);
    for i in 0..v {
        let (row, e) = smooth(&big[i], end[i]);
        bigram.push(row);
        end_probs.push(e);
    }
    let net = BigramNetwork { tokens, start, start_end, bigram, end: end_probs };
    net.validate()?;
    Ok(net)
}

/// Grammar term for one network arc. A zero grammar scale ignores the
/// network probabilities entirely; otherwise a zero-probability arc is
/// impassable.
fn lm_term(scale: f64, prob: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else if prob > 0.0 {
        scale * prob.ln()
    } else {
        LOG_ZERO
    }
}

struct TokenChain<'a> {
    states: Vec<(&'a HmmModel, usize)>,
    lself: Vec<f64>,
    lfwd: Vec<f64>,
}

fn token_chain<'a>(
    set: &'a ModelSet,
    token: &str,
    dict: Option<&PronDict>,
) -> Result<TokenChain<'a>, DecodeError> {
    let units: Vec<String> = match dict {
        Some(d) => d
            .pronunciations(token)
            .and_then(|prons| prons.first().cloned())
            .ok_or_else(|| DecodeError::UnknownToken(token.to_string()))?,
        None => vec![token.to_string()],
    };
    let mut states = Vec::new();
    let mut lself = Vec::new();
    let mut lfwd = Vec::new();
    for unit in &units {
        let model = set.get(unit).ok_or_else(|| DecodeError::UnknownUnit {
            token: token.to_string(),
            unit: unit.clone(),
        })?;
        for i in 0..model.n_states() {
            states.push((model, i));
            lself.push(model.log_self(i));
            lfwd.push(model.log_forward(i));
        }
    }
    Ok(TokenChain { states, lself, lfwd })
}

/// Time-synchronous Viterbi over the token network. The grammar scale
/// multiplies log network probabilities, and the transition penalty is
/// subtracted once per token entered, the first token included. Returns the
/// best-path token sequence.
pub fn decode(
    set: &ModelSet,
    network: &BigramNetwork,
    stream: &FeatureStream,
    dict: Option<&PronDict>,
    grammar_scale: f64,
    transition_penalty: f64,
) -> Result<Vec<String>, DecodeError> {
    network.validate()?;
    if stream.is_empty() {
        return Err(DecodeError::EmptyStream(stream.id.clone()));
    }
    if stream.dim() != set.dim {
        return Err(DecodeError::DimMismatch {
            id: stream.id.clone(),
            want: set.dim,
            got: stream.dim(),
        });
    }
    let v = network.tokens.len();
    let chains: Vec<TokenChain> = network
        .tokens
        .iter()
        .map(|t| token_chain(set, t, dict))
        .collect::<Result<_, _>>()?;
    let offsets: Vec<usize> = chains
        .iter()
        .scan(0usize, |acc, c| {
            let o = *acc;
            *acc += c.states.len();
            Some(o)
        })
        .collect();
    let total: usize = chains.iter().map(|c| c.states.len()).sum();
    let t_len = stream.len();

    // backpointer per (t, global state): how the state was reached
    #[derive(Clone, Copy, PartialEq)]
    enum Bp {
        None,
        Stay,
        Step,
        Start,
        Enter { prev: usize },
    }

    let emis = |t: usize, q: usize, c: usize| -> f64 {
        let (model, i) = chains[q].states[c];
        model.states[i].log_pdf(&stream.frames[t])
    };

    let mut delta = vec![vec![LOG_ZERO; total]; t_len];
    let mut bp = vec![vec![Bp::None; total]; t_len];

    for (q, &sp) in network.start.iter().enumerate() {
        let s = lm_term(grammar_scale, sp);
        if s > LOG_ZERO {
            let g = offsets[q];
            delta[0][g] = s - transition_penalty + emis(0, q, 0);
            bp[0][g] = Bp::Start;
        }
    }

    for t in 1..t_len {
        // score of finishing each token at t-1
        let exit: Vec<f64> = (0..v)
            .map(|q| {
                let last = offsets[q] + chains[q].states.len() - 1;
                delta[t - 1][last] + chains[q].lfwd[chains[q].states.len() - 1]
            })
            .collect();
        for q in 0..v {
            let chain = &chains[q];
            for c in 0..chain.states.len() {
                let g = offsets[q] + c;
                let mut best = delta[t - 1][g] + chain.lself[c];
                let mut how = Bp::Stay;
                if c > 0 {
                    let step = delta[t - 1][g - 1] + chain.lfwd[c - 1];
                    if step > best {
                        best = step;
                        how = Bp::Step;
                    }
                } else {
                    for (p, &ex) in exit.iter().enumerate() {
                        if ex == LOG_ZERO {
                            continue;
                        }
                        let enter =
                            ex + lm_term(grammar_scale, network.bigram[p][q]) - transition_penalty;
                        if enter > best {
                            best = enter;
                            how = Bp::Enter { prev: p };
                        }
                    }
                }
                if best > LOG_ZERO {
                    delta[t][g] = best + emis(t, q, c);
                    bp[t][g] = how;
                }
            }
        }
    }

    let mut best_final = LOG_ZERO;
    let mut best_token = None;
    for q in 0..v {
        let last = offsets[q] + chains[q].states.len() - 1;
        let score = delta[t_len - 1][last]
            + chains[q].lfwd[chains[q].states.len() - 1]
            + lm_term(grammar_scale, network.end[q]);
        if score > best_final {
            best_final = score;
            best_token = Some(q);
        }
    }
    let Some(mut q) = best_token else {
        return Err(DecodeError::NoPath(stream.id.clone()));
    };

    let mut out_rev = Vec::new();
    let mut t = t_len - 1;
    let mut g = offsets[q] + chains[q].states.len() - 1;
    loop {
        match bp[t][g] {
            Bp::Stay => {
                t -= 1;
            }
            Bp::Step => {
                g -= 1;
                t -= 1;
            }
            Bp::Start => {
                out_rev.push(network.tokens[q].clone());
                break;
            }
            Bp::Enter { prev } => {
                out_rev.push(network.tokens[q].clone());
                q = prev;
                g = offsets[q] + chains[q].states.len() - 1;
                t -= 1;
            }
            Bp::None => return Err(DecodeError::NoPath(stream.id.clone())),
        }
    }
    out_rev.reverse();
    Ok(out_rev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::model::{Gaussian, Mixture};
    use crate::inventory::Inventory;
    use approx::assert_relative_eq;

    fn utts(specs: &[&str]) -> Vec<Vec<String>> {
        specs
            .iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn bigram_maximum_likelihood_without_floor() {
        let net = build_bigram(&utts(&["a b", "a b"]), 0.0).unwrap();
        assert_eq!(net.tokens, vec!["a", "b"]);
        let a = net.token_index("a").unwrap();
        let b = net.token_index("b").unwrap();
        assert_eq!(net.bigram[a][b], 1.0);
        assert_eq!(net.bigram[a][a], 0.0);
        assert_eq!(net.start[a], 1.0);
        assert_eq!(net.end[b], 1.0);
        assert_eq!(net.end[a], 0.0);
        net.validate().unwrap();
    }

    #[test]
    fn bigram_floor_fills_unseen_cells_and_rows_renormalize() {
        let net = build_bigram(&utts(&["a b c"]), 0.01).unwrap();
        assert_eq!(net.tokens.len(), 3);
        let a = net.token_index("a").unwrap();
        let b = net.token_index("b").unwrap();
        // a's successors: b once. Raw row (a,b,c,end) = (0,1,0,0); floored
        // cells get 0.01 each, so the row renormalizes by 1.03.
        assert_relative_eq!(net.bigram[a][b], 1.0 / 1.03, max_relative = 1e-12);
        assert_relative_eq!(net.bigram[a][a], 0.01 / 1.03, max_relative = 1e-12);
        for i in 0..3 {
            let sum: f64 = net.bigram[i].iter().sum::<f64>() + net.end[i];
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            for j in 0..3 {
                assert!(net.bigram[i][j] > 0.0);
            }
        }
        net.validate().unwrap();
    }

    #[test]
    fn bigram_empty_corpus_rejected_and_validation_catches_bad_rows() {
        assert!(matches!(build_bigram(&[], 0.01), Err(DecodeError::EmptyCorpus)));
        let mut net = build_bigram(&utts(&["a b"]), 0.0).unwrap();
        net.start[0] = 0.4;
        assert!(matches!(net.validate(), Err(DecodeError::BadNetwork { .. })));
    }

    fn point_model(label: &str, mean: f64) -> HmmModel {
        HmmModel {
            label: label.to_string(),
            trans: vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.5, 0.5],
                vec![0.0, 0.0, 0.0],
            ],
            states: vec![Mixture {
                weights: vec![1.0],
                components: vec![Gaussian { mean: vec![mean], var: vec![1.0] }],
            }],
        }
    }

    fn point_set(means: &[(&str, f64)]) -> ModelSet {
        let mut set = ModelSet::new(1, vec![1e-8]);
        for &(l, m) in means {
            set.insert(point_model(l, m)).unwrap();
        }
        set
    }

    fn frames(values: &[f64]) -> FeatureStream {
        FeatureStream::new("u", values.iter().map(|&v| vec![v]).collect(), Vec::new()).unwrap()
    }

    #[test]
    fn degenerate_network_forces_its_only_sequence() {
        let set = point_set(&[("a", 0.0), ("b", 0.0)]);
        let net = BigramNetwork {
            tokens: vec!["a".into(), "b".into()],
            start: vec![1.0, 0.0],
            start_end: 0.0,
            bigram: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            end: vec![0.0, 1.0],
        };
        // identical emissions everywhere: only the grammar decides
        let out = decode(&set, &net, &frames(&[7.0, 7.1, 6.9, 7.0]), None, 1.0, 0.0).unwrap();
        assert_eq!(out, vec!["a", "b"]);
    }

    fn uniform_network(tokens: &[&str]) -> BigramNetwork {
        let v = tokens.len();
        BigramNetwork {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            start: vec![1.0 / v as f64; v],
            start_end: 0.0,
            bigram: vec![vec![1.0 / (v + 1) as f64; v]; v],
            end: vec![1.0 / (v + 1) as f64; v],
        }
    }

    #[test]
    fn zero_grammar_scale_reduces_to_frame_argmax() {
        let set = point_set(&[("a", 0.0), ("b", 5.0), ("c", 10.0)]);
        let net = uniform_network(&["a", "b", "c"]);
        let values = [0.1, -0.2, 5.3, 4.9, 5.0, 10.2, 9.8, 0.0];
        let out = decode(&set, &net, &frames(&values), None, 0.0, 0.0).unwrap();
        // per-frame argmax collapsed over runs
        assert_eq!(out, vec!["a", "b", "c", "a"]);
    }

    #[test]
    fn transition_penalty_suppresses_token_insertions() {
        let set = point_set(&[("a", 0.0), ("b", 4.0)]);
        let net = uniform_network(&["a", "b"]);
        let values = [0.0, 4.0, 0.0];
        let free = decode(&set, &net, &frames(&values), None, 0.0, 0.0).unwrap();
        assert_eq!(free, vec!["a", "b", "a"]);
        let taxed = decode(&set, &net, &frames(&values), None, 0.0, 50.0).unwrap();
        assert_eq!(taxed.len(), 1);
    }

    #[test]
    fn grammar_scale_breaks_acoustic_ties() {
        let set = point_set(&[("a", 0.0), ("b", 0.0)]);
        let mut net = uniform_network(&["a", "b"]);
        net.start = vec![0.2, 0.8];
        let out = decode(&set, &net, &frames(&[0.0]), None, 1.0, 0.0).unwrap();
        assert_eq!(out, vec!["b"]);
    }

    #[test]
    fn dictionary_expands_tokens_to_unit_chains() {
        let set = point_set(&[("a", 0.0), ("b", 5.0)]);
        let inv = Inventory::parse("a consonant\nb consonant\n").unwrap();
        let dict = PronDict::parse("AB a b\nBA b a\n", &inv, Default::default()).unwrap();
        let net = uniform_network(&["AB", "BA"]);
        let out = decode(
            &set,
            &net,
            &frames(&[0.0, 0.1, 5.0, 5.1]),
            Some(&dict),
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(out, vec!["AB"]);
        let out = decode(
            &set,
            &net,
            &frames(&[5.0, 5.1, 0.0, 0.1]),
            Some(&dict),
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(out, vec!["BA"]);
    }

    #[test]
    fn unknown_tokens_and_units_are_reported() {
        let set = point_set(&[("a", 0.0)]);
        let net = uniform_network(&["a", "z"]);
        assert!(matches!(
            decode(&set, &net, &frames(&[0.0]), None, 1.0, 0.0),
            Err(DecodeError::UnknownUnit { .. })
        ));
        let inv = Inventory::parse("a consonant\n").unwrap();
        let dict = PronDict::parse("A a\n", &inv, Default::default()).unwrap();
        let net = uniform_network(&["A", "Z"]);
        assert!(matches!(
            decode(&set, &net, &frames(&[0.0]), Some(&dict), 1.0, 0.0),
            Err(DecodeError::UnknownToken(_))
        ));
    }

    /// Brute-force oracle: enumerate every token instance sequence that can
    /// cover T frames, score each end to end, and collect all optima. Ties
    /// are real (simultaneous exits carry identical transition mass), so the
    /// oracle accepts any sequence achieving the best score.
    fn optima_by_enumeration(
        set: &ModelSet,
        net: &BigramNetwork,
        stream: &FeatureStream,
        scale: f64,
        penalty: f64,
    ) -> Vec<Vec<String>> {
        #[allow(clippy::too_many_arguments)]
        fn go(
            set: &ModelSet,
            net: &BigramNetwork,
            stream: &FeatureStream,
            scale: f64,
            penalty: f64,
            t: usize,
            prev: Option<usize>,
            seq: &mut Vec<usize>,
            score: f64,
            scored: &mut Vec<(f64, Vec<String>)>,
        ) {
            let t_len = stream.len();
            if t == t_len {
                if let Some(p) = prev {
                    let total = score + lm_term(scale, net.end[p]);
                    if total > LOG_ZERO {
                        scored.push((
                            total,
                            seq.iter().map(|&q| net.tokens[q].clone()).collect(),
                        ));
                    }
                }
                return;
            }
            for q in 0..net.tokens.len() {
                let gram = match prev {
                    None => lm_term(scale, net.start[q]),
                    Some(p) => lm_term(scale, net.bigram[p][q]),
                };
                if gram == LOG_ZERO {
                    continue;
                }
                let model = set.get(&net.tokens[q]).unwrap();
                // single-state models: an instance spans `len` frames with
                // len-1 self loops and one exit
                for len in 1..=(t_len - t) {
                    let mut s = score + gram - penalty;
                    for dt in 0..len {
                        s += model.states[0].log_pdf(&stream.frames[t + dt]);
                    }
                    s += model.log_self(0) * (len - 1) as f64 + model.log_forward(0);
                    seq.push(q);
                    go(set, net, stream, scale, penalty, t + len, Some(q), seq, s, scored);
                    seq.pop();
                }
            }
        }
        let mut scored = Vec::new();
        go(set, net, stream, scale, penalty, 0, None, &mut Vec::new(), 0.0, &mut scored);
        let best = scored.iter().map(|(s, _)| *s).fold(LOG_ZERO, f64::max);
        let tol = 1e-9 * best.abs().max(1.0);
        scored
            .into_iter()
            .filter(|(s, _)| *s >= best - tol)
            .map(|(_, seq)| seq)
            .collect()
    }

    #[test]
    fn viterbi_matches_exhaustive_enumeration_on_small_networks() {
        use rand::Rng;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..25 {
            let set = point_set(&[("a", 0.0), ("b", 2.0)]);
            let net = build_bigram(
                &utts(&["a b", "b a b", "a", "b b"]),
                0.05,
            )
            .unwrap();
            let t_len = rng.gen_range(1..=5);
            let values: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-1.0..3.0)).collect();
            let stream = frames(&values);
            let scale = [0.0, 1.0, 3.0][case % 3];
            let penalty = [0.0, 0.7][case % 2];
            let got = decode(&set, &net, &stream, None, scale, penalty).unwrap();
            let optima = optima_by_enumeration(&set, &net, &stream, scale, penalty);
            assert!(
                optima.contains(&got),
                "case {case} values {values:?}: got {got:?}, optima {optima:?}"
            );
        }
    }
}
