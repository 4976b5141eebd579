//! Training: flat start, embedded Baum-Welch re-estimation, forced
//! alignment, and weak-learning initialization of phoneme models from
//! viseme parents.
//!
//! Re-estimation is "embedded": each utterance's transcript is expanded
//! into a chain of models, forward-backward statistics are gathered over
//! the whole chain in log space, and statistics for repeated labels are
//! pooled across positions and utterances before the update.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::p2vmap::P2VMap;

use super::features::FeatureStream;
use super::model::{log_sum_exp, Gaussian, HmmModel, Mixture, ModelError, ModelSet, LOG_ZERO};

/// Variance floor as a fraction of the per-dimension global variance.
pub const FLOOR_SCALE: f64 = 1e-4;
/// Absolute fallback floor for dimensions whose global variance is zero.
pub const ABS_FLOOR: f64 = 1e-8;
/// Occupancy below which a mixture component keeps its previous parameters.
const MIN_OCC: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training streams supplied")]
    EmptyTraining,
    #[error("no model labels supplied")]
    NoLabels,
    #[error("stream {id}: dimension {got}, expected {want}")]
    DimMismatch { id: String, want: usize, got: usize },
    #[error("no model for label {0}")]
    UnknownLabel(String),
    #[error("stream {id}: transcript is empty")]
    EmptyTranscript { id: String },
    #[error("{streams} streams but {transcripts} transcripts")]
    TranscriptMismatch { streams: usize, transcripts: usize },
    #[error("stream {id}: {frames} frames cannot fit {states} chained states")]
    Infeasible { id: String, frames: usize, states: usize },
    #[error("phoneme {0} is not covered by the map")]
    NotInMap(String),
    #[error("phoneme {phoneme}: no parent model for viseme {viseme}")]
    MissingParent { phoneme: String, viseme: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Prototype shape used by [`flat_start`].
#[derive(Debug, Clone)]
pub struct ProtoConfig {
    pub n_states: usize,
    pub n_mix: usize,
    pub seed: u64,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        Self { n_states: 3, n_mix: 5, seed: 0 }
    }
}

/// One aligned span of frames: `start` inclusive, `end` exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Builds one model per label, every model identical: global mean and
/// variance of the pooled training frames, uniform legal transitions, and
/// (for multi-component prototypes) mixture means displaced from the global
/// mean by seeded perturbations of at most a tenth of a standard deviation.
///
/// The returned set's variance floor is `FLOOR_SCALE` times the global
/// variance per dimension, with a small absolute fallback so constant
/// dimensions still get a usable Gaussian.
pub fn flat_start(
    labels: &[String],
    streams: &[FeatureStream],
    proto: &ProtoConfig,
) -> Result<ModelSet, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::NoLabels);
    }
    if streams.is_empty() || streams.iter().all(|s| s.is_empty()) {
        return Err(TrainError::EmptyTraining);
    }
    let dim = streams[0].dim();
    for s in streams {
        if s.dim() != dim {
            return Err(TrainError::DimMismatch { id: s.id.clone(), want: dim, got: s.dim() });
        }
    }

    let mut n = 0usize;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for s in streams {
        for frame in &s.frames {
            for (d, &v) in frame.iter().enumerate() {
                sum[d] += v;
                sq[d] += v * v;
            }
            n += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|&v| v / n as f64).collect();
    let gvar: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(&s2, &m)| (s2 / n as f64 - m * m).max(0.0))
        .collect();
    let floor: Vec<f64> = gvar
        .iter()
        .map(|&v| if v > 0.0 { FLOOR_SCALE * v } else { ABS_FLOOR })
        .collect();
    let var: Vec<f64> = gvar.iter().zip(&floor).map(|(&v, &f)| v.max(f)).collect();
    let sigma: Vec<f64> = var.iter().map(|&v| v.sqrt()).collect();

    // One prototype, cloned per label, so all flat-start models are
    // element-wise identical.
    let mut rng = ChaCha8Rng::seed_from_u64(proto.seed);
    let mut components = Vec::with_capacity(proto.n_mix);
    for k in 0..proto.n_mix {
        let cmean: Vec<f64> = if proto.n_mix == 1 || k == 0 {
            mean.clone()
        } else {
            mean.iter()
                .zip(&sigma)
                .map(|(&m, &s)| m + 0.1 * s * rng.gen_range(-1.0..1.0))
                .collect()
        };
        components.push(Gaussian { mean: cmean, var: var.clone() });
    }
    let weights = vec![1.0 / proto.n_mix as f64; proto.n_mix];
    let proto_state = Mixture { weights, components };

    let side = proto.n_states + 2;
    let mut trans = vec![vec![0.0; side]; side];
    trans[0][1] = 1.0;
    for i in 1..=proto.n_states {
        trans[i][i] = 0.5;
        trans[i][i + 1] = 0.5;
    }

    let mut set = ModelSet::new(dim, floor);
    for label in labels {
        set.insert(HmmModel {
            label: label.clone(),
            trans: trans.clone(),
            states: vec![proto_state.clone(); proto.n_states],
        })?;
    }
    Ok(set)
}

/// A transcript expanded into a linear chain of emitting states.
struct Chain<'a> {
    models: Vec<&'a HmmModel>,
    /// chain state -> (token position, local emitting state)
    map: Vec<(usize, usize)>,
    lself: Vec<f64>,
    /// log probability of leaving chain state j forward; for the last state
    /// of a token this is the move into the model's exit.
    lfwd: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn build(set: &'a ModelSet, transcript: &[String]) -> Result<Self, TrainError> {
        let mut models = Vec::with_capacity(transcript.len());
        for label in transcript {
            models.push(
                set.get(label).ok_or_else(|| TrainError::UnknownLabel(label.clone()))?,
            );
        }
        let mut map = Vec::new();
        let mut lself = Vec::new();
        let mut lfwd = Vec::new();
        for (p, m) in models.iter().enumerate() {
            for i in 0..m.n_states() {
                map.push((p, i));
                lself.push(m.log_self(i));
                lfwd.push(m.log_forward(i));
            }
        }
        Ok(Self { models, map, lself, lfwd })
    }

    fn len(&self) -> usize {
        self.map.len()
    }

    fn emissions(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames
            .iter()
            .map(|o| {
                self.map
                    .iter()
                    .map(|&(p, i)| self.models[p].states[i].log_pdf(o))
                    .collect()
            })
            .collect()
    }
}

struct Lattice {
    ll: f64,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

/// Log-space forward-backward over a linear chain. `emis[t][j]` must hold
/// the log emission density of frame `t` in chain state `j`.
fn forward_backward(chain: &Chain, emis: &[Vec<f64>]) -> Lattice {
    let t_len = emis.len();
    let l = chain.len();
    let mut alpha = vec![vec![LOG_ZERO; l]; t_len];
    alpha[0][0] = emis[0][0];
    for t in 1..t_len {
        for j in 0..l {
            let stay = alpha[t - 1][j] + chain.lself[j];
            let step = if j > 0 { alpha[t - 1][j - 1] + chain.lfwd[j - 1] } else { LOG_ZERO };
            let prev = log_sum_exp(&[stay, step]);
            if prev > LOG_ZERO {
                alpha[t][j] = prev + emis[t][j];
            }
        }
    }
    let mut beta = vec![vec![LOG_ZERO; l]; t_len];
    beta[t_len - 1][l - 1] = chain.lfwd[l - 1];
    for t in (0..t_len - 1).rev() {
        for j in 0..l {
            let stay = chain.lself[j] + emis[t + 1][j] + beta[t + 1][j];
            let step = if j + 1 < l {
                chain.lfwd[j] + emis[t + 1][j + 1] + beta[t + 1][j + 1]
            } else {
                LOG_ZERO
            };
            beta[t][j] = log_sum_exp(&[stay, step]);
        }
    }
    let ll = alpha[t_len - 1][l - 1] + chain.lfwd[l - 1];
    Lattice { ll, alpha, beta }
}

#[derive(Clone)]
struct Acc {
    self_num: Vec<f64>,
    fwd_num: Vec<f64>,
    mix_w: Vec<Vec<f64>>,
    mix_x: Vec<Vec<Vec<f64>>>,
    mix_x2: Vec<Vec<Vec<f64>>>,
}

impl Acc {
    fn for_model(m: &HmmModel, dim: usize) -> Self {
        let n = m.n_states();
        let k = m.states[0].components.len();
        Self {
            self_num: vec![0.0; n],
            fwd_num: vec![0.0; n],
            mix_w: vec![vec![0.0; k]; n],
            mix_x: vec![vec![vec![0.0; dim]; k]; n],
            mix_x2: vec![vec![vec![0.0; dim]; k]; n],
        }
    }
}

/// Runs `passes` rounds of embedded Baum-Welch over the training set and
/// returns the updated models together with the data log likelihood
/// observed at the start of each pass (under that pass's input models).
///
/// When `align_at` is `Some(p)`, the transcripts are replaced by the label
/// sequences of a forced alignment after pass `p` completes. With one
/// transcript per stream the sequences are unchanged by construction; the
/// hook mirrors recipes that realign between re-estimation rounds, and the
/// likelihood guarantee is only stated between realignment events.
pub fn reestimate(
    set: &ModelSet,
    streams: &[FeatureStream],
    transcripts: &[Vec<String>],
    passes: usize,
    align_at: Option<usize>,
) -> Result<(ModelSet, Vec<f64>), TrainError> {
    if streams.len() != transcripts.len() {
        return Err(TrainError::TranscriptMismatch {
            streams: streams.len(),
            transcripts: transcripts.len(),
        });
    }
    if streams.is_empty() {
        return Err(TrainError::EmptyTraining);
    }
    for (s, t) in streams.iter().zip(transcripts) {
        if t.is_empty() {
            return Err(TrainError::EmptyTranscript { id: s.id.clone() });
        }
        if s.dim() != set.dim {
            return Err(TrainError::DimMismatch { id: s.id.clone(), want: set.dim, got: s.dim() });
        }
    }

    let mut current = set.clone();
    let mut working: Vec<Vec<String>> = transcripts.to_vec();
    let mut lls = Vec::with_capacity(passes);

    for pass in 1..=passes {
        let mut accs: BTreeMap<String, Acc> = current
            .models
            .iter()
            .map(|(l, m)| (l.clone(), Acc::for_model(m, current.dim)))
            .collect();
        let mut total_ll = 0.0;

        for (stream, transcript) in streams.iter().zip(&working) {
            let chain = Chain::build(&current, transcript)?;
            let t_len = stream.len();
            if t_len < chain.len() {
                return Err(TrainError::Infeasible {
                    id: stream.id.clone(),
                    frames: t_len,
                    states: chain.len(),
                });
            }
            let emis = chain.emissions(&stream.frames);
            let lat = forward_backward(&chain, &emis);
            if lat.ll == LOG_ZERO {
                return Err(TrainError::Infeasible {
                    id: stream.id.clone(),
                    frames: t_len,
                    states: chain.len(),
                });
            }
            total_ll += lat.ll;

            for (j, &(p, i)) in chain.map.iter().enumerate() {
                let label = &chain.models[p].label;
                let mix = &chain.models[p].states[i];
                let acc = accs.get_mut(label).unwrap();

                for t in 0..t_len {
                    let lgamma = lat.alpha[t][j] + lat.beta[t][j] - lat.ll;
                    if lgamma == LOG_ZERO {
                        continue;
                    }
                    // split state occupancy over mixture components
                    for (k, (w, g)) in mix.weights.iter().zip(&mix.components).enumerate() {
                        if *w <= 0.0 {
                            continue;
                        }
                        let post = w.ln() + g.log_pdf(&stream.frames[t]) - emis[t][j];
                        let c = (lgamma + post).exp();
                        if c == 0.0 {
                            continue;
                        }
                        acc.mix_w[i][k] += c;
                        for (d, &x) in stream.frames[t].iter().enumerate() {
                            acc.mix_x[i][k][d] += c * x;
                            acc.mix_x2[i][k][d] += c * x * x;
                        }
                    }
                    // transition events out of (t, j)
                    if t + 1 < t_len {
                        let stay =
                            lat.alpha[t][j] + chain.lself[j] + emis[t + 1][j] + lat.beta[t + 1][j]
                                - lat.ll;
                        acc.self_num[i] += stay.exp();
                        if j + 1 < chain.len() {
                            let step = lat.alpha[t][j]
                                + chain.lfwd[j]
                                + emis[t + 1][j + 1]
                                + lat.beta[t + 1][j + 1]
                                - lat.ll;
                            acc.fwd_num[i] += step.exp();
                        }
                    } else if j == chain.len() - 1 {
                        // the path must leave the final state through exit
                        acc.fwd_num[i] += (lat.alpha[t][j] + chain.lfwd[j] - lat.ll).exp();
                    }
                }
            }
        }
        lls.push(total_ll);

        let mut next = ModelSet::new(current.dim, current.var_floor.clone());
        for (label, model) in &current.models {
            let acc = &accs[label];
            let mut updated = model.clone();
            for i in 0..model.n_states() {
                let denom = acc.self_num[i] + acc.fwd_num[i];
                if denom > MIN_OCC {
                    updated.trans[i + 1][i + 1] = acc.self_num[i] / denom;
                    updated.trans[i + 1][i + 2] = acc.fwd_num[i] / denom;
                }
                let state_occ: f64 = acc.mix_w[i].iter().sum();
                if state_occ <= MIN_OCC {
                    continue; // unseen state keeps its parameters
                }
                let mix = &mut updated.states[i];
                for k in 0..mix.components.len() {
                    let occ = acc.mix_w[i][k];
                    mix.weights[k] = occ / state_occ;
                    if occ <= MIN_OCC {
                        continue; // starved component keeps mean and variance
                    }
                    let g = &mut mix.components[k];
                    for d in 0..current.dim {
                        let m = acc.mix_x[i][k][d] / occ;
                        let v = (acc.mix_x2[i][k][d] / occ - m * m).max(current.var_floor[d]);
                        g.mean[d] = m;
                        g.var[d] = v;
                    }
                }
            }
            next.insert(updated)?;
        }
        current = next;

        if align_at == Some(pass) && pass < passes {
            let mut realigned = Vec::with_capacity(streams.len());
            for (stream, transcript) in streams.iter().zip(&working) {
                let segs = forced_align(&current, stream, transcript)?;
                realigned.push(segs.into_iter().map(|s| s.label).collect());
            }
            working = realigned;
        }
    }
    Ok((current, lls))
}

/// Viterbi alignment of `stream` against a fixed label sequence. Returns
/// one segment per transcript token; segments are monotone, non-empty, and
/// cover every frame.
pub fn forced_align(
    set: &ModelSet,
    stream: &FeatureStream,
    transcript: &[String],
) -> Result<Vec<Segment>, TrainError> {
    if transcript.is_empty() {
        return Err(TrainError::EmptyTranscript { id: stream.id.clone() });
    }
    if stream.dim() != set.dim {
        return Err(TrainError::DimMismatch {
            id: stream.id.clone(),
            want: set.dim,
            got: stream.dim(),
        });
    }
    let chain = Chain::build(set, transcript)?;
    let t_len = stream.len();
    let l = chain.len();
    if t_len < l {
        return Err(TrainError::Infeasible { id: stream.id.clone(), frames: t_len, states: l });
    }
    let emis = chain.emissions(&stream.frames);

    let mut delta = vec![vec![LOG_ZERO; l]; t_len];
    let mut from_prev = vec![vec![false; l]; t_len];
    delta[0][0] = emis[0][0];
    for t in 1..t_len {
        for j in 0..l {
            let stay = delta[t - 1][j] + chain.lself[j];
            let step = if j > 0 { delta[t - 1][j - 1] + chain.lfwd[j - 1] } else { LOG_ZERO };
            let best = stay.max(step);
            if best > LOG_ZERO {
                delta[t][j] = best + emis[t][j];
                from_prev[t][j] = step > stay;
            }
        }
    }
    let final_score = delta[t_len - 1][l - 1] + chain.lfwd[l - 1];
    if final_score == LOG_ZERO {
        return Err(TrainError::Infeasible { id: stream.id.clone(), frames: t_len, states: l });
    }

    let mut path = vec![0usize; t_len];
    let mut j = l - 1;
    path[t_len - 1] = j;
    for t in (1..t_len).rev() {
        if from_prev[t][j] {
            j -= 1;
        }
        path[t - 1] = j;
    }

    let mut segments: Vec<Segment> = Vec::with_capacity(transcript.len());
    for (t, &j) in path.iter().enumerate() {
        let (p, _) = chain.map[j];
        if segments.len() == p + 1 {
            segments.last_mut().unwrap().end = t + 1;
        } else {
            segments.push(Segment { label: transcript[p].clone(), start: t, end: t + 1 });
        }
    }
    Ok(segments)
}

/// Clones the parent viseme model of every requested phoneme, relabelled
/// with the phoneme symbol. The copies are parameter-identical to their
/// parents, which makes the phoneme set decode-equivalent to the viseme set
/// until the copies are re-trained apart.
pub fn weak_learn_init(
    parents: &ModelSet,
    map: &P2VMap,
    phonemes: &[String],
) -> Result<ModelSet, TrainError> {
    let mut out = ModelSet::new(parents.dim, parents.var_floor.clone());
    for phoneme in phonemes {
        if out.get(phoneme).is_some() {
            continue;
        }
        let viseme = map
            .viseme_of(phoneme)
            .ok_or_else(|| TrainError::NotInMap(phoneme.clone()))?;
        let parent = parents.get(viseme).ok_or_else(|| TrainError::MissingParent {
            phoneme: phoneme.clone(),
            viseme: viseme.to_string(),
        })?;
        let mut model = parent.clone();
        model.label = phoneme.clone();
        out.insert(model)?;
    }
    Ok(out)
}
