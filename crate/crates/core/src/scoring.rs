use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("alignment has no reference tokens")]
    EmptyReference,
    #[error("no fold values")]
    EmptyFolds,
    #[error("rankings disagree: {0}")]
    RankMismatch(String),
    #[error("need at least two ranked labels")]
    TooFewRanks,
    #[error("missing result for map '{map}', speaker '{speaker}'")]
    MissingCell { map: String, speaker: String },
    #[error("missing baseline for speaker '{0}'")]
    MissingBaseline(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlignOp {
    Match { t: String, h: String },
    Sub { t: String, h: String },
    Ins { h: String },
    Del { t: String },
}

/// Edit costs for the aligner. Matches are always free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditCosts {
    pub sub: u64,
    pub ins: u64,
    pub del: u64,
}

impl EditCosts {
    pub fn unit() -> Self {
        EditCosts { sub: 1, ins: 1, del: 1 }
    }

    /// The weighting HTK's HResults applies (sub 10, ins and del 7).
    pub fn htk() -> Self {
        EditCosts { sub: 10, ins: 7, del: 7 }
    }
}

impl Default for EditCosts {
    fn default() -> Self {
        EditCosts::unit()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    ops: Vec<AlignOp>,
    cost: u64,
}

impl Alignment {
    pub fn ops(&self) -> &[AlignOp] {
        &self.ops
    }

    pub fn cost(&self) -> u64 {
        self.cost
    }

    pub fn matches(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, AlignOp::Match { .. })).count()
    }

    pub fn substitutions(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, AlignOp::Sub { .. })).count()
    }

    pub fn insertions(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, AlignOp::Ins { .. })).count()
    }

    pub fn deletions(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, AlignOp::Del { .. })).count()
    }

    /// Reference token count: matches + substitutions + deletions.
    pub fn n(&self) -> usize {
        self.matches() + self.substitutions() + self.deletions()
    }

    /// (N - D - S) / N: the share of reference tokens recognized, blind to
    /// insertions.
    pub fn correctness(&self) -> Result<f64, ScoreError> {
        let n = self.n();
        if n == 0 {
            return Err(ScoreError::EmptyReference);
        }
        Ok((n - self.deletions() - self.substitutions()) as f64 / n as f64)
    }

    /// (N - D - S - I) / N: correctness with insertions charged as well, so
    /// it can go negative and never exceeds correctness.
    pub fn accuracy(&self) -> Result<f64, ScoreError> {
        let n = self.n();
        if n == 0 {
            return Err(ScoreError::EmptyReference);
        }
        Ok((n as f64 - (self.deletions() + self.substitutions() + self.insertions()) as f64)
            / n as f64)
    }
}

/// Minimum-cost alignment of hypothesis to reference. Where several paths tie
/// on cost, ops are resolved match, then substitution, then deletion, then
/// insertion, walking back from the sequence ends, so output is deterministic.
pub fn align(reference: &[String], hypothesis: &[String], costs: EditCosts) -> Alignment {
    let n = reference.len();
    let m = hypothesis.len();
    let mut dp = vec![vec![0u64; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate().skip(1) {
        row[0] = i as u64 * costs.del;
    }
    for (j, cell) in dp[0].iter_mut().enumerate().skip(1) {
        *cell = j as u64 * costs.ins;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = if reference[i - 1] == hypothesis[j - 1] {
                dp[i - 1][j - 1]
            } else {
                dp[i - 1][j - 1] + costs.sub
            };
            dp[i][j] = diag.min(dp[i - 1][j] + costs.del).min(dp[i][j - 1] + costs.ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && dp[i][j] == dp[i - 1][j - 1] {
            ops.push(AlignOp::Match { t: reference[i - 1].clone(), h: hypothesis[j - 1].clone() });
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + costs.sub {
            ops.push(AlignOp::Sub { t: reference[i - 1].clone(), h: hypothesis[j - 1].clone() });
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + costs.del {
            ops.push(AlignOp::Del { t: reference[i - 1].clone() });
            i -= 1;
        } else {
            ops.push(AlignOp::Ins { h: hypothesis[j - 1].clone() });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops, cost: dp[n][m] }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldStats {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 in the denominator); 0 for a single
    /// fold.
    pub sigma: f64,
    pub stderr: f64,
}

pub fn fold_stats(values: &[f64]) -> Result<FoldStats, ScoreError> {
    if values.is_empty() {
        return Err(ScoreError::EmptyFolds);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let sigma = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    Ok(FoldStats { values: values.to_vec(), mean, sigma, stderr: sigma / k.sqrt() })
}

/// Average ranks (1-based, ascending by score) with ties sharing their mean
/// rank.
pub fn rank_with_ties(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of two rank vectors.
pub fn spearman_from_ranks(rank_a: &[f64], rank_b: &[f64]) -> Result<f64, ScoreError> {
    if rank_a.len() != rank_b.len() {
        return Err(ScoreError::RankMismatch(format!(
            "{} vs {} entries",
            rank_a.len(),
            rank_b.len()
        )));
    }
    if rank_a.len() < 2 {
        return Err(ScoreError::TooFewRanks);
    }
    let n = rank_a.len() as f64;
    let ma = rank_a.iter().sum::<f64>() / n;
    let mb = rank_b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (a, b) in rank_a.iter().zip(rank_b) {
        num += (a - ma) * (b - mb);
        da += (a - ma).powi(2);
        db += (b - mb).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return Err(ScoreError::TooFewRanks);
    }
    Ok(num / (da * db).sqrt())
}

/// Spearman correlation between two orderings of the same label set, each
/// given best-first.
pub fn spearman(rank_a: &[String], rank_b: &[String]) -> Result<f64, ScoreError> {
    let set_a: HashSet<&str> = rank_a.iter().map(String::as_str).collect();
    let set_b: HashSet<&str> = rank_b.iter().map(String::as_str).collect();
    if set_a.len() != rank_a.len() || set_b.len() != rank_b.len() {
        return Err(ScoreError::RankMismatch("rankings repeat a label".into()));
    }
    if set_a != set_b {
        return Err(ScoreError::RankMismatch(format!(
            "label sets differ: only-a {:?}, only-b {:?}",
            set_a.difference(&set_b).collect::<Vec<_>>(),
            set_b.difference(&set_a).collect::<Vec<_>>()
        )));
    }
    let pos_b: HashMap<&str, f64> =
        rank_b.iter().enumerate().map(|(i, l)| (l.as_str(), (i + 1) as f64)).collect();
    let ra: Vec<f64> = (1..=rank_a.len()).map(|i| i as f64).collect();
    let rb: Vec<f64> = rank_a.iter().map(|l| pos_b[l.as_str()]).collect();
    spearman_from_ranks(&ra, &rb)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankTable {
    pub maps: Vec<String>,
    pub speakers: Vec<String>,
    /// scores[speaker][map], each in -2..=2.
    pub scores: Vec<Vec<i32>>,
    /// Column sums, one per map.
    pub totals: Vec<i64>,
}

/// Scores each (map, speaker) fold mean against that speaker's baseline mean
/// with a one-standard-error band: +-2 outside the band, +-1 inside it, 0 on
/// equality with the baseline or on a speaker's own map.
pub fn weighted_rank(
    maps: &[String],
    speakers: &[String],
    results: &BTreeMap<(String, String), FoldStats>,
    baselines: &BTreeMap<String, FoldStats>,
    own_map: &BTreeMap<String, String>,
) -> Result<RankTable, ScoreError> {
    let mut scores = Vec::with_capacity(speakers.len());
    let mut totals = vec![0i64; maps.len()];
    for speaker in speakers {
        let base = baselines
            .get(speaker)
            .ok_or_else(|| ScoreError::MissingBaseline(speaker.clone()))?;
        let mut row = Vec::with_capacity(maps.len());
        for (mi, map) in maps.iter().enumerate() {
            let cell = results.get(&(map.clone(), speaker.clone())).ok_or_else(|| {
                ScoreError::MissingCell { map: map.clone(), speaker: speaker.clone() }
            })?;
            let score = if own_map.get(speaker) == Some(map) {
                0
            } else {
                band_score(cell.mean, base.mean, base.stderr)
            };
            totals[mi] += score as i64;
            row.push(score);
        }
        scores.push(row);
    }
    Ok(RankTable { maps: maps.to_vec(), speakers: speakers.to_vec(), scores, totals })
}

fn band_score(mean: f64, base: f64, band: f64) -> i32 {
    if mean > base + band {
        2
    } else if mean > base {
        1
    } else if mean == base {
        0
    } else if mean >= base - band {
        -1
    } else {
        -2
    }
}
