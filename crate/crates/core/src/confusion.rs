use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use thiserror::Error;

use crate::scoring::{AlignOp, Alignment};

#[derive(Debug, Error)]
pub enum ConfusionError {
    #[error("labels must be unique, '{0}' repeats")]
    DuplicateLabel(String),
    #[error("counts must be square over {labels} labels, row {row} has {got} cells")]
    NotSquare { labels: usize, row: usize, got: usize },
    #[error("label sets differ: {0}")]
    LabelMismatch(String),
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Square count table over one label set: `count(t, h)` is how often true
/// class `t` was recognized as class `h`. Rows are true labels, columns are
/// estimated labels, both in the same order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, ConfusionError> {
        let n = labels.len();
        if counts.len() != n {
            return Err(ConfusionError::NotSquare { labels: n, row: n, got: counts.len() });
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != n {
                return Err(ConfusionError::NotSquare { labels: n, row: i, got: row.len() });
            }
        }
        let mut index = HashMap::with_capacity(n);
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(ConfusionError::DuplicateLabel(l.clone()));
            }
        }
        Ok(ConfusionMatrix { labels, index, counts })
    }

    pub fn zero(labels: Vec<String>) -> Result<Self, ConfusionError> {
        let n = labels.len();
        ConfusionMatrix::new(labels, vec![vec![0; n]; n])
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn count(&self, true_label: &str, est_label: &str) -> Result<u64, ConfusionError> {
        let t = self.index_of(true_label).ok_or_else(|| ConfusionError::UnknownLabel(true_label.into()))?;
        let h = self.index_of(est_label).ok_or_else(|| ConfusionError::UnknownLabel(est_label.into()))?;
        Ok(self.counts[t][h])
    }

    pub fn count_at(&self, t: usize, h: usize) -> u64 {
        self.counts[t][h]
    }

    pub fn add(&mut self, true_label: &str, est_label: &str, n: u64) -> Result<(), ConfusionError> {
        let t = self.index_of(true_label).ok_or_else(|| ConfusionError::UnknownLabel(true_label.into()))?;
        let h = self.index_of(est_label).ok_or_else(|| ConfusionError::UnknownLabel(est_label.into()))?;
        self.counts[t][h] += n;
        Ok(())
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t].iter().sum()
    }

    pub fn col_sum(&self, h: usize) -> u64 {
        self.counts.iter().map(|row| row[h]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Reads the CSV layout written by `to_csv`: header `label,<est...>`,
    /// then one row per true label. `#` comment lines are skipped.
    pub fn from_csv(reader: impl Read) -> Result<Self, ConfusionError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = rdr.records();
        let header = match rows.next() {
            Some(r) => r.map_err(|e| ConfusionError::Csv { line: 1, msg: e.to_string() })?,
            None => return ConfusionMatrix::new(Vec::new(), Vec::new()),
        };
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = labels.len();
        let mut counts: Vec<Vec<u64>> = Vec::with_capacity(n);
        let mut seen_true: Vec<String> = Vec::with_capacity(n);
        for (i, rec) in rows.enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| ConfusionError::Csv { line, msg: e.to_string() })?;
            if rec.len() != n + 1 {
                return Err(ConfusionError::Csv {
                    line,
                    msg: format!("expected {} cells, got {}", n + 1, rec.len()),
                });
            }
            seen_true.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    cell.parse::<u64>().map_err(|_| ConfusionError::Csv {
                        line,
                        msg: format!("bad count '{cell}'"),
                    })
                })
                .collect::<Result<Vec<u64>, _>>()?;
            counts.push(row);
        }
        if seen_true != labels {
            return Err(ConfusionError::LabelMismatch(format!(
                "row labels {seen_true:?} do not match header labels {labels:?}"
            )));
        }
        ConfusionMatrix::new(labels, counts)
    }

    pub fn parse_csv(text: &str) -> Result<Self, ConfusionError> {
        ConfusionMatrix::from_csv(text.as_bytes())
    }

    pub fn to_csv(&self, mut writer: impl Write) -> Result<(), ConfusionError> {
        let mut out = String::from("label");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            out.push_str(&self.labels[t]);
            for c in row {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        writer.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Element-wise sum over matrices sharing one label set; the first matrix's
/// label order wins.
pub fn accumulate(matrices: &[ConfusionMatrix]) -> Result<ConfusionMatrix, ConfusionError> {
    let Some(first) = matrices.first() else {
        return ConfusionMatrix::new(Vec::new(), Vec::new());
    };
    let want: HashSet<&str> = first.labels.iter().map(String::as_str).collect();
    let mut sum = first.clone();
    for m in &matrices[1..] {
        let got: HashSet<&str> = m.labels.iter().map(String::as_str).collect();
        if got != want {
            let missing: Vec<&&str> = want.difference(&got).collect();
            let extra: Vec<&&str> = got.difference(&want).collect();
            return Err(ConfusionError::LabelMismatch(format!(
                "missing {missing:?}, unexpected {extra:?}"
            )));
        }
        for (t, label_t) in m.labels.iter().enumerate() {
            let st = sum.index[label_t];
            for (h, label_h) in m.labels.iter().enumerate() {
                let sh = sum.index[label_h];
                sum.counts[st][sh] += m.counts[t][h];
            }
        }
    }
    Ok(sum)
}

/// Column-normalized confusion: `prob(t, h)` estimates Pr{true = t | est = h}.
/// Columns that never fired stay all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedConfusion {
    labels: Vec<String>,
    probs: Vec<Vec<f64>>,
}

impl NormalizedConfusion {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn prob_at(&self, t: usize, h: usize) -> f64 {
        self.probs[t][h]
    }
}

pub fn column_normalize(k: &ConfusionMatrix) -> NormalizedConfusion {
    let n = k.len();
    let mut probs = vec![vec![0.0; n]; n];
    for h in 0..n {
        let sum = k.col_sum(h);
        if sum == 0 {
            continue;
        }
        for (t, row) in probs.iter_mut().enumerate() {
            row[h] = k.count_at(t, h) as f64 / sum as f64;
        }
    }
    NormalizedConfusion { labels: k.labels.clone(), probs }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub label: String,
    /// Diagonal share of the label's column, or None when the label never
    /// appeared in classifier output.
    pub value: Option<f64>,
}

/// Per-label Pr{class | classified-as-class}, ranked descending; labels with
/// empty columns trail the list. Ties rank lexicographically.
pub fn class_contribution(k: &ConfusionMatrix) -> Vec<Contribution> {
    let mut defined: Vec<Contribution> = Vec::new();
    let mut undefined: Vec<Contribution> = Vec::new();
    for (j, label) in k.labels.iter().enumerate() {
        let sum = k.col_sum(j);
        if sum == 0 {
            undefined.push(Contribution { label: label.clone(), value: None });
        } else {
            defined.push(Contribution {
                label: label.clone(),
                value: Some(k.count_at(j, j) as f64 / sum as f64),
            });
        }
    }
    defined.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });
    undefined.sort_by(|a, b| a.label.cmp(&b.label));
    defined.extend(undefined);
    defined
}

/// Insertion and deletion tallies kept outside the square matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InsDelTally {
    pub insertions: BTreeMap<String, u64>,
    pub deletions: BTreeMap<String, u64>,
}

/// Builds a confusion matrix from alignment ops: matches and substitutions
/// land in the matrix (labels sorted), insertions and deletions in the tally.
pub fn build_from_alignments(alignments: &[Alignment]) -> (ConfusionMatrix, InsDelTally) {
    let mut labels: HashSet<&str> = HashSet::new();
    for a in alignments {
        for op in a.ops() {
            match op {
                AlignOp::Match { t, h } | AlignOp::Sub { t, h } => {
                    labels.insert(t.as_str());
                    labels.insert(h.as_str());
                }
                AlignOp::Ins { .. } | AlignOp::Del { .. } => {}
            }
        }
    }
    let mut labels: Vec<String> = labels.into_iter().map(str::to_string).collect();
    labels.sort();
    let mut k = ConfusionMatrix::zero(labels).expect("sorted labels are unique");
    let mut tally = InsDelTally::default();
    for a in alignments {
        for op in a.ops() {
            match op {
                AlignOp::Match { t, h } | AlignOp::Sub { t, h } => {
                    k.add(t, h, 1).expect("labels were collected above");
                }
                AlignOp::Ins { h } => *tally.insertions.entry(h.clone()).or_default() += 1,
                AlignOp::Del { t } => *tally.deletions.entry(t.clone()).or_default() += 1,
            }
        }
    }
    (k, tally)
}
