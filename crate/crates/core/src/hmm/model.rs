//! Left-to-right HMMs with diagonal-covariance Gaussian mixture emissions.
//!
//! A model with `n` emitting states carries an `(n+2) x (n+2)` transition
//! matrix whose first row is the non-emitting entry state and whose last row
//! is the non-emitting exit state. Legal moves are entry into the first
//! state, self loops, single forward steps, and last state into exit, so
//! every model consumes at least `n` frames. A [`ModelSet`] groups models
//! sharing a feature dimensionality and a per-dimension variance floor.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use thiserror::Error;

pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model {label}: transition row {row} sums to {sum}, expected 1")]
    BadTransitionRow { label: String, row: usize, sum: f64 },
    #[error("model {label}: transition {from}->{to} is not a legal left-to-right move")]
    IllegalTransition { label: String, from: usize, to: usize },
    #[error("model {label}: state {state} mixture weights sum to {sum}, expected 1")]
    BadWeights { label: String, state: usize, sum: f64 },
    #[error("model {label}: state {state} component {component} variance below floor")]
    VarianceBelowFloor { label: String, state: usize, component: usize },
    #[error("model {label}: expected dimension {want}, found {got}")]
    DimMismatch { label: String, want: usize, got: usize },
    #[error("model {label}: needs at least one emitting state")]
    NoStates { label: String },
    #[error("duplicate model label {0}")]
    DuplicateLabel(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub const ROW_SUM_TOL: f64 = 1e-9;

/// A diagonal-covariance Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Gaussian {
    /// Log density at `x`. Dimensions are independent, so the log density is
    /// the sum of per-dimension terms.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut lp = 0.0;
        for ((&m, &v), &xi) in self.mean.iter().zip(&self.var).zip(x) {
            let diff = xi - m;
            lp += -0.5 * ((2.0 * PI * v).ln() + diff * diff / v);
        }
        lp
    }
}

/// A weighted mixture of Gaussians attached to one emitting state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian>,
}

impl Mixture {
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut terms = Vec::with_capacity(self.components.len());
        for (w, g) in self.weights.iter().zip(&self.components) {
            if *w > 0.0 {
                terms.push(w.ln() + g.log_pdf(x));
            }
        }
        log_sum_exp(&terms)
    }
}

/// Numerically stable log(sum(exp(terms))).
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

/// One left-to-right HMM.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    pub label: String,
    /// `(n_states + 2) x (n_states + 2)`; row 0 is entry, last row is exit.
    pub trans: Vec<Vec<f64>>,
    pub states: Vec<Mixture>,
}

impl HmmModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states
            .first()
            .and_then(|m| m.components.first())
            .map_or(0, |g| g.mean.len())
    }

    /// Log probability of the self loop on emitting state `i` (0-based).
    pub fn log_self(&self, i: usize) -> f64 {
        log_or_zero(self.trans[i + 1][i + 1])
    }

    /// Log probability of the forward move out of emitting state `i`:
    /// into the next state, or into exit for the last state.
    pub fn log_forward(&self, i: usize) -> f64 {
        log_or_zero(self.trans[i + 1][i + 2])
    }

    /// Validates left-to-right shape, row sums, weight sums, and the
    /// variance floor.
    pub fn validate(&self, dim: usize, floor: &[f64]) -> Result<(), ModelError> {
        let n = self.n_states();
        if n == 0 {
            return Err(ModelError::NoStates { label: self.label.clone() });
        }
        let side = n + 2;
        for (r, row) in self.trans.iter().enumerate() {
            if r == side - 1 {
                continue; // exit row carries no outgoing mass
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ModelError::BadTransitionRow {
                    label: self.label.clone(),
                    row: r,
                    sum,
                });
            }
            for (c, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let legal = if r == 0 { c == 1 } else { c == r || c == r + 1 };
                if !legal {
                    return Err(ModelError::IllegalTransition {
                        label: self.label.clone(),
                        from: r,
                        to: c,
                    });
                }
            }
        }
        for (s, mix) in self.states.iter().enumerate() {
            let wsum: f64 = mix.weights.iter().sum();
            if (wsum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ModelError::BadWeights {
                    label: self.label.clone(),
                    state: s,
                    sum: wsum,
                });
            }
            for (c, g) in mix.components.iter().enumerate() {
                if g.mean.len() != dim || g.var.len() != dim {
                    return Err(ModelError::DimMismatch {
                        label: self.label.clone(),
                        want: dim,
                        got: g.mean.len(),
                    });
                }
                for (d, &v) in g.var.iter().enumerate() {
                    if v < floor[d] - 1e-12 {
                        return Err(ModelError::VarianceBelowFloor {
                            label: self.label.clone(),
                            state: s,
                            component: c,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn log_or_zero(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        LOG_ZERO
    }
}

/// A labelled family of models sharing dimensionality and variance floor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub dim: usize,
    /// Per-dimension lower bound applied to every re-estimated variance.
    pub var_floor: Vec<f64>,
    pub models: BTreeMap<String, HmmModel>,
}

impl ModelSet {
    pub fn new(dim: usize, var_floor: Vec<f64>) -> Self {
        Self { dim, var_floor, models: BTreeMap::new() }
    }

    pub fn insert(&mut self, model: HmmModel) -> Result<(), ModelError> {
        model.validate(self.dim, &self.var_floor)?;
        if self.models.contains_key(&model.label) {
            return Err(ModelError::DuplicateLabel(model.label));
        }
        self.models.insert(model.label.clone(), model);
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<&HmmModel> {
        self.models.get(label)
    }

    pub fn labels(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for m in self.models.values() {
            m.validate(self.dim, &self.var_floor)?;
        }
        Ok(())
    }

    /// Self-describing text form. Floats use shortest round-trip notation,
    /// so parse-back reproduces the set exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("modelset v1\n");
        out.push_str(&format!("dim {}\n", self.dim));
        out.push_str(&format!("floor {}\n", join_floats(&self.var_floor)));
        for m in self.models.values() {
            out.push_str(&format!(
                "model {} states {} mixes {}\n",
                m.label,
                m.n_states(),
                m.states.first().map_or(0, |s| s.components.len())
            ));
            out.push_str("trans\n");
            for row in &m.trans {
                out.push_str(&format!("  {}\n", join_floats(row)));
            }
            for (i, mix) in m.states.iter().enumerate() {
                out.push_str(&format!("state {}\n", i + 1));
                for (w, g) in mix.weights.iter().zip(&mix.components) {
                    out.push_str(&format!("  weight {w}\n"));
                    out.push_str(&format!("  mean {}\n", join_floats(&g.mean)));
                    out.push_str(&format!("  var {}\n", join_floats(&g.var)));
                }
            }
            out.push_str("end\n");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let mut cursor = Cursor { lines: &lines, pos: 0 };

        let (n, header) = cursor.next("header")?;
        if header != "modelset v1" {
            return Err(ModelError::Parse { line: n, msg: "expected 'modelset v1'".into() });
        }
        let (n, dim_line) = cursor.next("dim")?;
        let dim: usize = field_after(dim_line, "dim")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ModelError::Parse { line: n, msg: "bad dim line".into() })?;
        let (n, floor_line) = cursor.next("floor")?;
        let var_floor = field_after(floor_line, "floor")
            .and_then(|s| parse_floats(s).ok())
            .ok_or_else(|| ModelError::Parse { line: n, msg: "bad floor line".into() })?;

        let mut set = ModelSet::new(dim, var_floor);
        while !cursor.done() {
            let (n, line) = cursor.next("model header")?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 || parts[0] != "model" || parts[2] != "states" || parts[4] != "mixes"
            {
                return Err(ModelError::Parse { line: n, msg: "expected model header".into() });
            }
            let label = parts[1].to_string();
            let n_states: usize = parts[3]
                .parse()
                .map_err(|_| ModelError::Parse { line: n, msg: "bad state count".into() })?;
            let n_mix: usize = parts[5]
                .parse()
                .map_err(|_| ModelError::Parse { line: n, msg: "bad mix count".into() })?;

            let (n, t) = cursor.next("trans")?;
            if t != "trans" {
                return Err(ModelError::Parse { line: n, msg: "expected trans".into() });
            }
            let mut trans = Vec::with_capacity(n_states + 2);
            for _ in 0..n_states + 2 {
                let (n, row) = cursor.next("transition row")?;
                let row = parse_floats(row).map_err(|msg| ModelError::Parse { line: n, msg })?;
                if row.len() != n_states + 2 {
                    return Err(ModelError::Parse { line: n, msg: "bad row width".into() });
                }
                trans.push(row);
            }

            let mut states = Vec::with_capacity(n_states);
            for s in 0..n_states {
                let (n, st) = cursor.next("state")?;
                if st != format!("state {}", s + 1) {
                    return Err(ModelError::Parse {
                        line: n,
                        msg: format!("expected 'state {}'", s + 1),
                    });
                }
                let mut weights = Vec::with_capacity(n_mix);
                let mut components = Vec::with_capacity(n_mix);
                for _ in 0..n_mix {
                    let (n, w) = cursor.next("weight")?;
                    let w: f64 = field_after(w, "weight")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| ModelError::Parse { line: n, msg: "bad weight".into() })?;
                    let (n, mean) = cursor.next("mean")?;
                    let mean = field_after(mean, "mean")
                        .and_then(|s| parse_floats(s).ok())
                        .ok_or_else(|| ModelError::Parse { line: n, msg: "bad mean".into() })?;
                    let (n, var) = cursor.next("var")?;
                    let var = field_after(var, "var")
                        .and_then(|s| parse_floats(s).ok())
                        .ok_or_else(|| ModelError::Parse { line: n, msg: "bad var".into() })?;
                    weights.push(w);
                    components.push(Gaussian { mean, var });
                }
                states.push(Mixture { weights, components });
            }
            let (n, e) = cursor.next("end")?;
            if e != "end" {
                return Err(ModelError::Parse { line: n, msg: "expected end".into() });
            }
            set.insert(HmmModel { label, trans, states })?;
        }
        Ok(set)
    }
}

struct Cursor<'a> {
    lines: &'a [(usize, &'a str)],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), ModelError> {
        let item = self.lines.get(self.pos).copied().ok_or_else(|| ModelError::Parse {
            line: self.lines.last().map_or(0, |(n, _)| *n),
            msg: format!("missing {what}"),
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn done(&self) -> bool {
        self.pos >= self.lines.len()
    }
}

fn join_floats(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|f| f.parse::<f64>().map_err(|_| format!("bad float {f:?}")))
        .collect()
}

fn field_after<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key).map(str::trim).filter(|s| !s.is_empty())
}
