use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::confusion::{accumulate, ConfusionError, ConfusionMatrix};
use crate::inventory::Inventory;
use crate::p2vmap::{P2VError, P2VMap, VisemeClass};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("confusion label '{0}' is not in the inventory")]
    UnknownLabel(String),
    #[error("unknown hold-out speaker '{0}'")]
    UnknownSpeaker(String),
    #[error("speaker-independent derivation needs at least two speakers, got {0}")]
    TooFewSpeakers(usize),
    #[error("no per-speaker confusion matrices")]
    NoSpeakers,
    #[error("bad target sizes: {0}")]
    BadTargetSizes(String),
    #[error("catalog has no viseme classes")]
    EmptyCatalog,
    #[error(transparent)]
    Confusion(#[from] ConfusionError),
    #[error(transparent)]
    Map(#[from] P2VError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMode {
    Strict,
    Relaxed,
}

/// Whether vowels and consonants may share a viseme class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcPolicy {
    Mixed,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Prefer the lexicographically smallest candidate.
    Lexicographic,
    /// Draw uniformly among tied candidates from the seeded generator.
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterConfig {
    pub mode: ClusterMode,
    pub vc_policy: VcPolicy,
    /// Class counts the merge sequence should emit; strictly decreasing,
    /// all at least 2. None keeps every size.
    pub target_sizes: Option<Vec<usize>>,
    pub tie_break: TieBreak,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            mode: ClusterMode::Strict,
            vc_policy: VcPolicy::Mixed,
            target_sizes: None,
            tie_break: TieBreak::Lexicographic,
            seed: 0,
        }
    }
}

fn viseme_label(i: usize) -> String {
    format!("v{:02}", i + 1)
}

/// Splits K's labels into the groups the strict pass treats differently:
/// specials pass through, unknown labels error out.
struct LabelSplit {
    /// Positive diagonal, no off-diagonal confusion in row or column.
    isolated: Vec<String>,
    /// At least one off-diagonal confusion: these enter the graph rounds.
    active: Vec<String>,
    /// All-zero row and column.
    dead: Vec<String>,
}

fn split_labels(k: &ConfusionMatrix, inventory: &Inventory) -> Result<LabelSplit, ClusterError> {
    let mut isolated = Vec::new();
    let mut active = Vec::new();
    let mut dead = Vec::new();
    for (i, label) in k.labels().iter().enumerate() {
        if !inventory.contains(label) {
            return Err(ClusterError::UnknownLabel(label.clone()));
        }
        if inventory.is_special(label) {
            continue;
        }
        let diag = k.count_at(i, i);
        let off = k.row_sum(i) + k.col_sum(i) - 2 * diag;
        if off == 0 && diag > 0 {
            isolated.push(label.clone());
        } else if off == 0 {
            dead.push(label.clone());
        } else {
            active.push(label.clone());
        }
    }
    isolated.sort();
    dead.sort();
    Ok(LabelSplit { isolated, active, dead })
}

fn mutual_confusion(k: &ConfusionMatrix, a: &str, b: &str) -> u64 {
    let (Some(i), Some(j)) = (k.index_of(a), k.index_of(b)) else {
        return 0;
    };
    k.count_at(i, j) + k.count_at(j, i)
}

fn same_side(inventory: &Inventory, a: &str, b: &str) -> bool {
    inventory.klass_of(a) == inventory.klass_of(b)
}

/// All maximal cliques of the graph, via Bron-Kerbosch with pivoting.
fn maximal_cliques(adj: &[Vec<bool>]) -> Vec<Vec<usize>> {
    fn expand(
        r: &mut Vec<usize>,
        p: BTreeSet<usize>,
        mut x: BTreeSet<usize>,
        adj: &[Vec<bool>],
        out: &mut Vec<Vec<usize>>,
    ) {
        if p.is_empty() && x.is_empty() {
            out.push(r.clone());
            return;
        }
        let pivot = p
            .iter()
            .chain(x.iter())
            .copied()
            .max_by_key(|&u| p.iter().filter(|&&v| adj[u][v]).count())
            .expect("p or x is non-empty");
        let candidates: Vec<usize> = p.iter().copied().filter(|&v| !adj[pivot][v]).collect();
        let mut p = p;
        for v in candidates {
            r.push(v);
            let p2 = p.iter().copied().filter(|&u| adj[v][u]).collect();
            let x2 = x.iter().copied().filter(|&u| adj[v][u]).collect();
            expand(r, p2, x2, adj, out);
            r.pop();
            p.remove(&v);
            x.insert(v);
        }
    }
    let mut out = Vec::new();
    expand(&mut Vec::new(), (0..adj.len()).collect(), BTreeSet::new(), adj, &mut out);
    out
}

/// One clustering round: the accepted clique among the current graph's
/// maximal cliques, largest first, then most total confusion, then the
/// configured tie rule.
fn pick_clique(
    nodes: &[String],
    adj: &[Vec<bool>],
    weight: &dyn Fn(&str, &str) -> u64,
    tie_break: TieBreak,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<String>> {
    let mut best: Vec<(usize, u64, Vec<String>)> = maximal_cliques(adj)
        .into_iter()
        .filter(|c| c.len() >= 2)
        .map(|c| {
            let mut members: Vec<String> = c.iter().map(|&i| nodes[i].clone()).collect();
            members.sort();
            let mut w = 0;
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    w += weight(&members[i], &members[j]);
                }
            }
            (members.len(), w, members)
        })
        .collect();
    if best.is_empty() {
        return None;
    }
    best.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    let ties: Vec<&(usize, u64, Vec<String>)> =
        best.iter().take_while(|c| (c.0, c.1) == (best[0].0, best[0].1)).collect();
    let chosen = match tie_break {
        TieBreak::Lexicographic => ties[0],
        TieBreak::Seeded => ties[rng.gen_range(0..ties.len())],
    };
    Some(chosen.2.clone())
}

/// Groups mutually confused phonemes: phonemes with no off-diagonal
/// confusion keep their own classes, then the tightest maximal cliques of
/// the confusion graph are peeled off round by round, and whatever the
/// rounds leave behind stays a singleton. Inventory symbols the matrix
/// never saw, and labels with all-zero rows and columns, fall into the
/// garbage class; sil and sp pass through.
pub fn strict_cluster(
    k: &ConfusionMatrix,
    inventory: &Inventory,
    cfg: &ClusterConfig,
) -> Result<P2VMap, ClusterError> {
    let split = split_labels(k, inventory)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut active: Vec<String> = split.active.clone();
    active.sort();
    loop {
        let adj: Vec<Vec<bool>> = active
            .iter()
            .map(|a| {
                active
                    .iter()
                    .map(|b| {
                        a != b
                            && mutual_confusion(k, a, b) > 0
                            && (cfg.vc_policy == VcPolicy::Mixed || same_side(inventory, a, b))
                    })
                    .collect()
            })
            .collect();
        let weight = |a: &str, b: &str| mutual_confusion(k, a, b);
        let Some(clique) = pick_clique(&active, &adj, &weight, cfg.tie_break, &mut rng) else {
            break;
        };
        active.retain(|l| !clique.contains(l));
        groups.push(clique);
    }

    let mut classes: Vec<VisemeClass> = Vec::new();
    for label in &split.isolated {
        classes.push(VisemeClass::viseme("", vec![label.clone()]));
    }
    for group in groups {
        classes.push(VisemeClass::viseme("", group));
    }
    for label in active {
        classes.push(VisemeClass::viseme("", vec![label]));
    }
    for (i, c) in classes.iter_mut().enumerate() {
        c.label = viseme_label(i);
    }

    let mut garbage: Vec<String> = split.dead;
    let seen: HashSet<&str> = k.labels().iter().map(String::as_str).collect();
    for p in inventory.iter() {
        if !p.klass.is_special() && !seen.contains(p.symbol.as_str()) {
            garbage.push(p.symbol.clone());
        }
    }
    garbage.sort();
    if !garbage.is_empty() {
        classes.push(VisemeClass::garbage(garbage));
    }
    for p in inventory.iter() {
        if p.klass.is_special() {
            classes.push(VisemeClass::special(&p.symbol, vec![p.symbol.clone()]));
        }
    }

    Ok(P2VMap::new("strict", classes)?)
}

/// Folds the strict map's singletons into the multi-phoneme class each is
/// most confused with, judging every singleton against the original strict
/// classes. Singletons with no confusion toward any such class stay put;
/// classes emptied by the fold drop out without relabeling the rest.
pub fn relaxed_cluster(
    k: &ConfusionMatrix,
    inventory: &Inventory,
    strict: &P2VMap,
    cfg: &ClusterConfig,
) -> Result<P2VMap, ClusterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let multi: Vec<&VisemeClass> =
        strict.viseme_classes().filter(|c| c.members.len() >= 2).collect();

    // singleton label -> destination class label
    let mut moves: HashMap<&str, &str> = HashMap::new();
    for class in strict.viseme_classes() {
        let [p] = class.members.as_slice() else { continue };
        let mut scored: Vec<(u64, &str)> = multi
            .iter()
            .filter(|c| {
                cfg.vc_policy == VcPolicy::Mixed
                    || c.members.iter().all(|m| same_side(inventory, m, p))
            })
            .map(|c| (c.members.iter().map(|m| mutual_confusion(k, p, m)).sum(), c.label.as_str()))
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        let Some(&(top, _)) = scored.first() else { continue };
        if top == 0 {
            continue;
        }
        let ties: Vec<&(u64, &str)> = scored.iter().take_while(|s| s.0 == top).collect();
        let dest = match cfg.tie_break {
            TieBreak::Lexicographic => ties[0].1,
            TieBreak::Seeded => ties[rng.gen_range(0..ties.len())].1,
        };
        moves.insert(p.as_str(), dest);
    }

    let mut classes: Vec<VisemeClass> = Vec::new();
    for class in strict.classes() {
        match class.members.as_slice() {
            [p] if moves.contains_key(p.as_str()) => continue,
            _ => {}
        }
        let mut next = class.clone();
        for (p, dest) in &moves {
            if *dest == class.label {
                next.members.push(p.to_string());
            }
        }
        next.members.sort();
        classes.push(next);
    }
    Ok(P2VMap::new("relaxed", classes)?)
}

/// Runs the configured clustering mode end to end.
pub fn cluster(
    k: &ConfusionMatrix,
    inventory: &Inventory,
    cfg: &ClusterConfig,
) -> Result<P2VMap, ClusterError> {
    let strict = strict_cluster(k, inventory, cfg)?;
    match cfg.mode {
        ClusterMode::Strict => Ok(strict),
        ClusterMode::Relaxed => relaxed_cluster(k, inventory, &strict, cfg),
    }
}

/// Builds one map from how often published maps agree: every unordered pair
/// of phonemes sharing a class in some catalog map is counted, and pairs are
/// replayed from the most common down. A pair may start a new class or pull
/// one loose phoneme into the class holding its partner; it never bridges
/// two established classes. Phonemes no map ever paired end up singletons.
pub fn common_pair_cluster(catalog: &[P2VMap]) -> Result<P2VMap, ClusterError> {
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut universe: BTreeSet<String> = BTreeSet::new();
    for map in catalog {
        for class in map.viseme_classes() {
            let mut members: Vec<&String> = class.members.iter().collect();
            members.sort();
            universe.extend(members.iter().map(|m| m.to_string()));
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    *counts.entry((members[i].clone(), members[j].clone())).or_default() += 1;
                }
            }
        }
    }
    if universe.is_empty() {
        return Err(ClusterError::EmptyCatalog);
    }

    let mut pairs: Vec<(&(String, String), &u64)> = counts.iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));

    let mut classes: Vec<BTreeSet<String>> = Vec::new();
    for ((a, b), _) in pairs {
        let ia = classes.iter().position(|c| c.contains(a));
        let ib = classes.iter().position(|c| c.contains(b));
        match (ia, ib) {
            (None, None) => {
                classes.push(BTreeSet::from([a.clone(), b.clone()]));
            }
            (Some(i), None) => {
                classes[i].insert(b.clone());
            }
            (None, Some(j)) => {
                classes[j].insert(a.clone());
            }
            (Some(i), Some(j)) if i == j => {}
            _ => {} // both already settled elsewhere: leave them be
        }
    }

    let placed: BTreeSet<&String> = classes.iter().flatten().collect();
    let strays: Vec<String> = universe.iter().filter(|p| !placed.contains(p)).cloned().collect();
    let mut out: Vec<VisemeClass> = classes
        .into_iter()
        .map(|c| VisemeClass::viseme("", c.into_iter().collect::<Vec<_>>()))
        .collect();
    out.extend(strays.into_iter().map(|p| VisemeClass::viseme("", vec![p])));
    for (i, c) in out.iter_mut().enumerate() {
        c.label = viseme_label(i);
    }
    Ok(P2VMap::new("common-pair", out)?)
}

/// The sequence of maps a merge run emits, largest class count first, plus
/// any warnings raised on the way down.
#[derive(Debug, Clone)]
pub struct MergeRun {
    pub maps: Vec<P2VMap>,
    pub warnings: Vec<String>,
}

/// Merges classes pairwise from singletons down to two classes, emitting a
/// map at every size. Each round column-normalizes the class-level counts
/// and joins the two classes, vowel with vowel or consonant with consonant,
/// whose two-way probability mass is largest.
pub fn controlled_merge(
    k: &ConfusionMatrix,
    inventory: &Inventory,
    cfg: &ClusterConfig,
) -> Result<MergeRun, ClusterError> {
    let mut labels: Vec<String> = Vec::new();
    let mut specials: Vec<String> = Vec::new();
    for label in k.labels() {
        if !inventory.contains(label) {
            return Err(ClusterError::UnknownLabel(label.clone()));
        }
        if inventory.is_special(label) {
            specials.push(label.clone());
        } else {
            labels.push(label.clone());
        }
    }
    let m = labels.len();
    if let Some(sizes) = &cfg.target_sizes {
        let decreasing = sizes.windows(2).all(|w| w[0] > w[1]);
        if sizes.is_empty() || !decreasing || sizes.iter().any(|&s| s < 2) || sizes[0] > m {
            return Err(ClusterError::BadTargetSizes(format!(
                "{sizes:?} must be strictly decreasing, at least 2, and at most {m}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut classes: Vec<Vec<String>> = labels.iter().map(|l| vec![l.clone()]).collect();
    let mut maps: Vec<P2VMap> = vec![emit_merge_map(&classes, &specials)?];
    let mut warnings: Vec<String> = Vec::new();
    let mut warned_side: HashSet<&'static str> = HashSet::new();

    while classes.len() > 2 {
        // Class-level counts, columns renormalized each round.
        let n = classes.len();
        let mut counts = vec![vec![0u64; n]; n];
        for (ci, members_i) in classes.iter().enumerate() {
            for (cj, members_j) in classes.iter().enumerate() {
                for a in members_i {
                    for b in members_j {
                        let (ia, ib) = (
                            k.index_of(a).expect("label came from k"),
                            k.index_of(b).expect("label came from k"),
                        );
                        counts[ci][cj] += k.count_at(ia, ib);
                    }
                }
            }
        }
        let mut probs = vec![vec![0.0f64; n]; n];
        for j in 0..n {
            let sum: u64 = (0..n).map(|i| counts[i][j]).sum();
            if sum == 0 {
                continue;
            }
            for (i, row) in probs.iter_mut().enumerate() {
                row[j] = counts[i][j] as f64 / sum as f64;
            }
        }

        let side = |c: &[String]| inventory.klass_of(&c[0]);
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if side(&classes[i]) == side(&classes[j]) {
                    candidates.push((probs[i][j] + probs[j][i], i, j));
                }
            }
        }
        let Some(top) = candidates
            .iter()
            .map(|c| c.0)
            .max_by(|a, b| a.partial_cmp(b).expect("probabilities are finite"))
        else {
            warnings.push(format!(
                "no mergeable pair left at {n} classes; vowels and consonants are both down to one class each side"
            ));
            break;
        };
        let mut ties: Vec<(usize, usize)> =
            candidates.iter().filter(|c| c.0 == top).map(|c| (c.1, c.2)).collect();
        ties.sort_by(|&(ai, aj), &(bi, bj)| {
            (&classes[ai], &classes[aj]).cmp(&(&classes[bi], &classes[bj]))
        });
        let (i, j) = match cfg.tie_break {
            TieBreak::Lexicographic => ties[0],
            TieBreak::Seeded => ties[rng.gen_range(0..ties.len())],
        };

        let absorbed = classes.remove(j);
        classes[i].extend(absorbed);
        classes[i].sort();

        for (name, klass) in [
            ("vowel", crate::inventory::PhonemeClass::Vowel),
            ("consonant", crate::inventory::PhonemeClass::Consonant),
        ] {
            let left = classes.iter().filter(|c| side(c) == Some(klass)).count();
            let other = classes.len() - left;
            if left == 1 && other > 1 && warned_side.insert(name) {
                warnings.push(format!(
                    "{name} side is down to a single class with {} classes total; later merges draw from the other side only",
                    classes.len()
                ));
            }
        }

        maps.push(emit_merge_map(&classes, &specials)?);
    }

    if let Some(sizes) = &cfg.target_sizes {
        let mut wanted: Vec<P2VMap> = Vec::with_capacity(sizes.len());
        for &s in sizes {
            match maps.iter().find(|m| m.viseme_classes().count() == s) {
                Some(m) => wanted.push(m.clone()),
                None => {
                    return Err(ClusterError::BadTargetSizes(format!(
                        "size {s} was not reached; the run stopped at {} classes",
                        maps.last().map(|m| m.viseme_classes().count()).unwrap_or(0)
                    )))
                }
            }
        }
        maps = wanted;
    }
    Ok(MergeRun { maps, warnings })
}

fn emit_merge_map(classes: &[Vec<String>], specials: &[String]) -> Result<P2VMap, ClusterError> {
    let mut out: Vec<VisemeClass> = classes
        .iter()
        .enumerate()
        .map(|(i, members)| VisemeClass::viseme(viseme_label(i), members.clone()))
        .collect();
    let name = format!("merged-{:02}", classes.len());
    for s in specials {
        out.push(VisemeClass::special(s, vec![s.clone()]));
    }
    Ok(P2VMap::new(name, out)?)
}

/// Derives a multi-speaker map (no hold-out) or a speaker-independent map
/// (one speaker's data withheld) by pooling per-speaker confusions and
/// clustering the sum.
pub fn derive_ms_si(
    per_speaker: &[(String, ConfusionMatrix)],
    hold_out: Option<&str>,
    inventory: &Inventory,
    cfg: &ClusterConfig,
) -> Result<P2VMap, ClusterError> {
    if per_speaker.is_empty() {
        return Err(ClusterError::NoSpeakers);
    }
    let kept: Vec<&ConfusionMatrix> = match hold_out {
        None => per_speaker.iter().map(|(_, k)| k).collect(),
        Some(out) => {
            if per_speaker.len() < 2 {
                return Err(ClusterError::TooFewSpeakers(per_speaker.len()));
            }
            if !per_speaker.iter().any(|(s, _)| s == out) {
                return Err(ClusterError::UnknownSpeaker(out.to_string()));
            }
            per_speaker.iter().filter(|(s, _)| s != out).map(|(_, k)| k).collect()
        }
    };
    let pooled = accumulate(&kept.into_iter().cloned().collect::<Vec<_>>())?;
    let map = cluster(&pooled, inventory, cfg)?;
    let name = match hold_out {
        None => "ms".to_string(),
        Some(s) => format!("si-{s}"),
    };
    Ok(map.renamed(&name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn demo_matrix() -> ConfusionMatrix {
        let labels: Vec<String> = (1..=7).map(|i| format!("p{i}")).collect();
        let rows: Vec<Vec<u64>> = vec![
            vec![1, 0, 0, 0, 0, 0, 4],
            vec![0, 0, 0, 2, 0, 0, 0],
            vec![1, 0, 0, 0, 0, 0, 1],
            vec![0, 2, 1, 0, 2, 0, 0],
            vec![3, 0, 1, 1, 1, 0, 0],
            vec![0, 0, 0, 0, 0, 4, 0],
            vec![1, 0, 3, 0, 0, 0, 1],
        ];
        ConfusionMatrix::new(labels, rows).unwrap()
    }

    fn demo_inventory() -> Inventory {
        let mut text = String::new();
        for i in 1..=7 {
            text.push_str(&format!("p{i} consonant\n"));
        }
        Inventory::parse(&text).unwrap()
    }

    fn members(map: &P2VMap, label: &str) -> Vec<String> {
        map.classes().iter().find(|c| c.label == label).unwrap().members.clone()
    }

    #[test]
    fn strict_reproduces_worked_clustering() {
        let map = strict_cluster(&demo_matrix(), &demo_inventory(), &Default::default()).unwrap();
        let got: Vec<(String, Vec<String>)> =
            map.classes().iter().map(|c| (c.label.clone(), c.members.clone())).collect();
        assert_eq!(
            got,
            vec![
                ("v01".into(), vec!["p6".into()]),
                ("v02".into(), vec!["p1".into(), "p3".into(), "p7".into()]),
                ("v03".into(), vec!["p2".into(), "p4".into()]),
                ("v04".into(), vec!["p5".into()]),
            ]
        );
    }

    #[test]
    fn relaxed_folds_singletons_into_closest_class() {
        let k = demo_matrix();
        let inv = demo_inventory();
        let cfg = ClusterConfig::default();
        let strict = strict_cluster(&k, &inv, &cfg).unwrap();
        let relaxed = relaxed_cluster(&k, &inv, &strict, &cfg).unwrap();
        let got: Vec<(String, Vec<String>)> =
            relaxed.classes().iter().map(|c| (c.label.clone(), c.members.clone())).collect();
        // p5 is drawn to {p1,p3,p7} (confusion 4 beats 3); p6 has no
        // confusion anywhere and keeps its class; v04 empties out.
        assert_eq!(
            got,
            vec![
                ("v01".into(), vec!["p6".into()]),
                ("v02".into(), vec!["p1".into(), "p3".into(), "p5".into(), "p7".into()]),
                ("v03".into(), vec!["p2".into(), "p4".into()]),
            ]
        );
    }

    #[test]
    fn uncovered_inventory_symbols_fall_into_garbage() {
        let mut text = String::new();
        for i in 1..=8 {
            text.push_str(&format!("p{i} consonant\n"));
        }
        text.push_str("sil silence\nsp short_pause\n");
        let inv = Inventory::parse(&text).unwrap();
        let map = strict_cluster(&demo_matrix(), &inv, &Default::default()).unwrap();
        assert_eq!(map.garbage().unwrap().members, vec!["p8".to_string()]);
        assert_eq!(map.viseme_of("sil"), Some("sil"));
        assert_eq!(map.viseme_of("sp"), Some("sp"));
        // All-zero rows and columns land there too.
        let labels: Vec<String> = vec!["a".into(), "b".into(), "z".into()];
        let k = ConfusionMatrix::new(
            labels,
            vec![vec![0, 2, 0], vec![1, 0, 0], vec![0, 0, 0]],
        )
        .unwrap();
        let inv = Inventory::parse("a consonant\nb consonant\nz consonant\n").unwrap();
        let map = strict_cluster(&k, &inv, &Default::default()).unwrap();
        assert_eq!(map.garbage().unwrap().members, vec!["z".to_string()]);
        assert_eq!(members(&map, "v01"), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn split_policy_keeps_vowels_and_consonants_apart() {
        let k = ConfusionMatrix::new(
            vec!["aa".into(), "b".into()],
            vec![vec![0, 3], vec![2, 0]],
        )
        .unwrap();
        let inv = Inventory::parse("aa vowel\nb consonant\n").unwrap();
        let mixed = strict_cluster(&k, &inv, &Default::default()).unwrap();
        assert_eq!(members(&mixed, "v01"), vec!["aa".to_string(), "b".to_string()]);

        let cfg = ClusterConfig { vc_policy: VcPolicy::Split, ..Default::default() };
        let split = strict_cluster(&k, &inv, &cfg).unwrap();
        assert_eq!(split.viseme_classes().count(), 2);
        assert!(split.viseme_classes().all(|c| c.members.len() == 1));

        // Relaxed under split must not pull the vowel into a consonant class.
        let k = ConfusionMatrix::new(
            vec!["aa".into(), "b".into(), "d".into()],
            vec![vec![1, 5, 5], vec![0, 0, 2], vec![0, 1, 0]],
        )
        .unwrap();
        let inv = Inventory::parse("aa vowel\nb consonant\nd consonant\n").unwrap();
        let strict = strict_cluster(&k, &inv, &cfg).unwrap();
        let relaxed = relaxed_cluster(&k, &inv, &strict, &cfg).unwrap();
        assert!(relaxed.viseme_classes().any(|c| c.members == vec!["aa".to_string()]));
    }

    #[test]
    fn common_pairs_extend_but_never_bridge() {
        let m = |name: &str, classes: &[&[&str]]| {
            P2VMap::new(
                name,
                classes
                    .iter()
                    .enumerate()
                    .map(|(i, ms)| {
                        VisemeClass::viseme(
                            viseme_label(i),
                            ms.iter().map(|s| s.to_string()).collect(),
                        )
                    })
                    .collect(),
            )
            .unwrap()
        };
        // (a,b) pairs twice; (c,d) pairs twice; (b,c) once: by the time
        // (b,c) replays, b and c are in different classes, so it is skipped.
        // e appears but never pairs.
        let catalog = vec![
            m("one", &[&["a", "b"], &["c", "d"], &["e"]]),
            m("two", &[&["a", "b", "c"], &["d"]]),
            m("three", &[&["c", "d"]]),
        ];
        let map = common_pair_cluster(&catalog).unwrap();
        let got: Vec<Vec<String>> =
            map.viseme_classes().map(|c| c.members.clone()).collect();
        assert_eq!(
            got,
            vec![
                vec!["a".to_string(), "b".to_string()],
                vec!["c".to_string(), "d".to_string()],
                vec!["e".to_string()],
            ]
        );

        // A pair sharing a phoneme with an existing class pulls the loose
        // one in: (a,b) twice, then (b,c) once.
        let catalog = vec![m("one", &[&["a", "b"]]), m("two", &[&["a", "b"], &["x", "y"]]), m("three", &[&["b", "c"], &["x", "y"]])];
        let map = common_pair_cluster(&catalog).unwrap();
        let got: Vec<Vec<String>> =
            map.viseme_classes().map(|c| c.members.clone()).collect();
        assert_eq!(
            got,
            vec![
                vec!["a".to_string(), "b".to_string(), "c".to_string()],
                vec!["x".to_string(), "y".to_string()],
            ]
        );
    }

    fn merge_fixture() -> (ConfusionMatrix, Inventory) {
        let labels: Vec<String> = ["aa", "ae", "b", "d"].map(String::from).to_vec();
        let rows = vec![
            vec![5, 3, 1, 0],
            vec![2, 6, 0, 0],
            vec![0, 0, 7, 4],
            vec![0, 1, 2, 8],
        ];
        let k = ConfusionMatrix::new(labels, rows).unwrap();
        let inv = Inventory::parse("aa vowel\nae vowel\nb consonant\nd consonant\n").unwrap();
        (k, inv)
    }

    #[test]
    fn merge_emits_every_size_and_refines() {
        let (k, inv) = merge_fixture();
        let run = controlled_merge(&k, &inv, &Default::default()).unwrap();
        let sizes: Vec<usize> = run.maps.iter().map(|m| m.viseme_classes().count()).collect();
        assert_eq!(sizes, vec![4, 3, 2]);
        // Size 2 under the vowel/consonant wall is exactly {vowels},
        // {consonants}.
        let last: Vec<Vec<String>> =
            run.maps[2].viseme_classes().map(|c| c.members.clone()).collect();
        assert_eq!(
            last,
            vec![vec!["aa".to_string(), "ae".to_string()], vec!["b".to_string(), "d".to_string()]]
        );
        // Refinement: every class of map i sits inside one class of map i+1.
        for w in run.maps.windows(2) {
            for fine in w[0].viseme_classes() {
                let hosts: HashSet<Option<&str>> =
                    fine.members.iter().map(|m| w[1].viseme_of(m)).collect();
                assert_eq!(hosts.len(), 1);
            }
        }
    }

    #[test]
    fn merge_respects_target_sizes_and_rejects_bad_ones() {
        let (k, inv) = merge_fixture();
        let cfg = ClusterConfig { target_sizes: Some(vec![3, 2]), ..Default::default() };
        let run = controlled_merge(&k, &inv, &cfg).unwrap();
        let sizes: Vec<usize> = run.maps.iter().map(|m| m.viseme_classes().count()).collect();
        assert_eq!(sizes, vec![3, 2]);

        for bad in [vec![2, 3], vec![1], vec![9]] {
            let cfg = ClusterConfig { target_sizes: Some(bad), ..Default::default() };
            assert!(matches!(
                controlled_merge(&k, &inv, &cfg),
                Err(ClusterError::BadTargetSizes(_))
            ));
        }
    }

    #[test]
    fn merge_warns_when_one_side_empties_early() {
        let labels: Vec<String> = ["aa", "b", "d", "g"].map(String::from).to_vec();
        let rows = vec![
            vec![5, 0, 0, 0],
            vec![0, 5, 3, 1],
            vec![0, 2, 5, 0],
            vec![0, 0, 1, 5],
        ];
        let k = ConfusionMatrix::new(labels, rows).unwrap();
        let inv = Inventory::parse("aa vowel\nb consonant\nd consonant\ng consonant\n").unwrap();
        let run = controlled_merge(&k, &inv, &Default::default()).unwrap();
        assert!(run.warnings.iter().any(|w| w.contains("vowel side")));
        let sizes: Vec<usize> = run.maps.iter().map(|m| m.viseme_classes().count()).collect();
        assert_eq!(sizes, vec![4, 3, 2]);
    }

    #[test]
    fn ms_si_pool_and_hold_out() {
        let inv = Inventory::parse("x consonant\ny consonant\nz consonant\n").unwrap();
        let ka = ConfusionMatrix::new(
            vec!["x".into(), "y".into(), "z".into()],
            vec![vec![1, 2, 0], vec![1, 1, 0], vec![0, 0, 0]],
        )
        .unwrap();
        let kb = ConfusionMatrix::new(
            vec!["x".into(), "y".into(), "z".into()],
            vec![vec![1, 0, 1], vec![0, 1, 3], vec![1, 2, 1]],
        )
        .unwrap();
        let speakers = vec![("spk-a".to_string(), ka), ("spk-b".to_string(), kb)];

        // Pooled counts connect all three; speaker a alone never saw z.
        let ms = derive_ms_si(&speakers, None, &inv, &Default::default()).unwrap();
        assert_eq!(ms.name(), "ms");
        assert_eq!(members(&ms, "v01"), vec!["x".to_string(), "y".to_string(), "z".to_string()]);

        let si = derive_ms_si(&speakers, Some("spk-b"), &inv, &Default::default()).unwrap();
        assert_eq!(si.name(), "si-spk-b");
        assert_eq!(members(&si, "v01"), vec!["x".to_string(), "y".to_string()]);
        assert_eq!(si.garbage().unwrap().members, vec!["z".to_string()]);

        assert!(matches!(
            derive_ms_si(&speakers, Some("spk-q"), &inv, &Default::default()),
            Err(ClusterError::UnknownSpeaker(_))
        ));
        assert!(matches!(
            derive_ms_si(&speakers[..1], Some("spk-a"), &inv, &Default::default()),
            Err(ClusterError::TooFewSpeakers(1))
        ));
        assert!(matches!(
            derive_ms_si(&[], None, &inv, &Default::default()),
            Err(ClusterError::NoSpeakers)
        ));
    }

    /// Brute force over all vertex subsets: cliques, maximality, then the
    /// same (size, weight, lexicographic) preference the round rule uses.
    fn oracle_best_clique(
        nodes: &[String],
        adj: &[Vec<bool>],
        weight: &dyn Fn(&str, &str) -> u64,
    ) -> Option<Vec<String>> {
        let n = nodes.len();
        let mut best: Option<(usize, u64, Vec<String>)> = None;
        for mask in 1u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            if set.len() < 2 {
                continue;
            }
            let is_clique =
                set.iter().all(|&a| set.iter().all(|&b| a == b || adj[a][b]));
            if !is_clique {
                continue;
            }
            let maximal = (0..n)
                .filter(|i| !set.contains(i))
                .all(|v| !set.iter().all(|&u| adj[u][v]));
            if !maximal {
                continue;
            }
            let mut names: Vec<String> = set.iter().map(|&i| nodes[i].clone()).collect();
            names.sort();
            let mut w = 0;
            for i in 0..names.len() {
                for j in i + 1..names.len() {
                    w += weight(&names[i], &names[j]);
                }
            }
            let cand = (names.len(), w, names);
            best = Some(match best {
                None => cand,
                Some(cur) => {
                    let better = cand.0 > cur.0
                        || (cand.0 == cur.0 && cand.1 > cur.1)
                        || (cand.0 == cur.0 && cand.1 == cur.1 && cand.2 < cur.2);
                    if better {
                        cand
                    } else {
                        cur
                    }
                }
            });
        }
        best.map(|(_, _, names)| names)
    }

    proptest! {
        #[test]
        fn clique_choice_matches_brute_force(
            n in 2usize..8,
            edges in proptest::collection::vec(any::<bool>(), 28),
            weights in proptest::collection::vec(1u64..9, 28),
        ) {
            let nodes: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
            let mut adj = vec![vec![false; n]; n];
            let mut wtab = HashMap::new();
            let mut e = 0;
            for i in 0..n {
                for j in i + 1..n {
                    adj[i][j] = edges[e];
                    adj[j][i] = edges[e];
                    if edges[e] {
                        wtab.insert((nodes[i].clone(), nodes[j].clone()), weights[e]);
                    }
                    e += 1;
                }
            }
            let weight = move |a: &str, b: &str| -> u64 {
                let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
                wtab.get(&key).copied().unwrap_or(0)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let got = pick_clique(&nodes, &adj, &weight, TieBreak::Lexicographic, &mut rng);
            let want = oracle_best_clique(&nodes, &adj, &weight);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn strict_partitions_the_inventory(
            cells in proptest::collection::vec(0u64..4, 36),
            split in any::<bool>(),
        ) {
            let labels: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
            let rows: Vec<Vec<u64>> = cells.chunks(6).map(|c| c.to_vec()).collect();
            let k = ConfusionMatrix::new(labels, rows).unwrap();
            let inv = Inventory::parse(
                "p0 vowel\np1 vowel\np2 vowel\np3 consonant\np4 consonant\np5 consonant\np6 consonant\nsil silence\n",
            ).unwrap();
            let cfg = ClusterConfig {
                vc_policy: if split { VcPolicy::Split } else { VcPolicy::Mixed },
                ..Default::default()
            };
            let strict = strict_cluster(&k, &inv, &cfg).unwrap();
            // Every non-special inventory symbol lands in exactly one class
            // (P2VMap construction already rejects overlaps).
            for p in inv.iter() {
                prop_assert!(strict.contains(&p.symbol));
            }
            if split {
                for c in strict.viseme_classes() {
                    let sides: HashSet<_> = c.members.iter().map(|s| inv.klass_of(s)).collect();
                    prop_assert_eq!(sides.len(), 1);
                }
            }

            // Relaxed only coarsens: each strict class sits inside one
            // relaxed class.
            let relaxed = relaxed_cluster(&k, &inv, &strict, &cfg).unwrap();
            for fine in strict.viseme_classes() {
                let hosts: HashSet<Option<&str>> =
                    fine.members.iter().map(|m| relaxed.viseme_of(m)).collect();
                prop_assert_eq!(hosts.len(), 1);
            }
        }

        #[test]
        fn merge_chain_refines_all_the_way_down(cells in proptest::collection::vec(0u64..5, 25)) {
            let labels: Vec<String> = ["aa", "ae", "b", "d", "g"].map(String::from).to_vec();
            let rows: Vec<Vec<u64>> = cells.chunks(5).map(|c| c.to_vec()).collect();
            let k = ConfusionMatrix::new(labels, rows).unwrap();
            let inv = Inventory::parse("aa vowel\nae vowel\nb consonant\nd consonant\ng consonant\n").unwrap();
            let run = controlled_merge(&k, &inv, &Default::default()).unwrap();
            let sizes: Vec<usize> = run.maps.iter().map(|m| m.viseme_classes().count()).collect();
            prop_assert_eq!(sizes, vec![5, 4, 3, 2]);
            for w in run.maps.windows(2) {
                for fine in w[0].viseme_classes() {
                    let hosts: HashSet<Option<&str>> =
                        fine.members.iter().map(|m| w[1].viseme_of(m)).collect();
                    prop_assert_eq!(hosts.len(), 1);
                }
            }
        }
    }
}
