use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::inventory::strip_stress;
use crate::p2vmap::P2VMap;

#[derive(Debug, Error)]
pub enum MapSimError {
    #[error("maps '{a}' and '{b}' share no phonemes")]
    NoSharedPhonemes { a: String, b: String },
    #[error("map '{map}': stress variants of '{base}' sit in different classes")]
    AmbiguousBase { map: String, base: String },
}

/// How alike two maps group the phonemes they share. Zero means identical
/// grouping; the score grows as shared phonemes scatter off the diagonal of
/// the class-match table.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub map_a: String,
    pub map_b: String,
    pub score: f64,
    /// Shared phonemes (stress-stripped), sorted.
    pub matched_phonemes: Vec<String>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// table[i][j] accumulates, for every shared phoneme in row class i of
    /// map a and column class j of map b, that phoneme's weight in each map
    /// (one over its full class size).
    pub table: Vec<Vec<f64>>,
    pub upper: f64,
    pub lower: f64,
}

/// Raw member -> (class position, full class size), viseme classes only.
fn raw_index(map: &P2VMap) -> BTreeMap<String, (usize, usize)> {
    let mut index = BTreeMap::new();
    for (ci, class) in map.viseme_classes().enumerate() {
        for member in &class.members {
            index.insert(member.clone(), (ci, class.members.len()));
        }
    }
    index
}

/// Stress-stripped bases of the symbols raw matching left over. A base whose
/// variants straddle classes has no single home and is rejected.
fn leftover_base_index(
    raw: &BTreeMap<String, (usize, usize)>,
    raw_matched: &BTreeSet<String>,
) -> BTreeMap<String, Vec<(usize, usize)>> {
    let mut index: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (symbol, &place) in raw {
        if raw_matched.contains(symbol) {
            continue;
        }
        let homes = index.entry(strip_stress(symbol).to_string()).or_default();
        if !homes.contains(&place) {
            homes.push(place);
        }
    }
    index
}

pub fn similarity(a: &P2VMap, b: &P2VMap) -> Result<SimilarityReport, MapSimError> {
    let raw_a = raw_index(a);
    let raw_b = raw_index(b);
    let row_labels: Vec<String> =
        a.viseme_classes().map(|c| c.label.clone()).collect();
    let col_labels: Vec<String> =
        b.viseme_classes().map(|c| c.label.clone()).collect();

    // Symbols both maps spell identically pair up as they stand; only the
    // leftovers fall back to stress-stripped matching, so maps written with
    // stress digits still line up against stress-free ones.
    type Pair = (String, (usize, usize), (usize, usize));
    let mut pairs: Vec<Pair> = Vec::new();
    let mut raw_matched: BTreeSet<String> = BTreeSet::new();
    for (symbol, &pa) in &raw_a {
        if let Some(&pb) = raw_b.get(symbol) {
            pairs.push((symbol.clone(), pa, pb));
            raw_matched.insert(symbol.clone());
        }
    }
    let base_a = leftover_base_index(&raw_a, &raw_matched);
    let base_b = leftover_base_index(&raw_b, &raw_matched);
    for (base, homes_a) in &base_a {
        let Some(homes_b) = base_b.get(base) else { continue };
        // A base only matters once it matches across maps; then its stress
        // variants must agree on a class within each map.
        let [pa] = homes_a.as_slice() else {
            return Err(MapSimError::AmbiguousBase { map: a.name().to_string(), base: base.clone() });
        };
        let [pb] = homes_b.as_slice() else {
            return Err(MapSimError::AmbiguousBase { map: b.name().to_string(), base: base.clone() });
        };
        pairs.push((base.clone(), *pa, *pb));
    }
    if pairs.is_empty() {
        return Err(MapSimError::NoSharedPhonemes {
            a: a.name().to_string(),
            b: b.name().to_string(),
        });
    }

    let mut table = vec![vec![0.0f64; col_labels.len()]; row_labels.len()];
    let mut matched: Vec<String> = Vec::new();
    for (symbol, (ca, size_a), (cb, size_b)) in &pairs {
        table[*ca][*cb] += 1.0 / *size_a as f64 + 1.0 / *size_b as f64;
        matched.push(symbol.clone());
    }
    matched.sort();

    let mut upper = 0.0;
    let mut lower = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &cell) in row.iter().enumerate() {
            if j > i {
                upper += cell;
            } else if j < i {
                lower += cell;
            }
        }
    }
    let score = (upper - lower).abs() / matched.len() as f64;
    Ok(SimilarityReport {
        map_a: a.name().to_string(),
        map_b: b.name().to_string(),
        score,
        matched_phonemes: matched,
        row_labels,
        col_labels,
        table,
        upper,
        lower,
    })
}

/// Pairwise scores with a zero diagonal; entry [i][j] compares maps[i]
/// against maps[j].
pub fn similarity_matrix(maps: &[P2VMap]) -> Result<Vec<Vec<f64>>, MapSimError> {
    let n = maps.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[i][j] = similarity(&maps[i], &maps[j])?.score;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::p2vmap::VisemeClass;
    use proptest::prelude::*;

    fn map(name: &str, classes: &[&[&str]]) -> P2VMap {
        P2VMap::new(
            name,
            classes
                .iter()
                .enumerate()
                .map(|(i, ms)| {
                    VisemeClass::viseme(
                        format!("v{:02}", i + 1),
                        ms.iter().map(|s| s.to_string()).collect(),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn worked_pair() -> (P2VMap, P2VMap) {
        (
            map("one", &[&["p1", "p2", "p3"], &["p4", "p5"], &["p6"], &["p7", "p8"]]),
            map("two", &[&["p1", "p3"], &["p2", "p4"], &["p5"], &["p6"], &["p7", "p8", "p9"]]),
        )
    }

    #[test]
    fn worked_example_table_and_score() {
        let (a, b) = worked_pair();
        let r = similarity(&a, &b).unwrap();
        assert_eq!(r.matched_phonemes.len(), 8); // p9 is only in map two
        let t = &r.table;
        let close = |x: f64, y: f64| (x - y).abs() < 1e-9;
        assert!(close(t[0][0], 1.0 / 3.0 + 1.0 / 2.0 + 1.0 / 3.0 + 1.0 / 2.0)); // p1, p3
        assert!(close(t[0][1], 1.0 / 3.0 + 1.0 / 2.0)); // p2
        assert!(close(t[1][1], 1.0)); // p4
        assert!(close(t[1][2], 1.5)); // p5
        assert!(close(t[2][3], 2.0)); // p6
        assert!(close(t[3][4], 1.0 / 2.0 + 1.0 / 3.0 + 1.0 / 2.0 + 1.0 / 3.0)); // p7, p8
        assert!(close(r.upper, 6.0));
        assert!(close(r.lower, 0.0));
        assert!(close(r.score, 0.75));
    }

    #[test]
    fn self_similarity_is_zero_and_disjoint_maps_error() {
        let (a, b) = worked_pair();
        assert_eq!(similarity(&a, &a).unwrap().score, 0.0);
        assert_eq!(similarity(&b, &b).unwrap().score, 0.0);

        let c = map("other", &[&["zz1", "zz2"]]);
        assert!(matches!(
            similarity(&a, &c),
            Err(MapSimError::NoSharedPhonemes { .. })
        ));
    }

    #[test]
    fn stress_variants_match_their_base_symbol() {
        let a = map("stressed", &[&["ah1", "iy0"], &["b"]]);
        let b = map("plain", &[&["ah", "iy"], &["b"]]);
        let r = similarity(&a, &b).unwrap();
        assert_eq!(r.matched_phonemes, vec!["ah", "b", "iy"]);
        assert_eq!(r.score, 0.0);

        let split_stress = map("split", &[&["ah1"], &["ah2"]]);
        assert!(matches!(
            similarity(&split_stress, &b),
            Err(MapSimError::AmbiguousBase { .. })
        ));
    }

    #[test]
    fn matrix_has_zero_diagonal() {
        let (a, b) = worked_pair();
        let maps = vec![a, b];
        let m = similarity_matrix(&maps).unwrap();
        assert_eq!(m[0][0], 0.0);
        assert_eq!(m[1][1], 0.0);
        assert!((m[0][1] - 0.75).abs() < 1e-9);
        assert!((m[1][0] - 0.75).abs() < 1e-9);
    }

    fn arb_partition() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0u8..4, 6)
    }

    fn partition_to_map(name: &str, assign: &[u8]) -> P2VMap {
        let mut classes: BTreeMap<u8, Vec<String>> = BTreeMap::new();
        for (i, &c) in assign.iter().enumerate() {
            classes.entry(c).or_default().push(format!("s{i}"));
        }
        P2VMap::new(
            name,
            classes
                .into_values()
                .enumerate()
                .map(|(i, ms)| VisemeClass::viseme(format!("v{:02}", i + 1), ms))
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn score_is_symmetric_bounded_and_zero_on_self(pa in arb_partition(), pb in arb_partition()) {
            let a = partition_to_map("a", &pa);
            let b = partition_to_map("b", &pb);
            let ab = similarity(&a, &b).unwrap();
            let ba = similarity(&b, &a).unwrap();
            prop_assert!((ab.score - ba.score).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&ab.score));
            prop_assert_eq!(similarity(&a, &a).unwrap().score, 0.0);
        }
    }
}
