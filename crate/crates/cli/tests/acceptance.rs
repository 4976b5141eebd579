//! The acceptance gate: one test per published claim the tool chain must
//! reproduce, each printing a single `ACCEPTANCE NN PASS` line (visible under
//! `--nocapture`) so a run reads as a checklist. Numeric tolerances are
//! stated inline next to each check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viseme_core::catalog::{load_catalog, load_catalog_map};
use viseme_core::clustering::{cluster, controlled_merge, ClusterConfig, ClusterMode, VcPolicy};
use viseme_core::confusion::ConfusionMatrix;
use viseme_core::hmm::{
    build_bigram, decode, flat_start, forced_align, reestimate, weak_learn_init, FeatureStream,
    HmmModel, ProtoConfig,
};
use viseme_core::lexicon::guessing_baseline;
use viseme_core::mapsim::similarity;
use viseme_core::scoring::{align, weighted_rank, Alignment, EditCosts, FoldStats};
use viseme_core::synth::{generate, plant_recovery_check, PlantedWorld};
use viseme_core::{Inventory, P2VMap, PhonemeClass, VisemeClass};

fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file)
}

fn pass(criterion: u32, started: Instant, detail: impl Display) {
    println!("ACCEPTANCE {criterion:02} PASS ({:.2}s) {detail}", started.elapsed().as_secs_f64());
}

/// A map's viseme classes as an order-free partition.
fn partition(map: &P2VMap) -> BTreeSet<BTreeSet<String>> {
    map.viseme_classes().map(|c| c.members.iter().cloned().collect()).collect()
}

fn blocks(raw: &[&[&str]]) -> BTreeSet<BTreeSet<String>> {
    raw.iter().map(|c| c.iter().map(|s| s.to_string()).collect()).collect()
}

fn make_map(name: &str, classes: &[&[&str]]) -> P2VMap {
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

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_string()).collect()
}

#[test]
fn criterion_01_demo_matrix_strict_and_relaxed_partitions() {
    let t = Instant::now();
    let text = std::fs::read_to_string(data("demo-confusion.csv")).unwrap();
    let k = ConfusionMatrix::parse_csv(&text).unwrap();
    let inventory = Inventory::from_path(data("demo-inventory.txt")).unwrap();

    let cfg = ClusterConfig::default();
    let strict = cluster(&k, &inventory, &cfg).unwrap();
    assert_eq!(
        partition(&strict),
        blocks(&[&["p6"], &["p1", "p3", "p7"], &["p2", "p4"], &["p5"]]),
        "strict partition"
    );

    let relaxed =
        cluster(&k, &inventory, &ClusterConfig { mode: ClusterMode::Relaxed, ..cfg }).unwrap();
    assert_eq!(
        partition(&relaxed),
        blocks(&[&["p6"], &["p1", "p3", "p5", "p7"], &["p2", "p4"]]),
        "relaxed partition"
    );
    pass(1, t, "strict 4 classes, relaxed 3 classes, both exact");
}

#[test]
fn criterion_02_similarity_match_cells_score_and_self_zero() {
    let t = Instant::now();
    let a = make_map("one", &[&["p1", "p2", "p3"], &["p4", "p5"], &["p6"], &["p7", "p8"]]);
    let b = make_map("two", &[&["p1", "p3"], &["p2", "p4"], &["p5"], &["p6"], &["p7", "p8", "p9"]]);
    let rep = similarity(&a, &b).unwrap();

    let close = |x: f64, want: f64, what: &str| {
        assert!((x - want).abs() < 1e-9, "{what}: {x} != {want}")
    };
    // Each matched phoneme contributes 1/|class in a| + 1/|class in b|.
    close(rep.table[1][1], 1.0, "p4 cell");
    close(rep.table[1][2], 1.5, "p5 cell");
    close(rep.table[2][3], 2.0, "p6 cell");
    close(rep.table[3][4], 2.0 * (1.0 / 2.0 + 1.0 / 3.0), "p7+p8 cell (5/6 each)");
    close(rep.upper, 6.0, "upper mass");
    close(rep.lower, 0.0, "lower mass");
    assert_eq!(rep.matched_phonemes.len(), 8, "p9 has no partner");
    close(rep.score, 0.75, "similarity score");

    let entries = load_catalog().unwrap();
    assert!(entries.len() >= 9, "catalog holds {} maps", entries.len());
    for e in &entries {
        let own = similarity(&e.map, &e.map).unwrap().score;
        assert!(own.abs() < 1e-12, "S({0}, {0}) = {own}", e.map.name());
    }
    pass(
        2,
        t,
        format!("match cells exact, S = 0.75, self-similarity zero on {} maps", entries.len()),
    );
}

#[test]
fn criterion_03_compression_factor_table() {
    let t = Instant::now();
    // (author, side, visemes, phonemes, published value in hundredths,
    //  catalog name when the shipped map uses the same inventory cut).
    // The disney consonant row is pinned to 27: its tabulated 0.18 does not
    // match its own 6:22 ratio, so the ratio wins.
    let rows: &[(&str, &str, u64, u64, u64, Option<&str>)] = &[
        ("woodward", "consonant", 4, 24, 16, Some("woodward-consonants")),
        ("disney", "consonant", 6, 22, 27, None),
        ("fisher", "consonant", 5, 21, 23, Some("fisher-consonants")),
        ("lee", "consonant", 6, 24, 25, Some("lee-consonants")),
        ("franks", "consonant", 5, 17, 29, None),
        ("kricos", "consonant", 8, 24, 33, Some("kricos-consonants")),
        ("jeffers", "consonant", 8, 23, 35, Some("jeffers-consonants")),
        ("neti", "consonant", 8, 23, 35, Some("neti-consonants")),
        ("bozkurt", "consonant", 8, 22, 36, Some("bozkurt-consonants")),
        ("finn", "consonant", 10, 23, 43, Some("finn-consonants")),
        ("walden", "consonant", 9, 20, 45, Some("walden-consonants")),
        ("binnie", "consonant", 9, 19, 47, Some("binnie-consonants")),
        ("hazen", "consonant", 10, 21, 48, None),
        ("heider", "consonant", 8, 16, 50, Some("heider-consonants")),
        ("nichie", "consonant", 18, 33, 54, None),
        ("jeffers", "vowel", 3, 19, 16, None),
        ("neti", "vowel", 4, 20, 20, None),
        ("hazen", "vowel", 4, 18, 22, None),
        ("disney", "vowel", 4, 11, 36, Some("disney-vowels")),
        ("lee", "vowel", 5, 14, 36, Some("lee-vowels")),
        ("bozkurt", "vowel", 7, 19, 37, None),
        ("montgomery", "vowel", 8, 19, 42, None),
        ("nichie", "vowel", 9, 15, 60, None),
    ];
    assert_eq!(rows.len(), 23);

    let mut from_catalog = 0;
    for &(author, side, v, p, cents, catalog_name) in rows {
        // Integer arithmetic keeps rounding exact: the tabulated two-decimal
        // value must be v/p either rounded or truncated, which also bounds
        // |v/p - value| by 0.005 and 0.01 respectively.
        let rounded = (200 * v + p) / (2 * p);
        let truncated = 100 * v / p;
        assert!(
            cents == rounded || cents == truncated,
            "{author} {side}s: {v}/{p} gives {rounded} or {truncated} hundredths, table says {cents}"
        );

        if let Some(name) = catalog_name {
            let entry = load_catalog_map(name).unwrap().unwrap_or_else(|| {
                panic!("catalog map '{name}' missing");
            });
            let visemes = entry.map.viseme_classes().count() as u64;
            let phonemes: u64 =
                entry.map.viseme_classes().map(|c| c.members.len() as u64).sum();
            assert_eq!((visemes, phonemes), (v, p), "{name} class cut");
            let cf = entry.map.compression_factor().unwrap();
            assert!(
                (cf - v as f64 / p as f64).abs() < 1e-12,
                "{name} compression factor"
            );
            from_catalog += 1;
        }
    }
    pass(3, t, format!("23 rows within rounding, {from_catalog} cross-checked against shipped maps"));
}

/// Edit-distance oracle: the textbook dynamic program over the full table,
/// cost only.
fn oracle_cost(reference: &[String], hypothesis: &[String], costs: EditCosts) -> u64 {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0u64; m + 1]; n + 1];
    for i in 1..=n {
        d[i][0] = i as u64 * costs.del;
    }
    for j in 1..=m {
        d[0][j] = j as u64 * costs.ins;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = if reference[i - 1] == hypothesis[j - 1] { 0 } else { costs.sub };
            d[i][j] = (d[i - 1][j - 1] + sub)
                .min(d[i - 1][j] + costs.del)
                .min(d[i][j - 1] + costs.ins);
        }
    }
    d[n][m]
}

fn counts_are_consistent(a: &Alignment, reference: &[String], hypothesis: &[String], costs: EditCosts) {
    assert_eq!(a.matches() + a.substitutions() + a.deletions(), reference.len());
    assert_eq!(a.matches() + a.substitutions() + a.insertions(), hypothesis.len());
    let recost = a.substitutions() as u64 * costs.sub
        + a.insertions() as u64 * costs.ins
        + a.deletions() as u64 * costs.del;
    assert_eq!(a.cost(), recost, "op counts must reprice to the alignment cost");
}

#[test]
fn criterion_04_alignment_worked_errors_and_dp_oracle() {
    let t = Instant::now();
    let reference = toks("John wanted to visit the shop to buy groceries");
    let cases: &[(&str, usize, usize, usize, f64, f64)] = &[
        // hypothesis, S, D, I, correctness, accuracy
        ("John wanted visit the to groceries", 0, 3, 0, 6.0 / 9.0, 6.0 / 9.0),
        ("John wanted to visit visit the shop to buy groceries", 0, 0, 1, 1.0, 8.0 / 9.0),
        ("John wanted to shop the shop to buy groceries", 1, 0, 0, 8.0 / 9.0, 8.0 / 9.0),
    ];
    for &(hyp, s, d, i, c, a) in cases {
        let hyp = toks(hyp);
        for costs in [EditCosts::htk(), EditCosts::unit()] {
            let al = align(&reference, &hyp, costs);
            assert_eq!(
                (al.substitutions(), al.deletions(), al.insertions()),
                (s, d, i),
                "ops for '{}'",
                hyp.join(" ")
            );
            assert!((al.correctness().unwrap() - c).abs() < 1e-12);
            assert!((al.accuracy().unwrap() - a).abs() < 1e-12);
            counts_are_consistent(&al, &reference, &hyp, costs);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let alphabet = ["a", "b", "c"];
    let mut pairs = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let r_len = rng.gen_range(1..=8);
        let h_len = rng.gen_range(0..=8);
        let r: Vec<String> =
            (0..r_len).map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string()).collect();
        let h: Vec<String> =
            (0..h_len).map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string()).collect();
        pairs.push((r, h));
    }
    for (reference, hypothesis) in &pairs {
        for costs in [EditCosts::unit(), EditCosts::htk()] {
            let al = align(reference, hypothesis, costs);
            assert_eq!(
                al.cost(),
                oracle_cost(reference, hypothesis, costs),
                "ref {reference:?} hyp {hypothesis:?}"
            );
            counts_are_consistent(&al, reference, hypothesis, costs);
        }
    }
    pass(4, t, "3 worked error patterns exact, 1000 random pairs match the DP oracle");
}

#[test]
fn criterion_05_weighted_ranking_totals() {
    let t = Instant::now();
    let maps = toks("M1 M2 M3 M4");
    let speakers = toks("Sp01 Sp02 Sp03 Sp04");
    let stats = |mean: f64, stderr: f64| FoldStats { values: vec![], mean, sigma: 0.0, stderr };

    let mut baselines = BTreeMap::new();
    let mut own = BTreeMap::new();
    for (s, m) in speakers.iter().zip(&maps) {
        baselines.insert(s.clone(), stats(0.5, 0.05));
        own.insert(s.clone(), m.clone());
    }
    let cells: &[(&str, &str, f64)] = &[
        ("M1", "Sp01", 0.50), ("M2", "Sp01", 0.53), ("M3", "Sp01", 0.60), ("M4", "Sp01", 0.58),
        ("M1", "Sp02", 0.46), ("M2", "Sp02", 0.50), ("M3", "Sp02", 0.61), ("M4", "Sp02", 0.55),
        ("M1", "Sp03", 0.40), ("M2", "Sp03", 0.42), ("M3", "Sp03", 0.50), ("M4", "Sp03", 0.45),
        ("M1", "Sp04", 0.47), ("M2", "Sp04", 0.51), ("M3", "Sp04", 0.49), ("M4", "Sp04", 0.50),
    ];
    let mut results = BTreeMap::new();
    for &(m, s, mean) in cells {
        results.insert((m.to_string(), s.to_string()), stats(mean, 0.0));
    }
    let table = weighted_rank(&maps, &speakers, &results, &baselines, &own).unwrap();
    assert_eq!(table.totals, vec![-4, 0, 3, 2]);
    pass(5, t, "column totals -4, 0, +3, +2");
}

#[test]
fn criterion_06_guessing_baseline_closed_forms() {
    let t = Instant::now();
    // All words distinct: 1/N.
    assert_eq!(guessing_baseline(&[1, 1, 1, 1], 4).unwrap(), 0.25);
    // Everything one homophone group: certainty.
    assert_eq!(guessing_baseline(&[5], 5).unwrap(), 1.0);
    // Groups {3, 1} over four words, two tokens: (3/4 + 1/4) / 2.
    assert_eq!(guessing_baseline(&[3, 1], 4).unwrap(), 0.5);
    pass(6, t, "1/N, 1.0, and 0.5 exact");
}

/// One greedy merge step recomputed from scratch: class-level counts under
/// the current partition, columns normalized, and the two-way probability
/// mass q of every same-side pair.
fn oracle_pair_masses(
    k: &ConfusionMatrix,
    classes: &[BTreeSet<String>],
    side_of: &BTreeMap<String, PhonemeClass>,
) -> BTreeMap<(usize, usize), f64> {
    let n = classes.len();
    let mut counts = vec![vec![0.0f64; n]; n];
    for (ci, members_i) in classes.iter().enumerate() {
        for (cj, members_j) in classes.iter().enumerate() {
            for a in members_i {
                for b in members_j {
                    counts[ci][cj] += k.count(a, b).unwrap() as f64;
                }
            }
        }
    }
    let col_sums: Vec<f64> = (0..n).map(|j| (0..n).map(|i| counts[i][j]).sum()).collect();
    let p = |i: usize, j: usize| {
        if col_sums[j] > 0.0 {
            counts[i][j] / col_sums[j]
        } else {
            0.0
        }
    };
    let side = |c: &BTreeSet<String>| side_of[c.iter().next().unwrap()];
    let mut masses = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            if side(&classes[i]) == side(&classes[j]) {
                masses.insert((i, j), p(i, j) + p(j, i));
            }
        }
    }
    masses
}

#[test]
fn criterion_07_controlled_merge_takes_the_argmax_pair() {
    let t = Instant::now();
    let consonants: Vec<String> = (1..=10).map(|i| format!("c{i:02}")).collect();
    let vowels: Vec<String> = (1..=6).map(|i| format!("w{i:02}")).collect();
    let labels: Vec<String> = consonants.iter().chain(&vowels).cloned().collect();
    let inv_text: String = consonants
        .iter()
        .map(|c| format!("{c} consonant\n"))
        .chain(vowels.iter().map(|v| format!("{v} vowel\n")))
        .collect();
    let inventory = Inventory::parse(&inv_text).unwrap();
    let side_of: BTreeMap<String, PhonemeClass> =
        labels.iter().map(|l| (l.clone(), inventory.klass_of(l).unwrap())).collect();

    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let counts: Vec<Vec<u64>> = (0..labels.len())
            .map(|i| {
                (0..labels.len())
                    .map(|j| rng.gen_range(1..=24) + if i == j { 15 } else { 0 })
                    .collect()
            })
            .collect();
        let k = ConfusionMatrix::new(labels.clone(), counts).unwrap();
        let run = controlled_merge(&k, &inventory, &ClusterConfig::default()).unwrap();

        let partitions: Vec<Vec<BTreeSet<String>>> = run
            .maps
            .iter()
            .map(|m| m.viseme_classes().map(|c| c.members.iter().cloned().collect()).collect())
            .collect();
        assert_eq!(partitions[0].len(), 16, "starts from singletons");
        assert_eq!(partitions.last().unwrap().len(), 2, "ends at two classes");

        for step in partitions.windows(2) {
            let (before, after) = (&step[0], &step[1]);
            assert_eq!(before.len(), after.len() + 1, "sizes descend by one");
            for class in after {
                let sides: BTreeSet<&str> =
                    class.iter().map(|m| side_of[m].as_str()).collect();
                assert_eq!(sides.len(), 1, "class mixes sides: {class:?}");
            }
            // Exactly one class of `after` is new, and it unions exactly two
            // classes of `before` whose q attains the oracle maximum.
            let old: BTreeSet<&BTreeSet<String>> = before.iter().collect();
            let new: Vec<&BTreeSet<String>> =
                after.iter().filter(|c| !old.contains(c)).collect();
            assert_eq!(new.len(), 1, "one merged class per step");
            let halves: Vec<usize> = (0..before.len())
                .filter(|&i| !after.contains(&before[i]))
                .collect();
            assert_eq!(halves.len(), 2, "merged class comes from two");
            let union: BTreeSet<String> = halves
                .iter()
                .flat_map(|&i| before[i].iter().cloned())
                .collect();
            assert_eq!(&union, new[0]);

            let masses = oracle_pair_masses(&k, before, &side_of);
            let best = masses.values().cloned().fold(f64::NEG_INFINITY, f64::max);
            let merged = masses[&(halves[0], halves[1])];
            assert!(
                (merged - best).abs() <= 1e-9 * best.abs().max(1.0),
                "seed {seed}: merged pair q {merged} vs best {best}"
            );
        }
    }
    pass(7, t, "20 random matrices, every merge step attains the argmax q");
}

fn gauss_stream(
    rng: &mut ChaCha8Rng,
    id: &str,
    labels: &[String],
    means: &BTreeMap<String, Vec<f64>>,
    frames_per: std::ops::RangeInclusive<usize>,
) -> FeatureStream {
    let mut frames = Vec::new();
    for label in labels {
        let mean = &means[label];
        let n = rng.gen_range(frames_per.clone());
        for _ in 0..n {
            frames.push(
                mean.iter()
                    .map(|&m| m + rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect(),
            );
        }
    }
    FeatureStream::new(id, frames, labels.to_vec()).unwrap()
}

#[test]
fn criterion_08_training_guarantees() {
    let t = Instant::now();

    // (a) Re-estimation never lowers the training log likelihood, relative
    // tolerance 1e-8, eleven passes on twenty corpora.
    let labels = toks("a b");
    let mut means = BTreeMap::new();
    means.insert("a".to_string(), vec![-2.0, -2.0]);
    means.insert("b".to_string(), vec![2.0, 2.0]);
    for corpus in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + corpus);
        let mut streams = Vec::new();
        let mut transcripts = Vec::new();
        for u in 0..8 {
            let n_tok = rng.gen_range(2..=5);
            let seq: Vec<String> =
                (0..n_tok).map(|_| labels[rng.gen_range(0..2)].clone()).collect();
            streams.push(gauss_stream(&mut rng, &format!("u{u}"), &seq, &means, 3..=6));
            transcripts.push(seq);
        }
        let set = flat_start(&labels, &streams, &ProtoConfig { n_states: 2, n_mix: 2, seed: corpus })
            .unwrap();
        let (_, lls) = reestimate(&set, &streams, &transcripts, 11, None).unwrap();
        assert_eq!(lls.len(), 11);
        for w in lls.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-8 * w[0].abs(),
                "corpus {corpus}: log likelihood fell from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    // (b) The single-state single-Gaussian update lands on the sample
    // moments in one pass and stays there, within 1e-6.
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut b_means = BTreeMap::new();
    b_means.insert("a".to_string(), vec![0.5, -1.25]);
    let init_stream = gauss_stream(&mut rng, "init", &["a".to_string()], &b_means, 30..=30);
    let fit_stream = gauss_stream(&mut rng, "fit", &["a".to_string()], &b_means, 40..=40);
    let n = fit_stream.frames.len() as f64;
    let dim = 2;
    let mut sample_mean = vec![0.0; dim];
    let mut sample_var = vec![0.0; dim];
    for f in &fit_stream.frames {
        for d in 0..dim {
            sample_mean[d] += f[d] / n;
        }
    }
    for f in &fit_stream.frames {
        for d in 0..dim {
            let diff = f[d] - sample_mean[d];
            sample_var[d] += diff * diff / n;
        }
    }
    let proto = ProtoConfig { n_states: 1, n_mix: 1, seed: 0 };
    let init = flat_start(&["a".to_string()], &[init_stream], &proto).unwrap();
    let fit_streams = [fit_stream];
    let transcripts = [vec!["a".to_string()]];
    let (after_one, _) = reestimate(&init, &fit_streams, &transcripts, 1, None).unwrap();
    let g = &after_one.get("a").unwrap().states[0].components[0];
    for d in 0..dim {
        assert!((g.mean[d] - sample_mean[d]).abs() < 1e-6, "mean dim {d}");
        assert!((g.var[d] - sample_var[d]).abs() < 1e-6, "var dim {d}");
    }
    let (after_two, _) = reestimate(&after_one, &fit_streams, &transcripts, 1, None).unwrap();
    let h = &after_two.get("a").unwrap().states[0].components[0];
    for d in 0..dim {
        assert!((h.mean[d] - g.mean[d]).abs() < 1e-9, "fixed point mean dim {d}");
        assert!((h.var[d] - g.var[d]).abs() < 1e-9, "fixed point var dim {d}");
    }

    // (c) Hierarchical initialization clones the parent parameters exactly.
    let vis_labels = toks("v01 v02");
    let mut v_means = BTreeMap::new();
    v_means.insert("v01".to_string(), vec![-2.0, -2.0]);
    v_means.insert("v02".to_string(), vec![2.0, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut streams = Vec::new();
    let mut transcripts = Vec::new();
    for u in 0..6 {
        let seq: Vec<String> =
            (0..3).map(|_| vis_labels[rng.gen_range(0..2)].clone()).collect();
        streams.push(gauss_stream(&mut rng, &format!("v{u}"), &seq, &v_means, 4..=7));
        transcripts.push(seq);
    }
    let proto = ProtoConfig { n_states: 2, n_mix: 1, seed: 3 };
    let set = flat_start(&vis_labels, &streams, &proto).unwrap();
    let (parents, _) = reestimate(&set, &streams, &transcripts, 3, None).unwrap();
    let map = make_map("m", &[&["p1", "p2"], &["p3", "p4"]]);
    let phonemes = toks("p1 p2 p3 p4");
    let children = weak_learn_init(&parents, &map, &phonemes).unwrap();
    for (phoneme, parent) in [("p1", "v01"), ("p2", "v01"), ("p3", "v02"), ("p4", "v02")] {
        let c = children.get(phoneme).unwrap();
        let p = parents.get(parent).unwrap();
        assert_eq!(c.trans, p.trans, "{phoneme} transitions");
        assert_eq!(c.states, p.states, "{phoneme} emissions");
    }

    // (d) With the grammar silenced the cloned set decodes to the same
    // sequence as its parents after projecting labels back.
    let vnet = build_bigram(&transcripts, 0.01).unwrap();
    let p_corpus: Vec<Vec<String>> = vec![toks("p1 p2 p3 p4"), toks("p3 p1"), toks("p4 p2")];
    let pnet = build_bigram(&p_corpus, 0.01).unwrap();
    let mut agreed = 0;
    for case in 0..20 {
        let seq: Vec<String> =
            (0..rng.gen_range(2..=4)).map(|_| vis_labels[rng.gen_range(0..2)].clone()).collect();
        let stream = gauss_stream(&mut rng, &format!("t{case}"), &seq, &v_means, 4..=7);
        let vis_hyp = decode(&parents, &vnet, &stream, None, 0.0, 0.5).unwrap();
        let ph_hyp = decode(&children, &pnet, &stream, None, 0.0, 0.5).unwrap();
        let projected: Vec<String> =
            ph_hyp.iter().map(|p| map.viseme_of(p).unwrap().to_string()).collect();
        assert_eq!(projected, vis_hyp, "case {case}");
        agreed += 1;
    }
    pass(
        8,
        t,
        format!(
            "likelihood monotone on 20 corpora, moment fixed point, clones identical, \
             {agreed}/20 projected decodes agree"
        ),
    );
}

fn demo_world() -> (PlantedWorld, viseme_core::lexicon::PronDict) {
    let text = std::fs::read_to_string(data("demo-world.txt")).unwrap();
    PlantedWorld::parse("demo", &text).unwrap()
}

fn pooled_correctness(alignments: &[Alignment]) -> f64 {
    let n: usize = alignments.iter().map(|a| a.n()).sum();
    let d: usize = alignments.iter().map(|a| a.deletions()).sum();
    let s: usize = alignments.iter().map(|a| a.substitutions()).sum();
    (n - d - s) as f64 / n as f64
}

/// Best-path log likelihood of a frame span forced through one model's
/// left-to-right chain, entry and exit included. Spans shorter than the
/// chain are infeasible.
fn chain_score(model: &HmmModel, frames: &[Vec<f64>]) -> f64 {
    let n = model.n_states();
    if frames.len() < n {
        return f64::NEG_INFINITY;
    }
    let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let mut delta: Vec<f64> = (0..n)
        .map(|s| ln(model.trans[0][s + 1]) + model.states[s].log_pdf(&frames[0]))
        .collect();
    for frame in &frames[1..] {
        let mut next = vec![f64::NEG_INFINITY; n];
        for (s, slot) in next.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for (prev, &d) in delta.iter().enumerate() {
                best = best.max(d + ln(model.trans[prev + 1][s + 1]));
            }
            *slot = best + model.states[s].log_pdf(frame);
        }
        delta = next;
    }
    (0..n).map(|s| delta[s] + ln(model.trans[s + 1][n + 1])).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn criterion_09_planted_partition_recovered_from_classification() {
    let t = Instant::now();
    let (base_world, vocab) = demo_world();
    assert_eq!(base_world.epsilon, 0.0);
    assert_eq!(base_world.separation, 6.0);

    let mut recovered = 0;
    for trial in 0..20u64 {
        let mut world = base_world.clone();
        world.seed = 9000 + trial;
        let corpus = generate(&world, 200, &vocab).unwrap();

        let labels: Vec<String> = {
            let mut set = BTreeSet::new();
            for u in &corpus.phonemes.utterances {
                set.extend(u.labels.iter().cloned());
            }
            set.into_iter().collect()
        };
        let transcripts: Vec<Vec<String>> =
            corpus.phonemes.utterances.iter().map(|u| u.labels.clone()).collect();
        let proto = ProtoConfig { n_states: 3, n_mix: 1, seed: world.seed };
        let set = flat_start(&labels, &corpus.streams, &proto).unwrap();
        let (models, _) = reestimate(&set, &corpus.streams, &transcripts, 3, None).unwrap();

        // Token classification: boundaries come from forced alignment, then
        // each segment is scored under every phoneme model in isolation, so
        // the confusion counts reflect the emissions alone.
        let mut k = ConfusionMatrix::zero(labels.clone()).unwrap();
        for (stream, reference) in corpus.streams.iter().zip(&transcripts) {
            for seg in forced_align(&models, stream, reference).unwrap() {
                let frames = &stream.frames[seg.start..seg.end];
                let mut best: Option<(f64, &str)> = None;
                for label in &labels {
                    let score = chain_score(models.get(label).unwrap(), frames);
                    if score.is_finite() && best.is_none_or(|(s, _)| score > s) {
                        best = Some((score, label));
                    }
                }
                // Segments shorter than the chain (a rare boundary artifact)
                // score as infeasible everywhere and are dropped.
                if let Some((_, hyp)) = best {
                    k.add(&seg.label, hyp, 1).unwrap();
                }
            }
        }

        let cfg = ClusterConfig { vc_policy: VcPolicy::Split, ..ClusterConfig::default() };
        let derived = cluster(&k, &world.inventory, &cfg).unwrap();
        if plant_recovery_check(&world, &derived).unwrap() < 1e-12 {
            recovered += 1;
        }
    }
    assert!(recovered >= 18, "only {recovered}/20 seeds recovered the planted partition");
    pass(9, t, format!("{recovered}/20 seeds recovered the planted partition exactly"));
}

#[test]
fn criterion_10_weak_learning_beats_viseme_only_models() {
    let t = Instant::now();
    let (base_world, vocab) = demo_world();

    let mut wins = 0;
    let mut weak_sum = 0.0;
    let mut vis_sum = 0.0;
    for trial in 0..20u64 {
        // Within-class offsets dominate the class spacing, so viseme models
        // smear over partially-overlapping members while phoneme models can
        // still separate them.
        let mut world = base_world.clone();
        world.separation = 1.5;
        world.epsilon = 3.0;
        world.max_frames = 8;
        world.seed = 10_000 + trial;
        let corpus = generate(&world, 160, &vocab).unwrap();

        let phoneme_refs: Vec<Vec<String>> =
            corpus.phonemes.utterances.iter().map(|u| u.labels.clone()).collect();
        let viseme_refs: Vec<Vec<String>> = phoneme_refs
            .iter()
            .map(|seq| {
                seq.iter().map(|p| world.map.viseme_of(p).unwrap().to_string()).collect()
            })
            .collect();
        let n_train = 120;
        let (train_streams, test_streams) = corpus.streams.split_at(n_train);
        let (train_ph, test_ph) = phoneme_refs.split_at(n_train);
        let (train_vis, test_vis) = viseme_refs.split_at(n_train);

        // Viseme-only system, scored at its own level.
        let vis_labels: Vec<String> = {
            let mut s = BTreeSet::new();
            for u in train_vis {
                s.extend(u.iter().cloned());
            }
            s.into_iter().collect()
        };
        let proto = ProtoConfig { n_states: 3, n_mix: 1, seed: world.seed };
        let vis_init = flat_start(&vis_labels, train_streams, &proto).unwrap();
        let (vis_models, _) = reestimate(&vis_init, train_streams, train_vis, 4, None).unwrap();
        let vis_net = build_bigram(train_vis, 0.01).unwrap();
        let vis_alignments: Vec<Alignment> = test_streams
            .iter()
            .zip(test_vis)
            .map(|(stream, reference)| {
                let hyp = decode(&vis_models, &vis_net, stream, None, 1.0, 0.5).unwrap();
                align(reference, &hyp, EditCosts::unit())
            })
            .collect();
        let c_vis = pooled_correctness(&vis_alignments);

        // Weak-learned phoneme system: clone the viseme models per member
        // phoneme, then retrain, and score at the phoneme level.
        let train_phonemes: Vec<String> = {
            let mut s = BTreeSet::new();
            for u in train_ph {
                s.extend(u.iter().cloned());
            }
            s.into_iter().collect()
        };
        let seeds = weak_learn_init(&vis_models, &world.map, &train_phonemes).unwrap();
        let (weak_models, _) = reestimate(&seeds, train_streams, train_ph, 4, None).unwrap();
        let ph_net = build_bigram(train_ph, 0.01).unwrap();
        let weak_alignments: Vec<Alignment> = test_streams
            .iter()
            .zip(test_ph)
            .map(|(stream, reference)| {
                let hyp = decode(&weak_models, &ph_net, stream, None, 1.0, 0.5).unwrap();
                align(reference, &hyp, EditCosts::unit())
            })
            .collect();
        let c_weak = pooled_correctness(&weak_alignments);

        weak_sum += c_weak;
        vis_sum += c_vis;
        if c_weak + 1e-12 >= c_vis {
            wins += 1;
        }
    }
    assert!(wins >= 15, "weak-learned models won only {wins}/20 seeds");
    pass(
        10,
        t,
        format!(
            "{wins}/20 seeds, mean phoneme correctness {:.3} vs viseme {:.3}",
            weak_sum / 20.0,
            vis_sum / 20.0
        ),
    );
}

mod determinism {
    use super::*;
    use std::process::Command;

    fn run(dir: &Path, args: &[&str]) {
        let out = Command::new(env!("CARGO_BIN_EXE_visemes"))
            .current_dir(dir)
            .args(args)
            .output()
            .expect("spawning the binary");
        assert!(
            out.status.success(),
            "visemes {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut files = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_path_buf();
                    files.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
        files
    }

    /// Runs the same invocation in two sibling directories and insists every
    /// produced file is byte-identical.
    fn assert_identical(name: &str, setup: impl Fn(&Path), args: &[&str]) -> usize {
        let base = tempfile::TempDir::new().unwrap();
        let mut snaps = Vec::new();
        for run_dir in ["one", "two"] {
            let dir = base.path().join(run_dir);
            std::fs::create_dir(&dir).unwrap();
            setup(&dir);
            let before = snapshot(&dir);
            run(&dir, args);
            let mut after = snapshot(&dir);
            after.retain(|path, _| !before.contains_key(path));
            assert!(!after.is_empty(), "{name} wrote no files");
            snaps.push(after);
        }
        let (one, two) = (&snaps[0], &snaps[1]);
        assert_eq!(
            one.keys().collect::<Vec<_>>(),
            two.keys().collect::<Vec<_>>(),
            "{name}: file sets differ"
        );
        for (path, bytes) in one {
            assert_eq!(bytes, &two[path], "{name}: {} differs between runs", path.display());
        }
        one.len()
    }

    #[test]
    fn criterion_11_every_command_is_byte_identical_across_runs() {
        let t = Instant::now();
        let conf = data("demo-confusion.csv");
        let inv = data("demo-inventory.txt");
        let world = data("demo-world.txt");
        let no_setup = |_: &Path| {};

        let mut files = 0;
        files += assert_identical("catalog", no_setup, &["catalog", "--dump", "maps"]);
        files += assert_identical(
            "derive",
            no_setup,
            &[
                "derive",
                "--merge",
                "--sizes",
                "6..2",
                "--seed",
                "5",
                "-i",
                conf.to_str().unwrap(),
                "--inventory",
                inv.to_str().unwrap(),
                "-o",
                "derived",
            ],
        );

        let write_maps = |dir: &Path| {
            std::fs::write(dir.join("a.p2v"), "v01: b p m\nv02: f v\nv03: t d\n").unwrap();
            std::fs::write(dir.join("b.p2v"), "v01: b p\nv02: m f v\nv03: t d\n").unwrap();
        };
        files += assert_identical(
            "sim",
            write_maps,
            &["sim", "--maps", "a.p2v", "b.p2v", "-o", "sim.csv"],
        );

        let write_transcripts = |dir: &Path| {
            std::fs::write(
                dir.join("ref.tsv"),
                "u1\tall\tJohn wanted to visit the shop to buy groceries\n",
            )
            .unwrap();
            std::fs::write(dir.join("hyp.tsv"), "u1\tall\tJohn wanted visit the to groceries\n")
                .unwrap();
        };
        files += assert_identical(
            "score",
            write_transcripts,
            &[
                "score", "--ref", "ref.tsv", "--hyp", "hyp.tsv", "--htk-costs", "-o",
                "scores.csv", "--confusion", "confusion.csv",
            ],
        );

        files += assert_identical("report", no_setup, &["report", "--catalog", "-o", "rep"]);

        let pipeline_args = [
            "pipeline",
            "--world",
            world.to_str().unwrap(),
            "--utterances",
            "14",
            "--folds",
            "2",
            "--passes",
            "2",
            "--mixes",
            "1",
            "--seed",
            "11",
            "--weak-learn",
            "--network",
            "phoneme",
            "-o",
            "run",
        ];
        files += assert_identical("pipeline", no_setup, &pipeline_args);

        // The threaded fold scheduler must not change a single byte either.
        let serial = tempfile::TempDir::new().unwrap();
        let threaded = tempfile::TempDir::new().unwrap();
        run(serial.path(), &pipeline_args);
        let mut jobs2 = pipeline_args.to_vec();
        jobs2.extend(["--jobs", "2"]);
        run(threaded.path(), &jobs2);
        let (a, b) = (snapshot(serial.path()), snapshot(threaded.path()));
        assert_eq!(a, b, "pipeline output depends on --jobs");

        pass(11, t, format!("6 commands, {files} files byte-identical across paired runs"));
    }
}
