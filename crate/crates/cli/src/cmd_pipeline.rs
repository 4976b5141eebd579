use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use viseme_core::clustering::{cluster, ClusterConfig, ClusterMode, TieBreak, VcPolicy};
use viseme_core::confusion::build_from_alignments;
use viseme_core::hmm::{
    build_bigram, decode, flat_start, reestimate, weak_learn_init, FeatureStream, ModelSet,
    ProtoConfig,
};
use viseme_core::lexicon::{viseme_dict, PronDict};
use viseme_core::scoring::{align, fold_stats, Alignment, EditCosts};
use viseme_core::synth::{generate, PlantedWorld, SynthCorpus};
use viseme_core::P2VMap;

use crate::errors::{compute, usage, CliError, ErrorClass};
use crate::provenance::{base_name, csv_text, file_stem, write_file, Provenance};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Unit {
    Word,
    Phoneme,
    Viseme,
}

impl Unit {
    fn as_str(self) -> &'static str {
        match self {
            Unit::Word => "word",
            Unit::Phoneme => "phoneme",
            Unit::Viseme => "viseme",
        }
    }
}

/// Experiment designation M_n(p,q): map sourced from speaker n, models
/// trained on speaker p, tested on speaker q. The synthetic pipeline speaks
/// with a single voice, so all three default to "synth".
pub struct ExperimentSpec {
    pub map_source: String,
    pub train_speaker: String,
    pub test_speaker: String,
    pub folds: usize,
    pub seed: u64,
    pub world: PathBuf,
}

impl ExperimentSpec {
    pub fn designation(&self) -> String {
        format!("M_{}({},{})", self.map_source, self.train_speaker, self.test_speaker)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.folds < 2 {
            return Err(usage("cross-validation needs --folds of at least 2"));
        }
        Ok(())
    }
}

#[derive(Args)]
pub struct PipelineArgs {
    /// Planted-world description (emissions, alphabet, map, vocabulary)
    #[arg(long, value_name = "FILE")]
    world: PathBuf,
    /// Number of utterances to synthesize
    #[arg(long, default_value_t = 60)]
    utterances: usize,
    /// Cross-validation folds, each an independent random train/test split
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Fraction of utterances trained on per fold
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Token level of the decoding network
    #[arg(long, value_enum, default_value = "word")]
    network: Unit,
    /// Unit level of the classifier models
    #[arg(long, value_enum, default_value = "viseme")]
    units: Unit,
    /// Re-initialize phoneme models from the viseme models and retrain them
    #[arg(long)]
    weak_learn: bool,
    /// Re-estimation passes per training run
    #[arg(long, default_value_t = 11)]
    passes: usize,
    /// Re-align transcripts with the current models after this pass (0 = never)
    #[arg(long, default_value_t = 7)]
    align_at: usize,
    /// Emitting states per model
    #[arg(long, default_value_t = 3)]
    states: usize,
    /// Gaussian mixture components per state
    #[arg(long, default_value_t = 5)]
    mixes: usize,
    /// Weight on the network log-probability during decoding
    #[arg(long, default_value_t = 1.0)]
    grammar_scale: f64,
    /// Log-probability cost of entering each token during decoding
    #[arg(long, default_value_t = 0.5)]
    penalty: f64,
    /// Bigram smoothing floor (0 = pure maximum likelihood)
    #[arg(long, default_value_t = 0.01)]
    floor: f64,
    /// Keep derived vowel and consonant classes separate
    #[arg(long)]
    split: bool,
    /// Folds to run concurrently
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Speaker the map is derived from (designation subscript n)
    #[arg(long, default_value = "synth")]
    map_source: String,
    /// Speaker the models are trained on (designation p)
    #[arg(long, default_value = "synth")]
    train_speaker: String,
    /// Speaker the models are tested on (designation q)
    #[arg(long, default_value = "synth")]
    test_speaker: String,
    /// Output directory
    #[arg(short, long, default_value = "pipeline-out")]
    out: PathBuf,
}

struct StageRow {
    stage: &'static str,
    units: Unit,
    network: Unit,
    n: usize,
    matches: usize,
    subs: usize,
    ins: usize,
    dels: usize,
    correctness: f64,
    accuracy: f64,
}

struct FoldOutput {
    rows: Vec<StageRow>,
    map_text: String,
    confusion_csv: String,
    notes: Vec<String>,
}

pub fn run(args: PipelineArgs) -> Result<(), CliError> {
    let spec = ExperimentSpec {
        map_source: args.map_source.clone(),
        train_speaker: args.train_speaker.clone(),
        test_speaker: args.test_speaker.clone(),
        folds: args.folds,
        seed: args.seed,
        world: args.world.clone(),
    };
    spec.validate()?;
    if !(args.train_frac > 0.0 && args.train_frac < 1.0) {
        return Err(usage("--train-frac must sit strictly between 0 and 1"));
    }
    if args.utterances < 2 {
        return Err(usage("--utterances must be at least 2 so every fold can split"));
    }
    check_pairing(args.units, args.network)?;
    if args.weak_learn && args.units != Unit::Viseme {
        return Err(usage(
            "--weak-learn grows phoneme models out of viseme models; use --units viseme",
        ));
    }

    let mut prov = Provenance::with_seed(args.seed);
    let world_text = prov.read_input(&args.world)?;
    let (world, vocab) = PlantedWorld::parse(&file_stem(&args.world), &world_text)
        .or_input(format!("parsing world {}", args.world.display()))?;
    let corpus =
        generate(&world, args.utterances, &vocab).or_compute("synthesizing the corpus")?;

    let mut seed_rng = ChaCha8Rng::seed_from_u64(args.seed);
    let fold_seeds: Vec<u64> = (0..spec.folds).map(|_| seed_rng.gen()).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .or_compute("building the fold thread pool")?;
    let folds: Vec<FoldOutput> = pool.install(|| {
        fold_seeds
            .par_iter()
            .enumerate()
            .map(|(idx, &fold_seed)| run_fold(idx, fold_seed, &world, &vocab, &corpus, &args))
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let designation = spec.designation();
    let designation_note = vec![format!("designation: {designation}")];

    let results_header =
        "fold,stage,units,network,n,matches,substitutions,insertions,deletions,correctness,accuracy";
    let mut result_rows = Vec::new();
    for (idx, fold) in folds.iter().enumerate() {
        for r in &fold.rows {
            result_rows.push(format!(
                "{:02},{},{},{},{},{},{},{},{},{:.6},{:.6}",
                idx + 1,
                r.stage,
                r.units.as_str(),
                r.network.as_str(),
                r.n,
                r.matches,
                r.subs,
                r.ins,
                r.dels,
                r.correctness,
                r.accuracy
            ));
        }
    }
    write_file(
        &args.out.join("results.csv"),
        &csv_text(&prov, &designation_note, results_header, &result_rows),
    )?;

    let summary_header = "stage,units,network,designation,folds,mean_correctness,sigma_correctness,stderr_correctness,mean_accuracy,sigma_accuracy,stderr_accuracy";
    let mut summary_rows = Vec::new();
    for (pos, lead) in folds[0].rows.iter().enumerate() {
        let cs: Vec<f64> = folds.iter().map(|f| f.rows[pos].correctness).collect();
        let accs: Vec<f64> = folds.iter().map(|f| f.rows[pos].accuracy).collect();
        let c = fold_stats(&cs).or_compute("summarizing fold correctness")?;
        let a = fold_stats(&accs).or_compute("summarizing fold accuracy")?;
        summary_rows.push(format!(
            "{},{},{},{designation},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            lead.stage,
            lead.units.as_str(),
            lead.network.as_str(),
            folds.len(),
            c.mean,
            c.sigma,
            c.stderr,
            a.mean,
            a.sigma,
            a.stderr
        ));
    }
    write_file(
        &args.out.join("summary.csv"),
        &csv_text(&prov, &[], summary_header, &summary_rows),
    )?;

    for (idx, fold) in folds.iter().enumerate() {
        let fold_no = idx + 1;
        let mut map_file = prov.comment();
        map_file.push('\n');
        map_file.push_str(&fold.map_text);
        write_file(&args.out.join(format!("maps/fold-{fold_no:02}.p2v")), &map_file)?;

        let mut lines = fold.confusion_csv.lines();
        let header = lines.next().unwrap_or_default().to_string();
        let rows: Vec<String> = lines.map(str::to_string).collect();
        write_file(
            &args.out.join(format!("confusion/fold-{fold_no:02}.csv")),
            &csv_text(&prov, &[], &header, &rows),
        )?;
    }

    let mut log = vec![prov.comment()];
    log.push(format!("designation: {designation}"));
    log.push(format!("world: {}", base_name(&spec.world)));
    log.push(format!("seed: {}", spec.seed));
    log.push(format!("utterances: {}", args.utterances));
    log.push(format!("folds: {}", spec.folds));
    log.push(format!("train-frac: {}", args.train_frac));
    log.push(format!("pairing: {} units over a {} network", args.units.as_str(), args.network.as_str()));
    log.push(format!("weak-learn: {}", args.weak_learn));
    log.push(format!("passes: {}", args.passes));
    log.push(format!("align-at: {}", args.align_at));
    log.push(format!("states: {}", args.states));
    log.push(format!("mixes: {}", args.mixes));
    log.push(format!("grammar-scale: {}", args.grammar_scale));
    log.push(format!("penalty: {}", args.penalty));
    log.push(format!("floor: {}", args.floor));
    log.push(format!("split: {}", args.split));
    for fold in &folds {
        log.extend(fold.notes.iter().cloned());
    }
    log.push(String::new());
    write_file(&args.out.join("run.log"), &log.join("\n"))?;

    let classify = folds[0]
        .rows
        .iter()
        .position(|r| r.stage == "classify")
        .expect("every fold has a classify row");
    let mean_c: f64 =
        folds.iter().map(|f| f.rows[classify].correctness).sum::<f64>() / folds.len() as f64;
    println!(
        "{designation}: {} folds, mean classify correctness {:.6}; wrote {}",
        folds.len(),
        mean_c,
        args.out.display()
    );
    Ok(())
}

fn check_pairing(units: Unit, network: Unit) -> Result<(), CliError> {
    let ok = matches!(
        (units, network),
        (Unit::Viseme, _) | (Unit::Phoneme, Unit::Phoneme | Unit::Word) | (Unit::Word, Unit::Word)
    );
    if ok {
        Ok(())
    } else {
        Err(usage(format!(
            "'{}' units cannot ride a '{}' network; viseme units take any network, \
             phoneme units take phoneme or word networks, word units take the word network",
            units.as_str(),
            network.as_str()
        )))
    }
}

fn run_fold(
    idx: usize,
    fold_seed: u64,
    world: &PlantedWorld,
    vocab: &PronDict,
    corpus: &SynthCorpus,
    args: &PipelineArgs,
) -> Result<FoldOutput, CliError> {
    let fold_no = idx + 1;
    let ctx = format!("fold {fold_no:02}");
    let n = corpus.streams.len();

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * args.train_frac).round().clamp(1.0, (n - 1) as f64) as usize;
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let pick_streams = |idxs: &[usize]| -> Vec<FeatureStream> {
        idxs.iter().map(|&i| corpus.streams[i].clone()).collect()
    };
    let pick_labels = |idxs: &[usize], utts: &[viseme_core::lexicon::Utterance]| {
        idxs.iter().map(|&i| utts[i].labels.clone()).collect::<Vec<Vec<String>>>()
    };
    let train_streams = pick_streams(&train_idx);
    let test_streams = pick_streams(&test_idx);
    let train_ph = pick_labels(&train_idx, &corpus.phonemes.utterances);
    let test_ph = pick_labels(&test_idx, &corpus.phonemes.utterances);
    let train_words = pick_labels(&train_idx, &corpus.words.utterances);
    let test_words = pick_labels(&test_idx, &corpus.words.utterances);

    // Stage A is fixed: a phoneme recognizer whose test confusions seed the
    // map derivation, whatever pairing stage B runs with.
    let ph_models = train_models(&train_streams, &train_ph, args, fold_seed, &ctx, "phoneme")?;
    let (a_aligns, a_row) = stage(
        "baseline",
        Unit::Phoneme,
        Unit::Phoneme,
        &ph_models,
        &train_ph,
        &test_streams,
        &test_ph,
        None,
        args,
        &ctx,
    )?;
    let (confusion, _tally) = build_from_alignments(&a_aligns);

    let cfg = ClusterConfig {
        mode: ClusterMode::Strict,
        vc_policy: if args.split { VcPolicy::Split } else { VcPolicy::Mixed },
        target_sizes: None,
        tie_break: TieBreak::Lexicographic,
        seed: fold_seed,
    };
    let derived = cluster(&confusion, &world.inventory, &cfg)
        .or_compute(format!("{ctx}: deriving the map"))?
        .renamed(format!("fold-{fold_no:02}-strict"));

    let mut rows = vec![a_row];
    let mut notes = vec![format!(
        "{ctx}: train {} test {}; derived {} viseme classes",
        train_idx.len(),
        test_idx.len(),
        derived.viseme_classes().count()
    )];
    for w in derived.validate_against(&world.inventory) {
        notes.push(format!("{ctx} warning: {w}"));
    }

    match args.units {
        Unit::Viseme => {
            let train_vi = project(&train_ph, &derived, &ctx)?;
            let test_vi = project(&test_ph, &derived, &ctx)?;
            let vi_models = train_models(
                &train_streams,
                &train_vi,
                args,
                fold_seed.wrapping_add(1),
                &ctx,
                "viseme",
            )?;
            let (_, row) = match args.network {
                Unit::Viseme => stage(
                    "classify",
                    Unit::Viseme,
                    Unit::Viseme,
                    &vi_models,
                    &train_vi,
                    &test_streams,
                    &test_vi,
                    None,
                    args,
                    &ctx,
                )?,
                Unit::Phoneme => {
                    let dict = singleton_dict(&train_ph, &derived, &ctx)?;
                    stage(
                        "classify",
                        Unit::Viseme,
                        Unit::Phoneme,
                        &vi_models,
                        &train_ph,
                        &test_streams,
                        &test_ph,
                        Some(&dict),
                        args,
                        &ctx,
                    )?
                }
                Unit::Word => {
                    let dict = viseme_dict(vocab, &derived)
                        .or_compute(format!("{ctx}: projecting the vocabulary"))?;
                    stage(
                        "classify",
                        Unit::Viseme,
                        Unit::Word,
                        &vi_models,
                        &train_words,
                        &test_streams,
                        &test_words,
                        Some(&dict),
                        args,
                        &ctx,
                    )?
                }
            };
            rows.push(row);

            if args.weak_learn {
                let phonemes = distinct(&train_ph);
                let init = weak_learn_init(&vi_models, &derived, &phonemes)
                    .or_compute(format!("{ctx}: cloning viseme models"))?;
                let (trained, _lls) = reestimate(
                    &init,
                    &train_streams,
                    &train_ph,
                    args.passes,
                    realign_pass(args),
                )
                .or_compute(format!("{ctx}: retraining weak-learned models"))?;
                let (_, row) = stage(
                    "weak-learn",
                    Unit::Phoneme,
                    Unit::Phoneme,
                    &trained,
                    &train_ph,
                    &test_streams,
                    &test_ph,
                    None,
                    args,
                    &ctx,
                )?;
                rows.push(row);
            }
        }
        Unit::Phoneme => {
            let (_, row) = match args.network {
                Unit::Phoneme => stage(
                    "classify",
                    Unit::Phoneme,
                    Unit::Phoneme,
                    &ph_models,
                    &train_ph,
                    &test_streams,
                    &test_ph,
                    None,
                    args,
                    &ctx,
                )?,
                Unit::Word => stage(
                    "classify",
                    Unit::Phoneme,
                    Unit::Word,
                    &ph_models,
                    &train_words,
                    &test_streams,
                    &test_words,
                    Some(vocab),
                    args,
                    &ctx,
                )?,
                Unit::Viseme => unreachable!("pairing validated up front"),
            };
            rows.push(row);
        }
        Unit::Word => {
            let word_models = train_models(
                &train_streams,
                &train_words,
                args,
                fold_seed.wrapping_add(1),
                &ctx,
                "word",
            )?;
            let (_, row) = stage(
                "classify",
                Unit::Word,
                Unit::Word,
                &word_models,
                &train_words,
                &test_streams,
                &test_words,
                None,
                args,
                &ctx,
            )?;
            rows.push(row);
        }
    }

    Ok(FoldOutput {
        rows,
        map_text: derived.to_text(),
        confusion_csv: confusion.to_csv_string(),
        notes,
    })
}

fn realign_pass(args: &PipelineArgs) -> Option<usize> {
    (args.align_at > 0).then_some(args.align_at)
}

fn train_models(
    streams: &[FeatureStream],
    transcripts: &[Vec<String>],
    args: &PipelineArgs,
    seed: u64,
    ctx: &str,
    what: &str,
) -> Result<ModelSet, CliError> {
    let labels = distinct(transcripts);
    let proto = ProtoConfig { n_states: args.states, n_mix: args.mixes, seed };
    let set = flat_start(&labels, streams, &proto)
        .or_compute(format!("{ctx}: flat-starting {what} models"))?;
    let (set, _lls) = reestimate(&set, streams, transcripts, args.passes, realign_pass(args))
        .or_compute(format!("{ctx}: re-estimating {what} models"))?;
    Ok(set)
}

/// Decodes every test stream over a bigram network built from the training
/// transcripts, aligns against the references, and pools the counts.
#[allow(clippy::too_many_arguments)]
fn stage(
    stage: &'static str,
    units: Unit,
    network_level: Unit,
    models: &ModelSet,
    network_corpus: &[Vec<String>],
    test_streams: &[FeatureStream],
    refs: &[Vec<String>],
    dict: Option<&PronDict>,
    args: &PipelineArgs,
    ctx: &str,
) -> Result<(Vec<Alignment>, StageRow), CliError> {
    let network = build_bigram(network_corpus, args.floor)
        .or_compute(format!("{ctx}: building the {} network", network_level.as_str()))?;
    let mut alignments = Vec::with_capacity(test_streams.len());
    for (stream, reference) in test_streams.iter().zip(refs) {
        let hyp = decode(models, &network, stream, dict, args.grammar_scale, args.penalty)
            .or_compute(format!("{ctx}: decoding {}", stream.id))?;
        alignments.push(align(reference, &hyp, EditCosts::unit()));
    }
    let (mut n, mut m, mut s, mut i, mut d) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for a in &alignments {
        n += a.n();
        m += a.matches();
        s += a.substitutions();
        i += a.insertions();
        d += a.deletions();
    }
    if n == 0 {
        return Err(compute(format!("{ctx}: the test references are empty")));
    }
    let correctness = (n - d - s) as f64 / n as f64;
    let accuracy = ((n - d - s) as f64 - i as f64) / n as f64;
    Ok((
        alignments,
        StageRow {
            stage,
            units,
            network: network_level,
            n,
            matches: m,
            subs: s,
            ins: i,
            dels: d,
            correctness,
            accuracy,
        },
    ))
}

fn project(
    transcripts: &[Vec<String>],
    map: &P2VMap,
    ctx: &str,
) -> Result<Vec<Vec<String>>, CliError> {
    transcripts
        .iter()
        .map(|labels| {
            labels
                .iter()
                .map(|ph| {
                    map.viseme_of(ph).map(str::to_string).ok_or_else(|| {
                        compute(format!("{ctx}: '{ph}' is not covered by the derived map"))
                    })
                })
                .collect()
        })
        .collect()
}

/// Dictionary reading each phoneme token as its one-viseme pronunciation, so
/// viseme models can ride a phoneme-level network.
fn singleton_dict(
    transcripts: &[Vec<String>],
    map: &P2VMap,
    ctx: &str,
) -> Result<PronDict, CliError> {
    let mut dict = PronDict::new();
    for ph in distinct(transcripts) {
        let viseme = map.viseme_of(&ph).ok_or_else(|| {
            compute(format!("{ctx}: '{ph}' is not covered by the derived map"))
        })?;
        dict.push(&ph, vec![viseme.to_string()]);
    }
    Ok(dict)
}

fn distinct(transcripts: &[Vec<String>]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for t in transcripts {
        for label in t {
            set.insert(label.clone());
        }
    }
    set.into_iter().collect()
}
