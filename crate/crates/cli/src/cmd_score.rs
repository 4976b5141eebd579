use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use viseme_core::confusion::build_from_alignments;
use viseme_core::lexicon::{Level, Transcript};
use viseme_core::scoring::{align, Alignment, EditCosts};

use crate::errors::{compute, CliError, ErrorClass};
use crate::provenance::{csv_text, write_file, Provenance};

#[derive(Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Word,
    Phoneme,
    Viseme,
}

impl From<LevelArg> for Level {
    fn from(v: LevelArg) -> Level {
        match v {
            LevelArg::Word => Level::Word,
            LevelArg::Phoneme => Level::Phoneme,
            LevelArg::Viseme => Level::Viseme,
        }
    }
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Reference transcript (one utterance per line: id<TAB>fold<TAB>labels)
    #[arg(long = "ref", value_name = "TSV")]
    reference: PathBuf,
    /// Hypothesis transcript, same format and utterance ids
    #[arg(long = "hyp", value_name = "TSV")]
    hypothesis: PathBuf,
    /// Label level both transcripts are read at
    #[arg(long, value_enum, default_value = "word")]
    level: LevelArg,
    /// HTK alignment costs (sub 10, del 7, ins 7) instead of unit costs
    #[arg(long)]
    htk_costs: bool,
    /// Write per-utterance rows plus a pooled "all" row here
    #[arg(short, long, value_name = "CSV")]
    out: Option<PathBuf>,
    /// Write the substitution confusion matrix here
    #[arg(long, value_name = "CSV")]
    confusion: Option<PathBuf>,
}

pub fn run(args: ScoreArgs) -> Result<(), CliError> {
    let mut prov = Provenance::new();
    let level: Level = args.level.into();
    let ref_text = prov.read_input(&args.reference)?;
    let hyp_text = prov.read_input(&args.hypothesis)?;
    let reference = Transcript::parse(&ref_text, level)
        .or_input(format!("parsing reference {}", args.reference.display()))?;
    let hypothesis = Transcript::parse(&hyp_text, level)
        .or_input(format!("parsing hypothesis {}", args.hypothesis.display()))?;

    let by_id: BTreeMap<&str, &[String]> =
        hypothesis.utterances.iter().map(|u| (u.id.as_str(), u.labels.as_slice())).collect();
    let costs = if args.htk_costs { EditCosts::htk() } else { EditCosts::unit() };

    let mut alignments: Vec<(String, Alignment)> = Vec::with_capacity(reference.utterances.len());
    for utt in &reference.utterances {
        let hyp = by_id
            .get(utt.id.as_str())
            .ok_or_else(|| compute(format!("hypothesis is missing utterance '{}'", utt.id)))?;
        alignments.push((utt.id.clone(), align(&utt.labels, hyp, costs)));
    }
    if alignments.len() != hypothesis.utterances.len() {
        let extra: Vec<&str> = hypothesis
            .utterances
            .iter()
            .map(|u| u.id.as_str())
            .filter(|id| !reference.utterances.iter().any(|r| r.id == *id))
            .collect();
        return Err(compute(format!(
            "hypothesis has utterances absent from the reference: {}",
            extra.join(", ")
        )));
    }

    let mut rows = Vec::with_capacity(alignments.len() + 1);
    let (mut n, mut m, mut s, mut i, mut d) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (id, a) in &alignments {
        rows.push(score_row(id, a)?);
        n += a.n();
        m += a.matches();
        s += a.substitutions();
        i += a.insertions();
        d += a.deletions();
    }
    if n == 0 {
        return Err(compute("reference transcript has no labels to score"));
    }
    let correctness = (n - d - s) as f64 / n as f64;
    let accuracy = ((n - d - s) as f64 - i as f64) / n as f64;
    rows.push(format!("all,{n},{m},{s},{i},{d},{correctness:.6},{accuracy:.6}"));

    println!(
        "correctness {:.6} accuracy {:.6} over {} utterances (N={})",
        correctness,
        accuracy,
        alignments.len(),
        n
    );

    let header = "id,n,matches,substitutions,insertions,deletions,correctness,accuracy";
    let costs_note = format!(
        "costs: {}",
        if args.htk_costs { "htk (sub 10, del 7, ins 7)" } else { "unit" }
    );
    if let Some(path) = &args.out {
        write_file(path, &csv_text(&prov, std::slice::from_ref(&costs_note), header, &rows))?;
    }
    if let Some(path) = &args.confusion {
        let only: Vec<Alignment> = alignments.iter().map(|(_, a)| a.clone()).collect();
        let (matrix, tally) = build_from_alignments(&only);
        let mut extra = vec![costs_note];
        for (label, count) in &tally.insertions {
            extra.push(format!("insertion {label} {count}"));
        }
        for (label, count) in &tally.deletions {
            extra.push(format!("deletion {label} {count}"));
        }
        let csv = matrix.to_csv_string();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default().to_string();
        let rows: Vec<String> = lines.map(str::to_string).collect();
        write_file(path, &csv_text(&prov, &extra, &header, &rows))?;
    }
    Ok(())
}

fn score_row(id: &str, a: &Alignment) -> Result<String, CliError> {
    let c = a.correctness().or_compute(format!("scoring utterance '{id}'"))?;
    let acc = a.accuracy().or_compute(format!("scoring utterance '{id}'"))?;
    Ok(format!(
        "{id},{},{},{},{},{},{c:.6},{acc:.6}",
        a.n(),
        a.matches(),
        a.substitutions(),
        a.insertions(),
        a.deletions()
    ))
}
