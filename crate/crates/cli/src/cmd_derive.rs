use std::path::{Path, PathBuf};

use clap::Args;

use viseme_core::catalog::default_inventory;
use viseme_core::clustering::{
    cluster, common_pair_cluster, controlled_merge, derive_ms_si, ClusterConfig, ClusterMode,
    TieBreak, VcPolicy,
};
use viseme_core::confusion::ConfusionMatrix;
use viseme_core::{Inventory, P2VMap};

use crate::errors::{usage, CliError, ErrorClass};
use crate::provenance::{base_name, file_stem, write_file, Provenance};

#[derive(Args)]
pub struct DeriveArgs {
    /// Confusion matrix CSV (rows = reference labels, columns = recognized)
    #[arg(short = 'i', long, value_name = "CSV")]
    input: Option<PathBuf>,
    /// Strictly-confused clustering (the default mode)
    #[arg(long)]
    strict: bool,
    /// Strict pass, then fold leftover singletons into their closest class
    #[arg(long)]
    relaxed: bool,
    /// Controlled-size merging, from singleton classes down to two
    #[arg(long)]
    merge: bool,
    /// Class counts for --merge: a descending range "10..2" or a list "6,4,3"
    #[arg(long, value_name = "SPEC", requires = "merge")]
    sizes: Option<String>,
    /// Derive the common-pair map of these map files
    #[arg(long, value_name = "MAP", num_args = 1..)]
    common_pair: Option<Vec<PathBuf>>,
    /// Pool all named speakers into a multi-speaker map
    #[arg(long)]
    ms: bool,
    /// Hold one speaker out and pool the rest (speaker-independent map)
    #[arg(long, value_name = "NAME")]
    si: Option<String>,
    /// Per-speaker confusion CSV for --ms / --si, repeatable: NAME=FILE
    #[arg(long, value_name = "NAME=FILE")]
    speaker: Vec<String>,
    /// Phoneme alphabet file (defaults to the built-in alphabet)
    #[arg(long, value_name = "FILE")]
    inventory: Option<PathBuf>,
    /// Keep vowels and consonants in separate classes
    #[arg(long)]
    split: bool,
    /// Break clustering ties with a seeded draw instead of lexicographically
    #[arg(long)]
    seeded_ties: bool,
    /// Seed for --seeded-ties
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

enum Mode {
    Strict,
    Relaxed,
    Merge,
    CommonPair,
    MsSi,
}

impl Mode {
    fn name(&self) -> &'static str {
        match self {
            Mode::Strict => "strict",
            Mode::Relaxed => "relaxed",
            Mode::Merge => "controlled-merge",
            Mode::CommonPair => "common-pair",
            Mode::MsSi => "pooled",
        }
    }
}

pub fn run(args: DeriveArgs) -> Result<(), CliError> {
    let mode = select_mode(&args)?;
    let mut prov = Provenance::with_seed(args.seed);
    let inventory = match &args.inventory {
        Some(path) => {
            let text = prov.read_input(path)?;
            Inventory::parse(&text).or_input(format!("parsing alphabet {}", path.display()))?
        }
        None => default_inventory(),
    };
    let cfg = ClusterConfig {
        mode: if matches!(mode, Mode::Relaxed) { ClusterMode::Relaxed } else { ClusterMode::Strict },
        vc_policy: if args.split { VcPolicy::Split } else { VcPolicy::Mixed },
        target_sizes: match &args.sizes {
            Some(spec) => Some(parse_sizes(spec)?),
            None => None,
        },
        tie_break: if args.seeded_ties { TieBreak::Seeded } else { TieBreak::Lexicographic },
        seed: args.seed,
    };

    let mut warnings: Vec<String> = Vec::new();
    let maps: Vec<P2VMap> = match mode {
        Mode::Strict | Mode::Relaxed => {
            let k = read_confusion(&mut prov, required_input(&args)?)?;
            vec![cluster(&k, &inventory, &cfg).or_compute("clustering confusion matrix")?]
        }
        Mode::Merge => {
            let k = read_confusion(&mut prov, required_input(&args)?)?;
            let run = controlled_merge(&k, &inventory, &cfg).or_compute("controlled merging")?;
            warnings = run.warnings;
            run.maps
        }
        Mode::CommonPair => {
            let paths = args.common_pair.as_deref().expect("mode implies paths");
            if paths.len() < 2 {
                return Err(usage("--common-pair needs at least two map files"));
            }
            let mut loaded = Vec::with_capacity(paths.len());
            for path in paths {
                let text = prov.read_input(path)?;
                let map = P2VMap::parse(file_stem(path), &text)
                    .or_input(format!("parsing map {}", path.display()))?;
                loaded.push(map);
            }
            vec![common_pair_cluster(&loaded).or_compute("common-pair clustering")?]
        }
        Mode::MsSi => {
            let speakers = read_speakers(&mut prov, &args.speaker)?;
            let map = derive_ms_si(&speakers, args.si.as_deref(), &inventory, &cfg)
                .or_compute("pooling speaker confusions")?;
            vec![map]
        }
    };

    let mut log = vec![prov.comment()];
    log.push(format!("algorithm: {}", mode.name()));
    log.push(format!("vc-policy: {}", if args.split { "split" } else { "mixed" }));
    log.push(format!(
        "tie-break: {}",
        if args.seeded_ties { "seeded" } else { "lexicographic" }
    ));
    log.push(format!("seed: {}", args.seed));
    if matches!(mode, Mode::Merge) {
        log.push(format!("sizes: {}", args.sizes.as_deref().unwrap_or("all")));
    }
    log.push(format!(
        "inventory: {}",
        args.inventory.as_deref().map(base_name).unwrap_or_else(|| "built-in".to_string())
    ));

    for map in &maps {
        let file = format!("{}.p2v", map.name());
        let mut text = prov.comment();
        text.push('\n');
        text.push_str(&format!("# derived: {}\n", mode.name()));
        text.push_str(&map.to_text());
        write_file(&args.out.join(&file), &text)?;
        log.push(format!("output: {file}"));
        for w in map.validate_against(&inventory) {
            warnings.push(format!("{}: {w}", map.name()));
        }
    }
    for w in &warnings {
        log.push(format!("warning: {w}"));
    }
    log.push(String::new());
    write_file(&args.out.join("derivation.log"), &log.join("\n"))?;
    println!("wrote {} map(s) to {}", maps.len(), args.out.display());
    Ok(())
}

fn select_mode(args: &DeriveArgs) -> Result<Mode, CliError> {
    let mut picked = Vec::new();
    if args.strict {
        picked.push(Mode::Strict);
    }
    if args.relaxed {
        picked.push(Mode::Relaxed);
    }
    if args.merge {
        picked.push(Mode::Merge);
    }
    if args.common_pair.is_some() {
        picked.push(Mode::CommonPair);
    }
    if args.ms || args.si.is_some() {
        picked.push(Mode::MsSi);
    }
    if picked.len() > 1 {
        return Err(usage("choose one of --strict, --relaxed, --merge, --common-pair, --ms, --si"));
    }
    let mode = picked.pop().unwrap_or(Mode::Strict);
    if args.split && matches!(mode, Mode::CommonPair) {
        return Err(usage("--split does not apply to --common-pair"));
    }
    Ok(mode)
}

fn required_input(args: &DeriveArgs) -> Result<&PathBuf, CliError> {
    args.input.as_ref().ok_or_else(|| usage("this mode needs a confusion matrix: -i <CSV>"))
}

fn read_confusion(prov: &mut Provenance, path: &Path) -> Result<ConfusionMatrix, CliError> {
    let text = prov.read_input(path)?;
    ConfusionMatrix::parse_csv(&text).or_input(format!("parsing confusion {}", path.display()))
}

fn read_speakers(
    prov: &mut Provenance,
    specs: &[String],
) -> Result<Vec<(String, ConfusionMatrix)>, CliError> {
    if specs.is_empty() {
        return Err(usage("--ms / --si need at least one --speaker NAME=FILE"));
    }
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("bad --speaker '{spec}', expected NAME=FILE")))?;
        let k = read_confusion(prov, &PathBuf::from(path))?;
        out.push((name.to_string(), k));
    }
    Ok(out)
}

fn parse_sizes(spec: &str) -> Result<Vec<usize>, CliError> {
    let one = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("bad class count '{}' in --sizes", s.trim())))
    };
    if let Some((hi, lo)) = spec.split_once("..") {
        let (hi, lo) = (one(hi)?, one(lo)?);
        if hi < lo {
            return Err(usage(format!("--sizes range '{spec}' must descend, e.g. 10..2")));
        }
        Ok((lo..=hi).rev().collect())
    } else {
        spec.split(',').map(one).collect()
    }
}
