use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;

use viseme_core::catalog::{default_inventory, load_catalog};
use viseme_core::lexicon::{guessing_baseline, homophone_tokens, viseme_dict, PronDict};
use viseme_core::mapsim::{similarity, MapSimError};
use viseme_core::{Inventory, P2VMap};

use crate::errors::{usage, CliError, ErrorClass};
use crate::provenance::{csv_text, file_stem, write_file, Provenance};

#[derive(Args)]
pub struct ReportArgs {
    /// Map files to report on
    #[arg(long, value_name = "MAP", num_args = 1..)]
    maps: Vec<PathBuf>,
    /// Also include every built-in catalog map
    #[arg(long)]
    catalog: bool,
    /// Pronunciation dictionary for the homophone and baseline tables
    #[arg(long, value_name = "DICT")]
    dict: Option<PathBuf>,
    /// Phoneme alphabet the dictionary is read against
    #[arg(long, value_name = "FILE")]
    inventory: Option<PathBuf>,
    /// Output directory
    #[arg(short, long, default_value = "report")]
    out: PathBuf,
}

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    let mut prov = Provenance::new();
    let mut maps: Vec<P2VMap> = Vec::new();
    if args.catalog {
        let entries = load_catalog().or_compute("loading built-in catalog")?;
        maps.extend(entries.into_iter().map(|e| e.map));
    }
    for path in &args.maps {
        let text = prov.read_input(path)?;
        maps.push(
            P2VMap::parse(file_stem(path), &text)
                .or_input(format!("parsing map {}", path.display()))?,
        );
    }
    if maps.is_empty() {
        return Err(usage("nothing to report on: give --maps and/or --catalog"));
    }
    let mut seen = BTreeSet::new();
    for m in &maps {
        if !seen.insert(m.name().to_string()) {
            return Err(usage(format!("map name '{}' appears twice", m.name())));
        }
    }

    write_file(&args.out.join("cf.csv"), &cf_csv(&prov, &maps)?)?;
    write_file(&args.out.join("similarity.csv"), &similarity_csv(&prov, &maps)?)?;

    if let Some(dict_path) = &args.dict {
        let inventory = match &args.inventory {
            Some(path) => {
                let text = prov.read_input(path)?;
                Inventory::parse(&text)
                    .or_input(format!("parsing alphabet {}", path.display()))?
            }
            None => default_inventory(),
        };
        let dict_text = prov.read_input(dict_path)?;
        let dict = PronDict::parse(&dict_text, &inventory, Default::default())
            .or_input(format!("parsing dictionary {}", dict_path.display()))?;
        let (homophones, baseline) = dict_tables(&prov, &maps, &dict)?;
        write_file(&args.out.join("homophones.csv"), &homophones)?;
        write_file(&args.out.join("baseline.csv"), &baseline)?;
    }
    println!("wrote report for {} map(s) to {}", maps.len(), args.out.display());
    Ok(())
}

fn cf_csv(prov: &Provenance, maps: &[P2VMap]) -> Result<String, CliError> {
    let header = "map,visemes,phonemes,compression_factor";
    let mut rows = Vec::with_capacity(maps.len());
    for map in maps {
        let visemes = map.viseme_classes().count();
        let phonemes: usize = map.viseme_classes().map(|c| c.members.len()).sum();
        let cf = map
            .compression_factor()
            .or_compute(format!("compression factor of '{}'", map.name()))?;
        rows.push(format!("{},{visemes},{phonemes},{cf:.4}", map.name()));
    }
    Ok(csv_text(prov, &[], header, &rows))
}

fn similarity_csv(prov: &Provenance, maps: &[P2VMap]) -> Result<String, CliError> {
    let names: Vec<&str> = maps.iter().map(|m| m.name()).collect();
    let mut disjoint = false;
    let mut rows = Vec::with_capacity(maps.len());
    for a in maps {
        let mut row = a.name().to_string();
        for b in maps {
            match similarity(a, b) {
                Ok(rep) => row.push_str(&format!(",{:.6}", rep.score)),
                Err(MapSimError::NoSharedPhonemes { .. }) => {
                    disjoint = true;
                    row.push(',');
                }
                Err(e) => {
                    return Err(e)
                        .or_compute(format!("comparing '{}' and '{}'", a.name(), b.name()));
                }
            }
        }
        rows.push(row);
    }
    let mut extra = Vec::new();
    if disjoint {
        extra.push("empty cell: maps share no phonemes".to_string());
    }
    Ok(csv_text(prov, &extra, &format!("map,{}", names.join(",")), &rows))
}

/// Homophone and guessing-baseline tables. Rows appear only for maps that
/// cover every phoneme the dictionary uses; a word with several
/// pronunciations counts once per distinct viseme string it reaches.
fn dict_tables(
    prov: &Provenance,
    maps: &[P2VMap],
    dict: &PronDict,
) -> Result<(String, String), CliError> {
    let mut skipped = Vec::new();
    let mut hom_rows = Vec::new();
    let mut base_rows = Vec::new();
    for map in maps {
        let vdict = match viseme_dict(dict, map) {
            Ok(v) => v,
            Err(_) => {
                skipped.push(map.name().to_string());
                continue;
            }
        };
        let report = homophone_tokens(&vdict);
        let counts: Vec<u64> = report.groups.iter().map(|g| g.words.len() as u64).collect();
        let total: u64 = counts.iter().sum();
        let collisions: Vec<usize> = report
            .groups
            .iter()
            .map(|g| g.words.len())
            .filter(|&size| size > 1)
            .collect();
        hom_rows.push(format!(
            "{},{},{},{},{}",
            map.name(),
            total,
            report.token_count,
            collisions.len(),
            collisions.iter().max().copied().unwrap_or(1)
        ));
        let baseline = guessing_baseline(&counts, total)
            .or_compute(format!("guessing baseline of '{}'", map.name()))?;
        base_rows.push(format!("{},{},{total},{baseline:.6}", map.name(), report.token_count));
    }
    let mut extra = Vec::new();
    if !skipped.is_empty() {
        extra.push(format!(
            "maps lacking coverage of the dictionary are omitted: {}",
            skipped.join(" ")
        ));
    }
    let homophones = csv_text(
        prov,
        &extra,
        "map,words,tokens,collision_groups,largest_group",
        &hom_rows,
    );
    let baseline = csv_text(prov, &extra, "map,tokens,words,guessing_baseline", &base_rows);
    Ok((homophones, baseline))
}
