use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;

use viseme_core::mapsim::{similarity, MapSimError, SimilarityReport};
use viseme_core::P2VMap;

use crate::errors::{usage, CliError, ErrorClass};
use crate::provenance::{csv_text, file_stem, write_file, Provenance};

#[derive(Args)]
pub struct SimArgs {
    /// First map of a pair comparison
    #[arg(short = 'a', long = "map-a", value_name = "MAP", requires = "map_b")]
    map_a: Option<PathBuf>,
    /// Second map of a pair comparison
    #[arg(short = 'b', long = "map-b", value_name = "MAP", requires = "map_a")]
    map_b: Option<PathBuf>,
    /// Pairwise similarity matrix over these map files
    #[arg(long, value_name = "MAP", num_args = 2.., conflicts_with_all = ["map_a", "map_b"])]
    maps: Option<Vec<PathBuf>>,
    /// Write the table here instead of stdout
    #[arg(short, long, value_name = "CSV")]
    out: Option<PathBuf>,
}

pub fn run(args: SimArgs) -> Result<(), CliError> {
    let mut prov = Provenance::new();
    if let Some(paths) = &args.maps {
        let maps = load_maps(&mut prov, paths)?;
        let table = matrix_csv(&prov, &maps)?;
        emit(&args.out, &table)
    } else {
        let (a, b) = match (&args.map_a, &args.map_b) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(usage("give a pair (-a MAP -b MAP) or a set (--maps MAP MAP ...)")),
        };
        let map_a = load_map(&mut prov, a)?;
        let map_b = load_map(&mut prov, b)?;
        let rep = similarity(&map_a, &map_b)
            .or_compute(format!("comparing '{}' and '{}'", map_a.name(), map_b.name()))?;
        println!("S({}, {}) = {:.6}", rep.map_a, rep.map_b, rep.score);
        if let Some(path) = &args.out {
            write_file(path, &pair_csv(&prov, &rep))?;
        }
        Ok(())
    }
}

fn load_map(prov: &mut Provenance, path: &Path) -> Result<P2VMap, CliError> {
    let text = prov.read_input(path)?;
    P2VMap::parse(file_stem(path), &text).or_input(format!("parsing map {}", path.display()))
}

fn load_maps(prov: &mut Provenance, paths: &[PathBuf]) -> Result<Vec<P2VMap>, CliError> {
    let mut maps = Vec::with_capacity(paths.len());
    let mut seen = BTreeSet::new();
    for path in paths {
        let map = load_map(prov, path)?;
        if !seen.insert(map.name().to_string()) {
            return Err(usage(format!("map name '{}' appears twice in --maps", map.name())));
        }
        maps.push(map);
    }
    Ok(maps)
}

/// The class-match table of one pair, with the shared-symbol count and the
/// diagonal/off-diagonal mass split carried as comments.
fn pair_csv(prov: &Provenance, rep: &SimilarityReport) -> String {
    let extra = vec![
        format!("maps: {} vs {}", rep.map_a, rep.map_b),
        format!("matched phonemes: {}", rep.matched_phonemes.len()),
        format!("upper {:.6}; lower {:.6}; score {:.6}", rep.upper, rep.lower, rep.score),
    ];
    let header = format!("class,{}", rep.col_labels.join(","));
    let rows: Vec<String> = rep
        .row_labels
        .iter()
        .zip(&rep.table)
        .map(|(label, cells)| {
            let mut row = label.clone();
            for v in cells {
                row.push_str(&format!(",{v:.6}"));
            }
            row
        })
        .collect();
    csv_text(prov, &extra, &header, &rows)
}

fn matrix_csv(prov: &Provenance, maps: &[P2VMap]) -> Result<String, CliError> {
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
                    return Err(e).or_compute(format!(
                        "comparing '{}' and '{}'",
                        a.name(),
                        b.name()
                    ));
                }
            }
        }
        rows.push(row);
    }
    let mut extra = Vec::new();
    if disjoint {
        extra.push("empty cell: maps share no phonemes".to_string());
    }
    let header = format!("map,{}", names.join(","));
    Ok(csv_text(prov, &extra, &header, &rows))
}

fn emit(out: &Option<PathBuf>, table: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}
