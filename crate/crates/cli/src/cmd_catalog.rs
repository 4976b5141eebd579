use std::path::PathBuf;

use clap::Args;

use viseme_core::catalog::{default_inventory, load_catalog, load_catalog_map};
use viseme_core::P2VMap;

use crate::errors::{usage, CliError, ErrorClass};
use crate::provenance::{csv_text, write_file, Provenance};

#[derive(Args)]
pub struct CatalogArgs {
    /// Print one catalog map in map-file form
    #[arg(long, value_name = "MAP")]
    name: Option<String>,
    /// Write every catalog map plus the phoneme alphabet into a directory
    #[arg(long, value_name = "DIR")]
    dump: Option<PathBuf>,
}

pub fn run(args: CatalogArgs) -> Result<(), CliError> {
    if let Some(name) = &args.name {
        let entry = load_catalog_map(name)
            .or_compute("loading built-in catalog")?
            .ok_or_else(|| usage(format!("no catalog map named '{name}'")))?;
        print!("{}", render_map(&entry.map, &entry.notes));
        return Ok(());
    }

    let entries = load_catalog().or_compute("loading built-in catalog")?;
    let header = "name,visemes,phonemes,compression_factor";
    let mut rows = Vec::with_capacity(entries.len());
    for e in &entries {
        rows.push(list_row(&e.map)?);
    }
    let table = csv_text(&Provenance::new(), &[], header, &rows);

    if let Some(dir) = &args.dump {
        for e in &entries {
            let path = dir.join(format!("{}.p2v", e.map.name()));
            write_file(&path, &render_map(&e.map, &e.notes))?;
        }
        write_file(&dir.join("inventory.txt"), &default_inventory().to_text())?;
        write_file(&dir.join("catalog.csv"), &table)?;
        println!("wrote {} maps to {}", entries.len(), dir.display());
    } else {
        print!("{table}");
    }
    Ok(())
}

fn list_row(map: &P2VMap) -> Result<String, CliError> {
    let visemes = map.viseme_classes().count();
    let phonemes: usize = map.viseme_classes().map(|c| c.members.len()).sum();
    let cf = map
        .compression_factor()
        .or_compute(format!("compression factor of '{}'", map.name()))?;
    Ok(format!("{},{},{},{:.4}", map.name(), visemes, phonemes, cf))
}

fn render_map(map: &P2VMap, notes: &str) -> String {
    let mut out = String::new();
    if !notes.is_empty() {
        out.push_str("# ");
        out.push_str(notes);
        out.push('\n');
    }
    out.push_str(&map.to_text());
    out
}
