use std::fs;
use std::path::Path;

use crate::inventory::Inventory;
use crate::p2vmap::{P2VError, P2VMap};

/// A packaged map plus the transcription notes carried in its file header.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub map: P2VMap,
    pub notes: String,
}

macro_rules! packaged {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../../catalog/", $name, ".p2v")))),*]
    };
}

const PACKAGED: &[(&str, &str)] = packaged![
    "avl2-m1",
    "avl2-m2",
    "avl2-m3",
    "avl2-m4",
    "avl2-ms",
    "avl2-si-m123",
    "avl2-si-m124",
    "avl2-si-m134",
    "avl2-si-m234",
    "binnie-consonants",
    "bozkurt-consonants",
    "bozkurt-vowels",
    "common-pair",
    "disney",
    "disney-consonants",
    "disney-vowels",
    "finn-consonants",
    "fisher-consonants",
    "franks-consonants",
    "hazen-consonants",
    "hazen-vowels",
    "heider-consonants",
    "jeffers-consonants",
    "jeffers-vowels",
    "kricos-consonants",
    "lee-consonants",
    "lee-vowels",
    "montgomery-vowels",
    "neti-consonants",
    "neti-vowels",
    "nichie",
    "nichie-consonants",
    "nichie-vowels",
    "rmav-ms",
    "walden-consonants",
    "walden-montgomery",
    "woodward-consonants",
];

const INVENTORY_TEXT: &str = include_str!("../../../catalog/inventory.txt");

fn header_notes(text: &str) -> String {
    let mut notes = String::new();
    for line in text.lines() {
        let Some(comment) = line.strip_prefix('#') else { break };
        if !notes.is_empty() {
            notes.push('\n');
        }
        notes.push_str(comment.trim());
    }
    notes
}

/// The packaged maps in name order.
pub fn load_catalog() -> Result<Vec<CatalogEntry>, P2VError> {
    PACKAGED
        .iter()
        .map(|(name, text)| {
            Ok(CatalogEntry { map: P2VMap::parse(*name, text)?, notes: header_notes(text) })
        })
        .collect()
}

pub fn load_catalog_map(name: &str) -> Result<Option<CatalogEntry>, P2VError> {
    match PACKAGED.iter().find(|(n, _)| *n == name) {
        Some((n, text)) => {
            Ok(Some(CatalogEntry { map: P2VMap::parse(*n, text)?, notes: header_notes(text) }))
        }
        None => Ok(None),
    }
}

pub fn catalog_names() -> Vec<&'static str> {
    PACKAGED.iter().map(|(n, _)| *n).collect()
}

/// Loads every `.p2v` file in a directory as a catalog, sorted by name.
pub fn load_catalog_from_dir(dir: impl AsRef<Path>) -> Result<Vec<CatalogEntry>, P2VError> {
    let mut paths: Vec<_> = fs::read_dir(dir.as_ref())?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "p2v"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path)?;
            Ok(CatalogEntry { map: P2VMap::from_path(&path)?, notes: header_notes(&text) })
        })
        .collect()
}

/// The packaged phoneme alphabet.
pub fn default_inventory() -> Inventory {
    Inventory::parse(INVENTORY_TEXT).expect("packaged alphabet is well-formed")
}
