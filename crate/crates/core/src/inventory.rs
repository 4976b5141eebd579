use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("inventory is empty")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate symbol '{0}'")]
    Duplicate(String),
    #[error("invalid symbol '{0}': symbols must be non-empty and whitespace-free")]
    BadSymbol(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Broad class of a unit in the phoneme alphabet. Silence and the short pause
/// are "special": they pass through map derivation untouched and are excluded
/// from compression factors and similarity scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhonemeClass {
    Vowel,
    Consonant,
    Silence,
    ShortPause,
}

impl PhonemeClass {
    pub fn is_special(self) -> bool {
        matches!(self, PhonemeClass::Silence | PhonemeClass::ShortPause)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhonemeClass::Vowel => "vowel",
            PhonemeClass::Consonant => "consonant",
            PhonemeClass::Silence => "silence",
            PhonemeClass::ShortPause => "short_pause",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vowel" => Some(PhonemeClass::Vowel),
            "consonant" => Some(PhonemeClass::Consonant),
            "silence" => Some(PhonemeClass::Silence),
            "short_pause" => Some(PhonemeClass::ShortPause),
            _ => None,
        }
    }
}

impl fmt::Display for PhonemeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phoneme {
    pub symbol: String,
    pub klass: PhonemeClass,
}

/// The phoneme alphabet an experiment runs over: each symbol with its class,
/// in declaration order. Symbols are unique and whitespace-free.
#[derive(Debug, Clone)]
pub struct Inventory {
    items: Vec<Phoneme>,
    index: HashMap<String, usize>,
}

impl Inventory {
    pub fn new(items: Vec<Phoneme>) -> Result<Self, InventoryError> {
        if items.is_empty() {
            return Err(InventoryError::Empty);
        }
        let mut index = HashMap::with_capacity(items.len());
        for (i, p) in items.iter().enumerate() {
            if p.symbol.is_empty() || p.symbol.chars().any(char::is_whitespace) {
                return Err(InventoryError::BadSymbol(p.symbol.clone()));
            }
            if index.insert(p.symbol.clone(), i).is_some() {
                return Err(InventoryError::Duplicate(p.symbol.clone()));
            }
        }
        Ok(Inventory { items, index })
    }

    /// Parses the `symbol class` line format. Blank lines and `#` comments are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self, InventoryError> {
        let mut items = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let symbol = fields.next().unwrap().to_string();
            let klass_str = fields.next().ok_or_else(|| InventoryError::Parse {
                line: lineno + 1,
                msg: format!("expected 'symbol class', got '{line}'"),
            })?;
            if fields.next().is_some() {
                return Err(InventoryError::Parse {
                    line: lineno + 1,
                    msg: format!("trailing fields after class in '{line}'"),
                });
            }
            let klass = PhonemeClass::parse(klass_str).ok_or_else(|| InventoryError::Parse {
                line: lineno + 1,
                msg: format!("unknown class '{klass_str}'"),
            })?;
            items.push(Phoneme { symbol, klass });
        }
        Inventory::new(items)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, InventoryError> {
        Inventory::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.items {
            out.push_str(&p.symbol);
            out.push(' ');
            out.push_str(p.klass.as_str());
            out.push('\n');
        }
        out
    }

    pub fn get(&self, symbol: &str) -> Option<&Phoneme> {
        self.index.get(symbol).map(|&i| &self.items[i])
    }

    pub fn klass_of(&self, symbol: &str) -> Option<PhonemeClass> {
        self.get(symbol).map(|p| p.klass)
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    pub fn is_special(&self, symbol: &str) -> bool {
        self.klass_of(symbol).is_some_and(PhonemeClass::is_special)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Phoneme> {
        self.items.iter()
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|p| p.symbol.as_str())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Drops a trailing stress digit run ("ah1" -> "ah"). Symbols that are all
/// digits are returned unchanged.
pub fn strip_stress(symbol: &str) -> &str {
    let base = symbol.trim_end_matches(|c: char| c.is_ascii_digit());
    if base.is_empty() {
        symbol
    } else {
        base
    }
}
