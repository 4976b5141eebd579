pub mod catalog;
pub mod clustering;
pub mod confusion;
pub mod hmm;
pub mod inventory;
pub mod lexicon;
pub mod mapsim;
pub mod p2vmap;
pub mod scoring;
pub mod synth;

pub use inventory::{Inventory, Phoneme, PhonemeClass};
pub use p2vmap::{P2VMap, VisemeClass};
