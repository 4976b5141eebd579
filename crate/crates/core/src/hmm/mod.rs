//! A compact HMM engine: left-to-right models with Gaussian mixture
//! emissions, flat-start initialization, embedded Baum-Welch training,
//! forced alignment, and Viterbi decoding over bigram token networks.

pub mod decode;
pub mod features;
pub mod model;
pub mod train;

pub use decode::{build_bigram, decode, BigramNetwork, DecodeError};
pub use features::{FeatureError, FeatureStream, BINARY_MAGIC};
pub use model::{Gaussian, HmmModel, Mixture, ModelError, ModelSet};
pub use train::{
    flat_start, forced_align, reestimate, weak_learn_init, ProtoConfig, Segment, TrainError,
};
