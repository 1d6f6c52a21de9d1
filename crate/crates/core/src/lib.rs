//! Iterative self-alignment of softmax policies with their own DPO implicit
//! rewards.
//!
//! The crate works on a desk-scale synthetic alignment problem in which every
//! prompt has a small enumerable set of candidate responses. That makes every
//! quantity of interest (partition functions, optimal policies, expected true
//! reward, the length-difference objective) exactly computable, so each stage
//! of the loop can be checked against a brute-force oracle.
//!
//! One round of the loop:
//!
//! 1. sample `K` responses per prompt from the previous policy,
//! 2. score them with the implicit reward `beta * log(pi / pi_ref)`, optionally
//!    penalised by `alpha * length`,
//! 3. pick `alpha` so that winners are not systematically longer than losers,
//! 4. take the best and worst sample of each prompt as a preference pair,
//! 5. mix in a fraction `gamma` of the offline preference data,
//! 6. train with a direct-alignment loss, using the previous policy as both
//!    the initialisation and the reference.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod alpha;
pub mod builder;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rng;

pub use error::{Error, Result};
pub use model::{
    AlphaMode, CandidateIndex, CandidateResponse, LossKind, PreferenceDataset, PreferencePair,
    PromptId, ReplayMode, ResponseId, RoundConfig, Source,
};
