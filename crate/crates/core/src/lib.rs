//! Corpus-grounded self-play engine.
//!
//! A single policy plays two roles. As the challenger it reads a corpus
//! document and writes a question with a gold answer taken from the text; as
//! the reasoner it answers that question without seeing the document. The
//! challenger is rewarded for questions the reasoner solves about half of the
//! time, the reasoner for correct answers. This crate runs that loop against
//! any text generator and exports role-tagged trajectories with mean-centred
//! advantages for an external trainer.
//!
//! Modules:
//! - [`corpus`]: ingestion, segmentation and seeded sampling of documents.
//! - [`taskgen`]: challenger prompts and parsing of generations into tasks.
//! - [`verifier`]: boxed-answer extraction and typed answer equivalence.
//! - [`rewards`]: challenger/reasoner rewards and group advantages.
//! - [`policy`]: the generator interface, a remote client and scripted doubles.
//! - [`engine`]: the iteration loop, batch export and resumable runs.
//! - [`service`]: HTTP endpoints serving batches and metrics to a trainer.
//! - [`eval`]: crossplay evaluation and the co-evolution simulator.

pub mod config;
pub mod corpus;
pub mod engine;
pub mod eval;
pub mod policy;
pub mod rewards;
pub mod seed;
pub mod service;
pub mod taskgen;
pub mod verifier;

pub use config::{ConfigError, EngineConfig};
pub use corpus::{CorpusError, CorpusStore, Document};
pub use rewards::{GroupStats, RewardConfig, RewardScheme, Role, Trajectory};
pub use taskgen::{AnswerType, FormatDecision, Gold, Task};
