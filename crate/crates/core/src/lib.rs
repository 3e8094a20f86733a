//! Cloth-invariant person re-identification toolkit.
//!
//! The centrepiece is semantic-guided pixel sampling ([`sampling`]): the
//! upper-clothes and pants pixels of a mini-batch are gathered from a
//! shuffled copy of the batch and written back over the original clothes
//! regions, producing identity-preserving twins with exchanged clothing.
//! Around it sit the loss stack ([`losses`]), a small embedding network
//! with analytic gradients ([`model`]), augmentation and PK sampling
//! ([`augment`]), cross-/same-clothes evaluation ([`eval`]), dataset
//! ingestion and a synthetic pedestrian generator ([`ingest`], [`synth`]),
//! and the training loop ([`trainer`]).

pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod ingest;
pub mod kv;
pub mod losses;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use config::{AblationConfig, RunConfig};
pub use error::{Error, Result};
pub use eval::{EvalResult, Protocol, ProtocolMode};
pub use ingest::{Dataset, LabelRecombinationTable, SampleRecord, Split};
pub use model::{EmbeddingNet, TrainState};
pub use rng::RngStream;
pub use sampling::{PixelBank, SamplingConfig};
pub use tensor::{part, Batch, Image, Matrix, SemanticMask};
