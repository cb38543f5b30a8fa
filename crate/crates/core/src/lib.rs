//! Camera localization against compressed 3D scene models.
//!
//! Query features are matched to sub-model points through a three-stage
//! cascade (16-bit sub-code lookup tables, full 128-bit Hamming re-ranking,
//! product-quantization ADC re-ranking with a ratio test). The resulting
//! one-one hypothesis matches and one-many verification matches feed a
//! RANSAC with sequential-probability-ratio pre-verification around a
//! six-point DLT solver.
//!
//! ```text
//! query descriptors ──► global descriptor ──► retrieval ──► ≤4 sub-models
//!        │                                                      │
//!        └──► ITQ hash ──► coarse LUT ──► refine ──► precise (PQ/ADC)
//!                                                     │
//!                                   hypotheses (ν_h) + verification (ν, M)
//!                                                     │
//!                                         one-many RANSAC + SPRT ──► pose
//! ```

pub mod bench;
pub mod descriptor;
pub mod error;
pub mod hash;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod pose;
pub mod pq;
pub mod ransac;
pub mod retrieval;
pub mod search;
pub mod synth;

pub use descriptor::{Descriptor, DIM};
pub use error::{Error, Result};
pub use hash::{hamming, train_hash, BinaryCode, HashModel};
pub use model::{build_submodel, mean_descriptor, PointInput, SegmentMeta, SubModel};
pub use pipeline::{localize, LocalizationResult, LocalizeConfig, Localizer};
pub use pose::{dlt6, ProjectionMatrix};
pub use pq::{train_pq, DistanceTable, PqCode, PqCodebook};
pub use ransac::{ransac_1m, PoseResult, RansacConfig, RansacMode, RansacReport};
pub use retrieval::{GlobalDescriptor, SegmentIndex};
pub use search::{prioritized_match, CorrespondenceSet, QueryFeature, SearchParams};
