//! Multi-source DPP re-ranking.
//!
//! Given relevance scores and several attribute similarity kernels over a
//! candidate pool, [`engine::greedy_rerank`] selects `k` items that trade
//! relevance against per-attribute diversity. Each attribute may be asked to
//! increase or decrease in diversity. Tangent normalization balances the
//! attribute terms against the relevance term in the log-matrix domain.
//!
//! ```
//! use msdpp::prelude::*;
//!
//! let data = gen_synthetic(1, &SynthPlan { n_items: 60, ..SynthPlan::default() }).unwrap();
//! let specs = vec![
//!     AttributeSpec::new("appearance", AttributeKind::Appearance, Direction::Increase, 0.5),
//!     AttributeSpec::new("time", AttributeKind::Time, Direction::Increase, 0.5),
//! ];
//! let config = RerankConfig::new(0.9, 10, 40, TnMode::TvM, specs).unwrap();
//! let bundle = build_bundle(
//!     &data.gallery,
//!     &data.queries[0].relevance_map(),
//!     &config.specs,
//!     config.top_n,
//!     &EmbeddingOptions::default(),
//! )
//! .unwrap();
//! let ranked = greedy_rerank(&bundle, &config).unwrap();
//! assert_eq!(ranked.ids.len(), 10);
//! ```

pub mod attributes;
pub mod baselines;
pub mod dataio;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod spd;
pub mod synth;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::attributes::{
        build_bundle, AttributeKind, AttributeSpec, Direction, EmbeddingOptions, ImageRecord,
        SimilarityBundle,
    };
    pub use crate::baselines::{BaselineConfig, BaselineMethod, DiversityMode};
    pub use crate::dataio::{Query, TaskConfig};
    pub use crate::engine::{greedy_rerank, RankedList, RerankConfig, TnMode};
    pub use crate::error::{Error, Result};
    pub use crate::metrics::{diversity_metric, RetrievalKind};
    pub use crate::synth::{gen_synthetic, SynthPlan};
}
