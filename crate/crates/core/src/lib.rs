//! Retrieval-augmented feature generation for tabular classification.
//!
//! The crate grows a tabular dataset one column at a time. Each round it asks
//! a language model for a retrieval query, pulls the closest documents from a
//! local knowledge base, has the model propose one formula per document, and
//! keeps the best formula only if it strictly improves a cross-validated
//! classifier.
//!
//! | module | role |
//! |---|---|
//! | [`tabular`] | datasets, CSV ingestion, fold plans |
//! | [`fexpr`] | the feature-formula language |
//! | [`knowledge`] | document embedding and cosine top-k retrieval |
//! | [`oracle`] | language-model gateway with live, replay and fallback modes |
//! | [`learners`] | CART decision tree and random forest |
//! | [`metrics`] | classification metrics, conditional entropy, information gain |
//! | [`engine`] | the generate/retrieve/propose/validate loop |

pub mod demo;
pub mod engine;
pub mod fexpr;
pub mod knowledge;
pub mod learners;
pub mod metrics;
pub mod oracle;
pub mod tabular;

pub use engine::{run, EngineConfig, RunResult};
pub use fexpr::{parse, FeatureExpr, OperationKind};
pub use knowledge::{HashEmbedder, KnowledgeBase};
pub use oracle::Gateway;
pub use tabular::{load_csv, Dataset, FeatureMeta};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/formulas.md")]
    mod formulas {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/learners.md")]
    mod learners {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/loop.md")]
    mod feature_loop {}
}
