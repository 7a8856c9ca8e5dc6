//! Multi-task ranking models (MMOE, CGC and DLEN) trained from scratch on a
//! small reverse-mode tape, with a synthetic feed whose hidden "user is
//! engaged" state is recorded, so latent estimates can be scored against it.
//!
//! Runnable examples, one per capability:
//!
//! ```bash
//! cargo run --example probability_algebra
//! cargo run --example auc_metrics
//! cargo run --release --example synthetic_feed
//! cargo run --release --example gradient_check
//! cargo run --release --example train_dlen
//! cargo run --release --example bench_models
//! cargo run --release --example fusion_ranking
//! cargo run --example checkpoint_roundtrip
//! ```

pub mod nn;
pub mod bayes;
pub mod model;
pub mod data;
pub mod metrics;
pub mod synth;
pub mod fusion;
pub mod experiment;
