//! Experience pool: persistence, similarity retrieval and warm starts.
//!
//! Successful episodes contribute their optimized machine as a prior for
//! similar future queries. Failed episodes contribute forbidden transition
//! patterns that block routing and are shown to the op proposer.

mod embed;
mod pool;

use serde::{Deserialize, Serialize};

pub use embed::{cosine, embed, fnv1a64, tokens, HashEmbedder, DEFAULT_EMBEDDING_DIM};
pub use pool::{ExperiencePool, PoolError, PoolStats, RecordFilter, RetrievalResult};

use crate::backends::Embedder;
use crate::fsm::{validate_config, FsmConfig};
use crate::reflection::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmStartParams {
    pub k: usize,
    pub sim_threshold: f64,
}

impl Default for WarmStartParams {
    fn default() -> Self {
        Self { k: 3, sim_threshold: 0.55 }
    }
}

/// A warm-started machine plus what retrieval found.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub config: FsmConfig,
    /// Id of the success record whose machine became the base.
    pub prior: Option<String>,
    pub retrieved: Vec<RetrievalResult>,
}

/// Builds the initial machine for `query`. Never fails: embedding faults
/// and stale priors fall back to `default_config`.
pub fn warm_start(
    default_config: &FsmConfig,
    query: &str,
    pool: &ExperiencePool,
    embedder: &mut dyn Embedder,
    params: &WarmStartParams,
) -> FsmConfig {
    match embed(query, embedder) {
        Ok(q) => warm_start_from(default_config, &q, pool, params).config,
        Err(e) => {
            tracing::warn!("warm start skipped, embedding failed: {e}");
            default_config.clone()
        }
    }
}

pub fn warm_start_from(
    default_config: &FsmConfig,
    query_embedding: &[f64],
    pool: &ExperiencePool,
    params: &WarmStartParams,
) -> WarmStart {
    let retrieved = pool.retrieve_top_k(query_embedding, params.k, RecordFilter::All);
    let mut prior = None;
    let mut config = default_config.clone();
    // Results are sorted, so the first success is the best one.
    if let Some(best) = retrieved.iter().find(|r| r.record.outcome == Outcome::Success) {
        if best.similarity >= params.sim_threshold {
            let report = validate_config(&best.record.config_snapshot);
            if report.is_valid() {
                config = best.record.config_snapshot.clone();
                prior = Some(best.record.id.clone());
            } else {
                tracing::warn!("prior {} is no longer valid ({report}); using default", best.record.id);
            }
        }
    }
    for r in retrieved.iter().filter(|r| r.record.outcome == Outcome::Failure) {
        for pattern in &r.record.failure_constraints {
            if !config.negative_constraints.iter().any(|p| p.rule == pattern.rule) {
                config.negative_constraints.push(pattern.clone());
            }
        }
    }
    WarmStart { config, prior, retrieved }
}
