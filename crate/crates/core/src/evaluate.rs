//! Held-out evaluation: decode each context with the confidence-guided beam,
//! optionally restrict candidates to semantic ids that exist in the catalog,
//! and aggregate rank-based metrics over instances.

use std::collections::HashSet;

use crate::dataset::EvalInstance;
use crate::decoding::{cpd_decode, filter_to_catalog};
use crate::error::Result;
use crate::metrics::{rank_of, EvalOutcome};
use crate::network::{encode, ModelConfig, ModelParams};
use crate::tokenizer::{SemanticId, SidMap};

/// The set of semantic ids that map back to at least one catalog item.
pub fn catalog_sids(map: &SidMap) -> HashSet<SemanticId> {
    map.items.iter().map(|(_, sid)| sid.clone()).collect()
}

/// Decodes one context into up to k candidates. With a catalog, the beam is
/// asked for its full breadth first so filtering can promote lower-ranked
/// valid ids before the final truncation to k.
pub fn decode_filtered(
    context: &[SemanticId],
    params: &ModelParams,
    config: &ModelConfig,
    b_act: usize,
    k: usize,
    catalog: Option<&HashSet<SemanticId>>,
) -> Result<Vec<(SemanticId, f64)>> {
    let state = encode(context, params, config)?;
    let raw_k = if catalog.is_some() { b_act.max(k) } else { k };
    let result = cpd_decode(&state, params, config, b_act, raw_k)?;
    let mut candidates = match catalog {
        Some(set) => filter_to_catalog(&result, set).0.candidates,
        None => result.candidates,
    };
    candidates.truncate(k);
    Ok(candidates)
}

/// Ranks every instance's ground truth among its decoded candidates.
pub fn evaluate_instances(
    instances: &[EvalInstance],
    params: &ModelParams,
    config: &ModelConfig,
    b_act: usize,
    k: usize,
    catalog: Option<&HashSet<SemanticId>>,
) -> Result<EvalOutcome> {
    let mut ranks = Vec::with_capacity(instances.len());
    for inst in instances {
        let candidates = decode_filtered(&inst.context, params, config, b_act, k, catalog)?;
        let sids: Vec<SemanticId> = candidates.into_iter().map(|(sid, _)| sid).collect();
        ranks.push(rank_of(&sids, &inst.target));
    }
    Ok(EvalOutcome::from_ranks(&ranks))
}

/// Human-readable report ending in a machine-readable key=value block.
pub fn render_report(split: &str, filtered: bool, outcome: &EvalOutcome) -> String {
    let mode = if filtered {
        "catalog-filtered"
    } else {
        "unfiltered"
    };
    let mut out = format!(
        "evaluated {} instances on the {split} split ({mode} decoding)\n\n",
        outcome.instances
    );
    out.push_str(&format!("split={split}\n"));
    out.push_str(&format!("filtered={filtered}\n"));
    out.push_str(&format!("instances={}\n", outcome.instances));
    out.push_str(&format!("recall@5={:.6}\n", outcome.recall_at_5));
    out.push_str(&format!("recall@10={:.6}\n", outcome.recall_at_10));
    out.push_str(&format!("ndcg@5={:.6}\n", outcome.ndcg_at_5));
    out.push_str(&format!("ndcg@10={:.6}\n", outcome.ndcg_at_10));
    out.push_str(&format!("score={:.6}\n", outcome.validation_score()));
    out
}
