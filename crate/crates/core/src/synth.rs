//! Deterministic synthetic data for desk-scale runs. Items live on a ring
//! and are grouped into contiguous clusters with nearby embeddings; users
//! random-walk the ring with a strong bias toward the successor item, so the
//! next item is highly predictable from history while random guessing stays
//! weak. Everything derives from one seeded generator, so identical inputs
//! produce identical tables and logs.

use rand::Rng;

use crate::dataset::{InteractionLog, ItemEmbeddingTable, Record};
use crate::error::{Error, Result};
use crate::linalg::{sample_normal, seeded_rng, Mat};

pub const EMBED_DIM: usize = 12;
pub const CLUSTERS: usize = 8;
/// Probability a user steps to the ring successor; otherwise they jump
/// uniformly.
pub const STEP_PROB: f64 = 0.95;
/// Cluster centers are this many standard deviations wide.
pub const CENTER_STD: f64 = 2.0;
/// Per-item offset from its cluster center; small enough that clusters stay
/// separated, large enough that most items get distinct semantic ids.
pub const NOISE_STD: f64 = 0.35;
pub const MIN_LEN: usize = 6;
pub const MAX_LEN: usize = 10;

/// Cluster index for an item: contiguous blocks whose sizes differ by at
/// most one.
pub fn cluster_of(item: usize, items: usize) -> usize {
    item * CLUSTERS.min(items) / items
}

fn item_id(i: usize) -> String {
    format!("item{i:03}")
}

fn user_id(u: usize) -> String {
    format!("user{u:03}")
}

/// Generates the embedding table and interaction log. Zero users yield an
/// empty log but a full table.
pub fn generate(
    users: usize,
    items: usize,
    seed: u64,
) -> Result<(ItemEmbeddingTable, InteractionLog)> {
    if items == 0 {
        return Err(Error::Config("need at least one item".into()));
    }
    let mut rng = seeded_rng(seed);
    let clusters = CLUSTERS.min(items);
    let mut centers = Mat::zeros(clusters, EMBED_DIM);
    for v in centers.data.iter_mut() {
        *v = CENTER_STD * sample_normal(&mut rng);
    }
    let mut vectors = Mat::zeros(items, EMBED_DIM);
    for i in 0..items {
        let c = cluster_of(i, items);
        for j in 0..EMBED_DIM {
            *vectors.at_mut(i, j) = centers.at(c, j) + NOISE_STD * sample_normal(&mut rng);
        }
    }
    let ids: Vec<String> = (0..items).map(item_id).collect();
    let table = ItemEmbeddingTable::new(ids, vectors)?;

    let mut records = Vec::new();
    for u in 0..users {
        let len = rng.random_range(MIN_LEN..=MAX_LEN);
        let mut cur = rng.random_range(0..items);
        for step in 0..len {
            records.push(Record {
                user: user_id(u),
                item: item_id(cur),
                ts: step as i64,
            });
            cur = if rng.random::<f64>() < STEP_PROB {
                (cur + 1) % items
            } else {
                rng.random_range(0..items)
            };
        }
    }
    Ok((table, InteractionLog { records }))
}
