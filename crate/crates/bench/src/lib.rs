//! Shared fixtures for the pipeline benchmarks: a desk-scale model, random
//! semantic IDs, and a synthetic training corpus. Kept in the library so the
//! bench target stays a flat list of measurements.

use sidrec_core::config::RunConfig;
use sidrec_core::linalg::{fill_trunc_normal, seeded_rng, Mat};
use sidrec_core::network::{ModelConfig, ModelParams};
use sidrec_core::tokenizer::SemanticId;

use rand::Rng;

/// Small enough to keep a single measurement under a millisecond, large
/// enough that attention and the FFN dominate over dispatch overhead.
pub fn desk_run() -> RunConfig {
    let mut run = RunConfig::default();
    for (k, v) in [
        ("d_m", "32"),
        ("d_ff", "64"),
        ("heads", "4"),
        ("decoder_layers", "1"),
        ("n", "3"),
        ("m", "4"),
        ("l_input", "10"),
        ("dropout", "0.0"),
        ("warmup", "50"),
        ("batch_size", "16"),
        ("b_act", "64"),
    ] {
        run.set(k, v).unwrap();
    }
    run
}

pub fn random_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::init(config, seed);
    // init leaves gammas at 1 and weights near 0.02; stir in some scale so
    // decoding does not run on a near-uniform model.
    let mut rng = seeded_rng(seed ^ 0xB3);
    for (name, tensor, _) in params.tensors_mut() {
        if !name.ends_with(".gamma") {
            fill_trunc_normal(tensor, &mut rng, 0.1);
        }
    }
    params
}

pub fn random_sid(config: &ModelConfig, rng: &mut impl Rng) -> SemanticId {
    let digits: Vec<u16> = (0..config.n)
        .map(|_| rng.random_range(0..config.m as u16))
        .collect();
    SemanticId::new(digits, config.m).unwrap()
}

pub fn random_context(config: &ModelConfig, len: usize, rng: &mut impl Rng) -> Vec<SemanticId> {
    (0..len).map(|_| random_sid(config, rng)).collect()
}

pub fn gaussian_points(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    fill_trunc_normal(&mut m, &mut seeded_rng(seed), 1.0);
    m
}
