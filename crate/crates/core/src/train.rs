//! The optimization loop: per-batch view construction (on-policy for OCN
//! strategies), averaged masked-digit cross-entropy with exact gradients,
//! AdamW updates, epoch-end validation, and early stopping that keeps the
//! best-scoring parameters.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::config::RunConfig;
use crate::dataset::{EvalInstance, TrainingInstance};
use crate::error::{Error, Result};
use crate::evaluate::evaluate_instances;
use crate::linalg::seeded_rng;
use crate::metrics::{effective_supervision, EarlyStopper, TrainTrace};
use crate::network::{encode, loss_and_grad, AdamW, ModelConfig, ModelParams, ViewBatchItem};
use crate::noising::{
    build_fixed_coherent_views, build_random_views, ocn_variant, probe_difficulty,
    DifficultyProfile, NoisingStrategy, RefreshMode, ViewSchedule,
};
use crate::tokenizer::SemanticId;

/// Keeps the training stream distinct from parameter initialization, which
/// consumes the raw seed.
const TRAIN_STREAM: u64 = 0x5452_4149_4e53_4545;

/// Builds one sample's mask views under the configured strategy, counting
/// the decoder passes spent estimating difficulties. OCN probes run against
/// the current parameters in eval mode, so the noise is on-policy.
fn build_views(
    inst: &TrainingInstance,
    params: &ModelParams,
    config: &ModelConfig,
    strategy: NoisingStrategy,
    schedule: &[usize],
    rng: &mut ChaCha12Rng,
    probe_calls: &mut u64,
) -> Result<ViewSchedule> {
    match strategy {
        NoisingStrategy::Ocn { policy, refresh } => {
            let state = encode(&inst.context, params, config)?;
            let profile = match refresh {
                RefreshMode::Static => {
                    *probe_calls += 1;
                    probe_difficulty(&inst.target, &state, params, config)?
                }
                // The refreshed order re-estimates difficulties itself with
                // n decoder passes; only the digit count is taken from here.
                RefreshMode::Refresh => {
                    *probe_calls += config.n as u64;
                    DifficultyProfile::from_p_max(vec![0.0; config.n])
                }
            };
            ocn_variant(&profile, schedule, policy, refresh, &state, params, config)
        }
        NoisingStrategy::Random => build_random_views(config.n, schedule.len(), rng.random()),
        NoisingStrategy::Coherent(paths) => {
            build_fixed_coherent_views(config.n, paths, rng.random())
        }
    }
}

/// Trains from a fresh initialization and returns the best-validation
/// parameters with the full per-epoch trace.
pub fn train(
    train_set: &[TrainingInstance],
    valid_set: &[EvalInstance],
    catalog: &HashSet<SemanticId>,
    run: &RunConfig,
) -> Result<(ModelParams, TrainTrace)> {
    run.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("no training instances".into()));
    }
    if valid_set.is_empty() {
        return Err(Error::Data("no validation instances".into()));
    }
    let config = run.model_config();
    let schedule = run.schedule.mask_counts(config.n);
    let views_per_sample = run.strategy.views_per_sample(config.n, schedule.len());

    let mut params = ModelParams::init(&config, run.seed);
    let mut opt = AdamW::new(&config, run.lr, run.weight_decay, run.warmup);
    let mut stopper = EarlyStopper::new(run.patience);
    let mut rng = seeded_rng(run.seed ^ TRAIN_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best_params = params.clone();
    let mut epoch_losses = Vec::new();
    let mut epoch_scores = Vec::new();
    let mut probe_calls: u64 = 0;
    let mut view_calls: u64 = 0;
    let mut stopped_early = false;

    for _ in 0..run.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(run.batch_size) {
            let mut view_sets = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                view_sets.push(build_views(
                    &train_set[idx],
                    &params,
                    &config,
                    run.strategy,
                    &schedule,
                    &mut rng,
                    &mut probe_calls,
                )?);
            }
            let items: Vec<ViewBatchItem<'_>> = chunk
                .iter()
                .zip(&view_sets)
                .map(|(&idx, vs)| ViewBatchItem {
                    context: &train_set[idx].context,
                    target: &train_set[idx].target,
                    views: &vs.views,
                })
                .collect();
            view_calls += items.iter().map(|it| it.views.len() as u64).sum::<u64>();
            let (loss, grads) = loss_and_grad(&items, &params, &config, run.alpha, &mut rng)?;
            opt.step(&mut params, &grads);
            loss_sum += loss;
            batches += 1;
        }
        epoch_losses.push(loss_sum / batches as f64);

        let outcome =
            evaluate_instances(valid_set, &params, &config, run.b_act, run.k, Some(catalog))?;
        let score = outcome.validation_score();
        epoch_scores.push(score);
        if stopper.observe(score) {
            best_params = params.clone();
        }
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }

    let trace = TrainTrace {
        epoch_losses,
        epoch_scores,
        best_epoch: stopper.best_epoch(),
        best_score: stopper.best_score(),
        views_per_sample,
        effective_sample_passes: effective_supervision(stopper.best_epoch(), views_per_sample),
        probe_decoder_calls: probe_calls,
        view_decoder_calls: view_calls,
        stopped_early,
    };
    Ok((best_params, trace))
}
