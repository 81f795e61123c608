//! Training-view construction. The default path probes the model once on a
//! fully masked input, ranks digits hardest-first by 1 - max probability,
//! and emits nested mask sets along that ranking. Ablation builders cover
//! random masking, fixed coherent paths, reversed (most-confident-first)
//! ranking, and per-step re-estimation.

use crate::error::{Error, Result};
use crate::linalg::seeded_rng;
use crate::network::{
    decode_digits, DigitDistributions, EncoderState, ModelConfig, ModelParams, Slot,
};
use crate::tokenizer::SemanticId;
use rand::Rng;

/// Per-digit confidence snapshot from one fully masked decoder pass.
/// `sigma` ranks digits hardest to easiest; ties break toward the lower
/// digit index.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyProfile {
    /// Max probability per digit row.
    pub p_max: Vec<f64>,
    /// 1 - p_max, clamped to be nonnegative.
    pub delta: Vec<f64>,
    /// Digit indices sorted by descending delta.
    pub sigma: Vec<usize>,
}

impl DifficultyProfile {
    pub fn from_p_max(p_max: Vec<f64>) -> DifficultyProfile {
        let delta: Vec<f64> = p_max.iter().map(|&p| (1.0 - p).max(0.0)).collect();
        let mut sigma: Vec<usize> = (0..delta.len()).collect();
        sigma.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
        DifficultyProfile {
            p_max,
            delta,
            sigma,
        }
    }

    fn from_distributions(dists: &DigitDistributions, n: usize) -> DifficultyProfile {
        Self::from_p_max((0..n).map(|k| dists.top_codeword(k).1).collect())
    }
}

/// One mask view over the n digit slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskView {
    pub masked: Vec<bool>,
}

impl MaskView {
    /// Builds an n-slot view masking exactly the given digit indices.
    /// Panics on an index >= n; builders in this module never produce one.
    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> MaskView {
        let mut masked = vec![false; n];
        for i in indices {
            masked[i] = true;
        }
        MaskView { masked }
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.masked
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Number of masked digits.
    pub fn m_r(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    /// Corruption ratio m_r / n.
    pub fn t_r(&self) -> f64 {
        self.m_r() as f64 / self.masked.len() as f64
    }

    fn is_subset_of(&self, other: &MaskView) -> bool {
        self.masked
            .iter()
            .zip(other.masked.iter())
            .all(|(&a, &b)| !a || b)
    }
}

/// An ordered list of mask views for one training sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSchedule {
    pub views: Vec<MaskView>,
}

impl ViewSchedule {
    /// True when every view's masked set strictly grows into the next.
    pub fn is_nested(&self) -> bool {
        self.views
            .windows(2)
            .all(|w| w[0].is_subset_of(&w[1]) && w[0].m_r() < w[1].m_r())
    }

    /// One row of 0/1 characters per view, for fixtures and debugging.
    pub fn to_debug_text(&self) -> String {
        self.views
            .iter()
            .map(|v| {
                v.masked
                    .iter()
                    .map(|&m| if m { '1' } else { '0' })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Masking order policy: `Least` masks the least-confident (hardest) digits
/// first, `Most` the most-confident.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPolicy {
    Least,
    Most,
}

/// Whether difficulties are estimated once or re-estimated after each mask
/// commitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshMode {
    Static,
    Refresh,
}

/// How training views are produced for each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisingStrategy {
    /// On-policy coherent noising: the policy picks which digit joins the
    /// mask set next, the mode decides whether difficulties are re-estimated
    /// after each commitment.
    Ocn {
        policy: MaskPolicy,
        refresh: RefreshMode,
    },
    /// Independent uniformly random mask sets: the coherence ablation.
    Random,
    /// Fixed random masking orders without model feedback; the payload is
    /// the number of paths, each contributing n nested views.
    Coherent(usize),
}

impl NoisingStrategy {
    /// Views contributed per training sample. Coherent paths ignore the
    /// schedule and always walk 1..=n.
    pub fn views_per_sample(&self, n: usize, schedule_views: usize) -> usize {
        match self {
            NoisingStrategy::Coherent(paths) => n * paths,
            _ => schedule_views,
        }
    }
}

impl std::fmt::Display for NoisingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoisingStrategy::Ocn { policy, refresh } => {
                let p = match policy {
                    MaskPolicy::Least => 'l',
                    MaskPolicy::Most => 'm',
                };
                let r = match refresh {
                    RefreshMode::Static => 's',
                    RefreshMode::Refresh => 'r',
                };
                write!(f, "ocn-{p}{r}")
            }
            NoisingStrategy::Random => write!(f, "random"),
            NoisingStrategy::Coherent(paths) => write!(f, "coherent-{paths}"),
        }
    }
}

impl std::str::FromStr for NoisingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ocn = |policy, refresh| NoisingStrategy::Ocn { policy, refresh };
        match s {
            "ocn-ls" => Ok(ocn(MaskPolicy::Least, RefreshMode::Static)),
            "ocn-lr" => Ok(ocn(MaskPolicy::Least, RefreshMode::Refresh)),
            "ocn-ms" => Ok(ocn(MaskPolicy::Most, RefreshMode::Static)),
            "ocn-mr" => Ok(ocn(MaskPolicy::Most, RefreshMode::Refresh)),
            "random" => Ok(NoisingStrategy::Random),
            other => {
                if let Some(k) = other.strip_prefix("coherent-") {
                    let paths: usize = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad path count in {other:?}")))?;
                    if paths == 0 {
                        return Err(Error::Config(
                            "coherent noising needs at least one path".into(),
                        ));
                    }
                    return Ok(NoisingStrategy::Coherent(paths));
                }
                Err(Error::Config(format!(
                    "unknown noising strategy {other:?} (expected ocn-ls, ocn-lr, ocn-ms, ocn-mr, random, or coherent-<k>)"
                )))
            }
        }
    }
}

/// The default view schedule masks 1, 2, ..., n digits: every corruption
/// ratio appears exactly once.
pub fn default_schedule(n: usize) -> Vec<usize> {
    (1..=n).collect()
}

pub fn validate_schedule(schedule: &[usize], n: usize) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::Config("view schedule is empty".into()));
    }
    if schedule[0] == 0 {
        return Err(Error::Config("view schedule starts at zero digits".into()));
    }
    if !schedule.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config(format!(
            "view schedule {schedule:?} is not strictly increasing"
        )));
    }
    if *schedule.last().unwrap() > n {
        return Err(Error::Config(format!(
            "view schedule peaks at {} digits but ids have {n}",
            schedule.last().unwrap()
        )));
    }
    Ok(())
}

fn views_from_order(order: &[usize], schedule: &[usize], n: usize) -> ViewSchedule {
    let views = schedule
        .iter()
        .map(|&m_r| MaskView::from_indices(n, order[..m_r].iter().copied()))
        .collect();
    ViewSchedule { views }
}

/// One decoder pass on an all-masked input; difficulty is one minus the top
/// probability per digit. The target is only shape-checked here; ranking
/// depends on the model's own confidence, not the label.
pub fn probe_difficulty(
    target: &SemanticId,
    state: &EncoderState,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<DifficultyProfile> {
    if target.len() != config.n {
        return Err(Error::Runtime(format!(
            "target has {} digits, model expects {}",
            target.len(),
            config.n
        )));
    }
    let dists = decode_digits(&vec![Slot::Masked; config.n], state, params, config)?;
    Ok(DifficultyProfile::from_distributions(&dists, config.n))
}

/// Nested views masking the top m_r hardest digits of the profile, for each
/// m_r in the strictly increasing schedule.
pub fn build_ocn_views(profile: &DifficultyProfile, schedule: &[usize]) -> Result<ViewSchedule> {
    let n = profile.delta.len();
    validate_schedule(schedule, n)?;
    Ok(views_from_order(&profile.sigma, schedule, n))
}

/// Nested views whose masking order is sampled without replacement with
/// probability proportional to delta; uniform among the remainder once all
/// remaining mass is zero. Deterministic per seed.
pub fn build_ocn_views_stochastic(
    profile: &DifficultyProfile,
    schedule: &[usize],
    seed: u64,
) -> Result<ViewSchedule> {
    let n = profile.delta.len();
    validate_schedule(schedule, n)?;
    let mut rng = seeded_rng(seed);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    let need = *schedule.last().unwrap();
    while order.len() < need {
        let total: f64 = remaining.iter().map(|&d| profile.delta[d]).sum();
        let pick_pos = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = None;
            for (pos, &d) in remaining.iter().enumerate() {
                let w = profile.delta[d];
                if w <= 0.0 {
                    continue;
                }
                // Landing position; the last positive weight absorbs any
                // floating-point residue.
                chosen = Some(pos);
                u -= w;
                if u <= 0.0 {
                    break;
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            rng.random_range(0..remaining.len())
        };
        order.push(remaining.remove(pick_pos));
    }
    Ok(views_from_order(&order, schedule, n))
}

/// Ablation: each view independently masks a uniformly random nonempty
/// subset (size uniform on 1..=n, then a uniform subset of that size).
/// Views are not nested in general.
pub fn build_random_views(n: usize, views: usize, seed: u64) -> Result<ViewSchedule> {
    if n == 0 || views == 0 {
        return Err(Error::Config("need at least one digit and one view".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(views);
    for _ in 0..views {
        let size = rng.random_range(1..=n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..size {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        out.push(MaskView::from_indices(n, idx[..size].iter().copied()));
    }
    Ok(ViewSchedule { views: out })
}

/// Ablation: coherent nesting along random digit permutations instead of
/// model confidence. Each of the `paths` chains contributes n nested views,
/// so the result holds n*paths views in `paths` nested runs.
pub fn build_fixed_coherent_views(n: usize, paths: usize, seed: u64) -> Result<ViewSchedule> {
    if n == 0 || paths == 0 {
        return Err(Error::Config("need at least one digit and one path".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(n * paths);
    for _ in 0..paths {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        for r in 1..=n {
            out.push(MaskView::from_indices(n, perm[..r].iter().copied()));
        }
    }
    Ok(ViewSchedule { views: out })
}

fn static_order(delta: &[f64], policy: MaskPolicy) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..delta.len()).collect();
    match policy {
        MaskPolicy::Least => idx.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b))),
        MaskPolicy::Most => idx.sort_by(|&a, &b| delta[a].total_cmp(&delta[b]).then(a.cmp(&b))),
    }
    idx
}

fn pick_next(delta: &[f64], committed: &[bool], policy: MaskPolicy) -> usize {
    let mut best: Option<usize> = None;
    for k in 0..delta.len() {
        if committed[k] {
            continue;
        }
        best = Some(match best {
            None => k,
            // Strict comparison keeps the lower index on ties.
            Some(b) => match policy {
                MaskPolicy::Least if delta[k] > delta[b] => k,
                MaskPolicy::Most if delta[k] < delta[b] => k,
                _ => b,
            },
        });
    }
    best.expect("at least one uncommitted digit")
}

/// Commits digits to the mask set one at a time, re-estimating difficulties
/// after each commitment. Committed digits are masked; the rest stay pinned
/// to the initial probe's top predictions, so the whole procedure uses the
/// model's own outputs and exactly n decoder passes.
fn refreshed_order(
    policy: MaskPolicy,
    state: &EncoderState,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<usize>> {
    let n = config.n;
    let dists0 = decode_digits(&vec![Slot::Masked; n], state, params, config)?;
    let pins: Vec<u16> = (0..n).map(|k| dists0.top_codeword(k).0).collect();
    let mut delta: Vec<f64> = (0..n).map(|k| 1.0 - dists0.top_codeword(k).1).collect();
    let mut committed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for step in 0..n {
        let pick = pick_next(&delta, &committed, policy);
        order.push(pick);
        committed[pick] = true;
        if step + 1 < n {
            let slots: Vec<Slot> = (0..n)
                .map(|k| {
                    if committed[k] {
                        Slot::Masked
                    } else {
                        Slot::Visible(pins[k])
                    }
                })
                .collect();
            let d = decode_digits(&slots, state, params, config)?;
            for k in 0..n {
                if !committed[k] {
                    delta[k] = 1.0 - d.top_codeword(k).1;
                }
            }
        }
    }
    Ok(order)
}

/// The four ordering variants behind the masking ablations. `Least`/`Static`
/// reproduces `build_ocn_views` exactly.
pub fn ocn_variant(
    profile: &DifficultyProfile,
    schedule: &[usize],
    policy: MaskPolicy,
    refresh: RefreshMode,
    state: &EncoderState,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ViewSchedule> {
    let n = profile.delta.len();
    validate_schedule(schedule, n)?;
    let order = match refresh {
        RefreshMode::Static => static_order(&profile.delta, policy),
        RefreshMode::Refresh => refreshed_order(policy, state, params, config)?,
    };
    Ok(views_from_order(&order, schedule, n))
}
