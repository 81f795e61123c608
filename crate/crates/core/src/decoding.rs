//! Confidence-guided parallel denoising: a global beam search that fills one
//! SID digit per step, choosing both which digit to fill and with what value
//! by accumulated log-probability. Includes an untruncated dynamic-program
//! oracle, a fixed-fill-order ablation, and catalog filtering.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::network::{decode_digits, EncoderState, ModelConfig, ModelParams, Slot};
use crate::tokenizer::SemanticId;

/// One partial SID in the active set. `slots[k]` is `None` while digit k is
/// still masked; `fills` records commits in order so a score can be replayed.
#[derive(Debug, Clone)]
pub struct BeamBranch {
    pub slots: Vec<Option<u16>>,
    /// Sum of the log-probability of each fill at the step it was committed.
    pub score: f64,
    pub fills: Vec<(usize, u16)>,
}

impl BeamBranch {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(|s| s.is_some())
    }

    fn to_slots(&self) -> Vec<Slot> {
        self.slots
            .iter()
            .map(|s| match s {
                Some(c) => Slot::Visible(*c),
                None => Slot::Masked,
            })
            .collect()
    }

    fn to_sid(&self, m: usize) -> SemanticId {
        let digits: Vec<u16> = self.slots.iter().map(|s| s.expect("complete")).collect();
        SemanticId::new(digits, m).expect("beam digits in range")
    }
}

/// Ranked unique SIDs with their final scores. May hold fewer than the
/// requested K when the search space has fewer unique completions.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub candidates: Vec<(SemanticId, f64)>,
    pub requested_k: usize,
}

impl DecodeResult {
    /// True when the search produced fewer candidates than requested.
    pub fn is_short(&self) -> bool {
        self.candidates.len() < self.requested_k
    }
}

fn validate_beam_args(b_act: usize, k: usize) -> Result<()> {
    if b_act < 1 {
        return Err(Error::Config("active beam width must be at least 1".into()));
    }
    if k < 1 {
        return Err(Error::Config("candidate count K must be at least 1".into()));
    }
    Ok(())
}

/// Dedup complete branches keeping the best score per SID, then order by
/// score descending with lexicographic SID ascent on ties. The tie-break
/// depends only on values, never on branch history.
fn rank_candidates(branches: &[BeamBranch], m: usize, k: usize) -> Vec<(SemanticId, f64)> {
    let mut best: HashMap<SemanticId, f64> = HashMap::new();
    for br in branches {
        let sid = br.to_sid(m);
        best.entry(sid)
            .and_modify(|s| *s = s.max(br.score))
            .or_insert(br.score);
    }
    let mut out: Vec<(SemanticId, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

/// Runs the beam to completion and returns the surviving branches in beam
/// order. Children are ranked by (score desc, parent branch asc, digit asc,
/// codeword asc); exactly one digit is committed per surviving child.
fn run_beam(
    state: &EncoderState,
    params: &ModelParams,
    config: &ModelConfig,
    b_act: usize,
) -> Result<Vec<BeamBranch>> {
    let n = config.n;
    // Initial step: score every (digit, codeword) pair from one fully
    // masked pass and open the top B_act as branches.
    let root = BeamBranch {
        slots: vec![None; n],
        score: 0.0,
        fills: Vec::new(),
    };
    let mut branches = vec![root];
    for _step in 0..n {
        // (score, parent index, digit, codeword)
        let mut children: Vec<(f64, usize, usize, u16)> = Vec::new();
        for (bi, br) in branches.iter().enumerate() {
            let dists = decode_digits(&br.to_slots(), state, params, config)?;
            for digit in br.masked_indices() {
                let row = dists.digit(digit);
                for (c, &p) in row.iter().enumerate() {
                    children.push((br.score + p.ln(), bi, digit, c as u16));
                }
            }
        }
        children.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        children.truncate(b_act);
        branches = children
            .into_iter()
            .map(|(score, bi, digit, c)| {
                let parent = &branches[bi];
                let mut slots = parent.slots.clone();
                slots[digit] = Some(c);
                let mut fills = parent.fills.clone();
                fills.push((digit, c));
                BeamBranch {
                    slots,
                    score,
                    fills,
                }
            })
            .collect();
    }
    Ok(branches)
}

/// Confidence-guided parallel denoising. Initializes the beam from the top
/// B_act (digit, codeword) pairs of a fully masked pass, then repeatedly
/// expands every (branch, still-masked digit, codeword) triple, keeping the
/// top B_act and committing one fill each, until all digits are filled.
pub fn cpd_decode(
    state: &EncoderState,
    params: &ModelParams,
    config: &ModelConfig,
    b_act: usize,
    k: usize,
) -> Result<DecodeResult> {
    validate_beam_args(b_act, k)?;
    let branches = run_beam(state, params, config, b_act)?;
    Ok(DecodeResult {
        candidates: rank_candidates(&branches, config.m, k),
        requested_k: k,
    })
}

/// True top-K under the beam's scoring rule, by dynamic programming over
/// partial assignments: each state keeps the best score over all fill
/// orders reaching it, which equals an untruncated beam with dedup. States
/// number (M+1)^n, so the M^n <= 1e6 guard keeps enumeration tractable.
pub fn exact_oracle(
    state: &EncoderState,
    params: &ModelParams,
    config: &ModelConfig,
    k: usize,
) -> Result<DecodeResult> {
    if k < 1 {
        return Err(Error::Config("candidate count K must be at least 1".into()));
    }
    let (n, m) = (config.n, config.m);
    if (m as f64).powi(n as i32) > 1e6 {
        return Err(Error::Config(format!(
            "exact oracle refuses M^n = {m}^{n} > 1e6 completions"
        )));
    }
    let mut level: BTreeMap<Vec<Option<u16>>, f64> = BTreeMap::new();
    level.insert(vec![None; n], 0.0);
    for _ in 0..n {
        let mut next: BTreeMap<Vec<Option<u16>>, f64> = BTreeMap::new();
        for (slots, score) in &level {
            let as_slots: Vec<Slot> = slots
                .iter()
                .map(|s| match s {
                    Some(c) => Slot::Visible(*c),
                    None => Slot::Masked,
                })
                .collect();
            let dists = decode_digits(&as_slots, state, params, config)?;
            for digit in 0..n {
                if slots[digit].is_some() {
                    continue;
                }
                let row = dists.digit(digit);
                for (c, &p) in row.iter().enumerate() {
                    let mut ns = slots.clone();
                    ns[digit] = Some(c as u16);
                    let cand = score + p.ln();
                    next.entry(ns)
                        .and_modify(|s| *s = s.max(cand))
                        .or_insert(cand);
                }
            }
        }
        level = next;
    }
    let mut out: Vec<(SemanticId, f64)> = level
        .into_iter()
        .map(|(slots, score)| {
            let digits: Vec<u16> = slots.into_iter().map(|s| s.unwrap()).collect();
            (SemanticId::new(digits, m).unwrap(), score)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(k);
    Ok(DecodeResult {
        candidates: out,
        requested_k: k,
    })
}

/// Ablation: fill digits in a forced order, expanding only that digit's
/// codewords at each step.
pub fn fixed_order_beam(
    state: &EncoderState,
    params: &ModelParams,
    config: &ModelConfig,
    order: &[usize],
    b_act: usize,
    k: usize,
) -> Result<DecodeResult> {
    validate_beam_args(b_act, k)?;
    let n = config.n;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..n).collect::<Vec<_>>() {
        return Err(Error::Config(format!(
            "fill order {order:?} is not a permutation of 0..{n}"
        )));
    }
    let mut branches = vec![BeamBranch {
        slots: vec![None; n],
        score: 0.0,
        fills: Vec::new(),
    }];
    for &digit in order {
        let mut children: Vec<(f64, usize, u16)> = Vec::new();
        for (bi, br) in branches.iter().enumerate() {
            let dists = decode_digits(&br.to_slots(), state, params, config)?;
            let row = dists.digit(digit);
            for (c, &p) in row.iter().enumerate() {
                children.push((br.score + p.ln(), bi, c as u16));
            }
        }
        children.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        children.truncate(b_act);
        branches = children
            .into_iter()
            .map(|(score, bi, c)| {
                let parent = &branches[bi];
                let mut slots = parent.slots.clone();
                slots[digit] = Some(c);
                let mut fills = parent.fills.clone();
                fills.push((digit, c));
                BeamBranch {
                    slots,
                    score,
                    fills,
                }
            })
            .collect();
    }
    Ok(DecodeResult {
        candidates: rank_candidates(&branches, config.m, k),
        requested_k: k,
    })
}

/// Drops candidates whose SID no item carries, preserving order. Returns
/// the filtered result and the number of dropped candidates.
pub fn filter_to_catalog(
    result: &DecodeResult,
    catalog: &HashSet<SemanticId>,
) -> (DecodeResult, usize) {
    let candidates: Vec<(SemanticId, f64)> = result
        .candidates
        .iter()
        .filter(|(sid, _)| catalog.contains(sid))
        .cloned()
        .collect();
    let dropped = result.candidates.len() - candidates.len();
    (
        DecodeResult {
            candidates,
            requested_k: result.requested_k,
        },
        dropped,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::seeded_rng;
    use crate::network::encode;

    fn config(n: usize, m: usize) -> ModelConfig {
        ModelConfig {
            d_m: 8,
            d_ff: 12,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            n,
            m,
            l_input: 4,
            dropout: 0.0,
        }
    }

    fn random_state(cfg: &ModelConfig, seed: u64) -> (ModelParams, EncoderState) {
        let params = ModelParams::init(cfg, seed);
        let ctx = [
            SemanticId::new(vec![1; cfg.n], cfg.m as u32 as usize).unwrap(),
            SemanticId::new(vec![0; cfg.n], cfg.m).unwrap(),
        ];
        let state = encode(&ctx, &params, cfg).unwrap();
        (params, state)
    }

    #[test]
    fn bad_arguments_are_configuration_errors() {
        let cfg = config(3, 4);
        let (params, state) = random_state(&cfg, 1);
        assert_eq!(
            cpd_decode(&state, &params, &cfg, 0, 5)
                .unwrap_err()
                .exit_code(),
            2
        );
        assert_eq!(
            cpd_decode(&state, &params, &cfg, 4, 0)
                .unwrap_err()
                .exit_code(),
            2
        );
        assert_eq!(
            fixed_order_beam(&state, &params, &cfg, &[0, 0, 2], 4, 5)
                .unwrap_err()
                .exit_code(),
            2
        );
        let big = config(4, 64); // 64^4 > 1e6
        let (p2, s2) = random_state(&big, 1);
        assert_eq!(exact_oracle(&s2, &p2, &big, 5).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn single_digit_decode_is_a_sorted_distribution() {
        let cfg = config(1, 6);
        let (params, state) = random_state(&cfg, 3);
        let dists = decode_digits(&[Slot::Masked], &state, &params, &cfg).unwrap();
        let mut expect: Vec<(u16, f64)> = dists
            .digit(0)
            .iter()
            .enumerate()
            .map(|(c, &p)| (c as u16, p.ln()))
            .collect();
        expect.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got = cpd_decode(&state, &params, &cfg, 3, 4).unwrap();
        assert_eq!(got.candidates.len(), 3, "beam width caps candidates");
        for ((sid, score), (c, lp)) in got.candidates.iter().zip(expect.iter()) {
            assert_eq!(sid.digits(), &[*c]);
            assert!((score - lp).abs() < 1e-12);
        }
        // Fixed order over one digit is the same search.
        let forced = fixed_order_beam(&state, &params, &cfg, &[0], 3, 4).unwrap();
        for (a, b) in got.candidates.iter().zip(forced.candidates.iter()) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    /// Zero body with per-digit head biases: logits never depend on which
    /// slots are visible, so fill order cannot matter.
    fn context_free_model(cfg: &ModelConfig, seed: u64) -> ModelParams {
        let mut params = ModelParams::zeros(cfg);
        let mut rng = seeded_rng(seed);
        for head in params.heads.iter_mut() {
            for v in head.b.data.iter_mut() {
                *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
            }
        }
        params
    }

    #[test]
    fn context_free_model_decodes_to_per_digit_argmax() {
        let cfg = config(3, 4);
        let params = context_free_model(&cfg, 9);
        let state = encode(&[], &params, &cfg).unwrap();
        let dists = decode_digits(&[Slot::Masked; 3], &state, &params, &cfg).unwrap();
        let mut want_digits = Vec::new();
        let mut want_score = 0.0;
        for k in 0..cfg.n {
            let (c, p) = dists.top_codeword(k);
            want_digits.push(c);
            want_score += p.ln();
        }
        let got = cpd_decode(&state, &params, &cfg, 2, 1).unwrap();
        assert_eq!(got.candidates[0].0.digits(), &want_digits[..]);
        assert!((got.candidates[0].1 - want_score).abs() < 1e-9);
        // Any forced order reaches the same top-1.
        for order in [[0, 1, 2], [2, 1, 0], [1, 2, 0]] {
            let forced = fixed_order_beam(&state, &params, &cfg, &order, 2, 1).unwrap();
            assert_eq!(forced.candidates[0].0.digits(), &want_digits[..]);
            assert!((forced.candidates[0].1 - want_score).abs() < 1e-9);
        }
    }

    #[test]
    fn untruncated_beam_matches_the_oracle_exactly() {
        let cfg = config(3, 4);
        // n! * M^n = 384 fill sequences; 400 keeps every child alive.
        let untruncated = 400;
        for seed in 0..5 {
            let (params, state) = random_state(&cfg, seed);
            let all = 64;
            let beam = cpd_decode(&state, &params, &cfg, untruncated, all).unwrap();
            let oracle = exact_oracle(&state, &params, &cfg, all).unwrap();
            assert_eq!(beam.candidates.len(), oracle.candidates.len());
            for (b, o) in beam.candidates.iter().zip(oracle.candidates.iter()) {
                assert_eq!(b.0, o.0, "seed {seed}");
                assert!((b.1 - o.1).abs() < 1e-9, "seed {seed}");
            }
            // Dedup invariant: all SIDs unique.
            let mut sids: Vec<_> = beam.candidates.iter().map(|(s, _)| s.clone()).collect();
            sids.sort();
            sids.dedup();
            assert_eq!(sids.len(), beam.candidates.len());
        }
    }

    #[test]
    fn truncated_beams_never_beat_the_oracle() {
        let cfg = config(3, 4);
        for seed in 20..30 {
            let (params, state) = random_state(&cfg, seed);
            let oracle_top = exact_oracle(&state, &params, &cfg, 1).unwrap().candidates[0].1;
            for b_act in [1, 2, 4, 8, 16] {
                let got = cpd_decode(&state, &params, &cfg, b_act, 1).unwrap();
                assert!(
                    got.candidates[0].1 <= oracle_top + 1e-9,
                    "seed {seed} beam {b_act} beat the oracle"
                );
            }
        }
    }

    #[test]
    fn branch_scores_telescope_under_replay() {
        let cfg = config(3, 4);
        let (params, state) = random_state(&cfg, 31);
        let branches = run_beam(&state, &params, &cfg, 4).unwrap();
        assert_eq!(branches.len(), 4);
        for br in &branches {
            assert!(br.is_complete());
            assert!(br.score <= 1e-12, "log-probabilities must not be positive");
            let mut slots = vec![None; cfg.n];
            let mut replayed = 0.0;
            for &(digit, c) in &br.fills {
                let as_slots: Vec<Slot> = slots
                    .iter()
                    .map(|s: &Option<u16>| match s {
                        Some(v) => Slot::Visible(*v),
                        None => Slot::Masked,
                    })
                    .collect();
                let dists = decode_digits(&as_slots, &state, &params, &cfg).unwrap();
                replayed += dists.digit(digit)[usize::from(c)].ln();
                slots[digit] = Some(c);
            }
            assert!((replayed - br.score).abs() < 1e-9);
        }
    }

    #[test]
    fn every_step_fills_exactly_one_digit_per_branch() {
        let cfg = config(3, 4);
        let (params, state) = random_state(&cfg, 8);
        let branches = run_beam(&state, &params, &cfg, 6).unwrap();
        for br in &branches {
            assert_eq!(br.fills.len(), cfg.n);
            let mut digits: Vec<usize> = br.fills.iter().map(|&(d, _)| d).collect();
            digits.sort_unstable();
            assert_eq!(digits, vec![0, 1, 2]);
        }
    }

    #[test]
    fn initial_step_keeps_the_global_best_pair() {
        let cfg = config(3, 4);
        for seed in 40..45 {
            let (params, state) = random_state(&cfg, seed);
            let dists = decode_digits(&[Slot::Masked; 3], &state, &params, &cfg).unwrap();
            let mut best = (0usize, 0u16, f64::NEG_INFINITY);
            for k in 0..cfg.n {
                for (c, &p) in dists.digit(k).iter().enumerate() {
                    if p > best.2 {
                        best = (k, c as u16, p);
                    }
                }
            }
            let branches = run_beam(&state, &params, &cfg, 1).unwrap();
            assert_eq!(branches[0].fills[0], (best.0, best.1), "seed {seed}");
        }
    }

    #[test]
    fn some_model_separates_cpd_from_fixed_order() {
        let cfg = config(3, 4);
        let mut found = false;
        for seed in 0..50 {
            let (params, state) = random_state(&cfg, seed);
            let cpd = cpd_decode(&state, &params, &cfg, 2, 1).unwrap();
            let forced = fixed_order_beam(&state, &params, &cfg, &[0, 1, 2], 2, 1).unwrap();
            if (cpd.candidates[0].1 - forced.candidates[0].1).abs() > 1e-9 {
                found = true;
                break;
            }
        }
        assert!(
            found,
            "no model distinguished digit-order choice in 50 seeds"
        );
    }

    #[test]
    fn catalog_filter_preserves_order_and_counts_drops() {
        let cfg = config(3, 4);
        let (params, state) = random_state(&cfg, 13);
        let result = cpd_decode(&state, &params, &cfg, 16, 10).unwrap();
        assert!(result.candidates.len() >= 3);

        let empty = HashSet::new();
        let (none, dropped) = filter_to_catalog(&result, &empty);
        assert!(none.candidates.is_empty());
        assert_eq!(dropped, result.candidates.len());
        assert!(none.is_short());

        let full: HashSet<SemanticId> = result.candidates.iter().map(|(s, _)| s.clone()).collect();
        let (same, zero) = filter_to_catalog(&result, &full);
        assert_eq!(zero, 0);
        assert_eq!(same.candidates.len(), result.candidates.len());

        // Keep every other SID; a linear scan is the oracle.
        let partial: HashSet<SemanticId> = result
            .candidates
            .iter()
            .step_by(2)
            .map(|(s, _)| s.clone())
            .collect();
        let (kept, d) = filter_to_catalog(&result, &partial);
        let scan: Vec<(SemanticId, f64)> = result
            .candidates
            .iter()
            .filter(|(s, _)| partial.contains(s))
            .cloned()
            .collect();
        assert_eq!(kept.candidates, scan);
        assert_eq!(d, result.candidates.len() - scan.len());
    }

    #[test]
    fn short_results_are_flagged() {
        let cfg = config(1, 3);
        let (params, state) = random_state(&cfg, 2);
        // Only 3 completions exist but 10 were requested.
        let r = cpd_decode(&state, &params, &cfg, 8, 10).unwrap();
        assert_eq!(r.candidates.len(), 3);
        assert!(r.is_short());
        assert_eq!(r.requested_k, 10);
    }
}
