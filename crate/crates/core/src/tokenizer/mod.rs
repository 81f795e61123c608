//! Item tokenization: turning continuous item embeddings into short discrete
//! codes (semantic IDs).
//!
//! The primary tokenizer splits a learned rotation of the embedding space
//! into `n` contiguous subspaces and quantizes each with its own k-means
//! codebook (product quantization with an optimized rotation). Two
//! alternatives are provided for ablations: residual quantization with
//! full-dimensional codebooks, and uniformly random digit assignment.

pub mod kmeans;

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{seeded_rng, squared_distance, Mat};

/// An n-digit discrete code for one item; each digit lies in `[0, M)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticId {
    digits: Vec<u16>,
}

impl SemanticId {
    /// Validates every digit against the codebook size `m`.
    pub fn new(digits: Vec<u16>, m: usize) -> Result<Self> {
        if digits.is_empty() {
            return Err(Error::Data("semantic id needs at least one digit".into()));
        }
        for (k, &d) in digits.iter().enumerate() {
            if usize::from(d) >= m {
                return Err(Error::Data(format!(
                    "digit {k} is {d}, outside codebook range 0..{m}"
                )));
            }
        }
        Ok(Self { digits })
    }

    /// Internal constructor for digits already known to be in range.
    pub(crate) fn from_digits(digits: Vec<u16>) -> Self {
        debug_assert!(!digits.is_empty());
        Self { digits }
    }

    pub fn digits(&self) -> &[u16] {
        &self.digits
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    /// Parses the comma-separated text form, e.g. `"2,0,131"`.
    pub fn parse(text: &str, m: usize) -> Result<Self> {
        let digits = text
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u16>()
                    .map_err(|_| Error::Data(format!("bad semantic id digit {p:?}")))
            })
            .collect::<Result<Vec<u16>>>()?;
        Self::new(digits, m)
    }
}

impl std::fmt::Display for SemanticId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, d) in self.digits.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Item-to-code assignment in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct SidMap {
    pub items: Vec<(String, SemanticId)>,
}

impl SidMap {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&SemanticId> {
        self.items
            .iter()
            .find(|(id, _)| id == item_id)
            .map(|(_, sid)| sid)
    }

    /// item_id -> position index, for repeated lookups.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.as_str(), i))
            .collect()
    }

    /// Groups item ids by code; preserves catalog order within each group.
    pub fn by_sid(&self) -> HashMap<&SemanticId, Vec<&str>> {
        let mut out: HashMap<&SemanticId, Vec<&str>> = HashMap::new();
        for (id, sid) in &self.items {
            out.entry(sid).or_default().push(id.as_str());
        }
        out
    }
}

/// Product-quantization codebooks plus the learned orthogonal rotation.
#[derive(Debug, Clone)]
pub struct CodebookSet {
    /// d x d orthogonal rotation applied as `x_rot = x . R^T`.
    pub rotation: Mat,
    /// One M x (d/n) codebook per digit.
    pub codebooks: Vec<Mat>,
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

impl CodebookSet {
    pub fn sub_dim(&self) -> usize {
        self.d / self.n
    }

    /// Max absolute entry of `R^T R - I`; near zero for a valid rotation.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.rotation.matmul_tn(&self.rotation);
        let mut err: f64 = 0.0;
        for i in 0..gram.rows {
            for j in 0..gram.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((gram.at(i, j) - target).abs());
            }
        }
        err
    }

    /// Reconstruction in the original space: concat chosen centroids, then
    /// rotate back with R (the inverse of R^T for orthogonal R).
    pub fn reconstruct(&self, sid: &SemanticId) -> Vec<f64> {
        let ds = self.sub_dim();
        let mut rotated = vec![0.0; self.d];
        for (k, &digit) in sid.digits().iter().enumerate() {
            let c = self.codebooks[k].row(usize::from(digit));
            rotated[k * ds..(k + 1) * ds].copy_from_slice(c);
        }
        // x_hat = y . R  (row vector times matrix).
        let y = Mat::from_vec(1, self.d, rotated);
        y.matmul(&self.rotation).data
    }
}

/// Residual-quantization codebooks; every level spans the full embedding
/// dimension and quantizes what the previous levels left over.
#[derive(Debug, Clone)]
pub struct RqCodebooks {
    /// One M x d codebook per level.
    pub levels: Vec<Mat>,
    /// Total squared residual norm remaining after each level; non-increasing
    /// because every level's k-means ends with a mean update.
    pub residual_sq_per_level: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

impl RqCodebooks {
    /// Sum of chosen centroids across levels.
    pub fn reconstruct(&self, sid: &SemanticId) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (k, &digit) in sid.digits().iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.levels[k].row(usize::from(digit))) {
                *o += c;
            }
        }
        out
    }
}

/// Per-iteration distortion trace from a product-quantization fit.
#[derive(Debug, Clone)]
pub struct PseFit {
    pub codebooks: CodebookSet,
    /// Total squared reconstruction error after each outer iteration.
    pub distortion_per_iter: Vec<f64>,
}

/// Usage and collision statistics for a finished tokenization.
#[derive(Debug, Clone)]
pub struct TokenizerReport {
    /// Mean squared reconstruction error per item; `None` for random codes.
    pub mean_distortion: Option<f64>,
    /// n x M histogram: how many items use codeword `v` at digit `k`.
    pub usage: Vec<Vec<u32>>,
    pub distinct_sids: usize,
    pub max_items_per_sid: usize,
    pub items: usize,
}

impl std::fmt::Display for TokenizerReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.mean_distortion {
            Some(d) => writeln!(f, "mean_distortion={d:.6}")?,
            None => writeln!(f, "mean_distortion=n/a")?,
        }
        writeln!(
            f,
            "items={} distinct_sids={} max_items_per_sid={}",
            self.items, self.distinct_sids, self.max_items_per_sid
        )?;
        for (k, hist) in self.usage.iter().enumerate() {
            let used = hist.iter().filter(|&&c| c > 0).count();
            writeln!(f, "digit {k}: {used}/{} codewords used", hist.len())?;
        }
        Ok(())
    }
}

fn validate_fit_args(rows: usize, d: usize, n: usize, m: usize, iters: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("need at least one digit".into()));
    }
    if m == 0 {
        return Err(Error::Config("codebook size must be positive".into()));
    }
    if m > usize::from(u16::MAX) + 1 {
        return Err(Error::Config(format!(
            "codebook size {m} exceeds digit range"
        )));
    }
    if iters == 0 {
        return Err(Error::Config("need at least one fit iteration".into()));
    }
    if rows < m {
        return Err(Error::Config(format!(
            "{rows} items cannot fill {m} codewords per digit"
        )));
    }
    if d == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    Ok(())
}

const LLOYD_ITERS: usize = 25;

/// Orthogonal Procrustes update: the rotation minimizing `||X R^T - Y||_F`
/// over orthogonal R, via SVD of `X^T Y`.
fn procrustes(x: &Mat, y: &Mat) -> Mat {
    let d = x.cols;
    let m = x.matmul_tn(y); // d x d
    let dm = nalgebra::DMatrix::from_row_iterator(d, d, m.data.iter().copied());
    let svd = dm.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let r = v_t.transpose() * u.transpose();
    Mat::from_fn(d, d, |i, j| r[(i, j)])
}

/// Extracts the contiguous column block `[k*ds, (k+1)*ds)` from each row.
fn subspace(x: &Mat, k: usize, ds: usize) -> Mat {
    Mat::from_fn(x.rows, ds, |i, j| x.at(i, k * ds + j))
}

/// Fits the product quantizer: alternates per-subspace k-means with an
/// orthogonal rotation update. The recorded per-iteration distortion is
/// non-increasing because the k-means half warm-starts from the previous
/// codebooks and the rotation half solves its subproblem exactly.
pub fn fit_pse(embeddings: &Mat, n: usize, m: usize, iters: usize, seed: u64) -> Result<PseFit> {
    validate_fit_args(embeddings.rows, embeddings.cols, n, m, iters)?;
    if !embeddings.cols.is_multiple_of(n) {
        return Err(Error::Config(format!(
            "embedding dimension {} not divisible into {n} subspaces",
            embeddings.cols
        )));
    }
    if !embeddings.is_finite() {
        return Err(Error::Data("non-finite value in item embeddings".into()));
    }

    let d = embeddings.cols;
    let ds = d / n;
    let mut rng = seeded_rng(seed);
    let mut rotation = Mat::identity(d);
    let mut codebooks: Vec<Mat> = Vec::new();
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut trace = Vec::with_capacity(iters);

    for outer in 0..iters {
        // X~ = X . R^T under the current rotation.
        let rotated = embeddings.matmul_nt(&rotation);

        for k in 0..n {
            let pts = subspace(&rotated, k, ds);
            let fit = if outer == 0 {
                kmeans::fit(&pts, m, LLOYD_ITERS, &mut rng)
            } else {
                kmeans::lloyd(&pts, codebooks[k].clone(), LLOYD_ITERS)
            };
            if outer == 0 {
                codebooks.push(fit.centroids);
            } else {
                codebooks[k] = fit.centroids;
            }
            assignments[k] = fit.assignments;
        }

        // Reconstruction in rotated space from the fresh assignments.
        let mut y = Mat::zeros(embeddings.rows, d);
        for (k, asg) in assignments.iter().enumerate() {
            for (i, &a) in asg.iter().enumerate() {
                let c = codebooks[k].row(a);
                y.row_mut(i)[k * ds..(k + 1) * ds].copy_from_slice(c);
            }
        }

        rotation = procrustes(embeddings, &y);

        // Objective after both half-steps of this iteration.
        let rotated = embeddings.matmul_nt(&rotation);
        let mut dist = 0.0;
        for i in 0..embeddings.rows {
            dist += squared_distance(rotated.row(i), y.row(i));
        }
        trace.push(dist);
    }

    Ok(PseFit {
        codebooks: CodebookSet {
            rotation,
            codebooks,
            n,
            m,
            d,
        },
        distortion_per_iter: trace,
    })
}

/// Assigns every catalog item its nearest code under the fitted quantizer.
pub fn tokenize(ids: &[String], embeddings: &Mat, cbs: &CodebookSet) -> Result<SidMap> {
    if ids.len() != embeddings.rows {
        return Err(Error::Data(format!(
            "{} ids for {} embedding rows",
            ids.len(),
            embeddings.rows
        )));
    }
    if embeddings.cols != cbs.d {
        return Err(Error::Data(format!(
            "embedding dimension {} does not match codebooks ({})",
            embeddings.cols, cbs.d
        )));
    }
    if !embeddings.is_finite() {
        return Err(Error::Data("non-finite value in item embeddings".into()));
    }
    let ds = cbs.sub_dim();
    let rotated = embeddings.matmul_nt(&cbs.rotation);
    let mut items = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let mut digits = Vec::with_capacity(cbs.n);
        for k in 0..cbs.n {
            let sub = &rotated.row(i)[k * ds..(k + 1) * ds];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..cbs.m {
                let dist = squared_distance(sub, cbs.codebooks[k].row(c));
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            digits.push(best as u16);
        }
        items.push((id.clone(), SemanticId::from_digits(digits)));
    }
    Ok(SidMap { items })
}

/// Fits residual quantization: level k runs k-means on the residuals left by
/// levels `0..k`, so every level's codebook spans the full dimension. There
/// is no outer alternation here, so `iters` counts seeded k-means restarts
/// per level; the lowest-distortion restart wins.
pub fn fit_rq_kmeans(
    embeddings: &Mat,
    n: usize,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<RqCodebooks> {
    validate_fit_args(embeddings.rows, embeddings.cols, n, m, iters)?;
    if !embeddings.is_finite() {
        return Err(Error::Data("non-finite value in item embeddings".into()));
    }
    let d = embeddings.cols;
    let mut rng = seeded_rng(seed);
    let mut residual = embeddings.clone();
    let mut levels = Vec::with_capacity(n);
    let mut residual_sq_per_level = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<kmeans::KMeansFit> = None;
        for _ in 0..iters {
            let fit = kmeans::fit(&residual, m, LLOYD_ITERS, &mut rng);
            if best.as_ref().is_none_or(|b| fit.distortion < b.distortion) {
                best = Some(fit);
            }
        }
        let fit = best.unwrap();
        for (i, &a) in fit.assignments.iter().enumerate() {
            let c = fit.centroids.row(a).to_vec();
            for (r, cv) in residual.row_mut(i).iter_mut().zip(c) {
                *r -= cv;
            }
        }
        residual_sq_per_level.push(residual.frobenius_sq());
        levels.push(fit.centroids);
    }
    Ok(RqCodebooks {
        levels,
        residual_sq_per_level,
        n,
        m,
        d,
    })
}

/// Sequential greedy assignment under residual codebooks.
pub fn rq_tokenize(ids: &[String], embeddings: &Mat, cbs: &RqCodebooks) -> Result<SidMap> {
    if ids.len() != embeddings.rows {
        return Err(Error::Data(format!(
            "{} ids for {} embedding rows",
            ids.len(),
            embeddings.rows
        )));
    }
    if embeddings.cols != cbs.d {
        return Err(Error::Data(format!(
            "embedding dimension {} does not match codebooks ({})",
            embeddings.cols, cbs.d
        )));
    }
    let mut items = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let mut residual = embeddings.row(i).to_vec();
        let mut digits = Vec::with_capacity(cbs.n);
        for level in &cbs.levels {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..cbs.m {
                let dist = squared_distance(&residual, level.row(c));
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            digits.push(best as u16);
            for (r, &cv) in residual.iter_mut().zip(level.row(best)) {
                *r -= cv;
            }
        }
        items.push((id.clone(), SemanticId::from_digits(digits)));
    }
    Ok(SidMap { items })
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike the stdlib
/// hasher, so random codes are reproducible from (item_id, seed) alone.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uniform random digits per item; the code depends only on the item id and
/// the seed, not on catalog order.
pub fn random_tokenize(ids: &[String], n: usize, m: usize, seed: u64) -> Result<SidMap> {
    if n == 0 {
        return Err(Error::Config("need at least one digit".into()));
    }
    if m == 0 || m > usize::from(u16::MAX) + 1 {
        return Err(Error::Config(format!("codebook size {m} out of range")));
    }
    let mut items = Vec::with_capacity(ids.len());
    for id in ids {
        let mut rng = seeded_rng(fnv1a(id.as_bytes()) ^ seed.rotate_left(17));
        let digits = (0..n)
            .map(|_| rng.random_range(0..m) as u16)
            .collect::<Vec<u16>>();
        items.push((id.clone(), SemanticId::from_digits(digits)));
    }
    Ok(SidMap { items })
}

/// Maps a code back to the original embedding space.
pub type ReconstructFn<'a> = &'a dyn Fn(&SemanticId) -> Vec<f64>;

/// Distortion, usage, and collision statistics for a finished map.
/// `reconstruct` maps a code back to the original embedding space; pass
/// `None` for tokenizers without a reconstruction (random codes).
pub fn build_report(
    embeddings: Option<&Mat>,
    map: &SidMap,
    n: usize,
    m: usize,
    reconstruct: Option<ReconstructFn<'_>>,
) -> TokenizerReport {
    let mut usage = vec![vec![0u32; m]; n];
    for (_, sid) in &map.items {
        for (k, &d) in sid.digits().iter().enumerate() {
            usage[k][usize::from(d)] += 1;
        }
    }
    let groups = map.by_sid();
    let max_items_per_sid = groups.values().map(Vec::len).max().unwrap_or(0);

    let mean_distortion = match (embeddings, reconstruct) {
        (Some(x), Some(f)) if !map.items.is_empty() => {
            let total: f64 = map
                .items
                .iter()
                .enumerate()
                .map(|(i, (_, sid))| squared_distance(x.row(i), &f(sid)))
                .sum();
            Some(total / map.items.len() as f64)
        }
        _ => None,
    };

    TokenizerReport {
        mean_distortion,
        usage,
        distinct_sids: groups.len(),
        max_items_per_sid,
        items: map.items.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{fill_trunc_normal, seeded_rng};

    fn random_table(rows: usize, d: usize, seed: u64) -> Mat {
        let mut rng = seeded_rng(seed);
        let mut m = Mat::zeros(rows, d);
        fill_trunc_normal(&mut m, &mut rng, 1.0);
        m
    }

    fn ids(count: usize) -> Vec<String> {
        (0..count).map(|i| format!("item{i:03}")).collect()
    }

    #[test]
    fn semantic_id_rejects_out_of_range_digit() {
        assert!(SemanticId::new(vec![0, 4], 4).is_err());
        assert!(SemanticId::new(vec![0, 3], 4).is_ok());
    }

    #[test]
    fn semantic_id_text_round_trip() {
        let sid = SemanticId::new(vec![2, 0, 131], 256).unwrap();
        let text = sid.to_string();
        assert_eq!(text, "2,0,131");
        assert_eq!(SemanticId::parse(&text, 256).unwrap(), sid);
    }

    #[test]
    fn pse_distortion_is_non_increasing() {
        let x = random_table(96, 8, 11);
        let fit = fit_pse(&x, 4, 8, 6, 42).unwrap();
        assert_eq!(fit.distortion_per_iter.len(), 6);
        for w in fit.distortion_per_iter.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "distortion increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn pse_rotation_stays_orthogonal() {
        let x = random_table(64, 12, 3);
        let fit = fit_pse(&x, 3, 4, 5, 1).unwrap();
        assert!(fit.codebooks.orthogonality_error() < 1e-5);
    }

    #[test]
    fn tokenize_matches_brute_force_nearest_centroid() {
        let x = random_table(50, 6, 9);
        let fit = fit_pse(&x, 3, 4, 3, 7).unwrap();
        let cbs = &fit.codebooks;
        let map = tokenize(&ids(50), &x, cbs).unwrap();
        let rotated = x.matmul_nt(&cbs.rotation);
        let ds = cbs.sub_dim();
        for (i, (_, sid)) in map.items.iter().enumerate() {
            for k in 0..cbs.n {
                let sub = &rotated.row(i)[k * ds..(k + 1) * ds];
                // Exhaustive scan, written independently of tokenize().
                let mut best = (f64::INFINITY, 0usize);
                for c in 0..cbs.m {
                    let d = squared_distance(sub, cbs.codebooks[k].row(c));
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                assert_eq!(usize::from(sid.digits()[k]), best.1);
            }
        }
    }

    #[test]
    fn reconstruction_distortion_is_rotation_invariant() {
        // ||x - x_hat|| in the original space must equal the rotated-space
        // quantization error, because R is orthogonal.
        let x = random_table(40, 6, 21);
        let fit = fit_pse(&x, 2, 5, 4, 13).unwrap();
        let cbs = &fit.codebooks;
        let map = tokenize(&ids(40), &x, cbs).unwrap();
        let rotated = x.matmul_nt(&cbs.rotation);
        let ds = cbs.sub_dim();
        for (i, (_, sid)) in map.items.iter().enumerate() {
            let orig = squared_distance(x.row(i), &cbs.reconstruct(sid));
            let mut rot = 0.0;
            for (k, &dg) in sid.digits().iter().enumerate() {
                rot += squared_distance(
                    &rotated.row(i)[k * ds..(k + 1) * ds],
                    cbs.codebooks[k].row(usize::from(dg)),
                );
            }
            assert!((orig - rot).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_rejects_bad_shapes() {
        let x = random_table(10, 7, 2);
        // 7 not divisible by 2.
        assert!(matches!(fit_pse(&x, 2, 4, 3, 0), Err(Error::Config(_))));
        // Fewer items than codewords.
        let small = random_table(3, 4, 2);
        assert!(matches!(fit_pse(&small, 2, 4, 3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn fit_rejects_non_finite_embeddings() {
        let mut x = random_table(12, 4, 5);
        x.row_mut(3)[2] = f64::NAN;
        assert!(matches!(fit_pse(&x, 2, 4, 3, 0), Err(Error::Data(_))));
    }

    #[test]
    fn rq_perfectly_codes_a_separable_grid() {
        // Points on a 3 x 3 grid of (coarse, fine) offsets: level one can
        // learn the coarse centers and level two the fine offsets, giving
        // zero residual.
        let coarse = [0.0, 100.0, 200.0];
        let fine = [0.0, 1.0, 2.0];
        let mut rows = Vec::new();
        for &c in &coarse {
            for &f in &fine {
                rows.push(vec![c + f, c - f]);
            }
        }
        let x = Mat::from_vec(9, 2, rows.concat());
        let cbs = fit_rq_kmeans(&x, 2, 3, 1, 4).unwrap();
        assert!(*cbs.residual_sq_per_level.last().unwrap() < 1e-12);
        let last = *cbs.levels.last().unwrap().row(0).first().unwrap();
        assert!(last.is_finite());
        let map = rq_tokenize(&ids(9), &x, &cbs).unwrap();
        for (i, (_, sid)) in map.items.iter().enumerate() {
            let err = squared_distance(x.row(i), &cbs.reconstruct(sid));
            assert!(err < 1e-12, "item {i} residual {err}");
        }
    }

    #[test]
    fn rq_single_level_matches_plain_kmeans() {
        let x = random_table(30, 4, 17);
        let cbs = fit_rq_kmeans(&x, 1, 4, 1, 99).unwrap();
        let mut rng = seeded_rng(99);
        let km = kmeans::fit(&x, 4, 25, &mut rng);
        let map = rq_tokenize(&ids(30), &x, &cbs).unwrap();
        for (i, (_, sid)) in map.items.iter().enumerate() {
            assert_eq!(usize::from(sid.digits()[0]), km.assignments[i]);
        }
    }

    #[test]
    fn rq_residual_norm_never_grows_with_level() {
        let x = random_table(80, 6, 31);
        let cbs = fit_rq_kmeans(&x, 4, 5, 1, 8).unwrap();
        assert_eq!(cbs.residual_sq_per_level.len(), 4);
        assert!(cbs.residual_sq_per_level[0] <= x.frobenius_sq() + 1e-9);
        for w in cbs.residual_sq_per_level.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn pse_zero_distortion_on_codebook_grid() {
        // Every point is a concatenation of per-subspace centroid values, so
        // quantization can be exact and the rotation update cannot hurt.
        let vals = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rows = Vec::new();
        for a in &vals {
            for b in &vals {
                rows.extend_from_slice(a);
                rows.extend_from_slice(b);
            }
        }
        let x = Mat::from_vec(9, 4, rows);
        let fit = fit_pse(&x, 2, 3, 4, 0).unwrap();
        for &d in &fit.distortion_per_iter {
            assert!(d < 1e-12, "grid data should quantize exactly, got {d}");
        }
        assert!(fit.codebooks.orthogonality_error() < 1e-5);
    }

    #[test]
    fn pse_single_digit_first_pass_is_plain_kmeans() {
        // With n=1 and one outer iteration, the quantization half is exactly
        // one k-means fit over the unrotated data on the same rng stream.
        let x = random_table(40, 5, 23);
        let fit = fit_pse(&x, 1, 4, 1, 55).unwrap();
        let mut rng = seeded_rng(55);
        let km = kmeans::fit(&x, 4, 25, &mut rng);
        assert_eq!(fit.codebooks.codebooks[0].data, km.centroids.data);
    }

    #[test]
    fn digits_depend_only_on_their_own_subspace() {
        let x = random_table(20, 6, 41);
        let fit = fit_pse(&x, 3, 4, 3, 2).unwrap();
        let cbs = &fit.codebooks;
        let base = tokenize(&ids(20), &x, cbs).unwrap();
        // Perturb subspace 1 in rotated coordinates, map back with R, and
        // check digits 0 and 2 are untouched.
        let rotated = x.matmul_nt(&cbs.rotation);
        let ds = cbs.sub_dim();
        let mut bumped = rotated.clone();
        for i in 0..bumped.rows {
            for j in ds..2 * ds {
                let v = bumped.at(i, j) + 0.37;
                *bumped.at_mut(i, j) = v;
            }
        }
        let back = bumped.matmul(&cbs.rotation);
        let moved = tokenize(&ids(20), &back, cbs).unwrap();
        for ((_, a), (_, b)) in base.items.iter().zip(moved.items.iter()) {
            assert_eq!(a.digits()[0], b.digits()[0]);
            assert_eq!(a.digits()[2], b.digits()[2]);
        }
    }

    #[test]
    fn total_distortion_decomposes_per_subspace() {
        let x = random_table(60, 8, 77);
        let fit = fit_pse(&x, 4, 4, 3, 5).unwrap();
        let cbs = &fit.codebooks;
        let map = tokenize(&ids(60), &x, cbs).unwrap();
        let rotated = x.matmul_nt(&cbs.rotation);
        let ds = cbs.sub_dim();
        let mut total = 0.0;
        let mut per_sub = vec![0.0; cbs.n];
        for (i, (_, sid)) in map.items.iter().enumerate() {
            total += squared_distance(x.row(i), &cbs.reconstruct(sid));
            for (k, &dg) in sid.digits().iter().enumerate() {
                per_sub[k] += squared_distance(
                    &rotated.row(i)[k * ds..(k + 1) * ds],
                    cbs.codebooks[k].row(usize::from(dg)),
                );
            }
        }
        let sum: f64 = per_sub.iter().sum();
        assert!((total - sum).abs() < 1e-9);
    }

    #[test]
    fn random_tokenize_single_codeword_gives_all_zeros() {
        let map = random_tokenize(&ids(5), 3, 1, 9).unwrap();
        for (_, sid) in &map.items {
            assert!(sid.digits().iter().all(|&d| d == 0));
        }
    }

    #[test]
    fn random_tokenize_is_order_independent() {
        let a = ids(20);
        let mut b = a.clone();
        b.reverse();
        let map_a = random_tokenize(&a, 3, 8, 5).unwrap();
        let map_b = random_tokenize(&b, 3, 8, 5).unwrap();
        for (id, sid) in &map_a.items {
            assert_eq!(map_b.get(id), Some(sid));
        }
        // Different seed gives different codes somewhere.
        let map_c = random_tokenize(&a, 3, 8, 6).unwrap();
        assert_ne!(map_a.items, map_c.items);
    }

    #[test]
    fn report_counts_usage_and_collisions() {
        let map = SidMap {
            items: vec![
                ("a".into(), SemanticId::from_digits(vec![0, 1])),
                ("b".into(), SemanticId::from_digits(vec![0, 1])),
                ("c".into(), SemanticId::from_digits(vec![1, 0])),
            ],
        };
        let rep = build_report(None, &map, 2, 2, None);
        assert_eq!(rep.usage[0], vec![2, 1]);
        assert_eq!(rep.usage[1], vec![1, 2]);
        assert_eq!(rep.distinct_sids, 2);
        assert_eq!(rep.max_items_per_sid, 2);
        assert_eq!(rep.mean_distortion, None);
    }
}
