//! Interaction-log ingestion, chronological user sequences, leave-last-out
//! splits, and sliding-window training instances.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tokenizer::{SemanticId, SidMap};

/// One interaction as parsed from the input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub user: String,
    pub item: String,
    pub ts: i64,
}

/// Raw interactions in input order. Chronology is applied per user when
/// sequences are extracted; timestamp ties keep input order.
#[derive(Debug, Clone, Default)]
pub struct InteractionLog {
    pub records: Vec<Record>,
}

impl InteractionLog {
    /// Users in first-appearance order, each with items stably sorted by
    /// timestamp.
    pub fn user_sequences(&self) -> Vec<(String, Vec<String>)> {
        let mut order: Vec<&str> = Vec::new();
        let mut by_user: HashMap<&str, Vec<(i64, &str)>> = HashMap::new();
        for r in &self.records {
            let entry = by_user.entry(r.user.as_str()).or_default();
            if entry.is_empty() {
                order.push(r.user.as_str());
            }
            entry.push((r.ts, r.item.as_str()));
        }
        order
            .into_iter()
            .map(|u| {
                let mut seq = by_user.remove(u).unwrap();
                seq.sort_by_key(|&(ts, _)| ts);
                (
                    u.to_string(),
                    seq.into_iter().map(|(_, i)| i.to_string()).collect(),
                )
            })
            .collect()
    }

    pub fn user_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.user.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn item_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.item.as_str())
            .collect::<HashSet<_>>()
            .len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Tsv,
    Jsonl,
}

impl std::fmt::Display for LogFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogFormat::Tsv => write!(f, "tsv"),
            LogFormat::Jsonl => write!(f, "jsonl"),
        }
    }
}

impl std::str::FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(LogFormat::Tsv),
            "jsonl" => Ok(LogFormat::Jsonl),
            other => Err(Error::Config(format!(
                "unknown log format {other:?} (expected tsv or jsonl)"
            ))),
        }
    }
}

fn parse_tsv_line(line: &str) -> std::result::Result<Record, String> {
    let mut parts = line.split('\t');
    let user = parts.next().filter(|s| !s.is_empty());
    let item = parts.next().filter(|s| !s.is_empty());
    let ts = parts.next();
    let extra = parts.next();
    match (user, item, ts, extra) {
        (Some(u), Some(i), Some(t), None) => {
            let ts = t
                .trim()
                .parse::<i64>()
                .map_err(|_| format!("bad timestamp {t:?}"))?;
            Ok(Record {
                user: u.to_string(),
                item: i.to_string(),
                ts,
            })
        }
        _ => Err("expected user\\titem\\ttimestamp".to_string()),
    }
}

fn parse_jsonl_line(line: &str) -> std::result::Result<Record, String> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("bad json: {e}"))?;
    let user = v
        .get("user")
        .and_then(|x| x.as_str())
        .ok_or("missing string field \"user\"")?;
    let item = v
        .get("item")
        .and_then(|x| x.as_str())
        .ok_or("missing string field \"item\"")?;
    let ts = v
        .get("ts")
        .and_then(|x| x.as_i64())
        .ok_or("missing integer field \"ts\"")?;
    Ok(Record {
        user: user.to_string(),
        item: item.to_string(),
        ts,
    })
}

/// Parses an interaction log. TSV lines are `user\titem\ttimestamp`; JSONL
/// lines are objects with keys `user`, `item`, `ts`. Blank lines are skipped.
pub fn load_log(path: &Path, format: LogFormat) -> Result<InteractionLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            LogFormat::Tsv => parse_tsv_line(line),
            LogFormat::Jsonl => parse_jsonl_line(line),
        };
        match parsed {
            Ok(r) => records.push(r),
            Err(msg) => {
                return Err(Error::Data(format!(
                    "{}: line {}: {msg}",
                    path.display(),
                    idx + 1
                )))
            }
        }
    }
    Ok(InteractionLog { records })
}

/// Catalog embeddings: one row per item id, validated on construction.
#[derive(Debug, Clone)]
pub struct ItemEmbeddingTable {
    pub ids: Vec<String>,
    pub vectors: Mat,
}

impl ItemEmbeddingTable {
    pub fn new(ids: Vec<String>, vectors: Mat) -> Result<Self> {
        if ids.len() != vectors.rows {
            return Err(Error::Data(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                vectors.rows
            )));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate item id {id:?}")));
            }
        }
        if !vectors.is_finite() {
            return Err(Error::Data("non-finite value in item embeddings".into()));
        }
        Ok(ItemEmbeddingTable { ids, vectors })
    }

    pub fn d(&self) -> usize {
        self.vectors.cols
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One retained user's split: everything before the last two interactions is
/// train-only, the second-to-last item is the validation target, the last is
/// the test target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub user: String,
    pub train_prefix: Vec<String>,
    pub valid_target: String,
    pub test_target: String,
}

impl UserSplit {
    /// Context for the validation target: the full train prefix.
    pub fn valid_context(&self) -> &[String] {
        &self.train_prefix
    }

    /// Context for the test target: train prefix plus the validation item.
    pub fn test_context(&self) -> Vec<String> {
        let mut ctx = self.train_prefix.clone();
        ctx.push(self.valid_target.clone());
        ctx
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplitSpec {
    pub users: Vec<UserSplit>,
    /// Users with fewer than 3 interactions, dropped from all splits.
    pub dropped_users: usize,
}

impl SplitSpec {
    pub fn summary(&self) -> String {
        let train_items: usize = self.users.iter().map(|u| u.train_prefix.len()).sum();
        format!(
            "users={} dropped={} train_items={} valid_targets={} test_targets={}",
            self.users.len(),
            self.dropped_users,
            train_items,
            self.users.len(),
            self.users.len()
        )
    }
}

/// Assigns the last item per user to test and the second-to-last to
/// validation. Users with fewer than 3 interactions cannot fill all three
/// splits and are dropped (counted in `SplitSpec::dropped_users`).
pub fn leave_last_out(log: &InteractionLog) -> SplitSpec {
    let mut users = Vec::new();
    let mut dropped = 0usize;
    for (user, mut seq) in log.user_sequences() {
        if seq.len() < 3 {
            dropped += 1;
            continue;
        }
        let test_target = seq.pop().unwrap();
        let valid_target = seq.pop().unwrap();
        users.push(UserSplit {
            user,
            train_prefix: seq,
            valid_target,
            test_target,
        });
    }
    SplitSpec {
        users,
        dropped_users: dropped,
    }
}

/// A single supervised example: semantic IDs of the context items (most
/// recent last) and of the next item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub context: Vec<SemanticId>,
    pub target: SemanticId,
}

/// A scoring example tied back to its user for per-user decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalInstance {
    pub user: String,
    pub context: Vec<SemanticId>,
    pub target: SemanticId,
}

fn lookup_sids<'a>(
    items: &[String],
    index: &HashMap<&str, usize>,
    map: &'a SidMap,
) -> Result<Vec<&'a SemanticId>> {
    items
        .iter()
        .map(|item| {
            index
                .get(item.as_str())
                .map(|&i| &map.items[i].1)
                .ok_or_else(|| Error::Data(format!("item {item:?} has no semantic id")))
        })
        .collect()
}

fn truncated(context: &[&SemanticId], l_input: usize) -> Vec<SemanticId> {
    let start = context.len().saturating_sub(l_input);
    context[start..].iter().map(|&s| s.clone()).collect()
}

/// Expands every train prefix into all (context, next-item) pairs: a prefix
/// of length L yields L-1 instances, each context truncated to the most
/// recent `l_input` items.
pub fn sliding_window_expand(
    split: &SplitSpec,
    map: &SidMap,
    l_input: usize,
) -> Result<Vec<TrainingInstance>> {
    if l_input == 0 {
        return Err(Error::Config("context length must be at least 1".into()));
    }
    let index = map.index();
    let mut out = Vec::new();
    for us in &split.users {
        let sids = lookup_sids(&us.train_prefix, &index, map)?;
        for p in 1..sids.len() {
            out.push(TrainingInstance {
                context: truncated(&sids[..p], l_input),
                target: sids[p].clone(),
            });
        }
    }
    Ok(out)
}

/// One instance per user (no augmentation): full train prefix minus its last
/// item as context, that last item as target. Baseline for the augmentation
/// ablation.
pub fn last_target_instances(
    split: &SplitSpec,
    map: &SidMap,
    l_input: usize,
) -> Result<Vec<TrainingInstance>> {
    if l_input == 0 {
        return Err(Error::Config("context length must be at least 1".into()));
    }
    let index = map.index();
    let mut out = Vec::new();
    for us in &split.users {
        let sids = lookup_sids(&us.train_prefix, &index, map)?;
        if sids.len() < 2 {
            continue;
        }
        let last = sids.len() - 1;
        out.push(TrainingInstance {
            context: truncated(&sids[..last], l_input),
            target: sids[last].clone(),
        });
    }
    Ok(out)
}

/// Validation instances: context is the train prefix (truncated), target is
/// the held-out second-to-last item.
pub fn valid_instances(
    split: &SplitSpec,
    map: &SidMap,
    l_input: usize,
) -> Result<Vec<EvalInstance>> {
    eval_instances(split, map, l_input, false)
}

/// Test instances: context additionally includes the validation item.
pub fn test_instances(
    split: &SplitSpec,
    map: &SidMap,
    l_input: usize,
) -> Result<Vec<EvalInstance>> {
    eval_instances(split, map, l_input, true)
}

fn eval_instances(
    split: &SplitSpec,
    map: &SidMap,
    l_input: usize,
    test: bool,
) -> Result<Vec<EvalInstance>> {
    if l_input == 0 {
        return Err(Error::Config("context length must be at least 1".into()));
    }
    let index = map.index();
    let mut out = Vec::new();
    for us in &split.users {
        let items = if test {
            us.test_context()
        } else {
            us.valid_context().to_vec()
        };
        let sids = lookup_sids(&items, &index, map)?;
        let target_item = if test {
            &us.test_target
        } else {
            &us.valid_target
        };
        let target = lookup_sids(std::slice::from_ref(target_item), &index, map)?[0].clone();
        out.push(EvalInstance {
            user: us.user.clone(),
            context: truncated(&sids, l_input),
            target,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp_file(contents: &str) -> tempish::TempPath {
        tempish::write(contents)
    }

    /// Minimal temp-file helper; files land under the target dir and are
    /// removed on drop.
    mod tempish {
        use std::path::PathBuf;
        use std::sync::atomic::{AtomicU64, Ordering};

        static COUNTER: AtomicU64 = AtomicU64::new(0);

        pub struct TempPath(pub PathBuf);

        impl Drop for TempPath {
            fn drop(&mut self) {
                let _ = std::fs::remove_file(&self.0);
            }
        }

        pub fn write(contents: &str) -> TempPath {
            let n = COUNTER.fetch_add(1, Ordering::SeqCst);
            let path = std::env::temp_dir().join(format!(
                "sidrec-dataset-test-{}-{n}.txt",
                std::process::id()
            ));
            std::fs::write(&path, contents).unwrap();
            TempPath(path)
        }
    }

    fn sid_map(items: &[&str]) -> SidMap {
        SidMap {
            items: items
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    (
                        id.to_string(),
                        SemanticId::new(vec![(i % 4) as u16, (i / 4) as u16 % 4], 4).unwrap(),
                    )
                })
                .collect(),
        }
    }

    fn log_from(rows: &[(&str, &str, i64)]) -> InteractionLog {
        InteractionLog {
            records: rows
                .iter()
                .map(|&(u, i, ts)| Record {
                    user: u.into(),
                    item: i.into(),
                    ts,
                })
                .collect(),
        }
    }

    #[test]
    fn tsv_three_lines_one_user() {
        let f = tmp_file("u1\ta\t10\nu1\tb\t20\nu1\tc\t30\n");
        let log = load_log(&f.0, LogFormat::Tsv).unwrap();
        let seqs = log.user_sequences();
        assert_eq!(
            seqs,
            vec![("u1".to_string(), vec!["a".into(), "b".into(), "c".into()])]
        );
    }

    #[test]
    fn empty_file_is_empty_log() {
        let f = tmp_file("");
        let log = load_log(&f.0, LogFormat::Tsv).unwrap();
        assert_eq!(log.user_count(), 0);
        assert!(log.user_sequences().is_empty());
    }

    #[test]
    fn interleaved_users_sort_independently() {
        // Out-of-order timestamps across two users; oracle is an explicit
        // stable sort of (ts, input index) done here, not via user_sequences.
        let rows = [
            ("u1", "a3", 30),
            ("u2", "b1", 5),
            ("u1", "a1", 10),
            ("u2", "b2", 5),
            ("u1", "a2", 20),
            ("u2", "b3", 50),
        ];
        let log = log_from(&rows);
        let seqs = log.user_sequences();

        for (user, got) in &seqs {
            let mut expect: Vec<(i64, usize, String)> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.0 == user)
                .map(|(i, r)| (r.2, i, r.1.to_string()))
                .collect();
            expect.sort(); // ts, then input index: the tie-break contract
            let expect: Vec<String> = expect.into_iter().map(|(_, _, it)| it).collect();
            assert_eq!(got, &expect, "user {user}");
        }
        // Tie in u2 kept input order.
        assert_eq!(seqs[1].1, vec!["b1", "b2", "b3"]);
    }

    #[test]
    fn malformed_tsv_line_reports_line_number() {
        let f = tmp_file("u1\ta\t10\nu1\tb\n");
        let err = load_log(&f.0, LogFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn bad_timestamp_reports_line_number() {
        let f = tmp_file("u1\ta\tsoon\n");
        let err = load_log(&f.0, LogFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(err.to_string().contains("timestamp"), "{err}");
    }

    #[test]
    fn jsonl_parses_and_reports_bad_lines() {
        let f = tmp_file(
            "{\"user\":\"u1\",\"item\":\"a\",\"ts\":10}\n{\"user\":\"u1\",\"item\":\"b\",\"ts\":5}\n",
        );
        let log = load_log(&f.0, LogFormat::Jsonl).unwrap();
        assert_eq!(
            log.user_sequences(),
            vec![("u1".to_string(), vec!["b".to_string(), "a".to_string()])]
        );

        let bad = tmp_file("{\"user\":\"u1\",\"ts\":10}\n");
        let err = load_log(&bad.0, LogFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(err.to_string().contains("item"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_log(Path::new("/nonexistent/log.tsv"), LogFormat::Tsv).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn embedding_table_rejects_duplicates_and_nan() {
        let m = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(ItemEmbeddingTable::new(vec!["a".into(), "a".into()], m.clone()).is_err());
        let mut bad = m.clone();
        bad.row_mut(0)[1] = f64::INFINITY;
        assert!(ItemEmbeddingTable::new(vec!["a".into(), "b".into()], bad).is_err());
        assert!(ItemEmbeddingTable::new(vec!["a".into(), "b".into()], m).is_ok());
    }

    #[test]
    fn leave_last_out_four_item_user() {
        let log = log_from(&[("u", "a", 1), ("u", "b", 2), ("u", "c", 3), ("u", "d", 4)]);
        let split = leave_last_out(&log);
        assert_eq!(split.users.len(), 1);
        let us = &split.users[0];
        assert_eq!(us.train_prefix, vec!["a", "b"]);
        assert_eq!(us.valid_target, "c");
        assert_eq!(us.test_target, "d");
        assert_eq!(us.valid_context(), &["a".to_string(), "b".to_string()][..]);
        assert_eq!(us.test_context(), vec!["a", "b", "c"]);
    }

    #[test]
    fn short_users_are_dropped_and_counted() {
        let log = log_from(&[
            ("u1", "a", 1),
            ("u1", "b", 2),
            ("u2", "a", 1),
            ("u2", "b", 2),
            ("u2", "c", 3),
        ]);
        let split = leave_last_out(&log);
        assert_eq!(split.users.len(), 1);
        assert_eq!(split.dropped_users, 1);
        assert!(split.summary().contains("dropped=1"));
    }

    #[test]
    fn ten_users_of_length_five_give_ten_targets_each() {
        let mut rows = Vec::new();
        for u in 0..10 {
            for i in 0..5 {
                rows.push((format!("u{u}"), format!("i{i}"), i as i64));
            }
        }
        let log = InteractionLog {
            records: rows
                .iter()
                .map(|(u, i, ts)| Record {
                    user: u.clone(),
                    item: i.clone(),
                    ts: *ts,
                })
                .collect(),
        };
        let split = leave_last_out(&log);
        assert_eq!(split.users.len(), 10);
        let valid: Vec<_> = split.users.iter().map(|u| &u.valid_target).collect();
        let test: Vec<_> = split.users.iter().map(|u| &u.test_target).collect();
        assert_eq!(valid.len(), 10);
        assert_eq!(test.len(), 10);
        assert!(split.users.iter().all(|u| u.train_prefix.len() == 3));
    }

    #[test]
    fn split_positions_are_disjoint() {
        let log = log_from(&[
            ("u", "a", 1),
            ("u", "b", 2),
            ("u", "c", 3),
            ("u", "d", 4),
            ("u", "e", 5),
        ]);
        let split = leave_last_out(&log);
        let us = &split.users[0];
        // Train positions 0..3, valid position 3, test position 4: no item
        // instance shows up in two roles.
        let train_len = us.train_prefix.len();
        assert_eq!(train_len, 3);
        assert!(!us.train_prefix.contains(&us.valid_target));
        assert!(!us.train_prefix.contains(&us.test_target));
        assert_ne!(us.valid_target, us.test_target);
    }

    #[test]
    fn sliding_window_enumerates_prefixes() {
        let map = sid_map(&["a", "b", "c"]);
        let log = log_from(&[
            ("u", "a", 1),
            ("u", "b", 2),
            ("u", "c", 3),
            ("u", "x", 4),
            ("u", "y", 5),
        ]);
        let map = {
            let mut m = map;
            m.items
                .push(("x".into(), SemanticId::new(vec![3, 3], 4).unwrap()));
            m.items
                .push(("y".into(), SemanticId::new(vec![3, 2], 4).unwrap()));
            m
        };
        let split = leave_last_out(&log);
        let inst = sliding_window_expand(&split, &map, 50).unwrap();
        // Train prefix [a,b,c] -> ([a] -> b), ([a,b] -> c).
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].context, vec![map.get("a").unwrap().clone()]);
        assert_eq!(inst[0].target, map.get("b").unwrap().clone());
        assert_eq!(
            inst[1].context,
            vec![map.get("a").unwrap().clone(), map.get("b").unwrap().clone()]
        );
        assert_eq!(inst[1].target, map.get("c").unwrap().clone());
    }

    #[test]
    fn single_item_prefix_yields_nothing() {
        let map = sid_map(&["a", "b", "c"]);
        let log = log_from(&[("u", "a", 1), ("u", "b", 2), ("u", "c", 3)]);
        let split = leave_last_out(&log);
        assert_eq!(split.users[0].train_prefix.len(), 1);
        assert!(sliding_window_expand(&split, &map, 50).unwrap().is_empty());
        assert!(last_target_instances(&split, &map, 50).unwrap().is_empty());
    }

    #[test]
    fn contexts_truncate_to_most_recent_items() {
        let items: Vec<String> = (0..8).map(|i| format!("i{i}")).collect();
        let refs: Vec<&str> = items.iter().map(|s| s.as_str()).collect();
        let map = sid_map(&refs);
        let mut rows = Vec::new();
        for (i, it) in items.iter().enumerate() {
            rows.push(("u", it.as_str(), i as i64));
        }
        let rows: Vec<(&str, &str, i64)> = rows.iter().map(|&(u, i, t)| (u, i, t)).collect();
        let log = log_from(&rows);
        let split = leave_last_out(&log); // train prefix length 6
        let inst = sliding_window_expand(&split, &map, 3).unwrap();
        assert_eq!(inst.len(), 5);
        for (j, ti) in inst.iter().enumerate() {
            let p = j + 1; // target position in the prefix
            assert!(ti.context.len() <= 3);
            // Context equals the suffix of the true history.
            let start = p.saturating_sub(3);
            let expect: Vec<SemanticId> = (start..p)
                .map(|q| map.get(&format!("i{q}")).unwrap().clone())
                .collect();
            assert_eq!(ti.context, expect);
        }
    }

    #[test]
    fn untokenized_item_is_named_in_error() {
        let map = sid_map(&["a", "b"]);
        let log = log_from(&[
            ("u", "a", 1),
            ("u", "b", 2),
            ("u", "zz", 3),
            ("u", "a", 4),
            ("u", "b", 5),
        ]);
        let split = leave_last_out(&log);
        let err = sliding_window_expand(&split, &map, 10).unwrap_err();
        assert!(err.to_string().contains("zz"), "{err}");
    }

    #[test]
    fn eval_instances_use_the_right_contexts() {
        let map = sid_map(&["a", "b", "c", "d"]);
        let log = log_from(&[("u", "a", 1), ("u", "b", 2), ("u", "c", 3), ("u", "d", 4)]);
        let split = leave_last_out(&log);
        let valid = valid_instances(&split, &map, 50).unwrap();
        assert_eq!(valid.len(), 1);
        assert_eq!(valid[0].user, "u");
        assert_eq!(valid[0].context.len(), 2); // [a, b]
        assert_eq!(&valid[0].target, map.get("c").unwrap());
        let test = test_instances(&split, &map, 50).unwrap();
        assert_eq!(test[0].context.len(), 3); // [a, b, c]
        assert_eq!(&test[0].target, map.get("d").unwrap());
        // Truncation applies to eval contexts too.
        let test_short = test_instances(&split, &map, 2).unwrap();
        assert_eq!(test_short[0].context.len(), 2); // [b, c]
        assert_eq!(test_short[0].context[1], map.get("c").unwrap().clone());
    }

    #[test]
    fn augmentation_ratio_matches_exact_enumeration() {
        // Train-prefix lengths 3x6 + 7x5 give 3*5 + 7*4 = 43 sliding-window
        // instances against 10 one-per-user instances: a 4.3x expansion.
        let mut records = Vec::new();
        for u in 0..10 {
            let prefix_len = if u < 3 { 6 } else { 5 };
            for i in 0..(prefix_len + 2) {
                records.push(Record {
                    user: format!("u{u}"),
                    item: format!("i{i}"),
                    ts: i as i64,
                });
            }
        }
        let log = InteractionLog { records };
        let item_names: Vec<String> = (0..8).map(|i| format!("i{i}")).collect();
        let refs: Vec<&str> = item_names.iter().map(|s| s.as_str()).collect();
        let map = sid_map(&refs);
        let split = leave_last_out(&log);
        let expanded = sliding_window_expand(&split, &map, 50).unwrap();
        let single = last_target_instances(&split, &map, 50).unwrap();
        assert_eq!(single.len(), 10);
        assert_eq!(expanded.len(), 43);
        let expect: usize = split
            .users
            .iter()
            .map(|u| u.train_prefix.len().saturating_sub(1))
            .sum();
        assert_eq!(expanded.len(), expect);
        assert!((expanded.len() as f64 / single.len() as f64 - 4.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn instance_count_is_sum_of_prefix_lengths_minus_one(
            lens in proptest::collection::vec(3usize..12, 1..8),
            l_input in 1usize..6,
        ) {
            let mut records = Vec::new();
            for (u, &len) in lens.iter().enumerate() {
                for i in 0..len {
                    records.push(Record {
                        user: format!("u{u}"),
                        item: format!("i{}", i % 10),
                        ts: i as i64,
                    });
                }
            }
            let log = InteractionLog { records };
            let names: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let map = sid_map(&refs);
            let split = leave_last_out(&log);
            let inst = sliding_window_expand(&split, &map, l_input).unwrap();
            let expect: usize = lens.iter().map(|&l| l - 3).sum();
            prop_assert_eq!(inst.len(), expect);
            for ti in &inst {
                prop_assert!(!ti.context.is_empty());
                prop_assert!(ti.context.len() <= l_input);
            }
        }
    }
}
