//! On-disk artifact formats. All binary values are little-endian; floats are
//! stored as f32. Writes go through a temp file plus rename so readers never
//! observe a partial artifact, and identical inputs produce identical bytes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::dataset::{InteractionLog, ItemEmbeddingTable};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::network::{ModelConfig, ModelParams};
use crate::tokenizer::{CodebookSet, RqCodebooks, SemanticId, SidMap};

const EMBEDDING_MAGIC: &[u8; 4] = b"SIDE";
const CODEBOOK_MAGIC: &[u8; 4] = b"SIDC";
const RESIDUAL_MAGIC: &[u8; 4] = b"SIDR";
const CHECKPOINT_MAGIC: &[u8; 4] = b"SIDM";

/// Writes bytes via a sibling temp file and an atomic rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = tmp
        .file_name()
        .map(|n| n.to_os_string())
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    name.push(".tmp");
    tmp.set_file_name(name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Sequential reader with offset-aware error messages.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            path,
        }
    }

    fn fail(&self, what: &str) -> Error {
        Error::Data(format!(
            "{}: {what} at byte {}",
            self.path.display(),
            self.pos
        ))
    }

    pub fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(self.fail("unexpected end of file"));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4], kind: &str) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Data(format!(
                "{}: not a {kind} file (bad magic)",
                self.path.display()
            )));
        }
        Ok(())
    }

    pub fn u32_le(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32_mat(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        let b = self.take(rows * cols * 4)?;
        let data = b
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Ok(Mat::from_vec(rows, cols, data))
    }

    pub fn f64_slice(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(count * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }

    pub fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Data(format!(
                "{}: {} trailing bytes after expected end",
                self.path.display(),
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn push_f32_mat(out: &mut Vec<u8>, m: &Mat) {
    for &v in &m.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains('\n') || id.contains('\t') || id.contains('\r') {
        return Err(Error::Data(format!(
            "item id {id:?} is empty or contains tab/newline"
        )));
    }
    Ok(())
}

/// Embedding file: magic "SIDE", u32 count, u32 dim, count*dim f32 rows,
/// then one UTF-8 id per line.
pub fn write_embeddings(path: &Path, table: &ItemEmbeddingTable) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(table.d() as u32).to_le_bytes());
    push_f32_mat(&mut out, &table.vectors);
    for id in &table.ids {
        check_id(id)?;
        out.extend_from_slice(id.as_bytes());
        out.push(b'\n');
    }
    atomic_write(path, &out)
}

pub fn read_embeddings(path: &Path) -> Result<ItemEmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(EMBEDDING_MAGIC, "embedding")?;
    let count = r.u32_le()? as usize;
    let dim = r.u32_le()? as usize;
    let vectors = r.f32_mat(count, dim)?;
    let tail = std::str::from_utf8(r.rest())
        .map_err(|_| Error::Data(format!("{}: ids are not UTF-8", path.display())))?;
    let ids: Vec<String> = tail.lines().map(str::to_string).collect();
    if ids.len() != count {
        return Err(Error::Data(format!(
            "{}: expected {count} ids, found {}",
            path.display(),
            ids.len()
        )));
    }
    ItemEmbeddingTable::new(ids, vectors)
}

/// Codebook file: magic "SIDC", u32 n, u32 M, u32 d, f32 rotation (d*d),
/// then n codebooks of M*(d/n) f32 values.
pub fn write_codebooks(path: &Path, cbs: &CodebookSet) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&(cbs.n as u32).to_le_bytes());
    out.extend_from_slice(&(cbs.m as u32).to_le_bytes());
    out.extend_from_slice(&(cbs.d as u32).to_le_bytes());
    push_f32_mat(&mut out, &cbs.rotation);
    for cb in &cbs.codebooks {
        push_f32_mat(&mut out, cb);
    }
    atomic_write(path, &out)
}

pub fn read_codebooks(path: &Path) -> Result<CodebookSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(CODEBOOK_MAGIC, "codebook")?;
    let n = r.u32_le()? as usize;
    let m = r.u32_le()? as usize;
    let d = r.u32_le()? as usize;
    if n == 0 || d == 0 || !d.is_multiple_of(n) {
        return Err(Error::Data(format!(
            "{}: invalid shape n={n} d={d}",
            path.display()
        )));
    }
    let rotation = r.f32_mat(d, d)?;
    let mut codebooks = Vec::with_capacity(n);
    for _ in 0..n {
        codebooks.push(r.f32_mat(m, d / n)?);
    }
    r.done()?;
    Ok(CodebookSet {
        rotation,
        codebooks,
        n,
        m,
        d,
    })
}

/// Residual codebook file: magic "SIDR", u32 n, u32 M, u32 d, n levels of
/// M*d f32 values, then n f64 residual norms.
pub fn write_rq_codebooks(path: &Path, cbs: &RqCodebooks) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(RESIDUAL_MAGIC);
    out.extend_from_slice(&(cbs.n as u32).to_le_bytes());
    out.extend_from_slice(&(cbs.m as u32).to_le_bytes());
    out.extend_from_slice(&(cbs.d as u32).to_le_bytes());
    for level in &cbs.levels {
        push_f32_mat(&mut out, level);
    }
    for &v in &cbs.residual_sq_per_level {
        out.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &out)
}

pub fn read_rq_codebooks(path: &Path) -> Result<RqCodebooks> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(RESIDUAL_MAGIC, "residual codebook")?;
    let n = r.u32_le()? as usize;
    let m = r.u32_le()? as usize;
    let d = r.u32_le()? as usize;
    if n == 0 || d == 0 {
        return Err(Error::Data(format!(
            "{}: invalid shape n={n} d={d}",
            path.display()
        )));
    }
    let mut levels = Vec::with_capacity(n);
    for _ in 0..n {
        levels.push(r.f32_mat(m, d)?);
    }
    let residual_sq_per_level = r.f64_slice(n)?;
    r.done()?;
    Ok(RqCodebooks {
        levels,
        residual_sq_per_level,
        n,
        m,
        d,
    })
}

/// SID map: TSV lines `item_id\td0,d1,...`.
pub fn write_sid_map(path: &Path, map: &SidMap) -> Result<()> {
    let mut out = String::new();
    for (id, sid) in &map.items {
        check_id(id)?;
        out.push_str(id);
        out.push('\t');
        out.push_str(&sid.to_string());
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Interaction log TSV: `user\titem\ttimestamp` per line, in record order.
pub fn write_log_tsv(path: &Path, log: &InteractionLog) -> Result<()> {
    let mut out = String::new();
    for rec in &log.records {
        check_id(&rec.user)?;
        check_id(&rec.item)?;
        out.push_str(&format!("{}\t{}\t{}\n", rec.user, rec.item, rec.ts));
    }
    atomic_write(path, out.as_bytes())
}

/// Interaction log as JSON lines; ids need no escaping checks because the
/// serializer handles them.
pub fn write_log_jsonl(path: &Path, log: &InteractionLog) -> Result<()> {
    let mut out = String::new();
    for rec in &log.records {
        let line = serde_json::json!({"user": rec.user, "item": rec.item, "ts": rec.ts});
        out.push_str(&line.to_string());
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Checkpoint file: magic "SIDM", u32 length plus UTF-8 key=value config
/// block, u32 tensor count, then per tensor: u32 name length, name bytes,
/// u32 rank, rank u32 dims, f32 data. Tensors appear in visitor order so
/// identical params always serialize to identical bytes.
pub fn write_checkpoint(path: &Path, config_text: &str, params: &ModelParams) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let cfg = config_text.as_bytes();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg);
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t, _) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        push_f32_mat(&mut out, t);
    }
    atomic_write(path, &out)
}

/// Reads only the embedded config block of a checkpoint, so the caller can
/// derive the model shape before loading tensors.
pub fn read_checkpoint_config(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(CHECKPOINT_MAGIC, "checkpoint")?;
    let len = r.u32_le()? as usize;
    let cfg = r.take(len)?;
    String::from_utf8(cfg.to_vec())
        .map_err(|_| Error::Data(format!("{}: config block is not UTF-8", path.display())))
}

/// Reads a checkpoint into parameters shaped by `config`. Every model tensor
/// must appear exactly once with a matching shape; extras are rejected.
pub fn read_checkpoint(path: &Path, config: &ModelConfig) -> Result<(String, ModelParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(CHECKPOINT_MAGIC, "checkpoint")?;
    let cfg_len = r.u32_le()? as usize;
    let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|_| Error::Data(format!("{}: config block is not UTF-8", path.display())))?;
    let count = r.u32_le()? as usize;
    let mut found: HashMap<String, Mat> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32_le()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Data(format!("{}: tensor name is not UTF-8", path.display())))?;
        let rank = r.u32_le()? as usize;
        if rank != 2 {
            return Err(Error::Data(format!(
                "{}: tensor {name} has rank {rank}, expected 2",
                path.display()
            )));
        }
        let rows = r.u32_le()? as usize;
        let cols = r.u32_le()? as usize;
        let data = r.f32_mat(rows, cols)?;
        if found.insert(name.clone(), data).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate tensor {name}",
                path.display()
            )));
        }
    }
    r.done()?;
    let mut params = ModelParams::zeros(config);
    for (name, tensor, _) in params.tensors_mut() {
        let src = found
            .remove(&name)
            .ok_or_else(|| Error::Data(format!("{}: missing tensor {name}", path.display())))?;
        if src.rows != tensor.rows || src.cols != tensor.cols {
            return Err(Error::Data(format!(
                "{}: tensor {name} is {}x{}, model expects {}x{}",
                path.display(),
                src.rows,
                src.cols,
                tensor.rows,
                tensor.cols
            )));
        }
        *tensor = src;
    }
    if let Some(name) = found.into_keys().next() {
        return Err(Error::Data(format!(
            "{}: unknown tensor {name}",
            path.display()
        )));
    }
    Ok((config_text, params))
}

/// Reads a SID map, validating digits against codebook size `m` and
/// requiring a consistent digit count across items.
pub fn read_sid_map(path: &Path, m: usize) -> Result<SidMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut n: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let problem = |msg: String| -> Error {
            Error::Data(format!("{}: line {}: {msg}", path.display(), idx + 1))
        };
        let (id, digits) = line
            .split_once('\t')
            .ok_or_else(|| problem("expected item_id\\tdigits".into()))?;
        let sid = SemanticId::parse(digits, m).map_err(|e| problem(e.to_string()))?;
        match n {
            None => n = Some(sid.len()),
            Some(expect) if expect != sid.len() => {
                return Err(problem(format!(
                    "expected {expect} digits, found {}",
                    sid.len()
                )))
            }
            _ => {}
        }
        items.push((id.to_string(), sid));
    }
    Ok(SidMap { items })
}
