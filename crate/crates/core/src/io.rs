//! On-disk formats.
//!
//! Binary files are a little-endian `u64` header length, a JSON header, then
//! the float64 blocks listed in the header, row-major and little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::networks::{Arch, Layer, Network};
use crate::problem::{Dataset, LinearInverseProblem};
use crate::{Scalar, SmoothThreshold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Value,
    blocks: Vec<BlockShape>,
}

fn write_container(path: &Path, kind: &str, meta: Value, blocks: &[(String, Array2<f64>)]) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        meta,
        blocks: blocks
            .iter()
            .map(|(name, b)| BlockShape {
                name: name.clone(),
                rows: b.nrows(),
                cols: b.ncols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + blocks.iter().map(|(_, b)| 8 * b.len()).sum::<usize>());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, b) in blocks {
        for v in b.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

fn read_container(path: &Path, kind: &str) -> Result<(Value, Vec<(String, Array2<f64>)>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Format("file shorter than its length prefix".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::Format(format!("header length {hlen} runs past end of file")))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.kind != kind {
        return Err(Error::Format(format!("expected a {kind} file, found {}", header.kind)));
    }
    let mut off = 8 + hlen;
    let mut out = Vec::with_capacity(header.blocks.len());
    for b in header.blocks {
        let len = b.rows * b.cols;
        let raw = bytes
            .get(off..off + 8 * len)
            .ok_or_else(|| Error::Format(format!("block {} truncated", b.name)))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += 8 * len;
        let arr = Array2::from_shape_vec((b.rows, b.cols), data).map_err(|e| Error::Format(e.to_string()))?;
        out.push((b.name, arr));
    }
    if off != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok((header.meta, out))
}

fn to_f64<S: Scalar>(a: &Array2<S>) -> Array2<f64> {
    a.mapv(|v| v.as_f64())
}

fn from_f64<S: Scalar>(a: Array2<f64>) -> Array2<S> {
    a.mapv(S::of)
}

fn take(blocks: &mut Vec<(String, Array2<f64>)>, name: &str) -> Result<Array2<f64>> {
    let pos = blocks
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Format(format!("missing block {name}")))?;
    Ok(blocks.remove(pos).1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub k: usize,
    pub snr_db: f64,
    pub frob_target: f64,
    pub seed: u64,
    pub sample_seed: u64,
}

pub fn save_dataset<S: Scalar>(path: &Path, problem: &LinearInverseProblem<S>, data: &Dataset<S>, sample_seed: u64) -> Result<()> {
    let meta = DatasetMeta {
        n: problem.n(),
        m: problem.m(),
        t: data.len(),
        k: problem.k,
        snr_db: problem.snr_db,
        frob_target: problem.frob_target,
        seed: problem.seed,
        sample_seed,
    };
    let blocks = vec![
        ("A".to_string(), to_f64(&problem.a)),
        ("Y".to_string(), to_f64(&data.y)),
        ("X".to_string(), to_f64(&data.x)),
    ];
    write_container(path, "dataset", serde_json::to_value(meta)?, &blocks)
}

pub fn load_dataset<S: Scalar>(path: &Path) -> Result<(DatasetMeta, LinearInverseProblem<S>, Dataset<S>)> {
    let (meta, mut blocks) = read_container(path, "dataset")?;
    let meta: DatasetMeta = serde_json::from_value(meta)?;
    let a = take(&mut blocks, "A")?;
    let y = take(&mut blocks, "Y")?;
    let x = take(&mut blocks, "X")?;
    if a.dim() != (meta.n, meta.m) || y.dim() != (meta.n, meta.t) || x.dim() != (meta.m, meta.t) {
        return Err(Error::Format("block shapes disagree with header dims".into()));
    }
    let problem = LinearInverseProblem {
        a: from_f64(a),
        k: meta.k,
        snr_db: meta.snr_db,
        frob_target: meta.frob_target,
        seed: meta.seed,
    };
    let data = Dataset::new(from_f64(y), from_f64(x))?;
    Ok((meta, problem, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Arch,
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    pub n: usize,
    pub lambda: f64,
    pub seed: u64,
}

pub fn save_checkpoint<S: Scalar>(path: &Path, net: &Network<S>, seed: u64) -> Result<()> {
    let meta = CheckpointMeta {
        arch: net.arch,
        depth: net.depth(),
        m: net.m,
        n: net.n,
        lambda: net.act.lambda().as_f64(),
        seed,
    };
    let mut blocks = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        if let Some(w) = &layer.w1 {
            blocks.push((format!("W1.{}", l + 1), to_f64(w)));
        }
        if let Some(w) = &layer.w2 {
            blocks.push((format!("W2.{}", l + 1), to_f64(w)));
        }
    }
    write_container(path, "checkpoint", serde_json::to_value(meta)?, &blocks)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(CheckpointMeta, Network<S>)> {
    let (meta, mut blocks) = read_container(path, "checkpoint")?;
    let meta: CheckpointMeta = serde_json::from_value(meta)?;
    let act = SmoothThreshold::new(S::of(meta.lambda))?;
    let mut net = Network::zeros(meta.arch, meta.depth, meta.m, meta.n, act)?;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let fill = |slot: &mut Option<Array2<S>>, name: String, blocks: &mut Vec<(String, Array2<f64>)>| -> Result<()> {
            if let Some(w) = slot {
                let b = take(blocks, &name)?;
                if b.dim() != w.dim() {
                    return Err(Error::Format(format!("block {name} has shape {:?}, expected {:?}", b.dim(), w.dim())));
                }
                *w = from_f64(b);
            }
            Ok(())
        };
        let Layer { w1, w2 } = layer;
        fill(w1, format!("W1.{}", l + 1), &mut blocks)?;
        fill(w2, format!("W2.{}", l + 1), &mut blocks)?;
    }
    if let Some((name, _)) = blocks.first() {
        return Err(Error::Format(format!("unexpected block {name}")));
    }
    Ok((meta, net))
}

/// Minimum-eigenvalue summary of one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub arch: Arch,
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub ub_value: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Serialises `rows` with the `csv` writer; headers come from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated columns with a `#` header line, one blank line
/// between `blocks` so gnuplot treats them as separate data sets.
pub fn write_dat(path: &Path, columns: &[&str], blocks: &[(String, Vec<Vec<f64>>)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut s = format!("# {}\n", columns.join(" "));
    for (i, (label, rows)) in blocks.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        s.push_str(&format!("# {label}\n"));
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.10e}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
    }
    fs::write(path, s)?;
    Ok(())
}
