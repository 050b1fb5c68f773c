//! Binary checkpoints of trained models.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"FSEDCKPT"                      magic, 8 bytes
//! u32                              format version (1)
//! u64 + bytes                      metadata length, UTF-8 JSON metadata
//! u32                              tensor count
//! per tensor:
//!   u32 + bytes                    name length, UTF-8 name
//!   u32                            rank
//!   u64 * rank                     shape
//!   f64 * prod(shape)              values, row-major
//! ```
//!
//! Parameter tensors use their parameter names (`encoder.embedding`,
//! `crf.transitions`, ...). Prototype memories are stored as
//! `memory.<branch>.<label index>` with shape `[count, width]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use protoed_core::corpus::{Paradigm, Schema};
use protoed_core::encoder::EncoderConfig;
use protoed_core::method::{CrfKind, MethodConfig};
use protoed_core::params::{ModelParams, Tensor};
use protoed_core::proto::SetAggregation;
use protoed_core::training::{BranchKind, BranchPlan, ClResolved, GroupSet, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FSEDCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanMeta {
    label: bool,
    linear: bool,
    prototype: Option<String>,
    union_label: bool,
    contrastive: Option<String>,
    emission: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderMeta {
    buckets: usize,
    dim: usize,
    hidden: usize,
    context: usize,
    window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    method: String,
    types: Vec<String>,
    label_texts: BTreeMap<String, String>,
    paradigm: String,
    max_span_len: usize,
    encoder: EncoderMeta,
    plan: PlanMeta,
}

fn branch_name(b: BranchKind) -> &'static str {
    match b {
        BranchKind::Label => "label",
        BranchKind::Linear => "linear",
        BranchKind::Prototype => "prototype",
        BranchKind::Contrastive => "contrastive",
        BranchKind::Crf => "crf",
    }
}

fn branch_from(s: &str) -> Option<BranchKind> {
    [BranchKind::Label, BranchKind::Linear, BranchKind::Prototype, BranchKind::Contrastive, BranchKind::Crf]
        .into_iter()
        .find(|&b| branch_name(b) == s)
}

fn paradigm_name(p: Paradigm) -> &'static str {
    match p {
        Paradigm::SequenceLabeling => "sequence",
        Paradigm::SpanClassification => "span",
    }
}

pub fn parse_paradigm(s: &str) -> Option<Paradigm> {
    match s {
        "sequence" => Some(Paradigm::SequenceLabeling),
        "span" => Some(Paradigm::SpanClassification),
        _ => None,
    }
}

fn plan_meta(p: &BranchPlan) -> PlanMeta {
    PlanMeta {
        label: p.label,
        linear: p.linear,
        prototype: p.prototype.map(|(a, _)| match a {
            SetAggregation::Feature => "feature".into(),
            SetAggregation::Score => "score".into(),
        }),
        union_label: p.prototype.is_some_and(|(_, u)| u),
        contrastive: p.contrastive.map(|c| match c {
            ClResolved::InBatch => "inbatch".into(),
            ClResolved::Moco => "moco".into(),
        }),
        emission: p.emission.map(|b| branch_name(b).into()),
    }
}

fn plan_from(m: &PlanMeta, crf: CrfKind) -> Option<BranchPlan> {
    let prototype = match m.prototype.as_deref() {
        None => None,
        Some("feature") => Some((SetAggregation::Feature, m.union_label)),
        Some("score") => Some((SetAggregation::Score, m.union_label)),
        Some(_) => return None,
    };
    let contrastive = match m.contrastive.as_deref() {
        None => None,
        Some("inbatch") => Some(ClResolved::InBatch),
        Some("moco") => Some(ClResolved::Moco),
        Some(_) => return None,
    };
    let emission = match m.emission.as_deref() {
        None => None,
        Some(s) => Some(branch_from(s)?),
    };
    Some(BranchPlan { label: m.label, linear: m.linear, prototype, contrastive, emission, crf })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn tensor(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.u32(name.len() as u32);
        self.bytes(name.as_bytes());
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u64(d as u64);
        }
        for &x in data {
            self.bytes(&x.to_le_bytes());
        }
    }
}

/// Serialize a model to bytes.
pub fn to_bytes(model: &TrainedModel) -> Vec<u8> {
    let c = model.params.encoder.config;
    let meta = Metadata {
        method: model.method.to_string(),
        types: model.schema.types().to_vec(),
        label_texts: model.schema.explicit_label_texts().clone(),
        paradigm: paradigm_name(model.paradigm).into(),
        max_span_len: model.max_span_len,
        encoder: EncoderMeta { buckets: c.buckets, dim: c.dim, hidden: c.hidden, context: c.context, window: c.window },
        plan: plan_meta(&model.plan),
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(meta.len() as u64);
    w.bytes(&meta);
    let tensors = model.params.named_tensors();
    let n_memory: usize = model.memory.iter().map(|(_, g)| g.len()).sum();
    w.u32((tensors.len() + n_memory) as u32);
    for (name, shape, data) in &tensors {
        w.tensor(name, shape, data);
    }
    for (branch, groups) in &model.memory {
        for (label, vectors) in groups.iter().enumerate() {
            let width = vectors.first().map_or(0, Vec::len);
            let flat: Vec<f64> = vectors.iter().flatten().copied().collect();
            w.tensor(&format!("memory.{}.{label}", branch_name(*branch)), &[vectors.len(), width], &flat);
        }
    }
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|_| "length overflows".to_string())
    }
    fn tensor(&mut self) -> std::result::Result<Tensor, String> {
        let n = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(n)?).map_err(|e| e.to_string())?.to_string();
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.len()).collect::<std::result::Result<Vec<_>, _>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflows")?;
        let raw = self.take(count.checked_mul(8).ok_or("shape overflows")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Tensor { name, shape, data })
    }
}

fn decode(buf: &[u8]) -> std::result::Result<TrainedModel, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let n = r.len()?;
    let meta: Metadata = serde_json::from_slice(r.take(n)?).map_err(|e| format!("metadata: {e}"))?;
    let method: MethodConfig = meta.method.parse().map_err(|e| format!("method: {e}"))?;
    let schema = Schema::new(meta.types.clone())
        .and_then(|s| s.with_label_texts(meta.label_texts.clone()))
        .map_err(|e| format!("schema: {e}"))?;
    let paradigm = parse_paradigm(&meta.paradigm).ok_or_else(|| format!("unknown paradigm `{}`", meta.paradigm))?;
    let plan = plan_from(&meta.plan, method.crf).ok_or("malformed branch plan")?;
    let e = &meta.encoder;
    let config = EncoderConfig { buckets: e.buckets, dim: e.dim, hidden: e.hidden, context: e.context, window: e.window };
    let count = r.u32()? as usize;
    let mut params = Vec::new();
    let mut memory: Vec<(BranchKind, GroupSet)> = Vec::new();
    for _ in 0..count {
        let t = r.tensor()?;
        let Some(rest) = t.name.strip_prefix("memory.") else {
            params.push(t);
            continue;
        };
        let (branch, label) = rest.rsplit_once('.').ok_or_else(|| format!("bad memory tensor `{}`", t.name))?;
        let branch = branch_from(branch).ok_or_else(|| format!("bad memory tensor `{}`", t.name))?;
        let label: usize = label.parse().map_err(|_| format!("bad memory tensor `{}`", t.name))?;
        if t.shape.len() != 2 {
            return Err(format!("memory tensor `{}` must have rank 2", t.name));
        }
        if memory.last().is_none_or(|(b, _)| *b != branch) {
            memory.push((branch, Vec::new()));
        }
        let groups = &mut memory.last_mut().expect("pushed").1;
        if label != groups.len() {
            return Err(format!("memory tensor `{}` out of order", t.name));
        }
        let width = t.shape[1];
        groups.push(if width == 0 { Vec::new() } else { t.data.chunks(width).map(<[f64]>::to_vec).collect() });
    }
    if r.pos != buf.len() {
        return Err("trailing bytes".into());
    }
    if memory.iter().any(|(_, g)| g.len() != schema.n_labels()) {
        return Err("memory does not cover every label".into());
    }
    let params = ModelParams::from_tensors(config, params).map_err(|e| e.to_string())?;
    Ok(TrainedModel { method, plan, params, schema, paradigm, max_span_len: meta.max_span_len, memory })
}

pub fn from_bytes(buf: &[u8], path: &Path) -> Result<TrainedModel> {
    decode(buf).map_err(|message| Error::Checkpoint { path: path.to_path_buf(), message })
}

pub fn save(path: &Path, model: &TrainedModel) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf, path)
}
