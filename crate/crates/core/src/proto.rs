//! Transfer functions, distance functions, prototype sets and
//! nearest-neighbour inference over plain vectors.
//!
//! Training builds the same quantities on the [`crate::tape::Tape`]; the
//! functions here serve inference and tests.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::Schema;
use crate::encoder;
use crate::error::{Error, Result};
use crate::math;
use crate::params::{ModelParams, ParamId};
use crate::tape::VAR_EPS;

/// Map from encoder space to distance space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferKind {
    Identity,
    Normalize,
    DownProject(usize),
    DownProjectNormalize(usize),
    Reparameterize,
}

impl TransferKind {
    pub fn abbrev(self) -> &'static str {
        match self {
            TransferKind::Identity => "I",
            TransferKind::Normalize => "N",
            TransferKind::DownProject(_) => "D",
            TransferKind::DownProjectNormalize(_) => "DN",
            TransferKind::Reparameterize => "R",
        }
    }

    /// Parse an abbreviation; `proj_dim` fills the projection width.
    pub fn from_abbrev(s: &str, proj_dim: usize) -> Result<Self> {
        Ok(match s {
            "I" => TransferKind::Identity,
            "N" => TransferKind::Normalize,
            "D" => TransferKind::DownProject(proj_dim),
            "DN" => TransferKind::DownProjectNormalize(proj_dim),
            "R" => TransferKind::Reparameterize,
            other => return Err(Error::Parse(alloc::format!("unknown transfer `{other}` (expected I, N, D, DN, R)"))),
        })
    }

    pub fn projection_dim(self) -> Option<usize> {
        match self {
            TransferKind::DownProject(n) | TransferKind::DownProjectNormalize(n) => Some(n),
            _ => None,
        }
    }

    pub fn is_gaussian(self) -> bool {
        self == TransferKind::Reparameterize
    }
}

/// Proximity measure in transfer space; smaller is closer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistanceKind {
    Cosine,
    ScaledCosine(f64),
    Euclidean,
    ScaledEuclidean(f64),
    GaussianDivergence,
}

pub const DEFAULT_TAU: f64 = 0.1;

impl DistanceKind {
    pub fn abbrev(self) -> &'static str {
        match self {
            DistanceKind::Cosine => "S",
            DistanceKind::ScaledCosine(_) => "SS",
            DistanceKind::Euclidean => "EU",
            DistanceKind::ScaledEuclidean(_) => "SEU",
            DistanceKind::GaussianDivergence => "KL",
        }
    }

    pub fn from_abbrev(s: &str, tau: f64) -> Result<Self> {
        let kind = match s {
            "S" => DistanceKind::Cosine,
            "SS" => DistanceKind::ScaledCosine(tau),
            "EU" => DistanceKind::Euclidean,
            "SEU" => DistanceKind::ScaledEuclidean(tau),
            "KL" => DistanceKind::GaussianDivergence,
            other => return Err(Error::Parse(alloc::format!("unknown distance `{other}` (expected S, SS, EU, SEU, KL)"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn tau(self) -> Option<f64> {
        match self {
            DistanceKind::ScaledCosine(t) | DistanceKind::ScaledEuclidean(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_scaled(self) -> bool {
        self.tau().is_some()
    }

    pub fn validate(self) -> Result<()> {
        match self.tau() {
            Some(t) if !(t > 0.0 && t.is_finite()) => Err(Error::InvalidConfig(alloc::format!("tau must be positive, got {t}"))),
            _ => Ok(()),
        }
    }
}

/// Diagonal Gaussian with strictly positive variances.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianRepr {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianRepr {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: var.len() });
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidConfig("Gaussian variances must be positive".into()));
        }
        Ok(GaussianRepr { mean, var })
    }

    /// `[mean; var]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.mean.clone();
        v.extend_from_slice(&self.var);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        let n = flat.len() / 2;
        GaussianRepr { mean: flat[..n].to_vec(), var: flat[n..].to_vec() }
    }
}

/// Output of a transfer function.
#[derive(Clone, Debug, PartialEq)]
pub enum Transferred {
    Point(Vec<f64>),
    Gaussian(GaussianRepr),
}

impl Transferred {
    /// Points as-is, Gaussians as `[mean; var]`.
    pub fn flat(&self) -> Vec<f64> {
        match self {
            Transferred::Point(v) => v.clone(),
            Transferred::Gaussian(g) => g.to_flat(),
        }
    }

    fn from_flat_like(flat: Vec<f64>, gaussian: bool) -> Self {
        if gaussian {
            Transferred::Gaussian(GaussianRepr::from_flat(&flat))
        } else {
            Transferred::Point(flat)
        }
    }
}

pub fn normalize(h: &[f64]) -> Result<Vec<f64>> {
    let n = math::norm(h);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(h.iter().map(|x| x / n).collect())
}

fn affine(params: &ModelParams, w: ParamId, b: Option<ParamId>, x: &[f64]) -> Result<Vec<f64>> {
    let wt = params.tensor(w)?;
    if wt.cols() != x.len() {
        return Err(Error::DimensionMismatch { expected: wt.cols(), got: x.len() });
    }
    let mut out: Vec<f64> = (0..wt.shape[0]).map(|r| math::dot(wt.row(r), x)).collect();
    if let Some(b) = b {
        for (o, bv) in out.iter_mut().zip(&params.tensor(b)?.data) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Apply a transfer function. Projection and Gaussian heads are read from
/// `params`.
pub fn transfer(h: &[f64], kind: TransferKind, params: &ModelParams) -> Result<Transferred> {
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("transfer input is not finite".into()));
    }
    Ok(match kind {
        TransferKind::Identity => Transferred::Point(h.to_vec()),
        TransferKind::Normalize => Transferred::Point(normalize(h)?),
        TransferKind::DownProject(_) => Transferred::Point(affine(params, ParamId::Projection, None, h)?),
        TransferKind::DownProjectNormalize(_) => {
            Transferred::Point(affine(params, ParamId::Projection, None, &normalize(h)?)?)
        }
        TransferKind::Reparameterize => {
            let mean = affine(params, ParamId::MeanHead, Some(ParamId::MeanBias), h)?;
            let raw = affine(params, ParamId::VarHead, Some(ParamId::VarBias), h)?;
            let var = raw.iter().map(|&x| math::softplus(x) + VAR_EPS).collect();
            Transferred::Gaussian(GaussianRepr { mean, var })
        }
    })
}

/// `½[KL(p‖q) + KL(q‖p)]` for diagonal Gaussians given as `[mean; var]`.
pub fn sym_kl_flat(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len() / 2;
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (p[n + i], q[n + i]);
        let d = p[i] - q[i];
        let d2 = d * d;
        s += (a + d2) / b + (b + d2) / a - 2.0;
    }
    0.25 * s
}

/// Gradients of [`sym_kl_flat`] with respect to both arguments.
pub fn sym_kl_flat_grad(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = p.len() / 2;
    let mut gp = vec![0.0; 2 * n];
    let mut gq = vec![0.0; 2 * n];
    for i in 0..n {
        let (a, b) = (p[n + i], q[n + i]);
        let d = p[i] - q[i];
        let d2 = d * d;
        let dm = 0.5 * d * (1.0 / a + 1.0 / b);
        gp[i] = dm;
        gq[i] = -dm;
        gp[n + i] = 0.25 * (1.0 / b - (b + d2) / (a * a));
        gq[n + i] = 0.25 * (1.0 / a - (a + d2) / (b * b));
    }
    (gp, gq)
}

pub fn sym_kl(p: &GaussianRepr, q: &GaussianRepr) -> Result<f64> {
    if p.mean.len() != q.mean.len() {
        return Err(Error::DimensionMismatch { expected: p.mean.len(), got: q.mean.len() });
    }
    Ok(sym_kl_flat(&p.to_flat(), &q.to_flat()))
}

/// Distance between two transferred vectors.
pub fn distance(u: &Transferred, v: &Transferred, kind: DistanceKind) -> Result<f64> {
    match (u, v, kind) {
        (Transferred::Gaussian(p), Transferred::Gaussian(q), DistanceKind::GaussianDivergence) => sym_kl(p, q),
        (Transferred::Point(a), Transferred::Point(b), k) if k != DistanceKind::GaussianDivergence => point_distance(a, b, k),
        _ => Err(Error::InvalidConfig("Gaussian divergence needs Gaussian inputs and vice versa".into())),
    }
}

/// Distance between plain vectors; `GaussianDivergence` reads `[mean; var]`.
pub fn point_distance(u: &[f64], v: &[f64], kind: DistanceKind) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    Ok(match kind {
        DistanceKind::Cosine => -math::dot(u, v),
        DistanceKind::ScaledCosine(t) => -math::dot(u, v) / t,
        DistanceKind::Euclidean => math::euclidean(u, v),
        DistanceKind::ScaledEuclidean(t) => math::euclidean(u, v) / t,
        DistanceKind::GaussianDivergence => sym_kl_flat(u, v),
    })
}

/// `-d(u, v)` on flat vectors, the logit contribution of one key.
pub fn neg_distance(u: &[f64], v: &[f64], kind: DistanceKind) -> f64 {
    match kind {
        DistanceKind::Cosine => math::dot(u, v),
        DistanceKind::ScaledCosine(t) => math::dot(u, v) / t,
        DistanceKind::Euclidean => -math::euclidean(u, v),
        DistanceKind::ScaledEuclidean(t) => -math::euclidean(u, v) / t,
        DistanceKind::GaussianDivergence => -sym_kl_flat(u, v),
    }
}

/// Add `s * d(-d(u, v))/du` into `gu` and the `v` counterpart into `gv`.
pub fn neg_distance_grad(u: &[f64], v: &[f64], kind: DistanceKind, s: f64, gu: &mut [f64], gv: &mut [f64]) {
    match kind {
        DistanceKind::Cosine | DistanceKind::ScaledCosine(_) => {
            let s = match kind {
                DistanceKind::ScaledCosine(t) => s / t,
                _ => s,
            };
            for i in 0..u.len() {
                gu[i] += s * v[i];
                gv[i] += s * u[i];
            }
        }
        DistanceKind::Euclidean | DistanceKind::ScaledEuclidean(_) => {
            let d = math::euclidean(u, v);
            if d == 0.0 {
                return;
            }
            let scale = match kind {
                DistanceKind::ScaledEuclidean(t) => -s / (t * d),
                _ => -s / d,
            };
            for i in 0..u.len() {
                let diff = u[i] - v[i];
                gu[i] += scale * diff;
                gv[i] -= scale * diff;
            }
        }
        DistanceKind::GaussianDivergence => {
            let (a, b) = sym_kl_flat_grad(u, v);
            for i in 0..u.len() {
                gu[i] -= s * a[i];
                gv[i] -= s * b[i];
            }
        }
    }
}

/// Where prototypes come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrototypeSource {
    Mentions,
    Label,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Mentions,
    Label,
    Null,
}

/// Feature-level keeps one mean vector per label; score-level keeps all.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetAggregation {
    Feature,
    Score,
}

/// Prototypes per label (schema order, N.A. last), in transfer space.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub aggregation: SetAggregation,
    pub entries: Vec<Vec<Transferred>>,
    pub provenance: Vec<Provenance>,
}

impl PrototypeSet {
    pub fn new(aggregation: SetAggregation, entries: Vec<Vec<Transferred>>, provenance: Vec<Provenance>) -> Result<Self> {
        if entries.len() != provenance.len() {
            return Err(Error::DimensionMismatch { expected: entries.len(), got: provenance.len() });
        }
        if aggregation == SetAggregation::Feature {
            if let Some(e) = entries.iter().find(|e| e.len() != 1) {
                return Err(Error::DimensionMismatch { expected: 1, got: e.len() });
            }
        }
        Ok(PrototypeSet { aggregation, entries, provenance })
    }

    pub fn n_labels(&self) -> usize {
        self.entries.len()
    }

    /// Feature-level view of the set: entry means in transfer space.
    pub fn to_feature(&self) -> Result<PrototypeSet> {
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| mean_transferred(e).map(|m| vec![m]).ok_or(Error::MissingPrototype(alloc::format!("#{i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(PrototypeSet { aggregation: SetAggregation::Feature, entries, provenance: self.provenance.clone() })
    }
}

fn mean_transferred(vs: &[Transferred]) -> Option<Transferred> {
    let first = vs.first()?;
    let gaussian = matches!(first, Transferred::Gaussian(_));
    let flats: Vec<Vec<f64>> = vs.iter().map(Transferred::flat).collect();
    let rows: Vec<&[f64]> = flats.iter().map(Vec::as_slice).collect();
    Some(Transferred::from_flat_like(math::mean_of(&rows), gaussian))
}

/// Build a prototype set from encoder-space support representations
/// (`type -> mention vectors`) and/or label-name embeddings.
///
/// The N.A. entry is the learnable null vector of the branch
/// (`NullLabel` for label-only sources, `NullMention` otherwise), passed
/// through the same transfer function.
pub fn build_prototypes(
    support: &BTreeMap<String, Vec<Vec<f64>>>,
    schema: &Schema,
    source: PrototypeSource,
    aggregation: SetAggregation,
    params: &ModelParams,
    kind: TransferKind,
) -> Result<PrototypeSet> {
    let mut entries = Vec::with_capacity(schema.n_labels());
    let mut provenance = Vec::with_capacity(schema.n_labels());
    for ty in schema.types() {
        let mut reps: Vec<Vec<f64>> = Vec::new();
        if matches!(source, PrototypeSource::Mentions | PrototypeSource::Both) {
            match support.get(ty) {
                Some(v) if !v.is_empty() => reps.extend(v.iter().cloned()),
                _ => return Err(Error::MissingPrototype(ty.clone())),
            }
        }
        if matches!(source, PrototypeSource::Label | PrototypeSource::Both) {
            reps.push(encoder::label_embed(&schema.label_text(ty), &params.encoder)?);
        }
        let transferred = reps.iter().map(|h| transfer(h, kind, params)).collect::<Result<Vec<_>>>()?;
        entries.push(match aggregation {
            SetAggregation::Score => transferred,
            SetAggregation::Feature => vec![mean_transferred(&transferred).expect("non-empty")],
        });
        provenance.push(match source {
            PrototypeSource::Label => Provenance::Label,
            _ => Provenance::Mentions,
        });
    }
    let null = if source == PrototypeSource::Label { ParamId::NullLabel } else { ParamId::NullMention };
    entries.push(vec![transfer(&params.tensor(null)?.data, kind, params)?]);
    provenance.push(Provenance::Null);
    PrototypeSet::new(aggregation, entries, provenance)
}

fn check_entries(protos: &PrototypeSet) -> Result<()> {
    if protos.entries.is_empty() {
        return Err(Error::Empty("prototype set"));
    }
    match protos.entries.iter().position(Vec::is_empty) {
        Some(i) => Err(Error::MissingPrototype(alloc::format!("#{i}"))),
        None => Ok(()),
    }
}

/// `logits[y] = -d(query, c̄_y)` for a feature-level set.
pub fn logits_feature(query: &Transferred, protos: &PrototypeSet, kind: DistanceKind) -> Result<Vec<f64>> {
    if protos.aggregation != SetAggregation::Feature {
        return Err(Error::InvalidConfig("logits_feature needs a feature-level prototype set".into()));
    }
    check_entries(protos)?;
    protos.entries.iter().map(|e| Ok(-distance(query, &e[0], kind)?)).collect()
}

/// `logits[y] = mean over c in C_y of -d(query, c)`.
pub fn logits_score(query: &Transferred, protos: &PrototypeSet, kind: DistanceKind) -> Result<Vec<f64>> {
    check_entries(protos)?;
    protos
        .entries
        .iter()
        .map(|e| {
            let mut s = 0.0;
            for c in e {
                s += -distance(query, c, kind)?;
            }
            Ok(s / e.len() as f64)
        })
        .collect()
}

/// Nearest prototype: label index and its distance. Ties go to the lower
/// label index, so schema order first and N.A. last.
pub fn predict_nn(query: &Transferred, protos: &PrototypeSet, kind: DistanceKind) -> Result<(usize, f64)> {
    check_entries(protos)?;
    let mut best = (0, f64::INFINITY);
    for (label, e) in protos.entries.iter().enumerate() {
        for c in e {
            let d = distance(query, c, kind)?;
            if d < best.1 {
                best = (label, d);
            }
        }
    }
    if best.1 == f64::INFINITY {
        // every distance was +inf or NaN; fall back to the first label
        return Ok((0, f64::INFINITY));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderParams};
    use crate::params::Tensor;

    fn p(v: &[f64]) -> Transferred {
        Transferred::Point(v.to_vec())
    }

    #[test]
    fn normalize_example() {
        assert_eq!(normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector));
    }

    #[test]
    fn distance_examples() {
        let e1 = p(&[1.0, 0.0]);
        assert!((distance(&e1, &e1, DistanceKind::ScaledCosine(0.2)).unwrap() + 5.0).abs() < 1e-12);
        assert_eq!(distance(&e1, &e1, DistanceKind::Euclidean).unwrap(), 0.0);
        assert_eq!(distance(&p(&[0.0, 0.0]), &p(&[3.0, 4.0]), DistanceKind::Euclidean).unwrap(), 5.0);
        assert!(distance(&p(&[0.0]), &p(&[0.0, 1.0]), DistanceKind::Euclidean).is_err());
        let g = Transferred::Gaussian(GaussianRepr::new(vec![0.3, -1.0], vec![0.5, 2.0]).unwrap());
        assert_eq!(distance(&g, &g, DistanceKind::GaussianDivergence).unwrap(), 0.0);
        assert!(distance(&g, &e1, DistanceKind::GaussianDivergence).is_err());
        assert!(distance(&e1, &e1, DistanceKind::GaussianDivergence).is_err());
    }

    #[test]
    fn sym_kl_matches_two_directed_kls() {
        let (pm, pv, qm, qv) = ([0.2, -1.0], [0.5, 1.5], [1.0, 0.0], [2.0, 0.25]);
        let kl = |m1: &[f64], v1: &[f64], m2: &[f64], v2: &[f64]| -> f64 {
            (0..2).map(|i| 0.5 * (math::ln(v2[i] / v1[i]) + (v1[i] + (m1[i] - m2[i]).powi(2)) / v2[i] - 1.0)).sum()
        };
        let expected = 0.5 * (kl(&pm, &pv, &qm, &qv) + kl(&qm, &qv, &pm, &pv));
        let p = GaussianRepr::new(pm.to_vec(), pv.to_vec()).unwrap();
        let q = GaussianRepr::new(qm.to_vec(), qv.to_vec()).unwrap();
        assert!((sym_kl(&p, &q).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sym_kl_gradient_matches_differences() {
        let a = [0.2, -1.0, 0.5, 1.5];
        let b = [1.0, 0.0, 2.0, 0.25];
        let (ga, gb) = sym_kl_flat_grad(&a, &b);
        let h = 1e-6;
        for i in 0..4 {
            let mut ap = a;
            let mut am = a;
            ap[i] += h;
            am[i] -= h;
            let fd = (sym_kl_flat(&ap, &b) - sym_kl_flat(&am, &b)) / (2.0 * h);
            assert!((fd - ga[i]).abs() < 1e-6, "a[{i}]");
            let mut bp = b;
            let mut bm = b;
            bp[i] += h;
            bm[i] -= h;
            let fd = (sym_kl_flat(&a, &bp) - sym_kl_flat(&a, &bm)) / (2.0 * h);
            assert!((fd - gb[i]).abs() < 1e-6, "b[{i}]");
        }
    }

    fn set(agg: SetAggregation, entries: Vec<Vec<Transferred>>) -> PrototypeSet {
        let n = entries.len();
        PrototypeSet::new(agg, entries, vec![Provenance::Mentions; n]).unwrap()
    }

    #[test]
    fn logits_and_prediction() {
        let protos = set(SetAggregation::Feature, vec![vec![p(&[1.0, 1.0])], vec![p(&[-1.0, 1.0])], vec![p(&[0.0, 0.0])]]);
        let q = p(&[1.0, 1.0]);
        let l = logits_feature(&q, &protos, DistanceKind::Euclidean).unwrap();
        assert_eq!(l[0], 0.0);
        assert!(l[1] <= 0.0 && l[2] <= 0.0);
        assert_eq!(predict_nn(&q, &protos, DistanceKind::Euclidean).unwrap().0, 0);
        // equidistant from both type prototypes: earliest wins
        let mid = p(&[0.0, 5.0]);
        let l = logits_feature(&mid, &protos, DistanceKind::Euclidean).unwrap();
        assert_eq!(l[0], l[1]);
        assert_eq!(predict_nn(&mid, &protos, DistanceKind::Euclidean).unwrap().0, 0);
    }

    #[test]
    fn singleton_score_equals_feature() {
        let entries = vec![vec![p(&[0.3, -0.1])], vec![p(&[2.0, 0.5])]];
        let f = set(SetAggregation::Feature, entries.clone());
        let s = set(SetAggregation::Score, entries);
        let q = p(&[0.7, 0.2]);
        for kind in [DistanceKind::Cosine, DistanceKind::ScaledEuclidean(0.3)] {
            assert_eq!(logits_score(&q, &s, kind).unwrap(), logits_feature(&q, &f, kind).unwrap());
        }
        assert!(logits_feature(&q, &set(SetAggregation::Score, vec![vec![q.clone(), q.clone()]]), DistanceKind::Cosine).is_err());
    }

    #[test]
    fn duplicated_score_entries_equal_single() {
        let u = p(&[0.25, 0.5]);
        let q = p(&[1.0, -2.0]);
        let a = logits_score(&q, &set(SetAggregation::Score, vec![vec![u.clone(), u.clone()]]), DistanceKind::Euclidean).unwrap();
        let b = logits_score(&q, &set(SetAggregation::Score, vec![vec![u]]), DistanceKind::Euclidean).unwrap();
        assert_eq!(a, b);
    }

    fn small_model() -> ModelParams {
        let enc = EncoderParams::init(EncoderConfig::with_dims(64, 4, 6), 3).unwrap();
        let mut m = ModelParams::new(enc);
        m.insert(ParamId::NullMention, Tensor::uniform(ParamId::NullMention.name(), &[4], 0.1, 3));
        m.insert(ParamId::NullLabel, Tensor::uniform(ParamId::NullLabel.name(), &[4], 0.1, 3));
        m
    }

    #[test]
    fn build_prototypes_feature_mean() {
        let schema = Schema::new(["y"]).unwrap();
        let params = small_model();
        let mut support = BTreeMap::new();
        support.insert("y".into(), vec![vec![0.0, 0.0, 0.0, 0.0], vec![2.0, 2.0, 2.0, 2.0]]);
        let set = build_prototypes(&support, &schema, PrototypeSource::Mentions, SetAggregation::Feature, &params, TransferKind::Identity).unwrap();
        assert_eq!(set.entries[0], vec![p(&[1.0; 4])]);
        assert_eq!(set.provenance, vec![Provenance::Mentions, Provenance::Null]);
        let empty = BTreeMap::new();
        assert_eq!(
            build_prototypes(&empty, &schema, PrototypeSource::Mentions, SetAggregation::Feature, &params, TransferKind::Identity),
            Err(Error::MissingPrototype("y".into()))
        );
        let label = build_prototypes(&empty, &schema, PrototypeSource::Label, SetAggregation::Feature, &params, TransferKind::Identity).unwrap();
        let expected = encoder::label_embed(&schema.label_text("y"), &params.encoder).unwrap();
        assert_eq!(label.entries[0], vec![Transferred::Point(expected)]);
    }

    #[test]
    fn transfer_kinds() {
        let mut params = small_model();
        params.insert(ParamId::Projection, Tensor::from_data(ParamId::Projection.name(), &[1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let h = [3.0, 4.0, 0.0, 0.0];
        assert_eq!(transfer(&h, TransferKind::DownProject(1), &params).unwrap(), p(&[3.0]));
        assert_eq!(transfer(&h, TransferKind::DownProjectNormalize(1), &params).unwrap(), p(&[0.6]));
        assert_eq!(transfer(&[0.0; 4], TransferKind::Normalize, &params), Err(Error::ZeroVector));
        for (id, shape) in [(ParamId::MeanHead, [2, 4]), (ParamId::VarHead, [2, 4])] {
            params.insert(id, Tensor::uniform(id.name(), &shape, 0.5, 1));
        }
        params.insert(ParamId::MeanBias, Tensor::zeros(ParamId::MeanBias.name(), &[2]));
        params.insert(ParamId::VarBias, Tensor::zeros(ParamId::VarBias.name(), &[2]));
        match transfer(&h, TransferKind::Reparameterize, &params).unwrap() {
            Transferred::Gaussian(g) => assert!(g.var.iter().all(|&v| v > 0.0)),
            _ => panic!("expected a Gaussian"),
        }
    }

    #[test]
    fn abbreviations_round_trip() {
        for s in ["I", "N", "D", "DN", "R"] {
            assert_eq!(TransferKind::from_abbrev(s, 8).unwrap().abbrev(), s);
        }
        for s in ["S", "SS", "EU", "SEU", "KL"] {
            assert_eq!(DistanceKind::from_abbrev(s, 0.5).unwrap().abbrev(), s);
        }
        assert!(DistanceKind::from_abbrev("SS", 0.0).is_err());
        assert!(TransferKind::from_abbrev("X", 1).is_err());
    }
}
