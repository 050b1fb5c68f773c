//! Desk-scale token encoder.
//!
//! Tokens are hashed into embedding buckets; each position mixes the
//! embeddings of its `±context` neighbours with learned per-offset weights
//! (averaged over the offsets that exist), and a two-layer tanh perceptron
//! maps the mix to the output representation. A token's vector therefore
//! depends only on the tokens within `context` positions of it.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::params::{ParamId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Embedding hash buckets.
    pub buckets: usize,
    /// Output width `m`.
    pub dim: usize,
    /// Hidden width of the perceptron.
    pub hidden: usize,
    /// Neighbours mixed on each side.
    pub context: usize,
    /// Crop length used by [`window`].
    pub window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { buckets: 4096, dim: 64, hidden: 128, context: 2, window: 128 }
    }
}

impl EncoderConfig {
    pub fn with_dims(buckets: usize, dim: usize, hidden: usize) -> Self {
        EncoderConfig { buckets, dim, hidden, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 || self.dim == 0 || self.hidden == 0 || self.window == 0 {
            return Err(Error::InvalidConfig("encoder sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn n_offsets(&self) -> usize {
        2 * self.context + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// `[buckets, dim]`
    pub embedding: Tensor,
    /// `[2 * context + 1]`, offset `-context` first.
    pub position: Tensor,
    /// `[hidden, dim]`
    pub hidden: Tensor,
    pub hidden_bias: Tensor,
    /// `[dim, hidden]`
    pub output: Tensor,
    pub output_bias: Tensor,
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let EncoderConfig { buckets, dim, hidden, .. } = config;
        Ok(EncoderParams {
            config,
            embedding: Tensor::zeros(ParamId::Embedding.name(), &[buckets, dim]),
            position: Tensor::zeros(ParamId::Position.name(), &[config.n_offsets()]),
            hidden: Tensor::zeros(ParamId::Hidden.name(), &[hidden, dim]),
            hidden_bias: Tensor::zeros(ParamId::HiddenBias.name(), &[hidden]),
            output: Tensor::zeros(ParamId::Output.name(), &[dim, hidden]),
            output_bias: Tensor::zeros(ParamId::OutputBias.name(), &[dim]),
        })
    }

    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut p = EncoderParams::zeros(config)?;
        let EncoderConfig { buckets, dim, hidden, context, .. } = config;
        p.embedding = Tensor::uniform(ParamId::Embedding.name(), &[buckets, dim], 1.0, seed);
        for (i, w) in p.position.data.iter_mut().enumerate() {
            let offset = i.abs_diff(context);
            *w = if offset == 0 { 2.5 } else { 1.0 / offset as f64 };
        }
        p.hidden = Tensor::xavier(ParamId::Hidden.name(), hidden, dim, seed);
        p.output = Tensor::xavier(ParamId::Output.name(), dim, hidden, seed);
        Ok(p)
    }

    pub fn zeros_like(&self) -> EncoderParams {
        EncoderParams {
            config: self.config,
            embedding: self.embedding.zeros_like(),
            position: self.position.zeros_like(),
            hidden: self.hidden.zeros_like(),
            hidden_bias: self.hidden_bias.zeros_like(),
            output: self.output.zeros_like(),
            output_bias: self.output_bias.zeros_like(),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [&self.embedding, &self.position, &self.hidden, &self.hidden_bias, &self.output, &self.output_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.embedding,
            &mut self.position,
            &mut self.hidden,
            &mut self.hidden_bias,
            &mut self.output,
            &mut self.output_bias,
        ]
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Case-insensitive FNV-1a bucket of a token.
pub fn bucket(token: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for c in token.chars().flat_map(char::to_lowercase) {
        let mut buf = [0u8; 4];
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    (h % buckets as u64) as usize
}

pub fn bucket_ids<S: AsRef<str>>(tokens: &[S], config: &EncoderConfig) -> Vec<usize> {
    tokens.iter().map(|t| bucket(t.as_ref(), config.buckets)).collect()
}

/// Per-position activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    ids: Vec<usize>,
    /// `[n, dim]` context mixes.
    mixed: Vec<f64>,
    /// `[n, hidden]` tanh activations.
    activated: Vec<f64>,
}

impl EncoderCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Offsets `(slot, position)` contributing to position `i`.
fn neighbours(i: usize, n: usize, context: usize) -> impl Iterator<Item = (usize, usize)> {
    let lo = i.saturating_sub(context);
    let hi = (i + context).min(n - 1);
    (lo..=hi).map(move |j| (j + context - i, j))
}

/// Forward pass over bucket ids; returns the `[n, dim]` output and cache.
pub fn forward(ids: &[usize], params: &EncoderParams) -> (Vec<f64>, EncoderCache) {
    let EncoderConfig { dim, hidden, context, .. } = params.config;
    let n = ids.len();
    let mut mixed = vec![0.0; n * dim];
    let mut activated = vec![0.0; n * hidden];
    let mut out = vec![0.0; n * dim];
    for i in 0..n {
        let c = &mut mixed[i * dim..(i + 1) * dim];
        let count = neighbours(i, n, context).count() as f64;
        for (slot, j) in neighbours(i, n, context) {
            let w = params.position.data[slot] / count;
            for (ci, e) in c.iter_mut().zip(params.embedding.row(ids[j])) {
                *ci += w * e;
            }
        }
        let a = &mut activated[i * hidden..(i + 1) * hidden];
        for (r, ar) in a.iter_mut().enumerate() {
            *ar = math::tanh(params.hidden_bias.data[r] + math::dot(params.hidden.row(r), c));
        }
        let o = &mut out[i * dim..(i + 1) * dim];
        for (r, or) in o.iter_mut().enumerate() {
            *or = params.output_bias.data[r] + math::dot(params.output.row(r), a);
        }
    }
    (out, EncoderCache { ids: ids.to_vec(), mixed, activated })
}

/// Accumulate parameter gradients for upstream gradient `d_out` (`[n, dim]`).
pub fn backward(cache: &EncoderCache, d_out: &[f64], params: &EncoderParams, grads: &mut EncoderParams) {
    let EncoderConfig { dim, hidden, context, .. } = params.config;
    let n = cache.ids.len();
    let mut d_act = vec![0.0; hidden];
    let mut d_mixed = vec![0.0; dim];
    for i in 0..n {
        let dy = &d_out[i * dim..(i + 1) * dim];
        if dy.iter().all(|&g| g == 0.0) {
            continue;
        }
        let a = &cache.activated[i * hidden..(i + 1) * hidden];
        let c = &cache.mixed[i * dim..(i + 1) * dim];
        d_act.iter_mut().for_each(|x| *x = 0.0);
        for (r, &g) in dy.iter().enumerate() {
            grads.output_bias.data[r] += g;
            let w = params.output.row(r);
            for ((gw, &ak), (da, &wk)) in
                grads.output.row_mut(r).iter_mut().zip(a).zip(d_act.iter_mut().zip(w))
            {
                *gw += g * ak;
                *da += g * wk;
            }
        }
        d_mixed.iter_mut().for_each(|x| *x = 0.0);
        for r in 0..hidden {
            let dz = d_act[r] * (1.0 - a[r] * a[r]);
            if dz == 0.0 {
                continue;
            }
            grads.hidden_bias.data[r] += dz;
            let w = params.hidden.row(r);
            for ((gw, &ck), (dc, &wk)) in grads.hidden.row_mut(r).iter_mut().zip(c).zip(d_mixed.iter_mut().zip(w)) {
                *gw += dz * ck;
                *dc += dz * wk;
            }
        }
        let count = neighbours(i, n, context).count() as f64;
        for (slot, j) in neighbours(i, n, context) {
            let w = params.position.data[slot] / count;
            let row = cache.ids[j];
            grads.position.data[slot] += math::dot(params.embedding.row(row), &d_mixed) / count;
            for (ge, &dc) in grads.embedding.row_mut(row).iter_mut().zip(&d_mixed) {
                *ge += w * dc;
            }
        }
    }
}

/// One vector per token.
pub fn encode<S: AsRef<str>>(tokens: &[S], params: &EncoderParams) -> Vec<Vec<f64>> {
    let ids = bucket_ids(tokens, &params.config);
    let (flat, _) = forward(&ids, params);
    flat.chunks(params.config.dim).map(<[f64]>::to_vec).collect()
}

/// Mean of the token vectors in `span = [start, end)`.
pub fn span_repr(token_vectors: &[Vec<f64>], span: (usize, usize)) -> Result<Vec<f64>> {
    let (start, end) = span;
    if start >= end {
        return Err(Error::Empty("span"));
    }
    if end > token_vectors.len() {
        return Err(Error::DimensionMismatch { expected: token_vectors.len(), got: end });
    }
    let rows: Vec<&[f64]> = token_vectors[start..end].iter().map(Vec::as_slice).collect();
    Ok(math::mean_of(&rows))
}

/// Crop of at most `size` tokens centered on `center`, clipped at sentence
/// boundaries. Returns the crop range `[start, end)` and the center's index
/// within it.
pub fn window(n_tokens: usize, center: usize, size: usize) -> Result<((usize, usize), usize)> {
    if center >= n_tokens {
        return Err(Error::DimensionMismatch { expected: n_tokens, got: center });
    }
    if size == 0 {
        return Err(Error::InvalidConfig("window size must be positive".into()));
    }
    if n_tokens <= size {
        return Ok(((0, n_tokens), center));
    }
    let half = size / 2;
    let start = center.saturating_sub(half).min(n_tokens - size);
    Ok(((start, start + size), center - start))
}

/// Vector of `tokens[center]` encoded within its window.
pub fn encode_windowed<S: AsRef<str>>(tokens: &[S], center: usize, params: &EncoderParams) -> Result<Vec<f64>> {
    let ((start, end), rel) = window(tokens.len(), center, params.config.window)?;
    Ok(encode(&tokens[start..end], params).swap_remove(rel))
}

pub fn label_tokens(label_text: &str) -> Vec<String> {
    label_text.split_whitespace().map(String::from).collect()
}

/// Label text encoded as a standalone token sequence, mean-pooled.
pub fn label_embed(label_text: &str, params: &EncoderParams) -> Result<Vec<f64>> {
    let tokens = label_tokens(label_text);
    if tokens.is_empty() {
        return Err(Error::Empty("label text"));
    }
    let vectors = encode(&tokens, params);
    span_repr(&vectors, (0, vectors.len()))
}

/// Shadow encoder updated as an exponential moving average of the primary.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumEncoder {
    pub shadow: EncoderParams,
    pub coefficient: f64,
}

pub const DEFAULT_MOMENTUM: f64 = 0.999;

impl MomentumEncoder {
    pub fn new(primary: &EncoderParams, coefficient: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&coefficient) {
            return Err(Error::InvalidConfig(alloc::format!("momentum {coefficient} outside [0, 1]")));
        }
        Ok(MomentumEncoder { shadow: primary.clone(), coefficient })
    }
}

/// `shadow <- c * shadow + (1 - c) * primary`, elementwise.
pub fn momentum_update(primary: &EncoderParams, momentum: &mut MomentumEncoder) -> Result<()> {
    let c = momentum.coefficient;
    for (p, s) in primary.tensors().into_iter().zip(momentum.shadow.tensors_mut()) {
        if p.shape != s.shape {
            return Err(Error::DimensionMismatch { expected: p.len(), got: s.len() });
        }
    }
    for (p, s) in primary.tensors().into_iter().zip(momentum.shadow.tensors_mut()) {
        for (sv, pv) in s.data.iter_mut().zip(&p.data) {
            *sv = c * *sv + (1.0 - c) * pv;
        }
    }
    Ok(())
}

/// Encoder slice of a full model, for convenience.
#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn small() -> EncoderParams {
        EncoderParams::init(EncoderConfig::with_dims(97, 6, 8), 3).unwrap()
    }

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(ToString::to_string).collect()
    }

    #[test]
    fn encode_is_deterministic_and_finite() {
        let p = small();
        let a = encode(&words("the army attacked the town"), &p);
        assert_eq!(a, encode(&words("the army attacked the town"), &p));
        assert_eq!(a.len(), 5);
        assert!(a.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn encode_is_local() {
        let p = small();
        let a = encode(&words("x1 x2 a b c d e y1 y2"), &p);
        let b = encode(&words("z a b c d e q"), &p);
        // token `c` sees exactly `a b c d e` in both sentences
        assert_eq!(a[4], b[3]);
        let c = encode(&words("z a b c d f q"), &p);
        assert_ne!(b[3], c[3]);
    }

    #[test]
    fn span_repr_examples() {
        let v = vec![vec![0.0, 2.0], vec![2.0, 0.0]];
        assert_eq!(span_repr(&v, (0, 2)).unwrap(), vec![1.0, 1.0]);
        assert_eq!(span_repr(&v, (1, 2)).unwrap(), vec![2.0, 0.0]);
        assert!(span_repr(&v, (1, 1)).is_err());
    }

    #[test]
    fn window_examples() {
        assert_eq!(window(5, 2, 3).unwrap(), ((1, 4), 1));
        assert_eq!(window(5, 0, 3).unwrap(), ((0, 3), 0));
        assert_eq!(window(2, 1, 128).unwrap(), ((0, 2), 1));
        assert_eq!(window(10, 9, 4).unwrap(), ((6, 10), 3));
        assert!(window(2, 2, 3).is_err());
    }

    #[test]
    fn windowed_encoding_matches_full_encoding_for_local_encoder() {
        let mut p = small();
        p.config.window = 7;
        let toks = words("a b c d e f g h i j k l");
        let full = encode(&toks, &p);
        for (i, row) in full.iter().enumerate() {
            assert_eq!(&encode_windowed(&toks, i, &p).unwrap(), row);
        }
    }

    #[test]
    fn label_embed_examples() {
        let p = small();
        assert_eq!(label_embed("attack", &p).unwrap(), label_embed("attack", &p).unwrap());
        assert_ne!(label_embed("attack", &p).unwrap(), label_embed("transport", &p).unwrap());
        assert_eq!(label_embed("attack", &p).unwrap(), encode(&["attack"], &p)[0]);
        assert!(label_embed("  ", &p).is_err());
    }

    #[test]
    fn bucket_is_case_insensitive() {
        assert_eq!(bucket("Attack", 4096), bucket("attack", 4096));
    }

    #[test]
    fn momentum_identities() {
        let primary = small();
        let other = EncoderParams::init(primary.config, 99).unwrap();
        let mut m = MomentumEncoder::new(&other, 1.0).unwrap();
        momentum_update(&primary, &mut m).unwrap();
        assert_eq!(m.shadow, other);
        let mut m = MomentumEncoder::new(&other, 0.0).unwrap();
        momentum_update(&primary, &mut m).unwrap();
        assert_eq!(m.shadow, primary);
        let mut zero = primary.zeros_like();
        let mut two = primary.zeros_like();
        for t in two.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 2.0);
        }
        for t in zero.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut m = MomentumEncoder::new(&zero, 0.5).unwrap();
        momentum_update(&two, &mut m).unwrap();
        assert!(m.shadow.tensors().iter().all(|t| t.data.iter().all(|&x| x == 1.0)));
        let bad = EncoderParams::init(EncoderConfig::with_dims(5, 6, 8), 0).unwrap();
        assert!(momentum_update(&bad, &mut m).is_err());
        assert!(MomentumEncoder::new(&primary, 1.5).is_err());
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let p = small();
        let ids = bucket_ids(&words("a b c d"), &p.config);
        // loss = sum_k w_k * out_k with fixed weights
        let weights: Vec<f64> = (0..ids.len() * p.config.dim).map(|k| ((k * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let loss = |q: &EncoderParams| -> f64 {
            let (o, _) = forward(&ids, q);
            o.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = forward(&ids, &p);
        let mut g = p.zeros_like();
        backward(&cache, &weights, &p, &mut g);
        let h = 1e-5;
        for t in 0..6 {
            for k in 0..p.tensors()[t].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[t].data[k] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[t].data[k] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = g.tensors()[t].data[k];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "tensor {t} idx {k}: {fd} vs {an}");
            }
        }
    }
}
