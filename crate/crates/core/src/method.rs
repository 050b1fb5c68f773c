//! Method configurations: one choice per design element, named presets,
//! and a flat key-value text form.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::proto::{DistanceKind, PrototypeSource, TransferKind, DEFAULT_TAU};

/// Prototype source, or `None` for a plain linear classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Mentions,
    Label,
    Both,
    None,
}

impl Source {
    pub fn uses_mentions(self) -> bool {
        matches!(self, Source::Mentions | Source::Both)
    }

    pub fn uses_label(self) -> bool {
        matches!(self, Source::Label | Source::Both)
    }

    pub fn prototype_source(self) -> Option<PrototypeSource> {
        match self {
            Source::Mentions => Some(PrototypeSource::Mentions),
            Source::Label => Some(PrototypeSource::Label),
            Source::Both => Some(PrototypeSource::Both),
            Source::None => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Feature,
    Score,
    Loss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrfKind {
    None,
    Vanilla,
    Cdt,
    Pa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClMode {
    None,
    InBatch,
    Moco,
    /// In-batch below the sentence threshold, MoCo otherwise.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodConfig {
    pub source: Source,
    pub aggregation: Aggregation,
    pub distance: DistanceKind,
    pub transfer: TransferKind,
    pub crf: CrfKind,
    pub cl: ClMode,
}

pub const DEFAULT_PROJ_DIM: usize = 32;

pub const PRESETS: [&str; 12] = [
    "fine-tuning",
    "protonet",
    "protonet-adj",
    "l-tapnet-cdt",
    "l-tapnet-cdt-adj",
    "pa-crf",
    "pa-crf-adj",
    "container",
    "container-adj",
    "fsls",
    "fsls-adj",
    "unified-baseline",
];

const fn cfg(
    source: Source,
    aggregation: Aggregation,
    distance: DistanceKind,
    transfer: TransferKind,
    crf: CrfKind,
    cl: ClMode,
) -> MethodConfig {
    MethodConfig { source, aggregation, distance, transfer, crf, cl }
}

/// Element choices of a named method.
pub fn method_preset(name: &str) -> Result<MethodConfig> {
    use Aggregation::*;
    use DistanceKind::*;
    use TransferKind::*;
    let ss = ScaledCosine(DEFAULT_TAU);
    let seu = ScaledEuclidean(DEFAULT_TAU);
    Ok(match name {
        "fine-tuning" => cfg(Source::None, Feature, Cosine, Identity, CrfKind::None, ClMode::None),
        "protonet" => cfg(Source::Mentions, Feature, Euclidean, Identity, CrfKind::None, ClMode::None),
        "protonet-adj" => cfg(Source::Mentions, Feature, seu, Normalize, CrfKind::None, ClMode::None),
        "l-tapnet-cdt" => cfg(Source::Both, Feature, ss, DownProjectNormalize(DEFAULT_PROJ_DIM), CrfKind::Cdt, ClMode::None),
        "l-tapnet-cdt-adj" => cfg(Source::Both, Feature, seu, Normalize, CrfKind::Cdt, ClMode::None),
        "pa-crf" => cfg(Source::Mentions, Feature, Cosine, Normalize, CrfKind::Pa, ClMode::None),
        "pa-crf-adj" => cfg(Source::Mentions, Feature, ss, Normalize, CrfKind::Pa, ClMode::None),
        "container" => cfg(Source::Mentions, Score, GaussianDivergence, Reparameterize, CrfKind::Cdt, ClMode::InBatch),
        "container-adj" => cfg(Source::Mentions, Score, ss, Normalize, CrfKind::Cdt, ClMode::InBatch),
        "fsls" => cfg(Source::Label, Feature, Cosine, Identity, CrfKind::None, ClMode::None),
        "fsls-adj" => cfg(Source::Label, Feature, ss, Normalize, CrfKind::None, ClMode::None),
        "unified-baseline" => cfg(Source::Both, Loss, ss, Normalize, CrfKind::None, ClMode::Auto),
        _ => {
            return Err(Error::UnknownPreset { name: name.to_string(), available: PRESETS.join(", ") });
        }
    })
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        self.distance.validate()?;
        let gaussian_t = self.transfer.is_gaussian();
        let gaussian_d = self.distance == DistanceKind::GaussianDivergence;
        if gaussian_t != gaussian_d {
            return Err(Error::InvalidConfig("transfer R and distance KL must be used together".into()));
        }
        if let Some(0) = self.transfer.projection_dim() {
            return Err(Error::InvalidConfig("projection width must be positive".into()));
        }
        if self.cl != ClMode::None && !self.source.uses_mentions() {
            return Err(Error::InvalidConfig("contrastive learning needs mentions among the prototype sources".into()));
        }
        if self.source == Source::Both && self.cl != ClMode::None && self.aggregation != Aggregation::Loss {
            return Err(Error::InvalidConfig("label + contrastive mention branches merge at the loss level".into()));
        }
        if self.crf == CrfKind::Pa && !self.has_feature_emissions() {
            return Err(Error::InvalidConfig("PA-CRF needs a feature-level prototype branch".into()));
        }
        Ok(())
    }

    /// Whether some branch scores against one mean prototype per label,
    /// which PA-CRF reads its transitions from.
    pub fn has_feature_emissions(&self) -> bool {
        match self.source {
            Source::None => false,
            Source::Label => true,
            Source::Both => self.aggregation == Aggregation::Loss || self.aggregation == Aggregation::Feature,
            Source::Mentions => self.cl == ClMode::None && self.aggregation == Aggregation::Feature,
        }
    }

    /// Whether the step budget uses the scaled-distance count.
    pub fn is_scaled(&self) -> bool {
        self.distance.is_scaled()
    }

    /// Flat `key = value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        out.push(("source", source_name(self.source).to_string()));
        out.push(("aggregation", aggregation_name(self.aggregation).to_string()));
        out.push(("distance", self.distance.abbrev().to_string()));
        if let Some(t) = self.distance.tau() {
            out.push(("tau", format!("{t}")));
        }
        out.push(("transfer", self.transfer.abbrev().to_string()));
        if let Some(n) = self.transfer.projection_dim() {
            out.push(("proj_dim", format!("{n}")));
        }
        out.push(("crf", crf_name(self.crf).to_string()));
        out.push(("cl", cl_name(self.cl).to_string()));
        out
    }

    /// Parse flat pairs; missing keys are an error except `tau` and
    /// `proj_dim`, which take their defaults.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut get = alloc::collections::BTreeMap::new();
        for (k, v) in pairs {
            if get.insert(k.trim(), v.trim()).is_some() {
                return Err(Error::Parse(format!("duplicate key `{}`", k.trim())));
            }
        }
        for k in get.keys() {
            if !["source", "aggregation", "distance", "tau", "transfer", "proj_dim", "crf", "cl"].contains(k) {
                return Err(Error::Parse(format!("unknown method key `{k}`")));
            }
        }
        let need = |k: &str| get.get(k).copied().ok_or_else(|| Error::Parse(format!("missing method key `{k}`")));
        let tau = match get.get("tau") {
            Some(t) => t.parse::<f64>().map_err(|_| Error::Parse(format!("bad tau `{t}`")))?,
            None => DEFAULT_TAU,
        };
        let proj_dim = match get.get("proj_dim") {
            Some(t) => t.parse::<usize>().map_err(|_| Error::Parse(format!("bad proj_dim `{t}`")))?,
            None => DEFAULT_PROJ_DIM,
        };
        let config = MethodConfig {
            source: parse_source(need("source")?)?,
            aggregation: parse_aggregation(need("aggregation")?)?,
            distance: DistanceKind::from_abbrev(need("distance")?, tau)?,
            transfer: TransferKind::from_abbrev(need("transfer")?, proj_dim)?,
            crf: parse_crf(need("crf")?)?,
            cl: parse_cl(need("cl")?)?,
        };
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for MethodConfig {
    /// `source=both,aggregation=loss,...`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.to_pairs().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for MethodConfig {
    type Err = Error;

    /// A preset name or the comma-separated pair form.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if !s.contains('=') {
            return method_preset(s);
        }
        let mut pairs = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::Parse(format!("expected key=value, got `{part}`")))?;
            pairs.push((k, v));
        }
        MethodConfig::from_pairs(pairs)
    }
}

pub fn source_name(s: Source) -> &'static str {
    match s {
        Source::Mentions => "mentions",
        Source::Label => "label",
        Source::Both => "both",
        Source::None => "none",
    }
}

pub fn aggregation_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Feature => "feature",
        Aggregation::Score => "score",
        Aggregation::Loss => "loss",
    }
}

pub fn crf_name(c: CrfKind) -> &'static str {
    match c {
        CrfKind::None => "none",
        CrfKind::Vanilla => "vanilla",
        CrfKind::Cdt => "cdt",
        CrfKind::Pa => "pa",
    }
}

pub fn cl_name(c: ClMode) -> &'static str {
    match c {
        ClMode::None => "none",
        ClMode::InBatch => "inbatch",
        ClMode::Moco => "moco",
        ClMode::Auto => "auto",
    }
}

fn parse_source(s: &str) -> Result<Source> {
    Ok(match s {
        "mentions" => Source::Mentions,
        "label" => Source::Label,
        "both" => Source::Both,
        "none" => Source::None,
        _ => return Err(Error::Parse(format!("unknown source `{s}`"))),
    })
}

fn parse_aggregation(s: &str) -> Result<Aggregation> {
    Ok(match s {
        "feature" => Aggregation::Feature,
        "score" => Aggregation::Score,
        "loss" => Aggregation::Loss,
        _ => return Err(Error::Parse(format!("unknown aggregation `{s}`"))),
    })
}

fn parse_crf(s: &str) -> Result<CrfKind> {
    Ok(match s {
        "none" => CrfKind::None,
        "vanilla" => CrfKind::Vanilla,
        "cdt" => CrfKind::Cdt,
        "pa" => CrfKind::Pa,
        _ => return Err(Error::Parse(format!("unknown crf `{s}`"))),
    })
}

fn parse_cl(s: &str) -> Result<ClMode> {
    Ok(match s {
        "none" => ClMode::None,
        "inbatch" => ClMode::InBatch,
        "moco" => ClMode::Moco,
        "auto" => ClMode::Auto,
        _ => return Err(Error::Parse(format!("unknown cl mode `{s}`"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid_and_round_trips() {
        for name in PRESETS {
            let c = method_preset(name).unwrap();
            c.validate().unwrap();
            let text = c.to_string();
            assert_eq!(text.parse::<MethodConfig>().unwrap(), c, "{name}: {text}");
            assert_eq!(name.parse::<MethodConfig>().unwrap(), c);
        }
    }

    #[test]
    fn table_rows() {
        let c = method_preset("container").unwrap();
        assert_eq!(
            (c.source, c.aggregation, c.distance, c.transfer, c.crf),
            (Source::Mentions, Aggregation::Score, DistanceKind::GaussianDivergence, TransferKind::Reparameterize, CrfKind::Cdt)
        );
        let f = method_preset("fsls").unwrap();
        assert_eq!((f.source, f.distance, f.transfer, f.crf), (Source::Label, DistanceKind::Cosine, TransferKind::Identity, CrfKind::None));
        let u = method_preset("unified-baseline").unwrap();
        assert_eq!((u.source, u.distance, u.transfer, u.crf), (Source::Both, DistanceKind::ScaledCosine(0.1), TransferKind::Normalize, CrfKind::None));
        let p = method_preset("protonet").unwrap();
        assert_eq!((p.source, p.distance, p.transfer, p.cl), (Source::Mentions, DistanceKind::Euclidean, TransferKind::Identity, ClMode::None));
    }

    #[test]
    fn unknown_preset_lists_names() {
        match method_preset("bert") {
            Err(Error::UnknownPreset { available, .. }) => assert!(available.contains("unified-baseline")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_rules() {
        let mut c = method_preset("fsls").unwrap();
        c.cl = ClMode::InBatch;
        assert!(c.validate().is_err());
        let mut c = method_preset("protonet").unwrap();
        c.distance = DistanceKind::GaussianDivergence;
        assert!(c.validate().is_err());
        let mut c = method_preset("unified-baseline").unwrap();
        c.aggregation = Aggregation::Score;
        assert!(c.validate().is_err());
        let mut c = method_preset("container").unwrap();
        c.crf = CrfKind::Pa;
        assert!(c.validate().is_err());
    }

    #[test]
    fn pair_form_defaults_and_errors() {
        let c: MethodConfig = "source=label,aggregation=feature,distance=SS,transfer=N,crf=none,cl=none".parse().unwrap();
        assert_eq!(c, method_preset("fsls-adj").unwrap());
        assert!("source=label,distance=S".parse::<MethodConfig>().is_err());
        assert!("source=label,aggregation=feature,distance=S,transfer=I,crf=none,cl=none,x=1".parse::<MethodConfig>().is_err());
    }
}
