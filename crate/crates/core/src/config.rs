//! Model hyper-parameters and their plain-text `key = value` form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Tiny,
    Full,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Tiny => "tiny",
            Preset::Full => "full",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "full" => Ok(Preset::Full),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Number of scale-specific state-space layers.
    pub layers: usize,
    /// Blocks per layer.
    pub blocks: usize,
    pub channels: usize,
    /// Size of the scale-adaptive kernel bank.
    pub sam_kernels: usize,
    pub sam_hidden: usize,
    pub d_state: usize,
    pub use_ssb_scale_term: bool,
    pub use_sam: bool,
    pub use_gradient_branch: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpsamplerConfig {
    pub neo_width: usize,
    pub neo_iters: usize,
    /// Learnable local ensemble: RBF weights on the lifted codes. When off
    /// every weight is 1.
    pub use_lle: bool,
    /// Offset refinement attention. When off the refined code is the
    /// weighted code itself.
    pub use_orm: bool,
    /// Divide attention logits by `√C`.
    pub scaled_attention: bool,
    /// Restrict offset attention to runs of this many queries.
    pub attention_window: Option<usize>,
    /// One RBF width per corner instead of a shared one.
    pub per_corner_sigma: bool,
    /// Add the bicubic interpolation of the input at each query to the
    /// reconstruction. The last projection then starts at zero.
    pub bicubic_skip: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub upsampler: UpsamplerConfig,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        let (layers, blocks, channels, sam_kernels) = match preset {
            Preset::Tiny => (2, 2, 32, 2),
            Preset::Full => (4, 4, 64, 4),
        };
        Self {
            encoder: EncoderConfig {
                layers,
                blocks,
                channels,
                sam_kernels,
                sam_hidden: 64,
                d_state: 8,
                use_ssb_scale_term: true,
                use_sam: true,
                use_gradient_branch: true,
            },
            upsampler: UpsamplerConfig {
                neo_width: 64,
                neo_iters: 2,
                use_lle: true,
                use_orm: true,
                scaled_attention: true,
                attention_window: None,
                per_corner_sigma: false,
                bicubic_skip: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let u = &self.upsampler;
        let positive = [
            ("layers", e.layers),
            ("blocks", e.blocks),
            ("channels", e.channels),
            ("sam_kernels", e.sam_kernels),
            ("sam_hidden", e.sam_hidden),
            ("d_state", e.d_state),
            ("neo_width", u.neo_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if u.attention_window == Some(0) {
            return Err(Error::InvalidConfig("attention_window must be >= 1".into()));
        }
        Ok(())
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let e = &self.encoder;
        let u = &self.upsampler;
        [
            ("layers", e.layers.to_string()),
            ("blocks", e.blocks.to_string()),
            ("channels", e.channels.to_string()),
            ("sam_kernels", e.sam_kernels.to_string()),
            ("sam_hidden", e.sam_hidden.to_string()),
            ("d_state", e.d_state.to_string()),
            ("use_ssb_scale_term", e.use_ssb_scale_term.to_string()),
            ("use_sam", e.use_sam.to_string()),
            ("use_gradient_branch", e.use_gradient_branch.to_string()),
            ("neo_width", u.neo_width.to_string()),
            ("neo_iters", u.neo_iters.to_string()),
            ("use_lle", u.use_lle.to_string()),
            ("use_orm", u.use_orm.to_string()),
            ("scaled_attention", u.scaled_attention.to_string()),
            (
                "attention_window",
                u.attention_window.map_or("none".to_string(), |w| w.to_string()),
            ),
            ("per_corner_sigma", u.per_corner_sigma.to_string()),
            ("bicubic_skip", u.bicubic_skip.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub const KEYS: &'static [&'static str] = &[
        "layers",
        "blocks",
        "channels",
        "sam_kernels",
        "sam_hidden",
        "d_state",
        "use_ssb_scale_term",
        "use_sam",
        "use_gradient_branch",
        "neo_width",
        "neo_iters",
        "use_lle",
        "use_orm",
        "scaled_attention",
        "attention_window",
        "per_corner_sigma",
        "bicubic_skip",
    ];

    /// Applies one `key = value` setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.encoder;
        let u = &mut self.upsampler;
        match key {
            "layers" => e.layers = parse(key, value)?,
            "blocks" => e.blocks = parse(key, value)?,
            "channels" => e.channels = parse(key, value)?,
            "sam_kernels" => e.sam_kernels = parse(key, value)?,
            "sam_hidden" => e.sam_hidden = parse(key, value)?,
            "d_state" => e.d_state = parse(key, value)?,
            "use_ssb_scale_term" => e.use_ssb_scale_term = parse(key, value)?,
            "use_sam" => e.use_sam = parse(key, value)?,
            "use_gradient_branch" => e.use_gradient_branch = parse(key, value)?,
            "neo_width" => u.neo_width = parse(key, value)?,
            "neo_iters" => u.neo_iters = parse(key, value)?,
            "use_lle" => u.use_lle = parse(key, value)?,
            "use_orm" => u.use_orm = parse(key, value)?,
            "scaled_attention" => u.scaled_attention = parse(key, value)?,
            "attention_window" => {
                u.attention_window = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "per_corner_sigma" => u.per_corner_sigma = parse(key, value)?,
            "bicubic_skip" => u.bicubic_skip = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::preset(Preset::Tiny);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::InvalidConfig(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}
