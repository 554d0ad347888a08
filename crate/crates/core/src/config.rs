//! Pipeline configuration as a plain `key = value` text file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::bake::AtlasLayout;
use crate::losses::{LossWeights, MatchNorm};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value:?}")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Straight,
    Curly,
}

impl FromStr for Preset {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "straight" => Ok(Self::Straight),
            "curly" => Ok(Self::Curly),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(match self {
            Self::Straight => "straight",
            Self::Curly => "curly",
        })
    }
}

/// Optional number; `auto` means "use the derived default".
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Auto(pub Option<f64>);

impl FromStr for Auto {
    type Err = std::num::ParseFloatError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Self(None))
        } else {
            s.parse().map(|v| Self(Some(v)))
        }
    }
}

impl fmt::Display for Auto {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Norm(pub MatchNorm);

impl FromStr for Norm {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "per_sample" => Ok(Self(MatchNorm::PerSample)),
            "sum" => Ok(Self(MatchNorm::Sum)),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(match self.0 {
            MatchNorm::PerSample => "per_sample",
            MatchNorm::Sum => "sum",
        })
    }
}

macro_rules! config {
    ($($(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct PipelineConfig {
            $($(#[doc = $doc])* pub $name: $ty,)*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl PipelineConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let bad = || ConfigError::BadValue { key: key.to_string(), value: value.to_string() };
                match key {
                    $(stringify!($name) => self.$name = value.parse().map_err(|_| bad())?,)*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            /// Every key, one `key = value` line each, in declaration order.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(s.push_str(&format!("{} = {}\n", stringify!($name), self.$name));)*
                s
            }
        }
    };
}

config! {
    /// Strand file; empty selects the built-in synthetic wig.
    hair: String = String::new();
    /// Head OBJ; empty uses an icosphere for the synthetic wig and no head otherwise.
    head: String = String::new();
    /// Strands kept after random downsampling; 0 keeps all.
    n_strands: usize = 0;
    n_samples: usize = 32;
    n_cards: usize = 64;
    n_textures: usize = 32;
    n_quads: usize = 8;
    crossed: bool = false;
    cap: bool = true;
    reduce: bool = true;
    preset: Preset = Preset::Straight;
    w_tangent: Auto = Auto(None);
    w_depth: Auto = Auto(None);
    w_dice: Auto = Auto(None);
    w_match: Auto = Auto(None);
    w_collision: Auto = Auto(None);
    match_norm: Norm = Norm(MatchNorm::PerSample);
    synth_strands: usize = 500;
    synth_seed: u64 = 1;
    cluster_seed: u64 = 0;
    cluster_iters: usize = 100;
    orientation_samples: usize = 36;
    /// Minimum card half-width, relative to the bounding radius.
    card_min_width: f64 = 1e-3;
    /// World strand width; `auto` is two pixels of the training render.
    strand_width: Auto = Auto(None);
    reduce_seed: u64 = 0;
    reduce_tex_width: usize = 128;
    reduce_tex_height: usize = 64;
    /// Precomputed texture distances (`DMAT` file); empty computes them.
    distance_matrix: String = String::new();
    render_resolution: usize = 256;
    train_views: usize = 12;
    views_per_step: usize = 4;
    epochs: usize = 200;
    lr: f64 = 1e-3;
    /// Rail step size relative to the bounding radius.
    rail_lr: f64 = 1e-4;
    optim_seed: u64 = 0;
    /// Strand width floor relative to the bounding radius.
    min_strand_width: f64 = 1e-5;
    checkpoint_every: usize = 10;
    atlas_rows: usize = 8;
    atlas_cols: usize = 4;
    slot_width: usize = 512;
    slot_height: usize = 256;
    ao_rays: usize = 32;
    ao_whole_model: bool = false;
    bake_seed: u64 = 0;
    depth_16bit: bool = false;
    /// Cap extrusion, relative to the bounding radius.
    eps_cap: f64 = 5e-3;
    /// Root segment length drawn on the cap, relative to the bounding radius.
    eps_root: f64 = 2e-2;
    cap_resolution: usize = 1024;
    cap_ao_saturation: f64 = 4.0;
    eval_views: usize = 12;
    eval_resolution: usize = 256;
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<'a>(&mut self, items: impl IntoIterator<Item = &'a str>) -> Result<(), ConfigError> {
        for item in items {
            let (k, v) = item.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        let base = match self.preset {
            Preset::Straight => LossWeights::straight(),
            Preset::Curly => LossWeights::curly(),
        };
        LossWeights {
            tangent: self.w_tangent.0.unwrap_or(base.tangent),
            depth: self.w_depth.0.unwrap_or(base.depth),
            dice: self.w_dice.0.unwrap_or(base.dice),
            matching: self.w_match.0.unwrap_or(base.matching),
            collision: self.w_collision.0.unwrap_or(base.collision),
        }
    }

    pub fn atlas(&self) -> AtlasLayout {
        AtlasLayout {
            rows: self.atlas_rows,
            cols: self.atlas_cols,
            slot_width: self.slot_width,
            slot_height: self.slot_height,
        }
    }

    /// Cards produced by fitting: one per cluster, two when crossed.
    pub fn card_count(&self) -> usize {
        self.n_cards * if self.crossed { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.n_cards == 0 || self.n_textures == 0 {
            return fail("n_cards and n_textures must be positive".into());
        }
        if self.n_textures > self.n_cards {
            return fail(format!("n_textures ({}) exceeds n_cards ({})", self.n_textures, self.n_cards));
        }
        if self.n_quads == 0 {
            return fail("n_quads must be at least 1".into());
        }
        if self.n_samples < self.n_quads + 1 {
            return fail(format!("n_samples ({}) must exceed n_quads ({})", self.n_samples, self.n_quads));
        }
        for (name, r) in [
            ("render_resolution", self.render_resolution),
            ("eval_resolution", self.eval_resolution),
            ("cap_resolution", self.cap_resolution),
            ("slot_width", self.slot_width),
            ("slot_height", self.slot_height),
            ("reduce_tex_width", self.reduce_tex_width),
            ("reduce_tex_height", self.reduce_tex_height),
        ] {
            if !r.is_power_of_two() {
                return fail(format!("{name} must be a power of two, got {r}"));
            }
        }
        let textures = if self.reduce { self.n_textures } else { self.card_count() };
        if textures > self.atlas().slots() {
            return fail(format!("{textures} textures do not fit in {} atlas slots", self.atlas().slots()));
        }
        if !self.weights().is_valid() {
            return fail("loss weights must be finite and non-negative".into());
        }
        if !(self.eps_cap > 0.0 && self.eps_root > 0.0) {
            return fail("eps_cap and eps_root must be positive".into());
        }
        if self.strand_width.0.is_some_and(|w| !(w > 0.0)) {
            return fail("strand_width must be positive".into());
        }
        if self.train_views == 0 || self.eval_views == 0 {
            return fail("view counts must be positive".into());
        }
        Ok(())
    }
}
