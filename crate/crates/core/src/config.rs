//! Run configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; omitted keys keep their defaults. `auto` selects a
//! rank-dependent default where one exists.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Modality, Preprocess, StratifiedPlan, SynthParams};
use crate::error::{Error, Result};
use crate::model::{LossConfig, ModelSpec, Variant, PATCH, STRIDE};

/// When to drop small connected components from predicted masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostFilter {
    /// 3D volumes only.
    Auto,
    On,
    Off,
}

impl fmt::Display for PostFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PostFilter::Auto => "auto",
            PostFilter::On => "on",
            PostFilter::Off => "off",
        })
    }
}

impl FromStr for PostFilter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(PostFilter::Auto),
            "on" => Ok(PostFilter::On),
            "off" => Ok(PostFilter::Off),
            _ => Err(format!("expected auto, on or off, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub spatial_rank: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub lambda2: f64,
    pub lambda3: f64,
    pub learning_rate: f64,
    /// `None` means 64 in 2D and 12 in 3D.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    /// Total 2D patches drawn before the held-out split.
    pub train_patches: usize,
    pub vessel_per_scan: usize,
    pub background_per_scan: usize,
    pub holdout: f64,
    pub augment_copies: usize,
    pub patch: usize,
    pub stride: usize,
    pub threshold: f64,
    pub min_component_size: usize,
    pub postfilter: PostFilter,
    pub seed: u64,
    pub modality: Modality,
    pub clahe_tiles: usize,
    pub clahe_clip: f64,
    pub gamma: f64,
    pub synth_count: usize,
    /// `None` means 96 per axis in both ranks.
    pub synth_extent: Option<usize>,
    pub synth_noise: f64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::PCNet,
            spatial_rank: 2,
            base_channels: 4,
            levels: ModelSpec::LEVELS,
            lambda2: 0.67,
            lambda3: 0.33,
            learning_rate: 1e-3,
            batch_size: None,
            epochs: 5,
            train_patches: 5000,
            vessel_per_scan: 105,
            background_per_scan: 17,
            holdout: 0.2,
            augment_copies: 1,
            patch: PATCH,
            stride: STRIDE,
            threshold: 0.5,
            min_component_size: 40,
            postfilter: PostFilter::Auto,
            seed: 0,
            modality: Modality::Synthetic,
            clahe_tiles: 8,
            clahe_clip: 2.0,
            gamma: 1.2,
            synth_count: 20,
            synth_extent: None,
            synth_noise: 0.1,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(field, format!("cannot parse `{value}`: {e}")))
}

fn parse_auto(field: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(field, value).map(Some)
    }
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl RunConfig {
    /// Configuration used for the structural complexity comparison.
    pub fn reference_2d() -> Self {
        Self {
            base_channels: 16,
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "variant" => self.variant = v.parse().map_err(|e: Error| Error::config(key, e.to_string()))?,
            "spatial_rank" => self.spatial_rank = parse(key, v)?,
            "base_channels" => self.base_channels = parse(key, v)?,
            "levels" => self.levels = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "lambda3" => self.lambda3 = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse_auto(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "train_patches" => self.train_patches = parse(key, v)?,
            "vessel_per_scan" => self.vessel_per_scan = parse(key, v)?,
            "background_per_scan" => self.background_per_scan = parse(key, v)?,
            "holdout" => self.holdout = parse(key, v)?,
            "augment_copies" => self.augment_copies = parse(key, v)?,
            "patch" => self.patch = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "min_component_size" => self.min_component_size = parse(key, v)?,
            "postfilter" => self.postfilter = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "modality" => self.modality = v.parse().map_err(|e: Error| Error::config(key, e.to_string()))?,
            "clahe_tiles" => self.clahe_tiles = parse(key, v)?,
            "clahe_clip" => self.clahe_clip = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "synth_count" => self.synth_count = parse(key, v)?,
            "synth_extent" => self.synth_extent = parse_auto(key, v)?,
            "synth_noise" => self.synth_noise = parse(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::config(key, "unknown field")),
        }
        Ok(())
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, detail: String| Err(Error::config(field, detail));
        if !(2..=3).contains(&self.spatial_rank) {
            return fail("spatial_rank", format!("must be 2 or 3, got {}", self.spatial_rank));
        }
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return fail("base_channels", format!("must be a multiple of 4, got {}", self.base_channels));
        }
        if !(2..=4).contains(&self.levels) {
            return fail("levels", format!("must be 2..=4, got {}", self.levels));
        }
        for (name, v) in [("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(name, format!("must be in [0, 1], got {v}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == Some(0) {
            return fail("batch_size", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return fail("holdout", format!("must be in [0, 1), got {}", self.holdout));
        }
        let unit = 1 << self.levels;
        if self.patch == 0 || self.patch % unit != 0 || self.patch % 4 != 0 {
            return fail("patch", format!("must be a positive multiple of {}", unit.max(4)));
        }
        if self.stride == 0 || self.stride > self.patch {
            return fail("stride", format!("must be in 1..={}", self.patch));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold", format!("must be in (0, 1), got {}", self.threshold));
        }
        if self.clahe_tiles == 0 {
            return fail("clahe_tiles", "must be positive".into());
        }
        if !(self.clahe_clip > 0.0) {
            return fail("clahe_clip", format!("must be positive, got {}", self.clahe_clip));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail("gamma", format!("must be positive, got {}", self.gamma));
        }
        if self.synth_extent.is_some_and(|e| e < 64) {
            return fail("synth_extent", "must be at least 64".into());
        }
        if !(self.synth_noise >= 0.0 && self.synth_noise.is_finite()) {
            return fail("synth_noise", format!("must be non-negative, got {}", self.synth_noise));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let values: [(&str, String); 29] = [
            ("variant", self.variant.to_string()),
            ("spatial_rank", self.spatial_rank.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("levels", self.levels.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("lambda3", self.lambda3.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", auto(self.batch_size)),
            ("epochs", self.epochs.to_string()),
            ("train_patches", self.train_patches.to_string()),
            ("vessel_per_scan", self.vessel_per_scan.to_string()),
            ("background_per_scan", self.background_per_scan.to_string()),
            ("holdout", self.holdout.to_string()),
            ("augment_copies", self.augment_copies.to_string()),
            ("patch", self.patch.to_string()),
            ("stride", self.stride.to_string()),
            ("threshold", self.threshold.to_string()),
            ("min_component_size", self.min_component_size.to_string()),
            ("postfilter", self.postfilter.to_string()),
            ("seed", self.seed.to_string()),
            ("modality", self.modality.to_string()),
            ("clahe_tiles", self.clahe_tiles.to_string()),
            ("clahe_clip", self.clahe_clip.to_string()),
            ("gamma", self.gamma.to_string()),
            ("synth_count", self.synth_count.to_string()),
            ("synth_extent", auto(self.synth_extent)),
            ("synth_noise", self.synth_noise.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.variant, self.spatial_rank, self.base_channels).with_levels(self.levels)
    }

    pub fn loss(&self) -> LossConfig {
        let weights = LossConfig {
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        };
        LossConfig::for_variant(self.variant, weights)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(if self.spatial_rank == 3 { 12 } else { 64 })
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            clahe_tiles: self.clahe_tiles,
            clahe_clip: self.clahe_clip,
            gamma: self.gamma,
        }
    }

    pub fn plan(&self) -> StratifiedPlan {
        StratifiedPlan {
            vessel: self.vessel_per_scan,
            background: self.background_per_scan,
            patch: self.patch,
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        let mut p = if self.spatial_rank == 3 { SynthParams::default_3d() } else { SynthParams::default_2d() };
        p.extent = self.synth_extent.unwrap_or(96);
        p.noise_sigma = self.synth_noise;
        p
    }

    pub fn postfilter_enabled(&self) -> bool {
        match self.postfilter {
            PostFilter::Auto => self.spatial_rank == 3,
            PostFilter::On => true,
            PostFilter::Off => false,
        }
    }
}
