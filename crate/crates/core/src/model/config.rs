use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;

/// Reconstruction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// Sub-pixel convolution straight to the maximum scale.
    PixelShuffle,
    /// Overscaled map, bilinear down to the maximum scale.
    OsmBilinear,
    /// Overscaled map, bicubic down to the maximum scale.
    OsmBicubic,
}

impl FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pixelshuffle" => Ok(Head::PixelShuffle),
            "osm_bilinear" => Ok(Head::OsmBilinear),
            "osm_bicubic" => Ok(Head::OsmBicubic),
            _ => Err(Error::config(format!(
                "unknown head `{s}` (pixelshuffle, osm_bilinear, osm_bicubic)"
            ))),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::PixelShuffle => "pixelshuffle",
            Head::OsmBilinear => "osm_bilinear",
            Head::OsmBicubic => "osm_bicubic",
        })
    }
}

/// Architectural hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub num_ldgs: usize,
    pub rbs_per_ldg: usize,
    pub expansion_ratio: usize,
    pub lowrank_ratio: f64,
    pub se_reduction: usize,
    pub max_scale: u32,
    pub overscale_factor: u32,
    pub head: Head,
    pub sc_in_ldg: bool,
    pub sc_in_gdg: bool,
    /// Resize the overscaled map straight to each output scale instead of
    /// going through the canonical ×N output.
    pub direct_scale_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 64,
            num_ldgs: 3,
            rbs_per_ldg: 3,
            expansion_ratio: 4,
            lowrank_ratio: 0.8,
            se_reduction: 4,
            max_scale: 4,
            overscale_factor: 5,
            head: Head::OsmBicubic,
            sc_in_ldg: true,
            sc_in_gdg: true,
            direct_scale_head: false,
        }
    }
}


impl ModelConfig {
    /// 16 channels, one group of two blocks.
    pub fn tiny() -> Self {
        ModelConfig {
            base_channels: 16,
            num_ldgs: 1,
            rbs_per_ldg: 2,
            ..ModelConfig::default()
        }
    }

    pub fn wide_channels(&self) -> usize {
        self.expansion_ratio * self.base_channels
    }

    pub fn lowrank_channels(&self) -> usize {
        ((self.lowrank_ratio * self.base_channels as f64).round() as usize).max(1)
    }

    pub fn se_channels(&self) -> usize {
        (self.base_channels / self.se_reduction).max(1)
    }

    /// Factor of the sub-pixel convolution in the head.
    pub fn shuffle_factor(&self) -> u32 {
        match self.head {
            Head::PixelShuffle => self.max_scale,
            Head::OsmBilinear | Head::OsmBicubic => self.overscale_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("base_channels", self.base_channels),
            ("num_ldgs", self.num_ldgs),
            ("rbs_per_ldg", self.rbs_per_ldg),
            ("expansion_ratio", self.expansion_ratio),
            ("se_reduction", self.se_reduction),
            ("max_scale", self.max_scale as usize),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("`{k}` must be at least 1")));
        }
        if self.max_scale < 2 {
            return Err(Error::config("`max_scale` must be at least 2"));
        }
        if !(self.lowrank_ratio > 0.0) || !self.lowrank_ratio.is_finite() {
            return Err(Error::config("`lowrank_ratio` must be positive"));
        }
        if self.overscale_factor < self.max_scale {
            return Err(Error::config(format!(
                "overscale factor {} is below the maximum scale {}",
                self.overscale_factor, self.max_scale
            )));
        }
        Ok(())
    }

    /// Set one field from its text form. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<bool> {
        match key {
            "base_channels" => self.base_channels = kv::value(key, raw)?,
            "num_ldgs" => self.num_ldgs = kv::value(key, raw)?,
            "rbs_per_ldg" => self.rbs_per_ldg = kv::value(key, raw)?,
            "expansion_ratio" => self.expansion_ratio = kv::value(key, raw)?,
            "lowrank_ratio" => self.lowrank_ratio = kv::value(key, raw)?,
            "se_reduction" => self.se_reduction = kv::value(key, raw)?,
            "max_scale" => self.max_scale = kv::value(key, raw)?,
            "overscale_factor" => self.overscale_factor = kv::value(key, raw)?,
            "head" => self.head = raw.parse()?,
            "sc_in_ldg" => self.sc_in_ldg = kv::boolean(key, raw)?,
            "sc_in_gdg" => self.sc_in_gdg = kv::boolean(key, raw)?,
            "direct_scale_head" => self.direct_scale_head = kv::boolean(key, raw)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("base_channels", self.base_channels.to_string()),
            ("num_ldgs", self.num_ldgs.to_string()),
            ("rbs_per_ldg", self.rbs_per_ldg.to_string()),
            ("expansion_ratio", self.expansion_ratio.to_string()),
            ("lowrank_ratio", self.lowrank_ratio.to_string()),
            ("se_reduction", self.se_reduction.to_string()),
            ("max_scale", self.max_scale.to_string()),
            ("overscale_factor", self.overscale_factor.to_string()),
            ("head", self.head.to_string()),
            ("sc_in_ldg", self.sc_in_ldg.to_string()),
            ("sc_in_gdg", self.sc_in_gdg.to_string()),
            ("direct_scale_head", self.direct_scale_head.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        kv::render(self.to_pairs())
    }

    /// Parse a complete `key = value` block. Missing keys keep their
    /// defaults except `overscale_factor`, which follows `max_scale + 1`.
    pub fn from_text(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let mut cfg = ModelConfig::default();
        for (k, v) in &map {
            if !cfg.set(k, v)? {
                return Err(Error::config(format!("unknown model key `{k}`")));
            }
        }
        if !map.contains_key("overscale_factor") {
            cfg.overscale_factor = cfg.max_scale + 1;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
