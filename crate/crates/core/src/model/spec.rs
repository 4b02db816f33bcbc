use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Connectivity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    GacUnet,
    PlainUnet,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::GacUnet => "gac-unet",
            Variant::PlainUnet => "plain-unet",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gac-unet" => Ok(Variant::GacUnet),
            "plain-unet" => Ok(Variant::PlainUnet),
            other => Err(Error::InvalidSpec(format!(
                "unknown variant {other:?} (gac-unet | plain-unet)"
            ))),
        }
    }
}

/// Declarative network configuration. Parameter shapes are a pure function of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Square input extent.
    pub input_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel width of each encoder stage; one max-pool per stage.
    pub widths: Vec<usize>,
    pub connectivity: Connectivity,
    pub gat_out: usize,
    pub cheb_order: usize,
    pub cheb_out: usize,
    pub center_of_mass: bool,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::new(Variant::GacUnet, 256, vec![16, 32, 64])
    }
}

impl ModelSpec {
    /// Graph widths follow the deepest encoder width; Chebyshev order 2.
    pub fn new(variant: Variant, input_size: usize, widths: Vec<usize>) -> Self {
        let deepest = widths.last().copied().unwrap_or(0);
        ModelSpec {
            variant,
            input_size,
            in_channels: 3,
            out_channels: 1,
            widths,
            connectivity: Connectivity::Four,
            gat_out: deepest,
            cheb_order: 2,
            cheb_out: deepest,
            center_of_mass: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.widths.is_empty() {
            return fail("at least one encoder stage is required".into());
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return fail(format!("encoder width {i} must be positive"));
        }
        if self.input_size == 0 {
            return fail("input_size must be positive".into());
        }
        let stages = self.widths.len() as u32;
        let factor = 1usize.checked_shl(stages).unwrap_or(0);
        if factor == 0 || self.input_size % factor != 0 {
            return fail(format!(
                "input_size {} must be divisible by 2^{stages} for {stages} pooling stages",
                self.input_size
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.variant == Variant::GacUnet && (self.gat_out == 0 || self.cheb_out == 0) {
            return fail("gat_out and cheb_out must be positive".into());
        }
        Ok(())
    }

    /// Side of the square feature grid entering the bottleneck.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.widths.len()
    }

    /// Channels leaving the bottleneck.
    pub fn bottleneck_channels(&self) -> usize {
        match self.variant {
            Variant::PlainUnet => *self.widths.last().expect("validated"),
            Variant::GacUnet => self.cheb_out + if self.center_of_mass { 2 } else { 0 },
        }
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        format!(
            "variant={}\ninput_size={}\nin_channels={}\nout_channels={}\nwidths={}\nconnectivity={}\ngat_out={}\ncheb_order={}\ncheb_out={}\ncenter_of_mass={}\nseed={}\n",
            self.variant,
            self.input_size,
            self.in_channels,
            self.out_channels,
            widths.join(","),
            self.connectivity.count(),
            self.gat_out,
            self.cheb_order,
            self.cheb_out,
            self.center_of_mass,
            self.seed
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut spec = ModelSpec::new(Variant::GacUnet, 256, Vec::new());
        let mut graph_widths_set = (false, false);
        for (k, v) in &map {
            spec.apply(k, v)?;
            match k.as_str() {
                "gat_out" => graph_widths_set.0 = true,
                "cheb_out" => graph_widths_set.1 = true,
                _ => {}
            }
        }
        if !map.contains_key("widths") {
            spec.widths = vec![16, 32, 64];
        }
        let deepest = *spec.widths.last().unwrap_or(&0);
        if !graph_widths_set.0 {
            spec.gat_out = deepest;
        }
        if !graph_widths_set.1 {
            spec.cheb_out = deepest;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Sets one field from its text form. Returns an error for unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<N: FromStr>(key: &str, v: &str) -> Result<N> {
            v.parse()
                .map_err(|_| Error::InvalidSpec(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "input_size" => self.input_size = num(key, value)?,
            "in_channels" => self.in_channels = num(key, value)?,
            "out_channels" => self.out_channels = num(key, value)?,
            "widths" => {
                self.widths = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "connectivity" => {
                self.connectivity = Connectivity::from_count(num(key, value)?)
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?
            }
            "gat_out" => self.gat_out = num(key, value)?,
            "cheb_order" => self.cheb_order = num(key, value)?,
            "cheb_out" => self.cheb_out = num(key, value)?,
            "center_of_mass" => self.center_of_mass = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::InvalidSpec(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "variant",
        "input_size",
        "in_channels",
        "out_channels",
        "widths",
        "connectivity",
        "gat_out",
        "cheb_order",
        "cheb_out",
        "center_of_mass",
        "seed",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut spec = ModelSpec::new(Variant::PlainUnet, 64, vec![8, 16]).with_seed(9);
        spec.connectivity = Connectivity::Eight;
        spec.cheb_order = 3;
        assert_eq!(ModelSpec::parse(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn validation_names_the_constraint() {
        let err = ModelSpec::new(Variant::GacUnet, 60, vec![8, 16, 32])
            .validate()
            .unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
        let err = ModelSpec::new(Variant::GacUnet, 64, vec![])
            .validate()
            .unwrap_err();
        assert!(err.to_string().contains("encoder stage"), "{err}");
        let err = ModelSpec::new(Variant::GacUnet, 64, vec![8, 0])
            .validate()
            .unwrap_err();
        assert!(err.to_string().contains("width 1"), "{err}");
        assert!(ModelSpec::parse("bogus=1").is_err());
    }

    #[test]
    fn graph_widths_follow_encoder_by_default() {
        let spec = ModelSpec::parse("widths=4,8\ninput_size=16").unwrap();
        assert_eq!((spec.gat_out, spec.cheb_out), (8, 8));
        assert_eq!(spec.bottleneck_size(), 4);
    }
}
