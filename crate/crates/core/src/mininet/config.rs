use crate::error::{Error, Result};

use super::layers::{Conv3d, ConvGeometry, ConvTranspose3d, Dense};

/// Encoder convolutions grow each side by one; pooling then halves it.
pub const ENCODER_GEOMETRY: ConvGeometry = ConvGeometry {
    kernel: 4,
    stride: 1,
    padding: 2,
};

/// Decoder transposed convolutions double each side.
pub const DECODER_GEOMETRY: ConvGeometry = ConvGeometry {
    kernel: 4,
    stride: 2,
    padding: 1,
};

/// Shape hyperparameters of the completion network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Resolution of the input grid and of the decoded grid.
    pub grid_resolution: usize,
    /// Resolution at which the Gridding Loss compares clouds.
    pub loss_resolution: usize,
    /// Output channels of each encoder stage, shallow to deep.
    pub channels: Vec<usize>,
    /// Widths of the dense bottleneck layers between the flattened deepest
    /// activation and its reshaped copy.
    pub bottleneck: Vec<usize>,
    /// Hidden widths of the per-point offset MLP.
    pub mlp_hidden: Vec<usize>,
    /// Number of coarse points kept after Gridding Reverse.
    pub subsample: usize,
    /// Copies of each coarse point in the final cloud.
    pub tile: usize,
    pub leaky_slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 16,
            loss_resolution: 32,
            channels: vec![8, 16],
            bottleneck: vec![256],
            mlp_hidden: vec![64, 32],
            subsample: 256,
            tile: 8,
            leaky_slope: 0.2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = self.grid_resolution;
        let stages = self.channels.len();
        if stages < 2 {
            return bad(format!("need at least 2 encoder stages, got {stages}"));
        }
        if n < 4 || !n.is_multiple_of(2) {
            return bad(format!("grid resolution must be even and >= 4, got {n}"));
        }
        if stages >= usize::BITS as usize || !n.is_multiple_of(1 << stages) {
            return bad(format!(
                "grid resolution {n} is not divisible by 2^{stages} for {stages} pooling stages"
            ));
        }
        if self.loss_resolution < 4 || !self.loss_resolution.is_multiple_of(2) {
            return bad(format!(
                "loss resolution must be even and >= 4, got {}",
                self.loss_resolution
            ));
        }
        if self
            .channels
            .iter()
            .chain(&self.bottleneck)
            .chain(&self.mlp_hidden)
            .any(|&c| c == 0)
        {
            return bad("layer widths must be positive".into());
        }
        if self.subsample == 0 || self.tile == 0 {
            return bad("subsample count and tile factor must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
            return bad(format!(
                "leaky slope must lie in [0, 1), got {}",
                self.leaky_slope
            ));
        }
        Ok(())
    }

    /// Number of points in the final cloud.
    pub fn output_points(&self) -> usize {
        self.subsample * self.tile
    }

    /// Side length after encoder stage `i` (0-based), i.e. after pooling.
    pub fn stage_size(&self, i: usize) -> usize {
        self.grid_resolution >> (i + 1)
    }

    pub fn deepest_len(&self) -> usize {
        let s = self.stage_size(self.channels.len() - 1);
        self.channels[self.channels.len() - 1] * s * s * s
    }

    pub(crate) fn encoder(&self) -> Vec<Conv3d> {
        let mut input = 1;
        self.channels
            .iter()
            .map(|&c| {
                let layer = Conv3d {
                    in_channels: input,
                    out_channels: c,
                    geometry: ENCODER_GEOMETRY,
                };
                input = c;
                layer
            })
            .collect()
    }

    /// Dense layers from the flattened deepest activation back to its size.
    pub(crate) fn bottleneck_layers(&self) -> Vec<Dense> {
        let flat = self.deepest_len();
        let mut widths = vec![flat];
        widths.extend(&self.bottleneck);
        widths.push(flat);
        widths
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
            })
            .collect()
    }

    /// Transposed convolutions from deep to shallow; the last one emits the
    /// single-channel grid.
    pub(crate) fn decoder(&self) -> Vec<ConvTranspose3d> {
        let l = self.channels.len();
        (0..l)
            .map(|j| {
                let in_channels = self.channels[l - 1 - j];
                let out_channels = if j + 1 == l {
                    1
                } else {
                    self.channels[l - 2 - j]
                };
                ConvTranspose3d {
                    in_channels,
                    out_channels,
                    geometry: DECODER_GEOMETRY,
                }
            })
            .collect()
    }

    /// Width of the concatenated per-point features fed to the MLP: every
    /// decoder level except the last contributes 8 corners of its channels.
    pub fn feature_width(&self) -> usize {
        let l = self.channels.len();
        8 * self.channels[..l - 1].iter().sum::<usize>()
    }

    pub(crate) fn mlp(&self) -> Vec<Dense> {
        let mut widths = vec![self.feature_width()];
        widths.extend(&self.mlp_hidden);
        widths.push(3 * self.tile);
        widths
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
            })
            .collect()
    }

    /// `key = value` lines describing this config, in a fixed order.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "grid_resolution = {}\nloss_resolution = {}\nchannels = {}\nbottleneck = {}\n\
             mlp_hidden = {}\nsubsample = {}\ntile = {}\nleaky_slope = {:?}\n",
            self.grid_resolution,
            self.loss_resolution,
            list(&self.channels),
            list(&self.bottleneck),
            list(&self.mlp_hidden),
            self.subsample,
            self.tile,
            self.leaky_slope,
        )
    }

    /// Applies one `key = value` setting. Returns `false` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "grid_resolution" => self.grid_resolution = parse_value(key, value)?,
            "loss_resolution" => self.loss_resolution = parse_value(key, value)?,
            "channels" => self.channels = parse_list(key, value)?,
            "bottleneck" => self.bottleneck = parse_list(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse_list(key, value)?,
            "subsample" => self.subsample = parse_value(key, value)?,
            "tile" => self.tile = parse_value(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

/// Comma-separated list; an empty value is an empty list.
pub(crate) fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}
