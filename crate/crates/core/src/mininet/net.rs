use crate::cubic::{
    cubic_feature_sampling_backward, cubic_feature_sampling_forward, random_subsample, CubicRecord,
    FeatureGrid, PointFeatures,
};
use crate::error::{Error, Result};
use crate::grid::{Point3, PointCloud, Resolution, ScalarGrid};
use crate::gridding::gridding_forward;
use crate::reverse::{gridding_reverse_backward, gridding_reverse_forward, ReverseRecord};

use super::config::NetConfig;
use super::layers::{
    leaky_relu, leaky_relu_backward, max_pool2, max_pool2_backward, Conv3d, ConvTranspose3d, Dense,
    Volume,
};
use super::params::Params;

struct EncoderStage {
    input: Volume,
    pre: Volume,
    argmax: Vec<usize>,
}

struct DenseStep {
    input: Vec<f64>,
    pre: Vec<f64>,
}

struct DecoderStage {
    input: Volume,
    pre: Volume,
}

/// Everything [`MiniNet::backward`] needs from one forward pass.
pub struct ForwardRecord {
    version: u64,
    encoder: Vec<EncoderStage>,
    deepest: Volume,
    bottleneck: Vec<DenseStep>,
    decoder: Vec<DecoderStage>,
    all_coarse: PointCloud,
    reverse: ReverseRecord,
    subsample: Vec<usize>,
    cubic: Vec<CubicRecord>,
    mlp: Vec<DenseStep>,
}

impl ForwardRecord {
    /// Parameter version the record was computed with.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Every point emitted by Gridding Reverse, before subsampling.
    pub fn all_coarse(&self) -> &PointCloud {
        &self.all_coarse
    }

    /// Rows of [`Self::all_coarse`] kept as the coarse cloud.
    pub fn subsample_indices(&self) -> &[usize] {
        &self.subsample
    }
}

pub struct ForwardOutput {
    /// The subsampled Gridding Reverse output.
    pub coarse: PointCloud,
    /// `tile` offset copies of every coarse point, point-major.
    pub complete: PointCloud,
    pub record: ForwardRecord,
}

/// The coarse-to-fine completion network.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniNet {
    config: NetConfig,
    encoder: Vec<Conv3d>,
    bottleneck: Vec<Dense>,
    decoder: Vec<ConvTranspose3d>,
    mlp: Vec<Dense>,
}

impl MiniNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: config.encoder(),
            bottleneck: config.bottleneck_layers(),
            decoder: config.decoder(),
            mlp: config.mlp(),
            config,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn encoder_param(&self, i: usize) -> usize {
        2 * i
    }

    fn bottleneck_param(&self, i: usize) -> usize {
        2 * (self.encoder.len() + i)
    }

    fn decoder_param(&self, i: usize) -> usize {
        2 * (self.encoder.len() + self.bottleneck.len() + i)
    }

    fn mlp_param(&self, i: usize) -> usize {
        2 * (self.encoder.len() + self.bottleneck.len() + self.decoder.len() + i)
    }

    fn check_params(&self, params: &Params) -> Result<()> {
        let expected =
            2 * (self.encoder.len() + self.bottleneck.len() + self.decoder.len() + self.mlp.len());
        if params.tensors().len() != expected {
            return Err(Error::contract(format!(
                "parameters have {} tensors, network expects {expected}",
                params.tensors().len()
            )));
        }
        Ok(())
    }

    /// Completes `partial`; `seed` drives the coarse-point subsampling.
    ///
    /// Fails with a domain error when the decoded grid is zero everywhere and
    /// Gridding Reverse emits no points.
    pub fn forward(
        &self,
        params: &Params,
        partial: &PointCloud,
        seed: u64,
    ) -> Result<ForwardOutput> {
        self.check_params(params)?;
        if partial.is_empty() {
            return Err(Error::domain("partial cloud is empty"));
        }
        let cfg = &self.config;
        let n = cfg.grid_resolution;
        let slope = cfg.leaky_slope;
        let (grid, _) = gridding_forward(partial, n)?;
        let input_grid = Volume::from_data(1, n, grid.into_values());

        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut x = input_grid.clone();
        for (i, layer) in self.encoder.iter().enumerate() {
            let p = self.encoder_param(i);
            let pre = layer.forward(&x, params.tensor(p), params.tensor(p + 1));
            let act = Volume::from_data(pre.channels, pre.size, leaky_relu(&pre.data, slope));
            let (pooled, argmax) = max_pool2(&act);
            encoder.push(EncoderStage {
                input: std::mem::replace(&mut x, pooled.clone()),
                pre,
                argmax,
            });
            skips.push(pooled);
        }
        let deepest = x;

        let mut bottleneck = Vec::with_capacity(self.bottleneck.len());
        let mut h = deepest.data.clone();
        for (i, layer) in self.bottleneck.iter().enumerate() {
            let p = self.bottleneck_param(i);
            let pre = layer.forward(&h, params.tensor(p), params.tensor(p + 1));
            let next = leaky_relu(&pre, 0.0);
            bottleneck.push(DenseStep {
                input: std::mem::replace(&mut h, next),
                pre,
            });
        }
        let mut d = Volume::from_data(deepest.channels, deepest.size, h);
        d.add_assign(&deepest);

        let l = self.decoder.len();
        let mut decoder = Vec::with_capacity(l);
        for (j, layer) in self.decoder.iter().enumerate() {
            let p = self.decoder_param(j);
            let pre = layer.forward(&d, params.tensor(p), params.tensor(p + 1));
            let mut sum = Volume::from_data(pre.channels, pre.size, leaky_relu(&pre.data, 0.0));
            sum.add_assign(if j + 1 < l {
                &skips[l - 2 - j]
            } else {
                &input_grid
            });
            decoder.push(DecoderStage {
                input: std::mem::replace(&mut d, sum),
                pre,
            });
        }
        let decoded = ScalarGrid::new(Resolution::new(n)?, d.data)?;
        let (all_coarse, reverse) = gridding_reverse_forward(&decoded)?;
        if all_coarse.is_empty() {
            return Err(Error::domain(
                "decoded grid is empty; gridding reverse emitted no points",
            ));
        }
        let sub = random_subsample(&all_coarse, None, cfg.subsample, seed)?;
        let coarse = sub.cloud;

        // Decoder levels other than the last are the inputs of the next stage.
        let mut blocks = Vec::with_capacity(l - 1);
        let mut cubic = Vec::with_capacity(l - 1);
        for stage in &decoder[1..] {
            let v = &stage.input;
            let fg = FeatureGrid::new(Resolution::new(v.size)?, v.channels, v.data.clone())?;
            let (f, rec) = cubic_feature_sampling_forward(&coarse, &fg)?;
            blocks.push(f);
            cubic.push(rec);
        }
        let mut h = PointFeatures::concat_columns(&blocks)?.into_data();

        let mut mlp = Vec::with_capacity(self.mlp.len());
        for (i, layer) in self.mlp.iter().enumerate() {
            let p = self.mlp_param(i);
            let pre = layer.forward(&h, params.tensor(p), params.tensor(p + 1));
            let next = if i + 1 < self.mlp.len() {
                leaky_relu(&pre, 0.0)
            } else {
                pre.clone()
            };
            mlp.push(DenseStep {
                input: std::mem::replace(&mut h, next),
                pre,
            });
        }
        let offsets = h;

        let r = cfg.tile;
        let mut complete = Vec::with_capacity(coarse.len() * r);
        for (i, c) in coarse.points().iter().enumerate() {
            for j in 0..r {
                let o = &offsets[(i * r + j) * 3..(i * r + j) * 3 + 3];
                complete.push([c[0] + o[0], c[1] + o[1], c[2] + o[2]]);
            }
        }
        if complete.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("network produced non-finite points"));
        }
        let complete = PointCloud::from_unbounded(complete)?;

        Ok(ForwardOutput {
            coarse,
            complete,
            record: ForwardRecord {
                version: params.version(),
                encoder,
                deepest,
                bottleneck,
                decoder,
                all_coarse,
                reverse,
                subsample: sub.indices,
                cubic,
                mlp,
            },
        })
    }

    /// Parameter gradients given loss gradients on the complete and coarse
    /// clouds of the forward pass that produced `record`.
    pub fn backward(
        &self,
        params: &Params,
        record: &ForwardRecord,
        grad_complete: &[Point3],
        grad_coarse: &[Point3],
    ) -> Result<Params> {
        self.check_params(params)?;
        if record.version != params.version() {
            return Err(Error::contract(format!(
                "activation record is from parameter version {}, parameters are at {}",
                record.version,
                params.version()
            )));
        }
        let cfg = &self.config;
        let (ks, r) = (record.subsample.len(), cfg.tile);
        if grad_complete.len() != ks * r || grad_coarse.len() != ks {
            return Err(Error::contract(format!(
                "gradients cover {} complete and {} coarse points, forward produced {} and {ks}",
                grad_complete.len(),
                grad_coarse.len(),
                ks * r
            )));
        }
        let mut grads = params.zeros_like();
        let mut put = |i: usize, w: Vec<f64>, b: Vec<f64>| {
            grads.set_tensor(i, w);
            grads.set_tensor(i + 1, b);
        };

        // Offsets receive the complete-cloud gradient as is; the tiled
        // coarse copies sum it.
        let mut g: Vec<f64> = grad_complete.iter().flatten().copied().collect();
        let mut g_coarse = grad_coarse.to_vec();
        for (i, gc) in g_coarse.iter_mut().enumerate() {
            for gf in &grad_complete[i * r..(i + 1) * r] {
                for a in 0..3 {
                    gc[a] += gf[a];
                }
            }
        }

        for (i, layer) in self.mlp.iter().enumerate().rev() {
            let step = &record.mlp[i];
            if i + 1 < self.mlp.len() {
                g = leaky_relu_backward(&step.pre, &g, 0.0);
            }
            let p = self.mlp_param(i);
            let (gx, gw, gb) = layer.backward(&step.input, params.tensor(p), &g, true);
            put(p, gw, gb);
            g = gx;
        }

        // Split the feature gradient per decoder level and scatter it back.
        let width = cfg.feature_width();
        let mut injected = Vec::with_capacity(record.cubic.len());
        let mut col = 0;
        for (rec, stage) in record.cubic.iter().zip(&record.decoder[1..]) {
            let w = 8 * stage.input.channels;
            let mut block = Vec::with_capacity(ks * w);
            for row in 0..ks {
                block.extend_from_slice(&g[row * width + col..row * width + col + w]);
            }
            col += w;
            let (fg, _) = cubic_feature_sampling_backward(rec, &PointFeatures::new(w, block)?)?;
            injected.push(Volume::from_data(
                stage.input.channels,
                stage.input.size,
                fg.into_values(),
            ));
        }

        // Coarse gradients flow back through the subsampling and Gridding
        // Reverse only; sampling coordinates carry no gradient.
        let mut g_all = vec![[0.0; 3]; record.all_coarse.len()];
        for (i, &src) in record.subsample.iter().enumerate() {
            for a in 0..3 {
                g_all[src][a] += g_coarse[i][a];
            }
        }
        let g_grid = gridding_reverse_backward(&record.reverse, &record.all_coarse, &g_all)?;
        let n = cfg.grid_resolution;
        let mut g_sum = Volume::from_data(1, n, g_grid.into_values());

        let enc_len = self.encoder.len();
        let mut g_skips: Vec<Volume> = record
            .encoder
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let next = record
                    .encoder
                    .get(i + 1)
                    .map(|s| &s.input)
                    .unwrap_or(&record.deepest);
                Volume::zeros(next.channels, next.size)
            })
            .collect();
        let l = self.decoder.len();
        let mut g_top = None;
        for (j, layer) in self.decoder.iter().enumerate().rev() {
            if j + 1 < l {
                g_skips[l - 2 - j].add_assign(&g_sum);
            }
            let stage = &record.decoder[j];
            let g_pre = Volume::from_data(
                stage.pre.channels,
                stage.pre.size,
                leaky_relu_backward(&stage.pre.data, &g_sum.data, 0.0),
            );
            let p = self.decoder_param(j);
            let lg = layer.backward(&stage.input, params.tensor(p), &g_pre, true);
            put(p, lg.weight, lg.bias);
            let mut g_in = lg.input.expect("input gradient requested");
            if j > 0 {
                g_in.add_assign(&injected[j - 1]);
                g_sum = g_in;
            } else {
                g_top = Some(g_in);
            }
        }

        // The bottleneck output is summed with the deepest activation.
        let g_top = g_top.expect("decoder has stages");
        let mut g = g_top.data.clone();
        for (i, layer) in self.bottleneck.iter().enumerate().rev() {
            let step = &record.bottleneck[i];
            g = leaky_relu_backward(&step.pre, &g, 0.0);
            let p = self.bottleneck_param(i);
            let (gx, gw, gb) = layer.backward(&step.input, params.tensor(p), &g, true);
            put(p, gw, gb);
            g = gx;
        }
        let deepest = &mut g_skips[enc_len - 1];
        for ((d, a), b) in deepest.data.iter_mut().zip(&g_top.data).zip(&g) {
            *d += a + b;
        }

        for (i, layer) in self.encoder.iter().enumerate().rev() {
            let stage = &record.encoder[i];
            let g_act = max_pool2_backward(
                stage.pre.channels,
                stage.pre.size,
                &stage.argmax,
                &g_skips[i],
            );
            let g_pre = Volume::from_data(
                stage.pre.channels,
                stage.pre.size,
                leaky_relu_backward(&stage.pre.data, &g_act.data, cfg.leaky_slope),
            );
            let p = self.encoder_param(i);
            let lg = layer.backward(&stage.input, params.tensor(p), &g_pre, i > 0);
            put(p, lg.weight, lg.bias);
            if let Some(g_in) = lg.input {
                g_skips[i - 1].add_assign(&g_in);
            }
        }
        Ok(grads)
    }
}
