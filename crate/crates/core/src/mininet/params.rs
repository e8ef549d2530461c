use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::config::NetConfig;

/// Value every decoded-grid vertex starts from, before the input grid is
/// added. Positive so that every cell emits a coarse point at step 0.
pub const DECODER_OUTPUT_BIAS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    Uniform {
        fan_in: usize,
    },
    Constant(f64),
}

/// Name and length of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub len: usize,
    init: Init,
}

/// Parameter tensors in declaration order: encoder, bottleneck, decoder,
/// MLP, each as weight then bias.
pub fn layout(config: &NetConfig) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, weight: usize, bias: usize, w: Init, b: Init| {
        specs.push(TensorSpec {
            name: format!("{name}.weight"),
            len: weight,
            init: w,
        });
        specs.push(TensorSpec {
            name: format!("{name}.bias"),
            len: bias,
            init: b,
        });
    };
    let uniform = |fan_in| Init::Uniform { fan_in };
    for (i, l) in config.encoder().iter().enumerate() {
        let u = uniform(l.fan_in());
        push(format!("encoder{i}"), l.weight_len(), l.out_channels, u, u);
    }
    for (i, l) in config.bottleneck_layers().iter().enumerate() {
        let u = uniform(l.inputs);
        push(format!("bottleneck{i}"), l.weight_len(), l.outputs, u, u);
    }
    let decoder = config.decoder();
    for (i, l) in decoder.iter().enumerate() {
        let u = uniform(l.fan_in());
        let (w, b) = if i + 1 == decoder.len() {
            (Init::Constant(0.0), Init::Constant(DECODER_OUTPUT_BIAS))
        } else {
            (u, u)
        };
        push(format!("decoder{i}"), l.weight_len(), l.out_channels, w, b);
    }
    let mlp = config.mlp();
    for (i, l) in mlp.iter().enumerate() {
        let u = if i + 1 == mlp.len() {
            Init::Constant(0.0)
        } else {
            uniform(l.inputs)
        };
        push(format!("mlp{i}"), l.weight_len(), l.outputs, u, u);
    }
    specs
}

/// Network parameters plus a version counter bumped on every mutation, so
/// activation records from older parameters can be detected.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    tensors: Vec<Vec<f64>>,
    version: u64,
}

impl Params {
    /// Uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`, except two layers:
    /// the final MLP layer starts at zero so the untrained offsets vanish,
    /// and the last transposed convolution starts with zero weights and a
    /// [`DECODER_OUTPUT_BIAS`] bias so every decoded cell is active.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout(config)
            .iter()
            .map(|s| match s.init {
                Init::Constant(v) => vec![v; s.len],
                Init::Uniform { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    (0..s.len).map(|_| rng.gen_range(-bound..=bound)).collect()
                }
            })
            .collect();
        Ok(Self {
            tensors,
            version: 0,
        })
    }

    /// Wraps tensors after checking them against the layout of `config`.
    pub fn from_tensors(config: &NetConfig, tensors: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let specs = layout(config);
        if specs.len() != tensors.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.len != t.len() {
                return Err(Error::contract(format!(
                    "tensor {} has {} values, expected {}",
                    s.name,
                    t.len(),
                    s.len
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!(
                    "tensor {} has non-finite values",
                    s.name
                )));
            }
        }
        Ok(Self {
            tensors,
            version: 0,
        })
    }

    /// Zeros shaped like `self`, used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            version: 0,
        }
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        &self.tensors[i]
    }

    /// Mutable access; counts as a parameter update.
    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        self.version += 1;
        &mut self.tensors
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub(crate) fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub(crate) fn set_tensor(&mut self, i: usize, values: Vec<f64>) {
        self.tensors[i] = values;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_respects_layout_and_bounds() {
        let c = NetConfig::default();
        let p = Params::init(&c, 3).unwrap();
        let specs = layout(&c);
        assert_eq!(p.tensors().len(), specs.len());
        for (s, t) in specs.iter().zip(p.tensors()) {
            assert_eq!(s.len, t.len(), "{}", s.name);
            match s.init {
                Init::Uniform { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    assert!(t.iter().all(|v| v.abs() <= bound));
                }
                Init::Constant(c) => assert!(t.iter().all(|v| *v == c)),
            }
        }
        let value = |name: &str| {
            let i = specs.iter().position(|s| s.name == name).unwrap();
            p.tensor(i).to_vec()
        };
        assert!(value("mlp2.weight")
            .iter()
            .chain(&value("mlp2.bias"))
            .all(|v| *v == 0.0));
        assert!(value("decoder1.weight").iter().all(|v| *v == 0.0));
        assert_eq!(value("decoder1.bias"), vec![DECODER_OUTPUT_BIAS]);
        assert_eq!(Params::init(&c, 3).unwrap(), p);
        assert_ne!(Params::init(&c, 4).unwrap(), p);
    }

    #[test]
    fn mutation_bumps_version() {
        let c = NetConfig::default();
        let mut p = Params::init(&c, 0).unwrap();
        let v = p.version();
        p.tensors_mut()[0][0] = 1.0;
        assert!(p.version() > v);
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let c = NetConfig::default();
        let p = Params::init(&c, 0).unwrap();
        let mut t = p.tensors().to_vec();
        assert!(Params::from_tensors(&c, t.clone()).is_ok());
        t[1].pop();
        assert!(Params::from_tensors(&c, t).is_err());
    }
}
