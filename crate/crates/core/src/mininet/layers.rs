//! Dense-volume layers with explicit backward passes: 3D convolution,
//! transposed 3D convolution, 2^3 max pooling, (leaky) ReLU, and a fully
//! connected layer applied row-wise.

/// A `channels x size^3` activation volume, channel-major then x, y, z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(channels: usize, size: usize) -> Self {
        Self {
            channels,
            size,
            data: vec![0.0; channels * size * size * size],
        }
    }

    pub fn from_data(channels: usize, size: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * size * size * size, "volume shape");
        Self {
            channels,
            size,
            data,
        }
    }

    pub fn spatial(&self) -> usize {
        self.size * self.size * self.size
    }

    pub fn add_assign(&mut self, other: &Volume) {
        assert_eq!(
            (self.channels, self.size),
            (other.channels, other.size),
            "volume shapes differ"
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Kernel size, stride, and zero padding shared by all three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn conv_output(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn transposed_output(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.padding
    }
}

/// Per kernel tap, the (input, output) index pairs it connects along one axis.
type Taps = Vec<Vec<(usize, usize)>>;

fn conv_taps(g: ConvGeometry, input: usize, output: usize) -> Taps {
    (0..g.kernel)
        .map(|k| {
            (0..output)
                .filter_map(|o| {
                    let i = (o * g.stride + k) as isize - g.padding as isize;
                    (i >= 0 && (i as usize) < input).then_some((i as usize, o))
                })
                .collect()
        })
        .collect()
}

fn transposed_taps(g: ConvGeometry, input: usize, output: usize) -> Taps {
    (0..g.kernel)
        .map(|k| {
            (0..input)
                .filter_map(|i| {
                    let o = (i * g.stride + k) as isize - g.padding as isize;
                    (o >= 0 && (o as usize) < output).then_some((i, o as usize))
                })
                .collect()
        })
        .collect()
}

/// Weight layout of a convolution-like layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WeightOrder {
    /// `[out][in][k][k][k]`
    OutIn,
    /// `[in][out][k][k][k]`
    InOut,
}

struct Correlation<'a> {
    in_ch: usize,
    out_ch: usize,
    in_size: usize,
    out_size: usize,
    kernel: usize,
    order: WeightOrder,
    taps: &'a Taps,
}

impl Correlation<'_> {
    fn weight_base(&self, oc: usize, ic: usize) -> usize {
        let k3 = self.kernel * self.kernel * self.kernel;
        match self.order {
            WeightOrder::OutIn => (oc * self.in_ch + ic) * k3,
            WeightOrder::InOut => (ic * self.out_ch + oc) * k3,
        }
    }

    /// Visits every connected (input, output) element pair for channel pair
    /// (oc, ic) and kernel tap `w_idx`.
    #[inline]
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize, usize)) {
        let (si, so, k) = (self.in_size, self.out_size, self.kernel);
        for oc in 0..self.out_ch {
            for ic in 0..self.in_ch {
                let wb = self.weight_base(oc, ic);
                for kx in 0..k {
                    for ky in 0..k {
                        for kz in 0..k {
                            let w_idx = wb + (kx * k + ky) * k + kz;
                            for &(ix, ox) in &self.taps[kx] {
                                for &(iy, oy) in &self.taps[ky] {
                                    let ib = ((ic * si + ix) * si + iy) * si;
                                    let ob = ((oc * so + ox) * so + oy) * so;
                                    for &(iz, oz) in &self.taps[kz] {
                                        visit(w_idx, ib + iz, ob + oz);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64]) -> Volume {
        let mut out = Volume::zeros(self.out_ch, self.out_size);
        let sp = out.spatial();
        for (chunk, b) in out.data.chunks_mut(sp).zip(bias) {
            chunk.fill(*b);
        }
        self.for_each_tap(|w, i, o| out.data[o] += weight[w] * input[i]);
        out
    }

    fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &Volume,
        want_input: bool,
    ) -> LayerGrads {
        let mut grad_in = vec![0.0; input.len()];
        let mut grad_w = vec![0.0; weight.len()];
        let g = &grad_out.data;
        if want_input {
            self.for_each_tap(|w, i, o| {
                grad_in[i] += weight[w] * g[o];
                grad_w[w] += input[i] * g[o];
            });
        } else {
            self.for_each_tap(|w, i, o| grad_w[w] += input[i] * g[o]);
        }
        let sp = grad_out.spatial();
        let grad_b = (0..self.out_ch)
            .map(|oc| g[oc * sp..(oc + 1) * sp].iter().sum())
            .collect();
        LayerGrads {
            input: want_input.then(|| Volume::from_data(self.in_ch, self.in_size, grad_in)),
            weight: grad_w,
            bias: grad_b,
        }
    }
}

/// Gradients of a parameterized layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Volume>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// 3D convolution, weights `[out][in][k][k][k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
}

impl Conv3d {
    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.geometry.kernel.pow(3)
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.geometry.kernel.pow(3)
    }

    pub fn output_size(&self, input: usize) -> usize {
        self.geometry.conv_output(input)
    }

    fn correlation<'a>(&self, input: usize, taps: &'a Taps) -> Correlation<'a> {
        Correlation {
            in_ch: self.in_channels,
            out_ch: self.out_channels,
            in_size: input,
            out_size: self.output_size(input),
            kernel: self.geometry.kernel,
            order: WeightOrder::OutIn,
            taps,
        }
    }

    fn taps(&self, input: usize) -> Taps {
        conv_taps(self.geometry, input, self.output_size(input))
    }

    pub fn forward(&self, input: &Volume, weight: &[f64], bias: &[f64]) -> Volume {
        assert_eq!(input.channels, self.in_channels, "conv input channels");
        let taps = self.taps(input.size);
        self.correlation(input.size, &taps)
            .forward(&input.data, weight, bias)
    }

    pub fn backward(
        &self,
        input: &Volume,
        weight: &[f64],
        grad_out: &Volume,
        want_input: bool,
    ) -> LayerGrads {
        let taps = self.taps(input.size);
        self.correlation(input.size, &taps)
            .backward(&input.data, weight, grad_out, want_input)
    }
}

/// Transposed 3D convolution, weights `[in][out][k][k][k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTranspose3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
}

impl ConvTranspose3d {
    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.geometry.kernel.pow(3)
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.geometry.kernel.pow(3)
    }

    pub fn output_size(&self, input: usize) -> usize {
        self.geometry.transposed_output(input)
    }

    fn taps(&self, input: usize) -> Taps {
        transposed_taps(self.geometry, input, self.output_size(input))
    }

    fn correlation<'a>(&self, input: usize, taps: &'a Taps) -> Correlation<'a> {
        Correlation {
            in_ch: self.in_channels,
            out_ch: self.out_channels,
            in_size: input,
            out_size: self.output_size(input),
            kernel: self.geometry.kernel,
            order: WeightOrder::InOut,
            taps,
        }
    }

    pub fn forward(&self, input: &Volume, weight: &[f64], bias: &[f64]) -> Volume {
        assert_eq!(
            input.channels, self.in_channels,
            "transposed conv input channels"
        );
        let taps = self.taps(input.size);
        self.correlation(input.size, &taps)
            .forward(&input.data, weight, bias)
    }

    pub fn backward(
        &self,
        input: &Volume,
        weight: &[f64],
        grad_out: &Volume,
        want_input: bool,
    ) -> LayerGrads {
        let taps = self.taps(input.size);
        self.correlation(input.size, &taps)
            .backward(&input.data, weight, grad_out, want_input)
    }
}

/// `2^3` max pooling with stride 2; odd trailing slices are dropped.
/// Returns the pooled volume and, per output element, the flat input index
/// that won (first maximum in x, y, z scan order).
pub fn max_pool2(input: &Volume) -> (Volume, Vec<usize>) {
    let si = input.size;
    let so = si / 2;
    let mut out = Volume::zeros(input.channels, so);
    let mut argmax = vec![0; out.data.len()];
    for c in 0..input.channels {
        for x in 0..so {
            for y in 0..so {
                for z in 0..so {
                    let mut best = (usize::MAX, f64::NEG_INFINITY);
                    for dx in 0..2 {
                        for dy in 0..2 {
                            for dz in 0..2 {
                                let i = ((c * si + 2 * x + dx) * si + 2 * y + dy) * si + 2 * z + dz;
                                if input.data[i] > best.1 {
                                    best = (i, input.data[i]);
                                }
                            }
                        }
                    }
                    let o = ((c * so + x) * so + y) * so + z;
                    out.data[o] = best.1;
                    argmax[o] = best.0;
                }
            }
        }
    }
    (out, argmax)
}

pub fn max_pool2_backward(
    input_channels: usize,
    input_size: usize,
    argmax: &[usize],
    grad_out: &Volume,
) -> Volume {
    let mut grad = Volume::zeros(input_channels, input_size);
    for (o, &i) in argmax.iter().enumerate() {
        grad.data[i] += grad_out.data[o];
    }
    grad
}

/// Leaky ReLU; `slope = 0` gives the plain ReLU. Zero takes the negative
/// branch.
pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect()
}

pub fn leaky_relu_backward(pre: &[f64], grad_out: &[f64], slope: f64) -> Vec<f64> {
    pre.iter()
        .zip(grad_out)
        .map(|(&p, &g)| if p > 0.0 { g } else { slope * g })
        .collect()
}

/// Fully connected layer `y = W x + b`, weights `[out][in]`, applied to each
/// row of a row-major batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let rows = x.len() / self.inputs;
        let mut y = Vec::with_capacity(rows * self.outputs);
        for r in 0..rows {
            let xr = &x[r * self.inputs..(r + 1) * self.inputs];
            for o in 0..self.outputs {
                let wr = &weight[o * self.inputs..(o + 1) * self.inputs];
                let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
                y.push(dot + bias[o]);
            }
        }
        y
    }

    /// Returns `(grad_x, grad_w, grad_b)`; `grad_x` is empty unless requested.
    pub fn backward(
        &self,
        x: &[f64],
        weight: &[f64],
        grad_y: &[f64],
        want_input: bool,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let rows = x.len() / self.inputs;
        let mut gx = if want_input {
            vec![0.0; x.len()]
        } else {
            Vec::new()
        };
        let mut gw = vec![0.0; weight.len()];
        let mut gb = vec![0.0; self.outputs];
        for r in 0..rows {
            let xr = &x[r * self.inputs..(r + 1) * self.inputs];
            for o in 0..self.outputs {
                let g = grad_y[r * self.outputs + o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let wr = &weight[o * self.inputs..(o + 1) * self.inputs];
                let gwr = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                for i in 0..self.inputs {
                    gwr[i] += g * xr[i];
                }
                if want_input {
                    let gxr = &mut gx[r * self.inputs..(r + 1) * self.inputs];
                    for i in 0..self.inputs {
                        gxr[i] += g * wr[i];
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const STEP: f64 = 1e-6;
    const TOL: f64 = 1e-4;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn check(analytic: f64, numeric: f64, what: &str) {
        let scale = analytic.abs().max(numeric.abs()).max(1e-3);
        let rel = (analytic - numeric).abs() / scale;
        assert!(
            rel <= TOL,
            "{what}: analytic {analytic} numeric {numeric} rel {rel}"
        );
    }

    /// Central difference of `f` along coordinate `i` of `x`.
    fn central(x: &[f64], i: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
        let mut p = x.to_vec();
        p[i] += STEP;
        let up = f(&p);
        p[i] -= 2.0 * STEP;
        let down = f(&p);
        (up - down) / (2.0 * STEP)
    }

    #[test]
    fn geometry_sizes() {
        let enc = ConvGeometry {
            kernel: 4,
            stride: 1,
            padding: 2,
        };
        assert_eq!(enc.conv_output(16), 17);
        assert_eq!(enc.conv_output(64), 65);
        let dec = ConvGeometry {
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        assert_eq!(dec.transposed_output(4), 8);
        assert_eq!(dec.transposed_output(32), 64);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Conv3d {
            in_channels: 2,
            out_channels: 3,
            geometry: ConvGeometry {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
        };
        let x = Volume::from_data(2, 5, random_vec(&mut rng, 2 * 125));
        let w = random_vec(&mut rng, layer.weight_len());
        let b = random_vec(&mut rng, 3);
        let y = layer.forward(&x, &w, &b);
        assert_eq!(y.size, 3);
        let (o, ox, oy, oz) = (1, 2, 0, 1);
        let mut expect = b[o];
        for ic in 0..2 {
            for kx in 0..3 {
                for ky in 0..3 {
                    for kz in 0..3 {
                        let (ix, iy, iz) = (
                            (ox * 2 + kx) as isize - 1,
                            (oy * 2 + ky) as isize - 1,
                            (oz * 2 + kz) as isize - 1,
                        );
                        if [ix, iy, iz].iter().any(|c| *c < 0 || *c >= 5) {
                            continue;
                        }
                        let xi = ((ic * 5 + ix as usize) * 5 + iy as usize) * 5 + iz as usize;
                        expect += w[((o * 2 + ic) * 3 + kx) * 9 + ky * 3 + kz] * x.data[xi];
                    }
                }
            }
        }
        let got = y.data[((o * 3 + ox) * 3 + oy) * 3 + oz];
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // With shared weights, <conv(x), y> = <x, tconv(y)> when biases are 0.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = ConvGeometry {
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        let conv = Conv3d {
            in_channels: 2,
            out_channels: 3,
            geometry: g,
        };
        let tconv = ConvTranspose3d {
            in_channels: 3,
            out_channels: 2,
            geometry: g,
        };
        let x = Volume::from_data(2, 8, random_vec(&mut rng, 2 * 512));
        let y = Volume::from_data(3, 4, random_vec(&mut rng, 3 * 64));
        let w = random_vec(&mut rng, conv.weight_len());
        let cx = conv.forward(&x, &w, &[0.0; 3]);
        let ty = tconv.forward(&y, &w, &[0.0; 2]);
        assert_eq!(ty.size, 8);
        assert!((dot(&cx.data, &y.data) - dot(&x.data, &ty.data)).abs() < 1e-10);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Conv3d {
            in_channels: 2,
            out_channels: 2,
            geometry: ConvGeometry {
                kernel: 4,
                stride: 1,
                padding: 2,
            },
        };
        let x = Volume::from_data(2, 4, random_vec(&mut rng, 128));
        let w = random_vec(&mut rng, layer.weight_len());
        let b = random_vec(&mut rng, 2);
        let out_len = 2 * 5usize.pow(3);
        let co = Volume::from_data(2, 5, random_vec(&mut rng, out_len));
        let grads = layer.backward(&x, &w, &co, true);
        let loss = |x: &[f64], w: &[f64], b: &[f64]| {
            dot(
                &layer
                    .forward(&Volume::from_data(2, 4, x.to_vec()), w, b)
                    .data,
                &co.data,
            )
        };
        let gin = grads.input.unwrap();
        for i in (0..x.data.len()).step_by(7) {
            check(
                gin.data[i],
                central(&x.data, i, |p| loss(p, &w, &b)),
                "conv input",
            );
        }
        for i in (0..w.len()).step_by(5) {
            check(
                grads.weight[i],
                central(&w, i, |p| loss(&x.data, p, &b)),
                "conv weight",
            );
        }
        for i in 0..2 {
            check(
                grads.bias[i],
                central(&b, i, |p| loss(&x.data, &w, p)),
                "conv bias",
            );
        }
    }

    #[test]
    fn transposed_conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = ConvTranspose3d {
            in_channels: 3,
            out_channels: 2,
            geometry: ConvGeometry {
                kernel: 4,
                stride: 2,
                padding: 1,
            },
        };
        let x = Volume::from_data(3, 2, random_vec(&mut rng, 24));
        let w = random_vec(&mut rng, layer.weight_len());
        let b = random_vec(&mut rng, 2);
        let co = Volume::from_data(2, 4, random_vec(&mut rng, 128));
        let grads = layer.backward(&x, &w, &co, true);
        let loss = |x: &[f64], w: &[f64], b: &[f64]| {
            dot(
                &layer
                    .forward(&Volume::from_data(3, 2, x.to_vec()), w, b)
                    .data,
                &co.data,
            )
        };
        let gin = grads.input.unwrap();
        for i in 0..x.data.len() {
            check(
                gin.data[i],
                central(&x.data, i, |p| loss(p, &w, &b)),
                "tconv input",
            );
        }
        for i in (0..w.len()).step_by(3) {
            check(
                grads.weight[i],
                central(&w, i, |p| loss(&x.data, p, &b)),
                "tconv weight",
            );
        }
        for i in 0..2 {
            check(
                grads.bias[i],
                central(&b, i, |p| loss(&x.data, &w, p)),
                "tconv bias",
            );
        }
    }

    #[test]
    fn pool_and_activation_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Distinct values keep the argmax stable under the perturbation.
        let x = Volume::from_data(2, 5, random_vec(&mut rng, 250));
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.size, 2);
        let co = Volume::from_data(2, 2, random_vec(&mut rng, 16));
        let g = max_pool2_backward(2, 5, &arg, &co);
        let loss = |p: &[f64]| {
            dot(
                &max_pool2(&Volume::from_data(2, 5, p.to_vec())).0.data,
                &co.data,
            )
        };
        for i in 0..x.data.len() {
            check(g.data[i], central(&x.data, i, loss), "pool");
        }

        let pre: Vec<f64> = random_vec(&mut rng, 40)
            .into_iter()
            .map(|v| if v.abs() < 1e-3 { 0.5 } else { v })
            .collect();
        let co = random_vec(&mut rng, 40);
        for slope in [0.0, 0.2] {
            let g = leaky_relu_backward(&pre, &co, slope);
            for i in 0..pre.len() {
                let n = central(&pre, i, |p| dot(&leaky_relu(p, slope), &co));
                check(g[i], n, "leaky relu");
            }
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = Dense {
            inputs: 5,
            outputs: 3,
        };
        let x = random_vec(&mut rng, 4 * 5);
        let w = random_vec(&mut rng, 15);
        let b = random_vec(&mut rng, 3);
        let co = random_vec(&mut rng, 12);
        let (gx, gw, gb) = layer.backward(&x, &w, &co, true);
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&layer.forward(x, w, b), &co);
        for i in 0..x.len() {
            check(gx[i], central(&x, i, |p| loss(p, &w, &b)), "dense input");
        }
        for i in 0..w.len() {
            check(gw[i], central(&w, i, |p| loss(&x, p, &b)), "dense weight");
        }
        for i in 0..3 {
            check(gb[i], central(&b, i, |p| loss(&x, &w, p)), "dense bias");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let layer = Conv3d {
            in_channels: 1,
            out_channels: 2,
            geometry: ConvGeometry {
                kernel: 4,
                stride: 1,
                padding: 2,
            },
        };
        let x = Volume::from_data(1, 4, (0..64).map(|i| i as f64).collect());
        let w = vec![0.3; layer.weight_len()];
        let g = layer.backward(&x, &w, &Volume::zeros(2, 5), true);
        assert!(g.weight.iter().chain(&g.bias).all(|v| *v == 0.0));
        assert!(g.input.unwrap().data.iter().all(|v| *v == 0.0));
    }
}
