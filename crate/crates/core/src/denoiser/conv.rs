//! Three-layer conditional convolutional ε-predictor with hand-written
//! reverse-mode gradients.
//!
//! ```text
//! concat(y_t, x) ─conv3×3─► +time bias ─SiLU─conv3×3─SiLU─conv3×3─► ε̂
//! ```
//!
//! The time bias is an affine map of a sinusoidal embedding of the discrete
//! time position. All convolutions are stride 1 with zero padding 1.

use rand_distr::{Distribution, Normal};

use super::{NoisePredictor, TimeArg};
use crate::error::{Error, Result};
use crate::rng::{Role, StreamKey};
use crate::schedule::{discretize_time, VarianceSchedule};
use crate::tensor::ImageTensor;

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    /// Channels of `y_t` (and of the condition and the output).
    pub image_channels: usize,
    pub hidden_channels: usize,
    pub time_embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            image_channels: 1,
            hidden_channels: 16,
            time_embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

impl LayerInfo {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

impl Architecture {
    pub fn input_channels(&self) -> usize {
        2 * self.image_channels
    }

    /// Parameter layout, in serialization order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let (c, h, e) = (self.image_channels, self.hidden_channels, self.time_embed_dim);
        let sizes = [
            ("conv1.weight", h * 2 * c * TAPS),
            ("conv1.bias", h),
            ("time.weight", h * e),
            ("time.bias", h),
            ("conv2.weight", h * h * TAPS),
            ("conv2.bias", h),
            ("conv3.weight", c * h * TAPS),
            ("conv3.bias", c),
        ];
        let mut offset = 0;
        sizes
            .iter()
            .map(|&(name, len)| {
                let info = LayerInfo { name, offset, len };
                offset += len;
                info
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.len).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.image_channels == 0
            || self.hidden_channels == 0
            || self.time_embed_dim == 0
            || self.time_embed_dim % 2 != 0
        {
            return Err(Error::domain(format!(
                "invalid architecture {self:?} (channel counts positive, even embedding width)"
            )));
        }
        Ok(())
    }
}

/// Activations saved by the forward pass for `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    arch: Architecture,
    height: usize,
    width: usize,
    embedding: Vec<f64>,
    padded_input: Vec<f64>,
    pre1: Vec<f64>,
    padded_act1: Vec<f64>,
    pre2: Vec<f64>,
    padded_act2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvDenoiser {
    arch: Architecture,
    params: Vec<f64>,
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal features `[sin(τω_k)…, cos(τω_k)…]`, `ω_k = 10000^{−k/(d/2)}`.
pub(crate) fn time_embedding(tau: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|k| (-(10000f64.ln()) * k as f64 / half as f64).exp())
        .collect();
    freqs
        .iter()
        .map(|f| (tau * f).sin())
        .chain(freqs.iter().map(|f| (tau * f).cos()))
        .collect()
}

fn pad(input: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let pw = w + 2;
    let mut out = vec![0.0; channels * (h + 2) * pw];
    for c in 0..channels {
        for y in 0..h {
            let src = &input[(c * h + y) * w..][..w];
            out[(c * (h + 2) + y + 1) * pw + 1..][..w].copy_from_slice(src);
        }
    }
    out
}

fn crop(padded: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let pw = w + 2;
    let mut out = vec![0.0; channels * h * w];
    for c in 0..channels {
        for y in 0..h {
            out[(c * h + y) * w..][..w].copy_from_slice(&padded[(c * (h + 2) + y + 1) * pw + 1..][..w]);
        }
    }
    out
}

struct ConvShape {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
}

fn conv_forward(padded: &[f64], weight: &[f64], bias: &[f64], s: &ConvShape) -> Vec<f64> {
    let (h, w, pw) = (s.h, s.w, s.w + 2);
    let plane = h * w;
    let mut out = vec![0.0; s.cout * plane];
    for oc in 0..s.cout {
        let dst_plane = &mut out[oc * plane..][..plane];
        dst_plane.fill(bias[oc]);
        for ic in 0..s.cin {
            let src_plane = &padded[ic * (h + 2) * pw..][..(h + 2) * pw];
            let kern = &weight[(oc * s.cin + ic) * TAPS..][..TAPS];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = kern[ky * KERNEL + kx];
                    for y in 0..h {
                        let src = &src_plane[(y + ky) * pw + kx..][..w];
                        let dst = &mut dst_plane[y * w..][..w];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the gradient w.r.t. the
/// padded input when `want_input` is set.
fn conv_backward(
    padded: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    s: &ConvShape,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let (h, w, pw) = (s.h, s.w, s.w + 2);
    let plane = h * w;
    let mut grad_in = want_input.then(|| vec![0.0; s.cin * (h + 2) * pw]);
    for oc in 0..s.cout {
        let g_plane = &grad_out[oc * plane..][..plane];
        grad_bias[oc] += g_plane.iter().sum::<f64>();
        for ic in 0..s.cin {
            let src_plane = &padded[ic * (h + 2) * pw..][..(h + 2) * pw];
            let base = (oc * s.cin + ic) * TAPS;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let src = &src_plane[(y + ky) * pw + kx..][..w];
                        let g = &g_plane[y * w..][..w];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_weight[base + ky * KERNEL + kx] += acc;
                    if let Some(gin) = grad_in.as_mut() {
                        let wv = weight[base + ky * KERNEL + kx];
                        let gin_plane = &mut gin[ic * (h + 2) * pw..][..(h + 2) * pw];
                        for y in 0..h {
                            let dst = &mut gin_plane[(y + ky) * pw + kx..][..w];
                            let g = &g_plane[y * w..][..w];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

impl ConvDenoiser {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: vec![0.0; arch.parameter_count()],
        })
    }

    /// Random initialization: He-normal for the hidden convolutions, a
    /// narrower normal for the output and time layers, zero biases.
    pub fn init(arch: Architecture, key: StreamKey) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let (c, h, e) = (arch.image_channels, arch.hidden_channels, arch.time_embed_dim);
        for (i, layer) in arch.layers().iter().enumerate() {
            let std = match layer.name {
                "conv1.weight" => (2.0 / (2 * c * TAPS) as f64).sqrt(),
                "conv2.weight" => (2.0 / (h * TAPS) as f64).sqrt(),
                "conv3.weight" => (1.0 / (h * TAPS) as f64).sqrt(),
                "time.weight" => (1.0 / e as f64).sqrt(),
                _ => continue,
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut rng = key.stream(Role::Init, &[i as u64]);
            for p in &mut net.params[layer.range()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.parameter_count();
        if params.len() != expected {
            return Err(Error::Data(format!(
                "architecture {arch:?} needs {expected} parameters, got {}",
                params.len()
            )));
        }
        if let Some(layer) = arch
            .layers()
            .into_iter()
            .find(|l| params[l.range()].iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data(format!("non-finite parameter in `{}`", layer.name)));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        self.arch.layers()
    }

    fn layer(&self, idx: usize) -> &[f64] {
        let l = self.arch.layers()[idx];
        &self.params[l.range()]
    }

    /// Embedding position used for a given time argument.
    pub fn time_position(t: TimeArg, schedule: &VarianceSchedule) -> Result<f64> {
        match t {
            TimeArg::Discrete(k) => {
                schedule.check_step(k)?;
                Ok((k - 1) as f64)
            }
            TimeArg::Continuous(tc) => {
                if !(0.0..=1.0).contains(&tc) {
                    return Err(Error::domain(format!("continuous time {tc} outside [0, 1]")));
                }
                Ok(discretize_time(tc, schedule.steps()))
            }
        }
    }

    fn check_inputs(&self, y: &ImageTensor, cond: Option<&ImageTensor>) -> Result<()> {
        let c = self.arch.image_channels;
        if y.channels() != c {
            return Err(Error::ShapeMismatch {
                expected: (c, y.height(), y.width()),
                got: y.shape(),
            });
        }
        if let Some(x) = cond {
            y.ensure_same_shape(x)?;
        }
        Ok(())
    }

    pub fn forward(&self, y: &ImageTensor, cond: Option<&ImageTensor>, tau: f64) -> Result<ImageTensor> {
        self.forward_cached(y, cond, tau).map(|(out, _)| out)
    }

    /// Forward pass at embedding position `tau`, keeping what `backward` needs.
    /// A missing condition duplicates `y` into the condition channels.
    pub fn forward_cached(
        &self,
        y: &ImageTensor,
        cond: Option<&ImageTensor>,
        tau: f64,
    ) -> Result<(ImageTensor, ForwardCache)> {
        self.check_inputs(y, cond)?;
        let arch = self.arch;
        let (c, hid, e) = (arch.image_channels, arch.hidden_channels, arch.time_embed_dim);
        let (h, w) = (y.height(), y.width());
        let plane = h * w;

        let mut input = Vec::with_capacity(2 * c * plane);
        input.extend_from_slice(y.as_slice());
        input.extend_from_slice(cond.unwrap_or(y).as_slice());
        let padded_input = pad(&input, 2 * c, h, w);

        let embedding = time_embedding(tau, e);
        let (tw, tb) = (self.layer(2), self.layer(3));
        let time_bias: Vec<f64> = (0..hid)
            .map(|oc| {
                tb[oc]
                    + tw[oc * e..][..e]
                        .iter()
                        .zip(&embedding)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();

        let s1 = ConvShape { cin: 2 * c, cout: hid, h, w };
        let mut pre1 = conv_forward(&padded_input, self.layer(0), self.layer(1), &s1);
        for (oc, chunk) in pre1.chunks_mut(plane).enumerate() {
            for v in chunk {
                *v += time_bias[oc];
            }
        }
        let act1: Vec<f64> = pre1.iter().map(|&z| silu(z)).collect();
        let padded_act1 = pad(&act1, hid, h, w);

        let s2 = ConvShape { cin: hid, cout: hid, h, w };
        let pre2 = conv_forward(&padded_act1, self.layer(4), self.layer(5), &s2);
        let act2: Vec<f64> = pre2.iter().map(|&z| silu(z)).collect();
        let padded_act2 = pad(&act2, hid, h, w);

        let s3 = ConvShape { cin: hid, cout: c, h, w };
        let out = conv_forward(&padded_act2, self.layer(6), self.layer(7), &s3);
        let out = ImageTensor::from_vec((c, h, w), out)
            .map_err(|_| Error::Numeric("network output is not finite".into()))?;

        Ok((
            out,
            ForwardCache {
                arch,
                height: h,
                width: w,
                embedding,
                padded_input,
                pre1,
                padded_act1,
                pre2,
                padded_act2,
            },
        ))
    }

    /// Gradient of a scalar loss w.r.t. every parameter, given the loss
    /// gradient w.r.t. the network output of the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &ImageTensor) -> Result<Vec<f64>> {
        let arch = self.arch;
        if cache.arch != arch {
            return Err(Error::Data("forward cache belongs to a different architecture".into()));
        }
        let (c, hid, e) = (arch.image_channels, arch.hidden_channels, arch.time_embed_dim);
        let (h, w) = (cache.height, cache.width);
        if grad_out.shape() != (c, h, w) {
            return Err(Error::ShapeMismatch {
                expected: (c, h, w),
                got: grad_out.shape(),
            });
        }
        let plane = h * w;
        let layers = arch.layers();
        let mut grad = vec![0.0; self.params.len()];

        // conv3
        let (wr, br) = (layers[6].range(), layers[7].range());
        let (gw, gb) = grad.split_at_mut(br.start);
        let s3 = ConvShape { cin: hid, cout: c, h, w };
        let g_pad2 = conv_backward(
            &cache.padded_act2,
            self.layer(6),
            grad_out.as_slice(),
            &s3,
            &mut gw[wr],
            &mut gb[..br.len()],
            true,
        )
        .expect("input gradient requested");
        let mut g_pre2 = crop(&g_pad2, hid, h, w);
        for (g, &z) in g_pre2.iter_mut().zip(&cache.pre2) {
            *g *= silu_grad(z);
        }

        // conv2
        let (wr, br) = (layers[4].range(), layers[5].range());
        let (gw, gb) = grad.split_at_mut(br.start);
        let s2 = ConvShape { cin: hid, cout: hid, h, w };
        let g_pad1 = conv_backward(
            &cache.padded_act1,
            self.layer(4),
            &g_pre2,
            &s2,
            &mut gw[wr],
            &mut gb[..br.len()],
            true,
        )
        .expect("input gradient requested");
        let mut g_pre1 = crop(&g_pad1, hid, h, w);
        for (g, &z) in g_pre1.iter_mut().zip(&cache.pre1) {
            *g *= silu_grad(z);
        }

        // time affine: the bias is broadcast over the plane.
        let channel_sums: Vec<f64> = g_pre1.chunks(plane).map(|ch| ch.iter().sum()).collect();
        let (twr, tbr) = (layers[2].range(), layers[3].range());
        for oc in 0..hid {
            grad[tbr.start + oc] += channel_sums[oc];
            for j in 0..e {
                grad[twr.start + oc * e + j] += channel_sums[oc] * cache.embedding[j];
            }
        }

        // conv1
        let (wr, br) = (layers[0].range(), layers[1].range());
        let (gw, gb) = grad.split_at_mut(br.start);
        let s1 = ConvShape { cin: 2 * c, cout: hid, h, w };
        conv_backward(
            &cache.padded_input,
            self.layer(0),
            &g_pre1,
            &s1,
            &mut gw[wr],
            &mut gb[..br.len()],
            false,
        );

        Ok(grad)
    }
}

/// Per-layer agreement between `backward` and central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradientCheck {
    pub name: &'static str,
    /// `‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)` over the layer's parameters.
    pub relative_error: f64,
}

impl ConvDenoiser {
    /// Compares the analytic gradient of `⟨forward(y, cond, tau), probe⟩`
    /// against central differences with the given step, layer by layer.
    pub fn gradient_check(
        &self,
        y: &ImageTensor,
        cond: Option<&ImageTensor>,
        tau: f64,
        probe: &ImageTensor,
        step: f64,
    ) -> Result<Vec<LayerGradientCheck>> {
        if !(step > 0.0) {
            return Err(Error::domain("finite-difference step must be positive"));
        }
        let (_, cache) = self.forward_cached(y, cond, tau)?;
        let analytic = self.backward(&cache, probe)?;
        let objective = |net: &ConvDenoiser| -> Result<f64> {
            let out = net.forward(y, cond, tau)?;
            out.ensure_same_shape(probe)?;
            Ok(out.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum())
        };
        let mut probe_net = self.clone();
        let mut out = Vec::new();
        for layer in self.layers() {
            let (mut diff, mut fd_norm, mut an_norm) = (0.0, 0.0, 0.0);
            for i in layer.range() {
                let orig = probe_net.params[i];
                probe_net.params[i] = orig + step;
                let up = objective(&probe_net)?;
                probe_net.params[i] = orig - step;
                let down = objective(&probe_net)?;
                probe_net.params[i] = orig;
                let fd = (up - down) / (2.0 * step);
                diff += (fd - analytic[i]).powi(2);
                fd_norm += fd * fd;
                an_norm += analytic[i] * analytic[i];
            }
            let scale = fd_norm.max(an_norm).sqrt();
            out.push(LayerGradientCheck {
                name: layer.name,
                relative_error: if scale == 0.0 { 0.0 } else { diff.sqrt() / scale },
            });
        }
        Ok(out)
    }
}

impl NoisePredictor for ConvDenoiser {
    fn predict(
        &self,
        y_t: &ImageTensor,
        cond: Option<&ImageTensor>,
        t: TimeArg,
        schedule: &VarianceSchedule,
    ) -> Result<ImageTensor> {
        let tau = Self::time_position(t, schedule)?;
        self.forward(y_t, cond, tau)
    }
}
