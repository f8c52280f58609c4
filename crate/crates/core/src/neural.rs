//! Content/style loss minimization over a fixed convolutional feature
//! extractor.
//!
//! The default extractor is two layers of seeded 3x3 filters over luminance
//! with a softplus rectifier. Gradients of the total loss are propagated back
//! to the image analytically through [`FeatureExtractor::backward`].

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{luminance, RasterImage, LUMA_WEIGHTS};
use crate::rng;

const SFNB_MAGIC: &[u8; 4] = b"SFNB";
const SFNB_VERSION: u16 = 1;

/// Activations of one layer, stored channel-major (`c, y, x`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Symmetric `dim x dim` matrix of channel inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// `x^T G x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += x[i] * self.get(i, j) * x[j];
            }
        }
        acc
    }
}

/// `F F^T / (C H W)` with `F` the tensor flattened to `C x (H W)`.
pub fn gram(t: &FeatureTensor) -> GramMatrix {
    let c = t.channels;
    let n = (c * t.height * t.width) as f64;
    let mut data = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let dot: f64 = t.plane(i).iter().zip(t.plane(j)).map(|(a, b)| a * b).sum();
            let v = if n > 0.0 { dot / n } else { 0.0 };
            data[i * c + j] = v;
            data[j * c + i] = v;
        }
    }
    GramMatrix { dim: c, data }
}

/// Mean squared difference of the activations at `layer`.
pub fn content_loss(content: &[FeatureTensor], target: &[FeatureTensor], layer: usize) -> Result<f64> {
    let (a, b) = match (content.get(layer), target.get(layer)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::invalid(format!("content layer {layer} out of range"))),
    };
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "content layer shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).powi(2)).sum();
    Ok(sum / a.data.len() as f64)
}

/// Sum over layers of the mean squared Gram difference.
pub fn style_loss(style: &[GramMatrix], target: &[GramMatrix]) -> Result<f64> {
    if style.len() != target.len() {
        return Err(Error::invalid(format!(
            "{} style layers vs {} target layers",
            style.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for (l, (s, t)) in style.iter().zip(target).enumerate() {
        if s.dim != t.dim {
            return Err(Error::invalid(format!("gram dims differ at layer {l}: {} vs {}", s.dim, t.dim)));
        }
        if s.dim == 0 {
            continue;
        }
        let sum: f64 = s.data.iter().zip(&t.data).map(|(p, q)| (p - q).powi(2)).sum();
        total += sum / (s.dim * s.dim) as f64;
    }
    Ok(total)
}

/// Gradient with respect to an image, in the image's interleaved layout.
/// Unlike pixel values it is unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGradient {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageGradient {
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// A differentiable feature map. Implementations must be deterministic.
pub trait FeatureExtractor: Send + Sync {
    fn layer_count(&self) -> usize;

    /// Activations of every layer, shallowest first.
    fn extract(&self, image: &RasterImage) -> Result<Vec<FeatureTensor>>;

    /// Vector-Jacobian product: given the loss gradient with respect to each
    /// layer's activations (same shapes as [`Self::extract`]), returns the
    /// gradient with respect to the image.
    fn backward(&self, image: &RasterImage, upstream: &[FeatureTensor]) -> Result<ImageGradient>;
}

/// One convolution with replicate padding followed by softplus.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    /// `out, in, ky, kx` order.
    pub weights: Vec<f64>,
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ConvLayer {
    fn validate(&self) -> Result<()> {
        let n = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.out_channels == 0 || self.in_channels == 0 {
            return Err(Error::MalformedWeights("layer with zero channels".into()));
        }
        if self.kernel_h.is_multiple_of(2) || self.kernel_w.is_multiple_of(2) {
            return Err(Error::MalformedWeights("kernel sides must be odd".into()));
        }
        if self.stride == 0 {
            return Err(Error::MalformedWeights("stride must be >= 1".into()));
        }
        if self.weights.len() != n {
            return Err(Error::MalformedWeights(format!("expected {n} weights, found {}", self.weights.len())));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::MalformedWeights("non-finite weight".into()));
        }
        Ok(())
    }

    fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    #[inline]
    fn weight(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + c) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// Input row/column read by output `i` and tap `k`, clamped to the edge.
    #[inline]
    fn source(&self, i: usize, k: usize, half: usize, limit: usize) -> usize {
        (i * self.stride + k).saturating_sub(half).min(limit - 1)
    }

    fn pre_activation(&self, input: &FeatureTensor) -> FeatureTensor {
        let (oh, ow) = self.output_dims(input.height, input.width);
        let (hy, hx) = (self.kernel_h / 2, self.kernel_w / 2);
        let mut out = FeatureTensor::zeros(self.out_channels, oh, ow);
        for o in 0..self.out_channels {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..self.in_channels {
                        for ky in 0..self.kernel_h {
                            let sy = self.source(i, ky, hy, input.height);
                            for kx in 0..self.kernel_w {
                                let sx = self.source(j, kx, hx, input.width);
                                acc += self.weight(o, c, ky, kx) * input.get(c, sy, sx);
                            }
                        }
                    }
                    out.data[(o * oh + i) * ow + j] = acc;
                }
            }
        }
        out
    }

    /// Gradient with respect to the layer input given the gradient with
    /// respect to the pre-activation.
    fn input_gradient(&self, grad_z: &FeatureTensor, in_h: usize, in_w: usize) -> FeatureTensor {
        let (oh, ow) = (grad_z.height, grad_z.width);
        let (hy, hx) = (self.kernel_h / 2, self.kernel_w / 2);
        let mut grad = FeatureTensor::zeros(self.in_channels, in_h, in_w);
        for o in 0..self.out_channels {
            for i in 0..oh {
                for j in 0..ow {
                    let g = grad_z.get(o, i, j);
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..self.in_channels {
                        for ky in 0..self.kernel_h {
                            let sy = self.source(i, ky, hy, in_h);
                            for kx in 0..self.kernel_w {
                                let sx = self.source(j, kx, hx, in_w);
                                grad.data[(c * in_h + sy) * in_w + sx] += self.weight(o, c, ky, kx) * g;
                            }
                        }
                    }
                }
            }
        }
        grad
    }
}

/// Stack of [`ConvLayer`]s over the luminance channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvExtractor {
    layers: Vec<ConvLayer>,
}

struct Forward {
    inputs: Vec<FeatureTensor>,
    pre: Vec<FeatureTensor>,
    activations: Vec<FeatureTensor>,
}

impl ConvExtractor {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::MalformedWeights("extractor needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate()?;
            let expect = if i == 0 { 1 } else { layers[i - 1].out_channels };
            if l.in_channels != expect {
                return Err(Error::MalformedWeights(format!(
                    "layer {i} takes {} channels, previous layer yields {expect}",
                    l.in_channels
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    fn forward(&self, image: &RasterImage) -> Forward {
        let lum = luminance(image);
        let mut x = FeatureTensor {
            channels: 1,
            height: lum.height(),
            width: lum.width(),
            data: lum.into_data(),
        };
        let mut fw = Forward {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            activations: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            let z = layer.pre_activation(&x);
            let a = FeatureTensor {
                data: z.data.iter().map(|v| softplus(*v)).collect(),
                ..z.clone()
            };
            fw.inputs.push(std::mem::replace(&mut x, a.clone()));
            fw.pre.push(z);
            fw.activations.push(a);
        }
        fw
    }

    /// Serializes the weights in the SFNB format.
    pub fn write_sfnb(&self, mut w: impl Write) -> Result<()> {
        w.write_all(SFNB_MAGIC)?;
        w.write_all(&SFNB_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u16).to_le_bytes())?;
        for l in &self.layers {
            for v in [l.out_channels, l.in_channels, l.kernel_h, l.kernel_w, l.stride] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
            for x in &l.weights {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_sfnb(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_sfnb(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses weights written by [`Self::write_sfnb`].
    pub fn read_sfnb(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_sfnb(&bytes)
    }

    pub fn from_sfnb(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::MalformedWeights("unexpected end of data".into()));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4)? != SFNB_MAGIC {
            return Err(Error::MalformedWeights("bad magic".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != SFNB_VERSION {
            return Err(Error::MalformedWeights(format!("unsupported version {version}")));
        }
        let count = u16::from_le_bytes(take(2)?.try_into().unwrap());
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut dims = [0usize; 5];
            for d in &mut dims {
                *d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            }
            let [out_channels, in_channels, kernel_h, kernel_w, stride] = dims;
            let n = out_channels
                .checked_mul(in_channels)
                .and_then(|v| v.checked_mul(kernel_h))
                .and_then(|v| v.checked_mul(kernel_w))
                .ok_or_else(|| Error::MalformedWeights("layer too large".into()))?;
            let raw = take(n.checked_mul(8).ok_or_else(|| Error::MalformedWeights("layer too large".into()))?)?;
            let weights = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            layers.push(ConvLayer {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                weights,
            });
        }
        if !cur.is_empty() {
            return Err(Error::MalformedWeights(format!("{} trailing bytes", cur.len())));
        }
        Self::new(layers)
    }
}

impl FeatureExtractor for ConvExtractor {
    fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn extract(&self, image: &RasterImage) -> Result<Vec<FeatureTensor>> {
        Ok(self.forward(image).activations)
    }

    fn backward(&self, image: &RasterImage, upstream: &[FeatureTensor]) -> Result<ImageGradient> {
        let fw = self.forward(image);
        if upstream.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "{} upstream gradients for {} layers",
                upstream.len(),
                self.layers.len()
            )));
        }
        for (l, (u, a)) in upstream.iter().zip(&fw.activations).enumerate() {
            if u.shape() != a.shape() {
                return Err(Error::DimensionMismatch(format!("upstream gradient shape at layer {l}")));
            }
        }
        let mut carry: Option<FeatureTensor> = None;
        for l in (0..self.layers.len()).rev() {
            let mut grad_a = upstream[l].clone();
            if let Some(c) = carry.take() {
                for (g, v) in grad_a.data.iter_mut().zip(c.data) {
                    *g += v;
                }
            }
            for (g, z) in grad_a.data.iter_mut().zip(&fw.pre[l].data) {
                *g *= sigmoid(*z);
            }
            let input = &fw.inputs[l];
            carry = Some(self.layers[l].input_gradient(&grad_a, input.height, input.width));
        }
        let grad_lum = carry.expect("at least one layer");
        let channels = image.channels();
        let mut data = vec![0.0; image.pixel_count() * channels];
        for (i, g) in grad_lum.data.iter().enumerate() {
            let px = &mut data[i * channels..(i + 1) * channels];
            if channels == 1 {
                px[0] = *g;
            } else {
                for k in 0..3 {
                    px[k] = LUMA_WEIGHTS[k] * g;
                }
            }
        }
        Ok(ImageGradient {
            width: image.width(),
            height: image.height(),
            channels,
            data,
        })
    }
}

fn seeded_filters(rng: &mut impl Rng, count: usize, fan_in: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count * fan_in);
    for _ in 0..count {
        let mut f: Vec<f64> = (0..fan_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = f.iter().sum::<f64>() / fan_in as f64;
        f.iter_mut().for_each(|v| *v -= mean);
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        f.iter_mut().for_each(|v| *v /= norm);
        out.extend(f);
    }
    out
}

/// Two layers of eight zero-mean, unit-norm 3x3 filters; the second layer
/// has stride 2.
pub fn default_extractor(rng_seed: u64) -> ConvExtractor {
    let mut rng = rng::seeded(rng_seed);
    let l1 = ConvLayer {
        out_channels: 8,
        in_channels: 1,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        weights: seeded_filters(&mut rng, 8, 9),
    };
    let l2 = ConvLayer {
        out_channels: 8,
        in_channels: 8,
        kernel_h: 3,
        kernel_w: 3,
        stride: 2,
        weights: seeded_filters(&mut rng, 8, 72),
    };
    ConvExtractor::new(vec![l1, l2]).expect("default layers are well formed")
}

/// Starting image for stylization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StylizeInit {
    #[default]
    Content,
    Noise { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StylizeConfig {
    pub alpha_content: f64,
    pub beta_style: f64,
    pub eta: f64,
    pub iterations: usize,
    pub init: StylizeInit,
    pub content_layer: usize,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        Self {
            alpha_content: 1.0,
            beta_style: 3.0e5,
            eta: 0.5,
            iterations: 200,
            init: StylizeInit::Content,
            content_layer: 0,
        }
    }
}

impl StylizeConfig {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        for (name, v) in [("alpha_content", self.alpha_content), ("beta_style", self.beta_style)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err((name.into(), format!("must be a finite value >= 0, got {v}")));
            }
        }
        if self.alpha_content + self.beta_style <= 0.0 {
            return Err(("alpha_content".into(), "alpha_content and beta_style must not both be 0".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(("eta".into(), format!("must be > 0, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Content and style terms of the total loss, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub content: f64,
    pub style: f64,
}

/// Precomputed content activations and style Grams.
pub struct StyleObjective<'a> {
    extractor: &'a dyn FeatureExtractor,
    content: Vec<FeatureTensor>,
    style_grams: Vec<GramMatrix>,
    width: usize,
    height: usize,
    config: StylizeConfig,
}

impl<'a> StyleObjective<'a> {
    pub fn new(
        content: &RasterImage,
        style: &RasterImage,
        extractor: &'a dyn FeatureExtractor,
        config: &StylizeConfig,
    ) -> Result<Self> {
        if config.content_layer >= extractor.layer_count() {
            return Err(Error::invalid(format!("content layer {} out of range", config.content_layer)));
        }
        let content_features = extractor.extract(content)?;
        let style_grams = extractor.extract(style)?.iter().map(gram).collect();
        Ok(Self {
            extractor,
            content: content_features,
            style_grams,
            width: content.width(),
            height: content.height(),
            config: config.clone(),
        })
    }

    fn check(&self, image: &RasterImage) -> Result<()> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::DimensionMismatch(format!(
                "target {}x{} vs content {}x{}",
                image.width(),
                image.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    pub fn terms(&self, image: &RasterImage) -> Result<LossTerms> {
        self.check(image)?;
        let feats = self.extractor.extract(image)?;
        let grams: Vec<GramMatrix> = feats.iter().map(gram).collect();
        Ok(LossTerms {
            content: content_loss(&self.content, &feats, self.config.content_layer)?,
            style: style_loss(&self.style_grams, &grams)?,
        })
    }

    pub fn loss(&self, image: &RasterImage) -> Result<f64> {
        let t = self.terms(image)?;
        Ok(self.config.alpha_content * t.content + self.config.beta_style * t.style)
    }

    pub fn loss_and_gradient(&self, image: &RasterImage) -> Result<(f64, ImageGradient)> {
        self.check(image)?;
        let feats = self.extractor.extract(image)?;
        let (alpha, beta) = (self.config.alpha_content, self.config.beta_style);
        let mut upstream: Vec<FeatureTensor> = feats
            .iter()
            .map(|f| FeatureTensor::zeros(f.channels, f.height, f.width))
            .collect();
        let mut loss = 0.0;

        let cl = self.config.content_layer;
        let (fc, ft) = (&self.content[cl], &feats[cl]);
        if fc.shape() != ft.shape() {
            return Err(Error::invalid("content layer shapes differ"));
        }
        let n = ft.data.len() as f64;
        let mut content = 0.0;
        for (i, (t, c)) in ft.data.iter().zip(&fc.data).enumerate() {
            let d = t - c;
            content += d * d;
            upstream[cl].data[i] += alpha * 2.0 * d / n;
        }
        loss += alpha * content / n;

        for (l, f) in feats.iter().enumerate() {
            let g = gram(f);
            let gs = &self.style_grams[l];
            if gs.dim != g.dim {
                return Err(Error::invalid(format!("gram dims differ at layer {l}")));
            }
            let c = g.dim;
            let hw = f.height * f.width;
            let cc = (c * c) as f64;
            let norm = (c * hw) as f64;
            let diff: Vec<f64> = g.data.iter().zip(&gs.data).map(|(a, b)| a - b).collect();
            loss += beta * diff.iter().map(|d| d * d).sum::<f64>() / cc;
            // d/dF of mean((G - Gs)^2) with G = F F^T / norm and G symmetric.
            for i in 0..c {
                for p in 0..hw {
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += diff[i * c + j] * f.data[j * hw + p];
                    }
                    upstream[l].data[i * hw + p] += beta * 4.0 * acc / (cc * norm);
                }
            }
        }
        let grad = self.extractor.backward(image, &upstream)?;
        Ok((loss, grad))
    }
}

/// Weighted total loss and its gradient with respect to `target`.
pub fn total_loss_and_gradient(
    target: &RasterImage,
    content: &RasterImage,
    style: &RasterImage,
    extractor: &dyn FeatureExtractor,
    config: &StylizeConfig,
) -> Result<(f64, ImageGradient)> {
    StyleObjective::new(content, style, extractor, config)?.loss_and_gradient(target)
}

/// Result of [`stylize`]. `loss_history[k]` is the loss before step `k`;
/// the final entry is the loss of the returned image.
#[derive(Debug, Clone, PartialEq)]
pub struct Stylized {
    pub image: RasterImage,
    pub loss_history: Vec<f64>,
}

fn initial_image(content: &RasterImage, init: StylizeInit) -> Result<RasterImage> {
    match init {
        StylizeInit::Content => Ok(content.clone()),
        StylizeInit::Noise { seed } => {
            let mut r = rng::seeded(seed);
            RasterImage::from_fn(content.width(), content.height(), content.channels(), |_, _, _| {
                r.random::<f64>()
            })
        }
    }
}

/// Fixed-step gradient descent on the total loss, clamping to [0, 1] after
/// each step.
pub fn stylize(
    content: &RasterImage,
    style: &RasterImage,
    extractor: &dyn FeatureExtractor,
    config: &StylizeConfig,
) -> Result<Stylized> {
    config
        .validate()
        .map_err(|(field, message)| Error::Config {
            pointer: format!("/stylize/{field}"),
            message,
        })?;
    let objective = StyleObjective::new(content, style, extractor, config)?;
    let mut image = initial_image(content, config.init)?;
    let mut history = Vec::with_capacity(config.iterations + 1);
    for iteration in 0..config.iterations {
        let (loss, grad) = objective.loss_and_gradient(&image)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        history.push(loss);
        let data: Vec<f64> = image
            .data()
            .iter()
            .zip(&grad.data)
            .map(|(v, g)| (v - config.eta * g).clamp(0.0, 1.0))
            .collect();
        image = RasterImage::from_fn(image.width(), image.height(), image.channels(), |x, y, c| {
            data[(y * image.width() + x) * image.channels() + c]
        })?;
    }
    let last = objective.loss(&image)?;
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: config.iterations,
        });
    }
    history.push(last);
    Ok(Stylized {
        image,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: usize, h: usize, ch: usize, seed: u64) -> RasterImage {
        let mut r = rng::seeded(seed);
        RasterImage::from_fn(w, h, ch, |_, _, _| r.random::<f64>()).unwrap()
    }

    #[test]
    fn shapes() {
        let e = default_extractor(3);
        let f = e.extract(&noise(32, 32, 3, 1)).unwrap();
        assert_eq!(f[0].shape(), (8, 32, 32));
        assert_eq!(f[1].shape(), (8, 16, 16));
        let odd = e.extract(&noise(9, 7, 1, 1)).unwrap();
        assert_eq!(odd[1].shape(), (8, 4, 5));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let img = noise(16, 16, 3, 2);
        assert_eq!(default_extractor(5).extract(&img).unwrap(), default_extractor(5).extract(&img).unwrap());
        assert_ne!(default_extractor(5), default_extractor(6));
    }

    #[test]
    fn filters_are_zero_mean_unit_norm() {
        for l in default_extractor(9).layers() {
            let fan = l.in_channels * 9;
            for f in l.weights.chunks(fan) {
                assert!(f.iter().sum::<f64>().abs() < 1e-12);
                assert!((f.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_gives_ln2() {
        let img = RasterImage::filled(12, 12, &[0.6, 0.6, 0.6]).unwrap();
        let f = default_extractor(1).extract(&img).unwrap();
        for v in &f[0].data {
            assert!((v - 2f64.ln()).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn gram_cases() {
        let z = FeatureTensor::zeros(3, 2, 2);
        assert!(gram(&z).data.iter().all(|v| *v == 0.0));
        let one = FeatureTensor::from_data(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gram(&one).data, vec![30.0 / 4.0]);
    }

    #[test]
    fn loss_examples() {
        let a = FeatureTensor::from_data(2, 2, 2, (0..8).map(f64::from).collect()).unwrap();
        let b = FeatureTensor {
            data: a.data.iter().map(|v| v + 1.0).collect(),
            ..a.clone()
        };
        assert_eq!(content_loss(std::slice::from_ref(&a), std::slice::from_ref(&a), 0).unwrap(), 0.0);
        assert_eq!(content_loss(std::slice::from_ref(&a), std::slice::from_ref(&b), 0).unwrap(), 1.0);
        assert!(content_loss(std::slice::from_ref(&a), &[b], 1).is_err());
        let small = FeatureTensor::zeros(2, 1, 2);
        assert!(content_loss(&[a], &[small], 0).is_err());

        let g = GramMatrix { dim: 4, data: vec![0.5; 16] };
        let mut h = g.clone();
        for i in 0..4 {
            h.data[i * 4 + i] += 1.0;
        }
        assert_eq!(style_loss(&[g.clone(), g.clone()], &[g.clone(), g.clone()]).unwrap(), 0.0);
        assert_eq!(style_loss(&[g.clone(), g.clone()], &[g.clone(), h]).unwrap(), 0.25);
        assert!(style_loss(std::slice::from_ref(&g), &[g.clone(), g.clone()]).is_err());
    }

    #[test]
    fn content_fixed_point_has_zero_gradient() {
        let e = default_extractor(4);
        let img = noise(8, 8, 3, 7);
        let cfg = StylizeConfig {
            beta_style: 0.0,
            ..StylizeConfig::default()
        };
        let (loss, grad) = total_loss_and_gradient(&img, &img, &noise(8, 8, 3, 8), &e, &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_on_rgb() {
        let e = default_extractor(2);
        let (c, s) = (noise(8, 8, 3, 1), noise(8, 8, 3, 2));
        let t = RasterImage::from_fn(8, 8, 3, |x, y, k| 0.25 + 0.5 * ((x + 2 * y + k) % 5) as f64 / 4.0).unwrap();
        let cfg = StylizeConfig::default();
        let obj = StyleObjective::new(&c, &s, &e, &cfg).unwrap();
        let (_, grad) = obj.loss_and_gradient(&t).unwrap();
        let h = 1e-5;
        for (x, y, k) in [(0, 0, 0), (3, 4, 1), (7, 7, 2), (5, 1, 0)] {
            let mut plus = t.clone();
            plus.set(x, y, k, t.get(x, y, k) + h);
            let mut minus = t.clone();
            minus.set(x, y, k, t.get(x, y, k) - h);
            let fd = (obj.loss(&plus).unwrap() - obj.loss(&minus).unwrap()) / (2.0 * h);
            let a = grad.get(x, y, k);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "({x},{y},{k}) analytic {a} numeric {fd}");
        }
    }

    #[test]
    fn zero_iterations_and_fixed_point() {
        let e = default_extractor(1);
        let c = noise(16, 16, 3, 3);
        let cfg = StylizeConfig {
            iterations: 0,
            ..StylizeConfig::default()
        };
        let out = stylize(&c, &noise(16, 16, 3, 4), &e, &cfg).unwrap();
        assert_eq!(out.image, c);
        assert_eq!(out.loss_history.len(), 1);

        let cfg = StylizeConfig {
            iterations: 5,
            ..StylizeConfig::default()
        };
        let out = stylize(&c, &c, &e, &cfg).unwrap();
        assert_eq!(out.image, c);
        assert!(out.loss_history.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn noise_init_is_seeded() {
        let e = default_extractor(1);
        let c = noise(8, 8, 3, 3);
        let cfg = StylizeConfig {
            iterations: 0,
            init: StylizeInit::Noise { seed: 12 },
            ..StylizeConfig::default()
        };
        let a = stylize(&c, &c, &e, &cfg).unwrap();
        let b = stylize(&c, &c, &e, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.image, c);
    }

    /// Healthy until every sample drops below a brightness floor.
    struct Fragile(ConvExtractor);

    impl FeatureExtractor for Fragile {
        fn layer_count(&self) -> usize {
            self.0.layer_count()
        }
        fn extract(&self, image: &RasterImage) -> Result<Vec<FeatureTensor>> {
            let mut f = self.0.extract(image)?;
            if image.data().iter().all(|v| *v < 0.05) {
                f[0].data[0] = f64::NAN;
            }
            Ok(f)
        }
        fn backward(&self, image: &RasterImage, upstream: &[FeatureTensor]) -> Result<ImageGradient> {
            let mut g = self.0.backward(image, upstream)?;
            g.data.iter_mut().for_each(|v| *v = 1.0);
            Ok(g)
        }
    }

    #[test]
    fn non_finite_loss_reports_iteration() {
        let e = Fragile(default_extractor(1));
        let c = RasterImage::filled(8, 8, &[0.5]).unwrap();
        let s = noise(8, 8, 1, 9);
        let cfg = StylizeConfig {
            eta: 0.2,
            iterations: 5,
            ..StylizeConfig::default()
        };
        // 0.5 -> 0.3 -> 0.1 -> clamped 0, which poisons the loss at iteration 3.
        let err = stylize(&c, &s, &e, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { iteration: 3 }), "{err}");
    }

    #[test]
    fn sfnb_round_trip_and_rejections() {
        let e = default_extractor(77);
        let bytes = e.to_sfnb();
        assert_eq!(&bytes[..4], b"SFNB");
        assert_eq!(ConvExtractor::from_sfnb(&bytes).unwrap(), e);
        assert!(ConvExtractor::from_sfnb(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ConvExtractor::from_sfnb(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(ConvExtractor::from_sfnb(&v2).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ConvExtractor::from_sfnb(&extra).is_err());
    }
}
