//! Raster containers and the low-level kernels shared by every pipeline.
//!
//! Samples are `f64` in `[0, 1]`, row-major, channel-interleaved. Borders are
//! always handled by replicating the nearest edge pixel.

use crate::error::{Error, Result};

/// Largest accepted width or height.
pub const MAX_DIMENSION: usize = 16384;

/// Gradient magnitudes at or below this count as degenerate.
pub const DEGENERATE_MAGNITUDE: f64 = 1e-12;

/// A float image with 1 (gray), 3 (RGB) or 4 (RGBA) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("empty image {width}x{height}")));
    }
    if width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(Error::invalid(format!(
            "image {width}x{height} exceeds the {MAX_DIMENSION} px limit"
        )));
    }
    Ok(())
}

impl RasterImage {
    /// Black (all-zero) image.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        check_dims(width, height)?;
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    /// Image with every pixel set to `color`; the channel count is `color.len()`.
    pub fn filled(width: usize, height: usize, color: &[f64]) -> Result<Self> {
        let mut img = Self::new(width, height, color.len())?;
        if color.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("fill color outside [0,1]"));
        }
        for px in img.data.chunks_exact_mut(color.len()) {
            px.copy_from_slice(color);
        }
        Ok(img)
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("sample {bad} outside [0,1]")));
        }
        img.data = data;
        Ok(img)
    }

    /// Builds an image from a per-pixel closure; results are clamped to [0,1].
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = clamp01(f(x, y, c));
                }
            }
        }
        Ok(img)
    }

    /// 8-bit samples, each mapped to `v / 255`.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::from_data(width, height, channels, data)
    }

    /// Quantizes to 8 bits with round-half-up.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (clamp01(*v) * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub(crate) fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = clamp01(v);
    }

    /// RGB color at a pixel; gray is replicated and alpha dropped.
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.pixel(x, y);
        match self.channels {
            1 => [p[0]; 3],
            _ => [p[0], p[1], p[2]],
        }
    }

    /// Color at the pixel nearest to a continuous position, clamped to bounds.
    pub fn rgb_nearest(&self, x: f64, y: f64) -> [f64; 3] {
        let (xi, yi) = nearest_pixel(x, y, self.width, self.height);
        self.rgb(xi, yi)
    }

    /// Three-channel copy. Gray is replicated; alpha is discarded.
    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.pixel_count() * 3);
        for px in self.data.chunks_exact(self.channels) {
            match self.channels {
                1 => data.extend_from_slice(&[px[0], px[0], px[0]]),
                _ => data.extend_from_slice(&px[..3]),
            }
        }
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Splits out channel `c` as a scalar field.
    pub fn channel(&self, c: usize) -> ScalarField {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        ScalarField {
            width: self.width,
            height: self.height,
            data,
        }
    }

    fn from_channels(width: usize, height: usize, planes: &[ScalarField]) -> RasterImage {
        let channels = planes.len();
        let mut data = vec![0.0; width * height * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.data.iter().enumerate() {
                data[i * channels + c] = clamp01(*v);
            }
        }
        RasterImage {
            width,
            height,
            channels,
            data,
        }
    }

    /// Per-channel mean color.
    pub fn mean_color(&self) -> Vec<f64> {
        let first = self.data[..self.channels].to_vec();
        let mut sum = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for ((s, v), f) in sum.iter_mut().zip(px).zip(&first) {
                *s += v - f;
            }
        }
        let n = self.pixel_count() as f64;
        sum.iter().zip(&first).map(|(s, f)| clamp01(f + s / n)).collect()
    }

    pub fn same_dims(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

pub(crate) fn nearest_pixel(x: f64, y: f64, width: usize, height: usize) -> (usize, usize) {
    let xi = (x + 0.5).floor().clamp(0.0, (width - 1) as f64) as usize;
    let yi = (y + 0.5).floor().clamp(0.0, (height - 1) as f64) as usize;
    (xi, yi)
}

/// A single-channel field of finite floats (not range-restricted).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "field data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field contains non-finite values"));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Replicate-edge lookup.
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        let xi = x.clamp(0, self.width as i64 - 1) as usize;
        let yi = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yi * self.width + xi]
    }

    /// Value at the pixel nearest a continuous position (clamped to bounds).
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (xi, yi) = nearest_pixel(x, y, self.width, self.height);
        self.get(xi, yi)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_dims(&self, other: &ScalarField) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn transpose(&self) -> ScalarField {
        ScalarField::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Divides by the maximum so the peak becomes 1. Fields whose maximum is
    /// not positive are returned unchanged.
    pub fn max_normalized(&self) -> ScalarField {
        let m = self.max();
        if m > 0.0 {
            self.map(|v| v / m)
        } else {
            self.clone()
        }
    }
}

/// A small odd-sized correlation kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "kernel must have odd dimensions, got {width}x{height}"
            )));
        }
        if weights.len() != width * height {
            return Err(Error::invalid("kernel weight count does not match its shape"));
        }
        Ok(Self { width, height, weights })
    }

    /// Builds a kernel from rows of equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged kernel rows"));
        }
        Self::new(width, height, rows.concat())
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Correlates `field` with `kernel` (the kernel is not flipped), replicating
/// edge pixels past the border.
pub fn convolve2d(field: &ScalarField, kernel: &Kernel) -> ScalarField {
    let rx = (kernel.width / 2) as i64;
    let ry = (kernel.height / 2) as i64;
    ScalarField::from_fn(field.width, field.height, |x, y| {
        let mut acc = 0.0;
        for ky in 0..kernel.height {
            for kx in 0..kernel.width {
                let w = kernel.weights[ky * kernel.width + kx];
                if w != 0.0 {
                    let sx = x as i64 + kx as i64 - rx;
                    let sy = y as i64 + ky as i64 - ry;
                    acc += w * field.get_clamped(sx, sy);
                }
            }
        }
        acc
    })
}

/// Horizontal and vertical derivatives of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: ScalarField,
    pub gy: ScalarField,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.gx.width
    }

    pub fn height(&self) -> usize {
        self.gx.height
    }

    /// Gradient vector at the pixel nearest a continuous position.
    pub fn at(&self, x: f64, y: f64) -> (f64, f64) {
        (self.gx.sample(x, y), self.gy.sample(x, y))
    }
}

/// Standard 3x3 Sobel responses with replicate borders. Written as sums of
/// opposing differences, so flat regions give exactly zero and transposing
/// the input swaps the components bit for bit.
pub fn sobel_gradients(image: &ScalarField) -> Result<GradientField> {
    if image.width < 3 || image.height < 3 {
        return Err(Error::invalid(format!(
            "sobel needs at least 3x3, got {}x{}",
            image.width, image.height
        )));
    }
    let g = |x: i64, y: i64| image.get_clamped(x, y);
    let gx = ScalarField::from_fn(image.width, image.height, |x, y| {
        let (x, y) = (x as i64, y as i64);
        (g(x + 1, y - 1) - g(x - 1, y - 1))
            + 2.0 * (g(x + 1, y) - g(x - 1, y))
            + (g(x + 1, y + 1) - g(x - 1, y + 1))
    });
    let gy = ScalarField::from_fn(image.width, image.height, |x, y| {
        let (x, y) = (x as i64, y as i64);
        (g(x - 1, y + 1) - g(x - 1, y - 1))
            + 2.0 * (g(x, y + 1) - g(x, y - 1))
            + (g(x + 1, y + 1) - g(x + 1, y - 1))
    });
    Ok(GradientField { gx, gy })
}

/// Angle of a gradient vector in (-pi, pi]; 0 when the vector is degenerate.
pub fn gradient_angle(gx: f64, gy: f64) -> f64 {
    if gx.hypot(gy) <= DEGENERATE_MAGNITUDE {
        0.0
    } else {
        crate::planning::normalize_angle(gy.atan2(gx))
    }
}

/// Per-pixel magnitude and angle of a gradient field.
pub fn gradient_magnitude_and_angle(g: &GradientField) -> (ScalarField, ScalarField) {
    let w = g.gx.width;
    let h = g.gx.height;
    let mag = ScalarField::from_fn(w, h, |x, y| g.gx.get(x, y).hypot(g.gy.get(x, y)));
    let ang = ScalarField::from_fn(w, h, |x, y| gradient_angle(g.gx.get(x, y), g.gy.get(x, y)));
    (mag, ang)
}

/// Normalized 1D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Separable Gaussian blur of a scalar field. `sigma == 0` is the identity.
pub fn blur_field(field: &ScalarField, sigma: f64) -> Result<ScalarField> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as i64;
    // Weighted deviations from the center sample: a flat window returns the
    // center value exactly. The clamp absorbs rounding in the tap sum.
    let pass = |src: &ScalarField, horizontal: bool| {
        ScalarField::from_fn(src.width, src.height, |x, y| {
            let at = |k: i64| {
                if horizontal {
                    src.get_clamped(x as i64 + k, y as i64)
                } else {
                    src.get_clamped(x as i64, y as i64 + k)
                }
            };
            let center = src.get(x, y);
            let (mut lo, mut hi, mut acc) = (center, center, 0.0);
            for (k, w) in taps.iter().enumerate() {
                let v = at(k as i64 - r);
                lo = lo.min(v);
                hi = hi.max(v);
                acc += w * (v - center);
            }
            (center + acc).clamp(lo, hi)
        })
    };
    Ok(pass(&pass(field, true), false))
}

/// Gaussian blur applied to every channel independently.
pub fn gaussian_blur(image: &RasterImage, sigma: f64) -> Result<RasterImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let planes = (0..image.channels)
        .map(|c| blur_field(&image.channel(c), sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(RasterImage::from_channels(image.width, image.height, &planes))
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Weighted luma of one color; exact for neutral grays.
pub(crate) fn luma(rgb: [f64; 3]) -> f64 {
    if rgb[0] == rgb[1] && rgb[1] == rgb[2] {
        return rgb[0];
    }
    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2]
}

/// Rec. 601 luma of nonlinear RGB; gray passes through and alpha is ignored.
pub fn luminance(image: &RasterImage) -> ScalarField {
    match image.channels {
        1 => image.channel(0),
        _ => {
            let data = image
                .data
                .chunks_exact(image.channels)
                .map(|p| luma([p[0], p[1], p[2]]))
                .collect();
            ScalarField {
                width: image.width,
                height: image.height,
                data,
            }
        }
    }
}
