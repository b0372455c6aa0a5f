//! Spectral residual saliency and the saliency-masked image compression
//! built on top of it.
//!
//! The saliency map of a single-channel image `I` is computed as
//!
//! ```text
//! F      = DFT2(I)
//! A, P   = |F|, arg F
//! L      = ln(A + eps)
//! R      = L - mean3x3(L)
//! S      = gauss(|IDFT2(exp(R) * e^{iP})|^2)
//! ```
//!
//! followed by min-max normalisation to `[0, 1]`. Thresholding the map gives
//! a binary object mask on the small analysis grid, which is upsampled to the
//! frame size and multiplied into the frame.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::imageio::{self, Image, ImageError, Mask};

/// Tunables of the saliency pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SrvsParams {
    /// Side of the square analysis grid the frame is resized to.
    pub analysis_size: usize,
    /// Guard inside `ln(A + eps)`.
    pub epsilon: f64,
    /// Side of the box filter smoothing the log spectrum (odd).
    pub spectrum_filter: usize,
    /// Gaussian sigma is `width / blur_divisor`.
    pub blur_divisor: f64,
}

impl Default for SrvsParams {
    fn default() -> Self {
        SrvsParams {
            analysis_size: 64,
            epsilon: 1e-9,
            spectrum_filter: 3,
            blur_divisor: 8.0,
        }
    }
}

/// Per-pixel saliency on the analysis grid, normalised to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, scores: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || scores.len() != width * height {
            return Err(ImageError::InvalidArgument(format!(
                "saliency map {width}x{height} with {} scores",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(ImageError::InvalidArgument(
                "saliency scores must lie in [0, 1]".into(),
            ));
        }
        Ok(SaliencyMap {
            width,
            height,
            scores,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Map quantised to 8 bits for viewing.
    pub fn to_image(&self) -> Image {
        let pixels = self
            .scores
            .iter()
            .map(|s| (s * 255.0 + 0.5).floor() as u8)
            .collect();
        Image::new(self.width, self.height, 1, pixels).expect("map dimensions are valid")
    }
}

/// Full-resolution masked frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub image: Image,
    pub mask: Mask,
    pub discard_ratio: f64,
}

/// Threshold picked for a requested discard ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub threshold: f64,
    /// Fraction of scores `<= threshold`, i.e. what `binarize` will discard.
    pub achieved_discard: f64,
    /// Number of scores exactly equal to the threshold.
    pub ties: usize,
}

impl ThresholdChoice {
    /// True when ties at the threshold pushed the achieved ratio away from
    /// the requested rank.
    pub fn tie_affected(&self) -> bool {
        self.ties > 1
    }
}

/// Planned 2-D transforms for one grid size.
pub struct Srvs {
    width: usize,
    height: usize,
    params: SrvsParams,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    kernel: Vec<f64>,
}

impl Srvs {
    pub fn new(width: usize, height: usize, params: SrvsParams) -> Result<Self, ImageError> {
        if width < 8 || height < 8 {
            return Err(ImageError::InvalidArgument(format!(
                "saliency needs at least 8x8 input, got {width}x{height}"
            )));
        }
        if params.spectrum_filter % 2 == 0 || params.spectrum_filter > width.min(height) {
            return Err(ImageError::InvalidArgument(format!(
                "spectrum filter size {} must be odd and fit the image",
                params.spectrum_filter
            )));
        }
        if !(params.blur_divisor > 0.0) {
            return Err(ImageError::InvalidArgument("blur divisor must be positive".into()));
        }
        let mut planner = FftPlanner::new();
        let sigma = width as f64 / params.blur_divisor;
        Ok(Srvs {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
            kernel: gaussian_kernel(sigma),
            params,
        })
    }

    pub fn compute(&self, gray: &Image) -> Result<SaliencyMap, ImageError> {
        if gray.channels() != 1 {
            return Err(ImageError::InvalidArgument("saliency expects a single-channel image".into()));
        }
        if gray.width() != self.width || gray.height() != self.height {
            return Err(ImageError::InvalidArgument(format!(
                "engine planned for {}x{}, got {}x{}",
                self.width,
                self.height,
                gray.width(),
                gray.height()
            )));
        }
        let (w, h) = (self.width, self.height);
        let mut spectrum: Vec<Complex<f64>> = gray
            .pixels()
            .iter()
            .map(|&p| Complex::new(f64::from(p), 0.0))
            .collect();
        self.transform(&mut spectrum, true);

        let eps = self.params.epsilon;
        let log_amp: Vec<f64> = spectrum.iter().map(|c| (c.norm() + eps).ln()).collect();
        let smoothed = box_filter_replicate(&log_amp, w, h, self.params.spectrum_filter);
        for ((c, l), s) in spectrum.iter_mut().zip(&log_amp).zip(&smoothed) {
            let phase = c.im.atan2(c.re);
            *c = Complex::from_polar((l - s).exp(), phase);
        }
        self.transform(&mut spectrum, false);

        let energy: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();
        let blurred = separable_blur_replicate(&energy, w, h, &self.kernel);
        Ok(SaliencyMap {
            width: w,
            height: h,
            scores: normalize_min_max(blurred),
        })
    }

    /// In-place 2-D DFT over a row-major buffer. The inverse is left
    /// unnormalised; the squared-magnitude map is rescaled afterwards anyway.
    fn transform(&self, data: &mut [Complex<f64>], forward: bool) {
        let (w, h) = (self.width, self.height);
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process(data);
        let mut column = vec![Complex::default(); h];
        for x in 0..w {
            for (y, v) in column.iter_mut().enumerate() {
                *v = data[y * w + x];
            }
            col.process(&mut column);
            for (y, v) in column.iter().enumerate() {
                data[y * w + x] = *v;
            }
        }
    }
}

/// Saliency map of a single-channel image with default parameters.
pub fn compute_saliency(gray_small: &Image) -> Result<SaliencyMap, ImageError> {
    compute_saliency_with(gray_small, &SrvsParams::default())
}

pub fn compute_saliency_with(gray_small: &Image, params: &SrvsParams) -> Result<SaliencyMap, ImageError> {
    Srvs::new(gray_small.width(), gray_small.height(), params.clone())?.compute(gray_small)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn clamp_index(i: i64, len: usize) -> usize {
    i.clamp(0, len as i64 - 1) as usize
}

fn box_filter_replicate(data: &[f64], w: usize, h: usize, size: usize) -> Vec<f64> {
    let r = (size / 2) as i64;
    let norm = (size * size) as f64;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                let yy = clamp_index(y as i64 + dy, h);
                for dx in -r..=r {
                    acc += data[yy * w + clamp_index(x as i64 + dx, w)];
                }
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

fn separable_blur_replicate(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * row[clamp_index(x as i64 + k as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp_index(y as i64 + k as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Rescale to `[0, 1]`. A flat input maps to all zeros.
fn normalize_min_max(mut values: Vec<f64>) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        values.iter_mut().for_each(|v| *v = 0.0);
        return values;
    }
    for v in values.iter_mut() {
        *v = ((*v - lo) / span).clamp(0.0, 1.0);
    }
    values
}

/// Pick the empirical quantile of the scores so that `binarize` discards the
/// `floor(target * N)` lowest-scoring pixels (plus any ties at that score).
pub fn threshold_for_ratio(map: &SaliencyMap, target_discard: f64) -> ThresholdChoice {
    let target = if target_discard.is_nan() { 0.0 } else { target_discard.clamp(0.0, 1.0) };
    let n = map.scores.len();
    let mut sorted = map.scores.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((target * n as f64).floor() as usize).min(n);
    let threshold = if rank == 0 { sorted[0] - 1.0 } else { sorted[rank - 1] };
    let discarded = sorted.partition_point(|&s| s <= threshold);
    let ties = sorted.iter().filter(|&&s| s == threshold).count();
    ThresholdChoice {
        threshold,
        achieved_discard: discarded as f64 / n as f64,
        ties,
    }
}

/// `mask(p) = 1` iff `score(p) > threshold`.
pub fn binarize(map: &SaliencyMap, threshold: f64) -> Mask {
    let bits = map.scores.iter().map(|&s| u8::from(s > threshold)).collect();
    Mask::new(map.width, map.height, bits).expect("map dimensions are valid")
}

/// Zero every channel of the pixels where the mask is 0.
pub fn compress(image: &Image, mask_full: &Mask) -> Result<MaskedImage, ImageError> {
    if image.width() != mask_full.width() || image.height() != mask_full.height() {
        return Err(ImageError::InvalidArgument(format!(
            "mask {}x{} does not match image {}x{}",
            mask_full.width(),
            mask_full.height(),
            image.width(),
            image.height()
        )));
    }
    let mut out = image.clone();
    let c = image.channels();
    for (px, &bit) in out.pixels_mut().chunks_exact_mut(c).zip(mask_full.bits()) {
        if bit == 0 {
            px.fill(0);
        }
    }
    Ok(MaskedImage {
        image: out,
        discard_ratio: mask_full.count_zeros() as f64 / mask_full.len() as f64,
        mask: mask_full.clone(),
    })
}

/// Everything `srvs_compress` produced along the way.
#[derive(Debug, Clone)]
pub struct CompressionReport {
    pub masked: MaskedImage,
    pub saliency: SaliencyMap,
    pub threshold: ThresholdChoice,
}

/// Saliency-masked compression of a full frame to a target discard ratio.
pub fn srvs_compress(image: &Image, target_discard: f64, analysis_size: usize) -> Result<MaskedImage, ImageError> {
    let params = SrvsParams {
        analysis_size,
        ..SrvsParams::default()
    };
    srvs_compress_with(image, target_discard, &params).map(|r| r.masked)
}

pub fn srvs_compress_with(
    image: &Image,
    target_discard: f64,
    params: &SrvsParams,
) -> Result<CompressionReport, ImageError> {
    if image.width() < 8 || image.height() < 8 {
        return Err(ImageError::InvalidArgument(format!(
            "frame must be at least 8x8, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    if !(0.0..1.0).contains(&target_discard) {
        return Err(ImageError::InvalidArgument(format!(
            "target discard ratio {target_discard} outside [0, 1)"
        )));
    }
    let size = params.analysis_size;
    if size > image.width() || size > image.height() {
        return Err(ImageError::InvalidArgument(format!(
            "analysis grid {size}x{size} exceeds frame {}x{}",
            image.width(),
            image.height()
        )));
    }
    let gray = imageio::to_grayscale(image);
    let small = imageio::resize_bilinear(&gray, size, size)?;
    let saliency = compute_saliency_with(&small, params)?;
    let threshold = threshold_for_ratio(&saliency, target_discard);
    let mask = binarize(&saliency, threshold.threshold);
    let full = imageio::upsample_mask_nearest(&mask, image.width(), image.height())?;
    Ok(CompressionReport {
        masked: compress(image, &full)?,
        saliency,
        threshold,
    })
}
