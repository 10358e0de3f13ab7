//! Image standardization: center crop to the shorter side, bicubic resize
//! to the encoder input size, channel replication for grayscale sources.
//!
//! Also hosts the deterministic statistics encoder used when no ML runtime
//! is available.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, ModelSpec, MOCK_STATS};
use crate::error::{Error, Result};

/// Row-major image with 1 or 3 interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<f32>,
}

impl RawImage {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} values, got {}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(Error::InvalidImage(format!(
                "value {} at index {i} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Single-channel image from a closure over `(x, y)`.
    pub fn from_fn_gray(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        RawImage::new(width, height, 1, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32, c: u8) -> f32 {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels as usize
            + c as usize;
        self.pixels[idx]
    }

    /// Per-pixel intensity: the channel mean.
    pub fn intensities(&self) -> Vec<f64> {
        let ch = self.channels as usize;
        self.pixels
            .chunks_exact(ch)
            .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / ch as f64)
            .collect()
    }

    fn crop(&self, rect: CropRect) -> RawImage {
        let ch = self.channels as usize;
        let mut pixels = Vec::with_capacity(rect.width as usize * rect.height as usize * ch);
        for y in rect.y..rect.y + rect.height {
            let start = (y as usize * self.width as usize + rect.x as usize) * ch;
            pixels.extend_from_slice(&self.pixels[start..start + rect.width as usize * ch]);
        }
        RawImage {
            width: rect.width,
            height: rect.height,
            channels: self.channels,
            pixels,
        }
    }

    fn to_rgb(&self) -> RawImage {
        if self.channels == 3 {
            return self.clone();
        }
        RawImage {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels: self.pixels.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }
}

/// Axis-aligned crop window in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Encoder-ready square RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedImage {
    image: RawImage,
    source_id: String,
    crop: CropRect,
}

impl StandardizedImage {
    pub fn size(&self) -> u32 {
        self.image.width
    }

    pub fn image(&self) -> &RawImage {
        &self.image
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn crop(&self) -> CropRect {
        self.crop
    }

    /// Planar `[3, s, s]` tensor data after per-channel normalization.
    pub fn to_chw(&self, mean: [f64; 3], std: [f64; 3]) -> Vec<f32> {
        let s = self.size() as usize;
        let mut out = vec![0f32; 3 * s * s];
        for (i, px) in self.image.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * s * s + i] = ((px[c] as f64 - mean[c]) / std[c]) as f32;
            }
        }
        out
    }
}

/// Patch tiling of a square encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub input_size: u32,
    pub patch_size: u32,
    pub patches: u32,
    pub flat_len: u32,
}

/// Centered window of side `min(W, H)`; odd remainders are dropped from the
/// right/bottom.
pub fn center_crop_rect(width: u32, height: u32) -> CropRect {
    let side = width.min(height);
    CropRect {
        x: (width - side) / 2,
        y: (height - side) / 2,
        width: side,
        height: side,
    }
}

pub fn center_crop(img: &RawImage) -> RawImage {
    let rect = center_crop_rect(img.width, img.height);
    if rect.width == img.width && rect.height == img.height {
        return img.clone();
    }
    img.crop(rect)
}

/// Catmull-Rom cubic convolution weight.
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for each output coordinate along one axis.
fn axis_taps(src_len: u32, dst_len: u32) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src_len as f64 / dst_len as f64;
    let last = src_len as i64 - 1;
    (0..dst_len)
        .map(|d| {
            let center = (d as f64 + 0.5) * scale - 0.5;
            let base = center.floor();
            let frac = center - base;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                let offset = k as i64 - 1;
                idx[k] = (base as i64 + offset).clamp(0, last) as usize;
                w[k] = cubic_weight(frac - offset as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resize of a square image to `size x size`.
pub fn resize(img: &RawImage, size: u32) -> Result<RawImage> {
    if size < 1 {
        return Err(Error::InvalidSize(size));
    }
    if img.width != img.height {
        return Err(Error::Geometry(format!(
            "resize expects a square image, got {}x{}",
            img.width, img.height
        )));
    }
    if img.width == size {
        return Ok(img.clone());
    }
    let ch = img.channels as usize;
    let src = img.width as usize;
    let dst = size as usize;
    let taps = axis_taps(img.width, size);

    // Horizontal pass: src rows x dst columns.
    let mut tmp = vec![0f64; src * dst * ch];
    for y in 0..src {
        let row = &img.pixels[y * src * ch..(y + 1) * src * ch];
        for (x, (idx, w)) in taps.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * row[idx[k] * ch + c] as f64;
                }
                tmp[(y * dst + x) * ch + c] = acc;
            }
        }
    }

    let mut pixels = vec![0f32; dst * dst * ch];
    for (y, (idx, w)) in taps.iter().enumerate() {
        for x in 0..dst {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * tmp[(idx[k] * dst + x) * ch + c];
                }
                pixels[(y * dst + x) * ch + c] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(RawImage {
        width: size,
        height: size,
        channels: img.channels,
        pixels,
    })
}

/// Center crop, resize to the encoder input size, replicate to RGB.
pub fn standardize(
    img: &RawImage,
    spec: &ModelSpec,
    source_id: impl Into<String>,
) -> Result<StandardizedImage> {
    spec.validate()?;
    let crop = center_crop_rect(img.width, img.height);
    let cropped = if crop.width == img.width && crop.height == img.height {
        img.clone()
    } else {
        img.crop(crop)
    };
    let resized = resize(&cropped, spec.input_size)?;
    Ok(StandardizedImage {
        image: resized.to_rgb(),
        source_id: source_id.into(),
        crop,
    })
}

pub fn patch_grid(spec: &ModelSpec) -> Result<PatchGrid> {
    let (s, p) = (spec.input_size, spec.patch_size);
    if p == 0 || s == 0 || s % p != 0 {
        return Err(Error::Geometry(format!(
            "input size {s} not divisible by patch size {p}"
        )));
    }
    let side = s / p;
    Ok(PatchGrid {
        input_size: s,
        patch_size: p,
        patches: side * side,
        flat_len: 3 * p * p,
    })
}

/// Number of leading summary statistics in a stats embedding.
pub const STATS_HEADER_LEN: usize = 8;

/// Deterministic statistics embedding.
///
/// Components 0..8: mean, standard deviation, lag-1 horizontal and vertical
/// autocorrelation, lag-2 horizontal and vertical autocorrelation, variance
/// of row means, variance of column means. The remaining `dim - 8`
/// components sample pixel intensities at a fixed stride (zero-padded when
/// the image has fewer pixels than slots).
pub fn stats_encode(img: &RawImage, dim: usize) -> Result<Embedding> {
    if dim < STATS_HEADER_LEN {
        return Err(Error::Param(format!(
            "stats embedding needs dim >= {STATS_HEADER_LEN}, got {dim}"
        )));
    }
    if img.width < 3 || img.height < 3 {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
        });
    }
    let w = img.width as usize;
    let h = img.height as usize;
    let x = img.intensities();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;

    let autocorr = |dy: usize, dx: usize| -> f64 {
        if var == 0.0 || dx >= w || dy >= h {
            return 0.0;
        }
        let mut acc = 0.0;
        for r in 0..h - dy {
            for c in 0..w - dx {
                acc += (x[r * w + c] - mean) * (x[(r + dy) * w + c + dx] - mean);
            }
        }
        acc / ((h - dy) * (w - dx)) as f64 / var
    };

    let row_means: Vec<f64> = x.chunks_exact(w).map(|r| r.iter().sum::<f64>() / w as f64).collect();
    let col_means: Vec<f64> = (0..w)
        .map(|c| (0..h).map(|r| x[r * w + c]).sum::<f64>() / h as f64)
        .collect();

    let mut values = Vec::with_capacity(dim);
    values.push(mean);
    values.push(var.sqrt());
    values.push(autocorr(0, 1));
    values.push(autocorr(1, 0));
    values.push(autocorr(0, 2));
    values.push(autocorr(2, 0));
    values.push(population_variance(&row_means));
    values.push(population_variance(&col_means));

    let slots = dim - STATS_HEADER_LEN;
    if slots > 0 {
        let stride = (x.len() / slots).max(1);
        values.extend((0..slots).map(|k| x.get(k * stride).copied().unwrap_or(0.0)));
    }
    Embedding::new(MOCK_STATS, values)
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Decodes a PNG or JPEG file into a grayscale or RGB [`RawImage`].
pub fn load_image(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    from_dynamic(&decoded)
}

pub fn from_dynamic(img: &image::DynamicImage) -> Result<RawImage> {
    use image::ColorType;
    match img.color() {
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
            let gray = img.to_luma32f();
            RawImage::new(gray.width(), gray.height(), 1, clamp_unit(gray.into_raw()))
        }
        _ => {
            let rgb = img.to_rgb32f();
            RawImage::new(rgb.width(), rgb.height(), 3, clamp_unit(rgb.into_raw()))
        }
    }
}

fn clamp_unit(mut v: Vec<f32>) -> Vec<f32> {
    for p in &mut v {
        *p = p.clamp(0.0, 1.0);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{VIT_B_16, VIT_B_32, VIT_L_14};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn gray(w: u32, h: u32) -> RawImage {
        RawImage::from_fn_gray(w, h, |x, y| ((x + y * w) as f32) / (w * h) as f32).unwrap()
    }

    #[test]
    fn crop_examples() {
        let big = RawImage::new(3264, 2448, 1, vec![0.5; 3264 * 2448]).unwrap();
        let c = center_crop(&big);
        assert_eq!((c.width(), c.height()), (2448, 2448));

        let sq = gray(224, 224);
        assert_eq!(center_crop(&sq), sq);

        // 5x3: W - c = 2, so one column dropped on each side -> columns 1..=3.
        let img = RawImage::from_fn_gray(5, 3, |x, y| (x * 10 + y) as f32 / 100.0).unwrap();
        let c = center_crop(&img);
        assert_eq!((c.width(), c.height()), (3, 3));
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(c.get(x, y, 0), img.get(x + 1, y, 0));
            }
        }
        // 6x3: remainder 3, floor puts one column left, two right.
        let img = RawImage::from_fn_gray(6, 3, |x, _| x as f32 / 10.0).unwrap();
        let c = center_crop(&img);
        assert_eq!(c.get(0, 0, 0), img.get(1, 0, 0));
        assert_eq!(c.get(2, 0, 0), img.get(3, 0, 0));
    }

    #[test]
    fn crop_is_idempotent() {
        for (w, h) in [(7, 4), (4, 9), (10, 10), (1, 3)] {
            let once = center_crop(&gray(w, h));
            assert_eq!(center_crop(&once), once);
        }
    }

    #[test]
    fn resize_examples() {
        let img = RawImage::new(2448, 2448, 1, vec![0.25; 2448 * 2448]).unwrap();
        let r = resize(&img, 336).unwrap();
        assert_eq!((r.width(), r.height()), (336, 336));

        let same = gray(16, 16);
        assert_eq!(resize(&same, 16).unwrap(), same);

        let constant = RawImage::new(9, 9, 3, vec![0.37; 243]).unwrap();
        for s in [1, 4, 9, 20, 37] {
            let r = resize(&constant, s).unwrap();
            for &p in r.pixels() {
                assert!((p - 0.37).abs() < 1e-6, "{p}");
            }
        }
        assert!(matches!(resize(&same, 0), Err(Error::InvalidSize(0))));
    }

    #[test]
    fn resize_preserves_mean_of_gradients() {
        for (src, dst) in [(50, 120), (120, 50), (85, 336), (250, 224)] {
            let img = RawImage::from_fn_gray(src, src, |x, y| {
                0.2 + 0.6 * (x as f32 + 0.5 * y as f32) / (1.5 * src as f32)
            })
            .unwrap();
            let mean = |im: &RawImage| {
                im.pixels().iter().map(|&p| p as f64).sum::<f64>() / im.pixels().len() as f64
            };
            let r = resize(&img, dst).unwrap();
            assert!((mean(&r) - mean(&img)).abs() < 0.01);
        }
    }

    #[test]
    fn catmull_rom_weights_partition_unity() {
        for i in 0..=100 {
            let f = i as f64 / 100.0;
            let s: f64 = (0..4).map(|k| cubic_weight(f - (k as f64 - 1.0))).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
    }

    #[test]
    fn standardize_examples() {
        let l14 = ModelSpec::registered(VIT_L_14).unwrap();
        let small = gray(85, 85);
        let s = standardize(&small, &l14, "extrusion.png").unwrap();
        assert_eq!(s.size(), 336);
        assert_eq!(s.image().channels(), 3);
        assert_eq!(s.image().pixels().len(), 336 * 336 * 3);

        let sts = gray(250, 250);
        assert_eq!(standardize(&sts, &l14, "sts").unwrap().size(), 336);

        let exact = gray(336, 336);
        let s = standardize(&exact, &l14, "exact").unwrap();
        for y in 0..336 {
            for x in 0..336 {
                assert_eq!(s.image().get(x, y, 1), exact.get(x, y, 0));
            }
        }
        assert_eq!(
            s.crop(),
            CropRect {
                x: 0,
                y: 0,
                width: 336,
                height: 336
            }
        );
        assert_eq!(s.source_id(), "exact");
    }

    #[test]
    fn patch_grid_examples() {
        let g = patch_grid(&ModelSpec::registered(VIT_B_32).unwrap()).unwrap();
        assert_eq!((g.patches, g.flat_len), (49, 3072));
        let g = patch_grid(&ModelSpec::registered(VIT_L_14).unwrap()).unwrap();
        assert_eq!((g.patches, g.flat_len), (576, 588));
        let g = patch_grid(&ModelSpec::registered(VIT_B_16).unwrap()).unwrap();
        assert_eq!(g.patches * g.patch_size * g.patch_size, 224 * 224);
        let single = ModelSpec::new("one", 14, 14, 4).unwrap();
        assert_eq!(patch_grid(&single).unwrap().patches, 1);
        let bad = ModelSpec {
            input_size: 100,
            ..single
        };
        assert!(matches!(patch_grid(&bad), Err(Error::Geometry(_))));
    }

    #[test]
    fn stats_constant_image() {
        let img = RawImage::new(10, 10, 1, vec![0.4; 100]).unwrap();
        let e = stats_encode(&img, 12).unwrap();
        let v = e.values();
        assert!((v[0] - 0.4).abs() < 1e-7);
        assert_eq!(&v[1..8], &[0.0; 7]);
        assert_eq!(e.model_id(), MOCK_STATS);
    }

    #[test]
    fn stats_white_noise_autocorrelation() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(99);
        let (w, h) = (200u32, 150u32);
        let px: Vec<f32> = (0..w * h).map(|_| rng.gen::<f32>()).collect();
        let img = RawImage::new(w, h, 1, px).unwrap();
        let e = stats_encode(&img, 64).unwrap();
        let bound = 3.0 / ((w * h) as f64).sqrt();
        assert!(e.values()[2].abs() < bound);
        assert!(e.values()[3].abs() < bound);
    }

    #[test]
    fn stats_layout_and_errors() {
        let img = gray(4, 4);
        let e = stats_encode(&img, 8 + 4).unwrap();
        let x = img.intensities();
        // stride 16 / 4 = 4
        assert_eq!(&e.values()[8..], &[x[0], x[4], x[8], x[12]]);
        // More slots than pixels pads with zeros.
        let e = stats_encode(&gray(3, 3), 20).unwrap();
        assert_eq!(e.values()[8 + 9..], [0.0, 0.0, 0.0]);
        assert!(matches!(
            stats_encode(&gray(2, 5), 16),
            Err(Error::ImageTooSmall { .. })
        ));
        assert!(stats_encode(&gray(5, 5), 7).is_err());
        let a = stats_encode(&gray(30, 20), 64).unwrap();
        let b = stats_encode(&gray(30, 20), 64).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn standardize_shape(w in 1u32..400, h in 1u32..400, which in 0usize..3) {
            let spec = ModelSpec::registry().swap_remove(which);
            let img = RawImage::new(w, h, 1, vec![0.5; (w * h) as usize]).unwrap();
            let s = standardize(&img, &spec, "p").unwrap();
            prop_assert_eq!(s.image().width(), spec.input_size);
            prop_assert_eq!(s.image().height(), spec.input_size);
            prop_assert_eq!(s.image().pixels().len(), (spec.input_size * spec.input_size * 3) as usize);
        }
    }
}
