//! Stochastic textured surfaces from a causal first-order spatial
//! autoregressive field, with local and global defect injection.
//!
//! The field follows `y[i,j] = phi1 * y[i,j-1] + phi2 * y[i-1,j] + e[i,j]`
//! in raster order. The first row and column are pure noise, a 25-pixel
//! burn-in margin is generated and trimmed, and the result is min-max
//! mapped to `[0, 1]`.
//!
//! Noise comes from PCG64 (`Lcg128Xsl64`) seeded with `seed_from_u64`,
//! turned into normal variates by Box-Muller: `u1` and `u2` are 53-bit
//! uniforms, the pair yields `r cos t` then `r sin t` with
//! `r = sqrt(-2 ln(1 - u1))` and `t = 2 pi u2`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::RawImage;

pub const BURN_IN: usize = 25;
pub const DEFAULT_REGION_SIDE: usize = 20;
/// Factor applied to both coefficients for a global defect.
pub const GLOBAL_DEFECT_FACTOR: f64 = 0.95;
/// Factor applied to both coefficients inside a local defect region.
pub const LOCAL_DEFECT_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StsParams {
    pub phi1: f64,
    pub phi2: f64,
    pub size: usize,
    pub noise_sd: f64,
}

impl Default for StsParams {
    fn default() -> Self {
        StsParams {
            phi1: 0.6,
            phi2: 0.35,
            size: 250,
            noise_sd: 1.0,
        }
    }
}

impl StsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi1.is_finite() && self.phi2.is_finite()) {
            return Err(Error::Param("coefficients must be finite".into()));
        }
        if self.phi1.abs() + self.phi2.abs() >= 1.0 {
            return Err(Error::Param(format!(
                "|phi1| + |phi2| = {} is not stationary (must be < 1)",
                self.phi1.abs() + self.phi2.abs()
            )));
        }
        if self.size < 16 {
            return Err(Error::Param(format!("size {} below minimum 16", self.size)));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(Error::Param(format!("noise sd {} must be positive", self.noise_sd)));
        }
        Ok(())
    }

    fn scaled(&self, factor: f64) -> StsParams {
        StsParams {
            phi1: self.phi1 * factor,
            phi2: self.phi2 * factor,
            ..*self
        }
    }
}

/// Rectangle in output-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Defect {
    None,
    Local(Region),
    Global,
}

impl Defect {
    pub fn class_name(&self) -> &'static str {
        match self {
            Defect::None => "nominal",
            Defect::Local(_) => "local",
            Defect::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsImage {
    /// Row-major `size x size` values in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub defect: Defect,
    pub seed: u64,
    /// Nominal parameters the image was derived from.
    pub params: StsParams,
}

impl StsImage {
    pub fn size(&self) -> usize {
        self.params.size
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn to_raw_image(&self) -> RawImage {
        let s = self.size() as u32;
        RawImage::new(s, s, 1, self.pixels.iter().map(|&p| p as f32).collect())
            .expect("mapped pixels lie in [0, 1]")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = self.size() as u32;
        let buf = image::GrayImage::from_raw(s, s, self.to_gray8())
            .expect("buffer matches dimensions");
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent per-image seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Box-Muller normal variates over PCG64.
pub struct NormalStream {
    rng: Pcg64,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        NormalStream {
            rng: Pcg64::seed_from_u64(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        self.spare = Some(r * t.sin());
        r * t.cos()
    }
}

/// Unmapped field of side `params.size`; coefficients inside `region` are
/// scaled by `region_factor`.
pub fn raw_field(
    params: &StsParams,
    seed: u64,
    region: Option<(Region, f64)>,
) -> Result<Vec<f64>> {
    params.validate()?;
    let n = params.size + BURN_IN;
    let mut noise = NormalStream::new(seed);
    let mut y = vec![0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let e = params.noise_sd * noise.next_normal();
            if i == 0 || j == 0 {
                y[i * n + j] = e;
                continue;
            }
            let (mut a, mut b) = (params.phi1, params.phi2);
            if let Some((r, f)) = region {
                if i >= BURN_IN && j >= BURN_IN && r.contains(j - BURN_IN, i - BURN_IN) {
                    a *= f;
                    b *= f;
                }
            }
            y[i * n + j] = a * y[i * n + j - 1] + b * y[(i - 1) * n + j] + e;
        }
    }
    let s = params.size;
    let mut out = Vec::with_capacity(s * s);
    for i in BURN_IN..n {
        out.extend_from_slice(&y[i * n + BURN_IN..(i + 1) * n]);
    }
    Ok(out)
}

fn min_max(field: Vec<f64>) -> Vec<f64> {
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    field
        .into_iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

pub fn generate_nominal(params: &StsParams, seed: u64) -> Result<StsImage> {
    Ok(StsImage {
        pixels: min_max(raw_field(params, seed, None)?),
        defect: Defect::None,
        seed,
        params: *params,
    })
}

/// Both coefficients reduced by 5%.
pub fn generate_global_defect(params: &StsParams, seed: u64) -> Result<StsImage> {
    generate_global_defect_with(params, seed, 1.0 - GLOBAL_DEFECT_FACTOR)
}

/// Global defect with an arbitrary fractional reduction of both
/// coefficients.
pub fn generate_global_defect_with(
    params: &StsParams,
    seed: u64,
    reduction: f64,
) -> Result<StsImage> {
    params.validate()?;
    if !(0.0..=1.0).contains(&reduction) {
        return Err(Error::Param(format!("reduction {reduction} outside [0, 1]")));
    }
    let effective = params.scaled(1.0 - reduction);
    Ok(StsImage {
        pixels: min_max(raw_field(&effective, seed, None)?),
        defect: Defect::Global,
        seed,
        params: *params,
    })
}

/// Default 20x20 region placed uniformly from a stream independent of the
/// field noise.
pub fn default_region(params: &StsParams, seed: u64) -> Region {
    let side = DEFAULT_REGION_SIDE.min(params.size);
    let mut rng = Pcg64::seed_from_u64(splitmix64(seed ^ 0x5245_4749_4F4E));
    let span = params.size - side + 1;
    Region {
        x: rng.gen_range(0..span),
        y: rng.gen_range(0..span),
        width: side,
        height: side,
    }
}

/// Nominal field with both coefficients halved inside `region`.
pub fn generate_local_defect(
    params: &StsParams,
    seed: u64,
    region: Option<Region>,
) -> Result<StsImage> {
    params.validate()?;
    let region = match region {
        Some(r) => {
            if r.width == 0
                || r.height == 0
                || r.x + r.width > params.size
                || r.y + r.height > params.size
            {
                return Err(Error::Region(format!(
                    "{}x{} at ({}, {}) exceeds {}x{} image",
                    r.width, r.height, r.x, r.y, params.size, params.size
                )));
            }
            r
        }
        None => default_region(params, seed),
    };
    Ok(StsImage {
        pixels: min_max(raw_field(
            params,
            seed,
            Some((region, LOCAL_DEFECT_FACTOR)),
        )?),
        defect: Defect::Local(region),
        seed,
        params: *params,
    })
}

/// Number of images per class in a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StsCounts {
    pub nominal: usize,
    pub local: usize,
    pub global: usize,
}

impl StsCounts {
    pub fn total(&self) -> usize {
        self.nominal + self.local + self.global
    }
}

/// One manifest row; enough to regenerate the image exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub class: String,
    pub seed: u64,
    pub phi1: f64,
    pub phi2: f64,
    pub region_x: Option<usize>,
    pub region_y: Option<usize>,
    pub region_w: Option<usize>,
    pub region_h: Option<usize>,
}

impl ManifestRow {
    fn region(&self) -> Option<Region> {
        Some(Region {
            x: self.region_x?,
            y: self.region_y?,
            width: self.region_w?,
            height: self.region_h?,
        })
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";

fn render(row: &ManifestRow, size: usize, noise_sd: f64) -> Result<StsImage> {
    let params = StsParams {
        phi1: row.phi1,
        phi2: row.phi2,
        size,
        noise_sd,
    };
    match row.class.as_str() {
        "nominal" => generate_nominal(&params, row.seed),
        "global" => generate_global_defect(&params, row.seed),
        "local" => generate_local_defect(&params, row.seed, row.region()),
        other => Err(Error::Label(format!("unknown STS class {other:?}"))),
    }
}

fn write_images(rows: &[ManifestRow], size: usize, noise_sd: f64, out_dir: &Path) -> Result<()> {
    rows.par_iter()
        .map(|row| render(row, size, noise_sd)?.save_png(out_dir.join(&row.id)))
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "id", "class", "seed", "phi1", "phi2", "region_x", "region_y", "region_w", "region_h",
    ])?;
    for r in rows {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.id.clone(),
            r.class.clone(),
            r.seed.to_string(),
            r.phi1.to_string(),
            r.phi2.to_string(),
            opt(r.region_x),
            opt(r.region_y),
            opt(r.region_w),
            opt(r.region_h),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Generates `counts` images (nominal, then local, then global) into
/// `out_dir` as 8-bit PNGs plus `manifest.csv`. Image `k` uses seed
/// `splitmix64(master_seed + k)`, so output does not depend on scheduling.
pub fn generate_dataset(
    counts: StsCounts,
    params: &StsParams,
    master_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ManifestRow>> {
    params.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let classes = std::iter::repeat("nominal")
        .take(counts.nominal)
        .chain(std::iter::repeat("local").take(counts.local))
        .chain(std::iter::repeat("global").take(counts.global));
    let rows: Vec<ManifestRow> = classes
        .enumerate()
        .map(|(k, class)| {
            let seed = splitmix64(master_seed.wrapping_add(k as u64));
            let region = (class == "local").then(|| default_region(params, seed));
            ManifestRow {
                id: format!("sts_{k:05}.png"),
                class: class.to_string(),
                seed,
                phi1: params.phi1,
                phi2: params.phi2,
                region_x: region.map(|r| r.x),
                region_y: region.map(|r| r.y),
                region_w: region.map(|r| r.width),
                region_h: region.map(|r| r.height),
            }
        })
        .collect();
    write_images(&rows, params.size, params.noise_sd, out_dir)?;
    write_manifest(&rows, &out_dir.join(MANIFEST_FILE))?;
    Ok(rows)
}

/// Re-renders every image listed in a manifest into `out_dir`.
pub fn regenerate_from_manifest(
    manifest: impl AsRef<Path>,
    size: usize,
    noise_sd: f64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let rows = read_manifest(manifest.as_ref())?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_images(&rows, size, noise_sd, out_dir)?;
    Ok(rows.iter().map(|r| out_dir.join(&r.id)).collect())
}

/// Writes a labels CSV (`id,label,sublabel,caption`) for a manifest so the
/// dataset can be embedded directly.
pub fn write_labels(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "id,label,sublabel,caption").map_err(io)?;
    for r in rows {
        let caption = match r.class.as_str() {
            "nominal" => "A nominal stochastic textured surface.".to_string(),
            "local" => "A textured surface with a local defect.".to_string(),
            _ => "A textured surface with a global defect.".to_string(),
        };
        writeln!(out, "{},{},,{}", r.id, r.class, caption).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Lag-1 horizontal autocorrelation of a square row-major field.
pub fn lag1_horizontal(pixels: &[f64], size: usize) -> f64 {
    let n = pixels.len() as f64;
    let mean = pixels.iter().sum::<f64>() / n;
    let var = pixels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for r in 0..size {
        for c in 0..size - 1 {
            acc += (pixels[r * size + c] - mean) * (pixels[r * size + c + 1] - mean);
        }
    }
    acc / (size * (size - 1)) as f64 / var
}
