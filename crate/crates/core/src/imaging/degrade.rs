use super::{DegradationKind, DegradationSpec, ImagingError, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `max(1, floor(dim * factor + 1e-9))`; `100 * 0.57` gives 57, not 56.
pub fn scaled_dim(dim: u32, factor: f64) -> u32 {
    let raw = (dim as f64 * factor + 1e-9).floor();
    (raw as u32).max(1)
}

/// Bilinear downscale with pixel-center alignment and clamped edges.
pub fn scale(img: &RasterImage, factor: f64) -> Result<RasterImage, ImagingError> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(ImagingError::InvalidFactor(factor));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (ow, oh) = (scaled_dim(w, factor), scaled_dim(h, factor));
    let sx = w as f64 / ow as f64;
    let sy = h as f64 / oh as f64;

    let mut out = Vec::with_capacity(ow as usize * oh as usize * ch as usize);
    for oy in 0..oh {
        let (y0, y1, fy) = sample_axis(oy, sy, h);
        for ox in 0..ow {
            let (x0, x1, fx) = sample_axis(ox, sx, w);
            for c in 0..ch {
                let p00 = img.get(x0, y0, c) as f64;
                let p10 = img.get(x1, y0, c) as f64;
                let p01 = img.get(x0, y1, c) as f64;
                let p11 = img.get(x1, y1, c) as f64;
                let top = p00 + (p10 - p00) * fx;
                let bottom = p01 + (p11 - p01) * fx;
                out.push(to_u8(top + (bottom - top) * fy));
            }
        }
    }
    RasterImage::new(ow, oh, ch, out)
}

fn sample_axis(o: u32, step: f64, len: u32) -> (u32, u32, f64) {
    let src = ((o as f64 + 0.5) * step - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = src.floor() as u32;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, src - lo as f64)
}

/// Normalised k x k box filter. The kernel is anchored at `floor(k / 2)` and out of
/// range taps replicate the nearest edge pixel. Sums are exact integers; the mean is
/// rounded half up.
pub fn box_blur(img: &RasterImage, k: u32) -> Result<RasterImage, ImagingError> {
    if k < 1 {
        return Err(ImagingError::InvalidKernel(k as f64));
    }
    if k == 1 {
        return Ok(img.clone());
    }
    let (w, h, ch) = (img.width() as usize, img.height() as usize, img.channels() as usize);
    let k = k as usize;
    let before = (k / 2) as isize;
    let after = (k - 1 - k / 2) as isize;
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let px = img.pixels();

    // Horizontal window sums, then vertical window sums of those: the result
    // equals the direct k*k sum with replicated borders.
    let mut rows = vec![0u64; w * h * ch];
    for y in 0..h {
        for c in 0..ch {
            let at = |x: isize| px[(y * w + clamp(x, w)) * ch + c] as u64;
            let mut sum: u64 = (-before..=after).map(at).sum();
            for x in 0..w {
                rows[(y * w + x) * ch + c] = sum;
                let xi = x as isize;
                sum = sum + at(xi + after + 1) - at(xi - before);
            }
        }
    }

    let area = (k * k) as u64;
    let mut out = vec![0u8; w * h * ch];
    for x in 0..w {
        for c in 0..ch {
            let at = |y: isize| rows[(clamp(y, h) * w + x) * ch + c];
            let mut sum: u64 = (-before..=after).map(at).sum();
            for y in 0..h {
                out[(y * w + x) * ch + c] = ((2 * sum + area) / (2 * area)) as u8;
                let yi = y as isize;
                sum = sum + at(yi + after + 1) - at(yi - before);
            }
        }
    }
    RasterImage::new(w as u32, h as u32, ch as u8, out)
}

/// 256-entry table `round(255 * (i / 255)^gamma)`.
pub fn gamma_lut(gamma: f64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (i, slot) in lut.iter_mut().enumerate() {
        *slot = to_u8(255.0 * (i as f64 / 255.0).powf(gamma));
    }
    lut
}

/// Power-law remap; gamma above one darkens, below one brightens.
pub fn gamma_correct(img: &RasterImage, gamma: f64) -> Result<RasterImage, ImagingError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(ImagingError::InvalidGamma(gamma));
    }
    if gamma == 1.0 {
        return Ok(img.clone());
    }
    let lut = gamma_lut(gamma);
    let pixels = img.pixels().iter().map(|&p| lut[p as usize]).collect();
    RasterImage::new(img.width(), img.height(), img.channels(), pixels)
}

/// Replaces each pixel position, with probability `density`, by pure black or pure
/// white (all channels together, equal odds). Fully determined by `seed`.
pub fn salt_pepper(img: &RasterImage, density: f64, seed: u64) -> Result<RasterImage, ImagingError> {
    if !(0.0..=1.0).contains(&density) {
        return Err(ImagingError::InvalidDensity(density));
    }
    let mut out = img.clone();
    if density == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = img.channels();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if rng.gen::<f64>() < density {
                let value = if rng.gen::<bool>() { 255 } else { 0 };
                for c in 0..ch {
                    out.set(x, y, c, value);
                }
            }
        }
    }
    Ok(out)
}

pub fn apply_spec(img: &RasterImage, spec: &DegradationSpec) -> Result<RasterImage, ImagingError> {
    spec.validate()?;
    match spec.kind {
        DegradationKind::Scale => scale(img, spec.level),
        DegradationKind::Blur => box_blur(img, spec.level as u32),
        DegradationKind::Gamma => gamma_correct(img, spec.level),
        DegradationKind::SaltPepper => salt_pepper(img, spec.level, spec.seed),
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
