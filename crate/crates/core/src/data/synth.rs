use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{extract_features, Distortion, ImageRecord};
use crate::error::{Error, Result};

/// Number of distortion levels per built-in distortion.
pub const LEVELS: u32 = 5;

/// White-noise standard deviations per level (8-bit pixel units).
pub const NOISE_SIGMAS: [f64; 5] = [2.55, 6.38, 15.94, 39.85, 99.62];

/// Gaussian blur sigmas per level (pixels); kernel half-width is `ceil(3 sigma)`.
pub const BLUR_SIGMAS: [f64; 5] = [0.8, 1.6, 3.2, 6.4, 12.8];

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn to_image(side_w: u32, side_h: u32, px: &[f64]) -> GrayImage {
    let data = px.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    GrayImage::from_raw(side_w, side_h, data).expect("buffer matches dimensions")
}

fn render_source(side: u32, rng: &mut ChaCha8Rng) -> GrayImage {
    let n = side as usize;
    let s = side as f64;
    let mut px = vec![0.0; n * n];

    // smooth ramp
    let base: f64 = rng.random_range(70.0..180.0);
    let slope: f64 = rng.random_range(-50.0..50.0);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    for y in 0..n {
        for x in 0..n {
            let t = ((x as f64 - s / 2.0) * ct + (y as f64 - s / 2.0) * st) / s;
            px[y * n + x] = base + slope * t;
        }
    }

    // flat shapes with hard edges
    let shapes = rng.random_range(2..=4);
    for _ in 0..shapes {
        let value: f64 = rng.random_range(20.0..235.0);
        let cx: f64 = rng.random_range(0.0..s);
        let cy: f64 = rng.random_range(0.0..s);
        let r: f64 = rng.random_range(0.1 * s..0.25 * s);
        let disc = rng.random_bool(0.5);
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disc { dx * dx + dy * dy <= r * r } else { dx.abs() <= r && dy.abs() <= r * 0.7 };
                if inside {
                    px[y * n + x] = value;
                }
            }
        }
    }

    // textured patch: two superposed gratings
    let w: f64 = rng.random_range(0.35 * s..0.6 * s);
    let h: f64 = rng.random_range(0.35 * s..0.6 * s);
    let x0: f64 = rng.random_range(0.0..s - w);
    let y0: f64 = rng.random_range(0.0..s - h);
    let gratings: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.3..1.2),
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(15.0..35.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    for y in 0..n {
        for x in 0..n {
            let (xf, yf) = (x as f64, y as f64);
            if xf >= x0 && xf < x0 + w && yf >= y0 && yf < y0 + h {
                let t: f64 = gratings
                    .iter()
                    .map(|&(freq, dir, amp, phase)| {
                        amp * (freq * (xf * dir.cos() + yf * dir.sin()) + phase).sin()
                    })
                    .sum();
                px[y * n + x] += t;
            }
        }
    }

    to_image(side, side, &px)
}

/// Generates `count` square grayscale source images with ramps, flat shapes
/// with hard edges, and a textured patch. Deterministic per `seed`.
pub fn synth_sources(count: usize, side: u32, seed: u64) -> Result<Vec<GrayImage>> {
    if count == 0 {
        return Err(Error::invalid("source count must be at least 1"));
    }
    if side < 16 {
        return Err(Error::invalid(format!("side must be at least 16, got {side}")));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|k| render_source(side, &mut rng_for(seed, k as u64)))
        .collect())
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

fn blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as i64;
    let src: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * src[y * w + clamp(x as i64 + k as i64 - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * tmp[clamp(y as i64 + k as i64 - half, h) * w + x])
                .sum();
        }
    }
    to_image(img.width(), img.height(), &out)
}

/// Applies one level of a built-in distortion. The noise field depends only
/// on `seed`, so levels of one image share it and differ only in scale.
pub fn apply_distortion(image: &GrayImage, distortion: &Distortion, level: u32, seed: u64) -> Result<GrayImage> {
    if !(1..=LEVELS).contains(&level) {
        return Err(Error::invalid(format!("level must be in 1..={LEVELS}, got {level}")));
    }
    let k = (level - 1) as usize;
    match distortion {
        Distortion::WhiteNoise => {
            let sigma = NOISE_SIGMAS[k];
            let mut rng = rng_for(seed, 0);
            let px: Vec<f64> = image
                .as_raw()
                .iter()
                .map(|&v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v as f64 + sigma * z
                })
                .collect();
            Ok(to_image(image.width(), image.height(), &px))
        }
        Distortion::Blur => Ok(blur(image, BLUR_SIGMAS[k])),
        other => Err(Error::invalid(format!("unsupported distortion {other}"))),
    }
}

/// Synthetic sources with all their built-in distortions.
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    /// Indexed by record id.
    pub images: Vec<GrayImage>,
    /// Records with features filled and no oracle scores yet.
    pub records: Vec<ImageRecord>,
}

/// Builds `sources` pristine images and their WN and BLUR versions at every
/// level. Per source the layout is pristine, WN 1..5, BLUR 1..5.
pub fn build_synthetic_dataset(sources: usize, side: u32, seed: u64) -> Result<SyntheticSet> {
    let pristine = synth_sources(sources, side, seed)?;
    let per_source = 1 + 2 * LEVELS as usize;
    let families: Vec<Vec<(Distortion, u32, GrayImage)>> = pristine
        .into_par_iter()
        .enumerate()
        .map(|(s, src)| -> Result<_> {
            let noise_seed = seed ^ (s as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut family = Vec::with_capacity(per_source);
            for level in 1..=LEVELS {
                family.push((Distortion::WhiteNoise, level, apply_distortion(&src, &Distortion::WhiteNoise, level, noise_seed)?));
            }
            for level in 1..=LEVELS {
                family.push((Distortion::Blur, level, apply_distortion(&src, &Distortion::Blur, level, noise_seed)?));
            }
            family.insert(0, (Distortion::Pristine, 0, src));
            Ok(family)
        })
        .collect::<Result<_>>()?;

    let mut images = Vec::with_capacity(sources * per_source);
    let mut records = Vec::with_capacity(sources * per_source);
    for (s, family) in families.into_iter().enumerate() {
        let source_id = s * per_source;
        for (distortion, level, img) in family {
            records.push(ImageRecord {
                id: images.len(),
                source_id,
                distortion,
                level,
                features: Vec::new(),
                oracle_scores: Vec::new(),
                mos: None,
            });
            images.push(img);
        }
    }
    let features: Vec<Vec<f64>> = images.par_iter().map(extract_features).collect();
    for (r, f) in records.iter_mut().zip(features) {
        r.features = f;
    }
    Ok(SyntheticSet { images, records })
}
