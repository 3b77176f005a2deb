//! Full-reference quality oracles and logistic calibration of their scores.

mod logistic;
mod simplex;

use image::GrayImage;
use rayon::prelude::*;

use crate::data::{Dataset, ImageRecord};
use crate::error::{Error, Result};

pub use logistic::{fit_logistic, LogisticParams};
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};

/// Upper clip for PSNR, in dB.
pub const PSNR_CAP: f64 = 60.0;

const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::invalid(format!(
            "image dimensions differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB, clipped at [`PSNR_CAP`].
pub fn psnr(reference: &GrayImage, test: &GrayImage) -> Result<f64> {
    same_dims(reference, test)?;
    let n = reference.as_raw().len() as f64;
    let sse: f64 = reference
        .as_raw()
        .iter()
        .zip(test.as_raw())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0f64 * 255.0 / (sse / n)).log10()).min(PSNR_CAP))
}

struct Plane {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

/// Box average over `f x f` followed by keeping every `f`-th sample, with
/// symmetric borders.
fn downsample(img: &GrayImage, f: usize) -> Plane {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    if f == 1 {
        return Plane { w, h, px: src };
    }
    let mirror = |v: usize, n: usize| if v < n { v } else { 2 * n - 1 - v };
    let (ow, oh) = (w.div_ceil(f), h.div_ceil(f));
    let mut px = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    acc += src[mirror(oy * f + dy, h) * w + mirror(ox * f + dx, w)];
                }
            }
            px.push(acc / (f * f) as f64);
        }
    }
    Plane { w: ow, h: oh, px }
}

fn ssim_window() -> Vec<f64> {
    let mut k: Vec<f64> = (-5i32..=5).map(|t| (-(t * t) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" correlation with the 11-tap window.
fn filter_valid(p: &Plane, k: &[f64]) -> Plane {
    let n = k.len();
    let (ow, oh) = (p.w + 1 - n, p.h + 1 - n);
    let mut tmp = vec![0.0; ow * p.h];
    for y in 0..p.h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|t| k[t] * p.px[y * p.w + x + t]).sum();
        }
    }
    let mut px = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            px[y * ow + x] = (0..n).map(|t| k[t] * tmp[(y + t) * ow + x]).sum();
        }
    }
    Plane { w: ow, h: oh, px }
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// computed after downsampling by `max(1, round(min(H, W) / 256))`.
pub fn ssim(reference: &GrayImage, test: &GrayImage) -> Result<f64> {
    same_dims(reference, test)?;
    let min_side = reference.width().min(reference.height()) as f64;
    let f = ((min_side / 256.0).round() as usize).max(1);
    let a = downsample(reference, f);
    let b = downsample(test, f);
    if a.w.min(a.h) < 16 {
        return Err(Error::invalid(format!(
            "image too small for SSIM: {}x{} after downsampling",
            a.w, a.h
        )));
    }
    let k = ssim_window();
    let mul = |x: &Plane, y: &Plane| Plane { w: x.w, h: x.h, px: x.px.iter().zip(&y.px).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&a, &k);
    let mu_b = filter_valid(&b, &k);
    let aa = filter_valid(&mul(&a, &a), &k);
    let bb = filter_valid(&mul(&b, &b), &k);
    let ab = filter_valid(&mul(&a, &b), &k);
    let n = mu_a.px.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a.px[i], mu_b.px[i]);
            let va = aa.px[i] - ma * ma;
            let vb = bb.px[i] - mb * mb;
            let cov = ab.px[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Built-in full-reference oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Oracle {
    Psnr,
    Ssim,
}

impl Oracle {
    pub fn name(self) -> &'static str {
        match self {
            Oracle::Psnr => "psnr",
            Oracle::Ssim => "ssim",
        }
    }

    /// Case-insensitive.
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "psnr" => Ok(Oracle::Psnr),
            "ssim" => Ok(Oracle::Ssim),
            other => Err(Error::invalid(format!("unknown oracle {other}"))),
        }
    }

    pub fn score(self, reference: &GrayImage, test: &GrayImage) -> Result<f64> {
        match self {
            Oracle::Psnr => psnr(reference, test),
            Oracle::Ssim => ssim(reference, test),
        }
    }
}

/// Scores every image against its pristine source with each oracle and
/// returns a dataset whose oracle columns are the raw scores.
pub fn score_images(images: &[GrayImage], records: Vec<ImageRecord>, oracles: &[Oracle]) -> Result<Dataset> {
    if images.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), found: images.len() });
    }
    let scores: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| {
            let reference = images.get(r.source_id).ok_or(Error::UnknownId(r.source_id))?;
            let test = &images[r.id];
            oracles.iter().map(|o| o.score(reference, test)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let records = records
        .into_iter()
        .zip(scores)
        .map(|(mut r, s)| {
            r.oracle_scores = s;
            r
        })
        .collect();
    Dataset::new(records, oracles.iter().map(|o| o.name().to_string()).collect())
}

/// Maps one oracle's column through a logistic fitted on `(raw, mos)` anchors.
pub fn calibrate(dataset: &Dataset, oracle_name: &str, anchors: &[(f64, f64)]) -> Result<Dataset> {
    let k = dataset.oracle_index(oracle_name)?;
    let (raw, mos): (Vec<f64>, Vec<f64>) = anchors.iter().copied().unzip();
    let params = fit_logistic(&raw, &mos)?;
    let mapped: Vec<f64> = dataset.records().iter().map(|r| params.eval(r.oracle_scores[k])).collect();
    dataset.with_oracle_column(oracle_name, &mapped)
}

/// Anchors pairing each record's raw score with a nominal quality that falls
/// linearly from 100 (pristine) to 0 (highest level).
pub fn level_anchors(dataset: &Dataset, oracle_name: &str) -> Result<Vec<(f64, f64)>> {
    let k = dataset.oracle_index(oracle_name)?;
    let q = dataset.level_count().max(1) as f64;
    Ok(dataset
        .records()
        .iter()
        .map(|r| (r.oracle_scores[k], 100.0 * (q - r.level as f64) / q))
        .collect())
}

#[cfg(test)]
mod tests {
    use image::Luma;

    use super::*;

    fn img(w: u32, h: u32, f: impl Fn(u32, u32) -> u8) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| Luma([f(x, y)]))
    }

    fn textured() -> GrayImage {
        img(48, 40, |x, y| ((x * 37 + y * 91 + (x * y) % 17) % 256) as u8)
    }

    #[test]
    fn psnr_closed_forms() {
        let a = textured();
        assert_eq!(psnr(&a, &a).unwrap(), 60.0);
        let black = img(8, 8, |_, _| 0);
        let white = img(8, 8, |_, _| 255);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        let lo = img(8, 8, |_, _| 100);
        let hi = img(8, 8, |_, _| 116);
        let expected = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&lo, &hi).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 24.0484).abs() < 1e-4);
    }

    #[test]
    fn psnr_is_symmetric_and_checks_dims() {
        let a = textured();
        let b = img(48, 40, |x, y| ((x + y) % 256) as u8);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &img(40, 48, |_, _| 0)).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = textured();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_pair_closed_form() {
        let (va, vb) = (90.0, 140.0);
        let a = img(32, 32, |_, _| va as u8);
        let b = img(32, 32, |_, _| vb as u8);
        let expected = ((2.0 * va * vb + C1) * C2) / ((va * va + vb * vb + C1) * C2);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_and_mismatched() {
        let small = img(15, 40, |_, _| 3);
        assert!(ssim(&small, &small).is_err());
        assert!(ssim(&textured(), &img(40, 48, |_, _| 0)).is_err());
    }

    #[test]
    fn ssim_downsamples_large_images() {
        // 600 / 256 rounds to 2, so a 600x600 image is compared at 300x300
        let a = img(600, 600, |x, y| ((x / 3 + y / 5) % 256) as u8);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_drops_with_noise_strength() {
        let src = crate::data::synth_sources(1, 64, 9).unwrap().remove(0);
        let small = crate::data::apply_distortion(&src, &crate::data::Distortion::WhiteNoise, 1, 4).unwrap();
        let large = crate::data::apply_distortion(&src, &crate::data::Distortion::WhiteNoise, 5, 4).unwrap();
        assert!(ssim(&src, &large).unwrap() < ssim(&src, &small).unwrap());
    }
}
