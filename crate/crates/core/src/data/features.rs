use image::GrayImage;

/// Length of the vector returned by [`extract_features`].
pub const FEATURE_DIM: usize = 16;

const BLOCK: usize = 8;

fn gaussian_window(radius: usize, sigma: f64) -> Vec<f64> {
    let r = radius as i64;
    let mut w: Vec<f64> = (-r..=r).map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable filter with clamp-to-edge borders.
fn smooth(px: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as i64;
    let at = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel.iter().enumerate().map(|(k, c)| c * px[y * w + at(x as i64 + k as i64 - half, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel.iter().enumerate().map(|(k, c)| c * tmp[at(y as i64 + k as i64 - half, h) * w + x]).sum();
        }
    }
    out
}

/// Squared forward differences; the last row and column use zero.
fn gradient_energy(px: &[f64], w: usize, h: usize) -> Vec<f64> {
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let dx = if x + 1 < w { px[y * w + x + 1] - px[y * w + x] } else { 0.0 };
            let dy = if y + 1 < h { px[(y + 1) * w + x] - px[y * w + x] } else { 0.0 };
            dx * dx + dy * dy
        })
        .collect()
}

/// Mean-subtracted contrast-normalized coefficients.
fn mscn(px: &[f64], w: usize, h: usize) -> Vec<f64> {
    let kernel = gaussian_window(3, 7.0 / 6.0);
    let mu = smooth(px, w, h, &kernel);
    let sq: Vec<f64> = px.iter().map(|v| v * v).collect();
    let mu_sq = smooth(&sq, w, h, &kernel);
    px.iter()
        .zip(&mu)
        .zip(&mu_sq)
        .map(|((&v, &m), &m2)| {
            let sigma = (m2 - m * m).max(0.0).sqrt();
            (v - m) / (sigma + 1.0)
        })
        .collect()
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn kurtosis(values: &[f64]) -> f64 {
    let (mean, m2) = moments(values);
    if m2 <= 1e-12 {
        return 0.0;
    }
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / values.len() as f64;
    m4 / (m2 * m2)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    sorted[(p * (sorted.len() - 1) as f64).round() as usize]
}

fn pool(values: &mut [f64]) -> [f64; 4] {
    let (mean, var) = moments(values);
    values.sort_by(f64::total_cmp);
    [mean, var.sqrt(), percentile(values, 0.1), percentile(values, 0.9)]
}

/// Block statistics of an image pooled into a [`FEATURE_DIM`]-vector.
///
/// Each 8x8 block contributes the log gradient energy lost to a further blur,
/// its log variance, log gradient energy, and log kurtosis of its normalized
/// coefficients. Each statistic is
/// pooled over blocks as mean, standard deviation, 10th and 90th percentile.
/// Images smaller than one block are treated as a single block.
pub fn extract_features(image: &GrayImage) -> Vec<f64> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    assert!(w > 0 && h > 0, "image must be nonempty");
    let px: Vec<f64> = image.as_raw().iter().map(|&v| v as f64).collect();
    let coeffs = mscn(&px, w, h);
    let grad = gradient_energy(&px, w, h);
    let reblurred = gradient_energy(&smooth(&px, w, h, &gaussian_window(3, 1.0)), w, h);

    let (bw, bh) = (BLOCK.min(w), BLOCK.min(h));
    let mut stats: [Vec<f64>; 4] = Default::default();
    let mut block = Vec::with_capacity(bw * bh);
    let gather = |buf: &mut Vec<f64>, src: &[f64], bx: usize, by: usize| {
        buf.clear();
        for y in by..by + bh {
            buf.extend_from_slice(&src[y * w + bx..y * w + bx + bw]);
        }
    };
    for by in (0..=h - bh).step_by(bh) {
        for bx in (0..=w - bw).step_by(bw) {
            gather(&mut block, &px, bx, by);
            let (_, var) = moments(&block);
            gather(&mut block, &grad, bx, by);
            let energy = block.iter().sum::<f64>() / block.len() as f64;
            gather(&mut block, &reblurred, bx, by);
            let soft = block.iter().sum::<f64>() / block.len() as f64;
            gather(&mut block, &coeffs, bx, by);
            let kurt = kurtosis(&block);
            stats[0].push(energy.ln_1p() - soft.ln_1p());
            stats[1].push(var.ln_1p());
            stats[2].push(energy.ln_1p());
            stats[3].push(kurt.ln_1p());
        }
    }
    stats.iter_mut().flat_map(|s| pool(s)).collect()
}
