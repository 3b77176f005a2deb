use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_pair<T: Scalar>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::invalid("correlation needs at least two points"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in correlation input"));
    }
    for (name, v) in [("first", a), ("second", b)] {
        if v.iter().all(|&x| x == v[0]) {
            return Err(Error::Degenerate(format!("{name} vector is constant")));
        }
    }
    Ok(())
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn fractional_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&x, &y| values[x].partial_cmp(&values[y]).expect("finite values"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let r = T::of((start + 1 + end) as f64 / 2.0);
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

fn has_ties<T: Scalar>(values: &[T]) -> bool {
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    v.windows(2).any(|w| w[0] == w[1])
}

fn pearson_unchecked<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = T::of(a.len() as f64);
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    (sab / (saa * sbb).sqrt()).max(-T::one()).min(T::one())
}

/// Pearson linear correlation.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_pair(a, b)?;
    Ok(pearson_unchecked(a, b))
}

/// Spearman rank correlation. Tie-free inputs use `1 - 6 sum d^2 / (N (N^2 - 1))`;
/// with ties it is the Pearson correlation of fractional ranks.
pub fn srcc<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_pair(a, b)?;
    let (ra, rb) = (fractional_ranks(a), fractional_ranks(b));
    if has_ties(a) || has_ties(b) {
        return Ok(pearson_unchecked(&ra, &rb));
    }
    let n = T::of(a.len() as f64);
    let d2: T = ra.iter().zip(&rb).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(T::one() - T::of(6.0) * d2 / (n * (n * n - T::one())))
}
