//! Small numerical helpers shared across modules.

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};

/// `log Σ exp(x)` with max-subtraction. Returns `-inf` for an empty or all `-inf` row.
pub fn logsumexp(xs: ArrayView1<f64>) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let lse = logsumexp(row.view());
        row.mapv_inplace(|x| (x - lse).exp());
        let total: f64 = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    out
}

/// Sup-norm distance between two equally shaped tables.
pub fn sup_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let mut worst = 0.0f64;
    Zip::from(a).and(b).for_each(|&x, &y| worst = worst.max((x - y).abs()));
    worst
}

/// `x * ln(x / y)` with the `0 * ln 0 = 0` convention.
pub fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// SplitMix64 finalizer; used to derive independent stream seeds from a base seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
