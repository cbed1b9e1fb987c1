//! Small numeric helpers shared across the fitters.

/// Median of a slice; copies and sorts. Returns 0.0 for an empty slice.
pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Robust scale via the median absolute deviation, scaled to be consistent
/// with the standard deviation under Gaussian data.
pub(crate) fn mad_scale(values: &[f64]) -> f64 {
    let m = median(values);
    let devs: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    1.4826 * median(&devs)
}

pub(crate) fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}
