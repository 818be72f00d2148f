//! Composite trapezoid quadrature with one-sided splits.
//!
//! Kernel components may jump across recorded ordinates (images of the
//! characteristic discontinuity lines). Every integral whose path crosses
//! such an ordinate is split there, with one-sided constant values on each
//! side of the crossing; cells without a crossing use the plain trapezoid
//! rule.

/// Plain composite trapezoid of nodal `values` with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * values[0] + inner + 0.5 * values[values.len() - 1])
}

/// Contribution of one cell [x0, x1] with endpoint values v0, v1 and the
/// split ordinates that fall strictly inside the cell (sorted ascending).
pub fn cell_increment(v0: f64, v1: f64, x0: f64, x1: f64, splits_in_cell: &[f64]) -> f64 {
    match splits_in_cell {
        [] => 0.5 * (x1 - x0) * (v0 + v1),
        [s] => (s - x0) * v0 + (x1 - s) * v1,
        splits => {
            let first = splits[0];
            let last = splits[splits.len() - 1];
            (first - x0) * v0 + (x1 - last) * v1 + 0.5 * (last - first) * (v0 + v1)
        }
    }
}

/// Integral over [0, (len-1)·h] with the split rule applied at each ordinate
/// of `splits` (sorted ascending, not necessarily inside the range).
pub fn integral_with_splits(values: &[f64], h: f64, splits: &[f64]) -> f64 {
    prefix_sum_last(values, h, splits)
}

/// Prefix integrals: `out[b]` is the integral over [0, b·h].
pub fn prefix_integrals(values: &[f64], h: f64, splits: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..values.len().saturating_sub(1) {
        let x0 = k as f64 * h;
        let x1 = x0 + h;
        acc += cell_increment(values[k], values[k + 1], x0, x1, in_cell(splits, x0, x1));
        out.push(acc);
    }
    out
}

fn prefix_sum_last(values: &[f64], h: f64, splits: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..values.len().saturating_sub(1) {
        let x0 = k as f64 * h;
        let x1 = x0 + h;
        acc += cell_increment(values[k], values[k + 1], x0, x1, in_cell(splits, x0, x1));
    }
    acc
}

/// Nodal weights w such that `dot(w, values)` equals the split-aware trapezoid
/// integral over [0, cells·h]. The weights of a split-free grid sum to the
/// interval length.
pub fn split_weights(cells: usize, h: f64, splits: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; cells + 1];
    for k in 0..cells {
        let x0 = k as f64 * h;
        let x1 = x0 + h;
        let s = in_cell(splits, x0, x1);
        match s {
            [] => {
                w[k] += 0.5 * h;
                w[k + 1] += 0.5 * h;
            }
            [s0] => {
                w[k] += s0 - x0;
                w[k + 1] += x1 - s0;
            }
            many => {
                let first = many[0];
                let last = many[many.len() - 1];
                w[k] += (first - x0) + 0.5 * (last - first);
                w[k + 1] += (x1 - last) + 0.5 * (last - first);
            }
        }
    }
    w
}

/// Slice of the ordinates of `splits` lying strictly inside (x0, x1).
fn in_cell(splits: &[f64], x0: f64, x1: f64) -> &[f64] {
    let lo = splits.partition_point(|&s| s <= x0);
    let hi = splits.partition_point(|&s| s < x1);
    &splits[lo..hi]
}
