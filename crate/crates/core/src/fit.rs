//! Least-squares power-law fits used by the decay gauges.

/// Ordinary least squares `y = slope * x + intercept`; `None` for fewer than
/// two points or a degenerate abscissa.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of `log|value|` against `log index` over the samples whose value is
/// nonzero; `None` below `min_samples`.
pub fn power_law_exponent(samples: impl IntoIterator<Item = (f64, f64)>, min_samples: usize) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples
        .into_iter()
        .filter(|&(k, v)| k > 0.0 && v != 0.0 && v.is_finite())
        .map(|(k, v)| (k.ln(), v.abs().ln()))
        .unzip();
    if xs.len() < min_samples {
        return None;
    }
    linear_fit(&xs, &ys).map(|(s, _)| s)
}

/// Fit window shared by all decay gauges: indices in `[from, 0.95 * len)`,
/// so the last 5% of a truncation never enters a fit.
pub fn fit_window(from: usize, len: usize) -> std::ops::Range<usize> {
    let end = ((len as f64) * 0.95).floor() as usize;
    from.min(end)..end
}
