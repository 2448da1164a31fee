use super::special::student_t_two_sided;
use super::{MetricsError, StatResult};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation with a two-sided p-value from the t-transform (df = n - 2).
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<StatResult, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::Length(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(MetricsError::TooFew { need: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(StatResult {
        statistic: r,
        p_value,
        n,
    })
}

/// Paired t-test on `a - b` with a two-sided p-value (df = n - 1).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<StatResult, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Length(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricsError::TooFew { need: 2, got: n });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    if diffs.iter().all(|d| *d == 0.0) {
        return Err(MetricsError::DegeneratePairing);
    }
    let m = mean(&diffs);
    let var = diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    let (t, p_value) = if var == 0.0 {
        // constant nonzero difference
        (f64::INFINITY.copysign(m), 0.0)
    } else {
        let t = m / (var / n as f64).sqrt();
        (t, student_t_two_sided(t, df))
    };
    Ok(StatResult {
        statistic: t,
        p_value,
        n,
    })
}
