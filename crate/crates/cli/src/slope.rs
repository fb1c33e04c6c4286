//! Least-squares rate fits on log-log data.

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points_used: usize,
    /// `x` values dropped because their error was not positive.
    pub excluded: Vec<f64>,
}

/// Ordinary least squares of `ln err` on `ln x`. Non-positive errors are
/// dropped and listed in `excluded`; fewer than three remaining points is
/// an error.
pub fn fit_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit, CliError> {
    let mut excluded = Vec::new();
    let mut pts = Vec::new();
    for &(x, e) in pairs {
        if e > 0.0 && e.is_finite() && x > 0.0 {
            pts.push((x.ln(), e.ln()));
        } else {
            excluded.push(x);
        }
    }
    if pts.len() < 3 {
        return Err(CliError::Failure(format!(
            "slope fit needs at least 3 positive points, have {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(CliError::Failure("slope fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, stderr, intercept, points_used: pts.len(), excluded })
}
