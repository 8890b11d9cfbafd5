//! Small least-squares helpers shared by the fitting code.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

/// Ordinary least squares `y = slope * x + intercept`. `None` for fewer than
/// two points or a degenerate abscissa.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<LinearFit> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|&(x, y)| (y - slope * x - intercept).powi(2)).sum();
    Some(LinearFit {
        slope,
        intercept,
        rms: (rss / n).sqrt(),
    })
}
