//! Wilson score interval for a binomial proportion.

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilsonInterval {
    pub lower: f64,
    pub upper: f64,
}

impl WilsonInterval {
    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

/// Wilson interval around an observed proportion `p_hat` over `n` trials.
/// `None` for `n == 0`.
pub fn wilson_interval(p_hat: f64, n: u64, z: f64) -> Option<WilsonInterval> {
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p_hat + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt();
    Some(WilsonInterval {
        lower: (center - half).max(0.0),
        upper: (center + half).min(1.0),
    })
}

pub fn wilson_counts(successes: u64, n: u64, z: f64) -> Option<WilsonInterval> {
    if n == 0 {
        return None;
    }
    wilson_interval(successes as f64 / n as f64, n, z)
}

/// Half-width of the unclipped Wilson interval at proportion `p`.
pub fn wilson_half_width(p: f64, n: u64, z: f64) -> Option<f64> {
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let z2 = z * z;
    Some(z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt())
}
