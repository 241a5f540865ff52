//! Order-fixed accumulation, strong-error estimators and log-log fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Neumaier-compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean of `x^{1/p}` style estimate with its delta-method standard error.
/// Sums are taken about the first sample so the variance does not cancel.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    shift: Option<f64>,
    s1: Compensated,
    s2: Compensated,
}

impl Moments {
    fn add(&mut self, x: f64) {
        let d = x - *self.shift.get_or_insert(x);
        self.s1.add(d);
        self.s2.add(d * d);
    }

    /// `(mean^{1/p}, stderr)` where `mean` is the sample mean of `x ≥ 0`.
    fn root(&self, n: usize, p: f64) -> (f64, f64) {
        if n == 0 {
            return (f64::NAN, f64::NAN);
        }
        let nf = n as f64;
        let d1 = self.s1.value();
        let mean = self.shift.unwrap_or(0.0) + d1 / nf;
        let var = if n > 1 { ((self.s2.value() - d1 * d1 / nf) / (nf - 1.0)).max(0.0) } else { 0.0 };
        let est = mean.powf(1.0 / p);
        let se_mean = (var / nf).sqrt();
        let se = if mean > 0.0 { est / (p * mean) * se_mean } else { 0.0 };
        (est, se)
    }
}

/// Strong-error estimate in both norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ErrorEstimate {
    /// `sup_t E[‖Δ‖^p]^{1/p}`
    pub err_supE: f64,
    pub stderr_supE: f64,
    /// `E[sup_t ‖Δ‖^p]^{1/p}`
    pub err_Esup: f64,
    pub stderr_Esup: f64,
    /// Grid index where the `sup_t E` maximum is attained.
    pub argmax: usize,
    pub paths: usize,
}

/// Streams `‖Δq_t‖^p` paths in a fixed order and yields [`ErrorEstimate`].
#[derive(Clone, Debug)]
pub struct ErrorAccumulator {
    p: f64,
    per_time: Vec<Moments>,
    sup: Moments,
    n: usize,
}

impl ErrorAccumulator {
    pub fn new(times: usize, p: f64) -> Self {
        ErrorAccumulator { p, per_time: vec![Moments::default(); times], sup: Moments::default(), n: 0 }
    }

    /// Adds one path given as `‖Δq_t‖^p` at every grid time.
    pub fn add_powers(&mut self, powers: &[f64]) -> Result<()> {
        if powers.len() != self.per_time.len() {
            return Err(Error::GridMismatch(format!(
                "path has {} grid points, expected {}",
                powers.len(),
                self.per_time.len()
            )));
        }
        let mut mx = 0.0f64;
        for (acc, &x) in self.per_time.iter_mut().zip(powers) {
            acc.add(x);
            mx = mx.max(x);
        }
        self.sup.add(mx);
        self.n += 1;
        Ok(())
    }

    pub fn paths(&self) -> usize {
        self.n
    }

    pub fn finish(&self) -> ErrorEstimate {
        let mut best = (0usize, f64::NEG_INFINITY, 0.0);
        for (i, acc) in self.per_time.iter().enumerate() {
            let (e, se) = acc.root(self.n, self.p);
            if e > best.1 {
                best = (i, e, se);
            }
        }
        let (esup, se_sup) = self.sup.root(self.n, self.p);
        ErrorEstimate {
            err_supE: best.1,
            stderr_supE: best.2,
            err_Esup: esup,
            stderr_Esup: se_sup,
            argmax: best.0,
            paths: self.n,
        }
    }
}

/// Least-squares fit of `log err = slope·log m + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub ci95: f64,
    pub points: usize,
}

pub fn fit_slope(masses: &[f64], errors: &[f64]) -> Result<SlopeFit> {
    if masses.len() != errors.len() {
        return Err(Error::InsufficientData(format!("{} masses but {} errors", masses.len(), errors.len())));
    }
    let mut xs = Vec::with_capacity(masses.len());
    let mut ys = Vec::with_capacity(masses.len());
    for (&m, &e) in masses.iter().zip(errors) {
        if m > 0.0 && e > 0.0 && e.is_finite() {
            xs.push(m.ln());
            ys.push(e.ln());
        } else {
            log::warn!("dropping point (m = {m}, err = {e}) from the slope fit");
        }
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("slope fit needs 3 positive points, have {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all masses coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = (rss / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).expect("positive degrees of freedom").inverse_cdf(0.975);
    Ok(SlopeFit { slope, intercept, ci95: t * se, points: n })
}

/// Wilson score interval for `k` successes in `n` trials at 95%.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959_963_984_540_054;
    let nf = n as f64;
    let phat = k as f64 / nf;
    let denom = 1.0 + Z * Z / nf;
    let centre = (phat + Z * Z / (2.0 * nf)) / denom;
    let half = Z * (phat * (1.0 - phat) / nf + Z * Z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensation_recovers_small_terms() {
        let mut c = Compensated::default();
        c.add(1e16);
        for _ in 0..1000 {
            c.add(1.0);
        }
        c.add(-1e16);
        assert_eq!(c.value(), 1000.0);
    }

    #[test]
    fn exact_power_law() {
        let m: Vec<f64> = (3..9).map(|j| 2f64.powi(-j)).collect();
        let e: Vec<f64> = m.iter().map(|m| 2.0 * m.sqrt()).collect();
        let fit = fit_slope(&m, &e).unwrap();
        assert_relative_eq!(fit.slope, 0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 2f64.ln(), epsilon = 1e-12);
        assert!(fit.ci95 < 1e-10);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(fit_slope(&[0.1, 0.2], &[1.0, 2.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_slope(&[0.1, 0.2, 0.4], &[1.0, 0.0, 2.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn constant_offset() {
        let mut acc = ErrorAccumulator::new(3, 2.0);
        for _ in 0..10 {
            acc.add_powers(&[0.0, 0.25, 0.25]).unwrap();
        }
        let e = acc.finish();
        assert_relative_eq!(e.err_supE, 0.5);
        assert_relative_eq!(e.err_Esup, 0.5);
        assert_eq!(e.stderr_supE, 0.0);
        assert!(acc.add_powers(&[0.0]).is_err());
    }

    #[test]
    fn wilson_brackets_the_estimate() {
        let (lo, hi) = wilson_interval(0, 5000);
        assert_eq!(lo, 0.0);
        assert!(hi < 1e-3);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
    }
}
