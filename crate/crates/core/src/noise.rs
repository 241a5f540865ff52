//! Brownian increments from a counter-based generator.
//!
//! Increment `(i, ρ)` of path `p` is a pure function of `(seed, p, i·k + ρ)`:
//! the ChaCha stream is selected by the path id and every normal consumes
//! exactly two 64-bit words, so any increment can be regenerated on its own
//! and no result depends on which worker produced a path.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Brownian increments on a uniform grid, row-major `steps × k`.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerGrid {
    pub dt: f64,
    pub steps: usize,
    pub k: usize,
    pub seed: u64,
    pub path_id: u64,
    increments: Vec<f64>,
}

fn stream(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Standard normal from two uniform words (Box–Muller, cosine branch only).
#[inline]
fn normal_from(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard normal number `index` of the stream for `(seed, path_id)`.
pub fn standard_normal_at(seed: u64, path_id: u64, index: u64) -> f64 {
    let mut rng = stream(seed, path_id);
    rng.set_word_pos(4 * index as u128);
    let a = rng.next_u64();
    let b = rng.next_u64();
    normal_from(a, b)
}

/// Fresh increments with variance `dt`, keyed by `(seed, path_id, step, component)`.
pub fn generate_path(seed: u64, path_id: u64, steps: usize, k: usize, dt: f64) -> WienerGrid {
    assert!(((steps as u128) * (k as u128)) < (1u128 << 40), "grid too large for the counter space");
    let mut rng = stream(seed, path_id);
    let sd = dt.sqrt();
    let increments = (0..steps * k)
        .map(|_| {
            let a = rng.next_u64();
            let b = rng.next_u64();
            sd * normal_from(a, b)
        })
        .collect();
    WienerGrid { dt, steps, k, seed, path_id, increments }
}

/// Block sums of `factor` consecutive increments.
///
/// The sum is formed stage by stage over the prime factors of `factor` in
/// ascending order, so coarsening by `a` and then by `b` gives bitwise the
/// same grid as coarsening by `a·b` whenever the prime stages line up (in
/// particular for powers of a single prime, such as the mass family
/// `m₀·2^{−j}`).
pub fn coarsen(path: &WienerGrid, factor: usize) -> Result<WienerGrid> {
    if factor == 0 || path.steps % factor != 0 {
        return Err(Error::GridMismatch(format!("coarsening factor {factor} does not divide {} steps", path.steps)));
    }
    let mut out = path.clone();
    for p in prime_factors(factor) {
        out = block_sum(&out, p);
    }
    Ok(out)
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

fn block_sum(path: &WienerGrid, factor: usize) -> WienerGrid {
    let k = path.k;
    let steps = path.steps / factor;
    let mut increments = vec![0.0; steps * k];
    for (j, block) in path.increments.chunks(factor * k).enumerate() {
        for row in block.chunks(k) {
            for (acc, v) in increments[j * k..(j + 1) * k].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    WienerGrid { dt: path.dt * factor as f64, steps, k, seed: path.seed, path_id: path.path_id, increments }
}

impl WienerGrid {
    /// Increment vector of step `i`.
    #[inline]
    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.k..(i + 1) * self.k]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// `W` at grid point `i` (so `partial_sum(0)` is zero).
    pub fn partial_sum(&self, i: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.k];
        for row in self.increments[..i * self.k].chunks(self.k) {
            for (a, b) in w.iter_mut().zip(row) {
                *a += b;
            }
        }
        w
    }

    pub fn endpoint(&self) -> Vec<f64> {
        self.partial_sum(self.steps)
    }

    /// Zero-noise grid, for deterministic runs.
    pub fn silent(steps: usize, k: usize, dt: f64) -> Self {
        WienerGrid { dt, steps, k, seed: 0, path_id: 0, increments: vec![0.0; steps * k] }
    }

    /// Grid built from explicit increments.
    pub fn from_increments(dt: f64, k: usize, increments: Vec<f64>) -> Result<Self> {
        if k == 0 || increments.len() % k != 0 {
            return Err(Error::GridMismatch(format!("{} increments do not split into rows of {k}", increments.len())));
        }
        Ok(WienerGrid { dt, steps: increments.len() / k, k, seed: 0, path_id: 0, increments })
    }
}

/// Number of steps of size `dt` in `[0, horizon]`, insisting it is an integer.
pub fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    let x = horizon / dt;
    let n = x.round();
    if !(n >= 0.0) || (x - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::GridMismatch(format!("horizon {horizon} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_exact() {
        let a = generate_path(7, 3, 100, 2, 0.01);
        let b = generate_path(7, 3, 100, 2, 0.01);
        assert_eq!(a, b);
        let c = generate_path(7, 4, 100, 2, 0.01);
        assert_ne!(a.increments, c.increments);
        for idx in [0usize, 1, 17, 199] {
            let z = standard_normal_at(7, 3, idx as u64);
            assert_eq!((z * 0.1).to_bits(), a.increments[idx].to_bits());
        }
    }

    #[test]
    fn endpoint_and_coarsening() {
        let p = generate_path(1, 0, 64, 3, 0.5);
        let sum: f64 = (0..64).map(|i| p.increment(i)[1]).sum();
        assert_eq!(p.endpoint()[1], sum);
        assert_eq!(coarsen(&p, 1).unwrap(), p);
        let all = coarsen(&p, 64).unwrap();
        assert_eq!(all.steps, 1);
        for r in 0..3 {
            assert!((all.increment(0)[r] - p.endpoint()[r]).abs() < 1e-12);
        }
        assert_eq!(coarsen(&coarsen(&p, 2).unwrap(), 2).unwrap().increments, coarsen(&p, 4).unwrap().increments);
        assert_eq!(coarsen(&coarsen(&p, 4).unwrap(), 8).unwrap().increments, coarsen(&p, 32).unwrap().increments);
        assert!(matches!(coarsen(&p, 3), Err(Error::GridMismatch(_))));
        assert_eq!(coarsen(&p, 4).unwrap().dt, 2.0);
    }

    #[test]
    fn zero_length_grid() {
        let p = generate_path(1, 0, 0, 1, 0.1);
        assert_eq!(p.endpoint(), vec![0.0]);
    }

    #[test]
    fn step_count_must_be_integral() {
        assert_eq!(steps_for(1.0, 0.01 / 8.0).unwrap(), 800);
        assert!(steps_for(1.0, 0.3).is_err());
    }
}
