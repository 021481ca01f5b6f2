//! Pólya-Gamma PG(b, z) draws.
//!
//! PG(1, z) uses Devroye's alternating-series sampler (Polson, Scott and
//! Windle, 2013). Integer b ≤ 170 is a sum of b unit draws; larger b falls
//! back to a moment-matched normal truncated at zero.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf;

use crate::error::{Error, Result};

const TRUNC: f64 = 0.64;
const EXACT_LIMIT: u32 = 170;

/// Mean of PG(b, z).
pub fn pg_mean(b: f64, z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-6 {
        return b / 4.0 * (1.0 - z * z / 12.0);
    }
    b / (2.0 * z) * (z / 2.0).tanh()
}

/// Variance of PG(b, z).
pub fn pg_variance(b: f64, z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-3 {
        // series: b (1/24 − z²/60 + …)
        return b * (1.0 / 24.0 - z * z / 60.0);
    }
    let c = (z / 2.0).cosh();
    b * (z.sinh() - z) / (4.0 * z.powi(3) * c * c)
}

/// Draws ω ~ PG(b, z).
pub fn sample_polya_gamma<R: Rng + ?Sized>(b: u32, z: f64, rng: &mut R) -> Result<f64> {
    if b == 0 {
        return Err(Error::Domain("Polya-Gamma shape b must be >= 1".into()));
    }
    if !z.is_finite() {
        return Err(Error::Domain(format!("Polya-Gamma tilt must be finite, got {z}")));
    }
    if b <= EXACT_LIMIT {
        let mut s = 0.0;
        for _ in 0..b {
            s += draw_unit(z, rng);
        }
        return Ok(s);
    }
    let m = pg_mean(b as f64, z);
    let sd = pg_variance(b as f64, z).sqrt();
    loop {
        let n: f64 = StandardNormal.sample(rng);
        let w = m + sd * n;
        if w > 0.0 {
            return Ok(w);
        }
    }
}

fn log_pnorm(x: f64) -> f64 {
    (0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)).ln()
}

fn mass_texpon(z: f64) -> f64 {
    let t = TRUNC;
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_pnorm(b);
    let xa = x0 + z + log_pnorm(a);
    let qdivp = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + qdivp)
}

fn rtigauss<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    let mut x = t + 1.0;
    if 1.0 / t > z {
        let mut alpha = 0.0;
        while rng.random::<f64>() > alpha {
            let mut e1: f64 = Exp1.sample(rng);
            let mut e2: f64 = Exp1.sample(rng);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            x = 1.0 + e1 * t;
            x = t / (x * x);
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        let mu = 1.0 / z;
        while x > t {
            let y: f64 = StandardNormal.sample(rng);
            let mu_y = mu * y * y;
            let half_mu = 0.5 * mu;
            x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}

fn series_coef(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

fn draw_unit<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let z = z.abs() * 0.5;
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = mass_texpon(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / fz
        } else {
            rtigauss(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        (m, v, m4)
    }

    #[test]
    fn analytic_means() {
        assert!((pg_mean(1.0, 0.0) - 0.25).abs() < 1e-15);
        assert!((pg_mean(2.0, 1.0) - 0.462_117_2).abs() < 1e-7);
        assert!((pg_variance(1.0, 1e-4) - pg_variance(1.0, 2e-3)).abs() < 1e-6);
    }

    #[test]
    fn sample_means_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &(b, z, target) in &[(1u32, 0.0, 0.25), (2, 1.0, 0.462_117_2)] {
            let xs: Vec<f64> = (0..100_000).map(|_| sample_polya_gamma(b, z, &mut rng).unwrap()).collect();
            let (m, v, _) = moments(&xs);
            let se = (v / xs.len() as f64).sqrt();
            assert!((m - target).abs() < 3.0 * se, "b={b} z={z} m={m} target={target} se={se}");
        }
    }

    #[test]
    fn sample_variances_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &b in &[1u32, 2, 10] {
            for &z in &[0.1, 1.0, 3.0] {
                let n = 40_000;
                let xs: Vec<f64> = (0..n).map(|_| sample_polya_gamma(b, z, &mut rng).unwrap()).collect();
                let (_, v, m4) = moments(&xs);
                let se = ((m4 - v * v) / n as f64).sqrt();
                let target = pg_variance(b as f64, z);
                assert!((v - target).abs() < 5.0 * se, "b={b} z={z} v={v} target={target}");
            }
        }
    }

    #[test]
    fn additivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..10_000).map(|_| sample_polya_gamma(3, 0.7, &mut rng).unwrap()).collect();
        let b: Vec<f64> = (0..10_000)
            .map(|_| (0..3).map(|_| sample_polya_gamma(1, 0.7, &mut rng).unwrap()).sum())
            .collect();
        let (_, p) = crate::special::ks::ks_two_sample(&a, &b);
        assert!(p > 0.01, "p={p}");
    }

    #[test]
    fn large_shape_uses_normal_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..5_000).map(|_| sample_polya_gamma(400, 1.5, &mut rng).unwrap()).collect();
        let (m, v, _) = moments(&xs);
        assert!((m - pg_mean(400.0, 1.5)).abs() < 4.0 * (v / 5000.0).sqrt());
        assert!(xs.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn rejects_zero_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_polya_gamma(0, 1.0, &mut rng).is_err());
    }
}
