//! Weighted nonlinear least squares for the exponential decay
//! `A * exp(-t/T1) + B`, with Levenberg-Marquardt damping and
//! uncertainties from the Gauss-Newton normal matrix.

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitResult {
    pub t1_us: f64,
    pub amplitude_a: f64,
    pub offset_b: f64,
    pub sigma_t1: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
}

/// 1-sigma binomial standard error of a counted fraction, with an
/// Anscombe-style floor so p in {0, 1} does not produce a zero weight:
/// the variance uses p~ = (k + 0.5) / (n + 1).
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    let k = p * n as f64;
    let p_adj = (k + 0.5) / (n as f64 + 1.0);
    (p_adj * (1.0 - p_adj) / n as f64).sqrt()
}

fn model(t: f64, a: f64, t1: f64, b: f64) -> f64 {
    a * (-t / t1).exp() + b
}

fn chi2(t: &[f64], p: &[f64], w: &[f64], a: f64, t1: f64, b: f64) -> f64 {
    t.iter()
        .zip(p)
        .zip(w)
        .map(|((&ti, &pi), &wi)| {
            let r = pi - model(ti, a, t1, b);
            wi * r * r
        })
        .sum()
}

/// Solve the symmetric 3x3 system `m x = rhs` by Gaussian elimination
/// with partial pivoting. Returns None when the matrix is singular.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut acc = rhs[col];
        for k in col + 1..3 {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    Some(x)
}

fn normal_matrix(
    t: &[f64],
    w: &[f64],
    a: f64,
    t1: f64,
) -> ([[f64; 3]; 3], Vec<[f64; 3]>) {
    let jac: Vec<[f64; 3]> = t
        .iter()
        .map(|&ti| {
            let e = (-ti / t1).exp();
            [e, a * ti / (t1 * t1) * e, 1.0]
        })
        .collect();
    let mut jtj = [[0.0; 3]; 3];
    for (ji, &wi) in jac.iter().zip(w) {
        for r in 0..3 {
            for c in 0..3 {
                jtj[r][c] += wi * ji[r] * ji[c];
            }
        }
    }
    (jtj, jac)
}

fn initial_guess(t: &[f64], p: &[f64]) -> (f64, f64, f64) {
    let b0 = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let a0 = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - b0;
    // log-linear regression of p - b0 against t on usable points
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut n = 0.0;
    for (&ti, &pi) in t.iter().zip(p) {
        let d = pi - b0;
        if d > 1e-3 * a0.max(1e-12) {
            let y = d.ln();
            sx += ti;
            sy += y;
            sxx += ti * ti;
            sxy += ti * y;
            n += 1.0;
        }
    }
    let span = t.last().unwrap() - t[0];
    let slope = if n >= 2.0 {
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        0.0
    };
    let t1_0 = if slope < -1e-12 {
        (-1.0 / slope).clamp(span * 1e-3, span * 100.0)
    } else {
        span * 0.5
    };
    (a0, t1_0, b0)
}

/// Fit `A * exp(-t/T1) + B` to probabilities `p(t)` weighted by
/// `1/sigma_p^2`. `sigma_p` may be empty, in which case unit weights are
/// used. 1-sigma uncertainties come from the inverse normal matrix scaled
/// by the reduced chi-square.
pub fn fit_exponential(t: &[f64], p: &[f64], sigma_p: &[f64]) -> Result<FitResult> {
    if t.len() < 4 {
        return Err(Error::invalid("exponential fit needs at least 4 points"));
    }
    if t.len() != p.len() || (!sigma_p.is_empty() && sigma_p.len() != t.len()) {
        return Err(Error::SizeMismatch("t, p, sigma_p lengths differ".into()));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("wait times must be strictly increasing"));
    }
    let w: Vec<f64> = if sigma_p.is_empty() {
        vec![1.0; t.len()]
    } else {
        sigma_p
            .iter()
            .map(|&s| {
                if s > 0.0 {
                    1.0 / (s * s)
                } else {
                    0.0
                }
            })
            .collect()
    };

    let (mut a, mut t1, mut b) = initial_guess(t, p);
    let mut lambda = 1e-3;
    let mut cur = chi2(t, p, &w, a, t1, b);
    let mut converged = false;

    for _ in 0..MAX_ITER {
        let (jtj, jac) = normal_matrix(t, &w, a, t1);
        let mut rhs = [0.0f64; 3];
        for ((ji, (&ti, &pi)), &wi) in jac.iter().zip(t.iter().zip(p)).zip(&w) {
            let r = pi - model(ti, a, t1, b);
            for k in 0..3 {
                rhs[k] += wi * ji[k] * r;
            }
        }
        let mut damped = jtj;
        for k in 0..3 {
            damped[k][k] *= 1.0 + lambda;
            damped[k][k] += 1e-300;
        }
        let step = match solve3(damped, rhs) {
            Some(s) => s,
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let (na, nt1, nb) = (a + step[0], t1 + step[1], b + step[2]);
        let next = if nt1 > 0.0 {
            chi2(t, p, &w, na, nt1, nb)
        } else {
            f64::INFINITY
        };
        if next <= cur {
            let improved = cur - next;
            a = na;
            t1 = nt1;
            b = nb;
            cur = next;
            lambda = (lambda * 0.3).max(1e-12);
            if improved <= 1e-12 * cur.max(1e-30) || step.iter().all(|s| s.abs() < 1e-10) {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // damping saturated: the iterate no longer moves
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::FitDidNotConverge {
            iterations: MAX_ITER,
            t1,
            a,
            b,
        });
    }

    // covariance = inv(J^T W J) * chi2 / (n - 3)
    let (jtj, _) = normal_matrix(t, &w, a, t1);
    let dof = (t.len() - 3).max(1) as f64;
    let scale = (cur / dof).max(f64::MIN_POSITIVE);
    let e = [
        solve3(jtj, [1.0, 0.0, 0.0]),
        solve3(jtj, [0.0, 1.0, 0.0]),
        solve3(jtj, [0.0, 0.0, 1.0]),
    ];
    let var = |i: usize| -> f64 {
        e[i].map(|col| (col[i] * scale).max(0.0)).unwrap_or(f64::INFINITY)
    };
    Ok(FitResult {
        t1_us: t1,
        amplitude_a: a,
        offset_b: b,
        sigma_a: var(0).sqrt(),
        sigma_t1: var(1).sqrt(),
        sigma_b: var(2).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn grid(n: usize, max: f64) -> Vec<f64> {
        (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exact_data_round_trips() {
        let t = grid(12, 300.0);
        let p: Vec<f64> = t.iter().map(|&ti| model(ti, 0.6, 68.0, 0.03)).collect();
        let fit = fit_exponential(&t, &p, &[]).unwrap();
        assert!((fit.amplitude_a - 0.6).abs() / 0.6 < 1e-6, "A {}", fit.amplitude_a);
        assert!((fit.t1_us - 68.0).abs() / 68.0 < 1e-6, "T1 {}", fit.t1_us);
        assert!((fit.offset_b - 0.03).abs() < 1e-6, "B {}", fit.offset_b);
    }

    #[test]
    fn constant_data_flags_unidentifiable_t1() {
        let t = grid(10, 300.0);
        // tiny jitter so the problem is not exactly degenerate
        let p: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, _)| 0.05 + 1e-4 * ((i % 3) as f64 - 1.0))
            .collect();
        let sigma: Vec<f64> = p.iter().map(|&pi| binomial_sigma(pi, 2000)).collect();
        let fit = fit_exponential(&t, &p, &sigma).unwrap();
        assert!(fit.amplitude_a.abs() < 0.05, "A {}", fit.amplitude_a);
        assert!(
            fit.sigma_t1 > fit.t1_us,
            "sigma_t1 {} should exceed T1 {}",
            fit.sigma_t1,
            fit.t1_us
        );
    }

    #[test]
    fn sigma_t1_is_consistent_with_monte_carlo_scatter() {
        let t = grid(12, 300.0);
        let n = 2000usize;
        let mut rng = Rng::new(17);
        let mut t1s = Vec::new();
        let mut reported = Vec::new();
        for _ in 0..200 {
            let mut p = Vec::new();
            let mut s = Vec::new();
            for &ti in &t {
                let p_true = model(ti, 0.6, 68.0, 0.03);
                // binomial sample of the counted fraction
                let mut k = 0usize;
                for _ in 0..n {
                    if rng.uniform() < p_true {
                        k += 1;
                    }
                }
                let phat = k as f64 / n as f64;
                p.push(phat);
                s.push(binomial_sigma(phat, n));
            }
            let fit = fit_exponential(&t, &p, &s).unwrap();
            t1s.push(fit.t1_us);
            reported.push(fit.sigma_t1);
        }
        let mean = t1s.iter().sum::<f64>() / t1s.len() as f64;
        let scatter = (t1s.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (t1s.len() - 1) as f64)
            .sqrt();
        let mean_reported = reported.iter().sum::<f64>() / reported.len() as f64;
        assert!(
            (scatter - mean_reported).abs() / scatter < 0.3,
            "scatter {scatter} vs reported {mean_reported}"
        );
    }

    #[test]
    fn input_validation() {
        assert!(fit_exponential(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.2], &[]).is_err());
        assert!(fit_exponential(&[0.0, 2.0, 1.0, 3.0], &[1.0, 0.5, 0.2, 0.1], &[]).is_err());
        assert!(fit_exponential(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.5, 0.2], &[]).is_err());
    }
}
