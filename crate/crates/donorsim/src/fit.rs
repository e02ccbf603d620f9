//! Least-squares fits used by the calibration and benchmarking analyses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SimError};

/// Gaussian profile on a flat baseline: y = offset + amplitude·exp(−(x−center)²/(2σ²)).
#[derive(Debug, Clone, Copy)]
pub struct GaussianFit {
    pub center: f64,
    pub sigma: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Root-mean-square residual of the converged fit.
    pub rms_residual: f64,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.sigma;
        self.offset + self.amplitude * (-0.5 * z * z).exp()
    }
}

/// Fit a Gaussian peak by Gauss-Newton iteration with damping.
///
/// The starting point comes from the extremum of the data and a
/// second-moment width estimate, so well-formed single-peak scans converge
/// in a handful of steps. Dips (negative amplitude) are handled.
pub fn fit_gaussian_peak(xs: &[f64], ys: &[f64]) -> Result<GaussianFit> {
    if xs.len() != ys.len() || xs.len() < 5 {
        return Err(SimError::Fit(format!(
            "peak fit needs at least 5 points, got {}",
            xs.len().min(ys.len())
        )));
    }
    let n = xs.len();
    // Initial guesses: baseline from the edges, extremum from the bulk.
    let edge = (ys[0] + ys[n - 1]) / 2.0;
    let (k_ext, &y_ext) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1 - edge).abs().total_cmp(&(b.1 - edge).abs()))
        .expect("non-empty");
    let mut amplitude = y_ext - edge;
    let mut center = xs[k_ext];
    let mut offset = edge;
    // Second-moment width of |y − baseline|.
    let weights: Vec<f64> = ys.iter().map(|&y| (y - edge).abs()).collect();
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(SimError::Fit("peak fit given a flat trace".into()));
    }
    let mean: f64 = xs.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / wsum;
    let var: f64 = xs
        .iter()
        .zip(&weights)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        / wsum;
    let span = xs[n - 1] - xs[0];
    let mut sigma = var.sqrt().max(span.abs() / (n as f64)).abs();

    let mut lambda = 1e-3;
    let mut last_ssr = f64::INFINITY;
    for _ in 0..200 {
        // Residuals and Jacobian for parameters (center, sigma, amplitude, offset).
        let mut jt_j = DMatrix::<f64>::zeros(4, 4);
        let mut jt_r = DVector::<f64>::zeros(4);
        let mut ssr = 0.0;
        for (&x, &y) in xs.iter().zip(ys) {
            let z = (x - center) / sigma;
            let e = (-0.5 * z * z).exp();
            let model = offset + amplitude * e;
            let r = y - model;
            ssr += r * r;
            let d = [
                amplitude * e * z / sigma,          // ∂/∂center
                amplitude * e * z * z / sigma,      // ∂/∂sigma
                e,                                  // ∂/∂amplitude
                1.0,                                // ∂/∂offset
            ];
            for i in 0..4 {
                jt_r[i] += d[i] * r;
                for j in 0..4 {
                    jt_j[(i, j)] += d[i] * d[j];
                }
            }
        }
        if (last_ssr - ssr).abs() <= 1e-14 * (1.0 + ssr) {
            last_ssr = ssr;
            break;
        }
        last_ssr = ssr;
        // Levenberg damping keeps early steps stable.
        let mut damped = jt_j.clone();
        for i in 0..4 {
            damped[(i, i)] *= 1.0 + lambda;
        }
        let step = damped
            .lu()
            .solve(&jt_r)
            .ok_or_else(|| SimError::Fit("peak fit normal equations are singular".into()))?;
        center += step[0];
        sigma += step[1];
        amplitude += step[2];
        offset += step[3];
        if !sigma.is_finite() || sigma.abs() < 1e-12 * span.abs() {
            return Err(SimError::Fit("peak fit collapsed to zero width".into()));
        }
        lambda = (lambda * 0.5).max(1e-12);
    }
    Ok(GaussianFit {
        center,
        sigma: sigma.abs(),
        amplitude,
        offset,
        rms_residual: (last_ssr / n as f64).sqrt(),
    })
}

/// Exponential decay through the origin scale: y = amplitude·rate^x.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    pub amplitude: f64,
    pub rate: f64,
    pub rms_residual: f64,
}

impl DecayFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * self.rate.powf(x)
    }
}

/// Fit y = A·pˣ with 0 < p ≤ 1 expected (benchmarking decays).
///
/// A log-domain line fit over the positive samples seeds a Gauss-Newton
/// refinement in the linear domain, which weights all points evenly.
pub fn fit_decay(xs: &[f64], ys: &[f64]) -> Result<DecayFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(SimError::Fit(format!(
            "decay fit needs at least 3 points, got {}",
            xs.len().min(ys.len())
        )));
    }
    // Seed from positive samples; tolerate noisy tails crossing zero.
    let logs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&x, &y)| (x, y.ln()))
        .collect();
    if logs.len() < 2 {
        return Err(SimError::Fit("decay fit needs positive samples".into()));
    }
    let (slope, intercept) = line_through(&logs);
    let mut amplitude = intercept.exp();
    let mut rate = slope.exp().clamp(1e-6, 2.0);

    let mut last_ssr = f64::INFINITY;
    for _ in 0..200 {
        let mut jt_j = DMatrix::<f64>::zeros(2, 2);
        let mut jt_r = DVector::<f64>::zeros(2);
        let mut ssr = 0.0;
        for (&x, &y) in xs.iter().zip(ys) {
            let px = rate.powf(x);
            let model = amplitude * px;
            let r = y - model;
            ssr += r * r;
            let d = [px, amplitude * x * rate.powf(x - 1.0)];
            for i in 0..2 {
                jt_r[i] += d[i] * r;
                for j in 0..2 {
                    jt_j[(i, j)] += d[i] * d[j];
                }
            }
        }
        if (last_ssr - ssr).abs() <= 1e-15 * (1.0 + ssr) {
            last_ssr = ssr;
            break;
        }
        last_ssr = ssr;
        // A singular step means the data no longer constrains the refinement;
        // keep the current parameters rather than failing.
        let Some(step) = jt_j.lu().solve(&jt_r) else {
            break;
        };
        amplitude += step[0];
        rate = (rate + step[1]).clamp(1e-9, 2.0);
    }
    Ok(DecayFit {
        amplitude,
        rate,
        rms_residual: (last_ssr / xs.len() as f64).sqrt(),
    })
}

/// Sinusoid fringe: y = offset + amplitude·cos(φ − phase).
#[derive(Debug, Clone, Copy)]
pub struct CosineFit {
    pub offset: f64,
    pub amplitude: f64,
    /// Phase of the fringe maximum, radians.
    pub phase: f64,
    pub rms_residual: f64,
}

impl CosineFit {
    pub fn eval(&self, phi: f64) -> f64 {
        self.offset + self.amplitude * (phi - self.phase).cos()
    }
}

/// Exact linear least squares for a unit-frequency fringe over phase.
pub fn fit_cosine(phis: &[f64], ys: &[f64]) -> Result<CosineFit> {
    if phis.len() != ys.len() || phis.len() < 4 {
        return Err(SimError::Fit(format!(
            "fringe fit needs at least 4 points, got {}",
            phis.len().min(ys.len())
        )));
    }
    let n = phis.len();
    let mut a = DMatrix::<f64>::zeros(n, 3);
    let mut b = DVector::<f64>::zeros(n);
    for (k, (&phi, &y)) in phis.iter().zip(ys).enumerate() {
        a[(k, 0)] = 1.0;
        a[(k, 1)] = phi.cos();
        a[(k, 2)] = phi.sin();
        b[k] = y;
    }
    let coef = (a.transpose() * &a)
        .lu()
        .solve(&(a.transpose() * &b))
        .ok_or_else(|| SimError::Fit("fringe fit normal equations are singular".into()))?;
    let (offset, c, s) = (coef[0], coef[1], coef[2]);
    let amplitude = c.hypot(s);
    let phase = s.atan2(c);
    let ssr: f64 = phis
        .iter()
        .zip(ys)
        .map(|(&phi, &y)| {
            let m = offset + amplitude * (phi - phase).cos();
            (y - m) * (y - m)
        })
        .sum();
    Ok(CosineFit {
        offset,
        amplitude,
        phase,
        rms_residual: (ssr / n as f64).sqrt(),
    })
}

/// Polynomial in a rescaled abscissa: y = Σ c_k·(x·scale)ᵏ.
#[derive(Debug, Clone)]
pub struct ScaledPolynomial {
    pub scale: f64,
    pub coeffs: Vec<f64>,
}

impl ScaledPolynomial {
    pub fn eval(&self, x: f64) -> f64 {
        let t = x * self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }
}

/// Least-squares polynomial of the given degree that passes exactly through
/// the `pins` (equality-constrained via the KKT system). `scale` rescales the
/// abscissa before building the Vandermonde system, which keeps it
/// well-conditioned when x spans many decades.
pub fn fit_polynomial_pinned(
    xs: &[f64],
    ys: &[f64],
    degree: usize,
    pins: &[(f64, f64)],
    scale: f64,
) -> Result<ScaledPolynomial> {
    let n = xs.len();
    let m = degree + 1;
    let p = pins.len();
    if n != ys.len() || n + p < m {
        return Err(SimError::Fit(format!(
            "pinned polynomial fit of degree {degree} needs {m} samples+pins, got {}",
            n.min(ys.len()) + p
        )));
    }
    if p > m {
        return Err(SimError::Fit(format!(
            "{p} pins over-constrain a degree-{degree} polynomial"
        )));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(SimError::Fit(format!("invalid abscissa scale {scale}")));
    }
    let row = |x: f64| -> Vec<f64> {
        let t = x * scale;
        (0..m).map(|k| t.powi(k as i32)).collect()
    };
    // KKT system: [2VᵀV  Pᵀ; P  0]·[c; λ] = [2Vᵀy; y_pin].
    let dim = m + p;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (&x, &y) in xs.iter().zip(ys) {
        let v = row(x);
        for i in 0..m {
            rhs[i] += 2.0 * v[i] * y;
            for j in 0..m {
                kkt[(i, j)] += 2.0 * v[i] * v[j];
            }
        }
    }
    for (k, &(x0, y0)) in pins.iter().enumerate() {
        let v = row(x0);
        for i in 0..m {
            kkt[(m + k, i)] = v[i];
            kkt[(i, m + k)] = v[i];
        }
        rhs[m + k] = y0;
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SimError::Fit("pinned polynomial KKT system is singular".into()))?;
    Ok(ScaledPolynomial {
        scale,
        coeffs: sol.as_slice()[..m].to_vec(),
    })
}

/// Ordinary least-squares line: returns (slope, intercept).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(SimError::Fit("line fit needs at least 2 points".into()));
    }
    let pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    Ok(line_through(&pairs))
}

fn line_through(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx: f64 = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my: f64 = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
