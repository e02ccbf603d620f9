//! Closed-form two-level Rabi dynamics and node-law drive design.
//!
//! A resonantly driven two-level system with Rabi frequency `f_rabi`, detuning
//! `delta_f` (both Hz), duration `t` and drive phase `phi` evolves under
//!
//! ```text
//! H = 2π/2 · [ −delta_f,              f_rabi·e^{−iφ} ]
//!            [  f_rabi·e^{+iφ},       delta_f        ]
//! ```
//!
//! in the (down, up) basis, giving the spin-flip probability
//! `P = Ω²/(Ω²+Δ²) · sin²(t·√(Ω²+Δ²)/2)` with `Ω = 2π·f_rabi`, `Δ = 2π·delta_f`.
//!
//! Setting the generalized Rabi period to an integer number of cycles during
//! the pulse nulls the off-resonant flip exactly; the node law for a rotation
//! angle θ is `f_rabi = delta_f / √((2πn/θ)² − 1)`.

use num_complex::Complex64;

use crate::error::{Result, SimError};

/// 2×2 complex matrix in row-major order `[m00, m01, m10, m11]`, acting on
/// (down, up) amplitudes.
pub type Mat2 = [Complex64; 4];

/// Spin-flip probability of a detuned square pulse starting from a basis state.
pub fn spin_flip_probability(f_rabi_hz: f64, delta_f_hz: f64, duration_s: f64) -> f64 {
    let omega = 2.0 * std::f64::consts::PI * f_rabi_hz;
    let delta = 2.0 * std::f64::consts::PI * delta_f_hz;
    let w = (omega * omega + delta * delta).sqrt();
    if w == 0.0 {
        return 0.0;
    }
    let amp = (omega / w).powi(2);
    amp * (0.5 * w * duration_s).sin().powi(2)
}

/// Exact propagator of the detuned square pulse.
///
/// On resonance this reduces to `R(θ, φ) = exp(−iθ/2·(cosφ·σx + sinφ·σy))`
/// with `θ = Ω·t`; a 2π rotation gives exactly −𝟙 (the geometric phase used by
/// the conditional-phase gate).
pub fn rabi_unitary(f_rabi_hz: f64, delta_f_hz: f64, duration_s: f64, phi_rad: f64) -> Mat2 {
    let omega = 2.0 * std::f64::consts::PI * f_rabi_hz;
    let delta = 2.0 * std::f64::consts::PI * delta_f_hz;
    let w = (omega * omega + delta * delta).sqrt();
    let half_wt = 0.5 * w * duration_s;
    let (sin, cos) = half_wt.sin_cos();
    if w == 0.0 {
        return [
            Complex64::new(1.0, 0.0),
            Complex64::ZERO,
            Complex64::ZERO,
            Complex64::new(1.0, 0.0),
        ];
    }
    // U = cos(Wt/2)·𝟙 − i·sin(Wt/2)/W · (−Δ·σz' + Ω·σφ), written out per entry.
    let s_over_w = sin / w;
    let e_minus = Complex64::from_polar(1.0, -phi_rad);
    let e_plus = Complex64::from_polar(1.0, phi_rad);
    [
        Complex64::new(cos, delta * s_over_w),
        Complex64::new(0.0, -omega * s_over_w) * e_minus,
        Complex64::new(0.0, -omega * s_over_w) * e_plus,
        Complex64::new(cos, -delta * s_over_w),
    ]
}

/// Resonant rotation `R(θ, φ)` (zero detuning, angle in radians).
pub fn rotation(theta_rad: f64, phi_rad: f64) -> Mat2 {
    let (sin, cos) = (0.5 * theta_rad).sin_cos();
    let e_minus = Complex64::from_polar(1.0, -phi_rad);
    let e_plus = Complex64::from_polar(1.0, phi_rad);
    [
        Complex64::new(cos, 0.0),
        Complex64::new(0.0, -sin) * e_minus,
        Complex64::new(0.0, -sin) * e_plus,
        Complex64::new(cos, 0.0),
    ]
}

/// z-rotation `Rz(ζ) = exp(−iζ·σz/2)` with σz = diag(+1, −1) on (down, up).
pub fn z_rotation(zeta_rad: f64) -> Mat2 {
    [
        Complex64::from_polar(1.0, -0.5 * zeta_rad),
        Complex64::ZERO,
        Complex64::ZERO,
        Complex64::from_polar(1.0, 0.5 * zeta_rad),
    ]
}

/// Node-law Rabi frequency: the largest drive for a θ rotation (in radians)
/// whose n-th generalized-Rabi node coincides with the pulse end, so a
/// neighbour detuned by `delta_f_hz` is returned exactly to its initial
/// population. For θ = π/2 this is `delta_f/√(16n²−1)`; for θ = π,
/// `delta_f/√(4n²−1)`.
pub fn optimal_rabi(theta_rad: f64, n: u32, delta_f_hz: f64) -> Result<f64> {
    if n == 0 {
        return Err(SimError::Domain("node index n must be ≥ 1".into()));
    }
    if !(theta_rad > 0.0) {
        return Err(SimError::Domain("rotation angle must be positive".into()));
    }
    if !(delta_f_hz > 0.0) {
        return Err(SimError::Domain(
            "neighbour detuning must be positive".into(),
        ));
    }
    let ratio = 2.0 * std::f64::consts::PI * f64::from(n) / theta_rad;
    let radicand = ratio * ratio - 1.0;
    if radicand <= 0.0 {
        return Err(SimError::Domain(format!(
            "no node solution: rotation angle {theta_rad} rad too large for n = {n}"
        )));
    }
    Ok(delta_f_hz / radicand.sqrt())
}

/// Pulse duration for a rotation angle at a given Rabi frequency.
pub fn pulse_duration_s(theta_rad: f64, f_rabi_hz: f64) -> f64 {
    theta_rad / (2.0 * std::f64::consts::PI * f_rabi_hz)
}

/// Rabi frequency that packs an n-node π pulse into duration `t` at detuning
/// `delta_f`: `f_rabi = √(n²/t² − delta_f²)`.
pub fn rabi_for_duration(n: u32, duration_s: f64, delta_f_hz: f64) -> Result<f64> {
    let radicand = (f64::from(n) / duration_s).powi(2) - delta_f_hz * delta_f_hz;
    if radicand <= 0.0 {
        return Err(SimError::Domain(format!(
            "no real Rabi frequency for n = {n}, t = {duration_s}, detuning {delta_f_hz}"
        )));
    }
    Ok(radicand.sqrt())
}
