//! State tomography: measurement-basis pulse preludes, outcome collection,
//! linear inversion over the Pauli basis, physicality projection, and the
//! reduced fidelity estimators used for entangled-pair grids and chain states.
//!
//! Bit convention for a measured qubit list `[q0, q1, …]`: local outcome and
//! matrix indices use bit k for qubit k (bit set ⇔ read "up"), matching the
//! little-endian layout of the full register state.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::circuit::{Circuit, Condition, GateOp};
use crate::circuits::{nuclear_rot, qnd_read, BellKind};
use crate::engine::Engine;
use crate::error::{Result, SimError};
use crate::model::{SpinId, SpinRole};
use crate::noise::NoiseProcess;
use crate::state::StateVector;

use std::f64::consts::{FRAC_PI_2, PI};

/// Single-qubit measurement axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureAxis {
    X,
    Y,
    Z,
    /// Equatorial axis cos(φ)·X + sin(φ)·Y.
    Equatorial(f64),
}

impl MeasureAxis {
    /// The Pauli this axis estimates, when it is a cardinal one.
    fn pauli(self) -> Option<Pauli> {
        match self {
            MeasureAxis::X => Some(Pauli::X),
            MeasureAxis::Y => Some(Pauli::Y),
            MeasureAxis::Z => Some(Pauli::Z),
            MeasureAxis::Equatorial(_) => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            MeasureAxis::X => "X".into(),
            MeasureAxis::Y => "Y".into(),
            MeasureAxis::Z => "Z".into(),
            MeasureAxis::Equatorial(phi) => format!("E({phi:.3})"),
        }
    }
}

/// Pauli operator label used in reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    /// Matrix element on the (down, up) basis.
    fn elem(self, row: usize, col: usize) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        match (self, row, col) {
            (Pauli::I, 0, 0) | (Pauli::I, 1, 1) => Complex64::ONE,
            (Pauli::X, 0, 1) | (Pauli::X, 1, 0) => Complex64::ONE,
            (Pauli::Y, 0, 1) => -i,
            (Pauli::Y, 1, 0) => i,
            (Pauli::Z, 0, 0) => Complex64::ONE,
            (Pauli::Z, 1, 1) => -Complex64::ONE,
            _ => Complex64::ZERO,
        }
    }
}

/// Pre-measurement pulses that map the requested axis onto the native
/// spin-up/spin-down readout of a nuclear qubit.
///
/// The axis rotations keep to hardware-shaped sequences: one physical π/2
/// pulse at most, with any residual frame change carried by a zero-duration
/// z-rotation (X: −Y/2; Y: frame z by π/2 then +Y/2; equatorial φ: frame z by
/// −φ then −Y/2; a trailing z-rotation that a population readout cannot see
/// is dropped).
pub fn measurement_prelude(target: SpinId, axis: MeasureAxis) -> Result<Vec<GateOp>> {
    if matches!(target.role, SpinRole::Electron) {
        return Err(SimError::Circuit(
            "measurement preludes address nuclear qubits".into(),
        ));
    }
    let vz = |zeta: f64| GateOp::VirtualZ {
        target,
        angle_rad: zeta,
        condition: Condition::free(),
    };
    Ok(match axis {
        MeasureAxis::Z => vec![],
        MeasureAxis::X => vec![nuclear_rot(target, FRAC_PI_2, -FRAC_PI_2)],
        MeasureAxis::Y => vec![vz(FRAC_PI_2), nuclear_rot(target, FRAC_PI_2, FRAC_PI_2)],
        MeasureAxis::Equatorial(phi) => {
            vec![vz(-phi), nuclear_rot(target, FRAC_PI_2, -FRAC_PI_2)]
        }
    })
}

/// Outcome distribution observed for one measurement setting.
#[derive(Debug, Clone)]
pub struct SettingData {
    pub axes: Vec<MeasureAxis>,
    /// Probability of each local outcome index (bit k set ⇔ qubit k up).
    pub probs: Vec<f64>,
    /// Accepted shots behind `probs`; 0 marks exact expectations.
    pub shots: usize,
}

impl SettingData {
    /// Expectation of the axis product over the qubits selected by `mask`
    /// (eigenvalue +1 for down, −1 for up on each selected qubit).
    pub fn expectation(&self, mask: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(b, &p)| if (b & mask).count_ones() % 2 == 0 { p } else { -p })
            .sum()
    }

    /// Standard error of `expectation(mask)` under multinomial sampling;
    /// zero for exact data.
    pub fn expectation_sigma(&self, mask: usize) -> f64 {
        if self.shots == 0 {
            return 0.0;
        }
        let e = self.expectation(mask);
        ((1.0 - e * e).max(0.0) / self.shots as f64).sqrt()
    }

    fn full_mask(&self) -> usize {
        (1usize << self.axes.len()) - 1
    }
}

/// Append the per-qubit measurement preludes for `axes` to a copy of `prep`.
pub fn with_preludes(
    prep: &Circuit,
    qubits: &[SpinId],
    axes: &[MeasureAxis],
) -> Result<Circuit> {
    if qubits.len() != axes.len() {
        return Err(SimError::Shape(format!(
            "{} qubits but {} measurement axes",
            qubits.len(),
            axes.len()
        )));
    }
    let mut circuit = prep.clone();
    for (&q, &axis) in qubits.iter().zip(axes) {
        circuit.extend_ops(measurement_prelude(q, axis)?);
    }
    Ok(circuit)
}

/// Exact outcome distribution for one setting: propagate the preparation and
/// prelude pulses as a pure state and marginalize onto the measured qubits.
pub fn collect_exact(
    engine: &Engine,
    prep: &Circuit,
    qubits: &[SpinId],
    axes: &[MeasureAxis],
) -> Result<SettingData> {
    let circuit = with_preludes(prep, qubits, axes)?;
    let state = engine.propagate_pure(&circuit)?;
    let positions = qubit_positions(engine, qubits)?;
    Ok(SettingData {
        axes: axes.to_vec(),
        probs: marginal_probabilities(&state, &positions),
        shots: 0,
    })
}

/// Sampled outcome distribution: append a repetitive nuclear readout per
/// qubit and tally the accepted records.
pub fn collect_sampled(
    engine: &Engine,
    prep: &Circuit,
    qubits: &[SpinId],
    axes: &[MeasureAxis],
    shots: usize,
    master_seed: u64,
    process: &mut NoiseProcess,
) -> Result<SettingData> {
    let mut circuit = with_preludes(prep, qubits, axes)?;
    let cycles = engine.qnd_config().default_cycles;
    for &q in qubits {
        circuit.push_item(qnd_read(q, cycles)?);
    }
    let records = engine.run_shots(&circuit, shots, master_seed, process)?;
    let mut counts = vec![0usize; 1 << qubits.len()];
    let mut accepted = 0usize;
    for rec in &records {
        if rec.any_rejected() {
            continue;
        }
        if rec.nuclear_reads.len() != qubits.len() {
            return Err(SimError::Experiment(format!(
                "expected {} nuclear reads per shot, got {}",
                qubits.len(),
                rec.nuclear_reads.len()
            )));
        }
        let mut idx = 0usize;
        for (k, read) in rec.nuclear_reads.iter().enumerate() {
            if read.up {
                idx |= 1 << k;
            }
        }
        counts[idx] += 1;
        accepted += 1;
    }
    if accepted == 0 {
        return Err(SimError::Experiment(
            "all shots were rejected by the readout veto".into(),
        ));
    }
    Ok(SettingData {
        axes: axes.to_vec(),
        probs: counts
            .iter()
            .map(|&c| c as f64 / accepted as f64)
            .collect(),
        shots: accepted,
    })
}

fn qubit_positions(engine: &Engine, qubits: &[SpinId]) -> Result<Vec<usize>> {
    qubits
        .iter()
        .map(|&q| engine.device().spin_index(q))
        .collect()
}

/// Marginal computational-basis distribution of `state` over the listed spin
/// positions (local bit k ⇔ global bit `positions[k]`).
pub fn marginal_probabilities(state: &StateVector, positions: &[usize]) -> Vec<f64> {
    let mut probs = vec![0.0; 1 << positions.len()];
    for (g, amp) in state.amplitudes().iter().enumerate() {
        let w = amp.norm_sqr();
        if w == 0.0 {
            continue;
        }
        let mut local = 0usize;
        for (k, &pos) in positions.iter().enumerate() {
            if (g >> pos) & 1 == 1 {
                local |= 1 << k;
            }
        }
        probs[local] += w;
    }
    probs
}

/// Reduced density matrix of `state` on the listed spin positions.
pub fn reduced_density_matrix(state: &StateVector, positions: &[usize]) -> DMatrix<Complex64> {
    let n_local = positions.len();
    let dim = 1usize << n_local;
    let mut keep = vec![false; state.n_spins()];
    for &p in positions {
        keep[p] = true;
    }
    // Bucket amplitudes by the state of the traced-out spins.
    let mut buckets: BTreeMap<usize, Vec<(usize, Complex64)>> = BTreeMap::new();
    for (g, &amp) in state.amplitudes().iter().enumerate() {
        if amp == Complex64::ZERO {
            continue;
        }
        let mut local = 0usize;
        for (k, &pos) in positions.iter().enumerate() {
            if (g >> pos) & 1 == 1 {
                local |= 1 << k;
            }
        }
        let mut rest = 0usize;
        let mut shift = 0usize;
        for (bit, &kept) in keep.iter().enumerate() {
            if !kept {
                rest |= ((g >> bit) & 1) << shift;
                shift += 1;
            }
        }
        buckets.entry(rest).or_default().push((local, amp));
    }
    let mut rho = DMatrix::<Complex64>::zeros(dim, dim);
    for partials in buckets.values() {
        for &(i, a) in partials {
            for &(j, b) in partials {
                rho[(i, j)] += a * b.conj();
            }
        }
    }
    rho
}

/// All 3ⁿ cardinal-axis settings (X/Y/Z per qubit), in base-3 counting order.
pub fn full_settings(n_qubits: usize) -> Vec<Vec<MeasureAxis>> {
    let axes = [MeasureAxis::X, MeasureAxis::Y, MeasureAxis::Z];
    let count = 3usize.pow(n_qubits as u32);
    (0..count)
        .map(|mut s| {
            (0..n_qubits)
                .map(|_| {
                    let a = axes[s % 3];
                    s /= 3;
                    a
                })
                .collect()
        })
        .collect()
}

/// The three correlator settings (XX, YY, ZZ) that determine a Bell-state
/// fidelity without full reconstruction.
pub fn pair_settings_reduced() -> Vec<Vec<MeasureAxis>> {
    vec![
        vec![MeasureAxis::X, MeasureAxis::X],
        vec![MeasureAxis::Y, MeasureAxis::Y],
        vec![MeasureAxis::Z, MeasureAxis::Z],
    ]
}

/// N+1 settings for an N-qubit chain-state fidelity: one population readout
/// (all Z) plus N equatorial parity settings at φ_k = kπ/N.
pub fn ghz_settings(n_qubits: usize) -> Vec<Vec<MeasureAxis>> {
    let mut settings = vec![vec![MeasureAxis::Z; n_qubits]];
    for k in 0..n_qubits {
        let phi = k as f64 * PI / n_qubits as f64;
        settings.push(vec![MeasureAxis::Equatorial(phi); n_qubits]);
    }
    settings
}

/// Linear-inversion reconstruction: averages every Pauli-string expectation
/// available in `data` and assembles ρ = 2⁻ⁿ Σ_P ⟨P⟩·P, with unmeasured
/// non-identity strings taken as zero.
pub fn reconstruct_linear(n_qubits: usize, data: &[SettingData]) -> Result<DMatrix<Complex64>> {
    if n_qubits == 0 || n_qubits > 10 {
        return Err(SimError::Reconstruction(format!(
            "cannot reconstruct {n_qubits} qubits"
        )));
    }
    let dim = 1usize << n_qubits;
    // key = Σ_k code(P_k)·4^k with I,X,Y,Z → 0..3
    let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for setting in data {
        if setting.axes.len() != n_qubits {
            return Err(SimError::Shape(format!(
                "setting has {} axes, expected {n_qubits}",
                setting.axes.len()
            )));
        }
        if setting.probs.len() != dim {
            return Err(SimError::Shape(format!(
                "setting has {} outcome bins, expected {dim}",
                setting.probs.len()
            )));
        }
        for mask in 1..dim {
            let mut key = 0u64;
            let mut measurable = true;
            for k in 0..n_qubits {
                if mask >> k & 1 == 0 {
                    continue;
                }
                match setting.axes[k].pauli() {
                    Some(p) => key += (p as u64) << (2 * k),
                    None => {
                        measurable = false;
                        break;
                    }
                }
            }
            if !measurable {
                continue;
            }
            let entry = sums.entry(key).or_insert((0.0, 0));
            entry.0 += setting.expectation(mask);
            entry.1 += 1;
        }
    }
    let mut rho = DMatrix::<Complex64>::identity(dim, dim).map(|v| v / dim as f64);
    for (&key, &(sum, count)) in &sums {
        let coeff = sum / count as f64;
        let factors: Vec<Pauli> = (0..n_qubits)
            .map(|k| match (key >> (2 * k)) & 3 {
                0 => Pauli::I,
                1 => Pauli::X,
                2 => Pauli::Y,
                _ => Pauli::Z,
            })
            .collect();
        for i in 0..dim {
            for j in 0..dim {
                let mut elem = Complex64::ONE;
                for (k, p) in factors.iter().enumerate() {
                    elem *= p.elem(i >> k & 1, j >> k & 1);
                    if elem == Complex64::ZERO {
                        break;
                    }
                }
                rho[(i, j)] += elem * coeff / dim as f64;
            }
        }
    }
    Ok(rho)
}

/// Project a Hermitian estimate onto the physical set: clamp negative
/// eigenvalues to zero and renormalize the trace to one.
pub fn project_to_physical(rho: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let herm = (rho + rho.adjoint()).map(|v| v * 0.5);
    let eig = herm
        .symmetric_eigen();
    let clamped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Err(SimError::Reconstruction(
            "estimate has no positive eigenvalue mass".into(),
        ));
    }
    let dim = rho.nrows();
    let mut out = DMatrix::<Complex64>::zeros(dim, dim);
    for (k, &l) in clamped.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let scale = Complex64::new(l / total, 0.0);
        for i in 0..dim {
            for j in 0..dim {
                out[(i, j)] += scale * v[i] * v[j].conj();
            }
        }
    }
    Ok(out)
}

/// Overlap ⟨ψ|ρ|ψ⟩ with a pure target.
pub fn fidelity_with_pure(rho: &DMatrix<Complex64>, psi: &DVector<Complex64>) -> f64 {
    (psi.adjoint() * rho * psi)[(0, 0)].re
}

pub fn frobenius_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).norm()
}

/// Local two-qubit target vector for each Bell state (bit 0 = first qubit).
pub fn bell_target(kind: BellKind) -> DVector<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (hi, sign) = match kind {
        BellKind::PhiPlus => (3, 1.0),
        BellKind::PhiMinus => (3, -1.0),
        BellKind::PsiPlus => (1, 1.0),
        BellKind::PsiMinus => (1, -1.0),
    };
    let lo = if hi == 3 { 0 } else { 2 };
    let mut v = DVector::<Complex64>::zeros(4);
    v[lo] = Complex64::new(s, 0.0);
    v[hi] = Complex64::new(sign * s, 0.0);
    v
}

/// N-qubit (|↓…↓⟩ + |↑…↑⟩)/√2 target vector.
pub fn ghz_target(n_qubits: usize) -> DVector<Complex64> {
    let dim = 1usize << n_qubits;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = DVector::<Complex64>::zeros(dim);
    v[0] = Complex64::new(s, 0.0);
    v[dim - 1] = Complex64::new(s, 0.0);
    v
}

/// Bell fidelity from the three reduced correlator settings.
pub fn bell_fidelity_reduced(kind: BellKind, data: &[SettingData]) -> Result<f64> {
    let corr = |want: MeasureAxis| -> Result<f64> {
        data.iter()
            .find(|d| d.axes.len() == 2 && d.axes.iter().all(|&a| a == want))
            .map(|d| d.expectation(0b11))
            .ok_or_else(|| {
                SimError::Reconstruction(format!(
                    "missing {}{} correlator setting",
                    want.label(),
                    want.label()
                ))
            })
    };
    let (xx, yy, zz) = (
        corr(MeasureAxis::X)?,
        corr(MeasureAxis::Y)?,
        corr(MeasureAxis::Z)?,
    );
    let (sx, sy, sz) = match kind {
        BellKind::PhiPlus => (1.0, -1.0, 1.0),
        BellKind::PhiMinus => (-1.0, 1.0, 1.0),
        BellKind::PsiPlus => (1.0, 1.0, -1.0),
        BellKind::PsiMinus => (-1.0, -1.0, -1.0),
    };
    Ok((1.0 + sx * xx + sy * yy + sz * zz) / 4.0)
}

/// Chain-state fidelity from the N+1 reduced settings, with its standard
/// error under multinomial shot noise (zero for exact data):
/// F = (P↓…↓ + P↑…↑)/2 + C/2, where C is the amplitude of the N-fold parity
/// oscillation over the equatorial settings.
pub fn ghz_fidelity_reduced(data: &[SettingData]) -> Result<(f64, f64)> {
    let pops = data
        .iter()
        .find(|d| d.axes.iter().all(|&a| a == MeasureAxis::Z))
        .ok_or_else(|| SimError::Reconstruction("missing population (all-Z) setting".into()))?;
    let n = pops.axes.len();
    let dim = 1usize << n;
    let p_low = pops.probs[0];
    let p_high = pops.probs[dim - 1];
    // Multinomial variance of P↓…↓ + P↑…↑.
    let pop_var = if pops.shots == 0 {
        0.0
    } else {
        let p = p_low + p_high;
        (p * (1.0 - p)).max(0.0) / pops.shots as f64
    };

    let mut parity: Vec<(usize, f64, f64)> = Vec::new();
    for d in data {
        if let Some(MeasureAxis::Equatorial(phi)) = d.axes.first().copied() {
            if !d
                .axes
                .iter()
                .all(|&a| matches!(a, MeasureAxis::Equatorial(p) if p == phi))
            {
                return Err(SimError::Reconstruction(
                    "mixed equatorial phases inside one parity setting".into(),
                ));
            }
            let k = (phi * n as f64 / PI).round() as usize;
            let mask = d.full_mask();
            parity.push((k, d.expectation(mask), d.expectation_sigma(mask)));
        }
    }
    if parity.len() != n {
        return Err(SimError::Reconstruction(format!(
            "need {n} parity settings, found {}",
            parity.len()
        )));
    }
    parity.sort_by_key(|&(k, _, _)| k);
    for (want, &(k, _, _)) in parity.iter().enumerate() {
        if k != want {
            return Err(SimError::Reconstruction(
                "parity phases must be φ_k = kπ/N for k = 0…N−1".into(),
            ));
        }
    }
    let signed_sum: f64 = parity
        .iter()
        .map(|&(k, e, _)| if k % 2 == 0 { e } else { -e })
        .sum();
    let coherence = signed_sum.abs() / n as f64;
    let coh_var: f64 = parity.iter().map(|&(_, _, s)| s * s).sum::<f64>() / (n as f64).powi(2);
    let fidelity = (p_low + p_high) / 2.0 + coherence / 2.0;
    let sigma = (pop_var / 4.0 + coh_var / 4.0).sqrt();
    Ok((fidelity, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{bell_prepare, ghz_prepare, ghz_qubits};
    use crate::config::reference_config;
    use crate::engine::{PulseMode, ReadoutMode};

    fn ideal_engine() -> Engine {
        let cfg = reference_config();
        Engine::from_config(&cfg, PulseMode::Ideal, ReadoutMode::Ideal)
    }

    fn pair(engine: &Engine) -> (SpinId, SpinId) {
        let d = engine.device();
        (
            d.spin_by_label("n6").unwrap(),
            d.spin_by_label("n9").unwrap(),
        )
    }

    #[test]
    fn depolarized_pair_oracle_reconstructs_exactly() {
        // Analytic outcome distributions for ρ = 0.9·|Φ⁺⟩⟨Φ⁺| + 0.1·I/4:
        // the only non-zero Pauli expectations are XX = +0.9, YY = −0.9,
        // ZZ = +0.9.
        let expect = |a: Pauli, b: Pauli| -> f64 {
            match (a, b) {
                (Pauli::X, Pauli::X) | (Pauli::Z, Pauli::Z) => 0.9,
                (Pauli::Y, Pauli::Y) => -0.9,
                _ => 0.0,
            }
        };
        let data: Vec<SettingData> = full_settings(2)
            .into_iter()
            .map(|axes| {
                let (a, b) = (axes[0].pauli().unwrap(), axes[1].pauli().unwrap());
                let probs = (0..4)
                    .map(|out| {
                        let (s0, s1) = (
                            if out & 1 == 0 { 1.0 } else { -1.0 },
                            if out & 2 == 0 { 1.0 } else { -1.0 },
                        );
                        0.25 * (1.0 + s0 * s1 * expect(a, b))
                    })
                    .collect();
                SettingData {
                    axes,
                    probs,
                    shots: 0,
                }
            })
            .collect();
        let rho = reconstruct_linear(2, &data).unwrap();
        let f = fidelity_with_pure(&rho, &bell_target(BellKind::PhiPlus));
        assert!((f - 0.925).abs() < 1e-12, "fidelity {f}");
        // Reconstruction must equal the analytic matrix, element by element.
        let mut truth = DMatrix::<Complex64>::identity(4, 4).map(|v| v * 0.025);
        let t = bell_target(BellKind::PhiPlus);
        for i in 0..4 {
            for j in 0..4 {
                truth[(i, j)] += Complex64::new(0.9, 0.0) * t[i] * t[j].conj();
            }
        }
        assert!(frobenius_distance(&rho, &truth) < 1e-12);
        // The reduced estimator agrees on the same data.
        let f_red = bell_fidelity_reduced(BellKind::PhiPlus, &data).unwrap();
        assert!((f_red - 0.925).abs() < 1e-12);
    }

    #[test]
    fn full_reconstruction_matches_the_reduced_state() {
        let engine = ideal_engine();
        let (a, b) = pair(&engine);
        for kind in BellKind::ALL {
            let prep = bell_prepare(engine.device(), a, b, kind).unwrap();
            let data: Vec<SettingData> = full_settings(2)
                .into_iter()
                .map(|axes| collect_exact(&engine, &prep, &[a, b], &axes).unwrap())
                .collect();
            let rho = reconstruct_linear(2, &data).unwrap();
            let state = engine.propagate_pure(&prep).unwrap();
            let positions = [
                engine.device().spin_index(a).unwrap(),
                engine.device().spin_index(b).unwrap(),
            ];
            let truth = reduced_density_matrix(&state, &positions);
            assert!(
                frobenius_distance(&rho, &truth) < 1e-9,
                "{}: Frobenius {}",
                kind.label(),
                frobenius_distance(&rho, &truth)
            );
            let f = fidelity_with_pure(&rho, &bell_target(kind));
            assert!((f - 1.0).abs() < 1e-9, "{}: fidelity {f}", kind.label());
            let f_red = bell_fidelity_reduced(kind, &data).unwrap();
            assert!((f_red - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_reconstruction_reaches_high_fidelity() {
        let cfg = reference_config();
        let engine = Engine::from_config(&cfg, PulseMode::Ideal, ReadoutMode::Ideal);
        let (a, b) = pair(&engine);
        let prep = bell_prepare(engine.device(), a, b, BellKind::PhiPlus).unwrap();
        let mut process = NoiseProcess::disabled(engine.device(), &cfg.noise).unwrap();
        let data: Vec<SettingData> = full_settings(2)
            .into_iter()
            .enumerate()
            .map(|(k, axes)| {
                collect_sampled(&engine, &prep, &[a, b], &axes, 30_000, 90 + k as u64, &mut process)
                    .unwrap()
            })
            .collect();
        let rho = project_to_physical(&reconstruct_linear(2, &data).unwrap()).unwrap();
        let f = fidelity_with_pure(&rho, &bell_target(BellKind::PhiPlus));
        assert!(f >= 0.995, "sampled fidelity {f}");
    }

    #[test]
    fn equatorial_prelude_measures_the_rotated_axis() {
        let engine = ideal_engine();
        let q = engine.device().spin_by_label("n4").unwrap();
        // Prepare (|↓⟩ + e^{iα}|↑⟩)/√2 on one nucleus.
        let alpha = 0.73;
        let mut prep = Circuit::new("phase probe");
        prep.push(nuclear_rot(q, FRAC_PI_2, FRAC_PI_2));
        prep.push(GateOp::VirtualZ {
            target: q,
            angle_rad: alpha,
            condition: Condition::free(),
        });
        for phi in [0.0, 0.4, FRAC_PI_2, 2.2] {
            let data =
                collect_exact(&engine, &prep, &[q], &[MeasureAxis::Equatorial(phi)]).unwrap();
            let want = (alpha - phi).cos();
            assert!(
                (data.expectation(1) - want).abs() < 1e-9,
                "φ={phi}: got {} want {want}",
                data.expectation(1)
            );
        }
        // Cardinal Y matches Equatorial(π/2) despite the different pulse form.
        let via_y = collect_exact(&engine, &prep, &[q], &[MeasureAxis::Y]).unwrap();
        assert!((via_y.expectation(1) - (alpha - FRAC_PI_2).cos()).abs() < 1e-9);
    }

    #[test]
    fn reduced_chain_estimator_equals_full_tomography() {
        let engine = ideal_engine();
        let qubits = ghz_qubits(engine.device(), 3).unwrap();
        // Distort the preparation so the state is an imperfect chain state
        // with a complex extremal coherence; the two estimators must still
        // agree exactly on exact data.
        let mut prep = ghz_prepare(engine.device(), 3).unwrap();
        prep.push(nuclear_rot(qubits[1], 0.31, 0.9));
        prep.push(GateOp::VirtualZ {
            target: qubits[2],
            angle_rad: 0.22,
            condition: Condition::free(),
        });
        let full: Vec<SettingData> = full_settings(3)
            .into_iter()
            .map(|axes| collect_exact(&engine, &prep, &qubits, &axes).unwrap())
            .collect();
        let rho = reconstruct_linear(3, &full).unwrap();
        let f_full = fidelity_with_pure(&rho, &ghz_target(3));
        let reduced: Vec<SettingData> = ghz_settings(3)
            .into_iter()
            .map(|axes| collect_exact(&engine, &prep, &qubits, &axes).unwrap())
            .collect();
        let (f_red, sigma) = ghz_fidelity_reduced(&reduced).unwrap();
        assert!(f_full < 0.999, "distortion should bite: {f_full}");
        assert!(
            (f_full - f_red).abs() < 1e-9,
            "full {f_full} vs reduced {f_red}"
        );
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn projection_clamps_negative_eigenvalues() {
        // A slightly unphysical Hermitian estimate.
        let mut m = DMatrix::<Complex64>::zeros(4, 4);
        m[(0, 0)] = Complex64::new(0.7, 0.0);
        m[(3, 3)] = Complex64::new(0.38, 0.0);
        m[(1, 1)] = Complex64::new(-0.08, 0.0);
        m[(0, 3)] = Complex64::new(0.45, 0.1);
        m[(3, 0)] = Complex64::new(0.45, -0.1);
        let p = project_to_physical(&m).unwrap();
        let eig = p.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
        let trace: Complex64 = (0..4).map(|i| p[(i, i)]).sum();
        assert!((trace.re - 1.0).abs() < 1e-12 && trace.im.abs() < 1e-14);
    }

    #[test]
    fn chain_state_reduced_fidelity_is_unity_for_ideal_preparation() {
        let engine = ideal_engine();
        for n in [2usize, 4, 6] {
            let qubits = ghz_qubits(engine.device(), n).unwrap();
            let prep = ghz_prepare(engine.device(), n).unwrap();
            let data: Vec<SettingData> = ghz_settings(n)
                .into_iter()
                .map(|axes| collect_exact(&engine, &prep, &qubits, &axes).unwrap())
                .collect();
            let (f, _) = ghz_fidelity_reduced(&data).unwrap();
            assert!((f - 1.0).abs() < 1e-9, "N={n}: fidelity {f}");
        }
    }

    #[test]
    fn rejects_malformed_setting_collections() {
        let engine = ideal_engine();
        let (a, b) = pair(&engine);
        let prep = bell_prepare(engine.device(), a, b, BellKind::PhiPlus).unwrap();
        // Wrong axis count.
        assert!(collect_exact(&engine, &prep, &[a, b], &[MeasureAxis::Z]).is_err());
        // Electron targets are not readable this way.
        let e = SpinId::electron(0);
        assert!(measurement_prelude(e, MeasureAxis::X).is_err());
        // Missing parity settings.
        let only_pops = vec![SettingData {
            axes: vec![MeasureAxis::Z; 3],
            probs: vec![0.125; 8],
            shots: 0,
        }];
        assert!(ghz_fidelity_reduced(&only_pops).is_err());
    }
}
