//! Run configuration: device model, noise parameters, pulse-scheduling
//! policies, the NMR drive table, and calibration policy — everything the
//! simulator reads from `device_11q.json`.
//!
//! The shipped reference file is embedded at compile time so the library and
//! the on-disk artifact cannot drift apart; `reference_config()` is the single
//! source of the default device.

use std::path::Path;
use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{DeviceModel, SpinRole};

/// One discrete two-state fluctuator acting on a register's electron lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TlsConfig {
    /// Register index the defect couples to (0-based).
    pub register: usize,
    /// Frequency offset contributed in the excited state, Hz.
    pub amplitude_hz: f64,
    /// Mean dwell time in each state, seconds (symmetric telegraph process).
    pub mean_dwell_s: f64,
}

/// Rare, simultaneous frequency jumps shared by a group of nuclei.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelatedJumpConfig {
    /// Nucleus labels that jump together.
    pub members: Vec<String>,
    /// Jump magnitude, Hz (sign drawn ± per event).
    pub magnitude_hz: f64,
    /// Mean time between jump events, seconds.
    pub mean_interval_s: f64,
}

/// Electron single-shot readout and initialization error model, plus the
/// per-cycle nuclear disturbance rates used by repetitive readout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutConfig {
    /// P(read "up" | electron up).
    pub p_read_up_given_up: f64,
    /// P(read "down" | electron down).
    pub p_read_down_given_down: f64,
    /// Probability an electron reload leaves the electron up instead of down.
    pub electron_init_error: f64,
    /// Per-readout-cycle probability that the probed nucleus flips ⇑→⇓.
    pub nuclear_flip_up_to_down: f64,
    /// Per-readout-cycle probability that the probed nucleus flips ⇓→⇑.
    pub nuclear_flip_down_to_up: f64,
    /// Wall-clock dead time consumed by one electron measurement, seconds.
    pub dead_time_s: f64,
}

impl ReadoutConfig {
    fn validate(&self) -> Result<()> {
        let probs = [
            ("noise.readout.p_read_up_given_up", self.p_read_up_given_up),
            (
                "noise.readout.p_read_down_given_down",
                self.p_read_down_given_down,
            ),
            ("noise.readout.electron_init_error", self.electron_init_error),
            (
                "noise.readout.nuclear_flip_up_to_down",
                self.nuclear_flip_up_to_down,
            ),
            (
                "noise.readout.nuclear_flip_down_to_up",
                self.nuclear_flip_down_to_up,
            ),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(SimError::Domain(format!(
                    "{name}: probability {p} outside [0, 1]"
                )));
            }
        }
        if !(self.dead_time_s.is_finite() && self.dead_time_s >= 0.0) {
            return Err(SimError::Domain(
                "noise.readout.dead_time_s must be ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Filler tones used to hold the absorbed microwave power constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetConfig {
    /// Off-resonant NMR filler frequency, Hz.
    pub filler_nmr_frequency_hz: f64,
    /// NMR filler amplitude at the source, volts.
    pub filler_nmr_amplitude_v: f64,
    /// Off-resonant ESR filler frequency, Hz.
    pub filler_esr_frequency_hz: f64,
    /// ESR filler amplitude at the source, volts.
    pub filler_esr_amplitude_v: f64,
}

/// Frequency pulling of spectator lines by strong off-resonant drive.
///
/// The NMR-on-NMR channel is quadratic in the victim-independent power proxy
/// with a per-nucleus coefficient; the remaining channels are tabulated
/// (amplitude → shift) and linearly interpolated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MicrowaveLoadConfig {
    /// Per-nucleus coefficient c so that shift = c·amplitude², Hz/V².
    pub nmr_on_nmr_hz_per_v2: IndexMap<String, f64>,
    /// ESR drive pulling NMR lines: (amplitude V, shift Hz) samples.
    pub esr_on_nmr_curve_v_hz: Vec<(f64, f64)>,
    /// NMR drive pulling ESR lines: (amplitude V, shift Hz) samples.
    pub nmr_on_esr_curve_v_hz: Vec<(f64, f64)>,
    /// ESR drive pulling other ESR lines: (amplitude V, shift Hz) samples.
    pub esr_on_esr_curve_v_hz: Vec<(f64, f64)>,
    /// Constant-power filler configuration.
    pub budget: BudgetConfig,
}

impl MicrowaveLoadConfig {
    fn validate(&self) -> Result<()> {
        for (name, curve) in [
            ("noise.microwave_load.esr_on_nmr_curve_v_hz", &self.esr_on_nmr_curve_v_hz),
            ("noise.microwave_load.nmr_on_esr_curve_v_hz", &self.nmr_on_esr_curve_v_hz),
            ("noise.microwave_load.esr_on_esr_curve_v_hz", &self.esr_on_esr_curve_v_hz),
        ] {
            if curve.is_empty() {
                return Err(SimError::Shape(format!("{name}: curve must not be empty")));
            }
            if curve[0] != (0.0, 0.0) {
                return Err(SimError::Domain(format!(
                    "{name}: first sample must be (0, 0) — no drive, no shift"
                )));
            }
            for w in curve.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(SimError::Domain(format!(
                        "{name}: amplitudes must be strictly increasing"
                    )));
                }
            }
        }
        for (name, v) in [
            (
                "noise.microwave_load.budget.filler_nmr_frequency_hz",
                self.budget.filler_nmr_frequency_hz,
            ),
            (
                "noise.microwave_load.budget.filler_nmr_amplitude_v",
                self.budget.filler_nmr_amplitude_v,
            ),
            (
                "noise.microwave_load.budget.filler_esr_frequency_hz",
                self.budget.filler_esr_frequency_hz,
            ),
            (
                "noise.microwave_load.budget.filler_esr_amplitude_v",
                self.budget.filler_esr_amplitude_v,
            ),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Domain(format!("{name}: must be positive")));
            }
        }
        Ok(())
    }
}

/// All stochastic-imperfection parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Electron Ramsey coherence time, seconds.
    pub electron_t2_star_s: f64,
    /// Electron echo-refocused coherence time, seconds (reference datum; the
    /// quasi-static model refocuses exactly).
    pub electron_t2_hahn_s: f64,
    /// Per-nucleus Ramsey coherence times, seconds, keyed by label.
    pub nuclear_t2_star_s: IndexMap<String, f64>,
    /// Echo extension factor applied uniformly to nuclear T₂* for reporting.
    pub nuclear_t2_hahn_factor: f64,
    /// Per-register collective ESR frequency spread (white, quasi-static), Hz.
    pub collective_esr_sigma_hz: Vec<f64>,
    /// Discrete fluctuators acting collectively per register.
    pub tls: Vec<TlsConfig>,
    /// Slow deterministic NMR drift rates, Hz/s, keyed by nucleus label.
    pub nmr_drift_hz_per_s: IndexMap<String, f64>,
    /// Correlated nuclear jump groups.
    pub correlated_jumps: Vec<CorrelatedJumpConfig>,
    /// Quasi-static jitter of the exchange coupling, Hz (0 = J pinned).
    pub exchange_jitter_hz: f64,
    /// Readout/initialization error model.
    pub readout: ReadoutConfig,
    /// Off-resonant line-pulling model.
    pub microwave_load: MicrowaveLoadConfig,
    /// Deterministic controlled-phase error injected on every conditional 2π
    /// electron rotation, radians (diagnostic knob; 0 = ideal).
    pub crot_phase_error_rad: f64,
}

/// Pulse-scheduling policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseConfig {
    /// A drive touches every line within `bandwidth_factor · f_rabi` of its
    /// carrier in realistic mode.
    pub bandwidth_factor: f64,
    /// Electron rotations pick the smallest Rabi node n with
    /// 2πn/θ ≥ `esr_min_node_factor`, placing the exchange-split twin line on
    /// a zero of the off-resonant flip profile (4 → the √15 rule for π/2).
    pub esr_min_node_factor: f64,
    /// Fallback electron Rabi frequency when no node rule applies, Hz.
    pub esr_default_rabi_hz: f64,
}

impl PulseConfig {
    fn validate(&self) -> Result<()> {
        if !(self.bandwidth_factor.is_finite() && self.bandwidth_factor > 0.0) {
            return Err(SimError::Domain(
                "pulse.bandwidth_factor must be positive".into(),
            ));
        }
        if !(self.esr_min_node_factor.is_finite() && self.esr_min_node_factor > 1.0) {
            return Err(SimError::Domain(
                "pulse.esr_min_node_factor must exceed 1".into(),
            ));
        }
        if !(self.esr_default_rabi_hz.is_finite() && self.esr_default_rabi_hz > 0.0) {
            return Err(SimError::Domain(
                "pulse.esr_default_rabi_hz must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the constant-absorption NMR drive table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriveRow {
    /// Nucleus label this row drives.
    pub qubit: String,
    /// Electron-down NMR transition frequency, Hz.
    pub f_nmr_hz: f64,
    /// Rabi frequency at the tabulated amplitude, Hz.
    pub f_rabi_hz: f64,
    /// Source amplitude, volts.
    pub amplitude_v: f64,
}

/// Constant-absorption NMR drive schedule: tabulated per-nucleus rows plus the
/// off-resonant idle filler entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriveTableConfig {
    /// Absorbed-power design rule: every drive keeps f_rabi/f_nmr at this
    /// value.
    pub ratio_rabi_to_nmr: f64,
    /// Per-nucleus rows, sorted by f_nmr.
    pub rows: Vec<DriveRow>,
    /// Idle filler carrier frequency, Hz.
    pub filler_f_nmr_hz: f64,
    /// Idle filler amplitude, volts.
    pub filler_amplitude_v: f64,
}

impl DriveTableConfig {
    fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(SimError::Shape("nmr_drive_table.rows must not be empty".into()));
        }
        for w in self.rows.windows(2) {
            if w[1].f_nmr_hz <= w[0].f_nmr_hz {
                return Err(SimError::Domain(
                    "nmr_drive_table.rows must be sorted by strictly increasing f_nmr_hz".into(),
                ));
            }
        }
        for row in &self.rows {
            if !(row.f_nmr_hz > 0.0 && row.f_rabi_hz > 0.0 && row.amplitude_v > 0.0) {
                return Err(SimError::Domain(format!(
                    "nmr_drive_table.rows[{}]: frequencies and amplitude must be positive",
                    row.qubit
                )));
            }
        }
        if !(self.ratio_rabi_to_nmr > 0.0) {
            return Err(SimError::Domain(
                "nmr_drive_table.ratio_rabi_to_nmr must be positive".into(),
            ));
        }
        if !(self.filler_f_nmr_hz > 0.0 && self.filler_amplitude_v > 0.0) {
            return Err(SimError::Domain(
                "nmr_drive_table filler frequency/amplitude must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Row for a nucleus label, if tabulated.
    pub fn row(&self, qubit: &str) -> Option<&DriveRow> {
        self.rows.iter().find(|r| r.qubit == qubit)
    }
}

/// Repetitive-readout policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QndConfig {
    /// Readout cycles per nuclear measurement when no optimum is computed.
    pub default_cycles: usize,
    /// |ΔP| below this fraction marks the measurement as unresolved.
    pub reject_band: f64,
}

impl QndConfig {
    fn validate(&self) -> Result<()> {
        if self.default_cycles == 0 {
            return Err(SimError::Domain("qnd.default_cycles must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.reject_band) {
            return Err(SimError::Domain("qnd.reject_band must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Nuclear-register initialization policy (measure, flip if needed, verify).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstConfig {
    /// Maximum correction attempts per nucleus before declaring failure.
    pub max_attempts: usize,
    /// Readout cycles used by the verification measurement.
    pub verify_cycles: usize,
}

impl EstConfig {
    fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(SimError::Domain("est.max_attempts must be ≥ 1".into()));
        }
        if self.verify_cycles == 0 {
            return Err(SimError::Domain("est.verify_cycles must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Calibration cadence and sweep geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Recalibrate after this many experiment runs.
    pub recal_interval_runs: u32,
    /// … or after this much simulated time, whichever comes first, seconds.
    pub recal_interval_s: f64,
    /// Repeated-π amplification factor for reference tracking (odd).
    pub n_rotations: u32,
    /// Frequency sweep half-width around the expected line, Hz.
    pub scan_span_hz: f64,
    /// Sweep step, Hz.
    pub scan_step_hz: f64,
}

impl CalibrationConfig {
    fn validate(&self) -> Result<()> {
        if self.recal_interval_runs == 0 {
            return Err(SimError::Domain(
                "calibration.recal_interval_runs must be ≥ 1".into(),
            ));
        }
        if self.n_rotations == 0 || self.n_rotations % 2 == 0 {
            return Err(SimError::Domain(
                "calibration.n_rotations must be odd and ≥ 1".into(),
            ));
        }
        if !(self.scan_span_hz > 0.0 && self.scan_step_hz > 0.0) {
            return Err(SimError::Domain(
                "calibration scan span/step must be positive".into(),
            ));
        }
        if self.scan_step_hz > self.scan_span_hz {
            return Err(SimError::Domain(
                "calibration.scan_step_hz must not exceed scan_span_hz".into(),
            ));
        }
        if !(self.recal_interval_s > 0.0) {
            return Err(SimError::Domain(
                "calibration.recal_interval_s must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Gate geometry translating effective Stark lever arms (Hz/V) into physical
/// ones (Hz·m/V).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StarkConfig {
    /// Gate-to-donor distance, meters.
    pub d_gate_m: f64,
    /// Electric-field conversion efficiency of the gate stack.
    pub alpha: f64,
}

impl StarkConfig {
    fn validate(&self) -> Result<()> {
        if !(self.d_gate_m > 0.0 && self.alpha > 0.0) {
            return Err(SimError::Domain(
                "stark.d_gate_m and stark.alpha must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Complete validated run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub schema_version: u32,
    #[serde(flatten)]
    pub device: DeviceModel,
    pub noise: NoiseConfig,
    pub pulse: PulseConfig,
    pub nmr_drive_table: DriveTableConfig,
    pub qnd: QndConfig,
    pub est: EstConfig,
    pub calibration: CalibrationConfig,
    pub stark: StarkConfig,
}

impl SimConfig {
    /// Parse and fully validate a configuration from JSON text.
    pub fn from_json(text: &str, origin: &str) -> Result<SimConfig> {
        let cfg: SimConfig = serde_json::from_str(text)
            .map_err(|e| SimError::config(origin, format!("parse error: {e}")))?;
        cfg.validate()
            .map_err(|e| SimError::config(origin, e.to_string()))?;
        Ok(cfg)
    }

    /// Load a configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<SimConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config(path.display().to_string(), e.to_string()))?;
        SimConfig::from_json(&text, &path.display().to_string())
    }

    /// Canonical serialization: stable key order, two-space indentation,
    /// shortest round-tripping float representation.
    pub fn canonical_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Write the canonical serialization to a file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.canonical_json()?)?;
        Ok(())
    }

    /// Cross-section structural and domain validation. Error messages name the
    /// offending configuration field.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(SimError::Domain(format!(
                "schema_version: expected {CONFIG_SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.device.validate()?;
        self.pulse.validate()?;
        self.nmr_drive_table.validate()?;
        self.qnd.validate()?;
        self.est.validate()?;
        self.calibration.validate()?;
        self.stark.validate()?;
        self.noise.readout.validate()?;
        self.noise.microwave_load.validate()?;

        let n = &self.noise;
        if !(n.electron_t2_star_s > 0.0 && n.electron_t2_hahn_s > 0.0) {
            return Err(SimError::Domain(
                "noise.electron_t2_star_s/electron_t2_hahn_s must be positive".into(),
            ));
        }
        if !(n.nuclear_t2_hahn_factor >= 1.0) {
            return Err(SimError::Domain(
                "noise.nuclear_t2_hahn_factor must be ≥ 1".into(),
            ));
        }
        if n.collective_esr_sigma_hz.len() != self.device.register_count() {
            return Err(SimError::Shape(format!(
                "noise.collective_esr_sigma_hz: expected one entry per register ({}), got {}",
                self.device.register_count(),
                n.collective_esr_sigma_hz.len()
            )));
        }
        if n.collective_esr_sigma_hz.iter().any(|s| *s < 0.0) {
            return Err(SimError::Domain(
                "noise.collective_esr_sigma_hz entries must be ≥ 0".into(),
            ));
        }
        for (k, tls) in n.tls.iter().enumerate() {
            if tls.register >= self.device.register_count() {
                return Err(SimError::Shape(format!(
                    "noise.tls[{k}].register: index {} out of range",
                    tls.register
                )));
            }
            if !(tls.amplitude_hz >= 0.0 && tls.mean_dwell_s > 0.0) {
                return Err(SimError::Domain(format!(
                    "noise.tls[{k}]: amplitude must be ≥ 0 and dwell positive"
                )));
            }
        }
        // Every nucleus needs a coherence time and a drive-table row; label
        // maps may only reference existing nuclei.
        for reg in &self.device.registers {
            for label in &reg.nucleus_labels {
                if !n.nuclear_t2_star_s.contains_key(label) {
                    return Err(SimError::Shape(format!(
                        "noise.nuclear_t2_star_s: missing entry for nucleus {label}"
                    )));
                }
                if self.nmr_drive_table.row(label).is_none() {
                    return Err(SimError::Shape(format!(
                        "nmr_drive_table.rows: missing row for nucleus {label}"
                    )));
                }
                if !n.microwave_load.nmr_on_nmr_hz_per_v2.contains_key(label) {
                    return Err(SimError::Shape(format!(
                        "noise.microwave_load.nmr_on_nmr_hz_per_v2: missing entry for nucleus {label}"
                    )));
                }
            }
        }
        let known_nucleus = |label: &str| -> bool {
            matches!(
                self.device.spin_by_label(label),
                Ok(id) if matches!(id.role, SpinRole::Nucleus(_))
            )
        };
        for (name, keys) in [
            (
                "noise.nuclear_t2_star_s",
                n.nuclear_t2_star_s.keys().collect::<Vec<_>>(),
            ),
            (
                "noise.nmr_drift_hz_per_s",
                n.nmr_drift_hz_per_s.keys().collect::<Vec<_>>(),
            ),
            (
                "noise.microwave_load.nmr_on_nmr_hz_per_v2",
                n.microwave_load.nmr_on_nmr_hz_per_v2.keys().collect::<Vec<_>>(),
            ),
        ] {
            for k in keys {
                if !known_nucleus(k) {
                    return Err(SimError::Shape(format!(
                        "{name}: unknown nucleus label {k}"
                    )));
                }
            }
        }
        for (t, v) in &n.nuclear_t2_star_s {
            if !(*v > 0.0) {
                return Err(SimError::Domain(format!(
                    "noise.nuclear_t2_star_s[{t}] must be positive"
                )));
            }
        }
        for (g, group) in n.correlated_jumps.iter().enumerate() {
            if group.members.is_empty() {
                return Err(SimError::Shape(format!(
                    "noise.correlated_jumps[{g}].members must not be empty"
                )));
            }
            let mut reg_of_first = None;
            for m in &group.members {
                let id = self.device.spin_by_label(m).map_err(|_| {
                    SimError::Shape(format!(
                        "noise.correlated_jumps[{g}].members: unknown nucleus label {m}"
                    ))
                })?;
                if !matches!(id.role, SpinRole::Nucleus(_)) {
                    return Err(SimError::Shape(format!(
                        "noise.correlated_jumps[{g}].members: {m} is not a nucleus"
                    )));
                }
                match reg_of_first {
                    None => reg_of_first = Some(id.register),
                    Some(r) if r != id.register => {
                        return Err(SimError::Shape(format!(
                            "noise.correlated_jumps[{g}].members must belong to one register"
                        )))
                    }
                    _ => {}
                }
            }
            if !(group.mean_interval_s > 0.0) {
                return Err(SimError::Domain(format!(
                    "noise.correlated_jumps[{g}].mean_interval_s must be positive"
                )));
            }
        }
        if n.exchange_jitter_hz < 0.0 {
            return Err(SimError::Domain(
                "noise.exchange_jitter_hz must be ≥ 0".into(),
            ));
        }
        for dr in &n.nmr_drift_hz_per_s {
            if !dr.1.is_finite() {
                return Err(SimError::Domain(format!(
                    "noise.nmr_drift_hz_per_s[{}] must be finite",
                    dr.0
                )));
            }
        }
        Ok(())
    }

    /// Ramsey coherence time of a flat spin index, seconds.
    pub fn t2_star_s(&self, spin: crate::model::SpinId) -> Result<f64> {
        match spin.role {
            SpinRole::Electron => Ok(self.noise.electron_t2_star_s),
            SpinRole::Nucleus(i) => {
                let label = &self.device.registers[spin.register].nucleus_labels[i];
                self.noise.nuclear_t2_star_s.get(label).copied().ok_or_else(|| {
                    SimError::Shape(format!("no coherence entry for nucleus {label}"))
                })
            }
        }
    }
}

/// Current configuration schema version.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

static REFERENCE_TEXT: &str = include_str!("../../../device_11q.json");
static REFERENCE: OnceLock<SimConfig> = OnceLock::new();

/// The shipped 11-spin reference configuration (embedded copy of
/// `device_11q.json`).
pub fn reference_config() -> &'static SimConfig {
    REFERENCE.get_or_init(|| {
        SimConfig::from_json(REFERENCE_TEXT, "device_11q.json (embedded)")
            .expect("embedded reference configuration must be valid")
    })
}

/// The shipped two-register device model.
pub fn reference_device() -> DeviceModel {
    reference_config().device.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_is_valid_and_complete() {
        let cfg = reference_config();
        assert_eq!(cfg.schema_version, CONFIG_SCHEMA_VERSION);
        assert_eq!(cfg.device.register_count(), 2);
        assert_eq!(cfg.device.spin_count(), 11);
        assert_eq!(cfg.nmr_drive_table.rows.len(), 9);
        // One coherence entry and one load coefficient per nucleus enforced by
        // validate(); spot-check a label lookup.
        assert!(cfg.noise.nuclear_t2_star_s.contains_key("n9"));
    }

    #[test]
    fn drive_table_ratio_rule_holds_for_every_row() {
        let cfg = reference_config();
        for row in &cfg.nmr_drive_table.rows {
            let ratio = row.f_rabi_hz / row.f_nmr_hz;
            assert!(
                (ratio - cfg.nmr_drive_table.ratio_rabi_to_nmr).abs() < 1e-6,
                "row {}: ratio {ratio} drifts from the design value",
                row.qubit
            );
        }
    }

    #[test]
    fn drive_table_rows_match_model_frequencies() {
        // The tabulated carrier of each row must equal the model's
        // electron-down NMR line to sub-kHz rounding.
        let cfg = reference_config();
        for row in &cfg.nmr_drive_table.rows {
            let id = cfg.device.spin_by_label(&row.qubit).unwrap();
            let i = match id.role {
                SpinRole::Nucleus(i) => i,
                _ => panic!("drive row targets a non-nucleus"),
            };
            let f_model = cfg
                .device
                .nmr_frequency(id.register, i, crate::model::SpinState::Down);
            assert!(
                (f_model - row.f_nmr_hz).abs() < 500.0,
                "row {}: model {f_model} vs table {}",
                row.qubit,
                row.f_nmr_hz
            );
        }
    }

    #[test]
    fn negative_field_is_rejected_naming_the_field() {
        let cfg = reference_config();
        let mut text = cfg.canonical_json().unwrap();
        text = text.replace("\"b_field_T\": 1.39", "\"b_field_T\": -1.39");
        let err = SimConfig::from_json(&text, "test").unwrap_err();
        assert!(err.to_string().contains("b_field_T"), "got: {err}");
    }

    #[test]
    fn load_serialize_load_is_canonical() {
        let cfg = reference_config();
        let first = cfg.canonical_json().unwrap();
        let reparsed = SimConfig::from_json(&first, "round-trip").unwrap();
        let second = reparsed.canonical_json().unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn broken_cross_references_are_rejected() {
        let cfg = reference_config();
        // TLS register out of range.
        let mut bad = cfg.clone();
        bad.noise.tls[0].register = 7;
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("tls"), "got: {err}");
        // Unknown nucleus in the drift map.
        let mut bad = cfg.clone();
        bad.noise.nmr_drift_hz_per_s.insert("n42".into(), 1.0);
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("n42"), "got: {err}");
        // Correlated group spanning registers.
        let mut bad = cfg.clone();
        bad.noise.correlated_jumps[0].members = vec!["n1".into(), "n9".into()];
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("one register"), "got: {err}");
        // Sigma list with the wrong arity.
        let mut bad = cfg.clone();
        bad.noise.collective_esr_sigma_hz = vec![900.0];
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("collective_esr_sigma_hz"), "got: {err}");
    }

    #[test]
    fn missing_drive_row_is_rejected() {
        let cfg = reference_config();
        let mut bad = cfg.clone();
        bad.nmr_drive_table.rows.retain(|r| r.qubit != "n6");
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("n6"), "got: {err}");
    }
}
