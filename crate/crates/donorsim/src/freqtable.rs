//! Calibration table of addressable resonance lines.
//!
//! Electron lines are stored as *offsets* from one reference line per register
//! (all nuclei down, other electron down). A collective recalibration therefore
//! only rewrites the two reference frequencies and rigidly translates the whole
//! comb — two measurements refresh every line of the device. Nuclear lines are
//! stored absolutely per (nucleus, electron branch).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{DeviceModel, SpinState};

/// Calibration state: references, per-line offsets, nuclear lines, exchange.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrequencyTable {
    /// Schema tag for persisted tables.
    pub schema_version: u32,
    /// Per register: frequency of the reference line (all nuclei down, other
    /// electron down) in Hz.
    pub reference_hz: Vec<f64>,
    /// Per register: offsets from the reference, indexed `[branch][pattern]`
    /// where branch 0/1 = other electron down/up and bit i of `pattern` =
    /// nucleus i up.
    pub esr_offset_hz: Vec<[Vec<f64>; 2]>,
    /// Per register, per nucleus: absolute line frequency `[branch]` for the
    /// register electron down/up.
    pub nmr_hz: Vec<Vec<[f64; 2]>>,
    /// Last tracked exchange splitting in Hz.
    pub exchange_hz: f64,
    /// Simulated wall-clock time of the last (re)calibration, in seconds.
    pub calibrated_at_s: f64,
}

impl FrequencyTable {
    /// Build a perfectly calibrated table from the model's current truth.
    pub fn from_model(model: &DeviceModel) -> Self {
        let mut reference_hz = Vec::new();
        let mut esr_offset_hz = Vec::new();
        let mut nmr_hz = Vec::new();
        for (r, reg) in model.registers.iter().enumerate() {
            let k = reg.nucleus_count();
            let f_ref = model.esr_frequency(r, 0, SpinState::Down);
            reference_hz.push(f_ref);
            let mut branches: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for (b, other) in [SpinState::Down, SpinState::Up].iter().enumerate() {
                for pattern in 0..(1usize << k) {
                    branches[b].push(model.esr_frequency(r, pattern, *other) - f_ref);
                }
            }
            esr_offset_hz.push(branches);
            let mut lines = Vec::new();
            for i in 0..k {
                lines.push([
                    model.nmr_frequency(r, i, SpinState::Down),
                    model.nmr_frequency(r, i, SpinState::Up),
                ]);
            }
            nmr_hz.push(lines);
        }
        FrequencyTable {
            schema_version: 1,
            reference_hz,
            esr_offset_hz,
            nmr_hz,
            exchange_hz: model.exchange_hz(),
            calibrated_at_s: 0.0,
        }
    }

    /// Drive frequency for an electron line (reference + stored offset).
    pub fn esr_drive_hz(&self, register: usize, pattern: usize, other: SpinState) -> f64 {
        self.reference_hz[register] + self.esr_offset_hz[register][other.bit()][pattern]
    }

    /// Drive frequency for a nuclear line.
    pub fn nmr_drive_hz(&self, register: usize, nucleus: usize, electron: SpinState) -> f64 {
        self.nmr_hz[register][nucleus][electron.bit()]
    }

    /// Total number of electron lines, both exchange branches.
    pub fn esr_line_count(&self) -> usize {
        self.esr_offset_hz
            .iter()
            .map(|b| b[0].len() + b[1].len())
            .sum()
    }

    /// Electron lines counting one exchange branch only.
    pub fn esr_line_count_single_branch(&self) -> usize {
        self.esr_offset_hz.iter().map(|b| b[0].len()).sum()
    }

    /// Total number of conditional nuclear lines (two per nucleus).
    pub fn nmr_line_count(&self) -> usize {
        self.nmr_hz.iter().map(|n| 2 * n.len()).sum()
    }

    /// Collective recalibration: replace the per-register reference frequencies
    /// (one measurement each) and translate every stored line rigidly. Offsets
    /// are untouched by construction.
    pub fn collective_recalibrate(&mut self, measured_reference_hz: &[f64], at_s: f64) -> Result<()> {
        if measured_reference_hz.len() != self.reference_hz.len() {
            return Err(SimError::Shape(format!(
                "expected {} reference measurements, got {}",
                self.reference_hz.len(),
                measured_reference_hz.len()
            )));
        }
        if measured_reference_hz.iter().any(|f| !f.is_finite()) {
            return Err(SimError::Domain(
                "reference measurements must be finite".into(),
            ));
        }
        self.reference_hz = measured_reference_hz.to_vec();
        self.calibrated_at_s = at_s;
        Ok(())
    }

    /// Record a newly tracked exchange splitting. The other-electron-up branch
    /// offsets move rigidly by the change in J.
    pub fn set_exchange(&mut self, exchange_hz: f64) {
        let delta = exchange_hz - self.exchange_hz;
        for branches in &mut self.esr_offset_hz {
            for offset in &mut branches[1] {
                *offset += delta;
            }
        }
        self.exchange_hz = exchange_hz;
    }

    /// Shift one nuclear line (tracked individually, not collectively).
    pub fn set_nmr_line(
        &mut self,
        register: usize,
        nucleus: usize,
        electron: SpinState,
        freq_hz: f64,
    ) {
        self.nmr_hz[register][nucleus][electron.bit()] = freq_hz;
    }

    /// Persist the table as pretty JSON.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Load a previously persisted table.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let table: FrequencyTable = serde_json::from_str(&text)?;
        if table.reference_hz.len() != table.esr_offset_hz.len()
            || table.reference_hz.len() != table.nmr_hz.len()
        {
            return Err(SimError::Shape(
                "frequency table register sections disagree in length".into(),
            ));
        }
        Ok(table)
    }
}
