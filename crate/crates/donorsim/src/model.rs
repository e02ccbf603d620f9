//! Static spin model of the two-register donor device.
//!
//! A device holds one or two registers; each register is one electron
//! hyperfine-coupled to a handful of ³¹P nuclei. The two electrons are
//! exchange-coupled with strength `J(ε)` controlled by a gate detuning ε.
//!
//! All resonance frequencies follow the secular model:
//!
//! * electron line: `f = γ_e·B + Σ_i A_i·m_i + s·J/2`, where `m_i = ∓1/2` for
//!   nucleus i down/up and `s = ±1` for the other electron up/down;
//! * nuclear line: `|γ_n·B ∓ A_i/2|` for the register electron down/up.
//!
//! Frequencies are in Hz, fields in T, detunings in V throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::freqtable::FrequencyTable;

/// Orientation of a spin-1/2 along the quantization axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinState {
    Down,
    Up,
}

impl SpinState {
    /// Magnetic quantum number m = ∓1/2.
    pub fn m(self) -> f64 {
        match self {
            SpinState::Down => -0.5,
            SpinState::Up => 0.5,
        }
    }

    /// 0 for down, 1 for up (used for basis-index bit packing).
    pub fn bit(self) -> usize {
        match self {
            SpinState::Down => 0,
            SpinState::Up => 1,
        }
    }

    pub fn from_bit(bit: usize) -> Self {
        if bit & 1 == 0 {
            SpinState::Down
        } else {
            SpinState::Up
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            SpinState::Down => SpinState::Up,
            SpinState::Up => SpinState::Down,
        }
    }
}

/// Role of a spin within its register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinRole {
    Electron,
    Nucleus(usize),
}

/// Fully qualified spin address: register index plus role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinId {
    pub register: usize,
    pub role: SpinRole,
}

impl SpinId {
    pub fn electron(register: usize) -> Self {
        SpinId {
            register,
            role: SpinRole::Electron,
        }
    }

    pub fn nucleus(register: usize, index: usize) -> Self {
        SpinId {
            register,
            role: SpinRole::Nucleus(index),
        }
    }
}

/// One electron plus its hyperfine-coupled nuclei.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterModel {
    /// Human-readable register name (e.g. "4P").
    pub label: String,
    /// Per-nucleus labels, same order as `hyperfine_hz`.
    pub nucleus_labels: Vec<String>,
    /// Hyperfine couplings A_i in Hz at the reference detuning.
    #[serde(rename = "hyperfine_Hz")]
    pub hyperfine_hz: Vec<f64>,
    /// Effective Stark lever arms η_eff,i in Hz per volt of gate detuning.
    #[serde(rename = "stark_eff_Hz_per_V")]
    pub stark_eff_hz_per_v: Vec<f64>,
}

impl RegisterModel {
    pub fn nucleus_count(&self) -> usize {
        self.hyperfine_hz.len()
    }

    fn validate(&self, reg_index: usize) -> Result<()> {
        let n = self.hyperfine_hz.len();
        if n == 0 {
            return Err(SimError::Shape(format!(
                "register {reg_index} ({}) has no nuclei",
                self.label
            )));
        }
        if self.nucleus_labels.len() != n || self.stark_eff_hz_per_v.len() != n {
            return Err(SimError::Shape(format!(
                "register {reg_index} ({}): nucleus_labels/hyperfine_hz/stark_eff_hz_per_v lengths disagree ({}/{}/{})",
                self.label,
                self.nucleus_labels.len(),
                n,
                self.stark_eff_hz_per_v.len()
            )));
        }
        if self.hyperfine_hz.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(SimError::Domain(format!(
                "register {reg_index} ({}): hyperfine couplings must be finite and positive",
                self.label
            )));
        }
        Ok(())
    }
}

/// Static device model: registers, exchange table, field, and the current
/// operating detuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceModel {
    /// Static magnetic field in tesla.
    #[serde(rename = "b_field_T")]
    pub b_field_t: f64,
    /// Electron gyromagnetic ratio in Hz/T.
    #[serde(rename = "gamma_e_Hz_per_T")]
    pub gamma_e_hz_per_t: f64,
    /// Nuclear (³¹P) gyromagnetic ratio in Hz/T.
    #[serde(rename = "gamma_n_Hz_per_T")]
    pub gamma_n_hz_per_t: f64,
    /// One or two registers. Exchange terms require exactly two.
    pub registers: Vec<RegisterModel>,
    /// Sampled exchange curve: (detuning ε in V, J in Hz), strictly increasing
    /// in ε with positive J. Interpolation is log-linear in J.
    pub exchange_table: Vec<(f64, f64)>,
    /// Current operating detuning in V.
    #[serde(rename = "detuning_V")]
    pub detuning_v: f64,
    /// Detuning at which `hyperfine_hz` are specified.
    #[serde(rename = "detuning_ref_V")]
    pub detuning_ref_v: f64,
}

impl DeviceModel {
    /// Validate the structural and domain invariants of the model.
    pub fn validate(&self) -> Result<()> {
        if self.registers.is_empty() || self.registers.len() > 2 {
            return Err(SimError::Shape(format!(
                "expected 1 or 2 registers, got {}",
                self.registers.len()
            )));
        }
        for (r, reg) in self.registers.iter().enumerate() {
            reg.validate(r)?;
        }
        if !(self.b_field_t.is_finite() && self.b_field_t > 0.0) {
            return Err(SimError::Domain("b_field_T must be positive".into()));
        }
        if !(self.gamma_e_hz_per_t.is_finite() && self.gamma_e_hz_per_t > 0.0) {
            return Err(SimError::Domain("gamma_e_Hz_per_T must be positive".into()));
        }
        if !(self.gamma_n_hz_per_t.is_finite() && self.gamma_n_hz_per_t > 0.0) {
            return Err(SimError::Domain("gamma_n_Hz_per_T must be positive".into()));
        }
        if self.registers.len() == 2 {
            if self.exchange_table.len() < 2 {
                return Err(SimError::Shape(
                    "exchange_table needs at least two (detuning, J) samples".into(),
                ));
            }
            for w in self.exchange_table.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(SimError::Domain(
                        "exchange_table detunings must be strictly increasing".into(),
                    ));
                }
            }
            if self.exchange_table.iter().any(|(_, j)| *j <= 0.0) {
                return Err(SimError::Domain(
                    "exchange_table J values must be positive for log-linear interpolation".into(),
                ));
            }
            // Both the operating point and the hyperfine reference must be covered.
            self.exchange_at(self.detuning_v)?;
            self.exchange_at(self.detuning_ref_v)?;
        }
        Ok(())
    }

    /// Number of registers.
    pub fn register_count(&self) -> usize {
        self.registers.len()
    }

    /// Total number of simulated spins (electrons + nuclei).
    pub fn spin_count(&self) -> usize {
        self.registers
            .iter()
            .map(|r| 1 + r.nucleus_count())
            .sum::<usize>()
    }

    /// Flat spin index in the canonical order (e₁, n₁…, e₂, n₅…).
    pub fn spin_index(&self, id: SpinId) -> Result<usize> {
        if id.register >= self.registers.len() {
            return Err(SimError::Shape(format!(
                "register index {} out of range",
                id.register
            )));
        }
        let base: usize = self.registers[..id.register]
            .iter()
            .map(|r| 1 + r.nucleus_count())
            .sum();
        match id.role {
            SpinRole::Electron => Ok(base),
            SpinRole::Nucleus(i) => {
                if i >= self.registers[id.register].nucleus_count() {
                    Err(SimError::Shape(format!(
                        "nucleus index {i} out of range for register {}",
                        id.register
                    )))
                } else {
                    Ok(base + 1 + i)
                }
            }
        }
    }

    /// Inverse of [`spin_index`]: the spin at a flat index.
    pub fn spin_at(&self, mut index: usize) -> Result<SpinId> {
        for (r, reg) in self.registers.iter().enumerate() {
            let span = 1 + reg.nucleus_count();
            if index < span {
                return Ok(if index == 0 {
                    SpinId::electron(r)
                } else {
                    SpinId::nucleus(r, index - 1)
                });
            }
            index -= span;
        }
        Err(SimError::Shape(format!("spin index out of range")))
    }

    /// Look up a spin by its configured label ("e1", "e2", or a nucleus label).
    pub fn spin_by_label(&self, label: &str) -> Result<SpinId> {
        for (r, reg) in self.registers.iter().enumerate() {
            if label.eq_ignore_ascii_case(&format!("e{}", r + 1)) {
                return Ok(SpinId::electron(r));
            }
            for (i, l) in reg.nucleus_labels.iter().enumerate() {
                if l.eq_ignore_ascii_case(label) {
                    return Ok(SpinId::nucleus(r, i));
                }
            }
        }
        Err(SimError::Shape(format!("unknown spin label `{label}`")))
    }

    /// Label of a spin (electron labels are synthesized as "e1"/"e2").
    pub fn spin_label(&self, id: SpinId) -> String {
        match id.role {
            SpinRole::Electron => format!("e{}", id.register + 1),
            SpinRole::Nucleus(i) => self.registers[id.register].nucleus_labels[i].clone(),
        }
    }

    /// The other register's index (only meaningful for two-register devices).
    pub fn other_register(&self, register: usize) -> Option<usize> {
        if self.registers.len() == 2 {
            Some(1 - register)
        } else {
            None
        }
    }

    /// Hyperfine coupling of nucleus i at the current operating detuning:
    /// `A_i(ε) = A_i(ε₀) + η_eff,i · (ε − ε₀)`.
    pub fn hyperfine_hz(&self, register: usize, nucleus: usize) -> f64 {
        let reg = &self.registers[register];
        reg.hyperfine_hz[nucleus]
            + reg.stark_eff_hz_per_v[nucleus] * (self.detuning_v - self.detuning_ref_v)
    }

    /// Exchange coupling at the current operating detuning (0 for one register).
    pub fn exchange_hz(&self) -> f64 {
        if self.registers.len() < 2 {
            return 0.0;
        }
        self.exchange_at(self.detuning_v)
            .expect("validated model has detuning inside the exchange table")
    }

    /// Log-linear interpolation of the exchange table at detuning ε.
    /// Extrapolation outside the sampled range is refused.
    pub fn exchange_at(&self, eps_v: f64) -> Result<f64> {
        let table = &self.exchange_table;
        let (lo, hi) = (table[0].0, table[table.len() - 1].0);
        if eps_v < lo || eps_v > hi {
            return Err(SimError::Domain(format!(
                "detuning {eps_v} V outside the exchange table range [{lo}, {hi}] V"
            )));
        }
        for w in table.windows(2) {
            let ((e0, j0), (e1, j1)) = (w[0], w[1]);
            if eps_v <= e1 {
                let t = (eps_v - e0) / (e1 - e0);
                return Ok((j0.ln() * (1.0 - t) + j1.ln() * t).exp());
            }
        }
        unreachable!("eps_v is within the table bounds");
    }

    /// Return a copy of the model operated at a new detuning. All hyperfine
    /// couplings shift by their Stark lever arms and J follows the exchange
    /// table; requests outside the table are refused.
    pub fn apply_detuning(&self, eps_v: f64) -> Result<DeviceModel> {
        if self.registers.len() == 2 {
            self.exchange_at(eps_v)?;
        }
        let mut next = self.clone();
        next.detuning_v = eps_v;
        Ok(next)
    }

    /// Electron resonance frequency of `register` for a given nuclear pattern
    /// (bit i of `pattern` = nucleus i up) and the state of the other electron.
    pub fn esr_frequency(
        &self,
        register: usize,
        pattern: usize,
        other_electron: SpinState,
    ) -> f64 {
        let reg = &self.registers[register];
        let mut f = self.gamma_e_hz_per_t * self.b_field_t;
        for i in 0..reg.nucleus_count() {
            let m = SpinState::from_bit(pattern >> i).m();
            f += self.hyperfine_hz(register, i) * m;
        }
        if self.registers.len() == 2 {
            let s = match other_electron {
                SpinState::Up => 1.0,
                SpinState::Down => -1.0,
            };
            f += s * self.exchange_hz() / 2.0;
        }
        f
    }

    /// Nuclear resonance frequency of nucleus i conditional on its register
    /// electron state: `|γ_n·B − A_i/2|` (electron down) or `|γ_n·B + A_i/2|`
    /// (electron up).
    pub fn nmr_frequency(&self, register: usize, nucleus: usize, electron: SpinState) -> f64 {
        let zeeman = self.gamma_n_hz_per_t * self.b_field_t;
        let half_a = self.hyperfine_hz(register, nucleus) / 2.0;
        match electron {
            SpinState::Down => (zeeman - half_a).abs(),
            SpinState::Up => (zeeman + half_a).abs(),
        }
    }

    /// Enumerate every addressable resonance line into a calibration table.
    ///
    /// Per register there are 2^k nuclear patterns, each split by the other
    /// electron's state, plus 2k conditional nuclear lines. Electron lines are
    /// stored as offsets from the register's reference line (all nuclei down,
    /// other electron down).
    pub fn enumerate_lines(&self) -> FrequencyTable {
        FrequencyTable::from_model(self)
    }
}

/// Convert an effective Stark lever arm (Hz per volt of gate detuning) into a
/// physical Stark coefficient (Hz per V/m of electric field) via the gate
/// distance and lever-arm fraction: `η = η_eff · d_gate / α`.
pub fn stark_normalize(eta_eff_hz_per_v: f64, d_gate_m: f64, alpha: f64) -> Result<f64> {
    if !(d_gate_m.is_finite() && d_gate_m > 0.0) {
        return Err(SimError::Domain("gate distance must be positive".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0 && alpha <= 1.0) {
        return Err(SimError::Domain(
            "lever-arm fraction must be in (0, 1]".into(),
        ));
    }
    Ok(eta_eff_hz_per_v * d_gate_m / alpha)
}
