//! Pulse scheduling and state propagation.
//!
//! The engine executes [`Circuit`]s against the full product-space state
//! vector in one of two pulse modes:
//!
//! * **Ideal** — every rotation is applied as an exact conditioned unitary
//!   with zero duration. Useful as a reference and as a fast path for
//!   protocol-level statistics.
//! * **Realistic** — every rotation is realized as a finite-duration drive
//!   tone at one calibrated line frequency. The tone acts on *every*
//!   resonance line of the device that falls within its bandwidth, each as an
//!   exact detuned two-level propagator on that line's basis-state pairs, so
//!   off-resonant excitation, node-law selectivity, conditional (geometric)
//!   phases, and cross-talk all emerge from the same code path.
//!
//! Phase bookkeeping uses one fixed rotating frame per basis state, defined
//! by the device parameters captured at engine construction (the "frame
//! model"). In that frame a perfectly calibrated, noise-free pulse is exactly
//! resonant and spectators accumulate no phase; everything else — noise
//! offsets, stale calibration entries, programmed detunings, parameter drift
//! — shows up as small Ising-structured diagonal deviations and per-pair
//! detunings. Pulses compose exactly: splitting a detuned tone into segments
//! reproduces the unsplit propagator to rounding error.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::circuit::{Circuit, CircuitItem, Condition, DriveSpec, GateOp};
use crate::config::{DriveTableConfig, PulseConfig, QndConfig, ReadoutConfig, SimConfig};
use crate::error::{Result, SimError};
use crate::freqtable::FrequencyTable;
use crate::model::{DeviceModel, SpinId, SpinRole, SpinState};
use crate::noise::{NoiseContext, NoiseProcess};
use crate::qnd::{qnd_markov_exact, QndRates};
use crate::rabi::{optimal_rabi, pulse_duration_s, rabi_unitary, rotation, z_rotation, Mat2};
use crate::state::StateVector;

const TAU: f64 = 2.0 * std::f64::consts::PI;
const PI: f64 = std::f64::consts::PI;

/// How rotations are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseMode {
    /// Exact conditioned unitaries, zero duration, no deviations.
    Ideal,
    /// Finite-duration tones acting on every line within bandwidth.
    Realistic,
}

/// How measurements are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutMode {
    /// Noiseless: record the sampled true state.
    Ideal,
    /// Electron reads use the configured fidelities; repetitive nuclear
    /// readout is collapsed to its exact per-measurement error statistics.
    Effective,
    /// Repetitive nuclear readout is executed cycle by cycle (init /
    /// conditional pulse block / electron read), including stochastic
    /// nuclear flips between cycles.
    Circuit,
}

/// One classified repetitive nuclear readout.
#[derive(Debug, Clone, Copy)]
pub struct NuclearRead {
    pub spin: SpinId,
    /// Majority-vote classification (⇑ = true).
    pub up: bool,
    /// Signed vote margin in [−1, 1]: (⇑-votes − ⇓-votes) / cycles.
    pub margin: f64,
    /// True when |margin| fell inside the rejection band.
    pub rejected: bool,
}

/// Classical record of one shot.
#[derive(Debug, Clone, Default)]
pub struct ShotRecord {
    /// Bits from explicit electron readouts, in circuit order.
    pub electron_bits: Vec<bool>,
    /// Classified nuclear readouts, in circuit order.
    pub nuclear_reads: Vec<NuclearRead>,
}

impl ShotRecord {
    pub fn any_rejected(&self) -> bool {
        self.nuclear_reads.iter().any(|r| r.rejected)
    }

    /// Little-endian key over the nuclear reads (bit j set = read j was ⇑).
    pub fn nuclear_key(&self) -> usize {
        self.nuclear_reads
            .iter()
            .enumerate()
            .fold(0usize, |k, (j, r)| k | ((r.up as usize) << j))
    }
}

/// How the scheduler will realize one rotation.
#[derive(Debug, Clone)]
pub struct ResolvedPulse {
    pub target: SpinId,
    /// Rotation angle folded positive.
    pub theta_rad: f64,
    /// Axis phase after sign folding.
    pub phi_rad: f64,
    /// Electron pulses: nuclear pattern of the target register (bit i =
    /// nucleus i ⇑). Nuclear pulses: 0.
    pub pattern: usize,
    /// Electron pulses: the other electron's state. Nuclear pulses: the
    /// register electron's state.
    pub branch: SpinState,
    /// Calibrated line frequency the pulse targets.
    pub line_hz: f64,
    /// Drive frequency actually programmed (line unless overridden).
    pub f_drive_hz: f64,
    /// Drive amplitude expressed as an on-resonance Rabi frequency.
    pub f_rabi_hz: f64,
    pub duration_s: f64,
}

/// Per-shot deviation of the true Ising parameters from the frame model.
#[derive(Debug, Clone)]
struct Deviations {
    /// Per-register electron (Zeeman-channel) offset, Hz.
    zeeman_hz: Vec<f64>,
    /// Per-register, per-nucleus hyperfine offset δA, Hz.
    hyperfine_hz: Vec<Vec<f64>>,
    /// Exchange offset δJ, Hz.
    exchange_hz: f64,
}

impl Deviations {
    fn new(device: &DeviceModel, frame: &DeviceModel, ctx: &NoiseContext) -> Self {
        let zeeman_base =
            device.gamma_e_hz_per_t * device.b_field_t - frame.gamma_e_hz_per_t * frame.b_field_t;
        let zeeman_hz = (0..device.register_count())
            .map(|r| zeeman_base + ctx.esr_offset(r))
            .collect();
        let hyperfine_hz = device
            .registers
            .iter()
            .enumerate()
            .map(|(r, reg)| {
                (0..reg.nucleus_count())
                    .map(|i| {
                        device.hyperfine_hz(r, i) - frame.hyperfine_hz(r, i)
                            + 2.0 * ctx.nmr_offset(r, i)
                    })
                    .collect()
            })
            .collect();
        let exchange_hz = if device.register_count() == 2 {
            device.exchange_hz() - frame.exchange_hz() + ctx.exchange_offset_hz
        } else {
            0.0
        };
        Deviations {
            zeeman_hz,
            hyperfine_hz,
            exchange_hz,
        }
    }

    fn is_zero(&self) -> bool {
        self.zeeman_hz.iter().all(|&z| z == 0.0)
            && self.hyperfine_hz.iter().flatten().all(|&a| a == 0.0)
            && self.exchange_hz == 0.0
    }

    /// Ising deviation energy of one basis state (bit set = spin ⇑).
    fn basis_energy_hz(&self, basis: usize) -> f64 {
        let mut e = 0.0;
        let mut offset = 0usize;
        let mut m_electron = [0.0f64; 2];
        for (r, hyperfine) in self.hyperfine_hz.iter().enumerate() {
            let m_e = SpinState::from_bit(basis >> offset).m();
            m_electron[r.min(1)] = m_e;
            e += self.zeeman_hz[r] * m_e;
            for (i, da) in hyperfine.iter().enumerate() {
                let m_i = SpinState::from_bit(basis >> (offset + 1 + i)).m();
                e += da * m_e * m_i;
            }
            offset += 1 + hyperfine.len();
        }
        if self.hyperfine_hz.len() == 2 {
            e += self.exchange_hz * m_electron[0] * m_electron[1];
        }
        e
    }

    /// Deviation of the (signed) electron pair gap for one line.
    fn esr_gap_hz(&self, register: usize, pattern: usize, other: SpinState) -> f64 {
        let mut d = self.zeeman_hz[register];
        for (i, da) in self.hyperfine_hz[register].iter().enumerate() {
            d += da * SpinState::from_bit(pattern >> i).m();
        }
        if self.hyperfine_hz.len() == 2 {
            let s = match other {
                SpinState::Up => 1.0,
                SpinState::Down => -1.0,
            };
            d += s * self.exchange_hz / 2.0;
        }
        d
    }

    /// Deviation of the (signed) nuclear pair gap on one electron branch.
    fn nmr_gap_hz(&self, register: usize, nucleus: usize, electron: SpinState) -> f64 {
        self.hyperfine_hz[register][nucleus] * electron.m()
    }
}

/// Mutable execution context of one shot.
struct Exec<'r, R: Rng> {
    state: StateVector,
    t_s: f64,
    dev: Deviations,
    dev_zero: bool,
    rng: Option<&'r mut R>,
    record: ShotRecord,
}

impl<'r, R: Rng> Exec<'r, R> {
    fn rng(&mut self) -> Result<&mut R> {
        self.rng.as_deref_mut().ok_or_else(|| {
            SimError::Circuit(
                "circuit contains a measurement or reload but was run without a sampler".into(),
            )
        })
    }
}

fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// Fold a signed rotation into (θ ≥ 0, adjusted axis phase).
fn fold_angle(theta_rad: f64, phi_rad: f64) -> (f64, f64) {
    if theta_rad < 0.0 {
        (-theta_rad, phi_rad + PI)
    } else {
        (theta_rad, phi_rad)
    }
}

/// Deterministic per-shot sampler: stream 0 of the master seed belongs to the
/// noise process, shot i uses stream i + 1.
pub fn shot_rng(master_seed: u64, shot: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(shot as u64 + 1);
    rng
}

/// Pulse-level simulator for one device.
pub struct Engine {
    /// Current truth (may drift away from `frame` in tracking experiments).
    device: DeviceModel,
    /// Rotating-frame reference captured at construction.
    frame: DeviceModel,
    /// What the control software believes (drive-frequency lookups).
    table: FrequencyTable,
    pulse_cfg: PulseConfig,
    drive_table: DriveTableConfig,
    readout_cfg: ReadoutConfig,
    qnd_cfg: QndConfig,
    crot_phase_error_rad: f64,
    mode: PulseMode,
    readout_mode: ReadoutMode,
}

impl Engine {
    /// Build an engine with a freshly calibrated table (table = truth).
    pub fn from_config(cfg: &SimConfig, mode: PulseMode, readout_mode: ReadoutMode) -> Engine {
        let device = cfg.device.clone();
        Engine {
            frame: device.clone(),
            table: device.enumerate_lines(),
            device,
            pulse_cfg: cfg.pulse.clone(),
            drive_table: cfg.nmr_drive_table.clone(),
            readout_cfg: cfg.noise.readout.clone(),
            qnd_cfg: cfg.qnd.clone(),
            crot_phase_error_rad: cfg.noise.crot_phase_error_rad,
            mode,
            readout_mode,
        }
    }

    pub fn device(&self) -> &DeviceModel {
        &self.device
    }

    /// Replace the truth (e.g. after a detuning change) while keeping the
    /// rotating frame fixed, so the change appears as a parameter deviation.
    pub fn set_device(&mut self, device: DeviceModel) {
        self.device = device;
    }

    pub fn table(&self) -> &FrequencyTable {
        &self.table
    }

    pub fn qnd_config(&self) -> &QndConfig {
        &self.qnd_cfg
    }

    pub fn drive_table(&self) -> &DriveTableConfig {
        &self.drive_table
    }

    pub fn table_mut(&mut self) -> &mut FrequencyTable {
        &mut self.table
    }

    pub fn set_table(&mut self, table: FrequencyTable) {
        self.table = table;
    }

    pub fn mode(&self) -> PulseMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: PulseMode) {
        self.mode = mode;
    }

    pub fn readout_mode(&self) -> ReadoutMode {
        self.readout_mode
    }

    pub fn set_readout_mode(&mut self, readout_mode: ReadoutMode) {
        self.readout_mode = readout_mode;
    }

    pub fn set_crot_phase_error_rad(&mut self, rad: f64) {
        self.crot_phase_error_rad = rad;
    }

    /// Effective per-cycle probabilities of the repetitive nuclear readout.
    pub fn effective_qnd_rates(&self) -> Result<QndRates> {
        let r = &self.readout_cfg;
        QndRates::from_device(
            r.p_read_up_given_up,
            r.p_read_down_given_down,
            r.electron_init_error,
            r.nuclear_flip_up_to_down,
            r.nuclear_flip_down_to_up,
        )
    }

    // ------------------------------------------------------------------
    // Scheduling
    // ------------------------------------------------------------------

    /// Resolve how a rotation would be driven (line, amplitude, duration).
    pub fn schedule_rotation(&self, op: &GateOp) -> Result<ResolvedPulse> {
        match op {
            GateOp::Rotation {
                target,
                angle_rad,
                axis_phase_rad,
                condition,
                drive,
            } => self.resolve_rotation(*target, *angle_rad, *axis_phase_rad, condition, drive),
            _ => Err(SimError::Circuit(
                "schedule_rotation expects a rotation".into(),
            )),
        }
    }

    fn resolve_rotation(
        &self,
        target: SpinId,
        angle_rad: f64,
        axis_phase_rad: f64,
        condition: &Condition,
        drive: &DriveSpec,
    ) -> Result<ResolvedPulse> {
        let (theta, phi) = fold_angle(angle_rad, axis_phase_rad);
        let r = target.register;
        if r >= self.device.register_count() {
            return Err(SimError::Circuit(format!(
                "rotation targets register {r}, device has {}",
                self.device.register_count()
            )));
        }
        let two_regs = self.device.register_count() == 2;
        let (pattern, branch, line_hz, f_rabi_default) = match target.role {
            SpinRole::Electron => {
                let k = self.device.registers[r].nucleus_count();
                let mut pattern_bits: Vec<Option<SpinState>> = vec![None; k];
                let mut other_state: Option<SpinState> = None;
                for term in &condition.terms {
                    match term.spin.role {
                        SpinRole::Nucleus(i) if term.spin.register == r && i < k => {
                            if pattern_bits[i].replace(term.state).is_some() {
                                return Err(SimError::Circuit(format!(
                                    "duplicate condition on {}",
                                    self.device.spin_label(term.spin)
                                )));
                            }
                        }
                        SpinRole::Electron if two_regs && term.spin.register != r => {
                            if other_state.replace(term.state).is_some() {
                                return Err(SimError::Circuit(
                                    "duplicate condition on the other electron".into(),
                                ));
                            }
                        }
                        _ => {
                            return Err(SimError::Circuit(format!(
                                "electron pulse condition may pin only its register's nuclei \
                                 and the other electron, not {}",
                                self.device.spin_label(term.spin)
                            )));
                        }
                    }
                }
                let mut pattern = 0usize;
                for (i, bit) in pattern_bits.iter().enumerate() {
                    match bit {
                        Some(SpinState::Up) => pattern |= 1 << i,
                        Some(SpinState::Down) => {}
                        None => {
                            return Err(SimError::Circuit(format!(
                                "electron pulse condition must pin every nucleus of its \
                                 register; {} is unspecified",
                                self.device.spin_label(SpinId::nucleus(r, i))
                            )));
                        }
                    }
                }
                let other = if two_regs {
                    other_state.ok_or_else(|| {
                        SimError::Circuit(
                            "electron pulse condition must pin the other electron's state".into(),
                        )
                    })?
                } else {
                    SpinState::Down
                };
                let line = self.table.esr_drive_hz(r, pattern, other);
                let f_rabi = if two_regs && self.table.exchange_hz > 0.0 {
                    let n = node_index(theta, self.pulse_cfg.esr_min_node_factor);
                    optimal_rabi(theta, n, self.table.exchange_hz)?
                } else {
                    self.pulse_cfg.esr_default_rabi_hz
                };
                (pattern, other, line, f_rabi)
            }
            SpinRole::Nucleus(i) => {
                if i >= self.device.registers[r].nucleus_count() {
                    return Err(SimError::Circuit(format!(
                        "nucleus index {i} out of range for register {r}"
                    )));
                }
                let mut electron_state: Option<SpinState> = None;
                for term in &condition.terms {
                    match term.spin.role {
                        SpinRole::Electron if term.spin.register == r => {
                            if electron_state.replace(term.state).is_some() {
                                return Err(SimError::Circuit(
                                    "duplicate condition on the register electron".into(),
                                ));
                            }
                        }
                        _ => {
                            return Err(SimError::Circuit(format!(
                                "nuclear pulse condition may pin only its register's \
                                 electron, not {}",
                                self.device.spin_label(term.spin)
                            )));
                        }
                    }
                }
                let e_state = electron_state.ok_or_else(|| {
                    SimError::Circuit(
                        "nuclear pulse condition must pin the register electron's state".into(),
                    )
                })?;
                let line = self.table.nmr_drive_hz(r, i, e_state);
                let label = self.device.spin_label(target);
                let f_rabi = self
                    .drive_table
                    .row(&label)
                    .map(|row| row.f_rabi_hz)
                    .ok_or_else(|| {
                        SimError::Scheduling(format!("no drive-table row for nucleus {label}"))
                    })?;
                (0usize, e_state, line, f_rabi)
            }
        };
        let f_rabi_hz = drive.rabi_hz.unwrap_or(f_rabi_default);
        if !(f_rabi_hz > 0.0) {
            return Err(SimError::Scheduling(format!(
                "drive amplitude must be positive, got {f_rabi_hz}"
            )));
        }
        let f_drive_hz = drive.frequency_hz.unwrap_or(line_hz);
        Ok(ResolvedPulse {
            target,
            theta_rad: theta,
            phi_rad: phi,
            pattern,
            branch,
            line_hz,
            f_drive_hz,
            f_rabi_hz,
            duration_s: pulse_duration_s(theta, f_rabi_hz),
        })
    }

    // ------------------------------------------------------------------
    // Execution
    // ------------------------------------------------------------------

    /// Propagate a measurement-free circuit to a pure state (quiet context).
    pub fn propagate_pure(&self, circuit: &Circuit) -> Result<StateVector> {
        self.propagate_pure_with(circuit, &NoiseContext::quiet(&self.device))
    }

    /// Propagate a measurement-free circuit under a fixed noise context.
    pub fn propagate_pure_with(
        &self,
        circuit: &Circuit,
        ctx: &NoiseContext,
    ) -> Result<StateVector> {
        let dev = Deviations::new(&self.device, &self.frame, ctx);
        let dev_zero = dev.is_zero();
        let mut ex: Exec<'_, ChaCha12Rng> = Exec {
            state: StateVector::ground(self.device.spin_count()),
            t_s: 0.0,
            dev,
            dev_zero,
            rng: None,
            record: ShotRecord::default(),
        };
        self.exec_items(&mut ex, &circuit.items)?;
        Ok(ex.state)
    }

    /// Execute one shot from the ground state under a frozen noise context.
    pub fn run_shot<R: Rng>(
        &self,
        circuit: &Circuit,
        ctx: &NoiseContext,
        rng: &mut R,
    ) -> Result<ShotRecord> {
        let dev = Deviations::new(&self.device, &self.frame, ctx);
        let dev_zero = dev.is_zero();
        let mut ex = Exec {
            state: StateVector::ground(self.device.spin_count()),
            t_s: 0.0,
            dev,
            dev_zero,
            rng: Some(rng),
            record: ShotRecord::default(),
        };
        self.exec_items(&mut ex, &circuit.items)?;
        Ok(ex.record)
    }

    /// Execute one shot and also return the post-circuit state vector — the
    /// simulator-side ground truth that protocol tests score against.
    pub fn run_shot_traced<R: Rng>(
        &self,
        circuit: &Circuit,
        ctx: &NoiseContext,
        rng: &mut R,
    ) -> Result<(ShotRecord, StateVector)> {
        let dev = Deviations::new(&self.device, &self.frame, ctx);
        let dev_zero = dev.is_zero();
        let mut ex = Exec {
            state: StateVector::ground(self.device.spin_count()),
            t_s: 0.0,
            dev,
            dev_zero,
            rng: Some(rng),
            record: ShotRecord::default(),
        };
        self.exec_items(&mut ex, &circuit.items)?;
        Ok((ex.record, ex.state))
    }

    /// Run `n_shots` shots: noise contexts are sampled serially (the process
    /// clock advances by the circuit duration per shot), then the shots are
    /// executed in parallel with independent per-shot samplers.
    pub fn run_shots(
        &self,
        circuit: &Circuit,
        n_shots: usize,
        master_seed: u64,
        process: &mut NoiseProcess,
    ) -> Result<Vec<ShotRecord>> {
        let duration = self.circuit_duration_s(circuit)?;
        let mut contexts = Vec::with_capacity(n_shots);
        for _ in 0..n_shots {
            contexts.push(process.context());
            process.advance(duration);
        }
        contexts
            .into_par_iter()
            .enumerate()
            .map(|(shot, ctx)| {
                let mut rng = shot_rng(master_seed, shot);
                self.run_shot(circuit, &ctx, &mut rng)
            })
            .collect()
    }

    /// Wall-clock duration of one shot of the circuit (pulses, idles, and
    /// readout dead times; ideal-mode pulses take zero time).
    pub fn circuit_duration_s(&self, circuit: &Circuit) -> Result<f64> {
        self.items_duration_s(&circuit.items)
    }

    fn items_duration_s(&self, items: &[CircuitItem]) -> Result<f64> {
        let mut total = 0.0;
        for item in items {
            total += match item {
                CircuitItem::Op(op) => self.op_duration_s(op)?,
                CircuitItem::Repeat { times, body } => {
                    *times as f64 * self.items_duration_s(body)?
                }
                CircuitItem::QndMeasure {
                    register, cycles, ..
                } => self.qnd_duration_s(*register, *cycles)?,
            };
        }
        Ok(total)
    }

    fn op_duration_s(&self, op: &GateOp) -> Result<f64> {
        Ok(match op {
            GateOp::Rotation {
                target,
                angle_rad,
                axis_phase_rad,
                condition,
                drive,
            } => match self.mode {
                PulseMode::Ideal => 0.0,
                PulseMode::Realistic => {
                    if *angle_rad == 0.0 {
                        0.0
                    } else {
                        self.resolve_rotation(
                            *target,
                            *angle_rad,
                            *axis_phase_rad,
                            condition,
                            drive,
                        )?
                        .duration_s
                    }
                }
            },
            GateOp::VirtualZ { .. } => 0.0,
            GateOp::InitElectron { .. } | GateOp::MeasureElectron { .. } => {
                self.readout_cfg.dead_time_s
            }
            GateOp::Idle { duration_s } => *duration_s,
        })
    }

    fn qnd_duration_s(&self, register: usize, cycles: usize) -> Result<f64> {
        let block = match self.mode {
            PulseMode::Ideal => 0.0,
            PulseMode::Realistic => {
                let k = self.device.registers[register].nucleus_count();
                let spectators = 1usize << k.saturating_sub(1);
                let f_rabi = if self.device.register_count() == 2 && self.table.exchange_hz > 0.0 {
                    optimal_rabi(
                        PI,
                        node_index(PI, self.pulse_cfg.esr_min_node_factor),
                        self.table.exchange_hz,
                    )?
                } else {
                    self.pulse_cfg.esr_default_rabi_hz
                };
                spectators as f64 * pulse_duration_s(PI, f_rabi)
            }
        };
        Ok(cycles as f64 * 2.0 * (2.0 * self.readout_cfg.dead_time_s + block))
    }

    fn exec_items<R: Rng>(&self, ex: &mut Exec<'_, R>, items: &[CircuitItem]) -> Result<()> {
        for item in items {
            match item {
                CircuitItem::Op(op) => self.exec_op(ex, op)?,
                CircuitItem::Repeat { times, body } => {
                    for _ in 0..*times {
                        self.exec_items(ex, body)?;
                    }
                }
                CircuitItem::QndMeasure {
                    register,
                    nucleus,
                    cycles,
                } => self.exec_qnd(ex, *register, *nucleus, *cycles)?,
            }
        }
        Ok(())
    }

    fn exec_op<R: Rng>(&self, ex: &mut Exec<'_, R>, op: &GateOp) -> Result<()> {
        match op {
            GateOp::Rotation {
                target,
                angle_rad,
                axis_phase_rad,
                condition,
                drive,
            } => match self.mode {
                PulseMode::Ideal => {
                    self.exec_rotation_ideal(ex, *target, *angle_rad, *axis_phase_rad, condition)
                }
                PulseMode::Realistic => self.exec_rotation_realistic(
                    ex,
                    *target,
                    *angle_rad,
                    *axis_phase_rad,
                    condition,
                    drive,
                ),
            },
            GateOp::VirtualZ {
                target,
                angle_rad,
                condition,
            } => {
                let idx = self.device.spin_index(*target)?;
                let (mask, bits) = condition.mask_bits(&self.device)?;
                ex.state
                    .apply_single(idx, &z_rotation(*angle_rad), mask, bits);
                Ok(())
            }
            GateOp::InitElectron { register } => {
                self.exec_init_electron(ex, *register)?;
                Ok(())
            }
            GateOp::MeasureElectron { register } => {
                let bit = self.exec_measure_electron(ex, *register)?;
                ex.record.electron_bits.push(bit);
                Ok(())
            }
            GateOp::Idle { duration_s } => {
                self.advance(ex, *duration_s);
                Ok(())
            }
        }
    }

    /// Free evolution: deviation phases accumulate, the clock moves forward.
    fn advance<R: Rng>(&self, ex: &mut Exec<'_, R>, duration_s: f64) {
        if duration_s <= 0.0 {
            return;
        }
        if self.mode == PulseMode::Realistic && !ex.dev_zero {
            let phases: Vec<f64> = (0..ex.state.dim())
                .map(|b| -TAU * ex.dev.basis_energy_hz(b) * duration_s)
                .collect();
            ex.state.apply_diagonal(&phases);
        }
        ex.t_s += duration_s;
    }

    fn exec_rotation_ideal<R: Rng>(
        &self,
        ex: &mut Exec<'_, R>,
        target: SpinId,
        angle_rad: f64,
        axis_phase_rad: f64,
        condition: &Condition,
    ) -> Result<()> {
        if angle_rad == 0.0 {
            return Ok(());
        }
        let (theta, phi) = fold_angle(angle_rad, axis_phase_rad);
        let idx = self.device.spin_index(target)?;
        let (mask, bits) = condition.mask_bits(&self.device)?;
        ex.state.apply_single(idx, &rotation(theta, phi), mask, bits);
        Ok(())
    }

    fn exec_rotation_realistic<R: Rng>(
        &self,
        ex: &mut Exec<'_, R>,
        target: SpinId,
        angle_rad: f64,
        axis_phase_rad: f64,
        condition: &Condition,
        drive: &DriveSpec,
    ) -> Result<()> {
        if angle_rad == 0.0 {
            return Ok(());
        }
        let rp = self.resolve_rotation(target, angle_rad, axis_phase_rad, condition, drive)?;
        let t0 = ex.t_s;
        let dur = rp.duration_s;
        let bandwidth = self.pulse_cfg.bandwidth_factor * rp.f_rabi_hz;
        // The programmed phase is pre-conjugated for the target line's level
        // ordering so the requested axis is realized on (⇓, ⇑).
        let s_target = match target.role {
            SpinRole::Electron => 1.0,
            SpinRole::Nucleus(i) => self.nmr_sign(target.register, i, rp.branch),
        };
        let phi_prog = s_target * rp.phi_rad;

        // Phase 1: free-evolution deviation phases for the pulse window.
        self.advance(ex, dur);
        ex.t_s = t0; // the pair propagators advance the clock themselves

        // Phase 2: exact two-level propagators on every line within band.
        match target.role {
            SpinRole::Electron => {
                for r2 in 0..self.device.register_count() {
                    let k2 = self.device.registers[r2].nucleus_count();
                    let electron_idx = self.device.spin_index(SpinId::electron(r2))?;
                    let branches: &[SpinState] = if self.device.register_count() == 2 {
                        &[SpinState::Down, SpinState::Up]
                    } else {
                        &[SpinState::Down]
                    };
                    for &other in branches {
                        for pattern in 0..(1usize << k2) {
                            let f_frame = self.frame.esr_frequency(r2, pattern, other);
                            let is_target = r2 == target.register
                                && pattern == rp.pattern
                                && other == rp.branch;
                            if !is_target && (f_frame - rp.f_drive_hz).abs() > bandwidth {
                                continue;
                            }
                            let d_gap = ex.dev.esr_gap_hz(r2, pattern, other);
                            let nu = f_frame - rp.f_drive_hz;
                            let m = pair_matrix(rp.f_rabi_hz, nu, d_gap, dur, phi_prog, t0);
                            let (mask, bits) = self.esr_line_mask_bits(r2, pattern, other)?;
                            ex.state.apply_single(electron_idx, &m, mask, bits);
                        }
                    }
                }
                // Systematic conditional-phase miscalibration of electron
                // pulses: the same-pattern levels on the opposite exchange
                // branch — where the rotation does not fire — pick up an
                // extra z-phase proportional to the driven angle (the knob
                // value is the phase added per π of rotation). This is
                // exactly the spectator phase the Ramsey-style phase
                // calibration measures and compensates.
                if self.crot_phase_error_rad != 0.0 && self.device.register_count() == 2 {
                    let idx = self.device.spin_index(target)?;
                    let (mask, bits) = self.esr_line_mask_bits(
                        target.register,
                        rp.pattern,
                        rp.branch.flipped(),
                    )?;
                    let zeta = self.crot_phase_error_rad * rp.theta_rad / PI;
                    ex.state.apply_single(idx, &z_rotation(zeta), mask, bits);
                }
            }
            SpinRole::Nucleus(_) => {
                for r2 in 0..self.device.register_count() {
                    let k2 = self.device.registers[r2].nucleus_count();
                    let electron_idx = self.device.spin_index(SpinId::electron(r2))?;
                    for i2 in 0..k2 {
                        let nucleus_idx = self.device.spin_index(SpinId::nucleus(r2, i2))?;
                        for e_state in [SpinState::Down, SpinState::Up] {
                            let f_frame = self.frame.nmr_frequency(r2, i2, e_state);
                            let is_target = target == SpinId::nucleus(r2, i2)
                                && e_state == rp.branch;
                            if !is_target && (f_frame - rp.f_drive_hz).abs() > bandwidth {
                                continue;
                            }
                            let s = self.nmr_sign(r2, i2, e_state);
                            let d_gap = ex.dev.nmr_gap_hz(r2, i2, e_state);
                            let nu_s = s * (f_frame - rp.f_drive_hz);
                            let m =
                                pair_matrix(rp.f_rabi_hz, nu_s, d_gap, dur, s * phi_prog, t0);
                            let mask = 1usize << electron_idx;
                            let bits = if e_state == SpinState::Up { mask } else { 0 };
                            ex.state.apply_single(nucleus_idx, &m, mask, bits);
                        }
                    }
                }
            }
        }
        ex.t_s = t0 + dur;
        Ok(())
    }

    /// Sign of the frame-level ordering of a nuclear line: +1 when ⇑ is the
    /// higher level, −1 when the hyperfine interaction inverts the pair.
    fn nmr_sign(&self, register: usize, nucleus: usize, electron: SpinState) -> f64 {
        let zeeman = self.frame.gamma_n_hz_per_t * self.frame.b_field_t;
        let gap = zeeman + self.frame.hyperfine_hz(register, nucleus) * electron.m();
        if gap >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    fn esr_line_mask_bits(
        &self,
        register: usize,
        pattern: usize,
        other: SpinState,
    ) -> Result<(usize, usize)> {
        let mut mask = 0usize;
        let mut bits = 0usize;
        let k = self.device.registers[register].nucleus_count();
        for i in 0..k {
            let idx = self.device.spin_index(SpinId::nucleus(register, i))?;
            mask |= 1 << idx;
            if (pattern >> i) & 1 == 1 {
                bits |= 1 << idx;
            }
        }
        if self.device.register_count() == 2 {
            let other_idx = self
                .device
                .spin_index(SpinId::electron(1 - register))?;
            mask |= 1 << other_idx;
            if other == SpinState::Up {
                bits |= 1 << other_idx;
            }
        }
        Ok((mask, bits))
    }

    /// Measure one electron: sample its true state, collapse to it, and
    /// return the (possibly misread) recorded bit. Costs one dead time.
    fn exec_measure_electron<R: Rng>(
        &self,
        ex: &mut Exec<'_, R>,
        register: usize,
    ) -> Result<bool> {
        let idx = self.device.spin_index(SpinId::electron(register))?;
        let p_up = ex.state.prob_up(idx).clamp(0.0, 1.0);
        let true_up = ex.rng()?.gen_bool(p_up);
        ex.state.project_spin(idx, true_up);
        let recorded = match self.readout_mode {
            ReadoutMode::Ideal => true_up,
            _ => {
                if true_up {
                    ex.rng()?.gen_bool(self.readout_cfg.p_read_up_given_up)
                } else {
                    !ex.rng()?.gen_bool(self.readout_cfg.p_read_down_given_down)
                }
            }
        };
        self.advance(ex, self.readout_cfg.dead_time_s);
        Ok(recorded)
    }

    /// Reload one electron into ⇓ (up to the configured init error):
    /// measure, collapse, then deterministically set the reloaded state.
    fn exec_init_electron<R: Rng>(&self, ex: &mut Exec<'_, R>, register: usize) -> Result<()> {
        let idx = self.device.spin_index(SpinId::electron(register))?;
        let p_up = ex.state.prob_up(idx).clamp(0.0, 1.0);
        let true_up = ex.rng()?.gen_bool(p_up);
        ex.state.project_spin(idx, true_up);
        let reload_up = match self.readout_mode {
            ReadoutMode::Ideal => false,
            _ => ex.rng()?.gen_bool(self.readout_cfg.electron_init_error),
        };
        ex.state.set_definite_spin(idx, reload_up);
        self.advance(ex, self.readout_cfg.dead_time_s);
        Ok(())
    }

    /// Execute one repetitive nuclear readout and append its classification.
    fn exec_qnd<R: Rng>(
        &self,
        ex: &mut Exec<'_, R>,
        register: usize,
        nucleus: usize,
        cycles: usize,
    ) -> Result<()> {
        if cycles == 0 {
            return Err(SimError::Circuit(
                "repetitive readout needs at least one cycle".into(),
            ));
        }
        let spin = SpinId::nucleus(register, nucleus);
        let idx = self.device.spin_index(spin)?;
        let read = match self.readout_mode {
            ReadoutMode::Ideal => {
                let p_up = ex.state.prob_up(idx).clamp(0.0, 1.0);
                let up = ex.rng()?.gen_bool(p_up);
                ex.state.project_spin(idx, up);
                NuclearRead {
                    spin,
                    up,
                    margin: if up { 1.0 } else { -1.0 },
                    rejected: false,
                }
            }
            ReadoutMode::Effective => {
                // Sample the vote statistic d from its exact distribution for
                // the sampled true state, then derive classification, margin,
                // and rejection from the one draw — this keeps their joint law
                // identical to the chain analysis.
                let rates = self.effective_qnd_rates()?;
                let analysis = qnd_markov_exact(&rates, cycles)?;
                let band = self.qnd_cfg.reject_band;
                let p_up = ex.state.prob_up(idx).clamp(0.0, 1.0);
                let up = ex.rng()?.gen_bool(p_up);
                ex.state.project_spin(idx, up);
                let dist = if up {
                    &analysis.dist_given_up
                } else {
                    &analysis.dist_given_down
                };
                let draw: f64 = ex.rng()?.gen();
                let mut acc = 0.0;
                let mut k = dist.len() - 1;
                for (i, p) in dist.iter().enumerate() {
                    acc += p;
                    if draw < acc {
                        k = i;
                        break;
                    }
                }
                let d = k as i64 - cycles as i64;
                let margin = d as f64 / cycles as f64;
                self.advance(ex, self.qnd_duration_s(register, cycles)?);
                NuclearRead {
                    spin,
                    up: d >= 0,
                    margin,
                    rejected: margin.abs() < band,
                }
            }
            ReadoutMode::Circuit => self.exec_qnd_circuit(ex, register, nucleus, cycles)?,
        };
        ex.record.nuclear_reads.push(read);
        Ok(())
    }

    /// Cycle-by-cycle repetitive readout: each round runs a ⇑-conditioned and
    /// a ⇓-conditioned cycle (electron reload, conditional π block, electron
    /// read); the vote is the difference of ↑ counts between the two blocks.
    fn exec_qnd_circuit<R: Rng>(
        &self,
        ex: &mut Exec<'_, R>,
        register: usize,
        nucleus: usize,
        cycles: usize,
    ) -> Result<NuclearRead> {
        let spin = SpinId::nucleus(register, nucleus);
        let idx = self.device.spin_index(spin)?;
        let k = self.device.registers[register].nucleus_count();
        let p_utd = self.readout_cfg.nuclear_flip_up_to_down;
        let p_dtu = self.readout_cfg.nuclear_flip_down_to_up;
        let flip = rotation(PI, 0.0);
        let mut d: i64 = 0;
        for _ in 0..cycles {
            for want_up in [true, false] {
                self.exec_init_electron(ex, register)?;
                let want = if want_up { SpinState::Up } else { SpinState::Down };
                match self.mode {
                    PulseMode::Ideal => {
                        self.exec_rotation_ideal(
                            ex,
                            SpinId::electron(register),
                            PI,
                            0.0,
                            &Condition::on(spin, want),
                        )?;
                    }
                    PulseMode::Realistic => {
                        // One π pulse per spectator pattern, nucleus pinned to
                        // the conditioned state, the other electron parked ⇓.
                        for spectator in 0..(1usize << (k - 1)) {
                            let mut condition = Condition::on(spin, want);
                            let mut bit = 0usize;
                            for i in 0..k {
                                if i == nucleus {
                                    continue;
                                }
                                let state = SpinState::from_bit(spectator >> bit);
                                condition =
                                    condition.and(SpinId::nucleus(register, i), state);
                                bit += 1;
                            }
                            if self.device.register_count() == 2 {
                                condition = condition
                                    .and(SpinId::electron(1 - register), SpinState::Down);
                            }
                            self.exec_rotation_realistic(
                                ex,
                                SpinId::electron(register),
                                PI,
                                0.0,
                                &condition,
                                &DriveSpec::default(),
                            )?;
                        }
                    }
                }
                let up = self.exec_measure_electron(ex, register)?;
                if up {
                    d += if want_up { 1 } else { -1 };
                }
                // Stochastic nuclear flip opportunity after every cycle.
                let p_up = ex.state.prob_up(idx).clamp(0.0, 1.0);
                let p_flip = (p_up * p_utd + (1.0 - p_up) * p_dtu).clamp(0.0, 1.0);
                if p_flip > 0.0 && ex.rng()?.gen_bool(p_flip) {
                    ex.state.apply_single(idx, &flip, 0, 0);
                }
            }
        }
        let margin = d as f64 / cycles as f64;
        Ok(NuclearRead {
            spin,
            up: d >= 0,
            margin,
            rejected: margin.abs() < self.qnd_cfg.reject_band,
        })
    }
}

/// Smallest node index n ≥ 1 with 2πn/θ at or above the selectivity factor.
fn node_index(theta_rad: f64, min_factor: f64) -> u32 {
    let n = (min_factor * theta_rad / TAU).ceil();
    if n < 1.0 {
        1
    } else {
        n as u32
    }
}

/// Exact propagator of one driven basis-state pair in the persistent frame.
///
/// `nu_s_hz` is the (orientation-corrected) frame-vs-drive mismatch of the
/// line, `d_gap_hz` the deviation of the signed pair gap from the frame. The
/// detuned propagator runs in the drive frame; the outer diagonal factors
/// rotate it into the persistent frame at absolute time `t0` and back out at
/// `t0 + dur`, and the right factor removes the pair's own share of the
/// free-evolution phases that were already applied for the pulse window.
fn pair_matrix(
    f_rabi_hz: f64,
    nu_s_hz: f64,
    d_gap_hz: f64,
    dur_s: f64,
    phi_rad: f64,
    t0_s: f64,
) -> Mat2 {
    use num_complex::Complex64;
    let u = rabi_unitary(f_rabi_hz, nu_s_hz + d_gap_hz, dur_s, phi_rad);
    let t1 = t0_s + dur_s;
    let left: Mat2 = [
        Complex64::new(1.0, 0.0),
        Complex64::ZERO,
        Complex64::ZERO,
        Complex64::from_polar(1.0, TAU * nu_s_hz * t1),
    ];
    let right: Mat2 = [
        Complex64::from_polar(1.0, -PI * (nu_s_hz + d_gap_hz) * dur_s),
        Complex64::ZERO,
        Complex64::ZERO,
        Complex64::from_polar(1.0, -TAU * nu_s_hz * t0_s - PI * (nu_s_hz - d_gap_hz) * dur_s),
    ];
    mat2_mul(&left, &mat2_mul(&u, &right))
}
