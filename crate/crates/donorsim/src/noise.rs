//! Stochastic imperfections: discrete fluctuators, collective line drift,
//! quasi-static dephasing, correlated nuclear jumps, off-resonant line
//! pulling, and readout error bookkeeping.
//!
//! All slow randomness (fluctuator flips, jump events, per-shot quasi-static
//! detunings) is drawn serially from one dedicated RNG stream so that a run is
//! reproducible regardless of how shots are later parallelized.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::config::{MicrowaveLoadConfig, NoiseConfig};
use crate::error::{Result, SimError};
use crate::model::{DeviceModel, SpinRole};

/// Quasi-static detuning width for a coherence time: Gaussian σ_f such that an
/// ensemble Ramsey fringe decays as exp(−(τ/T₂*)²).
pub fn dephasing_sigma_hz(t2_star_s: f64) -> f64 {
    1.0 / (std::f64::consts::SQRT_2 * std::f64::consts::PI * t2_star_s)
}

/// One sampled quasi-static detuning for a coherence time.
pub fn dephasing_offset(t2_star_s: f64, rng: &mut impl Rng) -> f64 {
    if !t2_star_s.is_finite() {
        return 0.0; // infinite coherence — no quasi-static spread
    }
    let sigma = dephasing_sigma_hz(t2_star_s);
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Frozen noise snapshot for one shot: every entry is a line-frequency offset
/// (truth minus calibrated value) that stays constant for the shot's duration.
#[derive(Debug, Clone)]
pub struct NoiseContext {
    /// Per-register electron line offset (collective spread + fluctuators +
    /// electron quasi-static dephasing), Hz. Applies rigidly to both exchange
    /// branches and every nuclear-pattern line of the register.
    pub electron_offset_hz: Vec<f64>,
    /// Per-register, per-nucleus NMR line offset (quasi-static dephasing +
    /// slow drift + correlated jumps), Hz.
    pub nuclear_offset_hz: Vec<Vec<f64>>,
    /// Exchange-coupling offset, Hz (0 unless jitter configured).
    pub exchange_offset_hz: f64,
    /// Wall-clock time the context was sampled at, seconds.
    pub t_s: f64,
}

impl NoiseContext {
    /// A context with every offset zero (ideal conditions).
    pub fn quiet(device: &DeviceModel) -> Self {
        NoiseContext {
            electron_offset_hz: vec![0.0; device.register_count()],
            nuclear_offset_hz: device
                .registers
                .iter()
                .map(|r| vec![0.0; r.nucleus_count()])
                .collect(),
            exchange_offset_hz: 0.0,
            t_s: 0.0,
        }
    }

    /// Offset of the ESR lines of a register (same for every pattern/branch).
    pub fn esr_offset(&self, register: usize) -> f64 {
        self.electron_offset_hz[register]
    }

    /// Offset of one nucleus's NMR lines.
    pub fn nmr_offset(&self, register: usize, nucleus: usize) -> f64 {
        self.nuclear_offset_hz[register][nucleus]
    }

    /// Offset of the true transition frequency of any spin line.
    pub fn spin_offset(&self, spin: crate::model::SpinId) -> f64 {
        match spin.role {
            SpinRole::Electron => self.esr_offset(spin.register),
            SpinRole::Nucleus(i) => self.nmr_offset(spin.register, i),
        }
    }
}

#[derive(Debug, Clone)]
struct TlsState {
    register: usize,
    amplitude_hz: f64,
    mean_dwell_s: f64,
    excited: bool,
    next_flip_s: f64,
}

#[derive(Debug, Clone)]
struct JumpState {
    member_indices: Vec<(usize, usize)>,
    magnitude_hz: f64,
    mean_interval_s: f64,
    accumulated_hz: f64,
    next_event_s: f64,
}

/// Time-evolving noise generator. `advance` moves wall-clock time forward
/// (processing fluctuator flips and jump events); `context` freezes a
/// quasi-static snapshot for one shot.
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    device: DeviceModel,
    cfg: NoiseConfig,
    rng: ChaCha12Rng,
    t_s: f64,
    tls: Vec<TlsState>,
    jumps: Vec<JumpState>,
    /// Deterministic drift terms: (register, nucleus, Hz/s).
    drift: Vec<(usize, usize, f64)>,
    enabled: bool,
}

fn exp_wait(mean_s: f64, rng: &mut impl Rng) -> f64 {
    Exp::new(1.0 / mean_s).expect("positive rate").sample(rng)
}

impl NoiseProcess {
    /// Build the process on RNG stream 0 of `master_seed`.
    pub fn new(device: &DeviceModel, cfg: &NoiseConfig, master_seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(0);
        let mut tls = Vec::new();
        for t in &cfg.tls {
            if t.register >= device.register_count() {
                return Err(SimError::Shape(format!(
                    "fluctuator register index {} out of range",
                    t.register
                )));
            }
            let excited = rng.gen::<f64>() < 0.5;
            let next_flip_s = exp_wait(t.mean_dwell_s, &mut rng);
            tls.push(TlsState {
                register: t.register,
                amplitude_hz: t.amplitude_hz,
                mean_dwell_s: t.mean_dwell_s,
                excited,
                next_flip_s,
            });
        }
        let mut jumps = Vec::new();
        for group in &cfg.correlated_jumps {
            let mut member_indices = Vec::new();
            for label in &group.members {
                let id = device.spin_by_label(label)?;
                match id.role {
                    SpinRole::Nucleus(i) => member_indices.push((id.register, i)),
                    SpinRole::Electron => {
                        return Err(SimError::Shape(format!(
                            "correlated jump member {label} is not a nucleus"
                        )))
                    }
                }
            }
            let next_event_s = exp_wait(group.mean_interval_s, &mut rng);
            jumps.push(JumpState {
                member_indices,
                magnitude_hz: group.magnitude_hz,
                mean_interval_s: group.mean_interval_s,
                accumulated_hz: 0.0,
                next_event_s,
            });
        }
        let mut drift = Vec::new();
        for (label, rate) in &cfg.nmr_drift_hz_per_s {
            let id = device.spin_by_label(label)?;
            if let SpinRole::Nucleus(i) = id.role {
                drift.push((id.register, i, *rate));
            }
        }
        Ok(NoiseProcess {
            device: device.clone(),
            cfg: cfg.clone(),
            rng,
            t_s: 0.0,
            tls,
            jumps,
            drift,
            enabled: true,
        })
    }

    /// A process that always reports zero offsets (ideal mode), still tracking
    /// time.
    pub fn disabled(device: &DeviceModel, cfg: &NoiseConfig) -> Result<Self> {
        let mut p = NoiseProcess::new(device, cfg, 0)?;
        p.enabled = false;
        for t in &mut p.tls {
            t.excited = false;
        }
        Ok(p)
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn now_s(&self) -> f64 {
        self.t_s
    }

    /// Advance wall-clock time, toggling fluctuators and firing jump events
    /// that fall inside the interval.
    pub fn advance(&mut self, dt_s: f64) {
        debug_assert!(dt_s >= 0.0);
        let target = self.t_s + dt_s;
        if self.enabled {
            // Event-driven update; fluctuators and jump groups are independent,
            // so processing each one's events in its own time order is exact.
            for k in 0..self.tls.len() {
                while self.tls[k].next_flip_s <= target {
                    self.tls[k].excited = !self.tls[k].excited;
                    let wait = exp_wait(self.tls[k].mean_dwell_s, &mut self.rng);
                    self.tls[k].next_flip_s += wait;
                }
            }
            for k in 0..self.jumps.len() {
                while self.jumps[k].next_event_s <= target {
                    let sign = if self.rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };
                    self.jumps[k].accumulated_hz += sign * self.jumps[k].magnitude_hz;
                    let wait = exp_wait(self.jumps[k].mean_interval_s, &mut self.rng);
                    self.jumps[k].next_event_s += wait;
                }
            }
        }
        self.t_s = target;
    }

    /// Freeze a quasi-static snapshot for one shot, consuming process
    /// randomness for the per-shot Gaussian detunings.
    pub fn context(&mut self) -> NoiseContext {
        self.snapshot(true)
    }

    /// Freeze a snapshot carrying only the slow noise components (collective
    /// spread, fluctuators, drift, correlated jumps, exchange jitter) and none
    /// of the per-shot dephasing draws. Tracking measurements average many
    /// shots per point, so the line centre they report rides exactly on these
    /// slow terms.
    pub fn slow_context(&mut self) -> NoiseContext {
        self.snapshot(false)
    }

    fn snapshot(&mut self, include_fast: bool) -> NoiseContext {
        if !self.enabled {
            let mut ctx = NoiseContext::quiet(&self.device);
            ctx.t_s = self.t_s;
            return ctx;
        }
        let mut electron = Vec::with_capacity(self.device.register_count());
        for (r, _) in self.device.registers.iter().enumerate() {
            let mut off = 0.0;
            // Collective slow spread of the register's ESR lines.
            let sigma = self.cfg.collective_esr_sigma_hz[r];
            if sigma > 0.0 {
                off += Normal::new(0.0, sigma).unwrap().sample(&mut self.rng);
            }
            // Electron quasi-static dephasing.
            if include_fast {
                off += dephasing_offset(self.cfg.electron_t2_star_s, &mut self.rng);
            }
            // Discrete fluctuators in their excited state.
            for t in &self.tls {
                if t.register == r && t.excited {
                    off += t.amplitude_hz;
                }
            }
            electron.push(off);
        }
        let mut nuclear: Vec<Vec<f64>> = Vec::with_capacity(self.device.register_count());
        for reg in &self.device.registers {
            let mut per = Vec::with_capacity(reg.nucleus_count());
            for label in &reg.nucleus_labels {
                if include_fast {
                    let t2 = self.cfg.nuclear_t2_star_s[label];
                    per.push(dephasing_offset(t2, &mut self.rng));
                } else {
                    per.push(0.0);
                }
            }
            nuclear.push(per);
        }
        for (r, i, rate) in &self.drift {
            nuclear[*r][*i] += rate * self.t_s;
        }
        for j in &self.jumps {
            for (r, i) in &j.member_indices {
                nuclear[*r][*i] += j.accumulated_hz;
            }
        }
        let exchange = if self.cfg.exchange_jitter_hz > 0.0 {
            Normal::new(0.0, self.cfg.exchange_jitter_hz)
                .unwrap()
                .sample(&mut self.rng)
        } else {
            0.0
        };
        NoiseContext {
            electron_offset_hz: electron,
            nuclear_offset_hz: nuclear,
            exchange_offset_hz: exchange,
            t_s: self.t_s,
        }
    }

    /// Readout model shortcut.
    pub fn readout(&self) -> &crate::config::ReadoutConfig {
        &self.cfg.readout
    }

    /// Current excitation state of each configured fluctuator.
    pub fn tls_states(&self) -> Vec<bool> {
        self.tls.iter().map(|t| t.excited).collect()
    }

    /// Force a fluctuator into a state (diagnostics/known-injection tests).
    pub fn set_tls_state(&mut self, index: usize, excited: bool) {
        self.tls[index].excited = excited;
    }
}

/// Which drive band is loading the spectrometer and which band the victim
/// line belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadChannel {
    NmrOnNmr,
    EsrOnNmr,
    NmrOnEsr,
    EsrOnEsr,
}

/// Off-resonant line-pulling model.
///
/// The NMR-on-NMR channel is quadratic in the drive's absorbed-power proxy:
/// the shift equals `c_victim · A_eq²` where `A_eq` is the amplitude an
/// equal-absorption tone would have at the reference (filler) frequency —
/// `A_eq = filler_amplitude · ρ/ρ_design` with ρ = f_rabi/f_carrier of the
/// active tone. At fixed carrier frequency the shift is therefore quadratic
/// in the physical amplitude, and every tone scheduled at the design ratio
/// produces the identical shift, which is what makes filler compensation
/// exact. The remaining channels interpolate tabulated (amplitude → shift)
/// curves.
#[derive(Debug, Clone)]
pub struct MicrowaveLoad {
    cfg: MicrowaveLoadConfig,
    design_ratio: f64,
    reference_amplitude_v: f64,
}

impl MicrowaveLoad {
    pub fn new(cfg: MicrowaveLoadConfig, design_ratio: f64, reference_amplitude_v: f64) -> Self {
        MicrowaveLoad {
            cfg,
            design_ratio,
            reference_amplitude_v,
        }
    }

    /// Shift of a victim NMR line caused by an NMR tone whose
    /// Rabi-to-carrier ratio is `rho` (0 for no tone).
    pub fn nmr_victim_shift_hz(&self, victim: &str, rho: f64) -> Result<f64> {
        if rho < 0.0 {
            return Err(SimError::Domain("drive ratio must be ≥ 0".into()));
        }
        let c = self.cfg.nmr_on_nmr_hz_per_v2.get(victim).ok_or_else(|| {
            SimError::Shape(format!("no line-pulling coefficient for nucleus {victim}"))
        })?;
        let a_eq = self.reference_amplitude_v * rho / self.design_ratio;
        Ok(c * a_eq * a_eq)
    }

    /// Ratio-form proxy for a tone: ρ = f_rabi/f_carrier.
    pub fn tone_ratio(f_rabi_hz: f64, f_carrier_hz: f64) -> f64 {
        f_rabi_hz / f_carrier_hz
    }

    /// Tabulated channels: linear interpolation of shift(amplitude).
    pub fn curve_shift_hz(&self, channel: LoadChannel, amplitude_v: f64) -> Result<f64> {
        let curve = match channel {
            LoadChannel::EsrOnNmr => &self.cfg.esr_on_nmr_curve_v_hz,
            LoadChannel::NmrOnEsr => &self.cfg.nmr_on_esr_curve_v_hz,
            LoadChannel::EsrOnEsr => &self.cfg.esr_on_esr_curve_v_hz,
            LoadChannel::NmrOnNmr => {
                return Err(SimError::Domain(
                    "the NMR-on-NMR channel is quadratic; use nmr_victim_shift_hz".into(),
                ))
            }
        };
        let (lo, hi) = (curve[0].0, curve[curve.len() - 1].0);
        if amplitude_v < lo || amplitude_v > hi {
            return Err(SimError::Domain(format!(
                "amplitude {amplitude_v} V outside tabulated range [{lo}, {hi}] V"
            )));
        }
        for w in curve.windows(2) {
            let ((a0, s0), (a1, s1)) = (w[0], w[1]);
            if amplitude_v <= a1 {
                let f = (amplitude_v - a0) / (a1 - a0);
                return Ok(s0 + f * (s1 - s0));
            }
        }
        Ok(curve[curve.len() - 1].1)
    }
}
