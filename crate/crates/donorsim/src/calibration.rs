//! Line tracking, collective recalibration, exchange-gap tracking, microwave
//! power budgeting, and conditional-phase calibration.
//!
//! Electron lines of one register drift collectively, so the whole comb is
//! refreshed from a single reference sweep per register (two measurements for
//! the full device). The exchange splitting is tracked as the frequency gap
//! between the two branch lines of the same transition. Microwave power is
//! balanced with off-resonant filler tones so that spectator frequency shifts
//! stay constant while circuits run, and the conditional phase that electron
//! pulses imprint on their spectator branch is measured with a Ramsey-style
//! fringe so it can be compensated in software.

use crate::circuit::{Circuit, CircuitItem, DriveSpec, GateOp};
use crate::circuits::{esr_line_condition, reference_esr_condition};
use crate::config::{BudgetConfig, CalibrationConfig, DriveTableConfig};
use crate::engine::Engine;
use crate::error::{Result, SimError};
use crate::fit::{fit_cosine, fit_gaussian_peak, fit_polynomial_pinned, ScaledPolynomial};
use crate::model::{SpinId, SpinState};
use crate::noise::{LoadChannel, MicrowaveLoad, NoiseContext};
use crate::tomography::marginal_probabilities;
use std::f64::consts::PI;

/// Fit window half-width around the strongest sweep sample, in sweep steps.
/// The response of a repeated-π train is locally symmetric about the line, so
/// a short window centred on the maximum recovers the centre with negligible
/// bias even when the line sits far from the middle of the scanned span.
const FIT_HALF_POINTS: usize = 8;
/// Maximum number of times one tracking call may re-centre its sweep window
/// while walking toward a line that jumped beyond the configured span.
const MAX_SWEEP_PASSES: usize = 6;
/// A sweep whose full trace varies less than this has no line in reach.
const MIN_TRACE_CONTRAST: f64 = 1e-3;
/// A fitted peak must reach at least this response height; sidelobes and
/// distant tails stay well below it.
const MIN_PEAK_HEIGHT: f64 = 0.5;
/// Minimum acceptable Ramsey fringe contrast during phase calibration.
const MIN_FRINGE_CONTRAST: f64 = 0.1;
/// Number of phase samples per calibration fringe.
const PHASE_POINTS: usize = 12;
/// Sweep frequencies within this distance of a tabulated drive row reuse the
/// row's exact parameters instead of the fitted coupling curve.
const ROW_MATCH_TOL_HZ: f64 = 1.0;

// ---------------------------------------------------------------------------
// Frequency sweeps
// ---------------------------------------------------------------------------

/// One recorded fine-frequency sweep: drive frequencies and the exact
/// electron-flip probability at each point.
#[derive(Debug, Clone)]
pub struct SweepTrace {
    pub frequencies_hz: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Sweep a repeated-π drive across one electron line and record the
/// electron-up probability at every step.
///
/// `prelude` runs first (state preparation, e.g. flipping the other
/// electron); the probe is `n_rotations` π pulses on the addressed line with
/// an explicit drive-frequency override, evaluated under the frozen noise
/// context `ctx`.
pub fn sweep_electron_line(
    engine: &Engine,
    ctx: &NoiseContext,
    register: usize,
    pattern: usize,
    other: SpinState,
    prelude: &[GateOp],
    center_hz: f64,
    cfg: &CalibrationConfig,
) -> Result<SweepTrace> {
    let device = engine.device();
    if register >= device.register_count() {
        return Err(SimError::Domain(format!(
            "register {register} out of range"
        )));
    }
    let up_nuclei: Vec<SpinId> = (0..device.registers[register].nucleus_count())
        .filter(|i| (pattern >> i) & 1 == 1)
        .map(|i| SpinId::nucleus(register, i))
        .collect();
    let condition = esr_line_condition(device, register, &up_nuclei, other)?;
    let electron_idx = device.spin_index(SpinId::electron(register))?;
    let steps = (cfg.scan_span_hz / cfg.scan_step_hz).round() as i64;
    let mut frequencies_hz = Vec::with_capacity((2 * steps + 1) as usize);
    let mut probabilities = Vec::with_capacity((2 * steps + 1) as usize);
    for k in -steps..=steps {
        let f = center_hz + k as f64 * cfg.scan_step_hz;
        let probe = GateOp::Rotation {
            target: SpinId::electron(register),
            angle_rad: PI,
            axis_phase_rad: 0.0,
            condition: condition.clone(),
            drive: DriveSpec {
                frequency_hz: Some(f),
                rabi_hz: None,
            },
        };
        let mut circuit = Circuit::new("line-sweep");
        for op in prelude {
            circuit.push(op.clone());
        }
        circuit.push_item(CircuitItem::Repeat {
            times: cfg.n_rotations as usize,
            body: vec![CircuitItem::Op(probe)],
        });
        let state = engine.propagate_pure_with(&circuit, ctx)?;
        let marginal = marginal_probabilities(&state, &[electron_idx]);
        frequencies_hz.push(f);
        probabilities.push(marginal[1]);
    }
    Ok(SweepTrace {
        frequencies_hz,
        probabilities,
    })
}

/// Locate one resonance from repeated sweeps: re-centre while the response
/// maximum sits at the window edge (the line jumped beyond the span), then
/// fit a symmetric peak model to a short window around the strongest sample.
fn locate_peak(center_hz: f64, sweep: impl Fn(f64) -> Result<SweepTrace>) -> Result<f64> {
    let mut center = center_hz;
    for _ in 0..MAX_SWEEP_PASSES {
        let trace = sweep(center)?;
        let n = trace.probabilities.len();
        let (lo, hi) = trace
            .probabilities
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            });
        if hi - lo < MIN_TRACE_CONTRAST {
            return Err(SimError::CalibrationLost(format!(
                "no spectral response in the scanned window around {center:.0} Hz"
            )));
        }
        let i_max = trace
            .probabilities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("sweep trace is non-empty");
        // Too close to an edge for a symmetric fit window: the line lies at or
        // beyond the window boundary, so walk the window toward it.
        if i_max < FIT_HALF_POINTS || i_max + FIT_HALF_POINTS >= n {
            center = trace.frequencies_hz[i_max];
            continue;
        }
        let window = (i_max - FIT_HALF_POINTS)..=(i_max + FIT_HALF_POINTS);
        let fit = fit_gaussian_peak(
            &trace.frequencies_hz[window.clone()],
            &trace.probabilities[window],
        )
        .map_err(|e| SimError::CalibrationLost(format!("peak fit failed: {e}")))?;
        // A genuine π-train resonance flips the probed spin almost completely;
        // sidelobes and far tails top out much lower. Chase the maximum
        // instead of accepting a spurious fit.
        if fit.offset + fit.amplitude < MIN_PEAK_HEIGHT {
            center = trace.frequencies_hz[i_max];
            continue;
        }
        return Ok(fit.center);
    }
    Err(SimError::CalibrationLost(format!(
        "line not found within {MAX_SWEEP_PASSES} re-centred sweeps of {center_hz:.0} Hz"
    )))
}

/// Locate one electron line with re-centred fine sweeps (see [`locate_peak`]).
pub fn track_line(
    engine: &Engine,
    ctx: &NoiseContext,
    register: usize,
    pattern: usize,
    other: SpinState,
    prelude: &[GateOp],
    center_hz: f64,
    cfg: &CalibrationConfig,
) -> Result<f64> {
    locate_peak(center_hz, |c| {
        sweep_electron_line(engine, ctx, register, pattern, other, prelude, c, cfg)
    })
}

/// Measure one register's reference line (all nuclei down, other electron
/// down) with the repeated-π fine sweep.
pub fn track_reference(
    engine: &Engine,
    ctx: &NoiseContext,
    register: usize,
    cfg: &CalibrationConfig,
) -> Result<f64> {
    let center = engine.table().esr_drive_hz(register, 0, SpinState::Down);
    track_line(engine, ctx, register, 0, SpinState::Down, &[], center, cfg)
}

/// Sweep a repeated-π drive across one nuclear line (own electron ⇓) and
/// record the nuclear flip probability at every step. The grid is scaled to
/// the nucleus's tabulated Rabi frequency so the central fringe is resolved:
/// step Ω/20 over ±Ω.
pub fn sweep_nuclear_line(
    engine: &Engine,
    ctx: &NoiseContext,
    register: usize,
    nucleus: usize,
    center_hz: f64,
    n_rotations: u32,
) -> Result<SweepTrace> {
    let device = engine.device();
    let target = SpinId::nucleus(register, nucleus);
    let idx = device.spin_index(target)?;
    let label = device.spin_label(target);
    let row = engine.drive_table().row(&label).ok_or_else(|| {
        SimError::Domain(format!("no drive-table row for nucleus {label}"))
    })?;
    let step = row.f_rabi_hz / 20.0;
    let steps = 20i64;
    let mut frequencies_hz = Vec::with_capacity((2 * steps + 1) as usize);
    let mut probabilities = Vec::with_capacity((2 * steps + 1) as usize);
    for k in -steps..=steps {
        let f = center_hz + k as f64 * step;
        let probe = GateOp::Rotation {
            target,
            angle_rad: PI,
            axis_phase_rad: 0.0,
            condition: crate::circuit::Condition::on(SpinId::electron(register), SpinState::Down),
            drive: DriveSpec {
                frequency_hz: Some(f),
                rabi_hz: None,
            },
        };
        let mut circuit = Circuit::new("nuclear-line-sweep");
        circuit.push_item(CircuitItem::Repeat {
            times: n_rotations as usize,
            body: vec![CircuitItem::Op(probe)],
        });
        let state = engine.propagate_pure_with(&circuit, ctx)?;
        let marginal = marginal_probabilities(&state, &[idx]);
        frequencies_hz.push(f);
        probabilities.push(marginal[1]);
    }
    Ok(SweepTrace {
        frequencies_hz,
        probabilities,
    })
}

/// Locate one nuclear line (own electron ⇓) with re-centred fine sweeps.
pub fn track_nmr_line(
    engine: &Engine,
    ctx: &NoiseContext,
    register: usize,
    nucleus: usize,
    cfg: &CalibrationConfig,
) -> Result<f64> {
    let center = engine
        .table()
        .nmr_drive_hz(register, nucleus, SpinState::Down);
    locate_peak(center, |c| {
        sweep_nuclear_line(engine, ctx, register, nucleus, c, cfg.n_rotations)
    })
}

/// Refresh every stored electron line from one reference measurement per
/// register: the measured references replace the stored ones and the whole
/// comb translates rigidly. Returns the measured reference frequencies (their
/// length is the full measurement cost of the recalibration).
pub fn recalibrate_collective(
    engine: &mut Engine,
    ctx: &NoiseContext,
    cfg: &CalibrationConfig,
) -> Result<Vec<f64>> {
    let registers = engine.device().register_count();
    let mut refs = Vec::with_capacity(registers);
    for r in 0..registers {
        refs.push(track_reference(engine, ctx, r, cfg)?);
    }
    engine.table_mut().collective_recalibrate(&refs, ctx.t_s)?;
    Ok(refs)
}

// ---------------------------------------------------------------------------
// Exchange-gap tracking
// ---------------------------------------------------------------------------

/// Result of one exchange-splitting measurement.
#[derive(Debug, Clone, Copy)]
pub struct ExchangeTrack {
    /// Branch line with the other electron down.
    pub f_low_hz: f64,
    /// Branch line with the other electron up.
    pub f_high_hz: f64,
    /// Gap between the two branches.
    pub exchange_hz: f64,
}

/// Track the exchange splitting of `register`'s reference transition as the
/// gap between its two branch lines, then record it in the table (which
/// rigidly re-seats every other-electron-up line as its down twin plus the
/// gap, halving the lines that ever need direct measurement).
///
/// Run after a collective recalibration: the branch-up sweep prepares the
/// other electron with a π pulse at its stored reference frequency, so stale
/// references degrade the preparation and contaminate the fringe.
pub fn track_exchange(
    engine: &mut Engine,
    ctx: &NoiseContext,
    register: usize,
    cfg: &CalibrationConfig,
) -> Result<ExchangeTrack> {
    let device = engine.device();
    let control = device
        .other_register(register)
        .ok_or_else(|| SimError::Domain("exchange tracking needs two registers".into()))?;
    let flip_control = GateOp::rot_if(
        SpinId::electron(control),
        PI,
        0.0,
        reference_esr_condition(device, control)?,
    );
    let low_center = engine.table().esr_drive_hz(register, 0, SpinState::Down);
    let f_low_hz = track_line(
        engine,
        ctx,
        register,
        0,
        SpinState::Down,
        &[],
        low_center,
        cfg,
    )?;
    let high_center = f_low_hz + engine.table().exchange_hz;
    let f_high_hz = track_line(
        engine,
        ctx,
        register,
        0,
        SpinState::Up,
        &[flip_control],
        high_center,
        cfg,
    )?;
    let exchange_hz = f_high_hz - f_low_hz;
    if !(exchange_hz > 0.0) {
        return Err(SimError::CalibrationLost(format!(
            "branch gap came out non-positive ({exchange_hz} Hz)"
        )));
    }
    engine.table_mut().set_exchange(exchange_hz);
    Ok(ExchangeTrack {
        f_low_hz,
        f_high_hz,
        exchange_hz,
    })
}

// ---------------------------------------------------------------------------
// Conditional-phase calibration
// ---------------------------------------------------------------------------

/// Measured spectator-branch phases of conditional π pulses on one electron.
///
/// Each value is the extra z-phase the spectator branch of the driven line
/// pair accumulates during the π pulse, as seen by a Ramsey fringe. It folds
/// together the off-resonant drive of the idle branch and any systematic
/// miscalibration; compensating it means advancing the frame of subsequent
/// pulses on the spectator branch by the same angle (a virtual-z update).
#[derive(Debug, Clone, Copy)]
pub struct CrotPhaseCal {
    /// Phase picked up by the other-electron-down levels while the π pulse
    /// drives the other-electron-up line.
    pub high_branch_rad: f64,
    /// Phase picked up by the other-electron-up levels while the π pulse
    /// drives the other-electron-down line.
    pub low_branch_rad: f64,
}

fn phase_fringe(
    engine: &Engine,
    ctx: &NoiseContext,
    register: usize,
    test_branch: SpinState,
) -> Result<f64> {
    let device = engine.device();
    let control = device
        .other_register(register)
        .ok_or_else(|| SimError::Domain("phase calibration needs two registers".into()))?;
    let park = test_branch.flipped();
    let park_condition = esr_line_condition(device, register, &[], park)?;
    let test_condition = esr_line_condition(device, register, &[], test_branch)?;
    let electron_idx = device.spin_index(SpinId::electron(register))?;
    let probe = SpinId::electron(register);

    let mut phases = Vec::with_capacity(PHASE_POINTS);
    let mut responses = Vec::with_capacity(PHASE_POINTS);
    for k in 0..PHASE_POINTS {
        let phi = k as f64 * std::f64::consts::TAU / PHASE_POINTS as f64;
        let mut circuit = Circuit::new("phase-fringe");
        if park == SpinState::Up {
            circuit.push(GateOp::rot_if(
                SpinId::electron(control),
                PI,
                0.0,
                reference_esr_condition(device, control)?,
            ));
        }
        circuit.push(GateOp::rot_if(
            probe,
            PI / 2.0,
            0.0,
            park_condition.clone(),
        ));
        circuit.push(GateOp::rot_if(probe, PI, 0.0, test_condition.clone()));
        circuit.push(GateOp::rot_if(probe, PI / 2.0, phi, park_condition.clone()));
        let state = engine.propagate_pure_with(&circuit, ctx)?;
        let marginal = marginal_probabilities(&state, &[electron_idx]);
        phases.push(phi);
        responses.push(marginal[1]);
    }
    let fit = fit_cosine(&phases, &responses)
        .map_err(|e| SimError::CalibrationLost(format!("fringe fit failed: {e}")))?;
    if fit.amplitude < MIN_FRINGE_CONTRAST {
        return Err(SimError::CalibrationLost(format!(
            "fringe contrast {:.3} below the usable threshold",
            fit.amplitude
        )));
    }
    // With both half rotations resonant, the up-probability is
    // (1 + cos(φ − χ))/2 where χ is the spectator phase imprinted between the
    // half rotations — the fitted fringe maximum reads it off directly.
    Ok(fit.phase)
}

/// Measure the spectator-branch phase of the conditional π pulse on
/// `register`'s electron, for both exchange branches.
///
/// Each branch is probed with a Ramsey pair of resonant π/2 rotations around
/// the off-resonant π pulse under test: the other electron is parked so that
/// the π/2 pulses address one branch while the tested π pulse drives the
/// opposite one, and the phase of the closing π/2 pulse is swept to trace the
/// fringe.
pub fn calibrate_crot_phase(
    engine: &Engine,
    ctx: &NoiseContext,
    register: usize,
) -> Result<CrotPhaseCal> {
    Ok(CrotPhaseCal {
        high_branch_rad: phase_fringe(engine, ctx, register, SpinState::Up)?,
        low_branch_rad: phase_fringe(engine, ctx, register, SpinState::Down)?,
    })
}

// ---------------------------------------------------------------------------
// Recalibration cadence
// ---------------------------------------------------------------------------

/// Tracks when the next collective recalibration is due: after a fixed number
/// of experiment runs or a fixed stretch of simulated time, whichever first.
#[derive(Debug, Clone, Copy)]
pub struct RecalibrationClock {
    runs_since_recal: u32,
    last_recal_s: f64,
}

impl RecalibrationClock {
    pub fn new(now_s: f64) -> Self {
        RecalibrationClock {
            runs_since_recal: 0,
            last_recal_s: now_s,
        }
    }

    /// Count one completed experiment run.
    pub fn record_run(&mut self) {
        self.runs_since_recal += 1;
    }

    pub fn runs_since_recal(&self) -> u32 {
        self.runs_since_recal
    }

    /// True when either trigger has elapsed.
    pub fn due(&self, now_s: f64, cfg: &CalibrationConfig) -> bool {
        self.runs_since_recal >= cfg.recal_interval_runs
            || now_s - self.last_recal_s >= cfg.recal_interval_s
    }

    /// Reset both triggers after a recalibration.
    pub fn mark_recalibrated(&mut self, now_s: f64) {
        self.runs_since_recal = 0;
        self.last_recal_s = now_s;
    }
}

// ---------------------------------------------------------------------------
// Constant-absorption drive scheduling
// ---------------------------------------------------------------------------

/// Cubic fit of the nuclear drive coupling (Rabi frequency per source volt)
/// versus carrier frequency, pinned so the idle filler reproduces its
/// tabulated amplitude exactly.
#[derive(Debug, Clone)]
pub struct RabiCouplingFit {
    poly: ScaledPolynomial,
    min_hz: f64,
    max_hz: f64,
}

impl RabiCouplingFit {
    /// Build the shipped fit from the tabulated drive rows: a degree-3
    /// polynomial through the per-row couplings, pinned at the filler
    /// frequency so the filler amplitude is reproduced bit-for-bit.
    pub fn shipped(table: &DriveTableConfig) -> Result<RabiCouplingFit> {
        let xs: Vec<f64> = table.rows.iter().map(|r| r.f_nmr_hz).collect();
        let ys: Vec<f64> = table
            .rows
            .iter()
            .map(|r| r.f_rabi_hz / r.amplitude_v)
            .collect();
        let pin_coupling =
            table.ratio_rabi_to_nmr * table.filler_f_nmr_hz / table.filler_amplitude_v;
        let poly = fit_polynomial_pinned(
            &xs,
            &ys,
            3,
            &[(table.filler_f_nmr_hz, pin_coupling)],
            1e-8,
        )?;
        let mut min_hz = table.filler_f_nmr_hz;
        let mut max_hz = table.filler_f_nmr_hz;
        for &x in &xs {
            min_hz = min_hz.min(x);
            max_hz = max_hz.max(x);
        }
        Ok(RabiCouplingFit {
            poly,
            min_hz,
            max_hz,
        })
    }

    /// Rabi frequency per source volt at the given carrier frequency.
    pub fn coupling_hz_per_v(&self, f_nmr_hz: f64) -> Result<f64> {
        if f_nmr_hz < self.min_hz || f_nmr_hz > self.max_hz {
            return Err(SimError::Domain(format!(
                "carrier {f_nmr_hz} Hz outside the fitted coupling range [{}, {}] Hz",
                self.min_hz, self.max_hz
            )));
        }
        let c = self.poly.eval(f_nmr_hz);
        if !(c > 0.0) {
            return Err(SimError::Domain(format!(
                "fitted coupling is non-positive at {f_nmr_hz} Hz"
            )));
        }
        Ok(c)
    }
}

/// Drive parameters that hold the absorbed-power proxy (Rabi over carrier
/// frequency) at the design ratio: returns `(f_rabi_hz, amplitude_v)`.
///
/// Carriers matching a tabulated row reuse the row's exact parameters; other
/// carriers inside the fitted range take the design-ratio Rabi frequency with
/// the amplitude solved from the fitted coupling curve.
pub fn constant_absorption_schedule(
    table: &DriveTableConfig,
    fit: &RabiCouplingFit,
    f_nmr_hz: f64,
) -> Result<(f64, f64)> {
    if let Some(row) = table
        .rows
        .iter()
        .find(|r| (r.f_nmr_hz - f_nmr_hz).abs() <= ROW_MATCH_TOL_HZ)
    {
        return Ok((row.f_rabi_hz, row.amplitude_v));
    }
    let f_rabi = table.ratio_rabi_to_nmr * f_nmr_hz;
    let amplitude = f_rabi / fit.coupling_hz_per_v(f_nmr_hz)?;
    Ok((f_rabi, amplitude))
}

// ---------------------------------------------------------------------------
// Constant-power tone scheduling
// ---------------------------------------------------------------------------

/// One tone on the nuclear drive channel during one time slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmrTone {
    pub frequency_hz: f64,
    /// Absorbed-power proxy: Rabi frequency over carrier frequency.
    pub ratio: f64,
    pub amplitude_v: f64,
    pub filler: bool,
}

/// One tone on the electron drive channel during one time slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsrTone {
    pub frequency_hz: f64,
    pub amplitude_v: f64,
    pub filler: bool,
}

/// One time slice of the tone schedule. Each channel carries at most one tone
/// by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneSlice {
    pub duration_s: f64,
    pub esr: Option<EsrTone>,
    pub nmr: Option<NmrTone>,
}

/// Time-sliced view of a circuit as per-channel tones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowerSchedule {
    pub slices: Vec<ToneSlice>,
}

impl PowerSchedule {
    /// True when every slice carries exactly one tone on each channel.
    pub fn fully_occupied(&self) -> bool {
        self.slices
            .iter()
            .all(|s| s.esr.is_some() && s.nmr.is_some())
    }

    /// Largest minus smallest microwave-induced shift of the named nuclear
    /// line across slices (both the nuclear-drive and the electron-drive
    /// pulling channels contribute).
    pub fn nmr_shift_span_hz(&self, load: &MicrowaveLoad, victim: &str) -> Result<f64> {
        if self.slices.is_empty() {
            return Ok(0.0);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for slice in &self.slices {
            let mut shift = 0.0;
            if let Some(nmr) = &slice.nmr {
                shift += load.nmr_victim_shift_hz(victim, nmr.ratio)?;
            }
            if let Some(esr) = &slice.esr {
                shift += load.curve_shift_hz(LoadChannel::EsrOnNmr, esr.amplitude_v)?;
            }
            lo = lo.min(shift);
            hi = hi.max(shift);
        }
        Ok(hi - lo)
    }
}

fn schedule_items(
    engine: &Engine,
    items: &[CircuitItem],
    budget: &BudgetConfig,
    fit: &RabiCouplingFit,
    fill: bool,
    out: &mut Vec<ToneSlice>,
) -> Result<()> {
    let table = engine.drive_table();
    let nmr_filler = NmrTone {
        frequency_hz: table.filler_f_nmr_hz,
        ratio: table.ratio_rabi_to_nmr,
        amplitude_v: table.filler_amplitude_v,
        filler: true,
    };
    let esr_filler = EsrTone {
        frequency_hz: budget.filler_esr_frequency_hz,
        amplitude_v: budget.filler_esr_amplitude_v,
        filler: true,
    };
    for item in items {
        match item {
            CircuitItem::Op(op) => match op {
                GateOp::Rotation { target, .. } => {
                    let rp = engine.schedule_rotation(op)?;
                    if rp.duration_s == 0.0 {
                        continue;
                    }
                    let (esr, nmr) = match target.role {
                        crate::model::SpinRole::Electron => (
                            Some(EsrTone {
                                frequency_hz: rp.f_drive_hz,
                                amplitude_v: budget.filler_esr_amplitude_v,
                                filler: false,
                            }),
                            fill.then_some(nmr_filler),
                        ),
                        crate::model::SpinRole::Nucleus(_) => {
                            let (_, amplitude_v) =
                                constant_absorption_schedule(table, fit, rp.f_drive_hz)?;
                            (
                                fill.then_some(esr_filler),
                                Some(NmrTone {
                                    frequency_hz: rp.f_drive_hz,
                                    ratio: table.ratio_rabi_to_nmr,
                                    amplitude_v,
                                    filler: false,
                                }),
                            )
                        }
                    };
                    out.push(ToneSlice {
                        duration_s: rp.duration_s,
                        esr,
                        nmr,
                    });
                }
                GateOp::VirtualZ { .. } => {}
                GateOp::Idle { duration_s } => {
                    if *duration_s > 0.0 {
                        out.push(ToneSlice {
                            duration_s: *duration_s,
                            esr: fill.then_some(esr_filler),
                            nmr: fill.then_some(nmr_filler),
                        });
                    }
                }
                GateOp::InitElectron { .. } | GateOp::MeasureElectron { .. } => {
                    return Err(SimError::Scheduling(
                        "power budgeting covers coherent gate sections; split the circuit at \
                         electron readout boundaries"
                            .into(),
                    ));
                }
            },
            CircuitItem::Repeat { times, body } => {
                for _ in 0..*times {
                    schedule_items(engine, body, budget, fit, fill, out)?;
                }
            }
            CircuitItem::QndMeasure { .. } => {
                return Err(SimError::Scheduling(
                    "power budgeting covers coherent gate sections; split the circuit at \
                     repetitive-readout boundaries"
                        .into(),
                ));
            }
        }
    }
    Ok(())
}

/// Time-slice a coherent circuit into per-channel tones without any filler
/// compensation (idle stretches and the opposite channel stay silent).
pub fn raw_power_schedule(
    engine: &Engine,
    circuit: &Circuit,
    budget: &BudgetConfig,
) -> Result<PowerSchedule> {
    let fit = RabiCouplingFit::shipped(engine.drive_table())?;
    let mut slices = Vec::new();
    schedule_items(engine, &circuit.items, budget, &fit, false, &mut slices)?;
    Ok(PowerSchedule { slices })
}

/// Time-slice a coherent circuit and pad every slice so each channel always
/// carries exactly one tone: real drives keep their slot and the silent
/// channel (or an idle stretch) gets the off-resonant filler. Scheduled
/// nuclear drives sit exactly at the design absorbed-power ratio, so every
/// slice produces the same spectator line shifts as the idle filler does.
pub fn compensate_power_budget(
    engine: &Engine,
    circuit: &Circuit,
    budget: &BudgetConfig,
) -> Result<PowerSchedule> {
    let fit = RabiCouplingFit::shipped(engine.drive_table())?;
    let mut slices = Vec::new();
    schedule_items(engine, &circuit.items, budget, &fit, true, &mut slices)?;
    Ok(PowerSchedule { slices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::nuclear_rot;
    use crate::config::reference_config;
    use crate::engine::{PulseMode, ReadoutMode};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn engine() -> Engine {
        Engine::from_config(reference_config(), PulseMode::Realistic, ReadoutMode::Ideal)
    }

    fn tls_context(engine: &Engine, offsets: [f64; 2]) -> NoiseContext {
        let mut ctx = NoiseContext::quiet(engine.device());
        ctx.electron_offset_hz = vec![offsets[0], offsets[1]];
        ctx
    }

    #[test]
    fn noiseless_reference_tracking_recovers_the_line() {
        let cfg = reference_config();
        let eng = engine();
        let ctx = NoiseContext::quiet(eng.device());
        for r in 0..2 {
            let truth = eng.device().esr_frequency(r, 0, SpinState::Down);
            let est = track_reference(&eng, &ctx, r, &cfg.calibration).unwrap();
            assert!(
                (est - truth).abs() < cfg.calibration.scan_step_hz / 2.0,
                "register {r}: estimate {est} vs truth {truth}"
            );
        }
    }

    #[test]
    fn reference_tracking_follows_line_jumps() {
        let cfg = reference_config();
        let eng = engine();
        // One small jump and one larger than the scan span, which forces the
        // sweep window to walk before it can fit.
        let ctx = tls_context(&eng, [10e3, 45e3]);
        for (r, jump) in [(0usize, 10e3), (1usize, 45e3)] {
            let truth = eng.device().esr_frequency(r, 0, SpinState::Down) + jump;
            let est = track_reference(&eng, &ctx, r, &cfg.calibration).unwrap();
            assert!(
                (est - truth).abs() < cfg.calibration.scan_step_hz / 2.0,
                "register {r}: estimate {est} vs shifted truth {truth}"
            );
        }
    }

    #[test]
    fn nuclear_line_tracking_follows_offsets() {
        let cfg = reference_config();
        let eng = engine();
        let mut ctx = NoiseContext::quiet(eng.device());
        ctx.nuclear_offset_hz[1][2] = 400.0;
        let truth = eng.device().nmr_frequency(1, 2, SpinState::Down) + 400.0;
        let est = track_nmr_line(&eng, &ctx, 1, 2, &cfg.calibration).unwrap();
        let step = eng.drive_table().row("n7").unwrap().f_rabi_hz / 20.0;
        assert!(
            (est - truth).abs() < step / 2.0,
            "estimate {est} vs truth {truth}"
        );
    }

    #[test]
    fn tracking_reports_loss_when_no_line_is_in_reach() {
        let cfg = reference_config();
        let eng = engine();
        let ctx = NoiseContext::quiet(eng.device());
        let far = eng.table().esr_drive_hz(0, 0, SpinState::Down) + 30e6;
        let err = track_line(
            &eng,
            &ctx,
            0,
            0,
            SpinState::Down,
            &[],
            far,
            &cfg.calibration,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::CalibrationLost(_)), "got {err}");
    }

    #[test]
    fn two_measurements_restore_conditional_pulse_fidelity() {
        let cfg = reference_config();
        let ctx_tls = {
            let eng = engine();
            tls_context(&eng, [10e3, 45e3])
        };

        // Probe: flip the first electron, then drive the second electron's
        // line conditioned on the first being up. Any residual detuning of
        // either pulse shows up as lost flip probability.
        let probe = |eng: &Engine, ctx: &NoiseContext| -> f64 {
            let device = eng.device();
            let mut circuit = Circuit::new("conditional-probe");
            circuit.push(GateOp::rot_if(
                SpinId::electron(0),
                PI,
                0.0,
                reference_esr_condition(device, 0).unwrap(),
            ));
            circuit.push(GateOp::rot_if(
                SpinId::electron(1),
                PI,
                0.0,
                esr_line_condition(device, 1, &[], SpinState::Up).unwrap(),
            ));
            let state = eng.propagate_pure_with(&circuit, ctx).unwrap();
            let e1 = device.spin_index(SpinId::electron(1)).unwrap();
            marginal_probabilities(&state, &[e1])[1]
        };

        let eng = engine();
        let quiet = NoiseContext::quiet(eng.device());
        let baseline = probe(&eng, &quiet);
        let degraded = probe(&eng, &ctx_tls);
        assert!(
            baseline - degraded > 1e-3,
            "jumps should visibly degrade the pulse: {baseline} vs {degraded}"
        );

        let mut eng = eng;
        let refs = recalibrate_collective(&mut eng, &ctx_tls, &cfg.calibration).unwrap();
        assert_eq!(refs.len(), 2, "one measurement per register");
        let restored = probe(&eng, &ctx_tls);
        assert!(
            baseline - restored < 1e-4,
            "recalibration should restore the pulse: {baseline} vs {restored}"
        );
    }

    #[test]
    fn exchange_gap_is_immune_to_collective_jumps() {
        let cfg = reference_config();
        let truth = engine().device().exchange_hz();
        let mut estimates = Vec::new();
        for offsets in [[0.0, 0.0], [10e3, 10e3], [0.0, 45e3]] {
            let mut eng = engine();
            let ctx = tls_context(&eng, offsets);
            recalibrate_collective(&mut eng, &ctx, &cfg.calibration).unwrap();
            let track = track_exchange(&mut eng, &ctx, 1, &cfg.calibration).unwrap();
            assert!(
                (track.exchange_hz - truth).abs() < 1e-3,
                "gap {} strays from {truth}",
                track.exchange_hz
            );
            estimates.push(track.exchange_hz);
        }
        for pair in estimates.windows(2) {
            assert!(
                (pair[1] - pair[0]).abs() < 1e-3,
                "gap estimates drift between collective contexts: {estimates:?}"
            );
        }
    }

    #[test]
    fn exchange_estimate_tracks_a_retuned_device() {
        let cfg = reference_config();
        let mut eng = engine();
        // Raise the exchange coupling to 1.690 MHz by re-seating the detuning
        // on the interpolated curve, while the calibration table still holds
        // the old operating point.
        let target_j = 1.690e6;
        let j0: f64 = 1.55e6;
        let j1: f64 = 3.10e6;
        let eps = 0.04 + 0.02 * (target_j / j0).ln() / (j1 / j0).ln();
        let retuned = eng.device().apply_detuning(eps).unwrap();
        assert_relative_eq!(retuned.exchange_hz(), target_j, max_relative = 1e-9);
        eng.set_device(retuned);

        let ctx = NoiseContext::quiet(eng.device());
        recalibrate_collective(&mut eng, &ctx, &cfg.calibration).unwrap();
        let track = track_exchange(&mut eng, &ctx, 1, &cfg.calibration).unwrap();
        assert!(
            (track.exchange_hz - target_j).abs() < cfg.calibration.scan_step_hz,
            "estimate {} vs configured {target_j}",
            track.exchange_hz
        );
        assert_relative_eq!(eng.table().exchange_hz, track.exchange_hz);
        // The re-seated branch lines follow the tracked gap.
        let gap = eng.table().esr_drive_hz(1, 0, SpinState::Up)
            - eng.table().esr_drive_hz(1, 0, SpinState::Down);
        assert_abs_diff_eq!(gap, track.exchange_hz, epsilon = 1e-6);
    }

    #[test]
    fn phase_calibration_recovers_an_injected_error() {
        let quiet = NoiseContext::quiet(engine().device());

        // Ideal pulses have no off-resonant evolution and no injected error:
        // both branch phases vanish.
        let ideal = Engine::from_config(reference_config(), PulseMode::Ideal, ReadoutMode::Ideal);
        let cal = calibrate_crot_phase(&ideal, &quiet, 1).unwrap();
        assert_abs_diff_eq!(cal.high_branch_rad, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cal.low_branch_rad, 0.0, epsilon = 1e-9);

        // Real pulses at the node amplitude imprint an analytic off-resonant
        // phase on the spectator branch: the pulse lasts t = √15/(2J), the
        // dressed precession √(1 + 1/15)·J completes exactly two turns, and
        // the spectator pair is left with the frame-transfer phase
        // 2πJt = π√15 ≡ −π(4 − √15) (mod 2π).
        let eng = engine();
        let base = calibrate_crot_phase(&eng, &quiet, 1).unwrap();
        let expected = PI * (4.0 - 15.0_f64.sqrt());
        assert_abs_diff_eq!(base.high_branch_rad.abs(), expected, epsilon = 1e-6);
        assert_abs_diff_eq!(base.low_branch_rad.abs(), expected, epsilon = 1e-6);

        // A deliberately injected conditional-phase error shifts the fringe by
        // exactly the injected amount.
        let mut skewed = engine();
        skewed.set_crot_phase_error_rad(0.30);
        let cal = calibrate_crot_phase(&skewed, &quiet, 1).unwrap();
        let recovered_high = cal.high_branch_rad - base.high_branch_rad;
        let recovered_low = cal.low_branch_rad - base.low_branch_rad;
        assert_abs_diff_eq!(recovered_high, 0.30, epsilon = 0.02);
        assert_abs_diff_eq!(recovered_low, 0.30, epsilon = 0.02);
    }

    #[test]
    fn recalibration_clock_triggers_on_runs_or_time() {
        let cfg = reference_config();
        let mut clock = RecalibrationClock::new(0.0);
        assert!(!clock.due(1.0, &cfg.calibration));
        for _ in 0..cfg.calibration.recal_interval_runs {
            clock.record_run();
        }
        assert!(clock.due(1.0, &cfg.calibration));
        clock.mark_recalibrated(1.0);
        assert!(!clock.due(2.0, &cfg.calibration));
        assert!(clock.due(1.0 + cfg.calibration.recal_interval_s, &cfg.calibration));
    }

    #[test]
    fn absorption_schedule_matches_the_tabulated_rows() {
        let table = &reference_config().nmr_drive_table;
        let fit = RabiCouplingFit::shipped(table).unwrap();
        for row in &table.rows {
            // Tabulated carriers return the tabulated parameters exactly.
            let (f_rabi, amp) = constant_absorption_schedule(table, &fit, row.f_nmr_hz).unwrap();
            assert_eq!(f_rabi, row.f_rabi_hz);
            assert_eq!(amp, row.amplitude_v);
            // Data self-consistency: every row keeps the design ratio.
            let ratio = row.f_rabi_hz / row.f_nmr_hz;
            assert!(
                (ratio - table.ratio_rabi_to_nmr).abs() < 5.3e-7,
                "row {} ratio {ratio}",
                row.qubit
            );
        }
        // The pinned fit reproduces the idle filler amplitude.
        let (f_rabi, amp) =
            constant_absorption_schedule(table, &fit, table.filler_f_nmr_hz).unwrap();
        assert_relative_eq!(
            f_rabi,
            table.ratio_rabi_to_nmr * table.filler_f_nmr_hz,
            max_relative = 1e-12
        );
        assert_relative_eq!(amp, table.filler_amplitude_v, max_relative = 1e-9);
        // Off-table carriers keep the design ratio with a positive amplitude.
        let (f_mid, a_mid) = constant_absorption_schedule(table, &fit, 30e6).unwrap();
        assert_relative_eq!(f_mid / 30e6, table.ratio_rabi_to_nmr, max_relative = 1e-12);
        assert!(a_mid > 0.0);
        // Out-of-range carriers are refused.
        assert!(constant_absorption_schedule(table, &fit, 10e6).is_err());
        assert!(constant_absorption_schedule(table, &fit, 200e6).is_err());
    }

    #[test]
    fn power_budget_fills_every_slice() {
        let cfg = reference_config();
        let eng = engine();
        let device = eng.device();
        let mut circuit = Circuit::new("budget-probe");
        circuit.push(nuclear_rot(SpinId::nucleus(1, 1), PI, 0.0)); // NMR tone
        circuit.push(GateOp::Idle { duration_s: 5e-6 }); // pure idle
        circuit.push(GateOp::rot_if(
            SpinId::electron(0),
            PI,
            0.0,
            reference_esr_condition(device, 0).unwrap(),
        )); // ESR tone

        let raw = raw_power_schedule(&eng, &circuit, &cfg.noise.microwave_load.budget).unwrap();
        assert_eq!(raw.slices.len(), 3);
        assert!(!raw.fully_occupied());
        assert!(raw.slices[1].esr.is_none() && raw.slices[1].nmr.is_none());

        let plan = compensate_power_budget(&eng, &circuit, &cfg.noise.microwave_load.budget)
            .unwrap();
        assert_eq!(plan.slices.len(), 3);
        assert!(plan.fully_occupied(), "every slice carries both tones");

        // The nuclear-drive slice pairs the real tone with the ESR filler.
        let s0 = &plan.slices[0];
        assert!(!s0.nmr.as_ref().unwrap().filler);
        let esr0 = s0.esr.as_ref().unwrap();
        assert!(esr0.filler);
        assert_eq!(
            esr0.frequency_hz,
            cfg.noise.microwave_load.budget.filler_esr_frequency_hz
        );
        // The idle slice carries both fillers, the NMR one at the tabulated
        // idle parameters.
        let s1 = &plan.slices[1];
        let nmr1 = s1.nmr.as_ref().unwrap();
        assert!(nmr1.filler && s1.esr.as_ref().unwrap().filler);
        assert_eq!(nmr1.frequency_hz, cfg.nmr_drive_table.filler_f_nmr_hz);
        assert_eq!(nmr1.amplitude_v, cfg.nmr_drive_table.filler_amplitude_v);
        // The electron-drive slice pairs the real tone with the NMR filler.
        let s2 = &plan.slices[2];
        assert!(!s2.esr.as_ref().unwrap().filler);
        assert!(s2.nmr.as_ref().unwrap().filler);

        // Measurement items are refused.
        let mut with_readout = circuit.clone();
        with_readout.push(GateOp::MeasureElectron { register: 0 });
        assert!(
            compensate_power_budget(&eng, &with_readout, &cfg.noise.microwave_load.budget)
                .is_err()
        );
    }

    #[test]
    fn compensation_pins_spectator_shifts_exactly() {
        let cfg = reference_config();
        let eng = engine();
        let load = MicrowaveLoad::new(
            cfg.noise.microwave_load.clone(),
            cfg.nmr_drive_table.ratio_rabi_to_nmr,
            cfg.nmr_drive_table.filler_amplitude_v,
        );
        let mut circuit = Circuit::new("shift-probe");
        circuit.push(nuclear_rot(SpinId::nucleus(0, 0), PI, 0.0));
        circuit.push(GateOp::Idle { duration_s: 20e-6 });
        circuit.push(nuclear_rot(SpinId::nucleus(1, 4), PI / 2.0, 0.0));

        let budget = &cfg.noise.microwave_load.budget;
        let raw = raw_power_schedule(&eng, &circuit, budget).unwrap();
        let plan = compensate_power_budget(&eng, &circuit, budget).unwrap();
        for victim in ["n2", "n7"] {
            let before = raw.nmr_shift_span_hz(&load, victim).unwrap();
            let after = plan.nmr_shift_span_hz(&load, victim).unwrap();
            assert!(before > 0.0, "uncompensated spans must differ for {victim}");
            assert_eq!(after, 0.0, "compensated span must vanish for {victim}");
        }
    }
}
