//! Randomized benchmarking: random element sequences with a computed
//! inversion element, executed twice per sequence — once from the reference
//! preparation and once from the fully flipped one — so the difference
//! signal decays as A·pⁿ with no readout-offset term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::bootstrap::{decay_rate_sigma, fit_points, ratio_sigma};
use crate::circuit::{Circuit, Condition, GateOp};
use crate::circuits::{local_cz, nuclear_rot, qnd_read};
use crate::clifford::CliffordGroup;
use crate::decompose::{CompiledGroup, NativeOp};
use crate::engine::Engine;
use crate::error::{Result, SimError};
use crate::fit::DecayFit;
use crate::model::SpinId;
use crate::noise::NoiseProcess;
use crate::tomography::marginal_probabilities;

use std::f64::consts::{FRAC_PI_2, PI};

/// Difference-signal samples at one sequence length.
#[derive(Debug, Clone)]
pub struct RbPoint {
    pub length: usize,
    /// One bright-minus-dark survival difference per random sequence.
    pub diffs: Vec<f64>,
}

impl RbPoint {
    pub fn mean(&self) -> f64 {
        self.diffs.iter().sum::<f64>() / self.diffs.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct RbConfig {
    /// Random-element counts per sequence (the inversion element is extra).
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    pub seed: u64,
    /// Bootstrap resamples for the uncertainty estimate.
    pub resamples: usize,
}

impl Default for RbConfig {
    fn default() -> Self {
        RbConfig {
            lengths: vec![1, 2, 4, 8, 16, 32, 64, 128],
            sequences_per_length: 24,
            seed: 1,
            resamples: 160,
        }
    }
}

/// Executes one benchmarking sequence (inversion element already appended)
/// and reports the bright and dark survival probabilities.
pub trait RbBackend {
    fn n_qubits(&self) -> usize;
    fn survival(&mut self, word: &[usize]) -> Result<(f64, f64)>;
}

#[derive(Debug, Clone)]
pub struct RbOutcome {
    pub points: Vec<RbPoint>,
    pub decay: DecayFit,
    pub rate_sigma: f64,
    /// Mean fidelity of one group element implied by the decay.
    pub element_fidelity: f64,
    pub n_qubits: usize,
}

fn element_fidelity(rate: f64, n_qubits: usize) -> f64 {
    let d = (1usize << n_qubits) as f64;
    (1.0 + (d - 1.0) * rate) / d
}

/// Convert an element-level fidelity into a per-gate figure given the mean
/// number of gates per element.
pub fn per_gate_fidelity(element_fid: f64, gates_per_element: f64) -> f64 {
    1.0 - (1.0 - element_fid) / gates_per_element
}

fn draw_words(
    group: &CliffordGroup,
    cfg: &RbConfig,
    interleave: Option<usize>,
    seed: u64,
) -> Vec<(usize, Vec<usize>)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut words = Vec::new();
    for &length in &cfg.lengths {
        for _ in 0..cfg.sequences_per_length {
            let mut word = Vec::with_capacity(2 * length + 1);
            for _ in 0..length {
                word.push(rng.gen_range(0..group.len()));
                if let Some(gate) = interleave {
                    word.push(gate);
                }
            }
            let total = group.compose_word(&word);
            word.push(group.inverse(total));
            words.push((length, word));
        }
    }
    words
}

fn collect_points<B: RbBackend + ?Sized>(
    group: &CliffordGroup,
    backend: &mut B,
    cfg: &RbConfig,
    interleave: Option<usize>,
    seed: u64,
) -> Result<Vec<RbPoint>> {
    let mut points: Vec<RbPoint> = cfg
        .lengths
        .iter()
        .map(|&length| RbPoint {
            length,
            diffs: Vec::with_capacity(cfg.sequences_per_length),
        })
        .collect();
    for (length, word) in draw_words(group, cfg, interleave, seed) {
        let (bright, dark) = backend.survival(&word)?;
        let point = points
            .iter_mut()
            .find(|p| p.length == length)
            .expect("length exists");
        point.diffs.push(bright - dark);
    }
    Ok(points)
}

/// Run reference benchmarking and fit the decay.
pub fn run_rb<B: RbBackend + ?Sized>(
    group: &CliffordGroup,
    backend: &mut B,
    cfg: &RbConfig,
) -> Result<RbOutcome> {
    if cfg.lengths.len() < 3 {
        return Err(SimError::Experiment(
            "benchmarking needs at least 3 sequence lengths".into(),
        ));
    }
    let points = collect_points(group, backend, cfg, None, cfg.seed)?;
    let decay = fit_points(&points)?;
    let rate_sigma = decay_rate_sigma(&points, cfg.resamples, cfg.seed ^ 0xb007)?;
    Ok(RbOutcome {
        decay,
        rate_sigma,
        element_fidelity: element_fidelity(decay.rate, backend.n_qubits()),
        n_qubits: backend.n_qubits(),
        points,
    })
}

#[derive(Debug, Clone)]
pub struct InterleavedOutcome {
    pub reference: RbOutcome,
    pub interleaved: RbOutcome,
    /// p_interleaved / p_reference, clamped into [0, 1].
    pub ratio: f64,
    pub ratio_sigma: f64,
    /// True when the raw ratio exceeded 1 and was clamped.
    pub clamped: bool,
    /// Fidelity of the interleaved gate implied by the clamped ratio.
    pub gate_fidelity: f64,
}

/// Clamp an interleaved/reference decay ratio into the physical range.
pub fn clamp_ratio(raw: f64) -> (f64, bool) {
    if raw > 1.0 {
        (1.0, true)
    } else {
        (raw.max(0.0), raw < 0.0)
    }
}

/// Interleaved benchmarking of one group element.
pub fn run_interleaved<B: RbBackend + ?Sized>(
    group: &CliffordGroup,
    backend: &mut B,
    cfg: &RbConfig,
    gate: usize,
) -> Result<InterleavedOutcome> {
    let reference = run_rb(group, backend, cfg)?;
    let points = collect_points(group, backend, cfg, Some(gate), cfg.seed ^ 0x17)?;
    let decay = fit_points(&points)?;
    let rate_sigma = decay_rate_sigma(&points, cfg.resamples, cfg.seed ^ 0x17b7)?;
    let interleaved = RbOutcome {
        decay,
        rate_sigma,
        element_fidelity: element_fidelity(decay.rate, backend.n_qubits()),
        n_qubits: backend.n_qubits(),
        points,
    };
    let raw = interleaved.decay.rate / reference.decay.rate;
    let (ratio, clamped) = clamp_ratio(raw);
    let ratio_sigma = ratio_sigma(
        &reference.points,
        &interleaved.points,
        cfg.resamples,
        cfg.seed ^ 0x5151,
    )?;
    Ok(InterleavedOutcome {
        gate_fidelity: element_fidelity(ratio, backend.n_qubits()),
        reference,
        interleaved,
        ratio,
        ratio_sigma,
        clamped,
    })
}

/// Analytic backend: every element applies a uniform depolarizing channel,
/// one element may carry an extra factor, and readout applies an asymmetric
/// classical flip. Survival probabilities are exact when `shots` is 0 and
/// binomially sampled otherwise.
pub struct DepolarizingBackend {
    pub n_qubits: usize,
    /// Polarization retained per element.
    pub lambda: f64,
    /// One element may carry its own polarization factor in place of the
    /// uniform one (the interleaved-gate oracle).
    pub tagged: Option<(usize, f64)>,
    /// P(flip) for a qubit read from the bright and dark levels.
    pub readout_flip: (f64, f64),
    pub shots: usize,
    rng: ChaCha12Rng,
}

impl DepolarizingBackend {
    pub fn new(n_qubits: usize, lambda: f64, seed: u64) -> Self {
        DepolarizingBackend {
            n_qubits,
            lambda,
            tagged: None,
            readout_flip: (0.0, 0.0),
            shots: 0,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    fn sample(&mut self, p: f64) -> f64 {
        if self.shots == 0 {
            return p;
        }
        let mut hits = 0usize;
        for _ in 0..self.shots {
            if self.rng.gen_bool(p.clamp(0.0, 1.0)) {
                hits += 1;
            }
        }
        hits as f64 / self.shots as f64
    }
}

impl RbBackend for DepolarizingBackend {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn survival(&mut self, word: &[usize]) -> Result<(f64, f64)> {
        let d = (1usize << self.n_qubits) as f64;
        let mut polarization = 1.0f64;
        for &w in word {
            polarization *= match self.tagged {
                Some((gate, q)) if w == gate => q,
                _ => self.lambda,
            };
        }
        // Probability that every qubit reads its prepared level, before
        // readout errors: the sequence inverts to the identity, so the ideal
        // survival is 1 (bright) and 0 probability of landing back on the
        // reference state when fully flipped (dark) — apart from the
        // depolarized remainder 1/d.
        let bright_state = polarization + (1.0 - polarization) / d;
        let dark_state = (1.0 - polarization) / d;
        // Asymmetric per-qubit readout flips applied to the survival event.
        let (f_bright, f_dark) = self.readout_flip;
        let read_true = (1.0 - f_bright).powi(self.n_qubits as i32);
        // A flipped register reading as the reference requires every qubit
        // to misread; for the depolarized remainder use the dominant term
        // only when flips are small.
        let bright = bright_state * read_true + dark_state * f_dark.powi(self.n_qubits as i32);
        let dark = dark_state * read_true + bright_state * f_dark.powi(self.n_qubits as i32);
        Ok((self.sample(bright), self.sample(dark)))
    }
}

/// Pulse-level backend on nuclear qubits: each group element is expanded
/// through its compiled native sequence into conditional rotations, frame
/// z-rotations, and (for pairs) the shared-electron conditional-phase gate.
pub struct PulseBackend<'a> {
    engine: &'a Engine,
    compiled: &'a CompiledGroup,
    targets: Vec<SpinId>,
    /// 0 = exact survival probabilities from pure propagation.
    pub shots: usize,
    noise: NoiseProcess,
    call_seed: u64,
}

impl<'a> PulseBackend<'a> {
    pub fn new(
        engine: &'a Engine,
        compiled: &'a CompiledGroup,
        targets: Vec<SpinId>,
        noise: NoiseProcess,
        seed: u64,
    ) -> Result<Self> {
        if targets.is_empty() || targets.len() > 2 {
            return Err(SimError::Experiment(
                "pulse benchmarking supports 1 or 2 nuclear targets".into(),
            ));
        }
        Ok(PulseBackend {
            engine,
            compiled,
            targets,
            shots: 0,
            noise,
            call_seed: seed,
        })
    }

    fn native_gate(&self, op: NativeOp) -> Result<GateOp> {
        Ok(match op {
            NativeOp::FrameZ { qubit, angle_rad } => GateOp::VirtualZ {
                target: self.targets[qubit],
                angle_rad,
                condition: Condition::free(),
            },
            NativeOp::HalfY { qubit } => nuclear_rot(self.targets[qubit], FRAC_PI_2, FRAC_PI_2),
            NativeOp::Entangle => local_cz(self.engine.device(), &self.targets)?,
        })
    }

    fn sequence_circuit(&self, word: &[usize], flipped: bool) -> Result<Circuit> {
        let mut circuit = Circuit::new(if flipped { "rb dark" } else { "rb bright" });
        if flipped {
            for &t in &self.targets {
                circuit.push(nuclear_rot(t, PI, FRAC_PI_2));
            }
        }
        for &element in word {
            for &op in &self.compiled.sequence(element).ops {
                circuit.push(self.native_gate(op)?);
            }
        }
        Ok(circuit)
    }

    /// Probability that every target reads its reference (down) level.
    fn reference_probability(&mut self, circuit: &mut Circuit) -> Result<f64> {
        let positions: Vec<usize> = self
            .targets
            .iter()
            .map(|&t| self.engine.device().spin_index(t))
            .collect::<Result<_>>()?;
        if self.shots == 0 {
            let state = self.engine.propagate_pure(circuit)?;
            return Ok(marginal_probabilities(&state, &positions)[0]);
        }
        let cycles = self.engine.qnd_config().default_cycles;
        for &t in &self.targets {
            circuit.push_item(qnd_read(t, cycles)?);
        }
        self.call_seed = self.call_seed.wrapping_add(1);
        let records = self
            .engine
            .run_shots(circuit, self.shots, self.call_seed, &mut self.noise)?;
        let mut kept = 0usize;
        let mut down = 0usize;
        for rec in &records {
            if rec.any_rejected() {
                continue;
            }
            kept += 1;
            if rec.nuclear_reads.iter().all(|r| !r.up) {
                down += 1;
            }
        }
        if kept == 0 {
            return Err(SimError::Experiment(
                "all benchmarking shots were rejected".into(),
            ));
        }
        Ok(down as f64 / kept as f64)
    }
}

impl RbBackend for PulseBackend<'_> {
    fn n_qubits(&self) -> usize {
        self.targets.len()
    }

    fn survival(&mut self, word: &[usize]) -> Result<(f64, f64)> {
        let mut bright = self.sequence_circuit(word, false)?;
        let mut dark = self.sequence_circuit(word, true)?;
        Ok((
            self.reference_probability(&mut bright)?,
            self.reference_probability(&mut dark)?,
        ))
    }
}
