//! Circuit representation: conditioned single-spin rotations, virtual-Z
//! bookkeeping, electron initialize/measure, idles, and repeated QND blocks.
//!
//! Conditions name the required states of other spins. In ideal execution a
//! condition restricts the subspace the rotation acts on; in realistic
//! execution it selects which spectral line the drive is tuned to, and physics
//! decides what actually rotates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{DeviceModel, SpinId, SpinState};

/// Required state of one spin, as part of a pulse condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionTerm {
    pub spin: SpinId,
    pub state: SpinState,
}

/// Conjunction of single-spin requirements (empty = unconditional).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub terms: Vec<ConditionTerm>,
}

impl Condition {
    pub fn free() -> Self {
        Condition { terms: Vec::new() }
    }

    pub fn on(spin: SpinId, state: SpinState) -> Self {
        Condition {
            terms: vec![ConditionTerm { spin, state }],
        }
    }

    pub fn and(mut self, spin: SpinId, state: SpinState) -> Self {
        self.terms.push(ConditionTerm { spin, state });
        self
    }

    pub fn is_free(&self) -> bool {
        self.terms.is_empty()
    }

    /// (mask, bits) over flat spin indices for subspace selection.
    pub fn mask_bits(&self, model: &DeviceModel) -> Result<(usize, usize)> {
        let mut mask = 0usize;
        let mut bits = 0usize;
        for t in &self.terms {
            let idx = model.spin_index(t.spin)?;
            let bit = 1usize << idx;
            if mask & bit != 0 {
                return Err(SimError::Circuit(format!(
                    "duplicate condition on spin {}",
                    model.spin_label(t.spin)
                )));
            }
            mask |= bit;
            if t.state == SpinState::Up {
                bits |= bit;
            }
        }
        Ok((mask, bits))
    }
}

/// Optional overrides for how a rotation is driven.
///
/// `frequency_hz` replaces the line frequency the scheduler would look up —
/// the rotating frame stays on the calibrated line, so the difference shows up
/// as a programmed detuning. `rabi_hz` overrides the amplitude chosen by the
/// scheduler's angle/selectivity rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rabi_hz: Option<f64>,
}

impl DriveSpec {
    pub fn is_default(&self) -> bool {
        self.frequency_hz.is_none() && self.rabi_hz.is_none()
    }
}

/// One primitive operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GateOp {
    /// Resonant rotation of `target` by `angle_rad` about the equatorial axis
    /// at `axis_phase_rad` (0 = +x, π/2 = +y), conditioned on `condition`.
    Rotation {
        target: SpinId,
        angle_rad: f64,
        axis_phase_rad: f64,
        condition: Condition,
        #[serde(default, skip_serializing_if = "DriveSpec::is_default")]
        drive: DriveSpec,
    },
    /// Frame update: z-rotation by `angle_rad` on `target`, restricted to
    /// `condition`; costs no pulse time.
    VirtualZ {
        target: SpinId,
        angle_rad: f64,
        condition: Condition,
    },
    /// Deterministically reload the named electron into its down state.
    InitElectron { register: usize },
    /// Single-shot readout of the named electron (records a classical bit).
    MeasureElectron { register: usize },
    /// Free evolution for a fixed duration.
    Idle { duration_s: f64 },
}

impl GateOp {
    /// Unconditional rotation.
    pub fn rot(target: SpinId, angle_rad: f64, axis_phase_rad: f64) -> Self {
        GateOp::Rotation {
            target,
            angle_rad,
            axis_phase_rad,
            condition: Condition::free(),
            drive: DriveSpec::default(),
        }
    }

    /// Conditioned rotation.
    pub fn rot_if(target: SpinId, angle_rad: f64, axis_phase_rad: f64, condition: Condition) -> Self {
        GateOp::Rotation {
            target,
            angle_rad,
            axis_phase_rad,
            condition,
            drive: DriveSpec::default(),
        }
    }

    pub fn target_spin(&self) -> Option<SpinId> {
        match self {
            GateOp::Rotation { target, .. } | GateOp::VirtualZ { target, .. } => Some(*target),
            GateOp::InitElectron { register } | GateOp::MeasureElectron { register } => {
                Some(SpinId::electron(*register))
            }
            GateOp::Idle { .. } => None,
        }
    }
}

/// A circuit item: a plain op, or a structured block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CircuitItem {
    Op(GateOp),
    /// Repeat the body a fixed number of times.
    Repeat { times: usize, body: Vec<CircuitItem> },
    /// Repetitive single-nucleus readout: `cycles` rounds, each round applying
    /// the conditional pulse block and measuring the electron, accumulating a
    /// majority vote for the nucleus named by `nucleus`.
    QndMeasure {
        register: usize,
        nucleus: usize,
        cycles: usize,
    },
}

/// Ordered list of circuit items plus a human-readable label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub label: String,
    pub items: Vec<CircuitItem>,
}

impl Circuit {
    pub fn new(label: impl Into<String>) -> Self {
        Circuit {
            label: label.into(),
            items: Vec::new(),
        }
    }

    pub fn push(&mut self, op: GateOp) {
        self.items.push(CircuitItem::Op(op));
    }

    pub fn push_item(&mut self, item: CircuitItem) {
        self.items.push(item);
    }

    pub fn extend_ops(&mut self, ops: impl IntoIterator<Item = GateOp>) {
        for op in ops {
            self.push(op);
        }
    }

    /// Number of physical pulses (rotations), descending into blocks.
    pub fn pulse_count(&self) -> usize {
        fn count(items: &[CircuitItem]) -> usize {
            items
                .iter()
                .map(|it| match it {
                    CircuitItem::Op(GateOp::Rotation { .. }) => 1,
                    CircuitItem::Op(_) => 0,
                    CircuitItem::Repeat { times, body } => times * count(body),
                    CircuitItem::QndMeasure { .. } => 0,
                })
                .sum()
        }
        count(&self.items)
    }

    /// Flatten `Repeat` blocks into a plain op list (QND blocks are kept as
    /// opaque items and refuse flattening).
    pub fn flattened_ops(&self) -> Result<Vec<GateOp>> {
        fn walk(items: &[CircuitItem], out: &mut Vec<GateOp>) -> Result<()> {
            for it in items {
                match it {
                    CircuitItem::Op(op) => out.push(op.clone()),
                    CircuitItem::Repeat { times, body } => {
                        for _ in 0..*times {
                            walk(body, out)?;
                        }
                    }
                    CircuitItem::QndMeasure { .. } => {
                        return Err(SimError::Circuit(
                            "repetitive-readout blocks cannot be flattened to plain ops".into(),
                        ))
                    }
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        walk(&self.items, &mut out)?;
        Ok(out)
    }

    /// Render as a line-oriented text listing (one op per line), used for
    /// golden tests and `--dump-circuit`-style debugging output.
    pub fn to_text(&self, model: &DeviceModel) -> String {
        fn cond_text(c: &Condition, model: &DeviceModel) -> String {
            if c.is_free() {
                String::new()
            } else {
                let parts: Vec<String> = c
                    .terms
                    .iter()
                    .map(|t| {
                        format!(
                            "{}={}",
                            model.spin_label(t.spin),
                            match t.state {
                                SpinState::Up => "up",
                                SpinState::Down => "down",
                            }
                        )
                    })
                    .collect();
                format!(" if {}", parts.join("&"))
            }
        }
        fn op_text(op: &GateOp, model: &DeviceModel) -> String {
            match op {
                GateOp::Rotation {
                    target,
                    angle_rad,
                    axis_phase_rad,
                    condition,
                    drive,
                } => {
                    let mut s = format!(
                        "rot {} angle={:.6} axis={:.6}{}",
                        model.spin_label(*target),
                        angle_rad,
                        axis_phase_rad,
                        cond_text(condition, model)
                    );
                    if let Some(f) = drive.frequency_hz {
                        s.push_str(&format!(" freq={f:.3}"));
                    }
                    if let Some(fr) = drive.rabi_hz {
                        s.push_str(&format!(" rabi={fr:.3}"));
                    }
                    s
                }
                GateOp::VirtualZ {
                    target,
                    angle_rad,
                    condition,
                } => format!(
                    "vz {} angle={:.6}{}",
                    model.spin_label(*target),
                    angle_rad,
                    cond_text(condition, model)
                ),
                GateOp::InitElectron { register } => format!("init e{}", register + 1),
                GateOp::MeasureElectron { register } => format!("measure e{}", register + 1),
                GateOp::Idle { duration_s } => format!("idle {duration_s:.9}"),
            }
        }
        fn walk(items: &[CircuitItem], model: &DeviceModel, indent: usize, out: &mut String) {
            let pad = "  ".repeat(indent);
            for it in items {
                match it {
                    CircuitItem::Op(op) => {
                        out.push_str(&pad);
                        out.push_str(&op_text(op, model));
                        out.push('\n');
                    }
                    CircuitItem::Repeat { times, body } => {
                        out.push_str(&format!("{pad}repeat {times}\n"));
                        walk(body, model, indent + 1, out);
                        out.push_str(&format!("{pad}end\n"));
                    }
                    CircuitItem::QndMeasure {
                        register,
                        nucleus,
                        cycles,
                    } => {
                        out.push_str(&format!(
                            "{pad}qnd-read {} cycles={cycles}\n",
                            model.spin_label(SpinId::nucleus(*register, *nucleus))
                        ));
                    }
                }
            }
        }
        let mut out = format!("# {}\n", self.label);
        walk(&self.items, model, 0, &mut out);
        out
    }
}
