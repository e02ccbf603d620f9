//! Named circuit builders: Bell pairs, GHZ chains, coherence probes.
//!
//! All builders target the protocol idiom of the device: nuclear rotations
//! are driven with the register electron parked ⇓, single-register
//! entanglement uses the geometric conditional-phase trick (a 2π electron
//! rotation on one fully-specified resonance line flips the sign of exactly
//! that nuclear branch), and cross-register entanglement first maps a
//! nuclear state onto its electron with π rotations so the 2π rotation on
//! the other electron can discriminate it through the exchange splitting.

use crate::circuit::{Circuit, CircuitItem, Condition, DriveSpec, GateOp};
use crate::error::{Result, SimError};
use crate::model::{DeviceModel, SpinId, SpinRole, SpinState};

const PI: f64 = std::f64::consts::PI;
const TAU: f64 = 2.0 * PI;

/// The electron sharing a register with `spin`.
pub fn electron_of(spin: SpinId) -> SpinId {
    SpinId::electron(spin.register)
}

/// Rotation of one nucleus with its register electron pinned ⇓.
pub fn nuclear_rot(target: SpinId, angle_rad: f64, axis_phase_rad: f64) -> GateOp {
    GateOp::rot_if(
        target,
        angle_rad,
        axis_phase_rad,
        Condition::on(electron_of(target), SpinState::Down),
    )
}

/// Fully-specified electron-line condition: the listed nuclei of `register`
/// are pinned ⇑, every other nucleus of the register ⇓, and (in a two-register
/// device) the other electron to `other`.
pub fn esr_line_condition(
    device: &DeviceModel,
    register: usize,
    up_nuclei: &[SpinId],
    other: SpinState,
) -> Result<Condition> {
    if register >= device.register_count() {
        return Err(SimError::Circuit(format!(
            "register {register} out of range"
        )));
    }
    let mut up_mask = 0usize;
    for id in up_nuclei {
        match id.role {
            SpinRole::Nucleus(i) if id.register == register => {
                if up_mask & (1 << i) != 0 {
                    return Err(SimError::Circuit(format!(
                        "nucleus {} listed twice",
                        device.spin_label(*id)
                    )));
                }
                up_mask |= 1 << i;
            }
            _ => {
                return Err(SimError::Circuit(format!(
                    "{} is not a nucleus of register {register}",
                    device.spin_label(*id)
                )));
            }
        }
    }
    let mut cond = Condition::free();
    for i in 0..device.registers[register].nucleus_count() {
        let state = if up_mask & (1 << i) != 0 {
            SpinState::Up
        } else {
            SpinState::Down
        };
        cond = cond.and(SpinId::nucleus(register, i), state);
    }
    if device.register_count() == 2 {
        cond = cond.and(SpinId::electron(1 - register), other);
    }
    Ok(cond)
}

/// Ground-pattern electron-line condition (all nuclei ⇓, other electron ⇓):
/// the reference line electron rotations are scheduled on by default.
pub fn reference_esr_condition(device: &DeviceModel, register: usize) -> Result<Condition> {
    esr_line_condition(device, register, &[], SpinState::Down)
}

/// Conditional-phase gate between nuclear branches of one register: a 2π
/// electron rotation on the line where every nucleus in `ups` is ⇑ (the rest
/// ⇓, the other electron ⇓). Exactly that branch acquires a sign flip.
pub fn local_cz(device: &DeviceModel, ups: &[SpinId]) -> Result<GateOp> {
    if ups.is_empty() {
        return Err(SimError::Circuit(
            "conditional-phase gate needs at least one nucleus".into(),
        ));
    }
    let register = ups[0].register;
    if ups.iter().any(|id| id.register != register) {
        return Err(SimError::Circuit(
            "single-register conditional phase given nuclei from both registers".into(),
        ));
    }
    let cond = esr_line_condition(device, register, ups, SpinState::Down)?;
    Ok(GateOp::rot_if(SpinId::electron(register), TAU, 0.0, cond))
}

/// Conditional-phase gate between nuclear branches of different registers:
/// −1 exactly on the branch where all of `proj_ups` (one register) and all of
/// `drive_ups` (the other) are ⇑.
///
/// Implementation: π rotations on the projection-side electron (conditioned
/// on the `proj_ups` ⇑ line) sandwich a 2π rotation of the other electron
/// (conditioned on the `drive_ups` ⇑ line with the first electron ⇑); the
/// leftover sign from the two π rotations is retired with a virtual-Z.
/// When `proj_ups` has several nuclei they must move collectively (as in a
/// growing GHZ branch) for the virtual-Z correction on the first of them to
/// represent the whole branch.
pub fn nonlocal_cz(
    device: &DeviceModel,
    proj_ups: &[SpinId],
    drive_ups: &[SpinId],
) -> Result<Vec<GateOp>> {
    if proj_ups.is_empty() || drive_ups.is_empty() {
        return Err(SimError::Circuit(
            "cross-register conditional phase needs nuclei on both sides".into(),
        ));
    }
    let rp = proj_ups[0].register;
    let rd = drive_ups[0].register;
    if rp == rd {
        return Err(SimError::Circuit(
            "cross-register conditional phase given nuclei of a single register".into(),
        ));
    }
    let project = GateOp::rot_if(
        SpinId::electron(rp),
        PI,
        0.0,
        esr_line_condition(device, rp, proj_ups, SpinState::Down)?,
    );
    let phase = GateOp::rot_if(
        SpinId::electron(rd),
        TAU,
        0.0,
        esr_line_condition(device, rd, drive_ups, SpinState::Up)?,
    );
    Ok(vec![
        project.clone(),
        phase,
        project,
        GateOp::VirtualZ {
            target: proj_ups[0],
            angle_rad: PI,
            condition: Condition::free(),
        },
    ])
}

/// The four maximally entangled two-qubit states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BellKind {
    /// (⇓⇓ + ⇑⇑)/√2
    PhiPlus,
    /// (⇓⇓ − ⇑⇑)/√2
    PhiMinus,
    /// (⇓⇑ + ⇑⇓)/√2
    PsiPlus,
    /// (⇓⇑ − ⇑⇓)/√2
    PsiMinus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [
        BellKind::PhiPlus,
        BellKind::PhiMinus,
        BellKind::PsiPlus,
        BellKind::PsiMinus,
    ];

    /// Signs of the two preparation half-rotations (first qubit, second).
    fn prep_signs(self) -> (f64, f64) {
        match self {
            BellKind::PhiPlus => (1.0, -1.0),
            BellKind::PhiMinus => (-1.0, -1.0),
            BellKind::PsiPlus => (1.0, 1.0),
            BellKind::PsiMinus => (-1.0, 1.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BellKind::PhiPlus => "phi_plus",
            BellKind::PhiMinus => "phi_minus",
            BellKind::PsiPlus => "psi_plus",
            BellKind::PsiMinus => "psi_minus",
        }
    }
}

/// Prepare a Bell state between nuclei `a` and `b` from the all-⇓ ground
/// state. Same-register pairs use the single-register conditional phase;
/// cross-register pairs project `a` through its electron.
pub fn bell_prepare(
    device: &DeviceModel,
    a: SpinId,
    b: SpinId,
    kind: BellKind,
) -> Result<Circuit> {
    if a == b {
        return Err(SimError::Circuit("a Bell pair needs two distinct nuclei".into()));
    }
    for id in [a, b] {
        if !matches!(id.role, SpinRole::Nucleus(_)) {
            return Err(SimError::Circuit(format!(
                "{} is not a nucleus",
                device.spin_label(id)
            )));
        }
    }
    let (sa, sb) = kind.prep_signs();
    let mut circuit = Circuit::new(format!(
        "bell_{}_{}_{}",
        kind.label(),
        device.spin_label(a),
        device.spin_label(b)
    ));
    circuit.push(nuclear_rot(a, sa * PI / 2.0, PI / 2.0));
    circuit.push(nuclear_rot(b, sb * PI / 2.0, PI / 2.0));
    if a.register == b.register {
        circuit.push(local_cz(device, &[a, b])?);
    } else {
        circuit.extend_ops(nonlocal_cz(device, &[a], &[b])?);
    }
    circuit.push(nuclear_rot(b, PI / 2.0, PI / 2.0));
    Ok(circuit)
}

/// Canonical growth order of the entangled-chain experiments.
pub fn ghz_order(device: &DeviceModel) -> Result<Vec<SpinId>> {
    ["n6", "n9", "n4", "n5", "n7", "n8", "n1", "n2", "n3"]
        .iter()
        .map(|label| device.spin_by_label(label))
        .collect()
}

/// The `n` nuclei entangled by [`ghz_prepare`]`(device, n)`.
pub fn ghz_qubits(device: &DeviceModel, n: usize) -> Result<Vec<SpinId>> {
    let order = ghz_order(device)?;
    if n < 2 || n > order.len() {
        return Err(SimError::Circuit(format!(
            "entangled-chain size must be between 2 and {}, got {n}",
            order.len()
        )));
    }
    Ok(order[..n].to_vec())
}

/// Prepare (|⇓…⇓⟩ + |⇑…⇑⟩)/√2 over the first `n` chain qubits.
///
/// All additions local to the seed register come first, then the single
/// cross-register link, then the additions local to the far register.
pub fn ghz_prepare(device: &DeviceModel, n: usize) -> Result<Circuit> {
    let qubits = ghz_qubits(device, n)?;
    let seed_register = qubits[0].register;
    let near: Vec<SpinId> = qubits
        .iter()
        .copied()
        .filter(|q| q.register == seed_register)
        .collect();
    let far: Vec<SpinId> = qubits
        .iter()
        .copied()
        .filter(|q| q.register != seed_register)
        .collect();

    let mut circuit = Circuit::new(format!("ghz_{n}"));
    circuit.push(nuclear_rot(near[0], PI / 2.0, PI / 2.0));
    let mut entangled_near = vec![near[0]];
    for &q in &near[1..] {
        circuit.push(nuclear_rot(q, -PI / 2.0, PI / 2.0));
        entangled_near.push(q);
        circuit.push(local_cz(device, &entangled_near)?);
        circuit.push(nuclear_rot(q, PI / 2.0, PI / 2.0));
    }
    if !far.is_empty() {
        let link = far[0];
        circuit.push(nuclear_rot(link, -PI / 2.0, PI / 2.0));
        circuit.extend_ops(nonlocal_cz(device, &[link], &entangled_near)?);
        circuit.push(nuclear_rot(link, PI / 2.0, PI / 2.0));
        let mut entangled_far = vec![link];
        for &q in &far[1..] {
            circuit.push(nuclear_rot(q, -PI / 2.0, PI / 2.0));
            entangled_far.push(q);
            circuit.push(local_cz(device, &entangled_far)?);
            circuit.push(nuclear_rot(q, PI / 2.0, PI / 2.0));
        }
    }
    Ok(circuit)
}

/// Two half-rotations split by a free-evolution delay; the axis of the second
/// one is `phi2_rad`. `drive` (frequency/amplitude overrides) applies to both
/// pulses, so a programmed detuning turns the delay into a phase ramp.
pub fn ramsey(
    device: &DeviceModel,
    target: SpinId,
    tau_s: f64,
    phi2_rad: f64,
    drive: DriveSpec,
) -> Result<Circuit> {
    let condition = probe_condition(device, target)?;
    let mut circuit = Circuit::new(format!("ramsey_{}", device.spin_label(target)));
    circuit.push(GateOp::Rotation {
        target,
        angle_rad: PI / 2.0,
        axis_phase_rad: 0.0,
        condition: condition.clone(),
        drive,
    });
    circuit.push(GateOp::Idle { duration_s: tau_s });
    circuit.push(GateOp::Rotation {
        target,
        angle_rad: PI / 2.0,
        axis_phase_rad: phi2_rad,
        condition,
        drive,
    });
    Ok(circuit)
}

/// Half-rotation, delay, refocusing π about the orthogonal axis, delay,
/// closing half-rotation: cancels quasi-static frequency offsets.
pub fn hahn_echo(device: &DeviceModel, target: SpinId, tau_s: f64) -> Result<Circuit> {
    let condition = probe_condition(device, target)?;
    let mut circuit = Circuit::new(format!("hahn_{}", device.spin_label(target)));
    circuit.push(GateOp::rot_if(target, PI / 2.0, 0.0, condition.clone()));
    circuit.push(GateOp::Idle { duration_s: tau_s });
    circuit.push(GateOp::rot_if(target, PI, PI / 2.0, condition.clone()));
    circuit.push(GateOp::Idle { duration_s: tau_s });
    circuit.push(GateOp::rot_if(target, PI / 2.0, 0.0, condition));
    Ok(circuit)
}

/// Repetitive single-nucleus readout block.
pub fn qnd_read(nucleus: SpinId, cycles: usize) -> Result<CircuitItem> {
    match nucleus.role {
        SpinRole::Nucleus(i) => Ok(CircuitItem::QndMeasure {
            register: nucleus.register,
            nucleus: i,
            cycles,
        }),
        SpinRole::Electron => Err(SimError::Circuit(
            "repetitive readout targets a nucleus".into(),
        )),
    }
}

/// Default line condition for coherence probes of one spin: nuclei drive on
/// the electron-⇓ branch, electrons on the reference (all-⇓) line.
fn probe_condition(device: &DeviceModel, target: SpinId) -> Result<Condition> {
    match target.role {
        SpinRole::Nucleus(_) => Ok(Condition::on(electron_of(target), SpinState::Down)),
        SpinRole::Electron => reference_esr_condition(device, target.register),
    }
}
