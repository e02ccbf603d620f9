//! Discrete gate groups for randomized benchmarking.
//!
//! A group element is stored by its conjugation action on the Hermitian
//! Pauli operators — a signed permutation of the 4ⁿ Pauli labels — which
//! composes and inverts exactly. Unitary representatives are rebuilt from
//! the generator word found during the breadth-first enumeration.
//!
//! Pauli label encoding (little-endian over qubits): two bits per qubit,
//! x + 2z, so 0 = I, 1 = X, 2 = Z, 3 = Y.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Result, SimError};

pub type CMat = DMatrix<Complex64>;

/// Signed permutation of Pauli labels: `map[p] = (q, s)` means P ↦ s·Q.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PauliAction {
    n_qubits: usize,
    map: Vec<(u8, i8)>,
}

impl PauliAction {
    pub fn identity(n_qubits: usize) -> Self {
        PauliAction {
            n_qubits,
            map: (0..4usize.pow(n_qubits as u32))
                .map(|p| (p as u8, 1))
                .collect(),
        }
    }

    /// Action of `self` followed by `then`.
    pub fn then(&self, then: &PauliAction) -> PauliAction {
        debug_assert_eq!(self.n_qubits, then.n_qubits);
        PauliAction {
            n_qubits: self.n_qubits,
            map: self
                .map
                .iter()
                .map(|&(q, s)| {
                    let (r, t) = then.map[q as usize];
                    (r, s * t)
                })
                .collect(),
        }
    }

    pub fn inverse(&self) -> PauliAction {
        let mut map = vec![(0u8, 0i8); self.map.len()];
        for (p, &(q, s)) in self.map.iter().enumerate() {
            map[q as usize] = (p as u8, s);
        }
        PauliAction {
            n_qubits: self.n_qubits,
            map,
        }
    }

    pub fn image(&self, pauli: usize) -> (usize, i8) {
        let (q, s) = self.map[pauli];
        (q as usize, s)
    }

    /// Compact key from the images of the generating Paulis X_k, Z_k
    /// (5 bits each: target label + sign), enough to identify the element.
    pub fn key(&self) -> u64 {
        let mut key = 0u64;
        let mut shift = 0;
        for k in 0..self.n_qubits {
            for gen in [1usize << (2 * k), 2usize << (2 * k)] {
                let (q, s) = self.map[gen];
                let sign_bit = if s < 0 { 1u64 } else { 0 };
                key |= ((q as u64) | (sign_bit << 4)) << shift;
                shift += 5;
            }
        }
        key
    }
}

/// Hermitian Pauli matrix for a label (i^{x·z}·XˣZᶻ per qubit).
pub fn pauli_matrix(n_qubits: usize, label: usize) -> CMat {
    let single = |code: usize| -> CMat {
        let i = Complex64::new(0.0, 1.0);
        let o = Complex64::ONE;
        let z = Complex64::ZERO;
        let entries = match code {
            0 => [o, z, z, o],
            1 => [z, o, o, z],
            2 => [o, z, z, -o],
            _ => [z, -i, i, z],
        };
        CMat::from_row_slice(2, 2, &entries)
    };
    let mut m = CMat::identity(1, 1);
    for k in (0..n_qubits).rev() {
        m = m.kronecker(&single((label >> (2 * k)) & 3));
    }
    m
}

/// Determine the signed-Pauli action of a unitary by direct conjugation.
/// Errors if the matrix does not normalize the Pauli group.
pub fn action_from_unitary(n_qubits: usize, u: &CMat) -> Result<PauliAction> {
    let dim = 1usize << n_qubits;
    if u.nrows() != dim || u.ncols() != dim {
        return Err(SimError::Shape(format!(
            "expected a {dim}×{dim} matrix for {n_qubits} qubit(s)"
        )));
    }
    let count = 4usize.pow(n_qubits as u32);
    let paulis: Vec<CMat> = (0..count).map(|p| pauli_matrix(n_qubits, p)).collect();
    let mut map = vec![(0u8, 0i8); count];
    for p in 0..count {
        let conj = u * &paulis[p] * u.adjoint();
        let mut found = false;
        'search: for (q, mq) in paulis.iter().enumerate() {
            for &sign in &[1.0f64, -1.0] {
                let mut dist = 0.0f64;
                for (a, b) in conj.iter().zip(mq.iter()) {
                    dist += (a - b * Complex64::new(sign, 0.0)).norm_sqr();
                }
                if dist.sqrt() < 1e-9 {
                    map[p] = (q as u8, if sign > 0.0 { 1 } else { -1 });
                    found = true;
                    break 'search;
                }
            }
        }
        if !found {
            return Err(SimError::Domain(
                "matrix does not map Pauli operators to signed Pauli operators".into(),
            ));
        }
    }
    Ok(PauliAction { n_qubits, map })
}

/// A named generator: unitary plus its Pauli action.
struct Generator {
    name: &'static str,
    matrix: CMat,
    action: PauliAction,
}

/// A finite gate group enumerated from generators, with composition,
/// inversion, and unitary reconstruction.
pub struct CliffordGroup {
    n_qubits: usize,
    generators: Vec<Generator>,
    elements: Vec<PauliAction>,
    /// Generator word (indices into `generators`, in circuit order) that
    /// realizes each element.
    words: Vec<Vec<u8>>,
    index: HashMap<u64, usize>,
}

impl CliffordGroup {
    fn build(n_qubits: usize, gens: Vec<(&'static str, CMat)>) -> Result<CliffordGroup> {
        let generators: Vec<Generator> = gens
            .into_iter()
            .map(|(name, matrix)| {
                action_from_unitary(n_qubits, &matrix).map(|action| Generator {
                    name,
                    matrix,
                    action,
                })
            })
            .collect::<Result<_>>()?;
        let identity = PauliAction::identity(n_qubits);
        let mut elements = vec![identity.clone()];
        let mut words: Vec<Vec<u8>> = vec![vec![]];
        let mut index = HashMap::new();
        index.insert(identity.key(), 0usize);
        let mut cursor = 0usize;
        while cursor < elements.len() {
            let current = elements[cursor].clone();
            let word = words[cursor].clone();
            for (g, gen) in generators.iter().enumerate() {
                let next = current.then(&gen.action);
                let key = next.key();
                if !index.contains_key(&key) {
                    index.insert(key, elements.len());
                    let mut w = word.clone();
                    w.push(g as u8);
                    elements.push(next);
                    words.push(w);
                }
            }
            cursor += 1;
        }
        Ok(CliffordGroup {
            n_qubits,
            generators,
            elements,
            words,
            index,
        })
    }

    /// The 24-element single-qubit group, from the half-turn basis change
    /// and the quarter-turn phase gate.
    pub fn one_qubit() -> CliffordGroup {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = CMat::from_row_slice(
            2,
            2,
            &[
                Complex64::new(s, 0.0),
                Complex64::new(s, 0.0),
                Complex64::new(s, 0.0),
                Complex64::new(-s, 0.0),
            ],
        );
        let sg = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::ONE,
            Complex64::new(0.0, 1.0),
        ]));
        Self::build(1, vec![("h", h), ("s", sg)]).expect("static generators are valid")
    }

    /// The 11520-element two-qubit group, adding the two-qubit phase gate.
    pub fn two_qubit() -> CliffordGroup {
        let one = Self::one_qubit();
        let h = one.generators[0].matrix.clone();
        let sg = one.generators[1].matrix.clone();
        let id2 = CMat::identity(2, 2);
        let cz = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::ONE,
            Complex64::ONE,
            Complex64::ONE,
            -Complex64::ONE,
        ]));
        Self::build(
            2,
            vec![
                ("h0", id2.kronecker(&h)),
                ("s0", id2.kronecker(&sg)),
                ("h1", h.kronecker(&id2)),
                ("s1", sg.kronecker(&id2)),
                ("cz", cz),
            ],
        )
        .expect("static generators are valid")
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub const IDENTITY: usize = 0;

    pub fn action(&self, idx: usize) -> &PauliAction {
        &self.elements[idx]
    }

    pub fn index_of(&self, action: &PauliAction) -> Result<usize> {
        self.index.get(&action.key()).copied().ok_or_else(|| {
            SimError::Domain("action is not an element of this group".into())
        })
    }

    /// Index of "apply `a`, then `b`".
    pub fn compose(&self, a: usize, b: usize) -> usize {
        let action = self.elements[a].then(&self.elements[b]);
        self.index[&action.key()]
    }

    pub fn inverse(&self, idx: usize) -> usize {
        self.index[&self.elements[idx].inverse().key()]
    }

    /// Fold a sequence (circuit order) into one element.
    pub fn compose_word(&self, word: &[usize]) -> usize {
        word.iter()
            .fold(Self::IDENTITY, |acc, &g| self.compose(acc, g))
    }

    /// Unitary representative (defined up to global phase).
    pub fn unitary(&self, idx: usize) -> CMat {
        let dim = 1usize << self.n_qubits;
        let mut u = CMat::identity(dim, dim);
        for &g in &self.words[idx] {
            u = &self.generators[g as usize].matrix * u;
        }
        u
    }

    /// Generator names realizing the element, in circuit order.
    pub fn word(&self, idx: usize) -> Vec<&'static str> {
        self.words[idx]
            .iter()
            .map(|&g| self.generators[g as usize].name)
            .collect()
    }
}

/// |tr(A†B)| / dim — equals 1 exactly when A and B agree up to global phase.
pub fn phase_free_overlap(a: &CMat, b: &CMat) -> f64 {
    let t = (a.adjoint() * b).trace();
    t.norm() / a.nrows() as f64
}
