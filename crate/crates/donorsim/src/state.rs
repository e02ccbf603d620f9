//! Dense state vector over the device's spins.
//!
//! Basis convention: bit `s` of a basis index holds the state of flat spin `s`
//! (0 = down, 1 = up), so index 0 is the all-down state. Single-spin operations
//! act on amplitude pairs that differ only in the target bit, optionally
//! restricted to a conditioned subspace given as (mask, bits) over the other
//! spins.

use num_complex::Complex64;
use rand::Rng;

use crate::rabi::Mat2;

/// Pure state of `n` spin-1/2 systems as 2^n complex amplitudes.
#[derive(Debug, Clone)]
pub struct StateVector {
    n_spins: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// All-spins-down product state |↓…↓⟩.
    pub fn ground(n_spins: usize) -> Self {
        let mut amps = vec![Complex64::ZERO; 1 << n_spins];
        amps[0] = Complex64::new(1.0, 0.0);
        StateVector { n_spins, amps }
    }

    /// Product basis state from per-spin bits (bit s of `index` = spin s up).
    pub fn basis(n_spins: usize, index: usize) -> Self {
        let mut amps = vec![Complex64::ZERO; 1 << n_spins];
        amps[index] = Complex64::new(1.0, 0.0);
        StateVector { n_spins, amps }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    /// ⟨ψ|ψ⟩.
    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Apply a 2×2 unitary to `target`, restricted to basis states matching
    /// `(cond_mask, cond_bits)` on the other spins. The mask must not contain
    /// the target bit.
    pub fn apply_single(&mut self, target: usize, u: &Mat2, cond_mask: usize, cond_bits: usize) {
        debug_assert_eq!(cond_mask & (1 << target), 0, "condition may not include the target");
        let tbit = 1 << target;
        let dim = self.amps.len();
        let mut i = 0;
        while i < dim {
            if i & tbit == 0 && (i & cond_mask) == cond_bits {
                let j = i | tbit;
                let a = self.amps[i];
                let b = self.amps[j];
                self.amps[i] = u[0] * a + u[1] * b;
                self.amps[j] = u[2] * a + u[3] * b;
            }
            i += 1;
        }
    }

    /// Multiply each matching basis state (target spin up, condition matched)
    /// by a phase factor — a conditioned virtual-Z up to the shared half-angle
    /// convention handled by the caller.
    pub fn apply_phase_on_up(
        &mut self,
        target: usize,
        phase: Complex64,
        cond_mask: usize,
        cond_bits: usize,
    ) {
        let tbit = 1 << target;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & tbit != 0 && (i & cond_mask) == cond_bits {
                *a *= phase;
            }
        }
    }

    /// Apply an arbitrary diagonal phase profile: amplitude i gets
    /// `exp(i·phases[i])`.
    pub fn apply_diagonal(&mut self, phases: &[f64]) {
        debug_assert_eq!(phases.len(), self.amps.len());
        for (a, p) in self.amps.iter_mut().zip(phases) {
            if *p != 0.0 {
                *a *= Complex64::from_polar(1.0, *p);
            }
        }
    }

    /// Probability that spin `target` is up.
    pub fn prob_up(&self, target: usize) -> f64 {
        let tbit = 1 << target;
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & tbit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Projectively measure spin `target` in z; collapses the state and
    /// returns true for "up".
    pub fn measure_spin(&mut self, target: usize, rng: &mut impl Rng) -> bool {
        let p_up = self.prob_up(target).clamp(0.0, 1.0);
        let up = rng.gen::<f64>() < p_up;
        self.project_spin(target, up);
        up
    }

    /// Project spin `target` onto up/down and renormalize. A projection onto a
    /// zero-probability branch leaves the state unchanged (callers sample the
    /// branch from the state first).
    pub fn project_spin(&mut self, target: usize, up: bool) {
        let tbit = 1 << target;
        let keep_up = up;
        let mut norm = 0.0;
        for (i, a) in self.amps.iter_mut().enumerate() {
            let is_up = i & tbit != 0;
            if is_up != keep_up {
                *a = Complex64::ZERO;
            } else {
                norm += a.norm_sqr();
            }
        }
        if norm > 0.0 {
            let scale = 1.0 / norm.sqrt();
            for a in self.amps.iter_mut() {
                *a *= scale;
            }
        }
    }

    /// Force spin `target` into a definite state: project onto its sampled
    /// value is the caller's job; this swaps amplitude into the desired branch
    /// after a projection (used for electron reload after readout).
    pub fn set_definite_spin(&mut self, target: usize, up: bool) {
        let tbit = 1 << target;
        // After a projection the spin is definite; moving it means relabeling
        // amplitudes between the two branches.
        let currently_up = self.prob_up(target) > 0.5;
        if currently_up == up {
            return;
        }
        let dim = self.amps.len();
        for i in 0..dim {
            if i & tbit == 0 {
                self.amps.swap(i, i | tbit);
            }
        }
    }

    /// Marginal probabilities over an ordered subset of spins. Entry `k` of the
    /// result is the probability that the subset reads as the little-endian
    /// bit pattern `k` (bit 0 = first listed spin).
    pub fn marginal(&self, spins: &[usize]) -> Vec<f64> {
        let mut probs = vec![0.0; 1 << spins.len()];
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let mut key = 0usize;
            for (k, s) in spins.iter().enumerate() {
                if i & (1 << s) != 0 {
                    key |= 1 << k;
                }
            }
            probs[key] += p;
        }
        probs
    }

    /// |⟨other|self⟩|².
    pub fn overlap_sqr(&self, other: &StateVector) -> f64 {
        let dot: Complex64 = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum();
        dot.norm_sqr()
    }

    /// Global-phase-insensitive distance to another state: 1 − |⟨a|b⟩|.
    pub fn infidelity(&self, other: &StateVector) -> f64 {
        1.0 - self.overlap_sqr(other).sqrt()
    }
}
