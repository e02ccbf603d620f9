//! Exact analysis of repetitive (electron-mediated) nuclear readout.
//!
//! One measurement consists of N rounds; each round runs two cycles:
//! a ⇑-conditioned cycle (electron flips if the nucleus is ⇑, then the
//! electron is read) and a ⇓-conditioned cycle. The statistic is
//! d = (#up reads in ⇑-cycles) − (#up reads in ⇓-cycles); d ≥ 0 classifies
//! the nucleus as ⇑. Nuclear flips may occur after every cycle, which is what
//! creates an interior optimum in the error-versus-N curve.
//!
//! The propagation below is exact: it tracks the joint distribution of
//! (nuclear state, d) through all 2N cycles — O(N²) work overall — and is
//! used as the oracle that the circuit-level Monte Carlo must reproduce.

use crate::error::{Result, SimError};

/// Per-cycle event probabilities of the readout chain.
#[derive(Debug, Clone, Copy)]
pub struct QndRates {
    /// P(read "up" | the cycle's condition matches the nuclear state).
    pub p_up_match: f64,
    /// P(read "up" | the condition does not match).
    pub p_up_mismatch: f64,
    /// P(nucleus flips ⇑→⇓ per cycle).
    pub p_flip_up_to_down: f64,
    /// P(nucleus flips ⇓→⇑ per cycle).
    pub p_flip_down_to_up: f64,
}

impl QndRates {
    /// Fold electron readout fidelities and the electron init error into the
    /// effective per-cycle read probabilities: a correctly conditioned π pulse
    /// inverts whatever the initialization produced.
    pub fn from_device(
        p_read_up_given_up: f64,
        p_read_down_given_down: f64,
        electron_init_error: f64,
        p_flip_up_to_down: f64,
        p_flip_down_to_up: f64,
    ) -> Result<QndRates> {
        for p in [
            p_read_up_given_up,
            p_read_down_given_down,
            electron_init_error,
            p_flip_up_to_down,
            p_flip_down_to_up,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Domain(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        let e0 = electron_init_error;
        // Condition matched: electron ends ↑ unless the init left it ↑ (then
        // the π pulse returns it to ↓).
        let p_up_match = (1.0 - e0) * p_read_up_given_up + e0 * (1.0 - p_read_down_given_down);
        // Condition mismatched: electron stays where init put it.
        let p_up_mismatch = e0 * p_read_up_given_up + (1.0 - e0) * (1.0 - p_read_down_given_down);
        Ok(QndRates {
            p_up_match,
            p_up_mismatch,
            p_flip_up_to_down,
            p_flip_down_to_up,
        })
    }
}

/// Exact outcome statistics of an N-round repetitive readout.
#[derive(Debug, Clone)]
pub struct QndAnalysis {
    pub rounds: usize,
    /// P(d = k − rounds) given the nucleus started ⇑ (index k = d + rounds).
    pub dist_given_up: Vec<f64>,
    /// Same, given the nucleus started ⇓.
    pub dist_given_down: Vec<f64>,
    /// P(classified ⇓ | started ⇑) — d < 0.
    pub error_given_up: f64,
    /// P(classified ⇑ | started ⇓) — d ≥ 0.
    pub error_given_down: f64,
    /// Mean of the two conditional error probabilities.
    pub mean_error: f64,
}

impl QndAnalysis {
    /// Probability that |d/N| falls inside the unresolved band.
    pub fn reject_probability(&self, band: f64, started_up: bool) -> f64 {
        let dist = if started_up {
            &self.dist_given_up
        } else {
            &self.dist_given_down
        };
        let n = self.rounds as f64;
        dist.iter()
            .enumerate()
            .filter(|(k, _)| {
                let d = *k as f64 - n;
                (d / n).abs() < band
            })
            .map(|(_, p)| *p)
            .sum()
    }
}

/// Distribution over (nuclear state, d + N) — row 0 = ⇓, row 1 = ⇑.
struct Chain {
    rounds: usize,
    p: [Vec<f64>; 2],
}

impl Chain {
    fn new(rounds: usize, start_up: bool) -> Chain {
        let width = 2 * rounds + 1;
        let mut p = [vec![0.0; width], vec![0.0; width]];
        p[usize::from(start_up)][rounds] = 1.0; // d = 0
        Chain { rounds, p }
    }

    /// One cycle: the read outcome moves d by `delta` (+1 for ⇑-cycles, −1
    /// for ⇓-cycles) with the state-dependent up-read probability, then the
    /// nucleus may flip.
    fn cycle(&mut self, rates: &QndRates, up_cycle: bool) {
        let width = 2 * self.rounds + 1;
        let mut next = [vec![0.0; width], vec![0.0; width]];
        for s in 0..2 {
            let nucleus_up = s == 1;
            let matches = nucleus_up == up_cycle;
            let p_up = if matches {
                rates.p_up_match
            } else {
                rates.p_up_mismatch
            };
            let delta: isize = if up_cycle { 1 } else { -1 };
            for (k, &prob) in self.p[s].iter().enumerate() {
                if prob == 0.0 {
                    continue;
                }
                let k_up = (k as isize + delta).clamp(0, width as isize - 1) as usize;
                next[s][k_up] += prob * p_up;
                next[s][k] += prob * (1.0 - p_up);
            }
        }
        // Nuclear flip after the cycle.
        let (fu, fd) = (rates.p_flip_up_to_down, rates.p_flip_down_to_up);
        for k in 0..width {
            let up = next[1][k];
            let down = next[0][k];
            self.p[1][k] = up * (1.0 - fu) + down * fd;
            self.p[0][k] = down * (1.0 - fd) + up * fu;
        }
    }

    fn marginal_d(&self) -> Vec<f64> {
        (0..self.p[0].len())
            .map(|k| self.p[0][k] + self.p[1][k])
            .collect()
    }
}

/// Exact distribution of the classification statistic and the resulting
/// misclassification probabilities for an N-round readout.
pub fn qnd_markov_exact(rates: &QndRates, rounds: usize) -> Result<QndAnalysis> {
    if rounds == 0 {
        return Err(SimError::Domain("readout needs at least one round".into()));
    }
    let run = |start_up: bool| -> Vec<f64> {
        let mut chain = Chain::new(rounds, start_up);
        for _ in 0..rounds {
            chain.cycle(rates, true);
            chain.cycle(rates, false);
        }
        chain.marginal_d()
    };
    let dist_given_up = run(true);
    let dist_given_down = run(false);
    // d ≥ 0 → classified ⇑ (index k = d + rounds).
    let error_given_up: f64 = dist_given_up[..rounds].iter().sum();
    let error_given_down: f64 = dist_given_down[rounds..].iter().sum();
    Ok(QndAnalysis {
        rounds,
        dist_given_up,
        dist_given_down,
        error_given_up,
        error_given_down,
        mean_error: 0.5 * (error_given_up + error_given_down),
    })
}

/// Scan rounds 1..=max_rounds and return (argmin, minimum mean error).
pub fn optimal_qnd_rounds(rates: &QndRates, max_rounds: usize) -> Result<(usize, f64)> {
    let mut best = (1usize, f64::INFINITY);
    for n in 1..=max_rounds {
        let a = qnd_markov_exact(rates, n)?;
        if a.mean_error < best.1 {
            best = (n, a.mean_error);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ideal_rates(p_flip: f64) -> QndRates {
        QndRates::from_device(1.0, 1.0, 0.0, p_flip, p_flip).unwrap()
    }

    fn device_rates(p_flip: f64) -> QndRates {
        QndRates::from_device(0.75, 0.75, 0.0, p_flip, p_flip).unwrap()
    }

    #[test]
    fn perfect_readout_without_flips_never_errs() {
        let rates = ideal_rates(0.0);
        for n in [1, 2, 5, 20] {
            let a = qnd_markov_exact(&rates, n).unwrap();
            assert_eq!(a.error_given_up, 0.0);
            assert_eq!(a.error_given_down, 0.0);
        }
    }

    /// Independent binomial-convolution oracle for the flip-free case.
    fn binomial_error_oracle(p_match: f64, p_mismatch: f64, n: usize) -> f64 {
        // d = U − V with U ~ Bin(n, p_match), V ~ Bin(n, p_mismatch), for a
        // nucleus fixed at ⇑; error = P(d < 0). Convolve directly.
        let binom = |n: usize, p: f64| -> Vec<f64> {
            let mut v = vec![0.0; n + 1];
            for k in 0..=n {
                let mut log = 0.0;
                for j in 0..k {
                    log += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
                }
                v[k] = (log + (k as f64) * p.ln() + ((n - k) as f64) * (1.0 - p).ln()).exp();
            }
            v
        };
        let u = binom(n, p_match);
        let v = binom(n, p_mismatch);
        let mut err = 0.0;
        for (i, pu) in u.iter().enumerate() {
            for (j, pv) in v.iter().enumerate() {
                if (i as isize - j as isize) < 0 {
                    err += pu * pv;
                }
            }
        }
        err
    }

    #[test]
    fn flip_free_chain_matches_binomial_convolution() {
        let rates = device_rates(0.0);
        for n in [1, 3, 7, 15, 40] {
            let a = qnd_markov_exact(&rates, n).unwrap();
            let oracle = binomial_error_oracle(rates.p_up_match, rates.p_up_mismatch, n);
            assert_abs_diff_eq!(a.error_given_up, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn error_decreases_monotonically_without_flips() {
        let rates = device_rates(0.0);
        let mut prev = f64::INFINITY;
        for n in 1..=120 {
            let a = qnd_markov_exact(&rates, n).unwrap();
            assert!(
                a.mean_error <= prev + 1e-15,
                "error rose at n={n}: {} > {prev}",
                a.mean_error
            );
            prev = a.mean_error;
        }
    }

    #[test]
    fn flips_create_an_interior_optimum() {
        // The stress case: an order-of-magnitude higher flip rate than the
        // shipped default still must show a clean interior minimum.
        let rates = device_rates(2e-3);
        let (n_opt, best) = optimal_qnd_rounds(&rates, 120).unwrap();
        assert!(n_opt > 1, "optimum at the boundary: {n_opt}");
        assert!(n_opt < 120, "no interior optimum found");
        let tail = qnd_markov_exact(&rates, 120).unwrap().mean_error;
        assert!(tail > best, "error curve must rise past the optimum");
    }

    #[test]
    fn default_rates_reach_sub_percent_error() {
        let rates = device_rates(5e-4);
        let (n_opt, best) = optimal_qnd_rounds(&rates, 150).unwrap();
        assert!(
            best < 0.01,
            "minimum error {best} at n={n_opt} misses the sub-percent target"
        );
    }

    #[test]
    fn init_error_degrades_effective_read_probabilities() {
        let r = QndRates::from_device(0.75, 0.75, 0.01, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(r.p_up_match, 0.745, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_up_mismatch, 0.255, epsilon = 1e-12);
    }

    #[test]
    fn distributions_are_normalized() {
        let rates = device_rates(1e-3);
        let a = qnd_markov_exact(&rates, 60).unwrap();
        let s1: f64 = a.dist_given_up.iter().sum();
        let s2: f64 = a.dist_given_down.iter().sum();
        assert_abs_diff_eq!(s1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s2, 1.0, epsilon = 1e-12);
        // The reject band keeps a nonzero but modest share at this depth.
        let rej = a.reject_probability(0.2, true);
        assert!((0.0..1.0).contains(&rej));
    }
}
