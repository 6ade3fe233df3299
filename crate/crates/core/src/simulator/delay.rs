use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::seed::stream_rng;

/// How many rounds each pseudo-gradient waits before it is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySchedule {
    Fixed { tau: u64 },
    /// Integers in `[lo, hi]`, inclusive.
    UniformInt { lo: u64, hi: u64 },
    /// Exponential draws rounded to the nearest integer, clipped to `[0, max]`.
    Exponential { rate: f64, max: u64 },
}

impl DelaySchedule {
    pub fn uniform_default() -> Self {
        DelaySchedule::UniformInt { lo: 0, hi: 16 }
    }

    pub fn exponential_default() -> Self {
        DelaySchedule::Exponential { rate: 0.25, max: 16 }
    }

    pub fn validate(&self, prefix: &str) -> Vec<(String, String)> {
        match self {
            DelaySchedule::Fixed { .. } => vec![],
            DelaySchedule::UniformInt { lo, hi } if lo > hi => {
                vec![(format!("{prefix}.hi"), "must be at least lo".into())]
            }
            DelaySchedule::Exponential { rate, .. } if !(*rate > 0.0 && rate.is_finite()) => {
                vec![(format!("{prefix}.rate"), "must be positive and finite".into())]
            }
            _ => vec![],
        }
    }

    /// Largest delay the schedule can produce.
    pub fn max_delay(&self) -> u64 {
        match *self {
            DelaySchedule::Fixed { tau } => tau,
            DelaySchedule::UniformInt { hi, .. } => hi,
            DelaySchedule::Exponential { max, .. } => max,
        }
    }
}

impl fmt::Display for DelaySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelaySchedule::Fixed { tau } => write!(f, "tau={tau}"),
            DelaySchedule::UniformInt { lo, hi } => write!(f, "uniform[{lo},{hi}]"),
            DelaySchedule::Exponential { rate, max } => write!(f, "exp({rate})<={max}"),
        }
    }
}

/// Rounded, unclipped exponential draw.
fn rounded_exponential<R: Rng>(rng: &mut R, rate: f64) -> u64 {
    let exp = Exp::new(rate).expect("validated rate");
    let x: f64 = exp.sample(rng);
    x.round() as u64
}

/// Delay for `(worker, round)`; a pure function of the seed and both indices.
pub fn sample_delay(schedule: &DelaySchedule, seed: u64, worker: usize, round: u64) -> u64 {
    match *schedule {
        DelaySchedule::Fixed { tau } => tau,
        DelaySchedule::UniformInt { lo, hi } => {
            stream_rng(seed, "delay", &[worker as u64, round]).random_range(lo..=hi)
        }
        DelaySchedule::Exponential { rate, max } => {
            let mut rng = stream_rng(seed, "delay", &[worker as u64, round]);
            rounded_exponential(&mut rng, rate).min(max)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_is_constant() {
        let s = DelaySchedule::Fixed { tau: 8 };
        for w in 0..4 {
            for r in 0..50 {
                assert_eq!(sample_delay(&s, 3, w, r), 8);
            }
        }
    }

    #[test]
    fn uniform_mean_and_range() {
        let s = DelaySchedule::uniform_default();
        let mut sum = 0u64;
        let n = 100_000u64;
        for i in 0..n {
            let d = sample_delay(&s, 11, (i % 4) as usize, i / 4);
            assert!(d <= 16);
            sum += d;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 8.0).abs() <= 0.05, "{mean}");
    }

    #[test]
    fn exponential_mean_matches_series() {
        // E[round(X)] = sum_{k>=1} P(X >= k - 1/2) = 1 / (2 sinh(rate / 2)),
        // and clipping at 16 keeps the first 16 terms.
        let rate = 0.25f64;
        let unclipped: f64 = 1.0 / (2.0 * (rate / 2.0).sinh());
        let clipped: f64 = (1..=16).map(|k| (-rate * (k as f64 - 0.5)).exp()).sum();
        assert!((unclipped - 3.989_602_290_814_042).abs() < 1e-12);
        assert!((clipped - 3.916_530_175_945_825_6).abs() < 1e-12);

        let n = 100_000u64;
        let mut raw = 0u64;
        let mut capped = 0u64;
        let s = DelaySchedule::exponential_default();
        for i in 0..n {
            let mut rng = stream_rng(5, "delay", &[0, i]);
            raw += rounded_exponential(&mut rng, rate);
            let d = sample_delay(&s, 5, 0, i);
            assert!(d <= 16);
            capped += d;
        }
        let raw = raw as f64 / n as f64;
        let capped = capped as f64 / n as f64;
        assert!((raw - unclipped).abs() < 0.05, "{raw}");
        assert!((capped - clipped).abs() < 0.05, "{capped}");
    }

    #[test]
    fn draws_are_reproducible() {
        let s = DelaySchedule::uniform_default();
        let a: Vec<u64> = (0..100).map(|r| sample_delay(&s, 1, 2, r)).collect();
        let b: Vec<u64> = (0..100).map(|r| sample_delay(&s, 1, 2, r)).collect();
        let c: Vec<u64> = (0..100).map(|r| sample_delay(&s, 2, 2, r)).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn serde_shape() {
        let s: DelaySchedule = serde_json::from_str(r#"{"kind":"uniform_int","lo":0,"hi":16}"#).unwrap();
        assert_eq!(s, DelaySchedule::uniform_default());
        assert!(serde_json::from_str::<DelaySchedule>(r#"{"kind":"fixed","tau":1,"x":0}"#).is_err());
    }
}
