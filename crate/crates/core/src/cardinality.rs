//! Linear counting over an array of cells.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearCount {
    Estimate { value: u64 },
    /// No empty cell was left; the true count is at least `floor`.
    Saturated { floor: u64 },
}

impl LinearCount {
    /// Best numeric reading: the estimate, or the floor when saturated.
    pub fn value(&self) -> u64 {
        match *self {
            LinearCount::Estimate { value } => value,
            LinearCount::Saturated { floor } => floor,
        }
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self, LinearCount::Saturated { .. })
    }
}

/// `-total * ln(zeros / total)`, rounded.
///
/// A saturated array reports the count at which one empty cell would be
/// expected, `total * ln(total)`, as its floor.
pub fn linear_count(zeros: usize, total: usize) -> LinearCount {
    assert!(total >= 1, "linear counting over an empty array");
    assert!(zeros <= total);
    let m = total as f64;
    if zeros == 0 {
        return LinearCount::Saturated { floor: (m * m.ln()).round().max(m) as u64 };
    }
    let v = -m * (zeros as f64 / m).ln();
    LinearCount::Estimate { value: v.round() as u64 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::keyed_hash;

    #[test]
    fn closed_form_examples() {
        assert_eq!(linear_count(1000, 1000), LinearCount::Estimate { value: 0 });
        assert_eq!(linear_count(500, 1000), LinearCount::Estimate { value: 693 });
        assert!(linear_count(0, 1000).is_saturated());
    }

    #[test]
    fn half_empty_matches_simulated_hashing() {
        // 693 distinct keys into 1000 cells leave ~500 empty
        let mut zeros = 0.0;
        for seed in 0..200u64 {
            let mut cells = vec![false; 1000];
            for k in 0..693u64 {
                cells[(keyed_hash(k, seed) % 1000) as usize] = true;
            }
            zeros += cells.iter().filter(|c| !**c).count() as f64;
        }
        let mean = zeros / 200.0;
        assert!((mean - 500.0).abs() < 5.0, "mean zeros {mean}");
    }

    #[test]
    fn monte_carlo_within_five_percent() {
        let m = 4096;
        let n = 2000u64;
        let mut total = 0.0;
        for seed in 0..100u64 {
            let mut cells = vec![false; m];
            for k in 0..n {
                cells[(keyed_hash(k, seed) % m as u64) as usize] = true;
            }
            let z = cells.iter().filter(|c| !**c).count();
            total += linear_count(z, m).value() as f64;
        }
        let mean = total / 100.0;
        assert!((mean - n as f64).abs() / (n as f64) < 0.05, "mean {mean}");
    }
}
