use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy, TaggingResult};
use crate::error::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub system_a: String,
    pub system_b: String,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// `|accuracy_a - accuracy_b|`.
    pub observed_diff: f64,
    pub p_value: f64,
    pub shuffles: usize,
}

impl SignificanceReport {
    pub const CSV_HEADER: &'static str =
        "system_a,system_b,accuracy_a,accuracy_b,observed_diff,p_value,shuffles";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.system_a,
            self.system_b,
            self.accuracy_a,
            self.accuracy_b,
            self.observed_diff,
            self.p_value,
            self.shuffles
        )
    }
}

/// Approximate randomization test on the difference in token accuracy.
///
/// Sentences are the exchangeable units: each shuffle swaps the two systems'
/// outputs for a sentence with probability 1/2. The statistic is the absolute
/// difference in correct-token counts (equivalent to accuracy since both
/// systems tag the same tokens). `p = (c + 1) / (R + 1)` where `c` counts
/// shuffles at least as extreme as observed.
pub fn approx_randomization(
    a: &TaggingResult,
    b: &TaggingResult,
    shuffles: usize,
    seed: u64,
) -> Result<SignificanceReport, EvalError> {
    a.check_aligned(b)?;
    if shuffles == 0 {
        return Err(EvalError::Empty("shuffle count"));
    }
    let accuracy_a = accuracy(a)?;
    let accuracy_b = accuracy(b)?;
    let diffs: Vec<i64> = a
        .correct_per_sentence()
        .into_iter()
        .zip(b.correct_per_sentence())
        .map(|(x, y)| x as i64 - y as i64)
        .collect();
    let observed: i64 = diffs.iter().sum::<i64>().abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..shuffles {
        let mut d = 0i64;
        for &x in &diffs {
            d += if rng.gen::<bool>() { -x } else { x };
        }
        if d.abs() >= observed {
            extreme += 1;
        }
    }
    Ok(SignificanceReport {
        system_a: a.system.clone(),
        system_b: b.system.clone(),
        accuracy_a,
        accuracy_b,
        observed_diff: (accuracy_a - accuracy_b).abs(),
        p_value: (extreme + 1) as f64 / (shuffles + 1) as f64,
        shuffles,
    })
}
