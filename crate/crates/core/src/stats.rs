//! Batch accumulation and leave-one-batch-out jackknife errors.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest number of batches accepted for error estimation.
pub const MIN_BATCHES: usize = 20;

/// Monte Carlo mean with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: Complex64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl McEstimate {
    /// True when `|mean − reference| ≤ k·SE + slack`.
    pub fn agrees_with(&self, reference: Complex64, k: f64, slack: f64) -> bool {
        (self.mean - reference).norm() <= k * self.std_error + slack
    }
}

/// Per-batch sums of a vector of observables.
#[derive(Debug, Clone)]
pub struct BatchSums {
    width: usize,
    sums: Vec<Vec<Complex64>>,
    counts: Vec<usize>,
}

impl BatchSums {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            sums: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn push_batch(&mut self, sum: Vec<Complex64>, count: usize) -> Result<()> {
        if sum.len() != self.width {
            return Err(Error::Shape(format!(
                "batch of width {} in accumulator of width {}",
                sum.len(),
                self.width
            )));
        }
        if count == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        self.sums.push(sum);
        self.counts.push(count);
        Ok(())
    }

    pub fn batches(&self) -> usize {
        self.counts.len()
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }

    fn mean_excluding(&self, skip: Option<usize>) -> Vec<Complex64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.width];
        let mut n = 0usize;
        for (b, (s, &c)) in self.sums.iter().zip(&self.counts).enumerate() {
            if Some(b) == skip {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
            n += c;
        }
        acc.iter().map(|a| a / n as f64).collect()
    }

    /// Applies `statistic` to the pooled means and returns one estimate per
    /// output component, with jackknife errors over the batches.
    pub fn jackknife(
        &self,
        statistic: impl Fn(&[Complex64]) -> Vec<Complex64>,
    ) -> Result<Vec<McEstimate>> {
        let b = self.batches();
        if b < MIN_BATCHES {
            return Err(Error::Config(format!(
                "{b} batches, need at least {MIN_BATCHES}"
            )));
        }
        let full = statistic(&self.mean_excluding(None));
        let leave_out: Vec<Vec<Complex64>> = (0..b)
            .map(|i| statistic(&self.mean_excluding(Some(i))))
            .collect();
        let n = self.total_count();
        Ok(full
            .iter()
            .enumerate()
            .map(|(k, &mean)| {
                let avg: Complex64 = leave_out.iter().map(|v| v[k]).sum::<Complex64>() / b as f64;
                let var: f64 = leave_out
                    .iter()
                    .map(|v| (v[k] - avg).norm_sqr())
                    .sum::<f64>()
                    * (b - 1) as f64
                    / b as f64;
                McEstimate {
                    mean,
                    std_error: var.sqrt(),
                    n_samples: n,
                }
            })
            .collect())
    }
}
