//! Gaussian kernel over (state, action) pairs for the consistency loss.

use serde::{Deserialize, Serialize};

use crate::data::{OfflineDataset, StateVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of pairwise embedded distances over the dataset.
    MedianHeuristic,
}

/// Kernel configuration: Gaussian on standardized states with a scaled
/// one-hot action block appended.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
    /// Overall loss scale ζ (absorbable into the kernel; default 1).
    pub zeta: f64,
    pub action_scale: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            bandwidth: Bandwidth::MedianHeuristic,
            zeta: 1.0,
            action_scale: 1.0,
        }
    }
}

/// Kernel with standardization and bandwidth pinned to a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedKernel {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub bandwidth: f64,
    pub zeta: f64,
    pub action_scale: f64,
    pub action_count: usize,
}

impl ResolvedKernel {
    pub fn resolve(spec: &KernelSpec, ds: &OfflineDataset) -> Result<Self> {
        let dim = ds.state_dim;
        let mut means = vec![0.0; dim];
        let mut count = 0usize;
        for tr in ds.transitions() {
            for (m, &x) in means.iter_mut().zip(tr.state.as_slice()) {
                *m += x;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyInput("kernel resolution needs transitions"));
        }
        for m in means.iter_mut() {
            *m /= count as f64;
        }
        let mut sds = vec![0.0; dim];
        for tr in ds.transitions() {
            for ((sd, &m), &x) in sds.iter_mut().zip(&means).zip(tr.state.as_slice()) {
                *sd += (x - m) * (x - m);
            }
        }
        for sd in sds.iter_mut() {
            *sd = (*sd / count as f64).sqrt().max(1e-9);
        }

        let mut resolved = ResolvedKernel {
            means,
            sds,
            bandwidth: 1.0,
            zeta: spec.zeta,
            action_scale: spec.action_scale,
            action_count: ds.action_count,
        };
        resolved.bandwidth = match spec.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::MedianHeuristic => resolved.median_distance(ds).max(1e-6),
        };
        Ok(resolved)
    }

    pub fn embed(&self, state: &StateVector, action: usize) -> Vec<f64> {
        let mut z: Vec<f64> = state
            .as_slice()
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((&x, &m), &sd)| (x - m) / sd)
            .collect();
        let base = z.len();
        z.resize(base + self.action_count, 0.0);
        z[base + action] = self.action_scale;
        z
    }

    pub fn eval(&self, z1: &[f64], z2: &[f64]) -> f64 {
        let d2: f64 = z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Median pairwise distance over a deterministic subsample (stride
    /// selection, cap 400 points).
    fn median_distance(&self, ds: &OfflineDataset) -> f64 {
        let all: Vec<Vec<f64>> = ds
            .transitions()
            .map(|tr| self.embed(tr.state, tr.action))
            .collect();
        let cap = 400usize;
        let stride = (all.len() / cap).max(1);
        let pts: Vec<&Vec<f64>> = all.iter().step_by(stride).take(cap).collect();
        let mut dists = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d2: f64 = pts[i]
                    .iter()
                    .zip(pts[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dists.push(d2.sqrt());
            }
        }
        if dists.is_empty() {
            return 1.0;
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        dists[dists.len() / 2]
    }
}
