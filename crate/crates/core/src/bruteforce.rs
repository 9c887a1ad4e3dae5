//! Brute-force oracles used to validate closed forms.
//!
//! Everything here optimizes by direct search over the objective — no
//! thresholding shortcuts shared with the closed-form implementations — so
//! tests can treat these as independent ground truth.

/// The regularized objective `⟨q,π⟩ + (λ/2)·Σ_a π_a(1-π_a)`.
pub fn proximal_objective(q: &[f64], pi: &[f64], lambda: f64) -> f64 {
    q.iter().zip(pi).map(|(qa, p)| qa * p).sum::<f64>()
        + lambda / 2.0 * pi.iter().map(|p| p * (1.0 - p)).sum::<f64>()
}

/// Exhaustive grid search over the simplex at spacing `1/resolution`.
/// Feasible for 2–3 actions; use [`simplex_exchange_argmax`] beyond that.
pub fn simplex_grid_argmax(q: &[f64], lambda: f64, resolution: usize) -> Vec<f64> {
    let k = q.len();
    let mut best = vec![0.0; k];
    let mut best_value = f64::NEG_INFINITY;
    let mut current = vec![0usize; k];
    enumerate_compositions(resolution, k, 0, &mut current, &mut |comp| {
        let pi: Vec<f64> = comp.iter().map(|&c| c as f64 / resolution as f64).collect();
        let value = proximal_objective(q, &pi, lambda);
        if value > best_value {
            best_value = value;
            best = pi;
        }
    });
    best
}

fn enumerate_compositions(
    remaining: usize,
    k: usize,
    index: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if index == k - 1 {
        current[index] = remaining;
        visit(current);
        return;
    }
    for c in 0..=remaining {
        current[index] = c;
        enumerate_compositions(remaining - c, k, index + 1, current, visit);
    }
}

/// Global maximizer of the strongly concave objective by cyclic exact line
/// search between coordinate pairs, starting from uniform. Scales to any
/// action count; converges to machine precision.
pub fn simplex_exchange_argmax(q: &[f64], lambda: f64) -> Vec<f64> {
    let k = q.len();
    let mut pi = vec![1.0 / k as f64; k];
    for _ in 0..10_000 {
        let mut moved = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                // move t from j to i; the objective is quadratic in t with
                // maximum at t* below
                let t = ((q[i] - q[j]) + lambda * (pi[j] - pi[i])) / (2.0 * lambda);
                let t = t.clamp(-pi[i], pi[j]);
                if t.abs() > 1e-16 {
                    pi[i] += t;
                    pi[j] -= t;
                    moved = moved.max(t.abs());
                }
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    pi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_exchange_agree_on_three_actions() {
        let q = [1.0, 0.5, 0.0];
        let lambda = 0.8;
        let grid = simplex_grid_argmax(&q, lambda, 400);
        let exch = simplex_exchange_argmax(&q, lambda);
        for (g, e) in grid.iter().zip(&exch) {
            assert!((g - e).abs() < 5e-3, "{g} vs {e}");
        }
    }

    #[test]
    fn exchange_finds_the_vertex_for_tiny_lambda() {
        let q = [0.2, 0.9, 0.1];
        let pi = simplex_exchange_argmax(&q, 1e-3);
        assert!((pi[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exchange_finds_uniform_for_huge_lambda() {
        let q = [0.2, 0.9, 0.1, 0.4];
        let pi = simplex_exchange_argmax(&q, 1e4);
        for p in &pi {
            assert!((p - 0.25).abs() < 1e-4);
        }
    }
}
