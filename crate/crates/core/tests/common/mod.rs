#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use netinfer::preprocess::SpikeRaster;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fraction of positive/negative pairs ranked correctly, ties counted half.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average precision by sweeping every distinct score as a threshold and
/// summing precision times the recall gained at that threshold.
pub fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for thr in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&k| scores[k] >= thr).collect();
        let tp = selected.iter().filter(|&&k| labels[k]).count() as f64;
        let precision = tp / selected.len() as f64;
        let recall = tp / total_pos;
        ap += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    ap
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gj_inverse(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[[x, col]].abs().total_cmp(&m[[y, col]].abs()))
            .unwrap();
        for k in 0..n {
            m.swap([col, k], [pivot, k]);
            inv.swap([col, k], [pivot, k]);
        }
        let p = m[[col, col]];
        assert!(p.abs() > 1e-300, "singular matrix");
        for k in 0..n {
            m[[col, k]] /= p;
            inv[[col, k]] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[[r, col]];
                if f != 0.0 {
                    for k in 0..n {
                        m[[r, k]] -= f * m[[col, k]];
                        inv[[r, k]] -= f * inv[[col, k]];
                    }
                }
            }
        }
    }
    inv
}

/// `log |det a|` by Gaussian elimination; `None` if the determinant is not positive.
pub fn ge_log_det(a: &Array2<f64>) -> Option<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut sign = 1.0;
    let mut acc = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[[x, col]].abs().total_cmp(&m[[y, col]].abs()))
            .unwrap();
        if pivot != col {
            for k in 0..n {
                m.swap([col, k], [pivot, k]);
            }
            sign = -sign;
        }
        let p = m[[col, col]];
        if p == 0.0 {
            return None;
        }
        if p < 0.0 {
            sign = -sign;
        }
        acc += p.abs().ln();
        for r in col + 1..n {
            let f = m[[r, col]] / p;
            for k in col..n {
                m[[r, k]] -= f * m[[col, k]];
            }
        }
    }
    (sign > 0.0).then_some(acc)
}

/// `log det T - tr(S T) - lambda * sum_{i != j} |T_ij|`
pub fn objective_oracle(s: &Array2<f64>, theta: &Array2<f64>, lambda: f64) -> f64 {
    let n = s.nrows();
    let mut trace = 0.0;
    let mut l1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            trace += s[[i, j]] * theta[[j, i]];
            if i != j {
                l1 += theta[[i, j]].abs();
            }
        }
    }
    ge_log_det(theta).unwrap_or(f64::NEG_INFINITY) - trace - lambda * l1
}

/// `A A' / n + 0.5 I` for a random Gaussian-ish `A`.
pub fn random_pd(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = Array2::from_shape_fn((n, n + 3), |_| rng.random::<f64>() * 2.0 - 1.0);
    a.dot(&a.t()) / n as f64 + Array2::<f64>::eye(n) * 0.5
}

pub fn raster_from(frames: usize, k: usize, spikes: &[(usize, usize)], rate: f64) -> SpikeRaster {
    let mut events = Array2::<u8>::zeros((frames, k));
    for &(t, c) in spikes {
        events[[t, c]] = 1;
    }
    SpikeRaster::from_events(events, rate).unwrap()
}

pub fn random_raster(
    rng: &mut impl Rng,
    frames: usize,
    k: usize,
    p: f64,
    rate: f64,
) -> SpikeRaster {
    let events = Array2::from_shape_fn((frames, k), |(t, _)| {
        u8::from(t > 0 && rng.random::<f64>() < p)
    });
    SpikeRaster::from_events(events, rate).unwrap()
}

/// Hawkes log-likelihood evaluated straight from its definition: every
/// earlier spike is a parent and the compensator counts full offspring.
pub fn hawkes_ll_oracle(
    events: &[(f64, usize)],
    mu: &[f64],
    w: &Array2<f64>,
    theta: f64,
    duration: f64,
) -> f64 {
    let mut ll = -mu.iter().sum::<f64>() * duration;
    for &(_, c) in events {
        ll -= w.row(c).sum();
    }
    for &(t, c) in events {
        let mut lambda = mu[c];
        for &(tp, cp) in events {
            if tp < t {
                lambda += w[[cp, c]] * theta * (-theta * (t - tp)).exp();
            }
        }
        ll += lambda.ln();
    }
    ll
}
