mod common;

use common::{random_raster, rng};
use ndarray::Array2;
use netinfer::cirusim::{
    cirusim_scores, extract_span_series, featurize_scores, span_score, svm_predict, svm_train,
    CirusimConfig, ClassWeight, RefractoryScope, SvmConfig,
};
use netinfer::eval::{roc_auc, LabeledScores};
use netinfer::simgen::{generate, BenchmarkSpec};
use rand::Rng;

/// Spans by scanning every spike, no sorting or binary search.
fn span_oracle(times: &[Vec<f64>], i: usize, j: usize, refractory: f64, any: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for &t in &times[i] {
        let next = times[j]
            .iter()
            .copied()
            .filter(|&s| s > t)
            .fold(f64::INFINITY, f64::min);
        if !next.is_finite() {
            continue;
        }
        let pool: Vec<f64> = if any {
            times.iter().flatten().copied().collect()
        } else {
            times[i].clone()
        };
        let prev = pool
            .iter()
            .copied()
            .filter(|&s| s < t)
            .fold(f64::NEG_INFINITY, f64::max);
        if prev.is_finite() && next - prev < refractory {
            continue;
        }
        out.push(next - t);
    }
    out
}

#[test]
fn spans_match_scan_and_are_positive() {
    let mut g = rng(41);
    for case in 0..20 {
        let k = g.random_range(2..=6);
        let r = random_raster(&mut g, 300, k, 0.03, 50.0);
        let refractory = g.random_range(0.0..1.5);
        for (scope, any) in [
            (RefractoryScope::SourceNeuron, false),
            (RefractoryScope::AnyNeuron, true),
        ] {
            let series = extract_span_series(&r, refractory, scope);
            assert_eq!(series.len(), k * (k - 1));
            for s in &series {
                assert!(s.spans_s.iter().all(|&x| x > 0.0), "case {case}");
                assert_eq!(
                    s.spans_s,
                    span_oracle(r.spike_times(), s.source, s.target, refractory, any)
                );
            }
        }
    }
}

#[test]
fn score_transform_is_exact_and_decreasing() {
    let mut last = f64::INFINITY;
    for k in 1..=400 {
        let x = k as f64 * 0.01;
        let s = span_score(x, 0.1);
        let expected = (1.0 / x.max(0.1)).exp() - 1.0;
        assert!((s - expected).abs() <= 1e-12 * expected.max(1.0));
        assert!(s <= last);
        last = s;
    }
    assert_eq!(span_score(0.02, 0.1), span_score(0.1, 0.1));
}

#[test]
fn features_of_known_scores() {
    let scores: Vec<f64> = (1..=20).map(f64::from).collect();
    let f = featurize_scores(&scores);
    assert_eq!(f.impulse_count, 20);
    assert!((f.mean_score - 10.5).abs() < 1e-12);
    assert!((f.var_score - 33.25).abs() < 1e-12);
    assert_eq!(f.p95_score, 19.0);
    assert_eq!(featurize_scores(&[]).impulse_count, 0);
}

fn blobs(g: &mut impl Rng, pos: usize, neg: usize, gap: f64) -> (Array2<f64>, Vec<f64>) {
    let n = pos + neg;
    let labels: Vec<f64> = (0..n).map(|t| if t < pos { 1.0 } else { -1.0 }).collect();
    let x = Array2::from_shape_fn((n, 2), |(t, _)| {
        g.random_range(-1.0..1.0) + if t < pos { gap } else { 0.0 }
    });
    (x, labels)
}

#[test]
fn dual_solution_is_feasible() {
    let mut g = rng(42);
    for case in 0..10 {
        let (x, y) = blobs(&mut g, 15 + case, 40, 0.8);
        for weight in [ClassWeight::Balanced, ClassWeight::Uniform] {
            let cfg = SvmConfig {
                class_weight: weight,
                ..Default::default()
            };
            let m = svm_train(&x, &y, &cfg).unwrap();
            assert!(m.converged);
            let mut total = 0.0;
            for (sv, &c) in m.support_vectors.outer_iter().zip(&m.dual_coefficients) {
                let label = c.signum();
                assert!(
                    c.abs() > 0.0 && c.abs() <= m.box_bound(label) + 1e-12,
                    "case {case}"
                );
                assert_eq!(sv.len(), 2);
                total += c;
            }
            assert!(total.abs() <= 1e-9, "case {case}: sum {total}");
        }
    }
}

fn recall(scores: &[f64], labels: &[f64]) -> f64 {
    let pos: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] > 0.0).collect();
    pos.iter().filter(|&&t| scores[t] > 0.0).count() as f64 / pos.len() as f64
}

#[test]
fn balanced_weights_help_the_minority() {
    let mut g = rng(43);
    let mut wins = 0;
    for _ in 0..10 {
        let (x, y) = blobs(&mut g, 20, 180, 0.7);
        let bal = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        let uni = svm_train(
            &x,
            &y,
            &SvmConfig {
                class_weight: ClassWeight::Uniform,
                ..Default::default()
            },
        )
        .unwrap();
        let rb = recall(&svm_predict(&bal, &x).unwrap(), &y);
        let ru = recall(&svm_predict(&uni, &x).unwrap(), &y);
        assert!(rb >= ru, "balanced {rb} < uniform {ru}");
        wins += usize::from(rb > ru);
    }
    assert!(wins > 0);
}

#[test]
fn prediction_ignores_row_order() {
    let mut g = rng(44);
    let (x, y) = blobs(&mut g, 30, 30, 1.0);
    let m = svm_train(&x, &y, &SvmConfig::default()).unwrap();
    let forward = svm_predict(&m, &x).unwrap();
    let order: Vec<usize> = (0..x.nrows()).rev().collect();
    let reversed = svm_predict(&m, &x.select(ndarray::Axis(0), &order)).unwrap();
    for (k, &t) in order.iter().enumerate() {
        assert_eq!(reversed[k], forward[t]);
    }
}

#[test]
fn separable_and_xor_fit_exactly() {
    let mut g = rng(45);
    let (x, y) = blobs(&mut g, 25, 25, 3.0);
    let cfg = SvmConfig {
        c: 10.0,
        ..Default::default()
    };
    let m = svm_train(&x, &y, &cfg).unwrap();
    let p = svm_predict(&m, &x).unwrap();
    assert!(p.iter().zip(&y).all(|(s, l)| s * l > 0.0));

    let xor = ndarray::array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let yx = [1.0, 1.0, -1.0, -1.0];
    let m = svm_train(
        &xor,
        &yx,
        &SvmConfig {
            c: 100.0,
            ..Default::default()
        },
    )
    .unwrap();
    let p = svm_predict(&m, &xor).unwrap();
    assert!(p.iter().zip(&yx).all(|(s, l)| s * l > 0.0));
}

#[test]
fn scores_rank_training_network_above_chance() {
    for seed in 0..10 {
        let spec = BenchmarkSpec {
            neuron_count: 12,
            density: 0.15,
            duration_s: 120.0,
            seed,
            ..Default::default()
        };
        let b = generate(&spec).unwrap();
        let cfg = CirusimConfig::default();
        let s = cirusim_scores(&[(&b.raster, &b.truth)], &b.raster, &cfg).unwrap();
        let data = LabeledScores::from_matrix(&s, &b.truth).unwrap();
        let auc = roc_auc(&data).unwrap();
        assert!(auc >= 0.5, "seed {seed}: {auc}");
        assert!(s.scores().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
