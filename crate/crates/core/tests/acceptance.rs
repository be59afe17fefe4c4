//! End-to-end acceptance checks. Run with `--nocapture` to see one
//! PASS/FAIL/SKIP line per criterion.

mod common;

use std::path::Path;
use std::time::Instant;

use common::{brute_ap, brute_auc, gj_inverse, objective_oracle, random_pd, random_raster, rng};
use ndarray::{Array1, Array2};
use netinfer::cirusim::{
    extract_span_series, span_score, svm_predict, svm_train, ClassWeight, RefractoryScope,
    SvmConfig,
};
use netinfer::dataset::{
    discover_networks, load_dataset, Dataset, EvalReport, FluorescencePanel, NeuronLayout,
};
use netinfer::eval::{
    leave_one_network_out, pr_auc, roc_auc, ConnectivityMethod, LabeledScores, Parallelism,
};
use netinfer::hawkes::{em_fit, simulate, EmConfig, HawkesModel};
use netinfer::model_free::{graphical_lasso, CovarianceEstimate, GlassoConfig};
use netinfer::pipeline::{prepare, Method, MethodKind, PrepareConfig, PreparedNetwork};
use netinfer::preprocess::{build_scatter_matrix, correct_scatter, ScatterConfig};
use netinfer::simgen::{generate, write_benchmark, BenchmarkSpec};
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

enum Status {
    Pass,
    Fail,
    Skip,
}

fn run(label: &str, budget_s: Option<f64>, f: impl FnOnce() -> Option<Check>) -> Status {
    let start = Instant::now();
    let outcome = f();
    let secs = start.elapsed().as_secs_f64();
    let outcome = outcome.map(|r| match (r, budget_s) {
        (Ok(_), Some(b)) if secs >= b => Err(format!("took {secs:.1}s, budget {b:.0}s")),
        (r, _) => r,
    });
    let (status, word, detail) = match outcome {
        None => (Status::Skip, "SKIP", "data not available".to_string()),
        Some(Ok(d)) => (Status::Pass, "PASS", d),
        Some(Err(d)) => (Status::Fail, "FAIL", d),
    };
    println!("{word} {label} [{secs:.2}s] {detail}");
    status
}

fn metrics_oracle() -> Check {
    let mut g = rng(1001);
    for case in 0..200 {
        let n = g.random_range(2..=50);
        let mut labels: Vec<bool> = (0..n).map(|_| g.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(g.random_range(0u32..10)) / 9.0)
            .collect();
        let data = LabeledScores::new(scores.clone(), labels.clone()).map_err(|e| e.to_string())?;
        let auc = roc_auc(&data).map_err(|e| e.to_string())?;
        let ap = pr_auc(&data).map_err(|e| e.to_string())?;
        ensure((auc - brute_auc(&scores, &labels)).abs() <= 1e-12, || {
            format!("case {case}: AUC {auc}")
        })?;
        ensure((ap - brute_ap(&scores, &labels)).abs() <= 1e-12, || {
            format!("case {case}: AP {ap}")
        })?;
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let other = roc_auc(&LabeledScores::new(scores, flipped).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure((auc + other - 1.0).abs() <= 1e-12, || {
            format!("case {case}: complement {auc} + {other}")
        })?;
    }
    Ok("200 instances match the oracles".into())
}

fn glasso_checks() -> Check {
    let estimate =
        |s: Array2<f64>| CovarianceEstimate::new(s.clone(), Array1::zeros(s.nrows())).unwrap();
    let max_diff =
        |a: &Array2<f64>, b: &Array2<f64>| (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut g = rng(1002);

    for n in 2..=10 {
        let s = random_pd(n, &mut g);
        let fit = graphical_lasso(
            &estimate(s.clone()),
            &GlassoConfig {
                lambda: 0.0,
                max_sweeps: 100,
                tol: 1e-4,
            },
        )
        .map_err(|e| e.to_string())?;
        let d = max_diff(&fit.precision.theta, &gj_inverse(&s));
        ensure(d <= 1e-6, || format!("(a) n={n}: inverse off by {d}"))?;
    }

    for case in 0..50 {
        let s = random_pd(3 + case % 8, &mut g);
        let cov = estimate(s.clone());
        let lambda = 0.05 * (1 + case % 5) as f64 * cov.max_abs_off_diagonal();
        let fit = graphical_lasso(
            &cov,
            &GlassoConfig {
                lambda,
                max_sweeps: 50,
                tol: 1e-10,
            },
        )
        .map_err(|e| e.to_string())?;
        for w in fit.objective_trace.windows(2) {
            ensure(w[1] >= w[0] - 1e-9, || {
                format!("(b) case {case}: {} -> {}", w[0], w[1])
            })?;
        }
        let direct = objective_oracle(&s, &fit.precision.theta, lambda);
        let last = *fit.objective_trace.last().unwrap();
        ensure(
            (direct - last).abs() <= 1e-9 * direct.abs().max(1.0),
            || format!("(b) case {case}: trace {last} vs {direct}"),
        )?;
        let eig =
            nalgebra::DMatrix::from_fn(s.nrows(), s.nrows(), |i, j| fit.precision.theta[[i, j]])
                .symmetric_eigenvalues();
        ensure(eig.iter().all(|&v| v > 0.0), || {
            format!("(d) case {case}: not positive definite")
        })?;
    }

    let cov = estimate(random_pd(9, &mut g));
    let top = cov.max_abs_off_diagonal();
    let mut last = usize::MAX;
    for step in 0..=12 {
        let lambda = top * step as f64 / 10.0;
        let fit = graphical_lasso(
            &cov,
            &GlassoConfig {
                lambda,
                max_sweeps: 200,
                tol: 1e-8,
            },
        )
        .map_err(|e| e.to_string())?;
        let nz = fit
            .precision
            .theta
            .indexed_iter()
            .filter(|((i, j), v)| i != j && v.abs() > 1e-8)
            .count();
        ensure(nz <= last, || {
            format!("(c) lambda {lambda}: {nz} nonzeros after {last}")
        })?;
        last = nz;
    }
    Ok("inversion, monotone objective, sparsity path, positive definite".into())
}

fn hawkes_checks() -> Check {
    let mut g = rng(1003);
    for case in 0..20 {
        let k = g.random_range(1..=5);
        let r = random_raster(&mut g, 400, k, 0.06, 50.0);
        let fit = em_fit(
            &r,
            &EmConfig {
                iterations: 40,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        for w in fit.trace.windows(2) {
            ensure(w[1] >= w[0] - 1e-9, || {
                format!("case {case}: {} -> {}", w[0], w[1])
            })?;
        }
    }
    for _ in 0..5 {
        let r = random_raster(&mut g, 2000, 1, 0.02, 50.0);
        let fit = em_fit(
            &r,
            &EmConfig {
                fit_weights: false,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let expected = r.total_spikes() as f64 / r.duration_s();
        ensure((fit.model.mu[0] - expected).abs() <= 1e-9, || {
            format!("mu {} vs {expected}", fit.model.mu[0])
        })?;
    }
    let mut hits = 0;
    for seed in 0..10 {
        let mut w = Array2::zeros((4, 4));
        w[[0, 1]] = 0.5;
        let m = HawkesModel::new(vec![1.0; 4], w, 10.0).map_err(|e| e.to_string())?;
        let r = simulate(&m, 200.0, 50.0, seed).map_err(|e| e.to_string())?;
        let fit = em_fit(&r, &EmConfig::default()).map_err(|e| e.to_string())?;
        let w = &fit.model.weights;
        let best = w
            .indexed_iter()
            .filter(|((i, j), _)| i != j)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(ij, _)| ij)
            .unwrap();
        hits += usize::from(best == (0, 1));
    }
    ensure(hits >= 9, || format!("planted edge recovered {hits}/10"))?;
    Ok(format!(
        "monotone EM, exact single-neuron rate, planted edge {hits}/10"
    ))
}

fn scatter_round_trip() -> Check {
    let mut g = rng(1004);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = g.random_range(2..=40);
        let frames = g.random_range(2..=100);
        let layout = NeuronLayout::new((0..n).map(|_| [g.random(), g.random()]).collect())
            .map_err(|e| e.to_string())?;
        let values = Array2::from_shape_fn((frames, n), |_| g.random_range(-1.0..3.0));
        let panel = FluorescencePanel::new(values.clone(), 50.0).map_err(|e| e.to_string())?;
        let d =
            build_scatter_matrix(&layout, &ScatterConfig::default()).map_err(|e| e.to_string())?;
        let back = correct_scatter(&d.scatter(&panel).map_err(|e| e.to_string())?, &d)
            .map_err(|e| e.to_string())?;
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = (back.values() - &values)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            / scale;
        worst = worst.max(err);
    }
    ensure(worst <= 1e-8, || format!("relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.1e}"))
}

fn crossval_all(networks: &[PreparedNetwork]) -> Result<Vec<EvalReport>, String> {
    MethodKind::ALL
        .iter()
        .map(|&k| {
            leave_one_network_out(networks, &Method::new(k), Parallelism::Sequential)
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn load_dir(dir: &Path) -> Result<Vec<PreparedNetwork>, String> {
    let files = discover_networks(dir).map_err(|e| e.to_string())?;
    files
        .iter()
        .map(|f| {
            let ds = load_dataset(&f.fluorescence, &f.positions, f.network.as_deref(), 50.0)
                .map_err(|e| e.to_string())?;
            prepare(f.id.clone(), &ds, &PrepareConfig::default()).map_err(|e| e.to_string())
        })
        .collect()
}

fn synthetic_benchmark() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_benchmark(&BenchmarkSpec::default(), 10, tmp.path()).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let networks = load_dir(tmp.path())?;
    ensure(networks.len() == 10, || {
        format!("found {} networks", networks.len())
    })?;
    let reports = crossval_all(&networks)?;
    let secs = start.elapsed().as_secs_f64();
    let mut line = String::new();
    for r in &reports {
        line.push_str(&format!("{}={:.3}/{:.3} ", r.method_tag, r.auc, r.prc));
    }
    let auc = |tag: &str| reports.iter().find(|r| r.method_tag == tag).unwrap().auc;
    let ordering = if auc("glasso") >= auc("pca") {
        "glasso>=pca"
    } else {
        "glasso<pca"
    };
    line.push_str(&format!("({ordering}, crossval {secs:.1}s)"));
    ensure(secs < 300.0, || format!("crossval took {secs:.1}s; {line}"))?;
    for tag in ["glasso", "xcorr"] {
        ensure(auc(tag) >= 0.70, || format!("{tag} below 0.70; {line}"))?;
    }
    for r in &reports {
        ensure(r.auc >= 0.60, || {
            format!("{} below 0.60; {line}", r.method_tag)
        })?;
    }
    Ok(line)
}

fn cirusim_components() -> Check {
    let mut g = rng(1006);
    for _ in 0..20 {
        let k = g.random_range(2..=6);
        let r = random_raster(&mut g, 500, k, 0.04, 50.0);
        for scope in [RefractoryScope::SourceNeuron, RefractoryScope::AnyNeuron] {
            for s in extract_span_series(&r, g.random_range(0.0..2.0), scope) {
                ensure(s.spans_s.iter().all(|&x| x > 0.0), || {
                    format!("non-positive span {:?}", s.spans_s)
                })?;
            }
        }
    }
    for k in 1..=1000 {
        let x = k as f64 * 0.005;
        let want = (1.0 / x.max(0.1)).exp() - 1.0;
        let got = span_score(x, 0.1);
        ensure((got - want).abs() <= 1e-12 * want.max(1.0), || {
            format!("transform at {x}: {got} vs {want}")
        })?;
    }

    let all_correct = |x: &Array2<f64>, y: &[f64], c: f64| -> Result<bool, String> {
        let m = svm_train(
            x,
            y,
            &SvmConfig {
                c,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        Ok(svm_predict(&m, x)
            .map_err(|e| e.to_string())?
            .iter()
            .zip(y)
            .all(|(s, l)| s * l > 0.0))
    };
    let sep = Array2::from_shape_fn((40, 2), |(t, _)| {
        g.random_range(0.0..1.0) + if t < 20 { 3.0 } else { 0.0 }
    });
    let ys: Vec<f64> = (0..40).map(|t| if t < 20 { 1.0 } else { -1.0 }).collect();
    ensure(all_correct(&sep, &ys, 10.0)?, || {
        "separable fixture misclassified".into()
    })?;
    let xor = ndarray::array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    ensure(all_correct(&xor, &[1.0, 1.0, -1.0, -1.0], 100.0)?, || {
        "XOR fixture misclassified".into()
    })?;

    let x = Array2::from_shape_fn((200, 2), |(t, _)| {
        g.random_range(-1.0..1.0) + if t < 20 { 0.7 } else { 0.0 }
    });
    let y: Vec<f64> = (0..200).map(|t| if t < 20 { 1.0 } else { -1.0 }).collect();
    let recall = |w: ClassWeight| -> Result<f64, String> {
        let m = svm_train(
            &x,
            &y,
            &SvmConfig {
                class_weight: w,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let p = svm_predict(&m, &x).map_err(|e| e.to_string())?;
        Ok(p[..20].iter().filter(|&&s| s > 0.0).count() as f64 / 20.0)
    };
    let (rb, ru) = (
        recall(ClassWeight::Balanced)?,
        recall(ClassWeight::Uniform)?,
    );
    ensure(rb >= ru, || {
        format!("minority recall balanced {rb} < uniform {ru}")
    })?;
    Ok(format!(
        "minority recall balanced {rb:.2} vs uniform {ru:.2}"
    ))
}

fn score_contract() -> Check {
    let mut g = rng(1007);
    for case in 0..12 {
        let n = g.random_range(3..=10);
        let mut make = |seed: u64| -> Result<PreparedNetwork, String> {
            let spec = BenchmarkSpec {
                neuron_count: n,
                density: g.random_range(0.1..0.4),
                duration_s: g.random_range(10.0..40.0),
                seed,
                ..Default::default()
            };
            let b = generate(&spec).map_err(|e| e.to_string())?;
            let ds = Dataset {
                panel: b.panel,
                layout: b.layout,
                truth: Some(b.truth),
            };
            prepare("n", &ds, &PrepareConfig::default()).map_err(|e| e.to_string())
        };
        let train = make(2 * case)?;
        let test = make(2 * case + 1)?;
        for kind in MethodKind::ALL {
            let s = Method::new(kind)
                .score(&[&train], &test)
                .map_err(|e| e.to_string())?;
            for ((i, j), &v) in s.scores().indexed_iter() {
                ensure((0.0..=1.0).contains(&v), || {
                    format!("{kind} case {case}: ({i},{j}) = {v}")
                })?;
                ensure(i != j || v == 0.0, || {
                    format!("{kind} case {case}: diagonal {v}")
                })?;
            }
        }
    }
    Ok("12 random networks, 5 methods".into())
}

fn challenge_data() -> Option<Check> {
    let dir = std::env::var_os("NETINFER_CHALEARN_DIR")?;
    Some((|| {
        let networks = load_dir(Path::new(&dir))?;
        ensure(networks.len() >= 2, || {
            format!("found {} networks", networks.len())
        })?;
        let run = |k| {
            leave_one_network_out(&networks, &Method::new(k), Parallelism::Sequential)
                .map_err(|e| e.to_string())
        };
        let glasso = run(MethodKind::Glasso)?;
        let cirusim = run(MethodKind::Cirusim)?;
        let line = format!(
            "glasso AUC {:.3}, cirusim AUC {:.3}",
            glasso.auc, cirusim.auc
        );
        ensure((glasso.auc - 0.831).abs() <= 0.05, || {
            format!("glasso outside 0.831 +- 0.05; {line}")
        })?;
        ensure(glasso.auc > cirusim.auc, || {
            format!("glasso not above cirusim; {line}")
        })?;
        Ok(line)
    })())
}

#[test]
fn acceptance() {
    let results = [
        run("1 metric oracles", Some(5.0), || Some(metrics_oracle())),
        run("2 graphical lasso", Some(30.0), || Some(glasso_checks())),
        run("3 hawkes EM", Some(60.0), || Some(hawkes_checks())),
        run("4 scatter round trip", None, || Some(scatter_round_trip())),
        run(
            "5 synthetic benchmark",
            None,
            || Some(synthetic_benchmark()),
        ),
        run("6 CIRUSIM components", None, || Some(cirusim_components())),
        run("7 score contract", None, || Some(score_contract())),
        run("8 challenge data", None, challenge_data),
    ];
    let failed = results.iter().filter(|s| matches!(s, Status::Fail)).count();
    let skipped = results.iter().filter(|s| matches!(s, Status::Skip)).count();
    println!(
        "{} passed, {failed} failed, {skipped} skipped",
        results.len() - failed - skipped
    );
    assert_eq!(failed, 0);
}
