//! Ranking metrics over directed pairs and the leave-one-network-out driver.

use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::{EvalReport, FoldResult, GroundTruthNetwork, ScoreMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("no scored pairs"));
        }
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("score is NaN"));
        }
        Ok(Self { scores, labels })
    }

    /// All off-diagonal ordered pairs in row-major order.
    pub fn from_matrix(scores: &ScoreMatrix, truth: &GroundTruthNetwork) -> Result<Self> {
        let n = scores.neuron_count();
        if truth.neuron_count() != n {
            return Err(Error::Inconsistent(format!(
                "score matrix has {n} neurons, ground truth {}",
                truth.neuron_count()
            )));
        }
        let mut s = Vec::with_capacity(n * n.saturating_sub(1));
        let mut l = Vec::with_capacity(s.capacity());
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                s.push(scores.get(i, j));
                l.push(truth.has_edge(i, j));
            }
        }
        Self::new(s, l)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    fn sorted_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        idx
    }
}

/// Mann-Whitney statistic with midranks for ties.
pub fn roc_auc(data: &LabeledScores) -> Result<f64> {
    let p = data.positives();
    let n = data.negatives();
    if p == 0 || n == 0 {
        return Err(Error::invalid("AUC undefined: both classes are required"));
    }
    let idx = data.sorted_indices();
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let v = data.scores[idx[start]];
        let mut end = start;
        while end < idx.len() && data.scores[idx[end]] == v {
            end += 1;
        }
        // ranks start+1 ..= end
        let midrank = (start + 1 + end) as f64 / 2.0;
        let block_pos = idx[start..end].iter().filter(|&&k| data.labels[k]).count();
        rank_sum += midrank * block_pos as f64;
        start = end;
    }
    let p = p as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n as f64))
}

/// Average precision, with equal scores processed as one block.
pub fn pr_auc(data: &LabeledScores) -> Result<f64> {
    let p = data.positives();
    if p == 0 {
        return Err(Error::invalid(
            "precision-recall area undefined: no positive pairs",
        ));
    }
    let mut idx = data.sorted_indices();
    idx.reverse();
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut ap = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let v = data.scores[idx[start]];
        let mut end = start;
        while end < idx.len() && data.scores[idx[end]] == v {
            end += 1;
        }
        let block_pos = idx[start..end].iter().filter(|&&k| data.labels[k]).count();
        tp += block_pos;
        seen += end - start;
        if block_pos > 0 {
            ap += (tp as f64 / seen as f64) * (block_pos as f64 / p as f64);
        }
        start = end;
    }
    // Summation can overshoot one by an ulp on perfect rankings.
    Ok(ap.min(1.0))
}

/// A network with known connectivity that can be held out in a fold.
pub trait LabeledNetwork {
    fn id(&self) -> &str;
    fn truth(&self) -> Option<&GroundTruthNetwork>;
}

pub trait ConnectivityMethod<N>: Sync {
    fn tag(&self) -> String;
    /// Supervised methods receive the other networks as training data;
    /// unsupervised ones always get an empty slice.
    fn is_supervised(&self) -> bool;
    fn score(&self, training: &[&N], test: &N) -> Result<ScoreMatrix>;
}

/// Worker threads for independent folds. Fold results are collected in
/// network order whatever the setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    #[default]
    Sequential,
    Threads(usize),
}

pub fn evaluate_scores(
    network_id: &str,
    scores: &ScoreMatrix,
    truth: &GroundTruthNetwork,
    seconds: f64,
) -> Result<FoldResult> {
    let data = LabeledScores::from_matrix(scores, truth)?;
    Ok(FoldResult {
        network_id: network_id.to_string(),
        auc: roc_auc(&data)?,
        prc: pr_auc(&data)?,
        seconds,
    })
}

fn run_fold<N: LabeledNetwork, M: ConnectivityMethod<N> + ?Sized>(
    networks: &[N],
    held_out: usize,
    method: &M,
) -> Result<FoldResult> {
    let test = &networks[held_out];
    let training: Vec<&N> = if method.is_supervised() {
        networks
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != held_out)
            .map(|(_, n)| n)
            .collect()
    } else {
        Vec::new()
    };
    let start = Instant::now();
    let scores = method.score(&training, test)?;
    let seconds = start.elapsed().as_secs_f64();
    let truth = test.truth().expect("checked before folding");
    evaluate_scores(test.id(), &scores, truth, seconds)
}

/// Holds out each network once, scores it, and reports per-fold and mean
/// AUC, PR area and wall-clock seconds.
pub fn leave_one_network_out<N, M>(
    networks: &[N],
    method: &M,
    parallelism: Parallelism,
) -> Result<EvalReport>
where
    N: LabeledNetwork + Sync,
    M: ConnectivityMethod<N> + ?Sized,
{
    if networks.is_empty() {
        return Err(Error::invalid("no networks to evaluate"));
    }
    if let Some(n) = networks.iter().find(|n| n.truth().is_none()) {
        return Err(Error::Inconsistent(format!(
            "network {} has no ground truth",
            n.id()
        )));
    }
    if method.is_supervised() && networks.len() < 2 {
        return Err(Error::invalid(format!(
            "supervised method {} needs at least 2 networks, got {}",
            method.tag(),
            networks.len()
        )));
    }
    let folds: Vec<FoldResult> = match parallelism {
        Parallelism::Threads(threads) if threads > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| {
                (0..networks.len())
                    .into_par_iter()
                    .map(|k| run_fold(networks, k, method))
                    .collect::<Result<Vec<_>>>()
            })?
        }
        _ => (0..networks.len())
            .map(|k| run_fold(networks, k, method))
            .collect::<Result<Vec<_>>>()?,
    };
    EvalReport::from_folds(method.tag(), folds)
}
