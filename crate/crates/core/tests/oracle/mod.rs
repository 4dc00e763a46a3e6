//! Slow, direct reference implementations used as test oracles.
#![allow(dead_code)]

use methodtag_core::cluster::{LinkageMethod, Metric};
use methodtag_core::{ConfusionCounts, ModelConfig, ModelParams};

/// annotation score for (preferred?, words), written out by hand.
pub const SCORE_TABLE: [(bool, u32, u32); 12] = [
    (true, 1, 10),
    (true, 2, 26),
    (true, 3, 39),
    (true, 4, 52),
    (true, 5, 65),
    (true, 6, 78),
    (false, 1, 5),
    (false, 2, 16),
    (false, 3, 24),
    (false, 4, 32),
    (false, 5, 40),
    (false, 6, 48),
];

/// Cell loop over two dense 0/1 matrices.
pub fn naive_counts(pred: &[Vec<u8>], gold: &[Vec<u8>]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (pr, gr) in pred.iter().zip(gold) {
        for (&p, &g) in pr.iter().zip(gr) {
            match (p == 1, g == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
    }
    c
}

/// (accuracy, precision, recall, f1, hamming), `None` where undefined.
pub fn naive_metrics(pred: &[Vec<u8>], gold: &[Vec<u8>]) -> [Option<f64>; 5] {
    let mut cells = 0u64;
    let mut right = 0u64;
    let mut wrong = 0u64;
    let mut pred_pos = 0u64;
    let mut gold_pos = 0u64;
    let mut both = 0u64;
    for (pr, gr) in pred.iter().zip(gold) {
        for (&p, &g) in pr.iter().zip(gr) {
            cells += 1;
            if p == g {
                right += 1;
            } else {
                wrong += 1;
            }
            pred_pos += u64::from(p);
            gold_pos += u64::from(g);
            both += u64::from(p & g);
        }
    }
    let div = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let precision = div(both, pred_pos);
    let recall = div(both, gold_pos);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    [div(right, cells), precision, recall, f1, div(wrong, cells)]
}

fn point_distance(a: &[u8], b: &[u8], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
            .sum::<f64>()
            .sqrt(),
        Metric::Jaccard => {
            let union = a.iter().zip(b).filter(|(&x, &y)| x == 1 || y == 1).count();
            let inter = a.iter().zip(b).filter(|(&x, &y)| x == 1 && y == 1).count();
            if union == 0 {
                0.0
            } else {
                1.0 - inter as f64 / union as f64
            }
        }
    }
}

fn cluster_distance(rows: &[Vec<u8>], a: &[usize], b: &[usize], method: LinkageMethod, metric: Metric) -> f64 {
    let pairs = || a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j)));
    match method {
        LinkageMethod::Single => pairs()
            .map(|(i, j)| point_distance(&rows[i], &rows[j], metric))
            .fold(f64::INFINITY, f64::min),
        LinkageMethod::Complete => pairs()
            .map(|(i, j)| point_distance(&rows[i], &rows[j], metric))
            .fold(0.0, f64::max),
        LinkageMethod::Average => {
            pairs().map(|(i, j)| point_distance(&rows[i], &rows[j], metric)).sum::<f64>()
                / (a.len() * b.len()) as f64
        }
        LinkageMethod::Ward => {
            let width = rows[0].len();
            let centroid = |members: &[usize]| -> Vec<f64> {
                (0..width)
                    .map(|c| members.iter().map(|&i| f64::from(rows[i][c])).sum::<f64>() / members.len() as f64)
                    .collect()
            };
            let (ca, cb) = (centroid(a), centroid(b));
            let sq: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y).powi(2)).sum();
            let (na, nb) = (a.len() as f64, b.len() as f64);
            (2.0 * na * nb / (na + nb) * sq).sqrt()
        }
    }
}

/// Recomputes every inter-cluster distance from the raw rows at every step.
/// Returns (a, b, distance, size) per merge, with the same numbering and
/// tie rule as the library.
pub fn naive_linkage(rows: &[Vec<u8>], method: LinkageMethod, metric: Metric) -> Vec<(usize, usize, f64, usize)> {
    naive_linkage_with_ties(rows, method, metric).0
}

/// Like [`naive_linkage`], also reporting whether any step had more than one
/// closest pair.
pub fn naive_linkage_with_ties(
    rows: &[Vec<u8>],
    method: LinkageMethod,
    metric: Metric,
) -> (Vec<(usize, usize, f64, usize)>, bool) {
    let n = rows.len();
    let mut tied = false;
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    for step in 0..n - 1 {
        let mut cands = Vec::new();
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let d = cluster_distance(rows, &clusters[x].1, &clusters[y].1, method, metric);
                let (ia, ib) = (clusters[x].0, clusters[y].0);
                cands.push((d, (ia.min(ib), ia.max(ib)), x, y));
            }
        }
        let dmin = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let slack = 1e-12 * dmin.max(1.0);
        tied |= cands.iter().filter(|c| c.0 <= dmin + slack).count() > 1;
        let &(d, (a, b), x, y) = cands
            .iter()
            .filter(|c| c.0 <= dmin + slack)
            .min_by_key(|c| c.1)
            .expect("candidate");
        let mut members = clusters[x].1.clone();
        members.extend(&clusters[y].1);
        let size = members.len();
        clusters.remove(y);
        clusters.remove(x);
        clusters.push((n + step, members));
        out.push((a, b, d, size));
    }
    (out, tied)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn layer_norm(row: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    row.iter()
        .enumerate()
        .map(|(c, v)| gamma[c] * (v - mean) / (var + 1e-12).sqrt() + beta[c])
        .collect()
}

fn at(t: &methodtag_core::Tensor2D, r: usize, c: usize) -> f64 {
    t.data()[r * t.cols() + c]
}

/// Scalar transcription of the encoder in inference mode.
pub fn reference_forward(params: &ModelParams, config: &ModelConfig, ids: &[u32], mask: &[u8]) -> Vec<f64> {
    let d = config.d_model;
    let seq = ids.len();
    let dk = d / config.heads;
    let mut x: Vec<Vec<f64>> = (0..seq)
        .map(|t| {
            (0..d)
                .map(|c| at(&params.token_embedding, ids[t] as usize, c) + at(&params.position_embedding, t, c))
                .collect()
        })
        .collect();
    for layer in &params.layers {
        let proj = |w: &methodtag_core::Tensor2D| -> Vec<Vec<f64>> {
            (0..seq)
                .map(|t| (0..d).map(|c| (0..d).map(|i| x[t][i] * at(w, i, c)).sum()).collect())
                .collect()
        };
        let (q, k, v) = (proj(&layer.w_query), proj(&layer.w_key), proj(&layer.w_value));
        let mut concat = vec![vec![0.0; d]; seq];
        for h in 0..config.heads {
            for t in 0..seq {
                let scores: Vec<f64> = (0..seq)
                    .map(|s| {
                        let dot: f64 = (0..dk).map(|c| q[t][h * dk + c] * k[s][h * dk + c]).sum();
                        dot / (dk as f64).sqrt() + if mask[s] == 0 { -1e9 } else { 0.0 }
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dk {
                    concat[t][h * dk + c] = (0..seq).map(|s| e[s] / z * v[s][h * dk + c]).sum();
                }
            }
        }
        let mut y1 = Vec::with_capacity(seq);
        for t in 0..seq {
            let r: Vec<f64> = (0..d)
                .map(|c| x[t][c] + (0..d).map(|i| concat[t][i] * at(&layer.w_out, i, c)).sum::<f64>())
                .collect();
            y1.push(layer_norm(&r, layer.ln1_gamma.data(), layer.ln1_beta.data()));
        }
        let mut out = Vec::with_capacity(seq);
        for t in 0..seq {
            let hidden: Vec<f64> = (0..config.d_ff)
                .map(|f| {
                    gelu((0..d).map(|i| y1[t][i] * at(&layer.ff_in, i, f)).sum::<f64>() + layer.ff_in_bias.data()[f])
                })
                .collect();
            let r: Vec<f64> = (0..d)
                .map(|c| {
                    y1[t][c]
                        + (0..config.d_ff).map(|f| hidden[f] * at(&layer.ff_out, f, c)).sum::<f64>()
                        + layer.ff_out_bias.data()[c]
                })
                .collect();
            out.push(layer_norm(&r, layer.ln2_gamma.data(), layer.ln2_beta.data()));
        }
        x = out;
    }
    let pre: Vec<f64> = (0..d)
        .map(|c| {
            ((0..d).map(|i| x[0][i] * at(&params.pre_classifier, i, c)).sum::<f64>()
                + params.pre_classifier_bias.data()[c])
                .max(0.0)
        })
        .collect();
    (0..config.num_labels)
        .map(|j| (0..d).map(|i| pre[i] * at(&params.classifier, i, j)).sum::<f64>() + params.classifier_bias.data()[j])
        .collect()
}

/// −[y·ln σ(x) + (1−y)·ln(1−σ(x))] evaluated the textbook way.
pub fn naive_bce(x: f64, y: f64) -> f64 {
    let p = 1.0 / (1.0 + (-x).exp());
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}
