//! TF-IDF embedding of templates and a diagonal-covariance Gaussian mixture.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LogTemplate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateVector {
    pub template_id: String,
    pub weights: Vec<f64>,
}

/// L2-normalized TF-IDF over lowercased literal tokens with smoothed idf
/// `ln((1 + n) / (1 + df)) + 1`.
pub fn tfidf(templates: &[LogTemplate]) -> (Vec<String>, Vec<TemplateVector>) {
    let docs: Vec<Vec<String>> = templates
        .iter()
        .map(|t| t.literals().map(str::to_lowercase).collect())
        .collect();
    let vocab: Vec<String> = docs
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let mut df = vec![0usize; vocab.len()];
    for d in &docs {
        for w in d.iter().collect::<BTreeSet<_>>() {
            df[index[w.as_str()]] += 1;
        }
    }
    let n = docs.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
    let vectors = templates
        .iter()
        .zip(&docs)
        .map(|(t, d)| {
            let mut w = vec![0.0; vocab.len()];
            for tok in d {
                w[index[tok.as_str()]] += 1.0;
            }
            let len = d.len().max(1) as f64;
            for (i, v) in w.iter_mut().enumerate() {
                *v = *v / len * idf[i];
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                w.iter_mut().for_each(|x| *x /= norm);
            }
            TemplateVector {
                template_id: t.template_id.clone(),
                weights: w,
            }
        })
        .collect();
    (vocab, vectors)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Added to every variance.
    pub reg: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 2,
            iterations: 100,
            seed: 42,
            reg: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

impl Gmm {
    /// Fits by EM. Means start at a seeded first point followed by
    /// farthest-point picks; variances start at the data variance.
    /// Requires `data.len() >= k >= 1`.
    pub fn fit(data: &[Vec<f64>], cfg: &GmmConfig) -> Self {
        let k = cfg.k.max(1).min(data.len().max(1));
        let dim = data.first().map_or(0, Vec::len);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut centers = vec![rng.random_range(0..data.len())];
        while centers.len() < k {
            let far = (0..data.len())
                .map(|i| {
                    let d = centers
                        .iter()
                        .map(|&c| sq_dist(&data[i], &data[c]))
                        .fold(f64::INFINITY, f64::min);
                    (i, d)
                })
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            centers.push(far.0);
        }
        let n = data.len() as f64;
        let global_mean: Vec<f64> = (0..dim).map(|j| data.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let global_var: Vec<f64> = (0..dim)
            .map(|j| data.iter().map(|x| (x[j] - global_mean[j]).powi(2)).sum::<f64>() / n + cfg.reg)
            .collect();
        let mut g = Gmm {
            weights: vec![1.0 / k as f64; k],
            means: centers.iter().map(|&c| data[c].clone()).collect(),
            vars: vec![global_var; k],
        };
        for _ in 0..cfg.iterations {
            let resp: Vec<Vec<f64>> = data.iter().map(|x| g.responsibilities(x)).collect();
            for c in 0..k {
                let nk: f64 = resp.iter().map(|r| r[c]).sum();
                if nk < 1e-12 {
                    continue;
                }
                g.weights[c] = nk / n;
                for j in 0..dim {
                    let m = data.iter().zip(&resp).map(|(x, r)| r[c] * x[j]).sum::<f64>() / nk;
                    g.means[c][j] = m;
                }
                for j in 0..dim {
                    let v = data
                        .iter()
                        .zip(&resp)
                        .map(|(x, r)| r[c] * (x[j] - g.means[c][j]).powi(2))
                        .sum::<f64>()
                        / nk;
                    g.vars[c][j] = v + cfg.reg;
                }
            }
        }
        g
    }

    fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weights.len())
            .map(|c| {
                let ll: f64 = x
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.vars[c])
                    .map(|((xi, m), v)| -0.5 * (LN_2PI + v.ln() + (xi - m).powi(2) / v))
                    .sum();
                self.weights[c].max(f64::MIN_POSITIVE).ln() + ll
            })
            .collect()
    }

    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let lj = self.log_joint(x);
        let max = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = lj.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = ex.iter().sum();
        ex.into_iter().map(|e| e / s).collect()
    }

    /// Most responsible component, ties to the lower index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let r = self.log_joint(x);
        let mut best = 0;
        for (i, v) in r.iter().enumerate() {
            if *v > r[best] {
                best = i;
            }
        }
        best
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}
