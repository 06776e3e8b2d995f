//! Evaluation diagnostics: classification metrics, calibration error, the
//! domain-energy rank check, feature correlation and mutual information, and
//! embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelParams;

pub const DEFAULT_ECE_BINS: usize = 15;
pub const DEFAULT_MI_BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

/// Accuracy and macro-averaged precision, recall and F1 over `num_classes`
/// classes. A class with no support and no predictions scores 0.
pub fn classification_metrics(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ClassificationMetrics> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty prediction and label lists, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut label_count = vec![0usize; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= num_classes || y >= num_classes {
            return Err(Error::IndexOutOfRange {
                what: "class",
                index: p.max(y),
                size: num_classes,
            });
        }
        pred_count[p] += 1;
        label_count[y] += 1;
        if p == y {
            tp[y] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for k in 0..num_classes {
        if label_count[k] == 0 && pred_count[k] == 0 {
            log::warn!("class {k} absent from labels and predictions; scored 0");
        }
        let p = ratio(tp[k], pred_count[k]);
        let r = ratio(tp[k], label_count[k]);
        sp += p;
        sr += r;
        sf += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let c = num_classes as f64;
    Ok(ClassificationMetrics {
        accuracy: tp.iter().sum::<usize>() as f64 / preds.len() as f64,
        macro_f1: sf / c,
        macro_precision: sp / c,
        macro_recall: sr / c,
    })
}

/// Expected calibration error with `bins` equal-width confidence bins.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() || confidences.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty confidence and correctness lists, got {} and {}",
            confidences.len(),
            correct.len()
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("ece needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    let n = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (hits[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub value: f64,
    /// set when either input is constant; `value` is then 0
    pub degenerate: bool,
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale_a = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale_b = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if near_zero_variance(saa, n, scale_a) || near_zero_variance(sbb, n, scale_b) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn near_zero_variance(sum_sq: f64, n: f64, scale: f64) -> bool {
    sum_sq <= n * (1e-14 * scale).powi(2)
}

/// Spearman correlation with average-rank ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<RankCorrelation> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "rank correlation needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(match pearson(&average_ranks(a), &average_ranks(b)) {
        Some(value) => RankCorrelation {
            value,
            degenerate: false,
        },
        None => RankCorrelation {
            value: 0.0,
            degenerate: true,
        },
    })
}

/// Rank agreement between per-domain inverse variance norms and negated
/// mean domain energies.
pub fn dse_rank_correlation(sigma_d_norms: &[f64], neg_e_d: &[f64]) -> Result<RankCorrelation> {
    let r = spearman(sigma_d_norms, neg_e_d)?;
    if r.degenerate {
        log::warn!("rank correlation on a constant vector; reported as 0");
    }
    Ok(r)
}

/// A square feature-by-feature matrix plus the features flagged degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub matrix: Matrix,
    pub degenerate: Vec<usize>,
}

impl FeatureMatrix {
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let b = self.matrix.rows();
        if b < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    s += self.matrix.get(i, j).abs();
                }
            }
        }
        s / (b * (b - 1)) as f64
    }
}

fn column(m: &Matrix, j: usize) -> Vec<f64> {
    (0..m.rows()).map(|i| m.get(i, j)).collect()
}

/// Pearson correlations between the columns of `features` `[n × b]`.
pub fn feature_correlation_matrix(features: &Matrix) -> Result<FeatureMatrix> {
    let (n, b) = features.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("correlation needs at least 2 rows, got {n}")));
    }
    let cols: Vec<Vec<f64>> = (0..b).map(|j| column(features, j)).collect();
    let mut m = Matrix::identity(b);
    let mut degenerate = Vec::new();
    let flat: Vec<bool> = cols
        .iter()
        .map(|c| pearson(c, c).is_none())
        .collect();
    for (j, &f) in flat.iter().enumerate() {
        if f {
            degenerate.push(j);
        }
    }
    for i in 0..b {
        for j in (i + 1)..b {
            let r = if flat[i] || flat[j] {
                0.0
            } else {
                pearson(&cols[i], &cols[j]).unwrap_or(0.0)
            };
            m.set(i, j, r);
            m.set(j, i, r);
        }
    }
    if !degenerate.is_empty() {
        log::warn!("zero-variance features {degenerate:?}");
    }
    Ok(FeatureMatrix { matrix: m, degenerate })
}

fn bin_column(col: &[f64], bins: usize) -> Vec<usize> {
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    col.iter()
        .map(|&x| {
            if width > 0.0 {
                (((x - lo) / width * bins as f64).floor() as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information (nats) between columns, using `bins`
/// equal-width bins per feature. The diagonal holds each feature's entropy.
pub fn mutual_information_matrix(features: &Matrix, bins: usize) -> Result<FeatureMatrix> {
    let (n, b) = features.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("mutual information needs at least 2 rows, got {n}")));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("mutual information needs at least 2 bins, got {bins}")));
    }
    let nf = n as f64;
    let binned: Vec<Vec<usize>> = (0..b).map(|j| bin_column(&column(features, j), bins)).collect();
    let marginals: Vec<Vec<usize>> = binned
        .iter()
        .map(|c| {
            let mut h = vec![0usize; bins];
            for &k in c {
                h[k] += 1;
            }
            h
        })
        .collect();
    let degenerate: Vec<usize> = (0..b)
        .filter(|&j| marginals[j].iter().filter(|&&c| c > 0).count() <= 1)
        .collect();
    let mut m = Matrix::zeros(b, b);
    for i in 0..b {
        if degenerate.contains(&i) {
            continue;
        }
        m.set(i, i, entropy(&marginals[i], nf));
        for j in (i + 1)..b {
            if degenerate.contains(&j) {
                continue;
            }
            let mut joint = vec![0usize; bins * bins];
            for (&a, &c) in binned[i].iter().zip(&binned[j]) {
                joint[a * bins + c] += 1;
            }
            let hi = entropy(&marginals[i], nf);
            let hj = entropy(&marginals[j], nf);
            let mi = (hi + hj - entropy(&joint, nf)).max(0.0);
            m.set(i, j, mi);
            m.set(j, i, mi);
        }
    }
    if !degenerate.is_empty() {
        log::warn!("single-bin features {degenerate:?}; mutual information set to 0");
    }
    Ok(FeatureMatrix { matrix: m, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementSummary {
    pub mean_abs_corr: f64,
    pub mean_mi: f64,
}

/// Mean absolute off-diagonal correlation and mutual information of a
/// feature matrix.
pub fn summarize_features(features: &Matrix) -> Result<DisentanglementSummary> {
    Ok(DisentanglementSummary {
        mean_abs_corr: feature_correlation_matrix(features)?.mean_abs_off_diagonal(),
        mean_mi: mutual_information_matrix(features, DEFAULT_MI_BINS)?.mean_abs_off_diagonal(),
    })
}

/// [`summarize_features`] on the encoder features of `ds`.
pub fn disentanglement_summary(params: &ModelParams, ds: &TimeSeriesDataset) -> Result<DisentanglementSummary> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    summarize_features(&params.encode(ds)?)
}

/// Comma-separated grid, one matrix row per line.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for (j, &v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            fmt_f64(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn save_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn embeddings_to_csv(params: &ModelParams, ds: &TimeSeriesDataset) -> Result<String> {
    let feats = params.encode(ds)?;
    let mut out = String::from("class,domain");
    for j in 0..feats.cols() {
        write!(out, ",f_{j}").expect("write to String");
    }
    out.push('\n');
    for i in 0..ds.len() {
        write!(out, "{},{}", ds.class_label(i), ds.domain_label(i)).expect("write to String");
        for &v in feats.row(i) {
            out.push(',');
            fmt_f64(&mut out, v);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes `class,domain,f_0,...` rows of encoder features.
pub fn export_embeddings(params: &ModelParams, ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = embeddings_to_csv(params, ds)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub ece: f64,
    pub dse_rank_corr: f64,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 6] = [
        "accuracy",
        "macro_f1",
        "macro_precision",
        "macro_recall",
        "ece",
        "dse_rank_corr",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.accuracy,
            self.macro_f1,
            self.macro_precision,
            self.macro_recall,
            self.ece,
            self.dse_rank_corr,
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-sample outputs gathered in one pass over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub classes: Vec<usize>,
    pub confidences: Vec<f64>,
    /// inverse `‖σ²_k‖₂` over samples, per domain `k`
    pub inv_sigma_norms: Vec<f64>,
    /// `−mean E_d[k]` over samples, per domain `k`
    pub neg_mean_energy: Vec<f64>,
}

pub fn predict_dataset(params: &ModelParams, ds: &TimeSeriesDataset) -> Result<Predictions> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let nd = params.arch.num_domains;
    let mut classes = Vec::with_capacity(ds.len());
    let mut confidences = Vec::with_capacity(ds.len());
    let mut energy_sum = vec![0.0; nd];
    let mut sigma_sq = vec![0.0; nd];
    for i in 0..ds.len() {
        let f0 = params.encode_one(ds.sample(i))?;
        let pred = params.predict(&f0);
        classes.push(pred.class);
        confidences.push(pred.confidence);
        for (s, e) in energy_sum.iter_mut().zip(params.energy_domain(&f0)) {
            *s += e;
        }
        for (s, v) in sigma_sq.iter_mut().zip(params.variance_head(&f0)) {
            *s += v * v;
        }
    }
    let n = ds.len() as f64;
    Ok(Predictions {
        classes,
        confidences,
        inv_sigma_norms: sigma_sq.iter().map(|s| 1.0 / s.sqrt()).collect(),
        neg_mean_energy: energy_sum.iter().map(|s| -s / n).collect(),
    })
}

/// All six scalar metrics of `params` on `ds`; `config` is left null.
pub fn evaluate(params: &ModelParams, ds: &TimeSeriesDataset) -> Result<MetricsReport> {
    let p = predict_dataset(params, ds)?;
    let cls = classification_metrics(&p.classes, ds.class_labels(), params.arch.num_classes)?;
    let correct: Vec<bool> = p
        .classes
        .iter()
        .zip(ds.class_labels())
        .map(|(a, b)| a == b)
        .collect();
    let ece = ece(&p.confidences, &correct, DEFAULT_ECE_BINS)?;
    let rank = if p.inv_sigma_norms.len() >= 2 {
        dse_rank_correlation(&p.inv_sigma_norms, &p.neg_mean_energy)?.value
    } else {
        0.0
    };
    Ok(MetricsReport {
        accuracy: cls.accuracy,
        macro_f1: cls.macro_f1,
        macro_precision: cls.macro_precision,
        macro_recall: cls.macro_recall,
        ece,
        dse_rank_corr: rank,
        config: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let m = classification_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(
            m,
            ClassificationMetrics {
                accuracy: 1.0,
                macro_f1: 1.0,
                macro_precision: 1.0,
                macro_recall: 1.0
            }
        );
    }

    #[test]
    fn binary_confusion() {
        // TP=1 FP=1 FN=1 TN=1 with class 1 as positive
        let preds = [1, 1, 0, 0];
        let labels = [1, 0, 1, 0];
        let m = classification_metrics(&preds, &labels, 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.macro_precision, 0.5);
        assert_eq!(m.macro_recall, 0.5);
        assert_eq!(m.macro_f1, 0.5);
    }

    #[test]
    fn single_class_labels() {
        let m = classification_metrics(&[2, 2, 2], &[2, 2, 2], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn metrics_reject_bad_input() {
        assert!(classification_metrics(&[], &[], 2).is_err());
        assert!(classification_metrics(&[0], &[0, 1], 2).is_err());
        assert!(classification_metrics(&[3], &[0], 2).is_err());
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0; 5], &[true; 5], 15).unwrap(), 0.0);
        let conf = vec![0.8; 10];
        let correct: Vec<bool> = (0..10).map(|i| i < 6).collect();
        assert!((ece(&conf, &correct, 15).unwrap() - 0.2).abs() < 1e-12);
        assert!(ece(&[1.2], &[true], 15).is_err());
        assert!(ece(&[-0.1], &[true], 15).is_err());
    }

    #[test]
    fn ece_calibrated_simulator() {
        let mut rng = Rng::new(3);
        let conf: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
        let correct: Vec<bool> = conf.iter().map(|&c| rng.bernoulli(c)).collect();
        assert!(ece(&conf, &correct, 15).unwrap() < 0.02);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap().value, 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[6.0, 5.0, 4.0]).unwrap().value, -1.0);
        assert_eq!(dse_rank_correlation(&[3.0, 1.0, 2.0], &[30.0, 10.0, 20.0]).unwrap().value, 1.0);
        let c = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.value, 0.0);
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn correlation_duplicate_and_independent() {
        let mut rng = Rng::new(8);
        let n = 10_000;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            let a = rng.standard_normal();
            data.extend([a, a, rng.standard_normal()]);
        }
        let m = Matrix::from_vec(n, 3, data).unwrap();
        let c = feature_correlation_matrix(&m).unwrap();
        assert!((c.matrix.get(0, 1) - 1.0).abs() < 1e-12);
        assert!(c.matrix.get(0, 2).abs() < 0.05);
        for i in 0..3 {
            assert_eq!(c.matrix.get(i, i), 1.0);
        }
    }

    #[test]
    fn correlation_flags_constant_feature() {
        let m = Matrix::from_rows(&[&[1.0, 0.3], &[2.0, 0.3], &[4.0, 0.3]]);
        let c = feature_correlation_matrix(&m).unwrap();
        assert_eq!(c.degenerate, vec![1]);
        assert_eq!(c.matrix.get(0, 1), 0.0);
        assert_eq!(c.matrix.get(1, 1), 1.0);
        assert!(feature_correlation_matrix(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn mi_identical_and_independent() {
        let mut rng = Rng::new(2);
        let n = 10_000;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            let a = rng.uniform();
            data.extend([a, a, rng.uniform()]);
        }
        let m = Matrix::from_vec(n, 3, data).unwrap();
        let mi = mutual_information_matrix(&m, 16).unwrap();
        assert!((mi.matrix.get(0, 1) - mi.matrix.get(0, 0)).abs() < 1e-12);
        assert!(mi.matrix.get(0, 2) < 0.05);
        assert!(mi.degenerate.is_empty());
    }

    #[test]
    fn mi_monotone_invariance() {
        let mut rng = Rng::new(4);
        let n = 5_000;
        let mut raw = Vec::with_capacity(n * 2);
        let mut warped = Vec::with_capacity(n * 2);
        for _ in 0..n {
            let a = rng.uniform();
            let b = 0.7 * a + 0.3 * rng.uniform();
            raw.extend([a, b]);
            warped.extend([a.powi(3), (5.0 * b).exp()]);
        }
        let m1 = mutual_information_matrix(&Matrix::from_vec(n, 2, raw).unwrap(), 16).unwrap();
        let m2 = mutual_information_matrix(&Matrix::from_vec(n, 2, warped).unwrap(), 16).unwrap();
        // equal-width bins are not rank-invariant; agreement is up to binning error
        assert!((m1.matrix.get(0, 1) - m2.matrix.get(0, 1)).abs() < 0.35 * m1.matrix.get(0, 1));
    }

    #[test]
    fn mi_degenerate_feature() {
        let m = Matrix::from_rows(&[&[1.0, 5.0], &[2.0, 5.0], &[3.0, 5.0]]);
        let mi = mutual_information_matrix(&m, 16).unwrap();
        assert_eq!(mi.degenerate, vec![1]);
        assert_eq!(mi.matrix.get(0, 1), 0.0);
        assert!(mutual_information_matrix(&m, 1).is_err());
    }

    #[test]
    fn summaries() {
        let mut rng = Rng::new(6);
        let n = 4_000;
        let ind = Matrix::from_vec(n, 4, rng.normal_vec(n * 4, 1.0)).unwrap();
        let s = summarize_features(&ind).unwrap();
        assert!(s.mean_abs_corr < 0.05);
        assert!(s.mean_abs_corr >= 0.0 && s.mean_mi >= 0.0);
        let col = rng.normal_vec(n, 1.0);
        let mut dup = Vec::with_capacity(n * 4);
        for v in col {
            dup.extend([v; 4]);
        }
        let s = summarize_features(&Matrix::from_vec(n, 4, dup).unwrap()).unwrap();
        assert!(s.mean_abs_corr > 0.999);
    }

    #[test]
    fn embeddings_round_trip() {
        use crate::data::{gen_synthetic, SyntheticConfig};
        use crate::model::ArchConfig;
        let ds = gen_synthetic(&SyntheticConfig {
            samples_per_domain_class: 2,
            length: 10,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let arch = ArchConfig {
            encoding_dim: 5,
            projection_dim: 3,
            conv_channels: vec![3],
            kernel: 3,
            ..ArchConfig::default()
        }
        .fitted_to(&ds);
        let params = ModelParams::init(&arch, &mut Rng::new(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        export_embeddings(&params, &ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "class,domain,f_0,f_1,f_2,f_3,f_4");
        let feats = params.encode(&ds).unwrap();
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), ds.len());
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<&str> = row.split(',').collect();
            assert_eq!(cells.len(), arch.encoding_dim + 2);
            assert_eq!(cells[0].parse::<usize>().unwrap(), ds.class_label(i));
            for j in 0..arch.encoding_dim {
                assert_eq!(cells[j + 2].parse::<f64>().unwrap().to_bits(), feats.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn report_ranges_and_json() {
        use crate::data::{gen_synthetic, SyntheticConfig};
        use crate::model::ArchConfig;
        let ds = gen_synthetic(&SyntheticConfig {
            samples_per_domain_class: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let arch = ArchConfig::default().fitted_to(&ds);
        let params = ModelParams::init(&arch, &mut Rng::new(1)).unwrap();
        let r = evaluate(&params, &ds).unwrap();
        for v in &r.values()[..5] {
            assert!((0.0..=1.0).contains(v));
        }
        assert!((-1.0..=1.0).contains(&r.dse_rank_corr));
        let back: MetricsReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn ece_in_unit_interval(pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200)) {
            let (c, k): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
            let e = ece(&c, &k, 15).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn spearman_monotone_invariant(v in proptest::collection::vec(-100.0f64..100.0, 2..40),
                                       w in proptest::collection::vec(-100.0f64..100.0, 40)) {
            let w = &w[..v.len()];
            let base = spearman(&v, w).unwrap();
            let warped: Vec<f64> = v.iter().map(|x| x.powi(3) + 2.0 * x).collect();
            let r = spearman(&warped, w).unwrap();
            prop_assert!((-1.0..=1.0).contains(&base.value));
            prop_assert!((r.value - base.value).abs() < 1e-12);
        }

        #[test]
        fn metrics_permutation_invariant(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60), seed in any::<u64>()) {
            let (p, l): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let a = classification_metrics(&p, &l, 4).unwrap();
            let mut shuffled = pairs.clone();
            Rng::new(seed).shuffle(&mut shuffled);
            let (p2, l2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            let b = classification_metrics(&p2, &l2, 4).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn feature_matrices_symmetric(data in proptest::collection::vec(-5.0f64..5.0, 30)) {
            let m = Matrix::from_vec(10, 3, data).unwrap();
            let c = feature_correlation_matrix(&m).unwrap();
            let mi = mutual_information_matrix(&m, 4).unwrap();
            for i in 0..3 {
                prop_assert_eq!(c.matrix.get(i, i), 1.0);
                for j in 0..3 {
                    prop_assert_eq!(c.matrix.get(i, j), c.matrix.get(j, i));
                    prop_assert!(c.matrix.get(i, j).abs() <= 1.0);
                    prop_assert_eq!(mi.matrix.get(i, j), mi.matrix.get(j, i));
                    prop_assert!(mi.matrix.get(i, j) >= 0.0);
                }
            }
        }
    }
}
