//! Stratified cross-validation, ROC analysis and decision-threshold tuning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{format_real, write_file};
use crate::model::{Dataset, Label};
use crate::svm::{apply_standardizer, fit_standardizer, train_linear_svm};

/// Fold index of every sample. Each class is shuffled on its own, then the
/// malignant members followed by the benign ones are dealt round-robin, so
/// fold sizes differ by at most one overall and within each class.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(labels.len());
    for class in [Label::Malignant, Label::Benign] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(Error::invalid(format!(
                "class {class} has {} members, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut assignment = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(assignment)
}

/// Out-of-fold decision scores for one train/test split.
fn fold_scores(data: &Dataset, train: &[usize], test: &[usize], c: f64) -> Result<Vec<f64>> {
    let xt = data.x.select(ndarray::Axis(0), train);
    let yt: Vec<f64> = train.iter().map(|&i| data.labels[i].sign()).collect();
    let scales = fit_standardizer(xt.view(), &data.names)?;
    let fit = train_linear_svm(apply_standardizer(xt.view(), &scales)?.view(), &yt, c)?;
    let xs = apply_standardizer(data.x.select(ndarray::Axis(0), test).view(), &scales)?;
    Ok(xs.dot(&fit.weights).iter().map(|s| s + fit.bias).collect())
}

/// Per-fold out-of-fold scores, indexed like the dataset rows.
pub fn stratified_kfold_scores(data: &Dataset, folds: usize, seed: u64, c: f64) -> Result<Vec<f64>> {
    let assignment = stratified_folds(&data.labels, folds, seed)?;
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..data.n_samples()).partition(|&i| assignment[i] == f);
            fold_scores(data, &train, &test, c).map(|s| (test, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; data.n_samples()];
    for (test, s) in per_fold {
        for (i, v) in test.into_iter().zip(s) {
            scores[i] = v;
        }
    }
    Ok(scores)
}

/// Mean test-fold accuracy of the sign of the decision score.
pub fn cross_val_score(data: &Dataset, folds: usize, seed: u64, c: f64) -> Result<f64> {
    let assignment = stratified_folds(&data.labels, folds, seed)?;
    let scores = stratified_kfold_scores(data, folds, seed, c)?;
    let mut correct = vec![0usize; folds];
    let mut total = vec![0usize; folds];
    for (i, (&s, l)) in scores.iter().zip(&data.labels).enumerate() {
        total[assignment[i]] += 1;
        if (s > 0.0) == l.is_positive() {
            correct[assignment[i]] += 1;
        }
    }
    Ok(correct.iter().zip(&total).map(|(&c, &t)| c as f64 / t as f64).sum::<f64>() / folds as f64)
}

fn check_both_classes(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid("scores cover a single class"));
    }
    Ok((pos, labels.len() - pos))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "crate::io::extended_f64")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC points at +∞, every distinct score (descending), and −∞; a sample is
/// called positive when its score is at least the threshold.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    let (pos, neg) = check_both_classes(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < idx.len() {
        let t = scores[idx[k]];
        // Every sample tied at this score switches together.
        while k < idx.len() && scores[idx[k]] == t {
            if labels[idx[k]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    let auc = trapezoid_area(&points);
    Ok(RocCurve { points, auc })
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Most accurate threshold among those with no false negatives.
    #[default]
    ZeroFnMaxAccuracy,
    MaxAccuracy,
    /// Report every candidate; the chosen row is the most accurate one.
    FullSweep,
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_fn_max_accuracy" => Ok(ThresholdPolicy::ZeroFnMaxAccuracy),
            "max_accuracy" => Ok(ThresholdPolicy::MaxAccuracy),
            "full_sweep" => Ok(ThresholdPolicy::FullSweep),
            _ => Err(Error::invalid(format!("unknown threshold policy `{s}`"))),
        }
    }
}

impl ThresholdPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdPolicy::ZeroFnMaxAccuracy => "zero_fn_max_accuracy",
            ThresholdPolicy::MaxAccuracy => "max_accuracy",
            ThresholdPolicy::FullSweep => "full_sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    #[serde(with = "crate::io::extended_f64")]
    pub threshold: f64,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub tp: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

/// Confusion counts when `score >= threshold` is called malignant.
pub fn confusion_at(scores: &[f64], labels: &[Label], threshold: f64) -> ThresholdRow {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, l) in scores.iter().zip(labels) {
        match (s >= threshold, l.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    ThresholdRow {
        threshold,
        fn_,
        tn,
        fp,
        tp,
        sensitivity: ratio(tp, fn_),
        specificity: ratio(tn, fp),
        accuracy: (tp + tn) as f64 / scores.len() as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub policy: ThresholdPolicy,
    /// Candidates ordered by decreasing threshold.
    pub rows: Vec<ThresholdRow>,
    pub chosen: usize,
}

impl ThresholdReport {
    pub fn chosen_row(&self) -> &ThresholdRow {
        &self.rows[self.chosen]
    }
}

/// Candidate thresholds: +∞, midpoints between consecutive distinct scores, −∞.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let mut out = vec![f64::INFINITY];
    out.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(f64::NEG_INFINITY);
    out
}

pub fn tune_threshold(scores: &[f64], labels: &[Label], policy: ThresholdPolicy) -> Result<ThresholdReport> {
    check_both_classes(scores, labels)?;
    let rows: Vec<ThresholdRow> = threshold_candidates(scores)
        .into_iter()
        .map(|t| confusion_at(scores, labels, t))
        .collect();
    // Rows run from high to low threshold, so the first maximum wins ties upward.
    let eligible = |r: &ThresholdRow| policy != ThresholdPolicy::ZeroFnMaxAccuracy || r.fn_ == 0;
    let mut chosen = None;
    for (i, r) in rows.iter().enumerate() {
        if eligible(r) && chosen.is_none_or(|c: usize| r.accuracy > rows[c].accuracy) {
            chosen = Some(i);
        }
    }
    let chosen = chosen.expect("the -inf row always has zero false negatives");
    Ok(ThresholdReport { policy, rows, chosen })
}

pub fn write_threshold_csv(report: &ThresholdReport, path: &Path) -> Result<()> {
    let mut out = String::from("threshold,FN,TN,FP,TP,sensitivity,specificity,accuracy\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            format_real(r.threshold),
            r.fn_,
            r.tn,
            r.fp,
            r.tp,
            format_real(r.sensitivity),
            format_real(r.specificity),
            format_real(r.accuracy)
        ));
    }
    write_file(path, out.as_bytes())
}

pub fn write_roc_csv(roc: &RocCurve, path: &Path) -> Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &roc.points {
        out.push_str(&format!("{},{},{}\n", format_real(p.threshold), format_real(p.fpr), format_real(p.tpr)));
    }
    write_file(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn labels(pos: usize, neg: usize) -> Vec<Label> {
        let mut v = vec![Label::Malignant; pos];
        v.extend(vec![Label::Benign; neg]);
        v
    }

    /// Mann-Whitney statistic with half credit for ties.
    fn pair_count_auc(scores: &[f64], labels: &[Label]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i].is_positive() && !labels[j].is_positive() {
                    pairs += 1.0;
                    wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn folds_mirror_cohort_shape() {
        let l = labels(26, 104);
        let f = stratified_folds(&l, 5, 7).unwrap();
        for k in 0..5 {
            let members: Vec<usize> = (0..130).filter(|&i| f[i] == k).collect();
            assert_eq!(members.len(), 26);
            let m = members.iter().filter(|&&i| l[i].is_positive()).count();
            assert!(m == 5 || m == 6, "fold {k}: {m}");
        }
        assert_eq!(f, stratified_folds(&l, 5, 7).unwrap());
        assert_ne!(f, stratified_folds(&l, 5, 8).unwrap());
        assert!(stratified_folds(&labels(4, 20), 5, 0).is_err());
    }

    #[test]
    fn pooled_scores_cover_every_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = labels(26, 104);
        let x = Array2::from_shape_fn((130, 3), |(i, j)| {
            rng.random_range(-1.0..1.0) + if j == 0 && l[i].is_positive() { 1.5 } else { 0.0 }
        });
        let d = Dataset::new(vec!["a".into(), "b".into(), "c".into()], x, l).unwrap();
        let s = stratified_kfold_scores(&d, 5, 3, 1.0).unwrap();
        assert_eq!(s.len(), 130);
        assert_eq!(s, stratified_kfold_scores(&d, 5, 3, 1.0).unwrap());
        assert!(roc_auc(&s, &d.labels).unwrap().auc > 0.8);
    }

    #[test]
    fn separable_feature_scores_perfectly() {
        let l = labels(10, 10);
        let x = Array2::from_shape_fn((20, 1), |(i, _)| if i < 10 { 5.0 + i as f64 } else { -(i as f64) });
        let d = Dataset::new(vec!["a".into()], x, l).unwrap();
        assert_eq!(cross_val_score(&d, 5, 0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn noise_scores_near_chance() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((200, 3), |_| rng.random_range(-1.0..1.0));
            let d = Dataset::new(vec!["a".into(), "b".into(), "c".into()], x, labels(100, 100)).unwrap();
            let acc = cross_val_score(&d, 5, seed, 1.0).unwrap();
            assert!((0.35..=0.65).contains(&acc), "seed {seed}: {acc}");
        }
    }

    #[test]
    fn roc_examples() {
        let l = labels(2, 2);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.4, 0.1], &l).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &l).unwrap().auc, 0.5);
        assert!(roc_auc(&[0.1, 0.2], &labels(2, 0)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let l: Vec<Label> = (0..50).map(|i| if i % 3 == 0 { Label::Malignant } else { Label::Benign }).collect();
            let s: Vec<f64> = (0..50).map(|_| (rng.random_range(0..12) as f64) * 0.25).collect();
            let roc = roc_auc(&s, &l).unwrap();
            assert!((roc.auc - pair_count_auc(&s, &l)).abs() < 1e-12);
            assert!((roc.auc - trapezoid_area(&roc.points)).abs() < 1e-12);
            assert!(roc.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        }
    }

    #[test]
    fn threshold_examples() {
        let s = [0.9, 0.8, 0.4, 0.1];
        let l = labels(2, 2);
        let r = confusion_at(&s, &l, 0.6);
        assert_eq!((r.fn_, r.fp, r.tn, r.tp), (0, 0, 2, 2));
        assert_eq!((r.sensitivity, r.specificity, r.accuracy), (1.0, 1.0, 1.0));
        let low = confusion_at(&s, &l, 0.0);
        assert_eq!((low.fn_, low.specificity), (0, 0.0));
        let rep = tune_threshold(&s, &l, ThresholdPolicy::ZeroFnMaxAccuracy).unwrap();
        assert!((rep.chosen_row().threshold - 0.6).abs() < 1e-12);
        assert_eq!(rep.rows.len(), 5);
    }

    #[test]
    fn zero_fn_ties_prefer_higher_threshold() {
        // Thresholds 0.55 and 0.25 both give FN 0 with accuracy 0.75.
        let s = [0.9, 0.6, 0.5, 0.0];
        let l = vec![Label::Malignant, Label::Malignant, Label::Benign, Label::Malignant];
        let rep = tune_threshold(&s, &l, ThresholdPolicy::ZeroFnMaxAccuracy).unwrap();
        assert_eq!(rep.chosen_row().fn_, 0);
        let best = rep.rows.iter().filter(|r| r.fn_ == 0).map(|r| r.accuracy).fold(0.0, f64::max);
        assert_eq!(rep.chosen_row().accuracy, best);
        assert!(rep.rows.iter().all(|r| r.fn_ != 0 || r.accuracy < best || r.threshold <= rep.chosen_row().threshold));
    }

    proptest! {
        #[test]
        fn sweep_identities(raw in prop::collection::vec((0i32..20, any::<bool>()), 2..40)) {
            let mut s: Vec<f64> = raw.iter().map(|(v, _)| *v as f64 / 4.0).collect();
            let mut l: Vec<Label> = raw.iter().map(|(_, p)| if *p { Label::Malignant } else { Label::Benign }).collect();
            s.push(100.0);
            l.push(Label::Malignant);
            s.push(-100.0);
            l.push(Label::Benign);
            let pos = l.iter().filter(|x| x.is_positive()).count();
            let rep = tune_threshold(&s, &l, ThresholdPolicy::FullSweep).unwrap();
            for r in &rep.rows {
                prop_assert_eq!(r.fn_ + r.tp, pos);
                prop_assert_eq!(r.tn + r.fp, l.len() - pos);
                prop_assert_eq!(r.accuracy, (r.tp + r.tn) as f64 / l.len() as f64);
            }
            for w in rep.rows.windows(2) {
                prop_assert!(w[1].sensitivity >= w[0].sensitivity);
                prop_assert!(w[1].specificity <= w[0].specificity);
            }
            let roc = roc_auc(&s, &l).unwrap();
            let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            let aff: Vec<f64> = s.iter().map(|v| 3.0 * v - 7.0).collect();
            prop_assert!((roc_auc(&exp, &l).unwrap().auc - roc.auc).abs() < 1e-12);
            prop_assert!((roc_auc(&aff, &l).unwrap().auc - roc.auc).abs() < 1e-12);
        }
    }
}
