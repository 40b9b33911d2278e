//! Recursive feature elimination with a cross-validated subset size.

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::cross_val_score;
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::svm::{apply_standardizer, fit_standardizer, train_linear_svm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// All features, best first.
    pub ranking: Vec<String>,
    /// Mean CV accuracy of the top-k ranked features, at index k - 1.
    pub subset_scores: Vec<f64>,
    pub selected: Vec<String>,
    pub folds: usize,
    pub seed: u64,
    pub svm_c: f64,
}

fn is_constant(col: ndarray::ArrayView1<f64>) -> bool {
    col.iter().all(|&v| v == col[0])
}

/// Full elimination order, best first. Constant columns go first (with a
/// warning); then each round refits on the standardized data and drops the
/// feature with the smallest |weight|, the higher column index on ties.
pub fn rfe_rank(data: &Dataset, c: f64) -> Result<Vec<String>> {
    let p = data.n_features();
    if p < 2 {
        return Err(Error::invalid("feature ranking needs at least 2 features"));
    }
    let y: Vec<f64> = data.labels.iter().map(|l| l.sign()).collect();
    let mut eliminated = Vec::with_capacity(p);
    let mut remaining: Vec<usize> = Vec::with_capacity(p);
    for j in 0..p {
        if is_constant(data.x.column(j)) {
            log::warn!("feature `{}` is constant; eliminated first", data.names[j]);
            eliminated.push(j);
        } else {
            remaining.push(j);
        }
    }
    // Constant columns among themselves: higher index leaves first.
    eliminated.reverse();
    while remaining.len() > 1 {
        let x = data.x.select(Axis(1), &remaining);
        let scales = fit_standardizer(x.view(), &[])?;
        let fit = train_linear_svm(apply_standardizer(x.view(), &scales)?.view(), &y, c)?;
        let mut worst = 0;
        for k in 1..remaining.len() {
            if fit.weights[k].abs() <= fit.weights[worst].abs() {
                worst = k;
            }
        }
        eliminated.push(remaining.remove(worst));
    }
    eliminated.extend(remaining);
    Ok(eliminated.into_iter().rev().map(|j| data.names[j].clone()).collect())
}

/// Scores every prefix of the ranking and keeps the best (smallest on ties).
/// Prefixes that reach into the constant tail reuse the score of the
/// non-constant prefix, since constant columns carry no information.
pub fn rfecv_select(data: &Dataset, folds: usize, seed: u64, c: f64) -> Result<SelectionResult> {
    let ranking = rfe_rank(data, c)?;
    let order: Vec<usize> = ranking.iter().map(|n| data.column_index(n).expect("ranked name")).collect();
    let informative = order.iter().take_while(|&&j| !is_constant(data.x.column(j))).count();
    if informative == 0 {
        return Err(Error::invalid("every feature is constant"));
    }
    let mut subset_scores = (1..=informative)
        .into_par_iter()
        .map(|k| cross_val_score(&data.select_columns(&order[..k]), folds, seed, c))
        .collect::<Result<Vec<_>>>()?;
    let tail = subset_scores[informative - 1];
    subset_scores.resize(order.len(), tail);
    let mut best = 0;
    for (k, &s) in subset_scores.iter().enumerate() {
        if s > subset_scores[best] {
            best = k;
        }
    }
    Ok(SelectionResult {
        selected: ranking[..=best].to_vec(),
        ranking,
        subset_scores,
        folds,
        seed,
        svm_c: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{stratified_folds, stratified_kfold_scores};
    use crate::model::Label;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    fn cohort(seed: u64, pos: usize, neg: usize, informative: usize, noise: usize, shift: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Label> = (0..pos + neg)
            .map(|i| if i < pos { Label::Malignant } else { Label::Benign })
            .collect();
        let p = informative + noise;
        let x = Array2::from_shape_fn((pos + neg, p), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if j < informative && i < pos { z + shift } else { z }
        });
        Dataset::new(names(p), x, labels).unwrap()
    }

    #[test]
    fn informative_feature_ranked_first() {
        let hits = (0..20)
            .filter(|&seed| rfe_rank(&cohort(seed, 40, 40, 1, 1, 1.5), 1.0).unwrap()[0] == "f0")
            .count();
        assert!(hits >= 19, "{hits}/20");
    }

    #[test]
    fn ranking_is_a_permutation() {
        let d = cohort(3, 20, 30, 2, 6, 1.0);
        let mut r = rfe_rank(&d, 1.0).unwrap();
        r.sort();
        let mut n = d.names.clone();
        n.sort();
        assert_eq!(r, n);
    }

    #[test]
    fn duplicate_columns_keep_lower_index() {
        let base = cohort(4, 20, 20, 1, 1, 1.0);
        let x = ndarray::concatenate(Axis(1), &[base.x.view(), base.x.column(0).insert_axis(Axis(1))]).unwrap();
        let d = Dataset::new(names(3), x, base.labels).unwrap();
        let r = rfe_rank(&d, 1.0).unwrap();
        let pos = |n: &str| r.iter().position(|v| v == n).unwrap();
        assert!(pos("f0") < pos("f2"), "{r:?}");
    }

    #[test]
    fn constant_feature_eliminated_first() {
        let mut d = cohort(5, 20, 20, 1, 2, 1.0);
        d.x.column_mut(1).fill(3.0);
        let r = rfe_rank(&d, 1.0).unwrap();
        assert_eq!(r.last().unwrap(), "f1");
        let s = rfecv_select(&d, 5, 0, 1.0).unwrap();
        assert!(!s.selected.contains(&"f1".to_string()));
    }

    #[test]
    fn selection_structure_and_determinism() {
        let d = cohort(6, 26, 104, 3, 9, 1.2);
        let s = rfecv_select(&d, 5, 11, 1.0).unwrap();
        assert_eq!(s.subset_scores.len(), 12);
        assert_eq!(s.selected[..], s.ranking[..s.selected.len()]);
        let k = s.selected.len();
        let max = s.subset_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s.subset_scores[k - 1], max);
        assert!(s.subset_scores[..k - 1].iter().all(|&v| v < max));
        let again = rfecv_select(&d, 5, 11, 1.0).unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), serde_json::to_string(&again).unwrap());
        // Each subset score is reproducible from the ranking prefix alone.
        for k in [1, 4, 12] {
            let sub = d.select_named(&s.ranking[..k]).unwrap();
            assert_eq!(cross_val_score(&sub, 5, 11, 1.0).unwrap(), s.subset_scores[k - 1]);
        }
    }

    #[test]
    fn all_noise_picks_smallest_tied_size() {
        let d = cohort(7, 20, 20, 0, 6, 0.0);
        let s = rfecv_select(&d, 5, 1, 1.0).unwrap();
        let k = s.selected.len();
        let best = s.subset_scores[k - 1];
        assert!(s.subset_scores[..k - 1].iter().all(|&v| v < best));
    }

    #[test]
    fn standardizer_sees_training_folds_only() {
        let d = cohort(8, 20, 30, 2, 2, 1.0);
        let folds = stratified_folds(&d.labels, 5, 2).unwrap();
        let base = stratified_kfold_scores(&d, 5, 2, 1.0).unwrap();
        let mut spiked = d.clone();
        spiked.x[[0, 0]] = 1e4;
        let after = stratified_kfold_scores(&spiked, 5, 2, 1.0).unwrap();
        for i in 1..d.n_samples() {
            if folds[i] == folds[0] {
                assert_eq!(after[i], base[i], "sample {i} shares the outlier's test fold");
            }
        }
        assert!((1..d.n_samples()).any(|i| folds[i] != folds[0] && after[i] != base[i]));
    }
}
