use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A prediction paired with its binary click label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: bool,
    /// Grouping key for GAUC, typically the user id.
    pub group_key: u64,
}

impl ScoredLabel {
    pub fn new(score: f64, label: bool, group_key: u64) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidInput(format!(
                "score must lie in [0, 1], got {score}"
            )));
        }
        Ok(Self {
            score,
            label,
            group_key,
        })
    }
}

/// A metric value together with the number of samples behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub support: usize,
}

/// Area under the ROC curve via the rank-sum statistic with midranks, so
/// tied scores contribute one half.
pub fn auc(items: &[ScoredLabel]) -> Result<MetricValue> {
    let value = auc_of(items.iter().map(|s| (s.score, s.label)))?;
    Ok(MetricValue {
        value,
        support: items.len(),
    })
}

fn auc_of(pairs: impl Iterator<Item = (f64, bool)>) -> Result<f64> {
    let mut v: Vec<(f64, bool)> = pairs.collect();
    if let Some((s, _)) = v.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFinite(format!("auc score {s}")));
    }
    let n_pos = v.iter().filter(|(_, l)| *l).count();
    let n_neg = v.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined(format!(
            "auc needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1].0 == v[i].0 {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares the mean rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = v[i..=j].iter().filter(|(_, l)| *l).count();
        rank_sum_pos += midrank * pos_in_block as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Impression-weighted mean of per-group AUC. Groups with a single class are
/// dropped from both numerator and denominator.
pub fn gauc(items: &[ScoredLabel]) -> Result<MetricValue> {
    let mut groups: BTreeMap<u64, Vec<(f64, bool)>> = BTreeMap::new();
    for s in items {
        groups.entry(s.group_key).or_default().push((s.score, s.label));
    }
    let mut weighted = 0.0;
    let mut weight = 0usize;
    for members in groups.values() {
        let pos = members.iter().filter(|(_, l)| *l).count();
        if pos == 0 || pos == members.len() {
            continue;
        }
        weighted += auc_of(members.iter().copied())? * members.len() as f64;
        weight += members.len();
    }
    if weight == 0 {
        return Err(Error::Undefined(
            "gauc has no group containing both classes".into(),
        ));
    }
    Ok(MetricValue {
        value: weighted / weight as f64,
        support: weight,
    })
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            context: "pearson".into(),
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Undefined("pearson needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson with zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn items(scores: &[f64], labels: &[u8]) -> Vec<ScoredLabel> {
        scores
            .iter()
            .zip(labels)
            .map(|(&s, &l)| ScoredLabel::new(s, l == 1, 0).unwrap())
            .collect()
    }

    /// Brute force over all positive/negative pairs.
    fn auc_pairs(items: &[ScoredLabel]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for p in items.iter().filter(|s| s.label) {
            for n in items.iter().filter(|s| !s.label) {
                den += 1.0;
                if p.score > n.score {
                    num += 1.0;
                } else if p.score == n.score {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&items(&[0.9, 0.1], &[1, 0])).unwrap().value, 1.0);
        assert_eq!(auc(&items(&[0.5, 0.5], &[1, 0])).unwrap().value, 0.5);
        let four = items(&[0.8, 0.7, 0.3, 0.2], &[1, 0, 1, 0]);
        assert_eq!(auc_pairs(&four), 0.75);
        let v = auc(&four).unwrap();
        assert_eq!(v.value, 0.75);
        assert_eq!(v.support, 4);
    }

    #[test]
    fn auc_single_class_is_an_error() {
        let err = auc(&items(&[0.1, 0.2], &[1, 1])).unwrap_err();
        assert!(matches!(err, Error::Undefined(_)));
    }

    #[test]
    fn score_outside_unit_interval_rejected() {
        assert!(ScoredLabel::new(1.5, true, 0).is_err());
        assert!(ScoredLabel::new(f64::NAN, true, 0).is_err());
    }

    #[test]
    fn shuffled_labels_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<ScoredLabel> = (0..2000)
            .map(|_| ScoredLabel::new(rng.random(), rng.random_bool(0.3), 0).unwrap())
            .collect();
        let a = auc(&v).unwrap().value;
        assert!((a - 0.5).abs() < 0.05, "auc {a}");
    }

    #[test]
    fn gauc_examples() {
        let group_a = items(&[0.8, 0.7, 0.3, 0.2], &[1, 0, 1, 0]);
        assert_eq!(gauc(&group_a).unwrap().value, 0.75);

        let mut two = items(&[0.9, 0.1], &[1, 0]);
        two.extend(items(&[0.6, 0.4], &[1, 0]).into_iter().map(|mut s| {
            s.group_key = 1;
            s
        }));
        assert_eq!(gauc(&two).unwrap().value, 1.0);

        let mut mixed = group_a.clone();
        mixed.extend(items(&[0.6, 0.4], &[1, 0]).into_iter().map(|mut s| {
            s.group_key = 7;
            s
        }));
        // single-class group is dropped entirely
        mixed.extend(items(&[0.1, 0.9, 0.5], &[0, 0, 0]).into_iter().map(|mut s| {
            s.group_key = 9;
            s
        }));
        let g = gauc(&mixed).unwrap();
        assert!((g.value - (4.0 * 0.75 + 2.0 * 1.0) / 6.0).abs() < 1e-12);
        assert_eq!(g.support, 6);
    }

    #[test]
    fn gauc_without_valid_group_is_an_error() {
        assert!(gauc(&items(&[0.1, 0.2], &[0, 0])).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap() + 1.0).abs() < 1e-12);
        // cov = 4, var_x = var_y = 5
        assert!((pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap() - 0.8).abs() < 1e-12);
        assert!(pearson(&[1., 1., 1.], &[1., 2., 3.]).is_err());
        assert!(pearson(&[1., 2.], &[1.]).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..60)
        ) {
            let v: Vec<ScoredLabel> = raw.iter()
                .map(|&(s, l)| ScoredLabel::new(s as f64 / 19.0, l, 0).unwrap())
                .collect();
            let pos = v.iter().filter(|s| s.label).count();
            prop_assume!(pos > 0 && pos < v.len());
            let a = auc(&v).unwrap().value;
            prop_assert!((a - auc_pairs(&v)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..80)
        ) {
            let v: Vec<ScoredLabel> = raw.iter()
                .map(|&(s, l)| ScoredLabel::new(s, l, 0).unwrap())
                .collect();
            let pos = v.iter().filter(|s| s.label).count();
            prop_assume!(pos > 0 && pos < v.len());
            let t: Vec<ScoredLabel> = v.iter()
                .map(|s| ScoredLabel { score: s.score.powi(3), ..*s })
                .collect();
            prop_assert_eq!(auc(&v).unwrap().value, auc(&t).unwrap().value);
        }

        #[test]
        fn gauc_single_group_equals_auc(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..80)
        ) {
            let v: Vec<ScoredLabel> = raw.iter()
                .map(|&(s, l)| ScoredLabel::new(s, l, 5).unwrap())
                .collect();
            let pos = v.iter().filter(|s| s.label).count();
            prop_assume!(pos > 0 && pos < v.len());
            prop_assert!((gauc(&v).unwrap().value - auc(&v).unwrap().value).abs() < 1e-12);
        }
    }
}
