//! Binary classification metrics.
//!
//! AUC is the Mann-Whitney statistic: the fraction of (positive, negative)
//! pairs ranked correctly, with ties worth half. It is computed from average
//! ranks using integer arithmetic on doubled ranks, so the result is exactly
//! `(2 * wins + ties) / (2 * n_pos * n_neg)`.

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("AUC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score at index {0} is NaN")]
    NaN(usize),
    #[error("label at index {index} is {value}, expected 0 or 1")]
    Label { index: usize, value: u8 },
}

/// Area under the ROC curve of `scores` against binary `labels`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricError::NaN(index));
    }
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
        return Err(MetricError::Label { index, value });
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass {
            positives,
            negatives,
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of doubled average ranks of the positives. A tie group occupying
    // 1-based ranks start+1..=end has doubled average rank start + 1 + end.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        // -0.0 and 0.0 compare equal as scores even though total_cmp orders them.
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled = (start + 1 + end) as u128;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count() as u128;
        doubled_rank_sum += doubled * pos_in_group;
        start = end;
    }
    let p = positives as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * negatives as u128) as f64)
}

/// Fraction of positions where `preds` equals `labels`.
pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::Length {
            scores: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(n^2) pairwise count, kept in the same doubled form.
    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut doubled = 0u128;
        let mut pairs = 0u128;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1;
                if si > sj {
                    doubled += 2;
                } else if si == sj {
                    doubled += 1;
                }
            }
        }
        doubled as f64 / (2 * pairs) as f64
    }

    #[test]
    fn worked_example() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn separated_and_tied() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[0, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            auc(&[0.1, 0.2], &[1, 1]).unwrap_err(),
            MetricError::SingleClass {
                positives: 2,
                negatives: 0
            }
        );
        assert_eq!(auc(&[0.1, f64::NAN], &[0, 1]).unwrap_err(), MetricError::NaN(1));
        assert!(matches!(auc(&[0.1], &[0, 1]), Err(MetricError::Length { .. })));
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 1, 0, 0], &[1, 1, 0, 1]).unwrap(), 0.75);
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..20).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle((s, l) in scored()) {
            prop_assert_eq!(auc(&s, &l).unwrap(), brute_auc(&s, &l));
        }

        #[test]
        fn invariant_under_monotone_transform((s, l) in scored()) {
            let t: Vec<f64> = s.iter().map(|v| (v * 3.0 + 1.0).exp()).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        }

        #[test]
        fn negation_complements_without_ties(l in prop::collection::vec(0u8..2, 2..100)) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            let s: Vec<f64> = (0..l.len()).map(|i| ((i * 7919) % 1009) as f64).collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let a = auc(&s, &l).unwrap();
            let b = auc(&neg, &l).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
