//! Confusion matrices and the derived rates, with malware as the positive
//! class.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label sequences differ in length ({actual} actual vs {predicted} predicted)")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("label {0} is not in {{0,1}}")]
    BadLabel(u8),
    #[error("confusion matrix is empty")]
    Empty,
    #[error("nothing to aggregate")]
    NoPeriods,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

pub fn confusion(actual: &[u8], predicted: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&a, &p) in actual.iter().zip(predicted) {
        match (a, p) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fn_ += 1,
            (0, 1) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            (1 | 0, bad) | (bad, _) => return Err(MetricsError::BadLabel(bad)),
        }
    }
    Ok(cm)
}

pub fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Metric values; any 0/0 ratio is reported as 0 and named in `undefined`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricRecord {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub undefined: Vec<&'static str>,
}

impl MetricRecord {
    fn values(&self) -> [(&'static str, f64); 6] {
        [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("accuracy", self.accuracy),
            ("fnr", self.fnr),
            ("fpr", self.fpr),
        ]
    }
}

impl Serialize for MetricRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(13))?;
        for (k, v) in self.values() {
            map.serialize_entry(k, &v)?;
        }
        for (k, v) in self.values() {
            map.serialize_entry(&format!("{k}_pct"), &pct(v))?;
        }
        map.serialize_entry("undefined", &self.undefined)?;
        map.end()
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricRecord, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let mut undefined = Vec::new();
    let mut ratio = |name: &'static str, num: f64, den: f64| {
        if den == 0.0 {
            undefined.push(name);
            0.0
        } else {
            num / den
        }
    };
    let (tp, fn_, fp, tn) = (cm.tp as f64, cm.fn_ as f64, cm.fp as f64, cm.tn as f64);
    let precision = ratio("precision", tp, tp + fp);
    let recall = ratio("recall", tp, tp + fn_);
    let f1 = ratio("f1", 2.0 * precision * recall, precision + recall);
    let accuracy = ratio("accuracy", tp + tn, tp + tn + fp + fn_);
    let fnr = ratio("fnr", fn_, tp + fn_);
    let fpr = ratio("fpr", fp, fp + tn);
    Ok(MetricRecord {
        precision,
        recall,
        f1,
        accuracy,
        fnr,
        fpr,
        undefined,
    })
}

/// Unweighted mean over periods.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Averages {
    pub periods: usize,
    pub mean: MetricRecord,
}

impl Serialize for Averages {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(13))?;
        map.serialize_entry("periods", &self.periods)?;
        for (k, v) in self.mean.values() {
            map.serialize_entry(k, &v)?;
        }
        for (k, v) in self.mean.values() {
            map.serialize_entry(&format!("{k}_pct"), &pct(v))?;
        }
        map.end()
    }
}

pub fn aggregate(records: &[MetricRecord]) -> Result<Averages, MetricsError> {
    aggregate_weighted(records, &vec![1.0; records.len()])
}

/// Weighted mean; `aggregate` is the all-ones case.
pub fn aggregate_weighted(
    records: &[MetricRecord],
    weights: &[f64],
) -> Result<Averages, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoPeriods);
    }
    assert_eq!(records.len(), weights.len());
    let total: f64 = weights.iter().sum();
    let mean_of = |get: fn(&MetricRecord) -> f64| {
        records
            .iter()
            .zip(weights)
            .map(|(r, w)| get(r) * w)
            .sum::<f64>()
            / total
    };
    Ok(Averages {
        periods: records.len(),
        mean: MetricRecord {
            precision: mean_of(|r| r.precision),
            recall: mean_of(|r| r.recall),
            f1: mean_of(|r| r.f1),
            accuracy: mean_of(|r| r.accuracy),
            fnr: mean_of(|r| r.fnr),
            fpr: mean_of(|r| r.fpr),
            undefined: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_cases() {
        let all = vec![1u8; 7];
        assert_eq!(
            confusion(&all, &all).unwrap(),
            ConfusionMatrix {
                tp: 7,
                fn_: 0,
                fp: 0,
                tn: 0
            }
        );
        let actual = [1, 1, 0, 1, 0, 0, 0];
        let pred = [1, 0, 0, 1, 1, 0, 0];
        let inv: Vec<u8> = pred.iter().map(|p| 1 - p).collect();
        let a = confusion(&actual, &pred).unwrap();
        let b = confusion(&actual, &inv).unwrap();
        assert_eq!((a.tp, a.fn_, a.fp, a.tn), (b.fn_, b.tp, b.tn, b.fp));
        assert!(matches!(
            confusion(&[1], &[]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(confusion(&[2], &[1]), Err(MetricsError::BadLabel(2)));
    }

    #[test]
    fn confusion_matches_tally_on_fixture() {
        let actual = [1, 0, 0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1, 0, 1, 0];
        let pred = [1, 0, 1, 0, 1, 0, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 1, 0, 0, 0];
        let cm = confusion(&actual, &pred).unwrap();
        // tallied by hand: positives at 0,3,4,6,10,11,13,16,18 (9); predicted
        // positive among them: 0,4,6,11,13,16 (6); false alarms at 2,7,14 (3)
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 6,
                fn_: 3,
                fp: 3,
                tn: 8
            }
        );
    }

    #[test]
    fn formula_values() {
        let m = compute_metrics(&ConfusionMatrix {
            tp: 95,
            fn_: 5,
            fp: 3,
            tn: 97,
        })
        .unwrap();
        assert!((m.precision - 95.0 / 98.0).abs() < 1e-15);
        assert!((m.precision - 0.9694).abs() < 5e-5);
        assert_eq!(m.recall, 0.95);
        assert!((m.f1 - 0.9596).abs() < 5e-5);
        assert!((m.fnr - 0.05).abs() < 1e-15);
        assert!((m.fpr - 0.03).abs() < 1e-15);
        assert!(m.undefined.is_empty());

        let perfect = compute_metrics(&ConfusionMatrix {
            tp: 4,
            fn_: 0,
            fp: 0,
            tn: 9,
        })
        .unwrap();
        assert_eq!(
            (perfect.precision, perfect.recall, perfect.f1),
            (1.0, 1.0, 1.0)
        );

        let none = compute_metrics(&ConfusionMatrix {
            tp: 0,
            fn_: 3,
            fp: 0,
            tn: 9,
        })
        .unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert_eq!(none.undefined, vec!["precision", "f1"]);

        assert_eq!(
            compute_metrics(&ConfusionMatrix::default()),
            Err(MetricsError::Empty)
        );
    }

    #[test]
    fn aggregation() {
        let one = compute_metrics(&ConfusionMatrix {
            tp: 3,
            fn_: 1,
            fp: 2,
            tn: 5,
        })
        .unwrap();
        let avg = aggregate(std::slice::from_ref(&one)).unwrap();
        assert_eq!(avg.mean.f1, one.f1);
        let r = |f1| MetricRecord {
            f1,
            ..Default::default()
        };
        assert_eq!(pct(aggregate(&[r(0.8), r(0.9)]).unwrap().mean.f1), "85.00");
        assert_eq!(aggregate(&[]), Err(MetricsError::NoPeriods));

        // thousandths summed as integers
        let milli = [913u64, 457, 1000, 0, 731, 288, 999];
        let recs: Vec<MetricRecord> = milli.iter().map(|&m| r(m as f64 / 1000.0)).collect();
        let want = milli.iter().sum::<u64>() as f64 / 7000.0;
        assert!((aggregate(&recs).unwrap().mean.f1 - want).abs() < 1e-15);
    }

    #[test]
    fn json_keys() {
        let m = compute_metrics(&ConfusionMatrix {
            tp: 1,
            fn_: 1,
            fp: 0,
            tn: 2,
        })
        .unwrap();
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["recall"], 0.5);
        assert_eq!(v["recall_pct"], "50.00");
        assert_eq!(v["fpr_pct"], "0.00");
    }

    proptest! {
        #[test]
        fn rate_identities(tp in 0u64..1000, fn_ in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000, k in 1u64..20) {
            prop_assume!(tp + fn_ + fp + tn > 0);
            let cm = ConfusionMatrix { tp, fn_, fp, tn };
            let m = compute_metrics(&cm).unwrap();
            if tp + fn_ > 0 {
                prop_assert!((m.recall + m.fnr - 1.0).abs() < 1e-12);
            }
            if fp + tn > 0 {
                prop_assert_eq!(m.fpr, fp as f64 / (fp + tn) as f64);
            }
            let scaled = compute_metrics(&ConfusionMatrix { tp: tp * k, fn_: fn_ * k, fp: fp * k, tn: tn * k }).unwrap();
            prop_assert!((scaled.f1 - m.f1).abs() < 1e-12);
        }

        #[test]
        fn matches_naive_definitions(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let (actual, pred): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let m = compute_metrics(&confusion(&actual, &pred).unwrap()).unwrap();
            let count = |a: u8, p: u8| actual.iter().zip(&pred).filter(|(x, y)| **x == a && **y == p).count() as f64;
            let (tp, fn_, fp, tn) = (count(1, 1), count(1, 0), count(0, 1), count(0, 0));
            let div = |n: f64, d: f64| if d == 0.0 { 0.0 } else { n / d };
            let p = div(tp, tp + fp);
            let r = div(tp, tp + fn_);
            prop_assert_eq!(m.precision, p);
            prop_assert_eq!(m.recall, r);
            prop_assert_eq!(m.f1, div(2.0 * p * r, p + r));
            prop_assert_eq!(m.accuracy, (tp + tn) / actual.len() as f64);
        }
    }
}
