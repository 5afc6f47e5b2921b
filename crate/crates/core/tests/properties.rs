//! Property tests over batching, selection, metrics and persisted formats.

use proptest::prelude::*;

use driftbench::active::select_uncertain;
use driftbench::corpus::{read_corpus, write_corpus, AppRecord, RawCorpus};
use driftbench::features::{format_sig12, FeatureVocabulary};
use driftbench::metrics::{compute_metrics, confusion, ConfusionMatrix};
use driftbench::windows::{make_batches, plan_monthly, plan_windows};
use driftbench::SparseDataset;

/// Dataset with the given labels and non-decreasing day offsets.
fn timeline(labels: &[u8], gaps: &[u8]) -> SparseDataset {
    let mut day = 16_000i64;
    let timestamps = gaps
        .iter()
        .map(|&g| {
            day += i64::from(g);
            day
        })
        .collect();
    SparseDataset {
        vocab_size: 1,
        ids: (0..labels.len()).map(|i| format!("{i:064x}")).collect(),
        rows: vec![Vec::new(); labels.len()],
        labels: labels.to_vec(),
        timestamps,
    }
}

fn labelled_timeline() -> impl Strategy<Value = SparseDataset> {
    (1usize..300).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::bool::weighted(0.3), n),
            prop::collection::vec(0u8..3, n),
        )
            .prop_map(|(l, g)| {
                let labels: Vec<u8> = l.into_iter().map(u8::from).collect();
                timeline(&labels, &g)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn batches_respect_quotas_and_time(ds in labelled_timeline(), b in 1usize..20, m_frac in 0.0f64..=1.0) {
        let m = ((b as f64) * m_frac).floor() as usize;
        let batches = make_batches(&ds, b, m).unwrap();
        let mut used = 0;
        let mut last_row = None;
        for (o, bt) in batches.iter().enumerate() {
            prop_assert_eq!(bt.ordinal, o);
            prop_assert!(!bt.row_ids.is_empty());
            prop_assert!(bt.row_ids.windows(2).all(|w| w[0] < w[1]));
            if let Some(prev) = last_row {
                prop_assert!(bt.row_ids[0] > prev);
            }
            last_row = bt.row_ids.last().copied();
            prop_assert!(bt.n_mal <= m && bt.n_ben <= b - m);
            prop_assert_eq!(bt.short, !(bt.n_mal == m && bt.n_ben == b - m));
            prop_assert!(!bt.short || o + 1 == batches.len());
            used += bt.row_ids.len() + bt.surplus;
        }
        // every row is either placed or counted as surplus, except rows after
        // the last batch closed
        prop_assert!(used <= ds.len());
        if batches.last().is_some_and(|b| b.short) {
            prop_assert_eq!(used, ds.len());
        }
    }

    #[test]
    fn windows_slide_by_one(n_batches in 0usize..40, k in 1usize..8) {
        let labels: Vec<u8> = (0..n_batches * 2).map(|i| (i % 2) as u8).collect();
        let ds = timeline(&labels, &vec![1; labels.len()]);
        let batches = make_batches(&ds, 2, 1).unwrap();
        prop_assert_eq!(batches.len(), n_batches);
        match plan_windows(&batches, k) {
            Ok(plan) => {
                prop_assert_eq!(plan.windows.len(), n_batches - k - 1);
                for (i, w) in plan.windows.iter().enumerate() {
                    prop_assert_eq!(w.train_batches[0], i);
                    prop_assert_eq!(w.test_batch, i + k + 1);
                }
            }
            Err(_) => prop_assert!(n_batches < k + 2),
        }
    }

    #[test]
    fn monthly_split_partitions_rows(ds in labelled_timeline(), span in 1usize..4) {
        let ds = SparseDataset {
            // stretch the timeline so several months appear
            timestamps: ds.timestamps.iter().map(|t| 16_000 + (t - 16_000) * 9).collect(),
            ..ds
        };
        if let Ok(split) = plan_monthly(&ds, span) {
            let mut all: Vec<usize> = split.initial_train.clone();
            for m in &split.months {
                prop_assert!(!m.rows.is_empty());
                prop_assert!(m.rows[0] > *all.last().unwrap());
                all.extend_from_slice(&m.rows);
            }
            prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn selection_matches_sort_oracle(
        scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]), 0..60),
        budget in 0usize..70,
    ) {
        let got = select_uncertain(&scores, budget);
        let mut keyed: Vec<(f64, usize)> =
            scores.iter().enumerate().map(|(i, &s)| (-(s.min(1.0 - s)), i)).collect();
        keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<usize> = keyed.iter().take(budget).map(|k| k.1).collect();
        want.sort_unstable();
        prop_assert_eq!(got.len(), budget.min(scores.len()));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn metric_identities(tp in 0u64..50, fn_ in 0u64..50, fp in 0u64..50, tn in 0u64..50) {
        let cm = ConfusionMatrix { tp, fn_, fp, tn };
        prop_assume!(cm.total() > 0);
        let m = compute_metrics(&cm).unwrap();
        if tp + fn_ > 0 {
            prop_assert!((m.recall + m.fnr - 1.0).abs() < 1e-12);
        }
        if fp + tn > 0 {
            prop_assert!(m.fpr >= 0.0 && m.fpr <= 1.0);
        }
        if tp > 0 {
            let direct = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            prop_assert!((m.f1 - direct).abs() < 1e-12);
        }
        let actual: Vec<u8> = [(1, tp), (1, fn_), (0, fp), (0, tn)].iter().flat_map(|&(y, n)| std::iter::repeat_n(y, n as usize)).collect();
        let pred: Vec<u8> = [(1, tp), (0, fn_), (1, fp), (0, tn)].iter().flat_map(|&(y, n)| std::iter::repeat_n(y, n as usize)).collect();
        prop_assert_eq!(confusion(&actual, &pred).unwrap(), cm);
    }

    #[test]
    fn sparse_dataset_round_trips(
        rows in prop::collection::vec(prop::collection::btree_set(0u32..30, 0..8), 1..40),
        seed in any::<u64>(),
    ) {
        let n = rows.len();
        let ds = SparseDataset {
            vocab_size: 30,
            ids: (0..n).map(|i| format!("{:064x}", i as u64 ^ seed)).collect(),
            rows: rows.into_iter().map(|r| r.into_iter().collect()).collect(),
            labels: (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8).collect(),
            timestamps: (0..n as i64).collect(),
        };
        let text = ds.to_text(&["note".to_string()]);
        prop_assert_eq!(SparseDataset::parse(&text).unwrap(), ds);
    }

    #[test]
    fn vocabulary_round_trips(mis in prop::collection::vec(0.0f64..0.7, 1..30)) {
        let vocab = FeatureVocabulary::from_scored(
            mis.iter().enumerate().map(|(i, &m)| (format!("api_call::f{i}"), m)).collect(),
        );
        let back = FeatureVocabulary::parse_tsv(&vocab.to_tsv(&[])).unwrap();
        prop_assert_eq!(back.len(), vocab.len());
        for (a, b) in vocab.entries().iter().zip(back.entries()) {
            prop_assert_eq!(&a.feature, &b.feature);
            prop_assert_eq!(format_sig12(a.mi), format_sig12(b.mi));
        }
        prop_assert!(vocab.entries().windows(2).all(|w| w[0].mi >= w[1].mi));
    }

    #[test]
    fn corpus_round_trips(
        apps in prop::collection::vec((0i64..2000, any::<bool>(), prop::collection::btree_set("[a-z]{1,6}::[a-z_]{1,8}", 0..6)), 1..25),
    ) {
        let records: Vec<AppRecord> = apps
            .iter()
            .enumerate()
            .map(|(i, (day, mal, _))| AppRecord {
                sha256: format!("{:064x}", i * 7919),
                app_id: (i % 3 == 0).then(|| format!("com.example.app{i}")),
                timestamp: 16_000 + day,
                label: u8::from(*mal),
                source: None,
            })
            .collect();
        let features = apps.iter().map(|a| a.2.iter().cloned().collect()).collect();
        let corpus = RawCorpus::new(records, features).unwrap();
        let mut buf = Vec::new();
        write_corpus(&corpus, &[], &mut buf).unwrap();
        let back = read_corpus(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.len(), corpus.len());
        for ((ra, fa), (rb, fb)) in corpus.iter().zip(back.iter()) {
            prop_assert_eq!(&ra.sha256, &rb.sha256);
            prop_assert_eq!(&ra.app_id, &rb.app_id);
            prop_assert_eq!(ra.timestamp, rb.timestamp);
            prop_assert_eq!(ra.label, rb.label);
            prop_assert_eq!(fa, fb);
        }
        prop_assert!(back.records().windows(2).all(|w| (w[0].timestamp, &w[0].sha256) <= (w[1].timestamp, &w[1].sha256)));
    }
}
