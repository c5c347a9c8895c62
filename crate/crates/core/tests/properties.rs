//! Property-based invariants over the data pipeline and the metric and
//! kernel layers.

use proptest::prelude::*;

use flowimage::dataset::{
    subsample_preserving_sequence, summarize_counts, ClassLabel, FlowRecord, SamplingPlan,
    NUM_FEATURES,
};
use flowimage::eval::{binary_collapse, per_class_metrics, ConfusionMatrix};
use flowimage::featurize::{
    bilinear_resize, build_images, scale_to_byte, ImageTensor, NormalizationStats, Resolution,
};
use flowimage::nn::{Graph, Tensor};
use flowimage::train::{compute_class_weights, window_label};

fn records(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<FlowRecord>> {
    prop::collection::vec(
        prop::collection::vec(lo..hi, NUM_FEATURES),
        n..=n.max(1) * 2,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, values)| {
                let mut features = [0.0; NUM_FEATURES];
                features.copy_from_slice(&values);
                FlowRecord {
                    features,
                    label: ClassLabel::from_index(i % 3).unwrap(),
                    seq_index: i as u64,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn subsample_preserves_order_and_membership(
        rows in records(0, -10.0, 10.0),
        fraction in 0.05f64..1.0,
        block_length in 1usize..40,
        seed in any::<u64>(),
    ) {
        let plan = SamplingPlan { fraction, block_length, seed };
        let kept = subsample_preserving_sequence(&rows, &plan).unwrap();
        // strictly increasing sequence indices => order preserved, no duplicates
        for pair in kept.windows(2) {
            prop_assert!(pair[0].seq_index < pair[1].seq_index);
        }
        // every kept record is one of the originals
        for r in &kept {
            prop_assert_eq!(rows[r.seq_index as usize].features, r.features);
        }
        // kept count reaches the target within one block
        let target = (fraction * rows.len() as f64).ceil() as usize;
        prop_assert!(kept.len() >= target.min(rows.len()));
        prop_assert!(kept.len() <= (target + block_length).min(rows.len()));
    }

    #[test]
    fn subsample_is_deterministic(
        rows in records(0, -5.0, 5.0),
        seed in any::<u64>(),
    ) {
        let plan = SamplingPlan { fraction: 0.3, block_length: 7, seed };
        let a = subsample_preserving_sequence(&rows, &plan).unwrap();
        let b = subsample_preserving_sequence(&rows, &plan).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.seq_index, y.seq_index);
        }
    }

    #[test]
    fn summary_percentages_sum_to_hundred(counts in [1u64..100_000, 1u64..100_000, 1u64..100_000]) {
        let summary = summarize_counts(counts).unwrap();
        let total: f64 = summary.classes.iter().map(|c| c.percentage).sum();
        prop_assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn class_weight_identity_holds_exactly(counts in [1u64..1_000_000, 1u64..1_000_000, 1u64..1_000_000]) {
        // weight_i * count_i == total for every class
        let total: u64 = counts.iter().sum();
        let weights = compute_class_weights(counts).unwrap();
        for i in 0..3 {
            let product = weights.weights[i] * counts[i] as f64;
            prop_assert!((product - total as f64).abs() <= total as f64 * 1e-12);
        }
    }

    #[test]
    fn normalization_clamps_to_unit_interval(
        rows in records(2, -100.0, 100.0),
        probe in prop::collection::vec(-200.0f64..200.0, NUM_FEATURES),
    ) {
        let stats = NormalizationStats::fit(rows.iter()).unwrap();
        let mut features = [0.0; NUM_FEATURES];
        features.copy_from_slice(&probe);
        let record = FlowRecord { features, label: ClassLabel::DDoS, seq_index: 0 };
        for v in stats.normalize(&record) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn byte_scaling_is_monotone_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (sa, sb) = (scale_to_byte(a), scale_to_byte(b));
        if a <= b {
            prop_assert!(sa <= sb);
        }
        // u8 bounds are implicit; endpoints must hit them
        prop_assert_eq!(scale_to_byte(0.0), 0);
        prop_assert_eq!(scale_to_byte(1.0), 255);
    }

    #[test]
    fn image_count_follows_floor_law(n in 0usize..500) {
        let rows: Vec<FlowRecord> = (0..n)
            .map(|i| FlowRecord {
                features: [0.5; NUM_FEATURES],
                label: ClassLabel::DoS,
                seq_index: i as u64,
            })
            .collect();
        let stats = NormalizationStats {
            min: [0.0; NUM_FEATURES],
            max: [1.0; NUM_FEATURES],
        };
        let images = build_images(rows, &stats, ClassLabel::DoS);
        prop_assert_eq!(images.len(), n / 48);
    }

    #[test]
    fn resize_stays_within_source_byte_range(
        bytes in prop::collection::vec(any::<u8>(), 16 * 16 * 3),
    ) {
        let lo = *bytes.iter().min().unwrap() as f64 / 255.0;
        let hi = *bytes.iter().max().unwrap() as f64 / 255.0;
        let image = ImageTensor::from_bytes(bytes, ClassLabel::Others, 0);
        for target in [Resolution::R32, Resolution::R71, Resolution::R75] {
            let resized = bilinear_resize(&image, target);
            for v in &resized.pixels {
                // interpolation is convex: outputs stay inside the input range
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_lie_on_simplex(
        logits in prop::collection::vec(-30.0f64..30.0, 12),
    ) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![4, 3], logits));
        let y = g.softmax(x);
        let data = g.value(y).data();
        for row in data.chunks(3) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn metrics_are_bounded(counts in prop::array::uniform3(prop::array::uniform3(0u64..10_000))) {
        let matrix = ConfusionMatrix::from_counts(counts);
        prop_assume!(matrix.total() > 0);
        let report = per_class_metrics(&matrix).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.overall_accuracy));
        prop_assert!((0.0..=1.0).contains(&report.weighted_f1));
        for c in &report.per_class {
            prop_assert!((0.0..=1.0).contains(&c.precision));
            prop_assert!((0.0..=1.0).contains(&c.recall));
            prop_assert!((0.0..=1.0).contains(&c.f1));
            prop_assert!((0.0..=1.0).contains(&c.accuracy));
        }
    }

    #[test]
    fn binary_collapse_dominates_multiclass_accuracy(counts in prop::array::uniform3(prop::array::uniform3(0u64..10_000))) {
        // merging the attack classes can only forgive errors, never add them
        let matrix = ConfusionMatrix::from_counts(counts);
        prop_assume!(matrix.total() > 0);
        let multi = per_class_metrics(&matrix).unwrap();
        let binary = binary_collapse(&matrix);
        prop_assert!(binary.accuracy >= multi.overall_accuracy - 1e-12);
    }

    #[test]
    fn window_label_follows_majority_rule(labels in prop::collection::vec(0usize..3, 1..12)) {
        let labels: Vec<ClassLabel> = labels
            .into_iter()
            .map(|i| ClassLabel::from_index(i).unwrap())
            .collect();
        let winner = window_label(&labels);
        let count = |l: ClassLabel| labels.iter().filter(|&&x| x == l).count();
        let max = ClassLabel::ALL.iter().map(|&l| count(l)).max().unwrap();
        let leaders: Vec<ClassLabel> = ClassLabel::ALL
            .into_iter()
            .filter(|&l| count(l) == max)
            .collect();
        if leaders.len() == 1 {
            // unique majority wins outright
            prop_assert_eq!(winner, leaders[0]);
        } else {
            // ties defer to the last image's label
            prop_assert_eq!(winner, *labels.last().unwrap());
        }
    }
}
