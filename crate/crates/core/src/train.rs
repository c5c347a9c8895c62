//! Class-weight computation, train/validation splitting, the training loop
//! and best-iteration selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::eval::{per_class_metrics, ConfusionMatrix};
use crate::featurize::{ResizedImage, IMAGE_CHANNELS};
use crate::model::{argmax_label, BnState, Mode, ModelGraph, NUM_CLASSES};
use crate::nn::{optim::Optimizer, optim::OptimizerKind, Parameter, Tensor};

/// Inverse-frequency loss multipliers: `weight_i = total / count_i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: [f64; 3],
}

impl ClassWeights {
    pub fn get(&self, label: ClassLabel) -> f64 {
        self.weights[label.index()]
    }

    /// Uniform weights, for unweighted evaluation paths.
    pub fn uniform() -> Self {
        ClassWeights { weights: [1.0; 3] }
    }
}

pub fn compute_class_weights(image_counts: [u64; 3]) -> Result<ClassWeights> {
    let total: u64 = image_counts.iter().sum();
    let mut weights = [0.0; 3];
    for label in ClassLabel::ALL {
        let count = image_counts[label.index()];
        if count == 0 {
            return Err(Error::data(format!(
                "class {label} has no images; weights are undefined"
            )));
        }
        weights[label.index()] = total as f64 / count as f64;
    }
    Ok(ClassWeights { weights })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    Accuracy,
    F1,
    Both,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_selection_metric")]
    pub selection_metric: SelectionMetric,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Stride between consecutive training windows; 1 yields maximal overlap.
    #[serde(default = "default_window_stride")]
    pub window_stride: usize,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    64
}
fn default_validation_fraction() -> f64 {
    0.2
}
fn default_selection_metric() -> SelectionMetric {
    SelectionMetric::Both
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_window_stride() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            validation_fraction: default_validation_fraction(),
            seed: 0,
            selection_metric: default_selection_metric(),
            optimizer: default_optimizer(),
            window_stride: default_window_stride(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::config("learning_rate must be non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation_fraction must lie in (0, 1)"));
        }
        if self.window_stride == 0 {
            return Err(Error::config("window_stride must be at least 1"));
        }
        Ok(())
    }
}

/// A training/evaluation sample: indices into a shared image list plus the
/// window label (majority class, ties broken by the last image).
#[derive(Clone, Debug)]
pub struct Window {
    pub image_indices: Vec<usize>,
    pub label: ClassLabel,
}

pub fn window_label(labels: &[ClassLabel]) -> ClassLabel {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let max = *counts.iter().max().unwrap();
    let leaders: Vec<usize> = (0..3).filter(|&i| counts[i] == max).collect();
    if leaders.len() == 1 {
        ClassLabel::from_index(leaders[0]).unwrap()
    } else {
        *labels.last().unwrap()
    }
}

/// Per-class chronological split: the last `ceil(fraction * count)` images of
/// each class form validation; train and validation are disjoint.
pub fn split_train_validation(
    per_class: &[Vec<usize>; 3],
    fraction: f64,
) -> Result<([Vec<usize>; 3], [Vec<usize>; 3])> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("validation fraction must lie in (0, 1)"));
    }
    let mut train: [Vec<usize>; 3] = Default::default();
    let mut val: [Vec<usize>; 3] = Default::default();
    for (c, images) in per_class.iter().enumerate() {
        if images.len() < 2 {
            return Err(Error::data(format!(
                "class {} has {} images; at least 2 are required to split",
                ClassLabel::from_index(c).unwrap(),
                images.len()
            )));
        }
        let n_val = ((fraction * images.len() as f64).ceil() as usize).min(images.len() - 1);
        let cut = images.len() - n_val;
        train[c] = images[..cut].to_vec();
        val[c] = images[cut..].to_vec();
    }
    Ok((train, val))
}

/// Builds windows of `t` consecutive same-class images at the given stride.
/// A class with fewer than `t` images contributes a single short window.
pub fn build_windows(
    per_class: &[Vec<usize>; 3],
    images: &[ResizedImage],
    t: usize,
    stride: usize,
) -> Vec<Window> {
    let mut windows = Vec::new();
    for class_images in per_class {
        if class_images.is_empty() {
            continue;
        }
        if class_images.len() < t {
            let labels: Vec<ClassLabel> =
                class_images.iter().map(|&i| images[i].label).collect();
            windows.push(Window {
                image_indices: class_images.clone(),
                label: window_label(&labels),
            });
            continue;
        }
        let mut start = 0;
        while start + t <= class_images.len() {
            let slice = &class_images[start..start + t];
            let labels: Vec<ClassLabel> = slice.iter().map(|&i| images[i].label).collect();
            windows.push(Window {
                image_indices: slice.to_vec(),
                label: window_label(&labels),
            });
            start += stride;
        }
    }
    windows
}

/// Resized images plus train/validation windows, ready for the training loop.
#[derive(Debug)]
pub struct PreparedData {
    pub images: Vec<ResizedImage>,
    pub train_windows: Vec<Window>,
    pub val_windows: Vec<Window>,
    pub image_counts: [u64; 3],
}

/// Encodes per-class record streams into images at the given resolution and
/// derives windows: overlapping at `window_stride` for training, contiguous
/// non-overlapping for validation.
pub fn prepare_windows(
    per_class_records: &[Vec<crate::dataset::FlowRecord>; 3],
    stats: &crate::featurize::NormalizationStats,
    resolution: crate::featurize::Resolution,
    t: usize,
    window_stride: usize,
    validation_fraction: f64,
) -> Result<PreparedData> {
    let mut per_class_images: [Vec<crate::featurize::ImageTensor>; 3] = Default::default();
    for label in ClassLabel::ALL {
        let c = label.index();
        per_class_images[c] =
            crate::featurize::build_images(per_class_records[c].iter().cloned(), stats, label);
    }
    prepare_windows_from_images(&per_class_images, resolution, t, window_stride, validation_fraction)
}

/// Same as [`prepare_windows`] but starting from already-built images, as
/// read back from per-class image stores.
pub fn prepare_windows_from_images(
    per_class_images: &[Vec<crate::featurize::ImageTensor>; 3],
    resolution: crate::featurize::Resolution,
    t: usize,
    window_stride: usize,
    validation_fraction: f64,
) -> Result<PreparedData> {
    let mut images = Vec::new();
    let mut per_class_indices: [Vec<usize>; 3] = Default::default();
    let mut image_counts = [0u64; 3];
    for label in ClassLabel::ALL {
        let c = label.index();
        for img in &per_class_images[c] {
            per_class_indices[c].push(images.len());
            images.push(crate::featurize::bilinear_resize(img, resolution));
            image_counts[c] += 1;
        }
    }
    let (train_idx, val_idx) = split_train_validation(&per_class_indices, validation_fraction)?;
    let train_windows = build_windows(&train_idx, &images, t, window_stride);
    let val_windows = build_windows(&val_idx, &images, t, t);
    Ok(PreparedData {
        images,
        train_windows,
        val_windows,
        image_counts,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_f1: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_val_f1: f64,
    pub checkpoint_path: Option<String>,
}

fn selection_score(metric: SelectionMetric, acc: f64, f1: f64) -> f64 {
    match metric {
        SelectionMetric::Accuracy => acc,
        SelectionMetric::F1 => f1,
        SelectionMetric::Both => (acc + f1) / 2.0,
    }
}

fn batch_input(model: &ModelGraph, images: &[ResizedImage], batch: &[&Window], t: usize) -> Tensor {
    let side = model.expected_resolution().side();
    let plane = side * side * IMAGE_CHANNELS;
    let mut data = Vec::with_capacity(batch.len() * t * plane);
    for w in batch {
        for &idx in &w.image_indices {
            data.extend_from_slice(&images[idx].pixels);
        }
    }
    Tensor::new(vec![batch.len() * t, side, side, IMAGE_CHANNELS], data)
}

/// Evaluates windows (all the same length) in eval mode, returning the
/// confusion matrix of window-level predictions.
pub fn evaluate_windows(
    model: &ModelGraph,
    images: &[ResizedImage],
    windows: &[Window],
    batch_size: usize,
) -> Result<ConfusionMatrix> {
    let mut matrix = ConfusionMatrix::new();
    // group by window length so short prefix windows still evaluate
    let mut by_len: std::collections::BTreeMap<usize, Vec<&Window>> = Default::default();
    for w in windows {
        by_len.entry(w.image_indices.len()).or_default().push(w);
    }
    for (t, group) in by_len {
        for chunk in group.chunks(batch_size) {
            let input = batch_input(model, images, chunk, t);
            let fwd = model.forward_batch(input, chunk.len(), t, None, Mode::Eval)?;
            let probs = fwd.graph.value(fwd.probs);
            for (i, w) in chunk.iter().enumerate() {
                let row = &probs.data()[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
                let pred = argmax_label(&[row[0], row[1], row[2]]);
                matrix.add(w.label, pred);
            }
        }
    }
    Ok(matrix)
}

/// Parameter and running-stat snapshot of the best epoch.
#[derive(Clone)]
struct Snapshot {
    params: Vec<Parameter>,
    bn_states: Vec<BnState>,
}

/// Runs the full training schedule: seeded shuffling, weighted cross-entropy
/// on mini-batches of windows, per-epoch evaluation of both sets, and
/// restoration of the best-epoch parameters into the model.
pub fn train(
    model: &mut ModelGraph,
    images: &[ResizedImage],
    train_windows: &[Window],
    val_windows: &[Window],
    weights: &ClassWeights,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::data("training requires non-empty train and validation sets"));
    }
    let t = model.config.window_length;
    if train_windows.iter().any(|w| w.image_indices.len() != t) {
        return Err(Error::data(format!(
            "all training windows must have length {t}"
        )));
    }
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Snapshot)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut train_matrix = ConfusionMatrix::new();
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let input = batch_input(model, images, &batch, t);
            let fwd = model.forward_batch(input, batch.len(), t, None, Mode::Train)?;
            let labels: Vec<usize> = batch.iter().map(|w| w.label.index()).collect();
            let sample_weights: Vec<f64> = batch.iter().map(|w| weights.get(w.label)).collect();
            let mut graph = fwd.graph;
            let loss = graph.weighted_cross_entropy(fwd.probs, &labels, &sample_weights);
            let loss_value = graph.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::internal(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no}"
                )));
            }
            loss_sum += loss_value;
            batches += 1;
            let probs = graph.value(fwd.probs);
            for (i, w) in batch.iter().enumerate() {
                let row = &probs.data()[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
                train_matrix.add(w.label, argmax_label(&[row[0], row[1], row[2]]));
            }
            let grads = graph.backward(loss);
            let grad_vec: Vec<Option<Vec<f64>>> = fwd
                .param_nodes
                .iter()
                .map(|&id| grads.get(id).map(|g| g.to_vec()))
                .collect();
            optimizer.step(&mut model.params, &grad_vec)?;
            model.update_running_stats(&fwd.bn_batch_stats);
        }
        let train_metrics = per_class_metrics(&train_matrix)?;
        let val_matrix = evaluate_windows(model, images, val_windows, config.batch_size)?;
        let val_metrics = per_class_metrics(&val_matrix)?;
        let em = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_accuracy: train_metrics.overall_accuracy,
            train_f1: train_metrics.weighted_f1,
            val_accuracy: val_metrics.overall_accuracy,
            val_f1: val_metrics.weighted_f1,
        };
        let score = selection_score(config.selection_metric, em.val_accuracy, em.val_f1);
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((
                score,
                epoch,
                Snapshot {
                    params: model.params.clone(),
                    bn_states: model.bn_states.clone(),
                },
            ));
        }
        log::info!(
            "{} epoch {epoch}: loss {:.4} train acc {:.4} val acc {:.4} val f1 {:.4}",
            model.config.backbone.name(),
            em.train_loss,
            em.train_accuracy,
            em.val_accuracy,
            em.val_f1
        );
        epochs.push(em);
    }

    let (_, best_epoch, snapshot) = best.expect("at least one epoch ran");
    model.params = snapshot.params;
    model.bn_states = snapshot.bn_states;
    let best_metrics = &epochs[best_epoch];
    Ok(TrainReport {
        model: model.config.backbone.name().to_string(),
        best_epoch,
        best_val_accuracy: best_metrics.val_accuracy,
        best_val_f1: best_metrics.val_f1,
        checkpoint_path: None,
        epochs,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub train_accuracy: f64,
    pub train_f1: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

/// Ranks reports by validation accuracy, then validation F1, then input
/// order, and shapes a model-comparison table.
pub fn compare_models(reports: &[TrainReport]) -> Result<Vec<ComparisonRow>> {
    if reports.is_empty() {
        return Err(Error::data("model comparison requires at least one report"));
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = &reports[a];
        let rb = &reports[b];
        rb.best_val_accuracy
            .partial_cmp(&ra.best_val_accuracy)
            .unwrap()
            .then(rb.best_val_f1.partial_cmp(&ra.best_val_f1).unwrap())
            .then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .map(|i| {
            let r = &reports[i];
            let best = &r.epochs[r.best_epoch];
            ComparisonRow {
                model: r.model.clone(),
                train_accuracy: best.train_accuracy,
                train_f1: best.train_f1,
                val_accuracy: best.val_accuracy,
                val_f1: best.val_f1,
            }
        })
        .collect())
}

/// Table-shaped CSV with columns (model, train_acc, train_f1, val_acc, val_f1).
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("model,train_acc,train_f1,val_acc,val_f1\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model, r.train_accuracy, r.train_f1, r.val_accuracy, r.val_f1
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_class_weights() {
        let w = compute_class_weights([100_340, 85_943, 38_149]).unwrap();
        assert!((w.weights[0] - 2.2367).abs() < 1e-4, "{}", w.weights[0]);
        assert!((w.weights[1] - 2.6114).abs() < 1e-4, "{}", w.weights[1]);
        assert!((w.weights[2] - 5.8830).abs() < 1e-4, "{}", w.weights[2]);
        assert!((w.weights[2] / w.weights[0] - 2.6303).abs() < 1e-3);
        assert!((w.weights[2] / w.weights[1] - 2.2528).abs() < 1e-3);
    }

    #[test]
    fn equal_counts_give_weight_three() {
        let w = compute_class_weights([7, 7, 7]).unwrap();
        assert_eq!(w.weights, [3.0, 3.0, 3.0]);
    }

    #[test]
    fn zero_count_names_the_class() {
        let err = compute_class_weights([5, 0, 5]).unwrap_err().to_string();
        assert!(err.contains("DoS"), "{err}");
    }

    #[test]
    fn weight_identity_is_exact() {
        let counts = [100_340u64, 85_943, 38_149];
        let total: u64 = counts.iter().sum();
        let w = compute_class_weights(counts).unwrap();
        for i in 0..3 {
            assert!((w.weights[i] * counts[i] as f64 - total as f64).abs() < 1e-9 * total as f64);
        }
    }

    #[test]
    fn chronological_split_is_disjoint_and_ordered() {
        let per_class: [Vec<usize>; 3] = [
            (0..100).collect(),
            (100..200).collect(),
            (200..300).collect(),
        ];
        let (train, val) = split_train_validation(&per_class, 0.2).unwrap();
        for c in 0..3 {
            assert_eq!(train[c].len(), 80);
            assert_eq!(val[c].len(), 20);
            let max_train = *train[c].last().unwrap();
            assert!(val[c].iter().all(|&v| v > max_train));
        }
    }

    #[test]
    fn half_split_of_two_images() {
        let per_class: [Vec<usize>; 3] = [vec![0, 1], vec![2, 3], vec![4, 5]];
        let (train, val) = split_train_validation(&per_class, 0.5).unwrap();
        for c in 0..3 {
            assert_eq!(train[c].len(), 1);
            assert_eq!(val[c].len(), 1);
        }
    }

    #[test]
    fn tiny_class_is_fatal() {
        let per_class: [Vec<usize>; 3] = [vec![0], vec![1, 2], vec![3, 4]];
        assert!(split_train_validation(&per_class, 0.2).is_err());
    }

    #[test]
    fn majority_window_label_with_tie_break() {
        use ClassLabel::*;
        assert_eq!(window_label(&[DDoS, DDoS, DoS]), DDoS);
        assert_eq!(window_label(&[DDoS, DoS]), DoS); // tie -> last image
        assert_eq!(window_label(&[Others]), Others);
    }

    #[test]
    fn comparison_ranks_by_val_accuracy() {
        let mk = |model: &str, acc: f64| TrainReport {
            model: model.into(),
            epochs: vec![EpochMetrics {
                epoch: 0,
                train_loss: 0.0,
                train_accuracy: acc,
                train_f1: acc,
                val_accuracy: acc,
                val_f1: acc,
            }],
            best_epoch: 0,
            best_val_accuracy: acc,
            best_val_f1: acc,
            checkpoint_path: None,
        };
        let reports = vec![
            mk("micro-xception", 0.9669),
            mk("micro-inception", 0.9696),
            mk("micro-resnet", 0.9628),
        ];
        let rows = compare_models(&reports).unwrap();
        assert_eq!(rows[0].model, "micro-inception");
        assert_eq!(rows[1].model, "micro-xception");
        assert_eq!(rows[2].model, "micro-resnet");
    }

    #[test]
    fn single_report_ranks_first() {
        let reports = vec![TrainReport {
            model: "micro-resnet".into(),
            epochs: vec![EpochMetrics {
                epoch: 0,
                train_loss: 1.0,
                train_accuracy: 0.5,
                train_f1: 0.5,
                val_accuracy: 0.5,
                val_f1: 0.5,
            }],
            best_epoch: 0,
            best_val_accuracy: 0.5,
            best_val_f1: 0.5,
            checkpoint_path: None,
        }];
        assert_eq!(compare_models(&reports).unwrap()[0].model, "micro-resnet");
    }
}
