//! Implementations of the subcommands; each validates its inputs up front
//! and writes artifacts under the configured working directory.

use std::fs;
use std::path::Path;

use serde::Serialize;

use flowimage::dataset::ClassLabel;
use flowimage::eval::{
    binary_collapse, per_class_metrics, BinaryCollapseReport, ConfusionMatrix, MetricsReport,
};
use flowimage::featurize::{
    build_images, read_image_store, ImageStoreWriter, ImageTensor, NormalizationStats,
};
use flowimage::ingest::{ingest_file, read_sampled_csv, write_sampled_csv};
use flowimage::model::{
    build_model, load_checkpoint, load_model_config, save_checkpoint, save_model_config,
    BackboneKind, ModelGraph,
};
use flowimage::synth::{write_synthetic_csv, SyntheticSpec};
use flowimage::train::{
    compare_models, comparison_csv, compute_class_weights, evaluate_windows,
    prepare_windows_from_images, train, PreparedData, TrainReport,
};
use flowimage::{Error, Result};

use crate::config::PipelineConfig;

pub fn cmd_synth(out: &Path, counts: [u64; 3], seed: u64, overlapping: bool) -> Result<()> {
    let spec = if overlapping {
        SyntheticSpec::overlapping(counts, seed)
    } else {
        SyntheticSpec::range_disjoint(counts, seed)
    };
    write_synthetic_csv(&spec, out)?;
    println!(
        "wrote {} synthetic records to {}",
        counts.iter().sum::<u64>(),
        out.display()
    );
    Ok(())
}

pub fn cmd_ingest(config: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&config.workdir)?;
    let outcome = ingest_file(&config.input_csv, &config.ingest_config())?;
    write_sampled_csv(&config.sampled_csv(), &outcome)?;
    let summary_json = serde_json::to_string_pretty(&outcome.summary)?;
    fs::write(config.summary_json(), &summary_json)?;
    if !outcome.dropped_columns.is_empty() {
        log::info!("dropped empty columns: {}", outcome.dropped_columns.join(", "));
    }
    println!("{summary_json}");
    Ok(())
}

pub fn cmd_featurize(config: &PipelineConfig, force: bool) -> Result<()> {
    let stats_path = config.stats_json();
    if stats_path.exists() && !force {
        return Err(Error::config(format!(
            "{} already exists; re-run with --force to overwrite",
            stats_path.display()
        )));
    }
    let (feature_names, per_class) = read_sampled_csv(&config.sampled_csv())?;
    let stats = NormalizationStats::fit(per_class.iter().flatten())?;
    stats.save_json(&stats_path, &feature_names)?;

    // the three class streams are independent; encode them concurrently
    let counts = std::thread::scope(|scope| -> Result<Vec<u64>> {
        let handles: Vec<_> = ClassLabel::ALL
            .iter()
            .map(|&label| {
                let records = &per_class[label.index()];
                let stats = &stats;
                let path = config.image_store(label);
                scope.spawn(move || -> Result<u64> {
                    let mut writer = ImageStoreWriter::create(&path)?;
                    for image in build_images(records.iter().cloned(), stats, label) {
                        writer.write(&image)?;
                    }
                    writer.finish()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("featurize worker panicked"))
            .collect()
    })?;
    for (label, count) in ClassLabel::ALL.iter().zip(&counts) {
        println!("{label}: {count} images");
    }
    Ok(())
}

fn load_image_stores(config: &PipelineConfig) -> Result<[Vec<ImageTensor>; 3]> {
    let mut per_class: [Vec<ImageTensor>; 3] = Default::default();
    for label in ClassLabel::ALL {
        per_class[label.index()] = read_image_store(&config.image_store(label), label)?;
    }
    Ok(per_class)
}

fn prepare(config: &PipelineConfig, backbone: BackboneKind) -> Result<PreparedData> {
    let mc = config.model_config(backbone);
    let tc = config.train_config(backbone);
    let per_class = load_image_stores(config)?;
    prepare_windows_from_images(
        &per_class,
        backbone.resolution(),
        mc.window_length,
        tc.window_stride,
        tc.validation_fraction,
    )
}

pub fn cmd_train(config: &PipelineConfig, backbone: BackboneKind) -> Result<()> {
    let mc = config.model_config(backbone);
    let tc = config.train_config(backbone);
    let data = prepare(config, backbone)?;
    let weights = compute_class_weights(data.image_counts)?;
    let mut model = build_model(&mc)?;
    log::info!(
        "training {} ({} parameters, {} train windows, {} validation windows)",
        backbone.name(),
        model.num_params(),
        data.train_windows.len(),
        data.val_windows.len()
    );
    let mut report = train(
        &mut model,
        &data.images,
        &data.train_windows,
        &data.val_windows,
        &weights,
        &tc,
    )?;
    let ckpt = config.checkpoint(backbone);
    save_checkpoint(&model, &ckpt)?;
    save_model_config(&mc, &config.model_json(backbone))?;
    // relative to the workdir, so runs in different directories stay
    // byte-identical
    report.checkpoint_path = Some(ckpt.file_name().unwrap().to_string_lossy().into_owned());
    fs::write(
        config.train_report(backbone),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "{}: best epoch {} validation accuracy {:.4} F1 {:.4}",
        backbone.name(),
        report.best_epoch,
        report.best_val_accuracy,
        report.best_val_f1
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluationArtifact {
    confusion: ConfusionMatrix,
    multiclass: MetricsReport,
    binary: BinaryCollapseReport,
}

pub fn cmd_evaluate(config: &PipelineConfig, backbone: BackboneKind) -> Result<()> {
    let mc = load_model_config(&config.model_json(backbone))?;
    if mc.backbone != backbone {
        return Err(Error::data(format!(
            "checkpoint was trained with backbone {} but {} was requested",
            mc.backbone.name(),
            backbone.name()
        )));
    }
    let mut model = build_model(&mc)?;
    load_checkpoint(&mut model, &config.checkpoint(backbone))?;
    let data = prepare(config, backbone)?;

    let matrix = if config.stateful_eval {
        stateful_confusion(&model, &data)?
    } else {
        evaluate_windows(
            &model,
            &data.images,
            &data.val_windows,
            config.train.batch_size,
        )?
    };
    let multiclass = per_class_metrics(&matrix)?;
    let binary = binary_collapse(&matrix);
    fs::write(config.confusion_csv(backbone), matrix.to_csv())?;
    let artifact = EvaluationArtifact {
        confusion: matrix,
        multiclass,
        binary,
    };
    let json = serde_json::to_string_pretty(&artifact)?;
    fs::write(config.metrics_json(backbone), &json)?;
    println!("{json}");
    Ok(())
}

/// Streams each validation window's images through the model with carried
/// LSTM state, scoring one prediction per image.
fn stateful_confusion(model: &ModelGraph, data: &PreparedData) -> Result<ConfusionMatrix> {
    let mut matrix = ConfusionMatrix::new();
    for window in &data.val_windows {
        let images: Vec<_> = window
            .image_indices
            .iter()
            .map(|&i| data.images[i].clone())
            .collect();
        for (i, pred) in model.predict_stream(&images, true)?.iter().enumerate() {
            matrix.add(images[i].label, *pred);
        }
    }
    Ok(matrix)
}

pub fn cmd_report(config: &PipelineConfig) -> Result<()> {
    let mut reports = Vec::new();
    for &backbone in &config.backbones {
        let path = config.train_report(backbone);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::data(format!(
                "missing train report {} (run `train` first): {e}",
                path.display()
            ))
        })?;
        let report: TrainReport = serde_json::from_str(&text)?;
        reports.push(report);
    }
    let rows = compare_models(&reports)?;
    let csv = comparison_csv(&rows);
    fs::write(config.comparison_csv(), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_pipeline(config: &PipelineConfig, force: bool) -> Result<()> {
    cmd_ingest(config)?;
    cmd_featurize(config, force)?;
    for &backbone in &config.backbones {
        cmd_train(config, backbone)?;
        cmd_evaluate(config, backbone)?;
    }
    cmd_report(config)
}
