//! One function per subcommand. Each reads the effective configuration and
//! writes its artifacts through an [`ArtifactDir`].

use diffaudit::data::cifar::ingest_cifar10;
use diffaudit::data::raw::{export_raw, ingest_raw};
use diffaudit::data::toy::{blobs, planted, ToyConfig};
use diffaudit::data::Dataset;
use diffaudit::defenses::{
    canary_audit, dedup_defense_experiment, generate_canaries, write_dedup, write_exposure_table,
};
use diffaudit::diffusion::checkpoint::{encode, load, CheckpointHeader};
use diffaudit::diffusion::sample::{sample_with, GenerationRequest};
use diffaudit::diffusion::train::{train, TrainingConfig};
use diffaudit::diffusion::{DenoiserModel, NoiseSchedule};
use diffaudit::extraction::{
    calibrate_score_cutoff, generate_batch, precision_recall, untargeted_extraction_scan,
    write_precision_recall, write_records, PrPoint, ScanConfig,
};
use diffaudit::inpainting::{evaluate_attack, write_target_rows};
use diffaudit::membership::{
    auc, leave_one_out_from_losses, loglog_bins, loss_matrix, select_tau, timestep_sweep,
    tpr_at_fpr, train_shadow_models, training_progress_attack, write_roc, write_scores,
    AttackScoreSet, ShadowConfig, ShadowEnsemble, TauMetric,
};
use diffaudit::metrics::format_sig;
use diffaudit::seed;
use diffaudit::stats::spearman;
use diffaudit::{Error, Result};
use rand::seq::SliceRandom;
use serde_json::json;

use crate::config::{DataSource, ExperimentConfig};
use crate::manifest::{ArtifactDir, REPORT_FORMAT_VERSION};

/// The dataset a configuration describes, plus planted duplicate groups.
pub struct LoadedData {
    pub dataset: Dataset,
    pub groups: Vec<Vec<usize>>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let (dataset, groups) = match &cfg.data {
        DataSource::Toy {
            toy,
            planted: counts,
            plant_kind,
        } if !counts.is_empty() => {
            let p = planted(toy, counts, *plant_kind);
            (p.dataset, p.groups)
        }
        DataSource::Toy { toy, .. } => (blobs(toy), vec![]),
        DataSource::Cifar10 { paths } => (ingest_cifar10(paths)?, vec![]),
        DataSource::Raw { tensor, manifest } => (ingest_raw(tensor, manifest)?.dataset, vec![]),
    };
    if dataset.is_empty() {
        return Err(Error::Config("the configured dataset is empty".into()));
    }
    let dataset = if cfg.model.conditional {
        dataset
    } else {
        dataset.unlabelled()
    };
    Ok(LoadedData { dataset, groups })
}

fn schedule(cfg: &ExperimentConfig) -> Result<NoiseSchedule> {
    cfg.schedule.build()
}

fn arch(cfg: &ExperimentConfig, data: &Dataset) -> Result<diffaudit::diffusion::Arch> {
    cfg.model.arch(data.shape(), data.num_classes())
}

/// The configured checkpoint, or a model trained on `data` under `cfg.train`.
fn model(cfg: &ExperimentConfig, data: &Dataset, s: &NoiseSchedule) -> Result<DenoiserModel> {
    match &cfg.checkpoint {
        Some(path) => {
            let (header, m) = load(path)?;
            if header.schedule != cfg.schedule {
                return Err(Error::Config(
                    "checkpoint schedule differs from the configured schedule".into(),
                ));
            }
            if m.arch().input != data.shape() {
                return Err(Error::shape(data.shape(), m.arch().input));
            }
            Ok(m)
        }
        None => Ok(train(data, &cfg.train, s, &arch(cfg, data)?)?.model),
    }
}

pub fn run_train(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let data = load_data(cfg)?.dataset;
    let s = schedule(cfg)?;
    let outcome = train(&data, &cfg.train, &s, &arch(cfg, &data)?)?;
    let header = CheckpointHeader::for_model(&outcome.model, cfg.schedule, Some(&cfg.train));
    out.bytes("model.ckpt", &encode(&header, &outcome.model)?)?;
    for (i, c) in outcome.checkpoints.iter().enumerate() {
        let h = CheckpointHeader::for_model(c, cfg.schedule, Some(&cfg.train));
        out.bytes(&format!("checkpoint-{i:03}.ckpt"), &encode(&h, c)?)?;
    }
    out.with_writer("train_losses.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["step", "loss"])?;
        for (i, l) in outcome.losses.iter().enumerate() {
            w.write_record([i.to_string(), format_sig(*l)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let tail = &outcome.losses[outcome.losses.len().saturating_sub(100)..];
    out.json(
        "train_report.json",
        &json!({
            "format_version": REPORT_FORMAT_VERSION,
            "steps": cfg.train.steps,
            "examples": data.len(),
            "param_count": outcome.model.theta().len(),
            "final_loss": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            "max_aggregated_norm": outcome.max_aggregated_norm,
        }),
    )
}

pub fn run_generate(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let data = load_data(cfg)?.dataset;
    let s = schedule(cfg)?;
    let m = model(cfg, &data, &s)?;
    let g = &cfg.generate;
    let req = GenerationRequest {
        seed: g.seed,
        label: g.label,
        count: g.count,
    };
    let images = sample_with(&m, &s, &req, &g.sampler)?;
    let ds = Dataset::from_images(data.shape(), images, &format!("generated(seed={})", g.seed))?;
    export_raw(
        &ds,
        &out.path("generations.f32"),
        &out.path("generations.json"),
    )?;
    out.register("generations.f32")?;
    out.register("generations.json")
}

/// Scan cutoff: configured, or calibrated on fresh images of the toy family.
fn score_cutoff(
    cfg: &ExperimentConfig,
    base: &ScanConfig,
    data: &Dataset,
) -> Result<(ScanConfig, Option<Vec<f64>>)> {
    let mut scan = base.clone();
    let Some(cal) = &cfg.extract.calibration else {
        return Ok((scan, None));
    };
    let DataSource::Toy { toy, .. } = &cfg.data else {
        return Err(Error::Config(
            "cutoff calibration needs a toy data source".into(),
        ));
    };
    let fresh = blobs(&ToyConfig {
        n: cal.reference,
        seed: seed::derive_named(cfg.extract.seed, "reference", 0),
        ..toy.clone()
    });
    let batch = diffaudit::extraction::GenerationBatch::new(
        fresh.images().to_vec(),
        (0..fresh.len() as u64).collect(),
        None,
        "reference",
    )?;
    let scores: Vec<f64> = untargeted_extraction_scan(&[batch], data, &scan)?
        .records
        .iter()
        .filter_map(|r| r.score)
        .collect();
    scan.score_cutoff = calibrate_score_cutoff(&scores, cal.quantile)?;
    Ok((scan, Some(scores)))
}

/// Ranked precision curve: generations by ascending score, positive when
/// within `delta` of their match.
pub fn pr_curve(mut scored: Vec<(f64, f64)>, delta: f64) -> Result<Vec<PrPoint>> {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scores: Vec<f64> = scored.iter().map(|x| x.0).collect();
    let labels: Vec<bool> = scored.iter().map(|x| x.1 <= delta).collect();
    if !labels.contains(&true) {
        log::warn!(
            "no generation lies within {delta} of a training image; precision curve is empty"
        );
        return Ok(vec![]);
    }
    precision_recall(&scores, &labels)
}

pub fn run_extract(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let loaded = load_data(cfg)?;
    let data = &loaded.dataset;
    let s = schedule(cfg)?;
    let m = model(cfg, data, &s)?;
    let (scan, reference) = score_cutoff(cfg, &cfg.extract.scan, data)?;
    let req = GenerationRequest {
        seed: cfg.extract.seed,
        label: None,
        count: cfg.extract.generations,
    };
    let batch = generate_batch(&m, &s, &req, &cfg.extract.sampler, "model")?;
    let outcome = untargeted_extraction_scan(&[batch], data, &scan)?;
    out.with_writer("extraction_records.csv", |b| {
        write_records(b, &outcome.records)
    })?;
    out.with_writer("extracted.csv", |b| write_records(b, &outcome.extracted))?;
    let scored = outcome
        .records
        .iter()
        .filter_map(|r| r.score.map(|sc| (sc, r.distance)))
        .collect();
    let curve = pr_curve(scored, scan.delta)?;
    out.with_writer("precision_recall.csv", |b| {
        write_precision_recall(b, &curve)
    })?;
    let planted_hit: Vec<bool> = loaded
        .groups
        .iter()
        .map(|g| {
            outcome
                .extracted
                .iter()
                .any(|r| r.matched.is_some_and(|m| g.contains(&m)))
        })
        .collect();
    out.json(
        "extract_report.json",
        &json!({
            "format_version": REPORT_FORMAT_VERSION,
            "generations": cfg.extract.generations,
            "score_cutoff": scan.score_cutoff,
            "calibrated": reference.is_some(),
            "reference_min_score": reference.as_ref().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)),
            "extracted_count": outcome.extracted.len(),
            "extracted_ids": outcome.extracted.iter().filter_map(|r| r.matched).collect::<Vec<_>>(),
            "planted_groups": loaded.groups,
            "planted_extracted": planted_hit,
        }),
    )
}

fn shadow_ensemble(
    cfg: &ExperimentConfig,
    data: &Dataset,
    s: &NoiseSchedule,
    keep: bool,
) -> Result<ShadowEnsemble> {
    let mut tc: TrainingConfig = cfg.train.clone();
    let mut sc: ShadowConfig = cfg.mia.shadows.clone();
    if keep {
        tc.checkpoint_every = (tc.steps / cfg.mia.progress_checkpoints.max(1)).max(1);
        sc.keep_checkpoints = true;
    }
    train_shadow_models(data, &sc, &tc, s, &arch(cfg, data)?)
}

fn examples(data: &Dataset) -> Vec<usize> {
    data.ids().collect()
}

fn pooled(
    losses: &[Vec<f64>],
    masks: &[Vec<bool>],
    ids: &[usize],
    cfg: &ExperimentConfig,
) -> AttackScoreSet {
    let mut set = AttackScoreSet {
        attack: "loss-threshold".into(),
        t: cfg.mia.loss.t,
        n_noise: cfg.mia.loss.n_noise,
        use_flip: cfg.mia.loss.use_flip,
        targets: vec![],
        scores: vec![],
        labels: vec![],
    };
    for (i, (l, m)) in losses.iter().zip(masks).enumerate() {
        set.targets.extend(ids.iter().map(|&j| (i, j)));
        set.scores.extend(l.iter().map(|x| -x));
        set.labels.extend(m.iter().copied());
    }
    set
}

pub fn run_mia(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let data = load_data(cfg)?.dataset;
    let s = schedule(cfg)?;
    let ens = shadow_ensemble(cfg, &data, &s, false)?;
    let ids = examples(&data);
    let masks: Vec<Vec<bool>> = ens.masks.clone();
    let losses = loss_matrix(&ens.models, &s, &data, &ids, &cfg.mia.loss)?;
    let lira = leave_one_out_from_losses(&losses, &masks, &ids, &cfg.mia.loss, cfg.mia.variance)?;
    let loss_set = pooled(&losses, &masks, &ids, cfg);
    let (lroc, troc) = (lira.roc()?, loss_set.roc()?);
    let losses_flat: Vec<f64> = loss_set.scores.iter().map(|x| -x).collect();
    let tau = select_tau(&losses_flat, &loss_set.labels, TauMetric::Accuracy)?;
    out.with_writer("mia_scores.csv", |b| write_scores(b, &lira))?;
    out.with_writer("loss_scores.csv", |b| write_scores(b, &loss_set))?;
    out.with_writer("mia_roc.csv", |b| write_roc(b, &lroc))?;
    out.with_writer("loss_roc.csv", |b| write_roc(b, &troc))?;
    let (lb, tb) = (
        loglog_bins(&lroc, cfg.mia.loglog_bins),
        loglog_bins(&troc, cfg.mia.loglog_bins),
    );
    out.with_writer("mia_loglog.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["fpr", "lira_tpr", "loss_tpr"])?;
        for ((f, a), (_, b)) in lb.iter().zip(&tb) {
            w.write_record([format_sig(*f), format_sig(*a), format_sig(*b)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.json(
        "mia_report.json",
        &json!({
            "format_version": REPORT_FORMAT_VERSION,
            "fpr": cfg.mia.fpr,
            "t": cfg.mia.loss.t,
            "n_noise": cfg.mia.loss.n_noise,
            "use_flip": cfg.mia.loss.use_flip,
            "shadows": ens.len(),
            "lira": { "tpr_at_fpr": tpr_at_fpr(&lroc, cfg.mia.fpr), "auc": auc(&lroc) },
            "loss_threshold": { "tpr_at_fpr": tpr_at_fpr(&troc, cfg.mia.fpr), "auc": auc(&troc), "tau": tau },
        }),
    )
}

pub fn run_sweep_t(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let data = load_data(cfg)?.dataset;
    let s = schedule(cfg)?;
    let ens = shadow_ensemble(cfg, &data, &s, false)?;
    let points = timestep_sweep(
        &ens,
        &s,
        &data,
        &examples(&data),
        &cfg.mia.t_list,
        &cfg.mia.loss,
        cfg.mia.fpr,
        cfg.mia.variance,
    )?;
    out.with_writer("sweep_t.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["t", "tpr"])?;
        for (t, tpr) in &points {
            w.write_record([t.to_string(), format_sig(*tpr)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let best = points
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|p| p.0);
    out.json("sweep_report.json", &json!({ "format_version": REPORT_FORMAT_VERSION, "fpr": cfg.mia.fpr, "best_t": best, "points": points }))
}

pub fn run_progress(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let data = load_data(cfg)?.dataset;
    let s = schedule(cfg)?;
    let ens = shadow_ensemble(cfg, &data, &s, true)?;
    let rep = training_progress_attack(
        &ens,
        &s,
        &data,
        &examples(&data),
        &cfg.mia.loss,
        cfg.mia.fpr,
        cfg.mia.variance,
    )?;
    out.with_writer("progress.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["step", "tpr", "threshold"])?;
        for p in &rep.points {
            w.write_record([
                p.step.to_string(),
                format_sig(p.tpr),
                format_sig(p.threshold),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.with_writer("first_success.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["model", "example", "step"])?;
        for f in &rep.first_success {
            w.write_record([
                f.model.to_string(),
                f.example.to_string(),
                f.step.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let steps: Vec<f64> = rep.points.iter().map(|p| p.step as f64).collect();
    let tprs: Vec<f64> = rep.points.iter().map(|p| p.tpr).collect();
    out.json(
        "progress_report.json",
        &json!({
            "format_version": REPORT_FORMAT_VERSION,
            "fpr": cfg.mia.fpr,
            "points": rep.points,
            "spearman": spearman(&steps, &tprs).ok(),
        }),
    )
}

pub fn run_inpaint(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let data = load_data(cfg)?.dataset;
    let s = schedule(cfg)?;
    let ens = shadow_ensemble(cfg, &data, &s, false)?;
    let mut ids = examples(&data);
    ids.shuffle(&mut seed::rng_for(cfg.inpaint.attack.seed, &[0x7a6]));
    ids.truncate(cfg.inpaint.targets);
    let report = evaluate_attack(&ens, &s, &data, &ids, &cfg.inpaint.attack)?;
    out.with_writer("inpaint_targets.csv", |b| write_target_rows(b, &report))?;
    out.json(
        "inpaint_report.json",
        &json!({
            "format_version": REPORT_FORMAT_VERSION,
            "targets": report.targets.len(),
            "in_mean": report.in_mean,
            "out_mean": report.out_mean,
            "in_wins": report.in_wins,
            "sign_test_p": report.sign_test_p,
        }),
    )
}

pub fn run_dedup(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let data = load_data(cfg)?.dataset;
    let s = schedule(cfg)?;
    let mut run = cfg.dedup.run.clone();
    run.scan = score_cutoff(cfg, &run.scan, &data)?.0;
    let r = dedup_defense_experiment(
        &data,
        cfg.dedup.threshold,
        &cfg.train,
        &arch(cfg, &data)?,
        &s,
        &run,
    )?;
    out.with_writer("dedup.csv", |b| write_dedup(b, &r.dedup, data.len()))?;
    let removed: String = r
        .dedup
        .removed
        .iter()
        .map(|x| format!("{}\n", x.id))
        .collect();
    out.bytes("removed_ids.txt", removed.as_bytes())?;
    export_raw(
        &r.dedup.apply(&data),
        &out.path("deduplicated.f32"),
        &out.path("deduplicated.json"),
    )?;
    out.register("deduplicated.f32")?;
    out.register("deduplicated.json")?;
    let (before, after) = r.counts();
    out.json(
        "dedup_report.json",
        &json!({
            "format_version": REPORT_FORMAT_VERSION,
            "threshold": cfg.dedup.threshold,
            "score_cutoff": run.scan.score_cutoff,
            "removed": r.dedup.removed.len(),
            "kept": r.dedup.kept.len(),
            "extracted_before": before,
            "extracted_after": after,
        }),
    )
}

pub fn run_canary(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let data = load_data(cfg)?.dataset;
    let s = schedule(cfg)?;
    let pool = generate_canaries(cfg.canary.pool, data.shape(), cfg.canary.audit.seed)?;
    let audit = canary_audit(
        &data,
        pool,
        &cfg.canary.audit,
        &cfg.train,
        &arch(cfg, &data)?,
        &s,
    )?;
    out.with_writer("exposure_table.csv", |b| {
        write_exposure_table(b, &audit.table)
    })?;
    let losses = audit.pool.losses.clone().unwrap_or_default();
    out.with_writer("canary_exposures.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["canary", "copies", "loss", "exposure"])?;
        for (i, e) in audit.exposures.iter().enumerate() {
            w.write_record([
                i.to_string(),
                audit.pool.copies(i).to_string(),
                format_sig(losses[i]),
                format_sig(*e),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.json(
        "canary_report.json",
        &json!({
            "format_version": REPORT_FORMAT_VERSION,
            "pool": audit.pool.size(),
            "max_exposure": (audit.pool.size() as f64).log2(),
            "table": audit.table,
            "reference_exposures": audit.reference_exposures,
            "ks_statistic": audit.ks_statistic,
            "ks_p": audit.ks_p,
        }),
    )
}

const REPORT_SOURCES: [&str; 8] = [
    "train_report.json",
    "extract_report.json",
    "mia_report.json",
    "sweep_report.json",
    "progress_report.json",
    "inpaint_report.json",
    "dedup_report.json",
    "canary_report.json",
];

/// Rebuilds the precision curve from extraction records found in the output
/// directory and merges every stage report into `report.json`.
pub fn run_report(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let mut found = serde_json::Map::new();
    for name in REPORT_SOURCES {
        let p = out.path(name);
        if p.is_file() {
            let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p)?)?;
            found.insert(name.trim_end_matches(".json").to_string(), v);
        }
    }
    let records = out.path("extraction_records.csv");
    if records.is_file() {
        let mut r = csv::Reader::from_path(&records)?;
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Format {
                    offset: 0,
                    message: format!("records lack a `{name}` column"),
                })
        };
        let (sc, dc) = (col("score")?, col("distance")?);
        let mut scored = Vec::new();
        for row in r.records() {
            let row = row?;
            let parse = |i: usize| row[i].parse::<f64>().ok();
            if let (Some(sv), Some(dv)) = (parse(sc), parse(dc)) {
                scored.push((sv, dv));
            }
        }
        let curve = pr_curve(scored, cfg.extract.scan.delta)?;
        out.with_writer("precision_recall.csv", |b| {
            write_precision_recall(b, &curve)
        })?;
    } else if found.is_empty() {
        return Err(Error::State(format!(
            "no stage results found in {}",
            out.dir().display()
        )));
    }
    out.json(
        "report.json",
        &json!({ "format_version": REPORT_FORMAT_VERSION, "reports": found }),
    )
}
