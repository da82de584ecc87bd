//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain binary
//! (`harness = false`) so the lines always reach the test output; exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use diffaudit::data::cifar::{encode_records, ingest_cifar10};
use diffaudit::data::raw::{export_raw, ingest_raw};
use diffaudit::data::toy::{blobs, planted, PlantKind, PlantedToy, ToyConfig};
use diffaudit::data::Dataset;
use diffaudit::defenses::{
    canary_audit, dedup_defense_experiment, generate_canaries, CanaryAuditConfig,
    ExtractionRunConfig,
};
use diffaudit::diffusion::gradcheck::check_random_instance;
use diffaudit::diffusion::sample::{GenerationRequest, SamplerOptions};
use diffaudit::diffusion::train::{train, TrainingConfig};
use diffaudit::diffusion::{
    add_noise, Arch, Conditioning, DenoiserModel, NoiseSchedule, ScheduleParams,
};
use diffaudit::extraction::{
    calibrate_score_cutoff, extraction_frequency, flag_in_graph, generate_batch,
    untargeted_extraction_scan, GenerationBatch, ScanConfig, ScanOutcome, SimilarityGraph,
};
use diffaudit::image::Shape;
use diffaudit::inpainting::{evaluate_attack, InpaintAttackConfig};
use diffaudit::membership::{
    auc, leave_one_out_from_losses, lira_score, loss_matrix, roc_curve, timestep_sweep, tpr_at_fpr,
    train_shadow_models, training_progress_attack, LiraStats, LossConfig, ShadowConfig,
    ShadowEnsemble, VarianceMode,
};
use diffaudit::seed::{derive_named, rng_for};
use diffaudit::stats::spearman;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 3] = [0, 1, 2];
const FPR: f64 = 0.1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn schedule() -> NoiseSchedule {
    ScheduleParams::DESK.build().unwrap()
}

fn mlp(input: Shape, width: usize) -> Arch {
    Arch {
        input,
        hidden: vec![width; 3],
        time_dim: 32,
        conditioning: Conditioning::Unconditional,
        data_std: Some(0.5),
    }
}

// ---------------------------------------------------------------- 1

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        for b in check_random_instance(seed, 8).unwrap() {
            worst = worst.max(b.rel_error);
        }
    }
    outcome(
        worst <= 1e-4,
        format!("worst relative error {worst:.2e} over 100 instances"),
    )
}

// ---------------------------------------------------------------- 2

/// Cumulative signal coefficient recomputed from the linear beta ramp.
fn oracle_a(p: ScheduleParams, t: usize) -> f64 {
    (1..=t)
        .map(|i| {
            let beta =
                p.beta_min + (p.beta_max - p.beta_min) * (i - 1) as f64 / (p.steps - 1) as f64;
            1.0 - beta
        })
        .product()
}

fn forward_moments() -> Outcome {
    let s = schedule();
    let data = blobs(&ToyConfig {
        n: 256,
        seed: 11,
        ..Default::default()
    });
    let clean: Vec<Vec<f32>> = data.images().iter().map(|x| x.to_model_space()).collect();
    let pooled: Vec<f64> = clean.iter().flatten().map(|&v| v as f64).collect();
    let var_x = variance(&pooled);
    let mut rng = rng_for(5, &[2]);
    let mut worst = 0.0f64;
    for t in [1, 10, 25, 50, 90] {
        let mut values = Vec::new();
        for _ in 0..10_000 {
            let x = &clean[rng.random_range(0..clean.len())];
            let eps: Vec<f32> = (0..x.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            values.extend(
                add_noise(x, t, &eps, &s)
                    .unwrap()
                    .into_iter()
                    .map(f64::from),
            );
        }
        let a = oracle_a(ScheduleParams::DESK, t);
        let expected = a * var_x + (1.0 - a);
        worst = worst.max((variance(&values) - expected).abs() / expected);
    }
    outcome(
        worst <= 0.05,
        format!("worst relative variance error {worst:.4}"),
    )
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

// ---------------------------------------------------------------- 3

/// Largest clique by enumerating every vertex subset.
fn brute_force_clique(adj: &[u32]) -> usize {
    let n = adj.len();
    let mut is_clique = vec![false; 1 << n];
    is_clique[0] = true;
    let mut best = 0;
    for mask in 1u32..(1 << n) {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        let ok = is_clique[rest as usize] && adj[low] & rest == rest;
        is_clique[mask as usize] = ok;
        if ok {
            best = best.max(mask.count_ones() as usize);
        }
    }
    best
}

fn clique_oracle() -> Outcome {
    let mut rng = rng_for(3, &[3]);
    let mut agree = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=20);
        let density: f64 = rng.random_range(0.05..0.95);
        let mut adj = vec![0u32; n];
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(density) {
                    adj[i] |= 1 << j;
                    adj[j] |= 1 << i;
                    edges.push((i, j, rng.random_range(0.0..1.0)));
                }
            }
        }
        let g = SimilarityGraph {
            nodes: n,
            edges,
            threshold: 1.0,
            grid: (1, 1),
        };
        let truth = brute_force_clique(&adj);
        let found = flag_in_graph(&g, 2).unwrap();
        let ok = match found {
            None => truth < 2,
            Some(c) => {
                let members: u32 = c.members.iter().map(|&m| 1u32 << m).sum();
                let is_clique = c
                    .members
                    .iter()
                    .all(|&m| adj[m] & members == members & !(1 << m));
                is_clique && c.members.len() == truth
            }
        };
        agree += ok as usize;
    }
    outcome(
        agree == 200,
        format!("{agree}/200 graphs match exhaustive enumeration"),
    )
}

// ---------------------------------------------------------------- 4

/// Double-double arithmetic for the oracle: values are `hi + lo`.
#[derive(Clone, Copy)]
struct Dd(f64, f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd(p, a.mul_add(b, -p))
}

impl Dd {
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.0, o.0);
        let lo = s.1 + self.1 + o.1;
        two_sum(s.0, lo)
    }
    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }
    fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.0, o.0);
        let lo = p.1 + self.0 * o.1 + self.1 * o.0;
        two_sum(p.0, lo)
    }
    fn div(self, d: f64) -> Dd {
        let q = self.0 / d;
        let r = self.add(two_prod(q, d).neg());
        two_sum(q, r.0 / d)
    }
}

/// `log N(l; mu_in, s_in) - log N(l; mu_out, s_out)` with the quadratic
/// terms carried in double-double.
fn oracle_log_ratio(l: f64, mu_in: f64, s_in: f64, mu_out: f64, s_out: f64) -> f64 {
    let z_in = two_sum(l, -mu_in).div(s_in);
    let z_out = two_sum(l, -mu_out).div(s_out);
    let quad = z_out.mul(z_out).add(z_in.mul(z_in).neg());
    let half = Dd(quad.0 * 0.5, quad.1 * 0.5);
    let logs = two_sum(s_out.ln(), -s_in.ln());
    let r = half.add(logs);
    r.0 + r.1
}

fn lira_closed_form() -> Outcome {
    let mut rng = rng_for(4, &[4]);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mut sigma = || 10f64.powf(rng.random_range(-3.0..0.5));
        let (s_in, s_out) = (sigma(), sigma());
        let (mu_in, mu_out) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let l = rng.random_range(0.0..2.0);
        let stats = LiraStats {
            in_losses: vec![],
            out_losses: vec![],
            mu_in,
            sigma_in: s_in,
            mu_out,
            sigma_out: s_out,
        };
        let got = lira_score(l, &stats).unwrap();
        let want = oracle_log_ratio(l, mu_in, s_in, mu_out, s_out);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    let mut invariant = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..300);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        // coarse rounding forces ties
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(-3.0f64..3.0) * 8.0).round() / 8.0)
            .collect();
        let base = roc_curve(&scores, &labels).unwrap();
        let transforms: [fn(f64) -> f64; 4] =
            [f64::exp, |x| x * x * x + x, |x| 2.0 * x - 5.0, f64::atan];
        let same = transforms.iter().all(|f| {
            let moved: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            let r = roc_curve(&moved, &labels).unwrap();
            r.fpr == base.fpr && r.tpr == base.tpr && auc(&r) == auc(&base)
        });
        invariant += same as usize;
    }
    outcome(
        worst <= 1e-10 && invariant == 100,
        format!("worst relative error {worst:.2e} over 10^4 tuples; ROC invariant on {invariant}/100 score sets"),
    )
}

// ---------------------------------------------------------------- 5, 6, 11

const EXTRACT_STEPS: u64 = 8000;
const EXTRACT_WIDTH: usize = 512;

fn planted_toy(seed: u64, counts: &[usize]) -> PlantedToy {
    let cfg = ToyConfig {
        seed: derive_named(seed, "data", 0),
        ..Default::default()
    };
    let mut p = planted(&cfg, counts, PlantKind::Noise);
    p.dataset = p.dataset.unlabelled();
    p
}

/// Lower quantile of fresh-image scores used as the extraction cutoff. The
/// minimum alone swings with single near-duplicate draws from the generator.
const CUTOFF_QUANTILE: f64 = 0.001;

/// Relative-distance cutoff that only 0.1% of fresh images from the data
/// distribution fall under.
fn calibrated_scan(train: &Dataset, seed: u64) -> ScanConfig {
    let fresh = blobs(&ToyConfig {
        n: 4096,
        seed: derive_named(seed, "reference", 0),
        ..Default::default()
    });
    let batch = GenerationBatch::new(
        fresh.images().to_vec(),
        (0..4096).collect(),
        None,
        "reference",
    )
    .unwrap();
    let mut scan = ScanConfig::default();
    let scores: Vec<f64> = untargeted_extraction_scan(&[batch], train, &scan)
        .unwrap()
        .records
        .iter()
        .filter_map(|r| r.score)
        .collect();
    scan.score_cutoff = calibrate_score_cutoff(&scores, CUTOFF_QUANTILE).unwrap();
    scan
}

fn extraction_train_cfg(seed: u64) -> TrainingConfig {
    TrainingConfig {
        steps: EXTRACT_STEPS,
        seed: derive_named(seed, "train", 0),
        ..Default::default()
    }
}

fn scan_model(
    m: &DenoiserModel,
    train: &Dataset,
    count: usize,
    seed: u64,
    scan: &ScanConfig,
) -> ScanOutcome {
    let req = GenerationRequest {
        seed: derive_named(seed, "generate", 0),
        label: None,
        count,
    };
    let batch = generate_batch(m, &schedule(), &req, &SamplerOptions::default(), "model").unwrap();
    untargeted_extraction_scan(&[batch], train, scan).unwrap()
}

fn extraction_replication() -> Outcome {
    let seed = 0;
    let toy = planted_toy(seed, &[32]);
    let data = &toy.dataset;
    let s = schedule();
    let arch = mlp(data.shape(), EXTRACT_WIDTH);
    let scan = calibrated_scan(data, seed);
    let trained = train(data, &extraction_train_cfg(seed), &s, &arch)
        .unwrap()
        .model;
    let hit = scan_model(&trained, data, 1 << 14, seed, &scan);
    let recovered = hit
        .extracted
        .iter()
        .any(|r| r.matched.is_some_and(|m| toy.groups[0].contains(&m)));
    let untrained = DenoiserModel::init(&arch, &s, derive_named(seed, "untrained", 0)).unwrap();
    let miss = scan_model(&untrained, data, 1 << 14, seed, &scan);
    outcome(
        recovered && miss.extracted.is_empty(),
        format!(
            "cutoff {:.3}; trained: {} extracted, duplicate recovered = {recovered}; untrained: {} extracted",
            scan.score_cutoff,
            hit.extracted.len(),
            miss.extracted.len()
        ),
    )
}

fn duplication_gradient() -> Outcome {
    let counts = [1usize, 4, 16, 64];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let toy = planted_toy(seed, &counts);
        let data = &toy.dataset;
        let scan = calibrated_scan(data, seed);
        let m = train(
            data,
            &extraction_train_cfg(seed),
            &schedule(),
            &mlp(data.shape(), EXTRACT_WIDTH),
        )
        .unwrap()
        .model;
        let out = scan_model(&m, data, 4096, seed, &scan);
        let freq = extraction_frequency(&out.records, data.len());
        let row: Vec<usize> = toy
            .groups
            .iter()
            .map(|g| g.iter().map(|&i| freq[i]).sum())
            .collect();
        for (c, f) in counts.iter().zip(&row) {
            xs.push(*c as f64);
            ys.push(*f as f64);
        }
        per_seed.push(row);
    }
    let rho = spearman(&xs, &ys).unwrap();
    outcome(
        rho >= 0.8,
        format!("extractions per count {counts:?} by seed {per_seed:?}; pooled Spearman {rho:.3}"),
    )
}

fn dedup_defense() -> Outcome {
    let seed = 0;
    let toy = planted_toy(seed, &[32]);
    let data = &toy.dataset;
    let run = ExtractionRunConfig {
        seed: derive_named(seed, "generate", 0),
        scan: calibrated_scan(data, seed),
        ..Default::default()
    };
    let arch = mlp(data.shape(), EXTRACT_WIDTH);
    let r = dedup_defense_experiment(
        data,
        0.95,
        &extraction_train_cfg(seed),
        &arch,
        &schedule(),
        &run,
    )
    .unwrap();
    let group = &toy.groups[0];
    let kept_copies = r.dedup.kept.iter().filter(|k| group.contains(k)).count();
    let (before, after) = r.counts();
    outcome(
        kept_copies == 1 && after < before,
        format!(
            "threshold 0.95 removed {} images, {kept_copies} of {} planted copies kept; extractions {before} -> {after}",
            r.dedup.removed.len(),
            group.len()
        ),
    )
}

// ---------------------------------------------------------------- 7, 8, 9

struct MiaRun {
    data: Dataset,
    ensemble: ShadowEnsemble,
}

const MIA_STEPS: u64 = 8000;

fn mia_run(seed: u64) -> MiaRun {
    let data = blobs(&ToyConfig {
        seed: derive_named(seed, "data", 0),
        texture: 1.0,
        ..Default::default()
    })
    .unlabelled();
    let tc = TrainingConfig {
        steps: MIA_STEPS,
        seed: derive_named(seed, "train", 0),
        flip_augment: true,
        checkpoint_every: MIA_STEPS / 8,
        cosine_decay: true,
        ..Default::default()
    };
    let sc = ShadowConfig {
        count: 8,
        seed: derive_named(seed, "mia", 0),
        keep_checkpoints: true,
        ..Default::default()
    };
    let ensemble =
        train_shadow_models(&data, &sc, &tc, &schedule(), &mlp(data.shape(), 256)).unwrap();
    MiaRun { data, ensemble }
}

fn loss_cfg(seed: u64, n_noise: usize, use_flip: bool) -> LossConfig {
    LossConfig {
        t: 10,
        n_noise,
        use_flip,
        seed: derive_named(seed, "mia-loss", 0),
    }
}

/// Leave-one-out LiRA and loss-threshold TPR at `FPR`.
fn mia_tpr(run: &MiaRun, cfg: &LossConfig) -> (f64, f64) {
    let ids: Vec<usize> = run.data.ids().collect();
    let losses = loss_matrix(&run.ensemble.models, &schedule(), &run.data, &ids, cfg).unwrap();
    let lira = leave_one_out_from_losses(
        &losses,
        &run.ensemble.masks,
        &ids,
        cfg,
        VarianceMode::Global,
    )
    .unwrap();
    let scores: Vec<f64> = losses.iter().flatten().map(|l| -l).collect();
    let labels: Vec<bool> = run.ensemble.masks.iter().flatten().copied().collect();
    let threshold = roc_curve(&scores, &labels).unwrap();
    (
        tpr_at_fpr(&lira.roc().unwrap(), FPR),
        tpr_at_fpr(&threshold, FPR),
    )
}

fn mia_beats_chance(runs: &[MiaRun]) -> Outcome {
    let mut rows = Vec::new();
    let mut pass = true;
    for (run, seed) in runs.iter().zip(SEEDS) {
        let (one, _) = mia_tpr(run, &loss_cfg(seed, 1, false));
        let (avg, thr) = mia_tpr(run, &loss_cfg(seed, 20, true));
        pass &= avg >= 2.0 * FPR && avg >= one;
        rows.push(format!(
            "seed {seed}: n=20+flips {avg:.3}, n=1 {one:.3}, loss threshold {thr:.3}"
        ));
    }
    outcome(pass, format!("LiRA TPR@{FPR}: {}", rows.join("; ")))
}

fn goldilocks(runs: &[MiaRun]) -> Outcome {
    let t_list = [1, 10, 25, 50, 90];
    let mut interior = 0;
    let mut rows = Vec::new();
    for (run, seed) in runs.iter().zip(SEEDS) {
        let ids: Vec<usize> = run.data.ids().collect();
        let sweep = timestep_sweep(
            &run.ensemble,
            &schedule(),
            &run.data,
            &ids,
            &t_list,
            &loss_cfg(seed, 20, true),
            FPR,
            VarianceMode::Global,
        )
        .unwrap();
        let tpr: Vec<f64> = sweep.iter().map(|p| p.1).collect();
        let best = tpr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inner = tpr[1..4].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        interior += (inner == best && inner > tpr[0] && inner > tpr[4]) as usize;
        rows.push(format!(
            "seed {seed}: {:?}",
            tpr.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
        ));
    }
    outcome(
        interior >= 2,
        format!(
            "interior best in {interior}/3 seeds over t={t_list:?}; {}",
            rows.join("; ")
        ),
    )
}

fn progress(runs: &[MiaRun]) -> Outcome {
    let run = &runs[0];
    let ids: Vec<usize> = run.data.ids().collect();
    let rep = training_progress_attack(
        &run.ensemble,
        &schedule(),
        &run.data,
        &ids,
        &loss_cfg(SEEDS[0], 20, true),
        FPR,
        VarianceMode::Global,
    )
    .unwrap();
    let steps: Vec<f64> = rep.points.iter().map(|p| p.step as f64).collect();
    let tpr: Vec<f64> = rep.points.iter().map(|p| p.tpr).collect();
    let rho = spearman(&steps, &tpr).unwrap();
    let series: Vec<String> = rep
        .points
        .iter()
        .map(|p| format!("{}:{:.3}", p.step, p.tpr))
        .collect();
    outcome(
        rep.points.len() >= 5 && rho >= 0.8,
        format!(
            "Spearman {rho:.3} over {} checkpoints [{}]",
            rep.points.len(),
            series.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 10

fn inpainting() -> Outcome {
    let seed = 0;
    let data = blobs(&ToyConfig {
        n: 64,
        seed: derive_named(seed, "data", 0),
        texture: 1.0,
        ..Default::default()
    })
    .unlabelled();
    let tc = TrainingConfig {
        steps: 8000,
        seed: derive_named(seed, "train", 0),
        ..Default::default()
    };
    let sc = ShadowConfig {
        count: 4,
        seed: derive_named(seed, "mia", 0),
        ..Default::default()
    };
    let ens = train_shadow_models(&data, &sc, &tc, &schedule(), &mlp(data.shape(), 512)).unwrap();
    let mut targets: Vec<usize> = data.ids().collect();
    targets.shuffle(&mut rng_for(seed, &[10]));
    targets.truncate(20);
    let cfg = InpaintAttackConfig {
        seed: derive_named(seed, "inpaint", 0),
        ..Default::default()
    };
    let r = evaluate_attack(&ens, &schedule(), &data, &targets, &cfg).unwrap();
    outcome(
        r.in_mean < r.out_mean && r.sign_test_p < 0.05,
        format!(
            "{} targets, n={}, top-{}: masked l2 IN {:.4} vs OUT {:.4}, IN wins {}, sign test p {:.2e}",
            r.targets.len(),
            cfg.n,
            cfg.top_k,
            r.in_mean,
            r.out_mean,
            r.in_wins,
            r.sign_test_p
        ),
    )
}

// ---------------------------------------------------------------- 12

fn canary() -> Outcome {
    let seed = 0;
    let data = blobs(&ToyConfig {
        seed: derive_named(seed, "data", 0),
        ..Default::default()
    })
    .unlabelled();
    let pool = generate_canaries(256, data.shape(), derive_named(seed, "canary", 0)).unwrap();
    let mut cfg = CanaryAuditConfig {
        seed: derive_named(seed, "canary", 0),
        ..Default::default()
    };
    cfg.loss.seed = derive_named(seed, "canary-loss", 0);
    let tc = TrainingConfig {
        steps: 8000,
        seed: derive_named(seed, "train", 0),
        ..Default::default()
    };
    let audit = canary_audit(&data, pool, &cfg, &tc, &mlp(data.shape(), 256), &schedule()).unwrap();
    let sixteen = audit
        .table
        .iter()
        .find(|r| r.copies == 16)
        .map_or(f64::NAN, |r| r.max_exposure);
    let table: Vec<String> = audit
        .table
        .iter()
        .map(|r| format!("{}x:{:.2}", r.copies, r.max_exposure))
        .collect();
    outcome(
        audit.ks_p > 0.01 && sixteen >= 8.0 - 1.0,
        format!(
            "KS p {:.3}; max exposure by copies [{}] (ceiling 8)",
            audit.ks_p,
            table.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 13

fn cifar_fixture() -> (Vec<u8>, Vec<(u8, Vec<u8>)>) {
    let mut rng = rng_for(13, &[13]);
    let records: Vec<(u8, Vec<u8>)> = (0..5)
        .map(|_| {
            (
                rng.random_range(0..10),
                (0..3072).map(|_| rng.random()).collect(),
            )
        })
        .collect();
    let mut bytes = Vec::new();
    for (label, planes) in &records {
        bytes.push(*label);
        bytes.extend(planes);
    }
    (bytes, records)
}

fn hashes(path: &Path) -> std::collections::BTreeMap<String, String> {
    diffaudit_cli::read_manifest(path).unwrap().artifacts
}

fn plumbing() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (bytes, records) = cifar_fixture();
    let bin = dir.path().join("data_batch_1.bin");
    std::fs::write(&bin, &bytes).unwrap();
    let ds = ingest_cifar10(&[&bin]).unwrap();
    let pixels_ok = records.iter().enumerate().all(|(i, (label, planes))| {
        let img = ds.image(i);
        ds.label(i) == Some(*label as u32)
            && (0..32).all(|y| {
                (0..32).all(|x| {
                    (0..3).all(|c| img.get(y, x, c) == planes[c * 1024 + y * 32 + x] as f32 / 255.0)
                })
            })
    });
    let cifar_ok = pixels_ok && encode_records(&ds).unwrap() == bytes;

    let (tensor, manifest) = (dir.path().join("x.f32"), dir.path().join("x.json"));
    export_raw(&ds, &tensor, &manifest).unwrap();
    let back = ingest_raw(&tensor, &manifest).unwrap().dataset;
    let bits = |d: &Dataset| -> Vec<u32> {
        d.images()
            .iter()
            .flat_map(|x| x.pixels().iter().map(|p| p.to_bits()))
            .collect()
    };
    let raw_ok =
        bits(&back) == bits(&ds) && back.labels() == ds.labels() && back.shape() == ds.shape();

    let run = |args: &[&str]| {
        diffaudit_cli::main_with_args(std::iter::once("diffaudit").chain(args.iter().copied()))
    };
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let first = run(&[
        "train",
        "--out",
        &out("a"),
        "--seed",
        "7",
        "--set",
        "data.toy.n=64",
        "--set",
        "train.steps=200",
    ]);
    let manifest_path = out("a/manifest-train.json");
    let second = run(&["train", "--config", &manifest_path, "--out", &out("b")]);
    let third = run(&["train", "--config", &manifest_path, "--out", &out("c")]);
    let replay_ok = [first, second, third] == [0, 0, 0] && {
        let (a, b, c) = (
            hashes(Path::new(&manifest_path)),
            hashes(&dir.path().join("b/manifest-train.json")),
            hashes(&dir.path().join("c/manifest-train.json")),
        );
        !a.is_empty() && a == b && b == c
    };
    outcome(
        cifar_ok && raw_ok && replay_ok,
        format!("cifar round trip {cifar_ok}, raw bit-identical {raw_ok}, manifest replay hashes equal {replay_ok}"),
    )
}

// ----------------------------------------------------------------

/// `ACCEPTANCE_ONLY=5,6,11` runs a subset; the default is every criterion.
fn selected() -> Option<Vec<u32>> {
    let only = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(
        only.split(',')
            .filter_map(|x| x.trim().parse().ok())
            .collect(),
    )
}

fn main() {
    let only = selected();
    let (mut passed, mut failed) = (0, 0);
    let mut check = |id: u32, name: &str, budget_min: u64, f: &mut dyn FnMut() -> Outcome| {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget_min * 60);
        let pass = o.pass && in_time;
        if pass {
            passed += 1;
        } else {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1}s of {budget_min} min]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    };
    check(1, "gradient check", 1, &mut gradient_check);
    check(2, "forward-process moments", 1, &mut forward_moments);
    check(3, "clique oracle", 2, &mut clique_oracle);
    check(4, "LiRA closed form", 1, &mut lira_closed_form);
    check(5, "extraction replication", 10, &mut extraction_replication);
    check(6, "duplication gradient", 30, &mut duplication_gradient);
    // Shadow ensembles are shared by criteria 7-9; training counts toward
    // whichever of them runs first.
    let mut runs: Vec<MiaRun> = Vec::new();
    let ensure = |runs: &mut Vec<MiaRun>| {
        if runs.is_empty() {
            *runs = SEEDS.iter().map(|&s| mia_run(s)).collect();
        }
    };
    check(7, "MIA beats chance, averaging helps", 30, &mut || {
        ensure(&mut runs);
        mia_beats_chance(&runs)
    });
    check(8, "timestep Goldilocks", 20, &mut || {
        ensure(&mut runs);
        goldilocks(&runs)
    });
    check(9, "training-progress monotonicity", 20, &mut || {
        ensure(&mut runs);
        progress(&runs)
    });
    check(10, "inpainting separation", 30, &mut inpainting);
    check(11, "dedup defense", 20, &mut dedup_defense);
    check(12, "canary exposure", 20, &mut canary);
    check(13, "plumbing", 1, &mut plumbing);
    println!("{passed} of {} criteria passed", passed + failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
