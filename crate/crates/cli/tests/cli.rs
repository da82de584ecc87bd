//! End-to-end runs of the command line on tiny configurations.

use std::path::{Path, PathBuf};

use diffaudit_cli::config::ExperimentConfig;
use diffaudit_cli::{main_with_args, read_manifest};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("diffaudit").chain(args.iter().copied()))
}

const TINY: [&str; 8] = [
    "--set",
    "data.toy.n=16",
    "--set",
    "data.toy.side=4",
    "--set",
    "train.steps=30",
    "--set",
    "model.hidden=[16,16]",
];

fn tiny(sub: &str, out: &Path, extra: &[&str]) -> i32 {
    let out = out.to_str().unwrap();
    let mut args = vec![sub, "--out", out];
    args.extend(TINY);
    args.extend(extra);
    run(&args)
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn header(dir: &Path, name: &str) -> String {
    read(dir, name)
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

#[test]
fn argument_errors_exit_with_their_category() {
    assert_eq!(run(&["frobnicate"]), 6);
    assert_eq!(run(&[]), 6);
    assert_eq!(run(&["train", "--threads", "many"]), 6);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
}

#[test]
fn config_errors_exit_with_their_category() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        tiny("train", dir.path(), &["--set", "train.no_such_field=1"]),
        2
    );
    assert_eq!(
        tiny("train", dir.path(), &["--set", "schedule.beta_max=2.0"]),
        2
    );
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["train", "--config", missing.to_str().unwrap()]), 7);
}

#[test]
fn report_without_results_is_a_state_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["report", "--out", dir.path().to_str().unwrap()]), 4);
}

#[test]
fn manifest_hashes_match_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tiny("train", dir.path(), &["--seed", "3"]), 0);
    let m = read_manifest(&dir.path().join("manifest-train.json")).unwrap();
    assert_eq!(m.subcommand, "train");
    assert_eq!(m.master_seed, 3);
    assert!(m.stage_seeds.contains_key("train"));
    assert_eq!(m.config.train.seed, m.stage_seeds["train"]);
    for name in ["model.ckpt", "train_losses.csv", "train_report.json"] {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(m.artifacts[name], hex_digest(&bytes), "{name}");
    }
    assert_eq!(header(dir.path(), "train_losses.csv"), "step,loss");
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn replay_requires_matching_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tiny("train", dir.path(), &[]), 0);
    let m = dir.path().join("manifest-train.json");
    let other = dir.path().join("other");
    assert_eq!(
        run(&[
            "generate",
            "--config",
            m.to_str().unwrap(),
            "--out",
            other.to_str().unwrap()
        ]),
        2
    );
}

#[test]
fn seeds_change_results_and_thread_count_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let out = |n: &str| -> PathBuf { dir.path().join(n) };
    assert_eq!(
        tiny("train", &out("a"), &["--seed", "1", "--deterministic"]),
        0
    );
    assert_eq!(
        tiny("train", &out("b"), &["--seed", "1", "--threads", "2"]),
        0
    );
    assert_eq!(tiny("train", &out("c"), &["--seed", "2"]), 0);
    let h = |d: &str| {
        read_manifest(&out(d).join("manifest-train.json"))
            .unwrap()
            .artifacts
    };
    assert_eq!(h("a"), h("b"));
    assert_ne!(h("a")["model.ckpt"], h("c")["model.ckpt"]);
}

#[test]
fn checkpoint_feeds_generation() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tiny("train", dir.path(), &[]), 0);
    let ckpt = dir.path().join("model.ckpt");
    let gen = dir.path().join("gen");
    let set = format!("checkpoint=\"{}\"", ckpt.display());
    assert_eq!(
        tiny(
            "generate",
            &gen,
            &["--set", &set, "--set", "generate.count=5"]
        ),
        0
    );
    let m: serde_json::Value = serde_json::from_str(&read(&gen, "generations.json")).unwrap();
    assert_eq!(m["n"], 5);
    assert_eq!(
        std::fs::metadata(gen.join("generations.f32"))
            .unwrap()
            .len(),
        5 * 16 * 4
    );
    // a checkpoint trained on another image shape is rejected
    let wrong = dir.path().join("wrong");
    assert_eq!(
        tiny(
            "generate",
            &wrong,
            &["--set", &set, "--set", "data.toy.side=5"]
        ),
        6
    );
}

#[test]
fn extraction_outputs_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--set",
        "data.planted=[4]",
        "--set",
        "extract.generations=32",
        "--set",
        "extract.scan.n=4",
    ];
    assert_eq!(tiny("extract", dir.path(), &args), 0);
    assert!(header(dir.path(), "extraction_records.csv").starts_with("generation,model_id,"));
    let report: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "extract_report.json")).unwrap();
    assert_eq!(report["generations"], 32);
    assert_eq!(report["planted_groups"][0].as_array().unwrap().len(), 4);
    assert_eq!(tiny("report", dir.path(), &args), 0);
    let pr = read(dir.path(), "precision_recall.csv");
    assert!(pr.is_empty() || pr.starts_with("rank,score,precision,extracted_count"));
    let merged: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert!(merged["reports"]["extract_report"].is_object());
}

#[test]
fn membership_subcommands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--set",
        "mia.shadows.count=4",
        "--set",
        "mia.loss.n_noise=2",
        "--set",
        "mia.t_list=[1,50]",
        "--set",
        "mia.progress_checkpoints=2",
    ];
    assert_eq!(tiny("mia", dir.path(), &args), 0);
    assert_eq!(
        header(dir.path(), "mia_scores.csv"),
        "attack,t,n_noise,use_flip,model,example,score,member"
    );
    assert_eq!(header(dir.path(), "mia_roc.csv"), "threshold,fpr,tpr");
    // 4 models x 16 examples
    assert_eq!(read(dir.path(), "mia_scores.csv").lines().count(), 1 + 64);
    let r: serde_json::Value = serde_json::from_str(&read(dir.path(), "mia_report.json")).unwrap();
    let tpr = r["lira"]["tpr_at_fpr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&tpr));

    assert_eq!(tiny("sweep-t", dir.path(), &args), 0);
    assert_eq!(read(dir.path(), "sweep_t.csv").lines().count(), 3);
    assert_eq!(tiny("progress", dir.path(), &args), 0);
    assert_eq!(header(dir.path(), "progress.csv"), "step,tpr,threshold");
    assert!(read(dir.path(), "progress.csv").lines().count() >= 3);
}

#[test]
fn defense_subcommands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let dd = [
        "--set",
        "data.planted=[3]",
        "--set",
        "dedup.run.generations=8",
        "--set",
        "dedup.run.scan.n=4",
    ];
    assert_eq!(tiny("dedup", dir.path(), &dd), 0);
    let removed = read(dir.path(), "removed_ids.txt");
    assert!(
        removed.lines().count() >= 2,
        "both extra copies of the plant are removed"
    );
    let m: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "deduplicated.json")).unwrap();
    assert_eq!(
        m["n"].as_u64().unwrap() as usize,
        16 - removed.lines().count()
    );

    let canary = [
        "--set",
        "canary.pool=16",
        "--set",
        "canary.audit.loss.n_noise=2",
        "--set",
        "canary.audit.null_draws=5",
    ];
    assert_eq!(tiny("canary", dir.path(), &canary), 0);
    assert_eq!(
        header(dir.path(), "exposure_table.csv"),
        "copies,canaries,max_exposure,mean_exposure"
    );
    // pool of 16 with five inserted canaries
    assert_eq!(read(dir.path(), "canary_exposures.csv").lines().count(), 17);
}

#[test]
fn inpaint_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--set",
        "mia.shadows.count=4",
        "--set",
        "inpaint.targets=2",
        "--set",
        "inpaint.attack.n=3",
        "--set",
        "inpaint.attack.top_k=2",
    ];
    assert_eq!(tiny("inpaint", dir.path(), &args), 0);
    assert_eq!(read(dir.path(), "inpaint_targets.csv").lines().count(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn numeric_overrides_land_on_their_path(steps in 1u64..1_000_000, lr in 1e-6f64..1.0, n in 1usize..10_000) {
        let sets = vec![format!("train.steps={steps}"), format!("train.learning_rate={lr}"), format!("data.toy.n={n}")];
        let cfg = ExperimentConfig::default().with_overrides(&sets).unwrap();
        prop_assert_eq!(cfg.train.steps, steps);
        prop_assert_eq!(cfg.train.learning_rate, lr);
        let json = serde_json::to_value(&cfg).unwrap();
        prop_assert_eq!(json["data"]["toy"]["n"].as_u64(), Some(n as u64));
    }

    #[test]
    fn stage_seeds_depend_only_on_master(master in any::<u64>()) {
        let mut a = ExperimentConfig { seed: master, ..Default::default() };
        let mut b = a.with_overrides(&["train.seed=12345".to_string()]).unwrap();
        prop_assert_eq!(a.fan_out_seeds(), b.fan_out_seeds());
        prop_assert_eq!(a.train.seed, b.train.seed);
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path).unwrap();
            ExperimentConfig::from_json(&text)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
