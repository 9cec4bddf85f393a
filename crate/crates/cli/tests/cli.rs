//! End-to-end tests of the `orbitax` binary: the full
//! split/train/rank/evaluate/diagnose pipeline on a small planted tree,
//! plus the exit-code contract (0 success, 1 usage, 2 data, 3 divergence).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use orbitax_core::synthetic::{planted_features, planted_tree};
use orbitax_core::taxonomy::Taxonomy;
use tempfile::TempDir;

fn orbitax(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbitax"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_fixture(dir: &Path) {
    let edges = planted_tree(3, 2);
    let t = Taxonomy::from_edges(&edges, None).unwrap();
    let f = planted_features(&t, 8, 0.1, 5).unwrap();
    let edge_text: String = edges
        .iter()
        .map(|(c, p)| format!("{c}\t{p}\n"))
        .collect();
    fs::write(dir.join("edges.tsv"), edge_text).unwrap();
    let feat_text: String = f
        .iter()
        .map(|(id, v)| {
            let cols: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            format!("{id}\t{}\n", cols.join("\t"))
        })
        .collect();
    fs::write(dir.join("features.tsv"), feat_text).unwrap();
    fs::write(
        dir.join("run.toml"),
        "[model]\nd = 8\nhidden = 8\n\
         [training]\nepochs = 2\nbatch_size = 8\ngrad_accum = 1\nn_neg = 2\nseed = 5\n",
    )
    .unwrap();
}

#[test]
fn pipeline_split_train_rank_evaluate_diagnose() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_fixture(dir);

    let out = orbitax(
        &["split", "--config", "run.toml", "--edges", "edges.tsv", "--test-frac", "0.3"],
        dir,
    );
    assert!(out.status.success(), "split: {:?}", out);
    assert!(dir.join("seed_edges.tsv").exists());
    assert!(dir.join("queries.tsv").exists());

    let out = orbitax(
        &[
            "train",
            "--config",
            "run.toml",
            "--edges",
            "seed_edges.tsv",
            "--features",
            "features.tsv",
        ],
        dir,
    );
    assert!(out.status.success(), "train: {:?}", out);
    assert!(dir.join("model.ckpt").exists());
    let log = fs::read_to_string(dir.join("loss_log.tsv")).unwrap();
    assert!(log.starts_with("epoch\tgeom\tprob\tsvgd\ttotal"));
    assert_eq!(log.lines().count(), 3, "header plus one line per epoch");

    let out = orbitax(
        &[
            "rank",
            "--config",
            "run.toml",
            "--checkpoint",
            "model.ckpt",
            "--edges",
            "seed_edges.tsv",
            "--features",
            "features.tsv",
            "--queries",
            "queries.tsv",
            "--top-k",
            "16",
        ],
        dir,
    );
    assert!(out.status.success(), "rank: {:?}", out);
    let preds = fs::read_to_string(dir.join("predictions.tsv")).unwrap();
    assert!(preds.lines().all(|l| l.split('\t').count() == 4));

    let out = orbitax(
        &[
            "evaluate",
            "--predictions",
            "predictions.tsv",
            "--queries",
            "queries.tsv",
            "--edges",
            "seed_edges.tsv",
        ],
        dir,
    );
    assert!(out.status.success(), "evaluate: {:?}", out);
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    for needle in ["hit@1", "recall@5", "mean_rank", "mrr", "wu_palmer"] {
        assert!(report.contains(needle), "report missing {needle}:\n{report}");
    }

    let out = orbitax(
        &[
            "diagnose",
            "--config",
            "run.toml",
            "--checkpoint",
            "model.ckpt",
            "--edges",
            "seed_edges.tsv",
            "--features",
            "features.tsv",
        ],
        dir,
    );
    assert!(out.status.success(), "diagnose: {:?}", out);
    assert!(dir.join("angles.csv").exists());
    let summary = fs::read_to_string(dir.join("diagnosis.txt")).unwrap();
    assert!(summary.contains("concentration_pass"));
}

#[test]
fn gate_flag_toggles_scores() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_fixture(dir);
    for (args, ok) in [
        (vec!["split", "--config", "run.toml", "--edges", "edges.tsv"], true),
        (
            vec![
                "train",
                "--config",
                "run.toml",
                "--edges",
                "seed_edges.tsv",
                "--features",
                "features.tsv",
            ],
            true,
        ),
    ] {
        let out = orbitax(&args, dir);
        assert_eq!(out.status.success(), ok, "{args:?}: {out:?}");
    }
    let rank = |gate: &str, gamma: &str, out_file: &str| {
        let out = orbitax(
            &[
                "rank",
                "--config",
                "run.toml",
                "--checkpoint",
                "model.ckpt",
                "--edges",
                "seed_edges.tsv",
                "--features",
                "features.tsv",
                "--queries",
                "queries.tsv",
                "--gate",
                gate,
                "--gamma",
                gamma,
                "--out",
                out_file,
            ],
            dir,
        );
        assert!(out.status.success(), "rank --gate {gate}: {out:?}");
        fs::read_to_string(dir.join(out_file)).unwrap()
    };
    let off = rank("off", "1", "off.tsv");
    // gamma = 0 pins the pass threshold at cosine 1, so every imperfect
    // match is filtered; gate off must leave raw cosines untouched.
    let on = rank("on", "0", "on.tsv");
    assert!(off.lines().all(|l| l.rsplit('\t').next().unwrap() != "0e0"));
    assert!(on.lines().any(|l| l.rsplit('\t').next().unwrap() == "0e0"));
}

#[test]
fn usage_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_fixture(dir);
    // Invalid configuration value.
    fs::write(dir.join("bad.toml"), "[training]\nlr_spherical = -1.0\n").unwrap();
    let out = orbitax(
        &[
            "train",
            "--config",
            "bad.toml",
            "--edges",
            "edges.tsv",
            "--features",
            "features.tsv",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(1), "{out:?}");

    // Invalid flag value for --gate.
    let out = orbitax(
        &[
            "rank",
            "--checkpoint",
            "model.ckpt",
            "--edges",
            "edges.tsv",
            "--features",
            "features.tsv",
            "--queries",
            "queries.tsv",
            "--gate",
            "sideways",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(1), "{out:?}");
}

#[test]
fn data_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_fixture(dir);
    // Missing input file.
    let out = orbitax(
        &[
            "train",
            "--config",
            "run.toml",
            "--edges",
            "no_such_file.tsv",
            "--features",
            "features.tsv",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // Cyclic taxonomy.
    fs::write(dir.join("cycle.tsv"), "a\tb\nb\ta\n").unwrap();
    let out = orbitax(
        &[
            "train",
            "--config",
            "run.toml",
            "--edges",
            "cycle.tsv",
            "--features",
            "features.tsv",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // Malformed feature row (node id with no values).
    fs::write(dir.join("empty_feat.tsv"), "n0\n").unwrap();
    let out = orbitax(
        &[
            "train",
            "--config",
            "run.toml",
            "--edges",
            "edges.tsv",
            "--features",
            "empty_feat.tsv",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn divergence_exits_3() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_fixture(dir);
    // An absurd learning rate sends the unconstrained parameters to overflow
    // within a few steps, which the trainer must report as divergence.
    fs::write(
        dir.join("diverge.toml"),
        "[model]\nd = 8\nhidden = 8\n\
         [training]\nepochs = 5\nbatch_size = 8\ngrad_accum = 1\nn_neg = 2\nseed = 5\n\
         lr_spherical = 1e200\nlr_euclidean = 1e200\n",
    )
    .unwrap();
    let out = orbitax(
        &[
            "train",
            "--config",
            "diverge.toml",
            "--edges",
            "edges.tsv",
            "--features",
            "features.tsv",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    // The last good parameters are still checkpointed.
    assert!(dir.join("model.ckpt").exists());
}

#[test]
fn split_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_fixture(dir);
    let split = |seed: &str, out_dir: &str| {
        let out = orbitax(
            &[
                "split",
                "--config",
                "run.toml",
                "--edges",
                "edges.tsv",
                "--seed",
                seed,
                "--out-dir",
                out_dir,
            ],
            dir,
        );
        assert!(out.status.success(), "{out:?}");
        fs::read_to_string(dir.join(out_dir).join("queries.tsv")).unwrap()
    };
    let a = split("11", "a");
    let b = split("11", "b");
    let c = split("12", "c");
    assert_eq!(a, b, "same seed, same split");
    assert_ne!(a, c, "different seed, different split");
}
