use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set", "trunk_hidden=12",
    "--set", "feature_dim=8",
    "--set", "code_dim=4",
    "--set", "critic_hidden=8",
    "--set", "pretrain_steps=20",
    "--set", "train_steps=8",
];

fn mvsc(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsc"))
        .args(args)
        .env("MVSC_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth_small(dir: &Path, root: &Path) {
    let o = mvsc(
        &["synth", "--n", "40", "--k", "3", "--views", "6,5", "--latent-dim", "5", "--subspace-dim", "2", "--seed", "4", "--out", dir.to_str().unwrap()],
        root,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|x| x.trim().parse().unwrap()).collect())
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

fn assert_manifest_complete(dir: &Path) {
    let m = manifest(dir);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for a in outputs {
        assert!(dir.join(a["path"].as_str().unwrap()).is_file(), "{a}");
        assert_eq!(a["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn synth_is_deterministic_and_rejects_zero_k() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    synth_small(&a, root.path());
    synth_small(&b, root.path());
    assert_eq!(manifest(&a)["outputs"], manifest(&b)["outputs"]);
    assert_manifest_complete(&a);

    let o = mvsc(&["synth", "--k", "0"], root.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("k"));
}

#[test]
fn default_output_root_comes_from_env() {
    let root = tempfile::tempdir().unwrap();
    let o = mvsc(&["synth", "--n", "20", "--k", "2", "--views", "4,4", "--latent-dim", "4", "--subspace-dim", "1"], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.path().join("synth/manifest.json").is_file());
    assert!(root.path().join("synth/run_manifest.json").is_file());
}

#[test]
fn config_errors_exit_with_validation_status() {
    let root = tempfile::tempdir().unwrap();
    let printed = mvsc(&["train", "--print-config"], root.path());
    assert!(printed.status.success());
    let text = String::from_utf8(printed.stdout).unwrap();
    assert!(text.contains("lambda_se = 1"));

    // Drop one key from an otherwise complete file.
    let partial: String = text.lines().filter(|l| !l.starts_with("gamma =")).map(|l| format!("{l}\n")).collect();
    let cfg = root.path().join("cfg.txt");
    std::fs::write(&cfg, partial).unwrap();
    let o = mvsc(&["train", "--print-config", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`gamma`"), "{}", stderr(&o));

    let o = mvsc(&["train", "--print-config", "--ablate", "drop_everything"], root.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("drop_cmi"));

    let o = mvsc(&["train", "--print-config", "--set", "lr=-1"], root.path());
    assert_eq!(o.status.code(), Some(1));

    let o = mvsc(&["train", "--print-config", "--set", "no_such_key=1"], root.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_key"));
}

#[test]
fn train_eval_viz_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let run = root.path().join("run");
    synth_small(&data, root.path());
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap(), "--ablate", "drop_cmi"];
    args.extend_from_slice(TINY);
    let o = mvsc(&args, root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_manifest_complete(&run);

    // drop_cmi zeroes the cmi column on every step.
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "l_c_cmi").unwrap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        assert_eq!(r.split(',').nth(col).unwrap().parse::<f64>().unwrap(), 0.0);
    }

    let o = mvsc(&["eval", "--run", run.to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let train_labels = std::fs::read_to_string(run.join("labels.csv")).unwrap();
    let eval_labels = std::fs::read_to_string(run.join("eval/labels.csv")).unwrap();
    assert_eq!(train_labels, eval_labels);
    assert_manifest_complete(&run.join("eval"));

    let o = mvsc(&["viz", "--run", run.to_str().unwrap(), "--sample", "10"], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let viz = run.join("viz");
    for f in [
        "affinity_fused.png",
        "affinity_fused.csv",
        "affinity_view0.png",
        "affinity_view1.csv",
        "zc_scatter_view0.png",
        "zc_scatter_view1.csv",
        "cosine_blocks.png",
        "cosine_summary.txt",
    ] {
        assert!(viz.join(f).is_file(), "{f}");
    }
    assert_manifest_complete(&viz);
    assert!(manifest(&viz)["notes"].to_string().contains("principal-component"));

    let cos = read_matrix(&viz.join("cosine_blocks.csv"));
    assert_eq!(cos.len(), 40);
    for (i, row) in cos.iter().enumerate() {
        assert!((row[i] - 1.0).abs() < 1e-12);
        for (j, &v) in row.iter().enumerate() {
            assert!((v - cos[j][i]).abs() < 1e-12);
        }
    }

    // Label-ordered affinity: the order file sorts samples by label.
    let labels: Vec<usize> = std::fs::read_to_string(data.join("labels.txt"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let order: Vec<usize> = std::fs::read_to_string(viz.join("sample_order.csv"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert!(order.windows(2).all(|w| labels[w[0]] <= labels[w[1]]));
}

#[test]
fn verify_passes_and_catches_injected_kl_fault() {
    let root = tempfile::tempdir().unwrap();
    let o = mvsc(&["verify"], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report = std::fs::read_to_string(root.path().join("verify/verify_report.txt")).unwrap();
    assert!(report.contains("overall.pass=true"));
    for line in report.lines() {
        assert_eq!(line.split('=').count(), 2, "{line}");
    }

    let o = mvsc(&["verify", "--inject-fault", "kl-sign", "--out", root.path().join("bad").to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(3));
    let report = std::fs::read_to_string(root.path().join("bad/verify_report.txt")).unwrap();
    assert!(report.contains("kl_min_over_random_codes.pass=false"));
    assert!(report.contains("kl_monte_carlo_rel_error.pass=false"));
    assert!(report.contains("decomposition_residual.pass=true"));
    assert!(stderr(&o).contains("kl_"));
}

#[test]
fn ablate_emits_five_rows_with_zero_std_for_one_seed() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let out = root.path().join("abl");
    synth_small(&data, root.path());
    let mut args = vec!["ablate", "--data", data.to_str().unwrap(), "--seeds", "7", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    let o = mvsc(&args, root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "row,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std,seeds");
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "drop_Ls", "drop_mkl", "drop_cmi", "drop_dis"]);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        for std_col in [2, 4, 6] {
            assert_eq!(f[std_col].parse::<f64>().unwrap(), 0.0);
        }
    }
    assert_eq!(manifest(&out)["seeds"], serde_json::json!([7]));
    assert_manifest_complete(&out);
}
