use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dncb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dncb"))
        .args(args)
        .env_remove("DNCB_OUT_DIR")
        .output()
        .expect("spawn dncb")
}

fn ok(args: &[&str]) {
    let o = dncb(args);
    assert!(
        o.status.success(),
        "dncb {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn simulate_into(dir: &Path, seed: u64) {
    let seed = seed.to_string();
    ok(&[
        "simulate", "--model", "td", "--I", "20", "--J", "30", "--C", "2", "--K", "3", "--eps1", "1", "--eps2", "1",
        "--seed", &seed, "--out", p(dir),
    ]);
}

#[test]
fn simulate_is_deterministic() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    simulate_into(&a, 1);
    simulate_into(&b, 1);
    let ca = dir_contents(&a);
    assert_eq!(ca, dir_contents(&b));
    for f in ["data.csv", "truth.json", "truth_theta.csv", "truth_phi.csv", "truth_pi1.csv", "simulate.json"] {
        assert!(ca.contains_key(f), "missing {f}");
    }
    let theta = String::from_utf8(ca["truth_theta.csv"].clone()).unwrap();
    assert_eq!(theta.lines().count(), 21);
    let phi = String::from_utf8(ca["truth_phi.csv"].clone()).unwrap();
    assert_eq!(phi.lines().count(), 31, "phi is written features x factors");

    let c = t.path().join("c");
    simulate_into(&c, 2);
    assert_ne!(ca["data.csv"], fs::read(c.join("data.csv")).unwrap());
}

#[test]
fn fit_then_ppd_pipeline() {
    let t = TempDir::new().unwrap();
    let sim = t.path().join("sim");
    simulate_into(&sim, 1);
    let data = sim.join("data.csv");
    let fit = t.path().join("fit");
    ok(&[
        "fit", "--data", p(&data), "--model", "td", "--C", "2", "--K", "3", "--eps1", "1", "--eps2", "1",
        "--iterations", "60", "--burn-in", "40", "--mask-fraction", "0.1", "--chains", "2", "--seed", "3", "--out",
        p(&fit),
    ]);
    let summary = json(fit.join("fit.json"));
    assert_eq!(summary["heldout"], 60);
    assert_eq!(summary["samples_per_chain"], serde_json::json!([20, 20]));
    for f in ["theta.csv", "phi.csv", "pi1.csv", "pi2.csv", "chain0.ckpt", "chain1.ckpt", "samples.bin", "mask.csv"] {
        assert!(fit.join(f).exists(), "missing {f}");
    }

    ok(&["ppd", "--data", p(&data), "--out", p(&fit)]);
    let ppd = json(fit.join("ppd.json"));
    let v = ppd["rescaled_ppd"].as_f64().unwrap();
    assert!(v.is_finite() && v > 0.0, "{v}");
    assert_eq!(ppd["cells"], 60);
    assert_eq!(ppd["samples"], 40);
}

/// Replace every held-out cell of `src` with 0.5 and write it to `dst`.
fn perturb_heldout(src: &Path, mask: &Path, dst: &Path) {
    let mut rows: Vec<Vec<String>> = fs::read_to_string(src)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let mut n = 0;
    for line in fs::read_to_string(mask).unwrap().lines().skip(1) {
        let f: Vec<usize> = line.split(',').take(2).map(|x| x.parse().unwrap()).collect();
        rows[f[0] + 1][f[1] + 1] = "0.5".into();
        n += 1;
    }
    assert!(n > 0);
    let text: Vec<String> = rows.iter().map(|r| r.join(",")).collect();
    fs::write(dst, text.join("\n") + "\n").unwrap();
}

#[test]
fn fit_never_reads_heldout_values() {
    let t = TempDir::new().unwrap();
    let sim = t.path().join("sim");
    simulate_into(&sim, 1);
    let run = |data: &Path, out: &Path| {
        ok(&[
            "fit", "--data", p(data), "--model", "mf", "--K", "2", "--eps1", "1", "--eps2", "1", "--iterations", "30",
            "--burn-in", "20", "--mask-fraction", "0.2", "--mask-seed", "9", "--seed", "4", "--out", p(out),
        ]);
    };
    let a = t.path().join("a");
    run(&sim.join("data.csv"), &a);
    let perturbed = t.path().join("perturbed.csv");
    perturb_heldout(&sim.join("data.csv"), &a.join("mask.csv"), &perturbed);
    let b = t.path().join("b");
    run(&perturbed, &b);

    let (mut ca, mut cb) = (dir_contents(&a), dir_contents(&b));
    // the resolved config records the input path
    ca.remove("config.toml");
    cb.remove("config.toml");
    assert_eq!(ca.keys().collect::<Vec<_>>(), cb.keys().collect::<Vec<_>>());
    for (k, v) in &ca {
        assert!(v == &cb[k], "{k} differs");
    }
}

#[test]
fn resume_matches_uninterrupted_fit() {
    let t = TempDir::new().unwrap();
    let sim = t.path().join("sim");
    simulate_into(&sim, 1);
    let data = sim.join("data.csv");
    let base = [
        "fit", "--data", p(&data), "--model", "td", "--C", "2", "--K", "2", "--eps1", "1", "--eps2", "1", "--burn-in",
        "10", "--seed", "5", "--checkpoint-every", "5",
    ];
    let full = t.path().join("full");
    let mut args = base.to_vec();
    args.extend(["--iterations", "30", "--out", p(&full)]);
    ok(&args);

    let split = t.path().join("split");
    let mut args = base.to_vec();
    args.extend(["--iterations", "15", "--out", p(&split)]);
    ok(&args);
    let mut args = base.to_vec();
    args.extend(["--iterations", "30", "--resume", "--out", p(&split)]);
    ok(&args);

    let (mut a, mut b) = (dir_contents(&full), dir_contents(&split));
    for m in [&mut a, &mut b] {
        m.remove("config.toml");
    }
    for (k, v) in &a {
        assert!(v == &b[k], "{k} differs after resume");
    }
}

#[test]
fn resume_refuses_other_data() {
    let t = TempDir::new().unwrap();
    let (s1, s2) = (t.path().join("s1"), t.path().join("s2"));
    simulate_into(&s1, 1);
    simulate_into(&s2, 8);
    let out = t.path().join("fit");
    let fit = |data: &Path, resume: bool| {
        let mut args = vec![
            "fit", "--data", p(data), "--model", "mf", "--K", "2", "--eps1", "1", "--eps2", "1", "--iterations", "4",
            "--burn-in", "2", "--out", p(&out),
        ];
        if resume {
            args.push("--resume");
        }
        dncb(&args)
    };
    assert!(fit(&s1.join("data.csv"), false).status.success());
    let o = fit(&s2.join("data.csv"), true);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("different model or data"));
}

#[test]
fn preprocess_biseq_with_filter() {
    let t = TempDir::new().unwrap();
    let counts = t.path().join("counts.csv");
    let mut s = String::from("sample,feature,methylated,unmethylated\n");
    for i in 0..12 {
        for j in 0..150 {
            let d = (i * 7 + j * 13) % 40 * (j % 3);
            let u = (i * 11 + j * 5) % 30;
            s += &format!("s{i},cg{j},{d},{u}\n");
        }
    }
    fs::write(&counts, s).unwrap();
    let out = t.path().join("pre");
    ok(&["preprocess", "--biseq", p(&counts), "--s0", "0.1", "--top", "100", "--out", p(&out)]);
    let text = fs::read_to_string(out.join("beta.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 101);
    let mut n = 0;
    for l in lines {
        for v in l.split(',').skip(1) {
            let x: f64 = v.parse().unwrap();
            assert!(x > 0.0 && x < 1.0);
        }
        n += 1;
    }
    assert_eq!(n, 12);
    assert_eq!(json(out.join("preprocess.json"))["cols"], 100);
}

#[test]
fn ppc_and_stability_write_reports() {
    let t = TempDir::new().unwrap();
    let sim = t.path().join("sim");
    simulate_into(&sim, 1);
    let data = sim.join("data.csv");
    let out = t.path().join("rep");
    ok(&[
        "ppc", "--data", p(&data), "--C", "2", "--K", "3", "--eps1", "1", "--eps2", "1", "--n-reps", "50", "--out",
        p(&out),
    ]);
    let ppc = json(out.join("ppc.json"));
    assert!(ppc["mse_mean"].as_f64().unwrap() > 0.0);

    let labels = t.path().join("labels.csv");
    let body: String = (0..20).map(|i| format!("sample{},{}\n", i + 1, if i < 10 { "a" } else { "b" })).collect();
    fs::write(&labels, format!("sample,group\n{body}")).unwrap();
    ok(&[
        "stability", "--data", p(&data), "--c-values", "2,3", "--k-values", "2", "--eps1", "1", "--eps2", "1",
        "--iterations", "10", "--burn-in", "9", "--sample-labels", p(&labels), "--out", p(&out),
    ]);
    let csv = fs::read_to_string(out.join("stability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let rep = json(out.join("stability.json"));
    assert_eq!(rep["sample_reference"], "labels");
}

#[test]
fn config_file_and_env_out_dir() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "model = \"mf\"\nk = 2\neps1 = 1.0\neps2 = 1.0\nrows = 5\ncols = 4\nseed = 11\n").unwrap();
    let env_out = t.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_dncb"))
        .args(["simulate", "--config", p(&cfg), "--K", "3"])
        .env("DNCB_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(env_out.join("simulate.json"));
    assert_eq!(s["K"], 3, "flag beats file");
    assert_eq!(s["seed"], 11);
    assert_eq!(s["rows"], 5);
}

#[test]
fn errors_exit_nonzero_with_context() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("x");
    let o = dncb(&["simulate", "--I", "3", "--J", "3", "--K", "2", "--out", p(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dncb simulate: "));

    let o = dncb(&["fit", "--data", "/nonexistent.csv", "--K", "2", "--C", "2", "--out", p(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent.csv"));

    let o = dncb(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = t.path().join("bad.toml");
    fs::write(&bad, "iterationz = 3\n").unwrap();
    let o = dncb(&["ppc", "--config", p(&bad), "--out", p(&out)]);
    assert!(!o.status.success());
}
