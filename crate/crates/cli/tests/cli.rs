use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use netoutlier::graph::{build_knn_graph, Edge, LaplacianBundle, WeightedGraph};
use netoutlier::io::{read_table, write_edges};
use netoutlier::mcd::mle_fit;
use netoutlier::model::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_netoutlier"));
    c.env_remove("NETOUTLIER_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn knn_edges(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
    let g = build_knn_graph(&pts, 5).unwrap();
    let path = dir.join("edges.csv");
    let mut buf = Vec::new();
    write_edges(&g, &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn flags(p: &Path) -> Vec<u8> {
    let t = read_table(fs::read(p).unwrap().as_slice()).unwrap();
    t.values.column(6).iter().map(|v| *v as u8).collect()
}

const MODEL: &str = r#"{"sigma_v": [[2.0, 0.4, 0.0], [0.4, 1.0, 0.3], [0.0, 0.3, 0.5]]}"#;

#[test]
fn sample_then_detect_nominal_rate() {
    let d = TempDir::new().unwrap();
    let edges = knn_edges(d.path(), 600, 1);
    let model = write(d.path(), "model.json", MODEL);
    let sam = d.path().join("sam");
    ok(&["sample", "--model", s(&model), "--edges", s(&edges), "--seed", "11", "--out", s(&sam)]);
    assert!(!sam.join("z.csv").exists(), "theta omitted: no covariates written");
    let det = d.path().join("det");
    ok(&["detect", "--data", s(&sam.join("x.csv")), "--edges", s(&edges), "--out", s(&det)]);
    let f = flags(&det.join("edges.csv"));
    let rate = f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64;
    assert!(f.len() > 1500);
    assert!((0.01..0.045).contains(&rate), "flag rate {rate}");
    for name in ["edges.csv", "nodes.csv", "params.json", "residuals.csv", "manifest.json"] {
        assert!(det.join(name).exists(), "{name}");
    }
}

#[test]
fn untrimmed_run_is_the_mle() {
    let d = TempDir::new().unwrap();
    let edges = knn_edges(d.path(), 150, 2);
    let model = write(
        d.path(),
        "model.json",
        r#"{"theta": [[1.0, -0.5], [0.3, 2.0]], "sigma_v": [[1.0, 0.2], [0.2, 0.5]]}"#,
    );
    let sam = d.path().join("sam");
    ok(&["sample", "--model", s(&model), "--edges", s(&edges), "--seed", "3", "--out", s(&sam)]);
    let det = d.path().join("det");
    ok(&[
        "detect", "--data", s(&sam.join("x.csv")), "--covariates", s(&sam.join("z.csv")), "--edges", s(&edges),
        "--h-fraction", "1.0", "--no-reweight", "--no-rescale", "--out", s(&det),
    ]);
    let x = read_table(fs::read(sam.join("x.csv")).unwrap().as_slice()).unwrap().values;
    let z = read_table(fs::read(sam.join("z.csv")).unwrap().as_slice()).unwrap().values;
    let g = netoutlier::io::read_edges(fs::read(&edges).unwrap().as_slice(), x.nrows()).unwrap();
    let mle = mle_fit(&Dataset::new(x, z).unwrap(), &g, &LaplacianBundle::with_default_tol(&g)).unwrap();
    let p = json(&det.join("params.json"));
    for (name, m) in [("theta", &mle.theta), ("sigma_v", &mle.sigma_v)] {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = p[name][r][c].as_f64().unwrap();
                assert!((v - m[(r, c)]).abs() < 1e-8, "{name}[{r}][{c}]");
            }
        }
    }
}

#[test]
fn coda_flags_do_not_depend_on_contrasts() {
    let d = TempDir::new().unwrap();
    let rep = d.path().join("rep");
    ok(&["replica", "--plant-edge", "40", "--out", s(&rep)]);
    let mut seen = Vec::new();
    for seed in ["1", "2", "3"] {
        let out = d.path().join(format!("det{seed}"));
        ok(&[
            "detect", "--data", s(&rep.join("x.csv")), "--covariates", s(&rep.join("z.csv")), "--edges",
            s(&rep.join("edges.csv")), "--coda", s(&rep.join("schema.json")), "--contrast-seed", seed, "--out", s(&out),
        ]);
        seen.push(flags(&out.join("edges.csv")));
    }
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0], seen[2]);
    assert_eq!(seen[0][40], 1, "planted edge flagged");
}

#[test]
fn sampling_is_seeded() {
    let d = TempDir::new().unwrap();
    let edges = knn_edges(d.path(), 60, 3);
    let model = write(d.path(), "model.json", MODEL);
    let go = |name: &str, seed: &str, env: Option<&str>| {
        let out = d.path().join(name);
        let mut c = bin();
        c.args(["sample", "--model", s(&model), "--edges", s(&edges), "--seed", seed, "--out", s(&out)]);
        if let Some(v) = env {
            c.env("NETOUTLIER_SEED", v);
        }
        assert!(c.status().unwrap().success());
        fs::read(out.join("x.csv")).unwrap()
    };
    let a = go("a", "5", None);
    assert_eq!(a, go("b", "5", None));
    assert_ne!(a, go("c", "6", None));
    assert_eq!(go("d", "6", Some("5")), a, "environment seed wins");
}

#[test]
fn detect_reruns_are_byte_identical() {
    let d = TempDir::new().unwrap();
    let edges = knn_edges(d.path(), 80, 4);
    let model = write(d.path(), "model.json", MODEL);
    let sam = d.path().join("sam");
    ok(&["sample", "--model", s(&model), "--edges", s(&edges), "--out", s(&sam)]);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = d.path().join(format!("det{k}"));
        ok(&["--threads", "1", "detect", "--data", s(&sam.join("x.csv")), "--edges", s(&edges), "--out", s(&out)]);
        outputs.push(out);
    }
    for name in ["edges.csv", "nodes.csv", "residuals.csv", "params.json"] {
        assert_eq!(fs::read(outputs[0].join(name)).unwrap(), fs::read(outputs[1].join(name)).unwrap(), "{name}");
    }
    let m = json(&outputs[0].join("manifest.json"));
    let bytes = fs::read(outputs[0].join("edges.csv")).unwrap();
    let digest = m["outputs"]["edges.csv"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert_eq!(m["command"], "detect");
    assert_eq!(m["inputs"].as_object().unwrap().len(), 2);
    // a changed file changes its digest
    let other = run(&["detect", "--data", s(&sam.join("x.csv")), "--edges", s(&edges), "--level", "0.9", "--out", s(&d.path().join("det2"))]);
    assert!(other.status.success());
    let m2 = json(&d.path().join("det2").join("manifest.json"));
    assert_ne!(m2["outputs"]["edges.csv"], m["outputs"]["edges.csv"]);
    assert!(!bytes.is_empty());
}

#[test]
fn exit_codes() {
    let d = TempDir::new().unwrap();
    let edges = knn_edges(d.path(), 40, 5);
    let model = write(d.path(), "model.json", MODEL);
    let sam = d.path().join("sam");
    ok(&["sample", "--model", s(&model), "--edges", s(&edges), "--out", s(&sam)]);
    let x = sam.join("x.csv");
    let out = d.path().join("o");
    let code = |args: &[&str]| run(args).status.code().unwrap();

    let bad_header = write(d.path(), "bad.csv", "a,b,c\n0,1,1\n");
    assert_eq!(code(&["detect", "--data", s(&x), "--edges", s(&bad_header), "--out", s(&out)]), 2);

    let text = fs::read_to_string(&x).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let broken = format!("NA,{}", lines[3].split_once(',').unwrap().1);
    lines[3] = &broken;
    let na = write(d.path(), "na.csv", &(lines.join("\n") + "\n"));
    let res = run(&["detect", "--data", s(&na), "--edges", s(&edges), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("row 2"));

    let short = write(d.path(), "short.csv", &(text.lines().take(30).collect::<Vec<_>>().join("\n") + "\n"));
    assert_eq!(code(&["detect", "--data", s(&short), "--edges", s(&edges), "--out", s(&out)]), 3);

    // two triangles
    let g = WeightedGraph::new(
        6,
        [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)].map(|(i, j)| Edge { i, j, w: 1.0 }),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_edges(&g, &mut buf).unwrap();
    let split = d.path().join("split.csv");
    fs::write(&split, buf).unwrap();
    let six = write(d.path(), "six.csv", &(text.lines().take(7).collect::<Vec<_>>().join("\n") + "\n"));
    assert_eq!(code(&["detect", "--data", s(&six), "--edges", s(&split), "--out", s(&out)]), 4);

    let npd = write(d.path(), "npd.json", r#"{"sigma_v": [[1.0, 2.0], [2.0, 1.0]]}"#);
    assert_eq!(code(&["sample", "--model", s(&npd), "--edges", s(&edges), "--out", s(&out)]), 5);

    assert_eq!(code(&["detect", "--data", s(&x), "--out", s(&out)]), 2, "missing required flag");
}

#[test]
fn simulate_smoke() {
    let d = TempDir::new().unwrap();
    let cfg = write(
        d.path(),
        "sim.json",
        r#"{"graph_types": ["knn"], "ns": [50], "ps": [3], "zetas": [0.0, 0.1], "reps": 3, "seed": 4}"#,
    );
    let t0 = Instant::now();
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = d.path().join(format!("sim{k}"));
        ok(&["--threads", "1", "simulate", "--config", s(&cfg), "--out", s(&out)]);
        runs.push(out);
    }
    assert!(t0.elapsed().as_secs() < 120, "two smoke runs took {:?}", t0.elapsed());
    let a = fs::read(runs[0].join("scores.csv")).unwrap();
    assert_eq!(a, fs::read(runs[1].join("scores.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 3 * 3);
    for r in rows.iter().filter(|r| r.contains(",0,") && r.starts_with("knn,50,3,7,0,")) {
        let nums: Vec<f64> = r.split(',').skip(7).map(|v| v.parse().unwrap()).collect();
        assert!(nums.iter().all(|v| v.is_finite()), "{r}");
    }
    let medians = fs::read_to_string(runs[0].join("medians.csv")).unwrap();
    assert_eq!(medians.lines().count(), 1 + 2 * 3);
    assert_eq!(json(&runs[0].join("manifest.json"))["seed"], 4);
}
