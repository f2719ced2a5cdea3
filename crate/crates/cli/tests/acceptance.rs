//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;
#[path = "../../core/tests/common/grad_cases.rs"]
mod grad_cases;
#[path = "../../core/tests/common/group_cases.rs"]
mod group_cases;
#[path = "../../core/tests/common/trainer_cases.rs"]
mod trainer_cases;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use eid_core::data::{load_dataset, psnr, ssim};
use eid_core::network::UNetConfig;
use eid_core::physics::{invert_analytic, out_of_range_count, DepthMap, HazeOperator, ScatteringParams};
use eid_core::tensor::Tensor;
use eid_core::trainer::{train_eid_on, Physics, TrainConfig, Variant};
use eid_core::adversarial::{adversarial_terms, DiscriminatorConfig, PatchDiscriminator};
use eid_core::network::{Network, ParamStore};
use eid_core::tensor::Graph;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn eid(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_eid"))
        .args(args)
        .env("EID_THREADS", "1")
        .output()
        .expect("binary runs");
    if !out.status.success() {
        panic!("eid {:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cases = grad_cases::all();
    let elapsed = start.elapsed();
    let (worst_name, worst) = cases.iter().fold(("", 0.0f64), |m, c| if c.1 > m.1 { (c.0, c.1) } else { m });
    let summary = format!(
        "{} cases, worst relative error {worst:.2e} ({worst_name}), {:.1} s",
        cases.len(),
        elapsed.as_secs_f64()
    );
    check(worst < 1e-4 && elapsed < Duration::from_secs(60), summary.clone(), summary)
}

fn group_axioms() -> Outcome {
    let start = Instant::now();
    if let Err(e) = group_cases::exact_axioms() {
        return Err(format!("exact axiom violated: {e}"));
    }
    let mut worst = (String::new(), 0.0f64);
    for (name, g) in group_cases::continuous_elements() {
        let mae = group_cases::round_trip_mae(&g);
        if mae > worst.1 {
            worst = (name.to_string(), mae);
        }
    }
    let elapsed = start.elapsed();
    let summary = format!(
        "exact kinds bit-exact; worst continuous round-trip MAE {:.2e} ({}), {:.2} s",
        worst.1,
        worst.0,
        elapsed.as_secs_f64()
    );
    check(worst.1 < 2e-2 && elapsed < Duration::from_secs(30), summary.clone(), summary)
}

fn physics() -> Outcome {
    let half = ScatteringParams::<f64>::scalar(std::f64::consts::LN_2, 1.0, DepthMap::constant(1, 1, 1.0).unwrap()).unwrap();
    let value = HazeOperator::analytic(&half).apply_tensor(&Tensor::full([1, 1, 1, 1], 0.25)).unwrap().item();
    if (value - 0.625).abs() > 1e-12 {
        return Err(format!("x=0.25, alpha=1, t=0.5 gave {value}"));
    }
    let mut r = common::rng(1);
    let mut worst_inverse = 0.0f64;
    let mut out_of_range = 0;
    for _ in 0..200 {
        let x = common::uniform([1, 3, 8, 8], 0.0, 1.0, &mut r);
        let depth = DepthMap::new(common::uniform([1, 1, 8, 8], 0.0, 3.0, &mut r)).unwrap();
        let beta = common::uniform([1, 1, 1, 1], 0.0, 2.0, &mut r).item();
        let alpha = common::uniform([1, 1, 1, 1], 0.0, 1.0, &mut r).item();
        let p = ScatteringParams::scalar(beta, alpha, depth).unwrap();
        let y = HazeOperator::analytic(&p).apply_tensor(&x).unwrap();
        out_of_range += out_of_range_count(&y);
        worst_inverse = worst_inverse.max(invert_analytic(&p, &y).unwrap().max_abs_diff(&x).unwrap());
    }
    // Operator parameters before and after a training run.
    let params: Vec<ScatteringParams<f32>> = (0..4)
        .map(|i| ScatteringParams::new(0.6 + 0.05 * i as f64, vec![0.9, 0.95, 1.0], DepthMap::constant(8, 8, 1.0).unwrap()).unwrap())
        .collect();
    let hazy: Vec<Tensor<f32>> = (0..4).map(|_| common::uniform([1, 3, 8, 8], 0.3, 0.9, &mut r).cast()).collect();
    let physics = Physics::PerImage(params);
    let before = physics.fingerprint();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 2,
        unet: UNetConfig {
            levels: 2,
            base_channels: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    train_eid_on(&hazy, &physics, &config).map_err(|e| e.to_string())?;
    let unchanged = before == physics.fingerprint();
    let summary = format!(
        "H(0.25)=0.625; inverse error {worst_inverse:.1e}; {out_of_range} values out of range; parameters unchanged: {unchanged}"
    );
    check(worst_inverse < 1e-5 && out_of_range == 0 && unchanged, summary.clone(), summary)
}

fn weighting() -> Outcome {
    let (l_hc, l_ec, total) = trainer_cases::crafted_terms(0.1, Variant::V3);
    let v1 = trainer_cases::probe_gradients(Variant::V1);
    let v2 = trainer_cases::probe_gradients(Variant::V2);
    let v3 = trainer_cases::probe_gradients(Variant::V3);
    let summary = format!(
        "l_hc={l_hc}, l_ec={l_ec}, total={total}; V1 equivariance probe gradient {}, V2 consistency probe gradient {}, V3 probes {:.2e}/{:.2e}, network {:.2e}",
        v1.ec_probe, v2.hc_probe, v3.hc_probe, v3.ec_probe, v3.network
    );
    check(
        l_hc == 1.0 && l_ec == 2.0 && total == l_hc + 0.1 * l_ec && (total - 1.2).abs() < 1e-15 && v1.ec_probe == 0.0 && v2.hc_probe == 0.0 && v1.hc_probe > 0.0 && v2.ec_probe > 0.0 && v3.hc_probe > 0.0 && v3.ec_probe > 0.0 && v3.network > 0.0,
        summary.clone(),
        summary,
    )
}

fn metrics() -> Outcome {
    let a = Tensor::<f64>::full([1, 3, 16, 16], 0.5);
    let b = Tensor::<f64>::full([1, 3, 16, 16], 0.4);
    let p = psnr(&a, &b, 1.0).unwrap().0;
    let x = common::uniform([1, 3, 16, 16], 0.0, 1.0, &mut common::rng(2));
    let same = ssim(&x, &x).unwrap();
    let summary = format!("psnr(mse 0.01) = {p:.9} dB; ssim(x, x) = {same:.9}");
    check((p - 20.0).abs() < 1e-6 && (same - 1.0).abs() < 1e-6, summary.clone(), summary)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn pseudo_physics(root: &Path) -> Outcome {
    let clear_set = root.join("gan_clear");
    let hazy_set = root.join("gan_hazy");
    eid(&["synth", "--out", s(&clear_set), "--count", "16", "--seed", "11"]);
    eid(&["synth", "--out", s(&hazy_set), "--count", "16", "--seed", "12"]);
    let run = |name: &str| {
        let out = root.join(name);
        eid(&[
            "train-physics", "--clear", s(&clear_set.join("clean")), "--hazy", s(&hazy_set.join("hazy")), "--out",
            s(&out), "--iterations", "200", "--seed", "0",
        ]);
        out
    };
    let start = Instant::now();
    let first = run("gan_a");
    let elapsed = start.elapsed();
    let second = run("gan_b");
    let summary = read_json(&first.join("summary.json"));
    let initial = summary["initial_cycle"].as_f64().unwrap();
    let last = summary["final_cycle"].as_f64().unwrap();
    let ckpt = std::fs::read(first.join("physics.ckpt")).unwrap();
    let deterministic = ckpt == std::fs::read(second.join("physics.ckpt")).unwrap();

    // EID training on top of the frozen generator leaves its file untouched.
    let dehazer = root.join("gan_eid");
    eid(&[
        "train", "--hazy", s(&hazy_set.join("hazy")), "--physics", s(&first.join("physics.ckpt")), "--transform",
        "rotate", "--lambda", "0.1", "--epochs", "1", "--seed", "0", "--out", s(&dehazer), "--base-channels", "4",
    ]);
    let stable = ckpt == std::fs::read(first.join("physics.ckpt")).unwrap();

    let mut params = ParamStore::<f64>::new();
    let arch = PatchDiscriminator::indifferent(DiscriminatorConfig::default(), &mut params).unwrap();
    let disc = Network { arch, params };
    let mut g = Graph::new();
    let real = g.constant(common::uniform([2, 3, 32, 32], 0.0, 1.0, &mut common::rng(3)));
    let fake = g.constant(common::uniform([2, 3, 32, 32], 0.0, 1.0, &mut common::rng(4)));
    let terms = adversarial_terms(&mut g, &disc, real, fake, false).unwrap();
    let value = g.value(terms.value).item();
    let target = -2.0 * std::f64::consts::LN_2;

    let summary = format!(
        "cycle {initial:.4} -> {last:.4} in {:.0} s; checkpoint deterministic: {deterministic}; unchanged by EID training: {stable}; l1 at D=0.5: {value:.12} (target {target:.12})",
        elapsed.as_secs_f64()
    );
    check(
        last < initial && deterministic && stable && (value - target).abs() < 1e-12,
        summary.clone(),
        summary,
    )
}

type Files = BTreeMap<PathBuf, Vec<u8>>;

fn files(dir: &Path) -> Files {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Training logs carry a wall-clock column; everything else must match.
fn strip_timing(name: &Path, bytes: Vec<u8>) -> Vec<u8> {
    let text = String::from_utf8_lossy(&bytes);
    if name.file_name().and_then(|n| n.to_str()) == Some("train_log.csv") && text.starts_with("epoch,") {
        return text
            .lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l).to_string() + "\n")
            .collect::<String>()
            .into_bytes();
    }
    bytes
}

fn determinism(root: &Path) -> Outcome {
    let cfg = root.join("det_scene.json");
    std::fs::write(&cfg, r#"{"scene": {"size": 16, "depth_far": 1.2, "bumps": 1}}"#).unwrap();
    // Both runs use the same paths, since echoed configs record their inputs.
    let base = root.join("det");
    let run_all = || -> (BTreeMap<String, Files>, Vec<Vec<u8>>) {
        let d = |n: &str| base.join(n);
        eid(&["synth", "--out", s(&d("data")), "--count", "4", "--seed", "5", "--config", s(&cfg)]);
        eid(&["synth", "--out", s(&d("other")), "--count", "4", "--seed", "6", "--config", s(&cfg)]);
        eid(&[
            "haze", "--in", s(&d("data/clean")), "--depth", s(&d("data/depth/0000.tnsr")), "--beta", "0.7", "--alpha",
            "0.9/0.95/1", "--out", s(&d("hazed")),
        ]);
        eid(&[
            "train-physics", "--clear", s(&d("data/clean")), "--hazy", s(&d("other/hazy")), "--out", s(&d("gan")),
            "--iterations", "3", "--batch-size", "2", "--seed", "1",
        ]);
        eid(&[
            "train", "--hazy", s(&d("data/hazy")), "--physics", s(&d("data")), "--transform", "rotate", "--lambda",
            "0.1", "--epochs", "2", "--seed", "2", "--out", s(&d("eid")), "--base-channels", "4", "--levels", "2",
        ]);
        eid(&["dehaze", "--ckpt", s(&d("eid/model.ckpt")), "--in", s(&d("data/hazy")), "--out", s(&d("dehazed"))]);
        let eval = eid(&["eval", "--pred", s(&d("dehazed")), "--ref", s(&d("data/clean"))]).stdout;
        let audit = eid(&[
            "audit", "--ckpt", s(&d("eid/model.ckpt")), "--physics", s(&d("data")), "--transform", "rotate", "--in",
            s(&d("data/hazy")), "--seed", "3",
        ])
        .stdout;
        eid(&[
            "ablation", "--data", s(&d("data")), "--out", s(&d("ablation")), "--epochs", "1", "--seed", "4",
            "--base-channels", "4", "--transforms", "rotate,shift",
        ]);
        let mut outputs = BTreeMap::new();
        for sub in ["data", "hazed", "gan", "eid", "dehazed", "ablation"] {
            let mut f = files(&d(sub));
            for (name, bytes) in f.iter_mut() {
                *bytes = strip_timing(name, std::mem::take(bytes));
            }
            outputs.insert(sub.to_string(), f);
        }
        std::fs::remove_dir_all(&base).unwrap();
        (outputs, vec![eval, audit])
    };
    let (a, sa) = run_all();
    let (b, sb) = run_all();
    let mut differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    if sa[0] != sb[0] {
        differing.push("eval".into());
    }
    if sa[1] != sb[1] {
        differing.push("audit".into());
    }
    let count: usize = a.values().map(|f| f.len()).sum();
    check(
        differing.is_empty(),
        format!("synth, haze, train-physics, train, dehaze, eval, audit, ablation: {count} files and 2 reports identical"),
        format!("outputs differ: {differing:?}"),
    )
}

// Benchmark training settings shared by every variant.
const BENCH_BATCH: &str = "1";
const BENCH_LR: &str = "2e-3";
const BENCH_BASE: &str = "32";

struct Row {
    psnr: f64,
    ssim: f64,
    residual: f64,
    untrained: f64,
}

fn parse_ablation(path: &Path) -> BTreeMap<String, Row> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rows = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().unwrap_or(f64::NAN);
        rows.insert(
            f[0].to_string(),
            Row {
                psnr: num(3),
                ssim: num(4),
                residual: num(5),
                untrained: num(6),
            },
        );
    }
    rows
}

/// Runs the 64-scene benchmark for all three variants; returns the outcomes
/// of the end-to-end and the ablation-ordering criteria.
fn benchmark(root: &Path) -> (Outcome, Outcome) {
    let data = root.join("bench");
    eid(&["synth", "--out", s(&data), "--count", "64", "--size", "32", "--seed", "0"]);
    let (_, items) = load_dataset::<f64>(&data).unwrap();
    let mean_t = items.iter().map(|i| i.2.mean_transmission()).sum::<f64>() / items.len() as f64;
    let hazy = read_json_stdout(&eid(&["eval", "--pred", s(&data.join("hazy")), "--ref", s(&data.join("clean"))]));
    let (base_psnr, base_ssim) = (hazy["psnr"].as_f64().unwrap(), hazy["ssim"].as_f64().unwrap());

    let ablation = |variants: &str| {
        let out = root.join(format!("bench_{}", variants.replace(',', "")));
        eid(&[
            "ablation", "--data", s(&data), "--out", s(&out), "--variants", variants, "--transforms", "rotate",
            "--epochs", "30", "--lambda", "0.1", "--seed", "0", "--batch-size", BENCH_BATCH, "--lr", BENCH_LR,
            "--base-channels", BENCH_BASE,
        ]);
        parse_ablation(&out.join("ablation.csv"))
    };
    let start = Instant::now();
    let mut rows = ablation("V3");
    let elapsed = start.elapsed();
    rows.extend(ablation("V1,V2"));
    let v3 = &rows["V3"];
    let (v1, v2) = (&rows["V1"], &rows["V2"]);

    let e2e = format!(
        "mean t {mean_t:.3}; hazy {base_psnr:.2} dB / {base_ssim:.4}; V3 dehazed {:.2} dB / {:.4} (+{:.2} dB, +{:.4}); trained in {:.0} s",
        v3.psnr,
        v3.ssim,
        v3.psnr - base_psnr,
        v3.ssim - base_ssim,
        elapsed.as_secs_f64()
    );
    let e2e_ok = v3.psnr >= base_psnr + 3.0 && v3.ssim - base_ssim >= 0.05 && elapsed < Duration::from_secs(15 * 60);
    let ordering = format!(
        "PSNR V1 {:.2}, V2 {:.2}, V3 {:.2}; V3 residual {:.3e} vs untrained {:.3e}",
        v1.psnr, v2.psnr, v3.psnr, v3.residual, v3.untrained
    );
    let ordering_ok = v3.psnr >= v1.psnr && v3.psnr >= v2.psnr && v3.residual < v3.untrained;
    (check(e2e_ok, e2e.clone(), e2e), check(ordering_ok, ordering.clone(), ordering))
}

fn read_json_stdout(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn main() {
    // Under `cargo test -- --list` and similar, the harness expects no work.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let root = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        match &outcome {
            Ok(msg) => println!("PASS {n} {name}: {msg}"),
            Err(msg) => println!("FAIL {n} {name}: {msg}"),
        }
        results.push((n, name, outcome));
    };
    report(1, "gradient suite", gradients());
    report(2, "group axioms", group_axioms());
    report(3, "haze physics", physics());
    report(6, "loss weighting", weighting());
    report(9, "metrics", metrics());
    report(7, "pseudo-physics toy run", pseudo_physics(root.path()));
    report(8, "determinism", determinism(root.path()));
    let (e2e, ordering) = benchmark(root.path());
    report(4, "synthetic benchmark", e2e);
    report(5, "ablation ordering", ordering);
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    if !failed.is_empty() {
        eprintln!("acceptance criteria failed: {failed:?}");
        std::process::exit(1);
    }
}
