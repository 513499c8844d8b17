//! Exit criteria, one test each. Every test writes a single
//! `[acceptance] NN name ... PASS|FAIL (details)` line to stderr, bypassing
//! the test harness's output capture, and then asserts the same condition.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use condlora_core::adapters::{delta_w, init_params, merge};
use condlora_core::analysis::{
    conversion_a, conversion_b, random_baseline_grid, subspace_similarity, Side,
};
use condlora_core::io::{read_adapter, read_model};
use condlora_core::linalg::svd;
use condlora_core::model::{build_model, forward};
use condlora_core::rng::{derive_seed, Rng};
use condlora_core::{
    build_task, AdapterParams, AdapterSpec, AdapterState, BaseWeights, Matrix, Method, ModelConfig,
    TaskKind, TaskOptions,
};

fn report(id: u32, name: &str, pass: bool, details: &str) {
    let line = format!(
        "[acceptance] {id:02} {name:<32} {} ({details})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_condlora"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn condlora")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn work_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

/// Trains once per (method, seed) through the CLI with model, adapter and
/// data seeds all equal to `seed`, returning the output directory.
fn trained(method: Method, seed: u64) -> PathBuf {
    static RUNS: OnceLock<Mutex<HashMap<(Method, u64), PathBuf>>> = OnceLock::new();
    let mut runs = RUNS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    if let Some(dir) = runs.get(&(method, seed)) {
        return dir.clone();
    }
    let dir = work_dir().join(format!("{}-{seed}", method.name()));
    let s = seed.to_string();
    let o = run(bin()
        .arg("train")
        .args(["--method", method.name()])
        .args(["--seed-model", &s, "--seed-adapter", &s, "--seed-data", &s])
        .arg("--out")
        .arg(&dir));
    assert!(
        o.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    runs.insert((method, seed), dir.clone());
    dir
}

struct RunSummary {
    initial: f64,
    final_loss: f64,
    params: usize,
    seconds: f64,
    steps: usize,
}

fn summary(dir: &Path) -> RunSummary {
    let text = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let mut fields = HashMap::new();
    let mut steps = 0;
    for line in text.lines().skip(1) {
        if line.starts_with(|c: char| c.is_ascii_digit()) && !line.contains('=') {
            steps += 1;
            continue;
        }
        for kv in line.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = kv.split_once('=') {
                fields.insert(k.to_string(), v.to_string());
            }
        }
    }
    let get = |k: &str| {
        fields
            .get(k)
            .unwrap_or_else(|| panic!("missing {k}"))
            .clone()
    };
    RunSummary {
        initial: get("initial_loss").parse().unwrap(),
        final_loss: get("final_loss").parse().unwrap(),
        params: get("params").parse().unwrap(),
        seconds: get("seconds").parse().unwrap(),
        steps,
    }
}

fn load(dir: &Path) -> (BaseWeights, AdapterSpec, AdapterParams) {
    let weights = read_model(&dir.join("model.ckpt")).unwrap();
    let (spec, params) = read_adapter(&dir.join("adapter.ckpt")).unwrap();
    (weights, spec, params)
}

fn avg_offdiag(stdout: &str, file: &str) -> f64 {
    stdout
        .lines()
        .find(|l| l.starts_with(file))
        .and_then(|l| {
            l.split_whitespace()
                .find_map(|kv| kv.strip_prefix("avg_offdiag="))
        })
        .unwrap_or_else(|| panic!("no {file} line in:\n{stdout}"))
        .parse()
        .unwrap()
}

#[test]
fn c01_parameter_counts() {
    let t = Instant::now();
    let o = run(bin().args(["count-params", "--paper-dims"]));
    let secs = t.elapsed().as_secs_f64();
    let text = stdout(&o);
    let count = |method: &str| -> Option<u64> {
        text.lines()
            .find(|l| l.split_whitespace().next() == Some(method))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse().ok())
    };
    let (lora, cond) = (count("lora"), count("condlora"));
    let ratio_ok = text.lines().any(|l| l.trim() == "ratio=12");
    let pass = o.status.success()
        && lora == Some(294_912)
        && cond == Some(24_576)
        && ratio_ok
        && secs < 1.0;
    report(
        1,
        "parameter counts",
        pass,
        &format!("lora={lora:?} condlora={cond:?} ratio12={ratio_ok} {secs:.3}s"),
    );
    assert!(pass, "{text}");
}

#[test]
fn c02_random_baseline_at_full_scale() {
    let t = Instant::now();
    let mut total = 0.0;
    for seed in 0..10 {
        let grid = random_baseline_grid(768, 8, 12, 8, 8, Side::Left, seed).unwrap();
        total += grid.average_offdiagonal;
    }
    let mean = total / 10.0;
    let secs = t.elapsed().as_secs_f64();
    let pass = mean < 0.01 && secs < 10.0;
    report(
        2,
        "random baseline 768x8",
        pass,
        &format!(
            "mean avg_offdiag={mean:.6} threshold<0.01 expected=8/768={:.6} {secs:.2}s",
            8.0 / 768.0
        ),
    );
    assert!(pass, "mean off-diagonal similarity {mean}");
}

#[test]
fn c03_similarity_properties() {
    let t = Instant::now();
    let mut rng = Rng::new(3);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    while cases < 1000 {
        let rows = 2 + rng.below(30);
        let cols = 1 + rng.below(10);
        let side = if rng.below(2) == 0 {
            Side::Left
        } else {
            Side::Right
        };
        let k = rows.min(cols);
        let i = 1 + rng.below(k);
        let j = 1 + rng.below(k);
        let x = Matrix::gaussian_from(rows, cols, 0.0, 1.0, &mut rng);
        let y = Matrix::gaussian_from(rows, cols, 0.0, 1.0, &mut rng);
        let phi = subspace_similarity(&x, &y, i, j, side).unwrap();
        let back = subspace_similarity(&y, &x, j, i, side).unwrap();
        let own = subspace_similarity(&x, &x, i, i, side).unwrap();
        let mut errs = vec![(phi - back).abs(), (own - 1.0).abs()];
        for c in [-3.0, 0.5, 10.0] {
            errs.push((subspace_similarity(&x.scale(c), &y, i, j, side).unwrap() - phi).abs());
        }
        let e = errs.iter().cloned().fold(0.0, f64::max);
        worst = worst.max(e);
        if !(0.0..=1.0).contains(&phi) || e > 1e-9 {
            failures.push((cases, phi, e));
        }
        cases += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 30.0;
    report(
        3,
        "similarity properties",
        pass,
        &format!(
            "cases={cases} failures={} worst_err={worst:.2e} {secs:.2}s",
            failures.len()
        ),
    );
    assert!(pass, "{failures:?}");
}

#[test]
fn c04_conversion_round_trip() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = Rng::new(derive_seed(4, case));
        let n = 8 + rng.below(57);
        let r = 1 + rng.below(8);
        let w0 = Matrix::gaussian_from(n, n, 0.0, 1.0, &mut rng)
            .add(&Matrix::identity(n).scale(2.0 * (n as f64).sqrt()))
            .unwrap();
        let a = Matrix::gaussian_from(r, n, 0.0, 1.0, &mut rng);
        let b = Matrix::gaussian_from(n, r, 0.0, 1.0, &mut rng);
        let ca = conversion_a(&w0, &a, false).unwrap();
        let cb = conversion_b(&w0, &b, false).unwrap();
        let at = a.transpose();
        let ea = w0.matmul(&ca).unwrap().sub(&at).unwrap().frobenius_norm() / at.frobenius_norm();
        let eb = w0.matmul(&cb).unwrap().sub(&b).unwrap().frobenius_norm() / b.frobenius_norm();
        worst = worst.max(ea).max(eb);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst < 1e-8 && secs < 30.0;
    report(
        4,
        "conversion round trip",
        pass,
        &format!("cases=100 worst_rel={worst:.2e} {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn c05_gradient_oracle() {
    let t = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for method in ["lora", "condlora"] {
        let o = run(bin().args(["gradcheck", "--method", method, "--trials", "20"]));
        let text = stdout(&o);
        let tensor_lines = text.lines().filter(|l| l.contains("max_rel_err=")).count();
        let worst = text.lines().last().unwrap_or("").to_string();
        pass &= o.status.success() && tensor_lines > 0 && worst.starts_with("PASS");
        details.push(format!("{method}: {tensor_lines} tensor checks, {worst}"));
    }
    let negative = run(bin().args(["gradcheck", "--method", "condlora", "--perturb"]));
    let caught = negative.status.code() == Some(2);
    let secs = t.elapsed().as_secs_f64();
    pass &= caught && secs < 120.0;
    report(
        5,
        "gradient oracle",
        pass,
        &format!(
            "{}; perturbed exit={:?} {secs:.1}s",
            details.join("; "),
            negative.status.code()
        ),
    );
    assert!(pass);
}

#[test]
fn c06_zero_init_equivalence() {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5u64 {
        let weights = build_model(&ModelConfig {
            seed,
            ..ModelConfig::default()
        })
        .unwrap();
        let task = build_task(TaskKind::Teacher, &weights, &TaskOptions::default(), seed).unwrap();
        let batch = task.batch(0, 16).unwrap();
        let base = forward(&weights, None, &batch.tokens).unwrap().logits;
        for method in [Method::Lora, Method::CondLora] {
            let spec = AdapterSpec::new(method, 4, 4);
            let params = init_params(&spec, 32, seed);
            let state = AdapterState::materialize(&params, &spec, &weights).unwrap();
            let logits = forward(&weights, Some(&state), &batch.tokens)
                .unwrap()
                .logits;
            worst = worst.max(base.max_abs_diff(&logits));
            checked += 1;
        }
    }
    let pass = worst == 0.0;
    report(
        6,
        "zero-init equivalence",
        pass,
        &format!("runs={checked} max_abs_diff={worst:e}"),
    );
    assert!(pass);
}

#[test]
fn c07_merge_equivalence() {
    let mut details = Vec::new();
    let mut pass = true;
    for method in [Method::Lora, Method::CondLora] {
        let (weights, spec, params) = load(&trained(method, 0));
        let state = AdapterState::materialize(&params, &spec, &weights).unwrap();
        let merged = merge(&weights, &params, &spec).unwrap();
        let task = build_task(TaskKind::Teacher, &weights, &TaskOptions::default(), 7).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            let batch = task.eval_batch(i, 16).unwrap();
            let a = forward(&weights, Some(&state), &batch.tokens)
                .unwrap()
                .logits;
            let m = forward(&merged, None, &batch.tokens).unwrap().logits;
            worst = worst.max(a.max_abs_diff(&m));
        }
        pass &= worst < 1e-9;
        details.push(format!("{}={worst:.2e}", method.name()));
    }
    report(7, "merge equivalence", pass, &details.join(" "));
    assert!(pass);
}

#[test]
fn c08_rank_bound() {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for method in [Method::Lora, Method::CondLora] {
        let (weights, spec, params) = load(&trained(method, 0));
        for (m, l) in spec.targets() {
            let dw = delta_w(&params, &spec, weights.projection(m, l).unwrap(), m, l).unwrap();
            let s = svd(&dw).unwrap().s;
            worst = worst.max(s[spec.rank] / dw.frobenius_norm());
            count += 1;
        }
    }
    let pass = worst < 1e-9;
    report(
        8,
        "rank bound",
        pass,
        &format!("deltas={count} max s_(r+1)/||dW||_F={worst:.2e}"),
    );
    assert!(pass);
}

#[test]
fn c09_training_parity() {
    let lora = summary(&trained(Method::Lora, 0));
    let cond = summary(&trained(Method::CondLora, 0));
    let lora_ratio = lora.final_loss / lora.initial;
    let cond_ratio = cond.final_loss / cond.initial;
    let gap = cond.final_loss / lora.final_loss;
    let seconds = lora.seconds + cond.seconds;
    let pass = lora.steps == 2000
        && cond.steps == 2000
        && lora_ratio <= 0.1
        && cond_ratio <= 0.1
        && gap <= 2.0
        && lora.params == 2048
        && cond.params == 512
        && seconds < 300.0;
    report(
        9,
        "teacher training parity",
        pass,
        &format!(
            "lora final/initial={lora_ratio:.4} condlora={cond_ratio:.4} condlora/lora final={gap:.2} \
             params={}/{} {seconds:.1}s",
            lora.params, cond.params
        ),
    );
    assert!(pass);
}

#[test]
fn c10_conversion_grid_signal() {
    let mut conv_a = 0.0;
    let mut conv_b = 0.0;
    let mut baseline = 0.0;
    for seed in 0..3u64 {
        let dir = trained(Method::Lora, seed);
        let o = run(bin()
            .arg("analyze")
            .arg(dir.join("adapter.ckpt"))
            .args(["--seed-data", &seed.to_string()])
            .arg("--out")
            .arg(dir.join("analysis")));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = stdout(&o);
        conv_a += avg_offdiag(&text, "conv_A_value.csv") / 3.0;
        conv_b += avg_offdiag(&text, "conv_B_value.csv") / 3.0;
        baseline += avg_offdiag(&text, "random_baseline.csv") / 3.0;
    }
    let pass = conv_a > baseline && conv_b > baseline;
    report(
        10,
        "conversion grid signal",
        pass,
        &format!("value conv_A={conv_a:.4} conv_B={conv_b:.4} random={baseline:.4} (3 seeds)"),
    );
    assert!(pass);
}

#[test]
fn c11_throughput_report() {
    let o = run(bin().args(["bench", "--seconds", "2"]));
    let text = stdout(&o);
    let value = |method: &str| -> Option<f64> {
        text.lines()
            .find(|l| l.split_whitespace().next() == Some(method))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse().ok())
    };
    let (lora, cond) = (value("lora"), value("condlora"));
    let pass = o.status.success() && lora.is_some_and(|v| v > 0.0) && cond.is_some_and(|v| v > 0.0);
    report(
        11,
        "throughput report",
        pass,
        &format!("examples/s lora={lora:?} condlora={cond:?}"),
    );
    assert!(pass, "{text}");
}
