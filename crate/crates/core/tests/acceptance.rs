//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows up even when the harness captures test output.
//! Criterion 8 (full-scale gesture/speech benchmarks, energy figures) is
//! declared out of scope and only reported.

use std::fs;
use std::io::Write;
use std::path::Path;

use reckon::harness::config::RunConfig;
use reckon::harness::validate::{
    check_memory, check_oracle_exactness, check_quantized_fidelity, check_rounding_unbiased,
};
use reckon::harness::{cmd_gen, cmd_train, TrainSummary};

fn report(id: u32, name: &str, passed: bool, detail: &str) {
    line(id, name, if passed { "PASS" } else { "FAIL" }, detail);
}

fn line(id: u32, name: &str, verdict: &str, detail: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id} [{name}]: {verdict} ({detail})");
}

fn train_seed(seed: u64, dir: &Path) -> TrainSummary {
    let mut cfg = RunConfig::default();
    cfg.train.seed = seed;
    cfg.output.dir = dir.to_path_buf();
    cmd_train(&cfg).expect("training run")
}

/// Criteria 1 and 2 share the three default navigation runs.
fn navigation_criteria() -> (bool, bool) {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<(u64, TrainSummary)> = (1..=3)
        .map(|seed| (seed, train_seed(seed, &tmp.path().join(format!("seed{seed}")))))
        .collect();

    let accs: Vec<f64> = runs.iter().map(|(_, s)| s.heldout.accuracy).collect();
    let n_pass = accs.iter().filter(|&&a| a >= 0.90).count();
    let all_512 = runs.iter().all(|(_, s)| s.heldout.trials == 512);
    let c1 = n_pass >= 2 && all_512;
    let detail = runs
        .iter()
        .map(|(seed, s)| format!("seed {seed}: {:.4} after {} epochs", s.heldout.accuracy, s.epochs_run))
        .collect::<Vec<_>>()
        .join(", ");
    report(1, "navigation accuracy", c1, &format!("{detail}; {n_pass}/3 >= 0.90 over 512 held-out trials"));

    let skips: Vec<Option<f64>> = runs.iter().map(|(_, s)| s.final_skip_rate).collect();
    let c2 = skips
        .iter()
        .all(|r| r.is_some_and(|r| (0.65..=0.95).contains(&r)));
    let detail = skips
        .iter()
        .map(|r| r.map_or("none".into(), |r| format!("{r:.3}")))
        .collect::<Vec<_>>()
        .join(", ");
    report(2, "skip rate", c2, &format!("final skip rates {detail}; band [0.65, 0.95]"));
    (c1, c2)
}

type Files = Vec<(String, Vec<u8>)>;

fn tree_bytes(dir: &Path, skip: &[&str]) -> Files {
    let mut files: Files = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .filter(|(name, _)| !skip.contains(&name.as_str()))
        .map(|(name, p)| (name, fs::read(p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Run train and gen into fixed directories and snapshot every byte;
/// `timing.jsonl` (wall clock) is the only file left out.
fn snapshot(cfg: &RunConfig, root: &Path) -> (Files, Files) {
    let mut c = cfg.clone();
    let (train_dir, gen_dir) = (root.join("train"), root.join("gen"));
    for d in [&train_dir, &gen_dir] {
        let _ = fs::remove_dir_all(d);
    }
    c.output.dir = train_dir.clone();
    cmd_train(&c).unwrap();
    c.output.dir = gen_dir.clone();
    cmd_gen(&c).unwrap();
    (tree_bytes(&train_dir, &["timing.jsonl"]), tree_bytes(&gen_dir, &[]))
}

fn determinism() -> bool {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 4;
    cfg.train.trials_per_epoch = 8;
    cfg.train.heldout_trials = 32;
    cfg.train.seed = 11;
    cfg.train.threads = 1;
    cfg.gen.n_trials = 12;

    let (train_a, gen_a) = snapshot(&cfg, tmp.path());
    let (train_b, gen_b) = snapshot(&cfg, tmp.path());
    let has = |files: &Files, name: &str| files.iter().any(|(n, _)| n == name);
    let complete = ["metrics.jsonl", "checkpoint.bin", "summary.json"]
        .iter()
        .all(|n| has(&train_a, n))
        && gen_a.len() == 13;
    let repeat_ok = complete && train_a == train_b && gen_a == gen_b;

    // Evaluation threads must not change any result; config.toml records
    // the thread count itself and is left out of this comparison.
    cfg.train.threads = 2;
    let (train_c, _) = snapshot(&cfg, tmp.path());
    let strip = |f: &Files| -> Files { f.iter().filter(|(n, _)| n != "config.toml").cloned().collect() };
    let threads_ok = strip(&train_a) == strip(&train_c);

    let ok = repeat_ok && threads_ok;
    report(
        7,
        "determinism",
        ok,
        &format!(
            "{} training artifacts and {} generated files byte-identical across two runs: {repeat_ok}; \
             unchanged with 2 evaluation threads: {threads_ok}",
            train_a.len(),
            gen_a.len()
        ),
    );
    ok
}

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();

    let (c1, c2) = navigation_criteria();
    if !c1 {
        failed.push(1);
    }
    if !c2 {
        failed.push(2);
    }

    let checks = [
        (3, "memory overhead", check_memory()),
        (4, "oracle exactness", check_oracle_exactness()),
        (5, "quantized fidelity", check_quantized_fidelity()),
        (6, "stochastic rounding", check_rounding_unbiased()),
    ];
    for (id, name, c) in checks {
        report(id, name, c.passed, &c.detail);
        if !c.passed {
            failed.push(id);
        }
    }

    if !determinism() {
        failed.push(7);
    }

    line(
        8,
        "full-scale benchmarks",
        "OUT OF SCOPE",
        "declared out of scope: gesture/speech datasets and energy figures are not reproduced",
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
