//! Acceptance report: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Run with `cargo test -p tbd-core --test acceptance`.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use common::Check;
use tbd_core::config::PipelineConfig;
use tbd_core::experiment::{run_synthetic_experiment, ExperimentRun};
use tbd_core::gradsuite::run_suite;

const GRAD_SEEDS: u64 = 20;
const GRAD_MAX_REL_ERROR: f64 = 1e-4;
const GRAD_TIME_LIMIT_S: f64 = 120.0;
const E2E_TRAIN: usize = 40;
const E2E_TEST: usize = 10;
const E2E_MIN_DICE: f64 = 0.85;
const E2E_MIN_F1: f64 = 0.90;
const E2E_TIME_LIMIT_S: f64 = 600.0;

fn gradient_suite() -> Check {
    let start = Instant::now();
    let report = run_suite(0, GRAD_SEEDS).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let worst = report.max_rel_error();
    if let Some(f) = report.failures().next() {
        return Err(format!(
            "{} (seed {}) failed: max relative error {:.3e} at {:?}",
            f.name, f.seed, f.report.max_rel_error, f.report.worst
        ));
    }
    if worst >= GRAD_MAX_REL_ERROR {
        return Err(format!("max relative error {worst:.3e} ≥ {GRAD_MAX_REL_ERROR:e}"));
    }
    if elapsed >= GRAD_TIME_LIMIT_S {
        return Err(format!("took {elapsed:.1} s (limit {GRAD_TIME_LIMIT_S} s)"));
    }
    let checked: usize = report.entries.iter().map(|e| e.report.checked).sum();
    Ok(format!(
        "{} cases over {GRAD_SEEDS} seeds, {checked} coordinates, max relative error {worst:.2e}, {elapsed:.1} s",
        report.entries.len()
    ))
}

fn end_to_end(run: &Result<ExperimentRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let s = &run.summary;
    let dice = s.segmentation.dice;
    let f1 = s.detection_f1.ok_or("detection F1 undefined")?;
    let secs = run.elapsed.as_secs_f64();
    let detail = format!(
        "test Dice {dice:.4} (≥ {E2E_MIN_DICE}), detection F1 {f1:.4} (≥ {E2E_MIN_F1}), Otsu Dice {:.4}, {secs:.0} s (≤ {E2E_TIME_LIMIT_S} s)",
        s.otsu.dice
    );
    if dice >= E2E_MIN_DICE && f1 >= E2E_MIN_F1 && s.otsu.dice < dice && secs <= E2E_TIME_LIMIT_S {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn files_below(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable run directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(a: &Result<ExperimentRun, String>, b: &Result<ExperimentRun, String>) -> Check {
    let (a, b) = (a.as_ref().map_err(Clone::clone)?, b.as_ref().map_err(Clone::clone)?);
    let (fa, fb) = (files_below(&a.out_dir), files_below(&b.out_dir));
    if fa != fb {
        return Err(format!("runs wrote different file sets: {fa:?} vs {fb:?}"));
    }
    for rel in &fa {
        let (x, y) = (fs::read(a.out_dir.join(rel)), fs::read(b.out_dir.join(rel)));
        if x.map_err(|e| e.to_string())? != y.map_err(|e| e.to_string())? {
            return Err(format!("{} differs between runs", rel.display()));
        }
    }
    Ok(format!(
        "{} files byte-identical (epoch logs, checkpoints, reports, data)",
        fa.len()
    ))
}

fn report(failed: &mut usize, n: usize, title: &str, check: Check) {
    match check {
        Ok(detail) => println!("[PASS] {n:>2}. {title}: {detail}"),
        Err(detail) => {
            *failed += 1;
            println!("[FAIL] {n:>2}. {title}: {detail}");
        }
    }
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut failed = 0;
    report(&mut failed, 1, "patch arithmetic", common::check_microscope_patch_counts());
    report(&mut failed, 2, "detection-rate formulas", common::check_rate_formulas());
    report(&mut failed, 3, "gradient oracle suite", gradient_suite());
    report(&mut failed, 4, "tiling roundtrip", common::check_tiling_roundtrip(100, 1));
    report(&mut failed, 5, "component oracle", common::check_components(200, 2));
    report(&mut failed, 6, "segmentation-metric oracle", common::check_seg_metrics(100, 3));
    report(&mut failed, 7, "focal-loss collapse", common::check_focal_collapse(100, 4));
    report(&mut failed, 8, "Otsu oracle", common::check_otsu(100, 5));

    let cfg = PipelineConfig::desk();
    let run = |name: &str| {
        run_synthetic_experiment(&cfg, E2E_TRAIN, E2E_TEST, &scratch.path().join(name)).map_err(|e| e.to_string())
    };
    let first = run("run_a");
    report(&mut failed, 9, "synthetic end-to-end run", end_to_end(&first));
    report(
        &mut failed,
        10,
        "checkpoint fidelity",
        common::check_checkpoint_fidelity(&scratch.path().join("checkpoints")),
    );
    let second = run("run_b");
    report(&mut failed, 11, "determinism", determinism(&first, &second));

    if failed == 0 {
        println!("acceptance: all 11 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 11 criteria failed");
        ExitCode::FAILURE
    }
}
