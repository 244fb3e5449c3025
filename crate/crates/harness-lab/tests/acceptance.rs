//! The release gate: one test per quantitative claim, each printing a single
//! PASS/FAIL line at its pinned tolerance.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use harness_lab::experiments::{run_experiment, ExperimentConfig, Report};
use harness_lab::harris::generate_events;
use harness_lab::dual::representation_residual;
use harness_lab::lattice::{Grid, HeightField, Kernel, Noise, Region};

fn gate(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n} {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {n} {name} failed: {detail}");
}

fn gate_report(n: usize, name: &str, report: &Report) {
    let detail = report
        .criteria
        .iter()
        .map(|c| format!("{}={:.3e}(<= {:.3e})", c.name, c.value, c.threshold))
        .collect::<Vec<_>>()
        .join("; ");
    gate(n, name, report.pass, &detail);
}

#[test]
fn acceptance_01_pathwise_dual_identity() {
    let mut max = 0.0_f64;
    let mut runs = 0usize;
    for d in 1..=3usize {
        for noise in [Noise::Gaussian, Noise::Uniform, Noise::Rademacher] {
            for pinned in [false, true] {
                let kernel = Kernel::nearest_neighbor(d).with_noise(noise);
                let region = if pinned {
                    Region::centered_box(d, 4).pin(vec![0; d]).unwrap()
                } else {
                    Region::centered_box(d, 4)
                };
                let grid = Grid::new(&kernel, &region).unwrap();
                let initial = HeightField::from_fn(&grid, |s| {
                    0.3 * s.iter().map(|&c| c as f64).sum::<f64>() + 0.1
                });
                let anchors = [vec![0; d], vec![1; d]];
                for seed in 0..17u64 {
                    let stream = generate_events(&grid, 5.0, 1000 + seed).unwrap();
                    for a in &anchors {
                        max = max
                            .max(representation_residual(&grid, &stream, &initial, a).unwrap());
                    }
                    runs += 1;
                }
            }
        }
    }
    gate(
        1,
        "pathwise dual identity",
        max <= 1e-9,
        &format!("max residual {max:.3e} over {runs} runs (threshold 1e-9)"),
    );
}

#[test]
fn acceptance_02_flat_start_window_variance() {
    let report = run_experiment(&ExperimentConfig::named("window-variance")).unwrap();
    gate_report(2, "flat-start window variance", &report);
}

#[test]
fn acceptance_03_difference_variance() {
    let report = run_experiment(&ExperimentConfig::named("difference-variance")).unwrap();
    gate_report(3, "pinned-neighbour difference variance", &report);
}

#[test]
fn acceptance_04_convergence_exponents() {
    let report = run_experiment(&ExperimentConfig::named("convergence-rate")).unwrap();
    gate_report(4, "convergence exponents", &report);
}

#[test]
fn acceptance_05_martingale_suite() {
    let report = run_experiment(&ExperimentConfig::named("martingale")).unwrap();
    gate_report(5, "martingale suite", &report);
}

#[test]
fn acceptance_06_gibbs_covariance() {
    let report = run_experiment(&ExperimentConfig::named("gibbs-covariance")).unwrap();
    gate_report(6, "Gibbs covariance", &report);
}

#[test]
fn acceptance_07_harness_property() {
    let report = run_experiment(&ExperimentConfig::named("harness-property")).unwrap();
    gate_report(7, "conditional-mean harness property", &report);
}

#[test]
fn acceptance_08_reversibility() {
    let report = run_experiment(&ExperimentConfig::named("detailed-balance")).unwrap();
    gate_report(8, "detailed balance with controls", &report);
}

#[test]
fn acceptance_09_stationarity_uniqueness() {
    let report = run_experiment(&ExperimentConfig::named("uniqueness-finite")).unwrap();
    gate_report(9, "stationarity and one-stream contraction", &report);
}

#[test]
fn acceptance_10_nested_coupling() {
    let report = run_experiment(&ExperimentConfig::named("space-convergence")).unwrap();
    gate_report(10, "nested-box coupling", &report);
}

#[test]
fn acceptance_11_no_noise_process() {
    let report = run_experiment(&ExperimentConfig::named("no-noise-harmonic")).unwrap();
    gate_report(11, "noise-free harmonic invariance", &report);
}
