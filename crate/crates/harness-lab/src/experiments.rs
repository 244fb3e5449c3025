//! Seeded, tolerance-checked experiments and their reports.
//!
//! Each registered experiment reproduces one quantitative claim by comparing
//! a code path against an oracle that is not the code path under test:
//! engine vs dual weights, Monte Carlo vs uniformization, sampled fields vs
//! linear-solve covariances, and so on. Reports are reproducible from
//! `(config, seed)` up to the timestamp field.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{backward_weights, martingale_increments, representation_residual};
use crate::dwalk::{mc_profile, DWalkLaw, UniformizedWalk};
use crate::error::{Error, Result};
use crate::gibbs::{
    build_model, conditional_mean_weights, coupled_nested_fields, detailed_balance_statistic,
    sample_field, Dynamics, Probe,
};
use crate::harris::{evolve, generate_events, Variant};
use crate::lattice::{Boundary, Grid, HeightField, Kernel, Region, Site};
use crate::stats::fit_power_law;

/// Run configuration, deserialized from the JSON file given to the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub kernel: Option<Kernel>,
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default)]
    pub s_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub replicas: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub anchor: Option<Site>,
    #[serde(default)]
    pub trunc_radius: Option<i32>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn named(experiment: &str) -> Self {
        ExperimentConfig {
            experiment: experiment.to_string(),
            kernel: None,
            region: None,
            window: None,
            s_grid: None,
            replicas: None,
            seed: None,
            anchor: None,
            trunc_radius: None,
            tol: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::SchemaError(e.to_string()))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }
}

/// One pass/fail check inside a report.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub name: String,
    /// The measured quantity the threshold applies to.
    pub value: f64,
    /// Pass iff `value <= threshold`.
    pub threshold: f64,
    pub pass: bool,
    /// Human-readable numbers behind the check.
    pub note: String,
}

fn crit(name: &str, value: f64, threshold: f64, note: String) -> CriterionResult {
    CriterionResult {
        name: name.to_string(),
        value,
        threshold,
        pass: value <= threshold,
        note,
    }
}

/// Result of one experiment run.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    /// Which identity or property the experiment exercises.
    pub anchor: String,
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    pub pass: bool,
    pub timestamp: u64,
}

type ExperimentOutput = (String, Vec<CriterionResult>, Vec<(String, String)>);

/// Names accepted by [`run_experiment`].
pub const EXPERIMENTS: &[&str] = &[
    "representation-check",
    "martingale",
    "window-variance",
    "difference-variance",
    "convergence-rate",
    "space-convergence",
    "gibbs-covariance",
    "detailed-balance",
    "harness-property",
    "no-noise-harmonic",
    "uniqueness-finite",
];

/// Dispatch a config to its experiment, assemble the report, and write the
/// report plus CSV data files when an output directory is configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let (anchor, criteria, csvs) = match config.experiment.as_str() {
        "representation-check" => representation_check(config)?,
        "martingale" => martingale(config)?,
        "window-variance" => window_variance_exp(config)?,
        "difference-variance" => difference_variance_exp(config)?,
        "convergence-rate" => convergence_rate(config)?,
        "space-convergence" => space_convergence(config)?,
        "gibbs-covariance" => gibbs_covariance(config)?,
        "detailed-balance" => detailed_balance_exp(config)?,
        "harness-property" => harness_property(config)?,
        "no-noise-harmonic" => no_noise_harmonic(config)?,
        "uniqueness-finite" => uniqueness_finite(config)?,
        other => return Err(Error::UnknownExperiment(other.to_string())),
    };
    let pass = criteria.iter().all(|c| c.pass);
    let report = Report {
        schema_version: 1,
        experiment: config.experiment.clone(),
        anchor,
        seed: config.seed(),
        criteria,
        pass,
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::SchemaError(e.to_string()))?;
        fs::write(dir.join("report.json"), json + "\n")?;
        if !csvs.is_empty() {
            let data = dir.join("data");
            fs::create_dir_all(&data)?;
            for (name, content) in &csvs {
                fs::write(data.join(name), content)?;
            }
        }
    }
    Ok(report)
}

fn default_kernel(config: &ExperimentConfig, d: usize) -> Kernel {
    config
        .kernel
        .clone()
        .unwrap_or_else(|| Kernel::nearest_neighbor(d))
}

fn default_region(config: &ExperimentConfig, fallback: Region) -> Region {
    config.region.clone().unwrap_or(fallback)
}

fn spread_sites(grid: &Grid, n: usize) -> Vec<Site> {
    let len = grid.len();
    let m = n.min(len).max(1);
    (0..m)
        .map(|k| grid.sites()[k * (len - 1) / (m - 1).max(1)].clone())
        .collect()
}

// ---------------------------------------------------------------------------
// 1. representation-check
// ---------------------------------------------------------------------------

fn representation_check(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kernel = default_kernel(config, 2);
    let region = default_region(config, Region::centered_box(kernel.dimension(), 3));
    let window = config.window.unwrap_or(5.0);
    let replicas = config.replicas.unwrap_or(100);
    let seed = config.seed();
    let grid = Grid::new(&kernel, &region)?;
    let anchors = spread_sites(&grid, 5);
    let initial = HeightField::from_fn(&grid, |s| {
        0.1 * s.iter().enumerate().map(|(k, &c)| (k as i32 + 1) * c).sum::<i32>() as f64
    });
    let residuals: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let stream = generate_events(&grid, window, seed.wrapping_add(r as u64))?;
            let mut worst = 0.0_f64;
            for anchor in &anchors {
                worst = worst.max(representation_residual(&grid, &stream, &initial, anchor)?);
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let max = residuals.iter().cloned().fold(0.0, f64::max);
    let criteria = vec![crit(
        "max forward-vs-dual residual",
        max,
        1e-9,
        format!("{replicas} seeds, {} anchors, window {window}", anchors.len()),
    )];
    let csv = residuals
        .iter()
        .enumerate()
        .map(|(r, x)| format!("{r},{x:e}\n"))
        .collect::<String>();
    Ok((
        "pathwise identity: engine height equals the backward-weight noise sum".into(),
        criteria,
        vec![("residuals.csv".into(), format!("seed,residual\n{csv}"))],
    ))
}

// ---------------------------------------------------------------------------
// 2. martingale
// ---------------------------------------------------------------------------

fn martingale(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kernel = default_kernel(config, 1);
    let region = default_region(config, Region::centered_box(kernel.dimension(), 6));
    let window = config.window.unwrap_or(40.0);
    let spans = config
        .s_grid
        .clone()
        .unwrap_or_else(|| vec![2.0, 5.0, 10.0, 20.0, 30.0, 40.0]);
    let replicas = config.replicas.unwrap_or(10_000);
    let seed = config.seed();
    let anchor = config
        .anchor
        .clone()
        .unwrap_or_else(|| vec![0; kernel.dimension()]);
    let grid = Grid::new(&kernel, &region)?;
    // a nested enclosing box for the spatial monotonicity half
    let big_region = {
        let d = kernel.dimension();
        let r = region
            .carrier()
            .iter()
            .flat_map(|s| s.iter().map(|c| c.abs()))
            .max()
            .unwrap_or(1);
        Region::new(vec![-(r + 4); d], vec![r + 4; d], Boundary::Fixed)?
    };
    let big_grid = Grid::new(&kernel, &big_region)?;

    struct Acc {
        inc_sum: Vec<f64>,
        inc_sum2: Vec<f64>,
        var_violations: usize,
        box_violations: usize,
    }
    let acc = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let s = seed.wrapping_add(r as u64);
            let stream = generate_events(&grid, window, s)?;
            let (_, increments) = martingale_increments(&grid, &stream, &anchor, &spans)?;
            // exact conditional variances are pathwise monotone in the span
            let mut prev = -1.0;
            let mut var_violations = 0;
            let mut last_small = 0.0;
            for &sp in &spans {
                let w = backward_weights(&grid, &stream, &anchor, window - sp, window)?;
                let v = w.conditional_noise_variance(grid.sigma());
                if v < prev - 1e-12 {
                    var_violations += 1;
                }
                prev = v;
                last_small = v;
            }
            // and monotone in the box, on shared per-site streams
            let big_stream = generate_events(&big_grid, window, s)?;
            let wb = backward_weights(&big_grid, &big_stream, &anchor, 0.0, window)?;
            let v_big = wb.conditional_noise_variance(big_grid.sigma());
            let box_violations = usize::from(last_small > v_big + 1e-12);
            Ok::<Acc, Error>(Acc {
                inc_sum: increments.clone(),
                inc_sum2: increments.iter().map(|x| x * x).collect(),
                var_violations,
                box_violations,
            })
        })
        .try_reduce(
            || Acc {
                inc_sum: vec![0.0; spans.len()],
                inc_sum2: vec![0.0; spans.len()],
                var_violations: 0,
                box_violations: 0,
            },
            |mut a, b| {
                for (x, y) in a.inc_sum.iter_mut().zip(&b.inc_sum) {
                    *x += y;
                }
                for (x, y) in a.inc_sum2.iter_mut().zip(&b.inc_sum2) {
                    *x += y;
                }
                a.var_violations += b.var_violations;
                a.box_violations += b.box_violations;
                Ok(a)
            },
        )?;
    let n = replicas as f64;
    let mut max_ratio = 0.0_f64;
    let mut csv = String::from("span,increment_mean,increment_se\n");
    for (m, &sp) in spans.iter().enumerate() {
        let mean = acc.inc_sum[m] / n;
        let var = ((acc.inc_sum2[m] - acc.inc_sum[m] * acc.inc_sum[m] / n) / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        if se > 0.0 {
            max_ratio = max_ratio.max(mean.abs() / se);
        }
        csv.push_str(&format!("{sp},{mean},{se}\n"));
    }
    let criteria = vec![
        crit(
            "max |increment mean| / SE",
            max_ratio,
            3.0,
            format!("{} spans, {replicas} replicas", spans.len()),
        ),
        crit(
            "window-monotonicity violations",
            acc.var_violations as f64,
            0.0,
            "exact conditional variances, pathwise".into(),
        ),
        crit(
            "box-monotonicity violations",
            acc.box_violations as f64,
            0.0,
            "shared per-site streams, nested boxes".into(),
        ),
    ];
    Ok((
        "windowed heights form a martingale in the span; weights grow with window and box".into(),
        criteria,
        vec![("increments.csv".into(), csv)],
    ))
}

// ---------------------------------------------------------------------------
// 3. window-variance
// ---------------------------------------------------------------------------

fn window_variance_exp(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kernel = default_kernel(config, 3);
    let d = kernel.dimension();
    let region = default_region(config, Region::centered_box(d, 10));
    let window = config.window.unwrap_or(20.0);
    let replicas = config.replicas.unwrap_or(10_000);
    let seed = config.seed();
    let anchor = config.anchor.clone().unwrap_or_else(|| vec![0; d]);
    let grid = Grid::new(&kernel, &region)?;
    let a = grid
        .site_index(&anchor)
        .ok_or_else(|| Error::AnchorOutsideCarrier(anchor.clone()))?;
    let initial = HeightField::flat(grid.len(), 0.0);
    let heights: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let stream = generate_events(&grid, window, seed.wrapping_add(r as u64))?;
            let out = evolve(&grid, &stream, &initial, Variant::Standard, &[])?;
            Ok(out.last.values[a])
        })
        .collect::<Result<_>>()?;
    let n = heights.len() as f64;
    let mean = heights.iter().sum::<f64>() / n;
    let m2 = heights.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = heights.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    let var_se = (((m4 - m2 * m2) / n).max(0.0)).sqrt();

    let law = DWalkLaw::new(&kernel)?;
    let walk = UniformizedWalk::new(
        &law,
        &vec![0; d],
        window,
        config.trunc_radius.or(Some(40)),
        config.tol.unwrap_or(1e-6),
    )?;
    let exact = walk.integral(window)?;
    let sigma2 = kernel.sigma() * kernel.sigma();
    let target = sigma2 * exact.value;
    let gap = (var - target).abs();
    let criteria = vec![crit(
        "|engine MC variance - occupation integral|",
        gap,
        3.0 * var_se,
        format!(
            "mc {var:.4} +- {var_se:.4}, integral {target:.4} (leakage {:.1e})",
            exact.radius
        ),
    )];
    Ok((
        "flat-start variance equals the origin occupation-time integral of the difference walk"
            .into(),
        criteria,
        vec![(
            "window_variance.csv".into(),
            format!("window,mc_var,mc_se,integral\n{window},{var},{var_se},{target}\n"),
        )],
    ))
}

// ---------------------------------------------------------------------------
// 4. difference-variance
// ---------------------------------------------------------------------------

fn difference_variance_exp(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kernel = default_kernel(config, 1);
    let d = kernel.dimension();
    let region = default_region(
        config,
        Region::centered_box(d, 100).pin(vec![0; d])?,
    );
    let windows = config
        .s_grid
        .clone()
        .unwrap_or_else(|| vec![50.0, 100.0, 200.0, 400.0]);
    let replicas = config.replicas.unwrap_or(3000);
    let seed = config.seed();
    let anchor = config.anchor.clone().unwrap_or_else(|| {
        let mut s = vec![0; d];
        s[0] = 1;
        s
    });
    let grid = Grid::new(&kernel, &region)?;
    let a = grid
        .site_index(&anchor)
        .ok_or_else(|| Error::AnchorOutsideCarrier(anchor.clone()))?;
    let horizon = windows.iter().cloned().fold(0.0, f64::max);
    let initial = HeightField::flat(grid.len(), 0.0);
    let per_window: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let stream = generate_events(&grid, horizon, seed.wrapping_add(r as u64))?;
            let out = evolve(&grid, &stream, &initial, Variant::Standard, &windows)?;
            Ok(out.snapshots.iter().map(|(_, f)| f.values[a]).collect::<Vec<f64>>())
        })
        .collect::<Result<_>>()?;
    let n = replicas as f64;
    let mut csv = String::from("window,variance,se\n");
    let mut final_var = 0.0;
    let mut final_se = 0.0;
    for (w, &tau) in windows.iter().enumerate() {
        let xs: Vec<f64> = per_window.iter().map(|v| v[w]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let var = m2 * n / (n - 1.0);
        let se = (((m4 - m2 * m2) / n).max(0.0)).sqrt();
        csv.push_str(&format!("{tau},{var},{se}\n"));
        final_var = var;
        final_se = se;
    }
    // oracle: the pinned Gibbs variance at the anchor on the same box
    let model = build_model(&kernel, &region)?;
    let fa = model.free_index(&anchor).expect("anchor is free");
    let oracle = model.covariance()[(fa, fa)];
    let limit = 2.0 * anchor.iter().map(|&c| c.abs() as f64).sum::<f64>();
    let criteria = vec![
        crit(
            "|final MC variance - Green oracle|",
            (final_var - oracle).abs(),
            3.0 * final_se,
            format!("mc {final_var:.4} +- {final_se:.4}, oracle {oracle:.4}"),
        ),
        crit(
            "|final MC variance - limit|",
            (final_var - limit).abs(),
            3.0 * final_se + (limit - oracle).abs(),
            format!("limit {limit}, finite-box gap {:.4}", (limit - oracle).abs()),
        ),
    ];
    Ok((
        "pinned-neighbour variance converges to the stationary Green value".into(),
        criteria,
        vec![("difference_variance.csv".into(), csv)],
    ))
}

// ---------------------------------------------------------------------------
// 5. convergence-rate
// ---------------------------------------------------------------------------

fn convergence_rate(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seed = config.seed();
    // 3d: tail of the origin occupation integral, Monte Carlo backend
    let law3 = DWalkLaw::new(&Kernel::nearest_neighbor(3))?;
    let s_grid: Vec<f64> = config
        .s_grid
        .clone()
        .unwrap_or_else(|| vec![10.0, 15.0, 22.0, 33.0, 50.0, 70.0, 100.0, 150.0]);
    let s_max = config.window.unwrap_or(4000.0);
    let replicas = config.replicas.unwrap_or(20_000);
    let intervals: Vec<(f64, f64)> = s_grid.iter().map(|&s| (s, s_max)).collect();
    let (tails, _) = mc_profile(&law3, &[0, 0, 0], &[], &intervals, replicas, seed);
    let pts3: Vec<(f64, f64)> = s_grid
        .iter()
        .zip(&tails)
        .map(|(&s, e)| (s, e.value))
        .collect();
    let (slope3, se3) = fit_power_law(&pts3, 0.0)?;

    // 1d: tail of the difference integral, uniformization backend
    let law1 = DWalkLaw::new(&Kernel::nearest_neighbor(1))?;
    let s1_max = 5000.0;
    let s1_grid = [10.0, 15.0, 22.0, 33.0, 50.0, 70.0, 100.0];
    let w0 = UniformizedWalk::new(&law1, &[0], s1_max, config.trunc_radius, 1e-4)?;
    let w1 = UniformizedWalk::new(&law1, &[1], s1_max, config.trunc_radius, 1e-4)?;
    let a0_max = w0.integral(s1_max)?.value;
    let a1_max = w1.integral(s1_max)?.value;
    let mut pts1 = Vec::new();
    for &s in &s1_grid {
        let t = 2.0 * ((a0_max - w0.integral(s)?.value) - (a1_max - w1.integral(s)?.value));
        pts1.push((s, t));
    }
    let (slope1, se1) = fit_power_law(&pts1, 0.0)?;

    let criteria = vec![
        crit(
            "|3d tail slope + 0.5|",
            (slope3 + 0.5).abs(),
            0.15,
            format!("slope {slope3:.3} +- {se3:.3}, {replicas} chains to {s_max}"),
        ),
        crit(
            "|1d difference tail slope + 0.5|",
            (slope1 + 0.5).abs(),
            0.15,
            format!("slope {slope1:.3} +- {se1:.3}, horizon {s1_max}"),
        ),
    ];
    let mut csv = String::from("d,s,tail\n");
    for (s, y) in &pts3 {
        csv.push_str(&format!("3,{s},{y}\n"));
    }
    for (s, y) in &pts1 {
        csv.push_str(&format!("1,{s},{y}\n"));
    }
    Ok((
        "distance-to-limit tails decay with the diffusive exponents".into(),
        criteria,
        vec![("tails.csv".into(), csv)],
    ))
}

// ---------------------------------------------------------------------------
// 6. space-convergence
// ---------------------------------------------------------------------------

fn space_convergence(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kernel = default_kernel(config, 3);
    let d = kernel.dimension();
    let radii: Vec<i32> = vec![2, 4, 6, 8];
    let regions: Vec<Region> = radii.iter().map(|&r| Region::centered_box(d, r)).collect();
    let span = config.window.unwrap_or(3.0);
    let replicas = config.replicas.unwrap_or(200);
    let seed = config.seed();
    let anchor = config.anchor.clone().unwrap_or_else(|| vec![0; d]);
    let runs: Vec<_> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            coupled_nested_fields(
                &kernel,
                &regions,
                span,
                &[anchor.clone()],
                seed.wrapping_add(r as u64),
            )
        })
        .collect::<Result<_>>()?;
    let m_boxes = regions.len();
    let n = replicas as f64;
    let max_gap = runs
        .iter()
        .map(|r| r.max_telescope_gap)
        .fold(0.0, f64::max);
    // sampled variance of xi^m vs the mean exact conditional variance
    let mut max_var_ratio = 0.0_f64;
    let mut csv = String::from("box_radius,sample_var,cond_var_mean,l2_step\n");
    let mut l2_steps = Vec::new();
    for m in 0..m_boxes {
        let xs: Vec<f64> = runs.iter().map(|r| r.values[m][0]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let var = m2 * n / (n - 1.0);
        let var_se = (((m4 - m2 * m2) / n).max(0.0)).sqrt();
        let cond: Vec<f64> = runs.iter().map(|r| r.cond_variance[m][0]).collect();
        let cond_mean = cond.iter().sum::<f64>() / n;
        if var_se > 0.0 {
            max_var_ratio = max_var_ratio.max((var - cond_mean).abs() / var_se);
        }
        let l2 = if m + 1 < m_boxes {
            let step: f64 = runs
                .iter()
                .map(|r| r.cond_variance[m + 1][0] - r.cond_variance[m][0])
                .sum::<f64>()
                / n;
            l2_steps.push(step);
            step
        } else {
            f64::NAN
        };
        csv.push_str(&format!("{},{var},{cond_mean},{l2}\n", radii[m]));
    }
    let mut monotone_violation = 0.0_f64;
    for w in l2_steps.windows(2) {
        monotone_violation = monotone_violation.max(w[1] - w[0]);
    }
    let criteria = vec![
        crit(
            "max telescoping gap",
            max_gap,
            1e-12,
            format!("{replicas} replicas, {m_boxes} nested boxes"),
        ),
        crit(
            "max |sample var - conditional var| / SE",
            max_var_ratio,
            3.0,
            "per-box refinement variance".into(),
        ),
        crit(
            "max increase of successive L2 steps",
            monotone_violation,
            0.0,
            format!("steps {l2_steps:?}"),
        ),
    ];
    Ok((
        "nested-box refinements shrink in L2 and keep the per-box law".into(),
        criteria,
        vec![("space_convergence.csv".into(), csv)],
    ))
}

// ---------------------------------------------------------------------------
// 7. gibbs-covariance
// ---------------------------------------------------------------------------

fn gibbs_covariance(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    use nalgebra::DMatrix;
    let kernel = default_kernel(config, 1);
    let d = kernel.dimension();
    let seed = config.seed();
    // (a) linear solve vs truncated power series on a small pinned box
    let small = Region::centered_box(d, 8).pin(vec![0; d])?;
    let model = build_model(&kernel, &small)?;
    let nf = model.n_free();
    let p = DMatrix::<f64>::identity(nf, nf) - model.precision();
    let mut acc = DMatrix::<f64>::identity(nf, nf);
    let mut pow = DMatrix::<f64>::identity(nf, nf);
    for _ in 0..6000 {
        pow = &pow * &p;
        acc += &pow;
    }
    let series_gap = (&acc - model.covariance()).abs().max();

    // (b) empirical covariance of sampled fields
    let n_samples = config.replicas.unwrap_or(100_000);
    let samples = sample_field(&model, n_samples, seed);
    let n = n_samples as f64;
    let mut mean = vec![0.0; nf];
    for s in &samples {
        for (a, &v) in s.iter().enumerate() {
            mean[a] += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= n;
    }
    let mut max_cov_ratio = 0.0_f64;
    for a in 0..nf {
        for b in a..nf {
            let mut accv = 0.0;
            for s in &samples {
                accv += (s[a] - mean[a]) * (s[b] - mean[b]);
            }
            let emp = accv / (n - 1.0);
            let target = model.covariance()[(a, b)];
            let se = ((model.covariance()[(a, a)] * model.covariance()[(b, b)]
                + target * target)
                / n)
                .sqrt();
            max_cov_ratio = max_cov_ratio.max((emp - target).abs() / se);
        }
    }

    // (c) closed-form variance 2|i| for the centre-pinned free-boundary box
    let radius = 200;
    let free_region = Region::new(vec![-radius; d], vec![radius; d], Boundary::Free)?
        .pin(vec![0; d])?;
    let free_model = build_model(&kernel, &free_region)?;
    let mut max_closed_gap = 0.0_f64;
    for i in 1..=10 {
        for sgn in [-1, 1] {
            let mut site = vec![0; d];
            site[0] = sgn * i;
            let a = free_model.free_index(&site).expect("free site");
            let v = free_model.covariance()[(a, a)];
            max_closed_gap = max_closed_gap.max((v - 2.0 * i as f64).abs());
        }
    }
    let criteria = vec![
        crit(
            "max |Sigma - power series|",
            series_gap,
            1e-8,
            "6000-term expected-visits series".into(),
        ),
        crit(
            "max |empirical - Sigma| / SE",
            max_cov_ratio,
            3.0,
            format!("{n_samples} samples, {nf} free sites"),
        ),
        crit(
            "max |Var - 2|i|| on free-with-pin box",
            max_closed_gap,
            1e-6,
            format!("radius {radius}, |i| <= 10"),
        ),
    ];
    Ok((
        "covariance is the absorbed-walk Green function; half-line variance is 2|i|".into(),
        criteria,
        Vec::new(),
    ))
}

// ---------------------------------------------------------------------------
// 8. detailed-balance
// ---------------------------------------------------------------------------

fn battery(n_free: usize) -> Vec<Probe> {
    let i = 0;
    let j = n_free / 2;
    let k = n_free - 1;
    let mut probes = vec![Probe::Coord(i), Probe::Coord(j), Probe::Coord(k)];
    probes.push(Probe::Pair(j, j));
    probes.push(Probe::Pair(k, k));
    probes.push(Probe::Pair(j, k));
    probes
}

fn detailed_balance_exp(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kernel = default_kernel(config, 1);
    let d = kernel.dimension();
    let replicas = config.replicas.unwrap_or(100_000);
    let u = config.window.unwrap_or(1.0);
    let seed = config.seed();
    let mut criteria = Vec::new();

    // standard: fixed flat boundary, no pin
    let standard = Region::centered_box(d, 2);
    let m_std = build_model(&kernel, &standard)?;
    let rep = detailed_balance_statistic(
        &m_std,
        &kernel,
        &standard,
        u,
        replicas,
        seed,
        &battery(m_std.n_free()),
        Dynamics::HeatBath,
        1.0,
    )?;
    criteria.push(crit(
        "standard heat-bath asymmetry",
        rep.max_studentized,
        4.0,
        format!("{replicas} replicas, u = {u}"),
    ));

    // pinned
    let pinned = Region::centered_box(d, 2).pin(vec![0; d])?;
    let m_pin = build_model(&kernel, &pinned)?;
    let rep = detailed_balance_statistic(
        &m_pin,
        &kernel,
        &pinned,
        u,
        replicas,
        seed.wrapping_add(1),
        &battery(m_pin.n_free()),
        Dynamics::HeatBath,
        1.0,
    )?;
    criteria.push(crit(
        "pinned heat-bath asymmetry",
        rep.max_studentized,
        4.0,
        format!("{replicas} replicas, u = {u}"),
    ));

    // free boundary with a centre pin, shift dynamics
    let free = Region::centered_box_free(d, 4).pin(vec![0; d])?;
    let m_free = build_model(&kernel, &free)?;
    let rep = detailed_balance_statistic(
        &m_free,
        &kernel,
        &free,
        u,
        replicas,
        seed.wrapping_add(2),
        &battery(m_free.n_free()),
        Dynamics::Shift,
        1.0,
    )?;
    criteria.push(crit(
        "free-with-pin shift asymmetry",
        rep.max_studentized,
        4.0,
        format!("{replicas} replicas, u = {u}"),
    ));

    // control: initial covariance scaled x2
    let rep = detailed_balance_statistic(
        &m_pin,
        &kernel,
        &pinned,
        u,
        replicas,
        seed.wrapping_add(3),
        &battery(m_pin.n_free()),
        Dynamics::HeatBath,
        2.0_f64.sqrt(),
    )?;
    criteria.push(crit(
        "scaled-covariance control (want > 5)",
        5.0,
        rep.max_studentized,
        format!("statistic {:.2}", rep.max_studentized),
    ));

    // control: asymmetric dynamics against the symmetric stationary law
    let asym = Kernel::new(
        d,
        {
            let mut w = Vec::new();
            let mut left = vec![0; d];
            left[0] = -1;
            let mut right = vec![0; d];
            right[0] = 1;
            w.push((left, 0.3));
            w.push((right, 0.7));
            w
        },
        crate::lattice::Noise::Gaussian,
        1.0,
    )?;
    let rep = detailed_balance_statistic(
        &m_pin,
        &asym,
        &pinned,
        u,
        replicas,
        seed.wrapping_add(4),
        &battery(m_pin.n_free()),
        Dynamics::HeatBath,
        1.0,
    )?;
    criteria.push(crit(
        "asymmetric-kernel control (want > 5)",
        5.0,
        rep.max_studentized,
        format!("statistic {:.2}", rep.max_studentized),
    ));

    Ok((
        "stationary-start time-reversal symmetry of the Gaussian field".into(),
        criteria,
        Vec::new(),
    ))
}

// ---------------------------------------------------------------------------
// 9. harness-property
// ---------------------------------------------------------------------------

fn harness_property(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kernels: Vec<Kernel> = if let Some(k) = &config.kernel {
        vec![k.clone()]
    } else {
        vec![
            Kernel::nearest_neighbor(1),
            Kernel::nearest_neighbor(2),
            Kernel::new(
                1,
                [
                    (vec![-2], 0.2),
                    (vec![-1], 0.3),
                    (vec![1], 0.3),
                    (vec![2], 0.2),
                ],
                crate::lattice::Noise::Gaussian,
                1.0,
            )?,
        ]
    };
    let mut worst = 0.0_f64;
    let mut tested = 0;
    for kernel in &kernels {
        let d = kernel.dimension();
        let region = Region::centered_box(d, 4).pin(vec![0; d])?;
        let model = build_model(kernel, &region)?;
        let grid = model.grid();
        for site in model.free_sites() {
            let weights = conditional_mean_weights(&model, &site)?;
            // every free jump target must carry exactly the kernel weight
            let mut expected: BTreeMap<Site, f64> = BTreeMap::new();
            for (o, p) in kernel.offsets() {
                let t: Site = site.iter().zip(o).map(|(a, b)| a + b).collect();
                if grid
                    .site_index(&t)
                    .map(|i| !grid.is_pinned(i))
                    .unwrap_or(false)
                {
                    expected.insert(t, *p);
                }
            }
            for (t, p) in &expected {
                let got = weights.get(t).copied().unwrap_or(0.0);
                worst = worst.max((got - p).abs());
            }
            for (t, w) in &weights {
                if !expected.contains_key(t) {
                    worst = worst.max(w.abs());
                }
            }
            tested += 1;
        }
    }
    let criteria = vec![crit(
        "max |conditional mean weight - kernel weight|",
        worst,
        1e-12,
        format!("{} kernels, {tested} free sites", kernels.len()),
    )];
    Ok((
        "one-site conditional means of the field reproduce the jump kernel".into(),
        criteria,
        Vec::new(),
    ))
}

// ---------------------------------------------------------------------------
// 10. no-noise-harmonic
// ---------------------------------------------------------------------------

fn linear_region(d: usize, radius: i32, slope: &[f64]) -> Result<(Region, Vec<(Site, f64)>)> {
    // gamma = the linear profile on the one-jump shell of the box
    let inner = Region::new(vec![-radius; d], vec![radius; d], Boundary::Fixed)?;
    let outer = Region::new(vec![-radius - 1; d], vec![radius + 1; d], Boundary::Fixed)?;
    let mut gamma = Vec::new();
    for s in outer.carrier() {
        if !inner.contains(&s) {
            let v = s.iter().zip(slope).map(|(&c, &a)| a * c as f64).sum();
            gamma.push((s, v));
        }
    }
    let region = inner.with_gamma(gamma.clone())?;
    Ok((region, gamma))
}

fn no_noise_harmonic(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let window = config.window.unwrap_or(30.0);
    let seed = config.seed();
    let mut max_invariance = 0.0_f64;
    for d in [1usize, 2] {
        let kernel = Kernel::nearest_neighbor(d);
        let slope: Vec<f64> = (0..d).map(|k| 0.5 + k as f64).collect();
        let (region, _) = linear_region(d, 4, &slope)?;
        let grid = Grid::new(&kernel, &region)?;
        let field = HeightField::from_fn(&grid, |s| {
            s.iter().zip(&slope).map(|(&c, &a)| a * c as f64).sum()
        });
        let stream = generate_events(&grid, window, seed)?;
        let out = evolve(&grid, &stream, &field, Variant::NoNoise, &[])?;
        for (a, b) in out.last.values.iter().zip(&field.values) {
            max_invariance = max_invariance.max((a - b).abs());
        }
    }

    // decomposition: full = deterministic(initial, gamma) + noise(flat, zero)
    let kernel = Kernel::nearest_neighbor(2);
    let (region, _) = linear_region(2, 3, &[1.0, -0.5])?;
    let zero_region = Region::centered_box(2, 3);
    let grid = Grid::new(&kernel, &region)?;
    let zero_grid = Grid::new(&kernel, &zero_region)?;
    let initial = HeightField::from_fn(&grid, |s| 0.2 * (s[0] * s[0] - s[1]) as f64);
    let zero_initial = HeightField::flat(zero_grid.len(), 0.0);
    let mut max_decomp = 0.0_f64;
    for r in 0..20u64 {
        let stream = generate_events(&grid, 10.0, seed.wrapping_add(r))?;
        let full = evolve(&grid, &stream, &initial, Variant::Standard, &[])?;
        let det = evolve(&grid, &stream, &initial, Variant::NoNoise, &[])?;
        let noise = evolve(&zero_grid, &stream, &zero_initial, Variant::Standard, &[])?;
        for i in 0..grid.len() {
            let gap =
                (full.last.values[i] - det.last.values[i] - noise.last.values[i]).abs();
            max_decomp = max_decomp.max(gap);
        }
    }
    let criteria = vec![
        crit(
            "max harmonic invariance drift",
            max_invariance,
            1e-12,
            format!("linear fields, d in {{1,2}}, window {window}"),
        ),
        crit(
            "max decomposition residual",
            max_decomp,
            1e-9,
            "20 seeds, full = deterministic + noise-only".into(),
        ),
    ];
    Ok((
        "harmonic profiles are fixed points; heights split into boundary and noise parts".into(),
        criteria,
        Vec::new(),
    ))
}

// ---------------------------------------------------------------------------
// 11. uniqueness-finite
// ---------------------------------------------------------------------------

fn uniqueness_finite(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kernel = default_kernel(config, 1);
    let d = kernel.dimension();
    let seed = config.seed();
    // stationarity: Gibbs start stays Gibbs under the engine
    let region = Region::centered_box(d, 3).pin(vec![0; d])?;
    let model = build_model(&kernel, &region)?;
    let grid = model.grid();
    let u = 2.0;
    let replicas = config.replicas.unwrap_or(20_000);
    let nf = model.n_free();
    let finals: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let x0 = sample_field(&model, 1, crate::rng::mix(seed, r as u64))
                .pop()
                .expect("one sample");
            let field = model.embed(&x0);
            let stream = generate_events(grid, u, crate::rng::mix(seed ^ 0xabcd, r as u64))?;
            let out = evolve(grid, &stream, &field, Variant::Standard, &[])?;
            Ok(model.restrict(&out.last))
        })
        .collect::<Result<_>>()?;
    let n = replicas as f64;
    let mut max_mean_ratio = 0.0_f64;
    let mut max_var_ratio = 0.0_f64;
    for a in 0..nf {
        let xs: Vec<f64> = finals.iter().map(|v| v[a]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let var = m2 * n / (n - 1.0);
        let mean_se = (var / n).sqrt();
        let var_se = (((m4 - m2 * m2) / n).max(0.0)).sqrt();
        let target = model.covariance()[(a, a)];
        max_mean_ratio = max_mean_ratio.max(mean.abs() / mean_se);
        max_var_ratio = max_var_ratio.max((var - target).abs() / var_se);
    }

    // contraction: two starts on one stream squeeze together with the
    // surviving interior mass
    let small = Region::centered_box(d, 2).pin(vec![0; d])?;
    let small_grid = Grid::new(&kernel, &small)?;
    let window = config.window.unwrap_or(50.0);
    let stream = generate_events(&small_grid, window, seed)?;
    let f1 = HeightField::flat(small_grid.len(), 0.0);
    let f2 = HeightField::from_fn(&small_grid, |s| {
        if small_grid.region().is_pinned(s) {
            0.0
        } else {
            3.0 - s[0] as f64
        }
    });
    let gap0 = f1
        .values
        .iter()
        .zip(&f2.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let o1 = evolve(&small_grid, &stream, &f1, Variant::Standard, &[])?;
    let o2 = evolve(&small_grid, &stream, &f2, Variant::Standard, &[])?;
    let mut max_mass = 0.0_f64;
    let mut bound_violation = 0.0_f64;
    for site in small_grid.sites() {
        if small_grid.region().is_pinned(site) {
            continue;
        }
        let w = backward_weights(&small_grid, &stream, site, 0.0, window)?;
        let mass: f64 = w.terminal_interior.iter().sum();
        max_mass = max_mass.max(mass);
        let i = small_grid.site_index(site).expect("carrier site");
        let diff = (o1.last.values[i] - o2.last.values[i]).abs();
        bound_violation = bound_violation.max(diff - mass * gap0);
    }
    let criteria = vec![
        crit(
            "max |coordinate mean| / SE after evolution",
            max_mean_ratio,
            3.0,
            format!("{replicas} replicas, u = {u}"),
        ),
        crit(
            "max |coordinate var - Sigma| / SE after evolution",
            max_var_ratio,
            3.0,
            "stationarity of the Gibbs start".into(),
        ),
        crit(
            "surviving interior mass",
            max_mass,
            1e-3,
            format!("window {window} on the small pinned box"),
        ),
        crit(
            "pathwise contraction bound violation",
            bound_violation,
            1e-12,
            format!("initial gap {gap0}"),
        ),
    ];
    Ok((
        "the Gibbs law is preserved and one-stream couplings contract".into(),
        criteria,
        Vec::new(),
    ))
}

impl Region {
    /// Centered free-boundary box (helper for the experiments).
    pub fn centered_box_free(d: usize, radius: i32) -> Self {
        Region::new(vec![-radius; d], vec![radius; d], Boundary::Free).expect("valid box")
    }
}
