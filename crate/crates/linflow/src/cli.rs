//! Config-driven experiment runner: simulation experiments, landscape
//! tables, and the metric self-check, emitting CSV/JSON (and optional SVG
//! line charts).
//!
//! The same config plus seed always produces byte-identical outputs: data,
//! initialization and integration are all seed-deterministic and the
//! serializers are fixed-format (floats at 17 significant digits).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, ClosedFormFamily, InvariantReport};
use crate::geometry::{self, QuadratureConfig};
use crate::initializers::{self, InitKind, InitSpec, StdRule};
use crate::integrator::{integrate_full, IntegratorConfig, StopReason, Trajectory};
use crate::landscape::{self, CriticalKind};
use crate::model::{self, DataSet, NetworkShape};
use crate::{Error, Mat, Result};

/// The experiment families reproduced by `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    /// Autoencoder with a random orthogonal-balanced start.
    AutoencoderBalanced,
    /// Autoencoder with independent Gaussian layers.
    AutoencoderNonBalanced,
    /// Autoencoder started at `W₁ = V_rᵀ, W₂ = −V_r` (heads for the zero
    /// saddle first).
    AutoencoderPathological,
    /// Teacher recovery: `Y = W̃ X` for a random rank-`r` teacher.
    SupervisedTeacher,
    /// Balanced autoencoder runs across a list of depths, recording
    /// `‖W(t) − W(T)‖_F` convergence curves.
    ConvergenceRateSweep,
}

fn default_sweep() -> Vec<usize> {
    vec![2, 5, 10]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("linflow_out")
}

/// Full description of one `simulate` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Data dimension `d_x = d_y = d`.
    pub d: usize,
    /// Bottleneck rank `r`.
    pub r: usize,
    /// Number of layers.
    pub n_layers: usize,
    /// Sample count; defaults to `3d`.
    #[serde(default)]
    pub m: Option<usize>,
    /// Seed for the data matrix (and the teacher, where applicable).
    pub seed: u64,
    /// Initial condition; defaults to the experiment's canonical choice.
    #[serde(default)]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_svg: bool,
    /// Depths used by `ConvergenceRateSweep`.
    #[serde(default = "default_sweep")]
    pub sweep_layers: Vec<usize>,
    /// `--check` threshold on the final distance to the target.
    #[serde(default)]
    pub check_dist_tol: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.r == 0 || self.r > self.d {
            return Err(Error::Config(format!("need 1 ≤ r ≤ d, got r = {}, d = {}", self.r, self.d)));
        }
        if self.n_layers < 2 {
            return Err(Error::Config("need at least 2 layers".into()));
        }
        if self.experiment == Experiment::AutoencoderPathological && self.n_layers != 2 {
            return Err(Error::Config("the pathological start is a two-layer construction".into()));
        }
        if let Some(m) = self.m {
            if m < self.d {
                return Err(Error::Config(format!(
                    "need at least d samples for a full-rank Gram matrix, got m = {m}"
                )));
            }
        }
        self.integrator.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.experiment == Experiment::ConvergenceRateSweep
            && self.sweep_layers.iter().any(|&n| n < 2)
        {
            return Err(Error::Config("sweep depths must be ≥ 2".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.m.unwrap_or(3 * self.d)
    }

    /// Loads a config from a JSON file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Output directory after applying the `LINFLOW_OUT` override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os("LINFLOW_OUT") {
            Some(dir) => PathBuf::from(dir),
            None => self.output_dir.clone(),
        }
    }
}

/// Final metrics of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub t_final: f64,
    pub loss: f64,
    pub dist_to_target: f64,
    pub balance_residual: Option<f64>,
    pub rank_estimate: usize,
    pub rhs_norm: f64,
    pub stop: StopReason,
}

/// Everything a `simulate` run reports back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub final_metrics: FinalMetrics,
    pub invariants: Vec<InvariantReport>,
    pub csv_paths: Vec<String>,
    pub svg_paths: Vec<String>,
    /// Present in `--check` mode.
    pub check_passed: Option<bool>,
}

/// Gaussian data matrix with columns `~ N(0, I/d)`, `Y = X`.
pub fn gaussian_autoencoder_data(d: usize, m: usize, seed: u64) -> Result<DataSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 1.0 / (d as f64).sqrt();
    let x = Mat::from_fn(d, m, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    DataSet::autoencoder(x)
}

/// Teacher data: `Y = W̃ X` with `W̃` the product of a Gaussian tuple whose
/// layer `j` has entries of standard deviation `1/√d_j`.
pub fn teacher_data(shape: &NetworkShape, m: usize, seed: u64) -> Result<(DataSet, Mat)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = shape.d_in();
    let sigma = 1.0 / (d as f64).sqrt();
    let x = Mat::from_fn(d, m, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    let teacher = initializers::gaussian(shape, StdRule::InverseSqrtOutput, &mut rng);
    let w_teacher = model::product(&teacher).w;
    let y = &w_teacher * &x;
    Ok((DataSet::new(x, y)?, w_teacher))
}

fn default_init(experiment: Experiment, seed: u64) -> InitSpec {
    let kind = match experiment {
        Experiment::AutoencoderBalanced
        | Experiment::SupervisedTeacher
        | Experiment::ConvergenceRateSweep => InitKind::OrthogonalBalanced,
        Experiment::AutoencoderNonBalanced => InitKind::Gaussian { std_rule: StdRule::default() },
        Experiment::AutoencoderPathological => InitKind::PathologicalAutoencoder,
    };
    InitSpec { kind, seed }
}

/// The comparison target of a run: the PCA projector for autoencoders, the
/// rank-`min(r, q)` global minimizer for teacher recovery.
fn target_matrix(config: &ExperimentConfig, data: &DataSet) -> Result<Mat> {
    match config.experiment {
        Experiment::SupervisedTeacher => {
            let qdec = landscape::compute_q(data);
            let k = config.r.min(qdec.rank());
            let mut core = Mat::zeros(data.d_out(), data.d_in());
            for i in 0..k {
                core += qdec.svd.u.column(i) * qdec.svd.v.column(i).transpose() * qdec.svd.sigma[i];
            }
            Ok(core * data.gram_inv_sqrt())
        }
        _ => Ok(landscape::pca_solution(data, config.r)?.projector),
    }
}

/// Serializes a float with 17 significant digits (round-trip exact).
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory, target: &Mat) -> Result<()> {
    let mut out = String::from("t,loss,rhs_norm,balance_residual,rank_estimate,dist_to_target,conserved_drift\n");
    for ((t, state), stats) in traj.times.iter().zip(&traj.states).zip(&traj.stats) {
        let dist = (state.product_matrix() - target).norm();
        let balance = stats.balance_residual.map(fmt_f64).unwrap_or_default();
        let drift = stats.conserved_drift.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(*t),
            fmt_f64(stats.loss),
            fmt_f64(stats.rhs_norm),
            balance,
            stats.rank_estimate,
            fmt_f64(dist),
            drift
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Minimal static SVG line chart of `(t, value)` series on a log-10 y-axis.
fn write_svg_chart(path: &Path, title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> Result<()> {
    let (w, h, ml, mb) = (640.0, 400.0, 60.0, 40.0);
    let floor = 1e-18f64;
    let mut t_max = 0.0f64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(t, y) in pts {
            t_max = t_max.max(t);
            let ly = y.max(floor).log10();
            y_min = y_min.min(ly);
            y_max = y_max.max(ly);
        }
    }
    if !y_min.is_finite() || y_max - y_min < 1e-9 {
        y_min = -1.0;
        y_max = 1.0;
    }
    let t_max = t_max.max(1e-12);
    let sx = |t: f64| ml + (w - ml - 10.0) * t / t_max;
    let sy = |y: f64| {
        let ly = y.max(floor).log10();
        h - mb - (h - mb - 20.0) * (ly - y_min) / (y_max - y_min)
    };
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{}" y="16" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>
<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{ml}" y1="20" x2="{ml}" y2="{}" stroke="black"/>
<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">t (0 .. {t_max:.3})</text>
<text x="14" y="{}" font-family="sans-serif" font-size="11" transform="rotate(-90 14 {})">log10 (range {y_min:.1} .. {y_max:.1})</text>
"#,
        w / 2.0,
        h - mb,
        w - 10.0,
        h - mb,
        h - mb,
        w / 2.0,
        h - 12.0,
        h / 2.0,
        h / 2.0,
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let path_d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(j, &(t, y))| {
                format!("{}{:.2},{:.2}", if j == 0 { "M" } else { "L" }, sx(t), sy(y))
            })
            .collect();
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path_d.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{label}</text>\n",
            w - 150.0,
            30.0 + 14.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

fn final_metrics(traj: &Trajectory, target: &Mat) -> FinalMetrics {
    let stats = traj.final_stats();
    FinalMetrics {
        t_final: traj.final_time(),
        loss: stats.loss,
        dist_to_target: (traj.final_state().product_matrix() - target).norm(),
        balance_residual: stats.balance_residual,
        rank_estimate: stats.rank_estimate,
        rhs_norm: stats.rhs_norm,
        stop: traj.stop,
    }
}

/// Runs one experiment end to end: data, init, integration, diagnostics,
/// CSV/JSON emission. Divergence surfaces as an error.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let out_dir = config.resolved_output_dir();
    fs::create_dir_all(&out_dir)?;

    if config.experiment == Experiment::ConvergenceRateSweep {
        return run_sweep(config, &out_dir);
    }

    let shape = initializers::grid_dims(config.d, config.r, config.n_layers)?;
    let m = config.samples();
    let (data, _teacher) = match config.experiment {
        Experiment::SupervisedTeacher => {
            let (data, w) = teacher_data(&shape, m, config.seed)?;
            (data, Some(w))
        }
        _ => (gaussian_autoencoder_data(config.d, m, config.seed)?, None),
    };

    let init = config
        .init
        .clone()
        .unwrap_or_else(|| default_init(config.experiment, config.seed.wrapping_add(1)));
    let weights0 = init.realize(&shape, &data)?;

    let traj = integrate_full(&weights0, &data, &config.integrator)?;
    let target = target_matrix(config, &data)?;

    let mut invariants = vec![
        diagnostics::check_conserved(&traj, diagnostics::CONSERVED_DRIFT_TOL)?,
        diagnostics::check_monotone_loss(&traj, 1e-9),
    ];
    if config.experiment == Experiment::AutoencoderPathological && config.d == 1 {
        let lambda = data.gram()[(0, 0)];
        invariants.push(diagnostics::closed_form_regression(
            &traj,
            ClosedFormFamily::PathologicalScalar { lambda },
            diagnostics::REGRESSION_TOL,
        )?);
    }

    let csv_path = out_dir.join("trajectory.csv");
    write_trajectory_csv(&csv_path, &traj, &target)?;
    let mut csv_paths = vec![csv_path.to_string_lossy().into_owned()];

    let mut svg_paths = Vec::new();
    if config.emit_svg {
        let loss_series: Vec<(f64, f64)> =
            traj.times.iter().zip(&traj.stats).map(|(&t, s)| (t, s.loss)).collect();
        let dist_series: Vec<(f64, f64)> = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, s)| (t, (s.product_matrix() - &target).norm()))
            .collect();
        let svg_path = out_dir.join("convergence.svg");
        write_svg_chart(
            &svg_path,
            "convergence",
            &[("loss", loss_series), ("dist_to_target", dist_series)],
        )?;
        svg_paths.push(svg_path.to_string_lossy().into_owned());
    }

    let metrics = final_metrics(&traj, &target);
    let check_passed = config.check_dist_tol.map(|tol| {
        metrics.dist_to_target <= tol && invariants.iter().all(|r| r.passed)
    });

    let report = RunReport {
        config: config.clone(),
        final_metrics: metrics,
        invariants,
        csv_paths: std::mem::take(&mut csv_paths),
        svg_paths,
        check_passed,
    };
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn run_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let m = config.samples();
    let data = gaussian_autoencoder_data(config.d, m, config.seed)?;
    let mut csv_paths = Vec::new();
    let mut svg_series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut last: Option<(Trajectory, Mat)> = None;

    for &n in &config.sweep_layers {
        let shape = initializers::grid_dims(config.d, config.r, n)?;
        let init = config
            .init
            .clone()
            .unwrap_or_else(|| default_init(config.experiment, config.seed.wrapping_add(1)));
        let weights0 = init.realize(&shape, &data)?;
        let traj = integrate_full(&weights0, &data, &config.integrator)?;

        let w_final = traj.final_state().product_matrix();
        let series: Vec<(f64, f64)> = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, s)| (t, (s.product_matrix() - &w_final).norm()))
            .collect();

        let path = out_dir.join(format!("sweep_n{n}.csv"));
        let mut out = String::from("t,dist_to_final\n");
        for &(t, v) in &series {
            out.push_str(&format!("{},{}\n", fmt_f64(t), fmt_f64(v)));
        }
        fs::write(&path, out)?;
        csv_paths.push(path.to_string_lossy().into_owned());
        svg_series.push((format!("N={n}"), series));

        let target = landscape::pca_solution(&data, config.r)?.projector;
        last = Some((traj, target));
    }

    let mut svg_paths = Vec::new();
    if config.emit_svg {
        let series_ref: Vec<(&str, Vec<(f64, f64)>)> =
            svg_series.iter().map(|(l, s)| (l.as_str(), s.clone())).collect();
        let svg_path = out_dir.join("sweep.svg");
        write_svg_chart(&svg_path, "convergence rate by depth", &series_ref)?;
        svg_paths.push(svg_path.to_string_lossy().into_owned());
    }

    let (traj, target) = last.ok_or_else(|| Error::Config("sweep_layers is empty".into()))?;
    let invariants = vec![
        diagnostics::check_conserved(&traj, diagnostics::CONSERVED_DRIFT_TOL)?,
        diagnostics::check_monotone_loss(&traj, 1e-9),
    ];
    let report = RunReport {
        config: config.clone(),
        final_metrics: final_metrics(&traj, &target),
        invariants,
        csv_paths,
        svg_paths,
        check_passed: None,
    };
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Data source for the `critical` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source")]
pub enum DataSource {
    /// `X = diag(values)`, `Y = X`.
    DiagAutoencoder { values: Vec<f64> },
    /// Seeded Gaussian autoencoder data.
    GaussianAutoencoder { d: usize, m: usize, seed: u64 },
    /// Seeded Gaussian data with a random rank-`r` teacher.
    GaussianTeacher { d: usize, r: usize, m: usize, seed: u64 },
}

impl DataSource {
    pub fn realize(&self) -> Result<DataSet> {
        match self {
            DataSource::DiagAutoencoder { values } => {
                if values.is_empty() {
                    return Err(Error::Config("diagonal data needs at least one value".into()));
                }
                let x = Mat::from_diagonal(&crate::Vector::from_row_slice(values));
                DataSet::autoencoder(x)
            }
            DataSource::GaussianAutoencoder { d, m, seed } => gaussian_autoencoder_data(*d, *m, *seed),
            DataSource::GaussianTeacher { d, r, m, seed } => {
                let shape = initializers::grid_dims(*d, *r, 2)?;
                Ok(teacher_data(&shape, *m, *seed)?.0)
            }
        }
    }
}

/// Config for the `critical` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalConfig {
    pub data: DataSource,
    pub k_min: usize,
    pub k_max: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl CriticalConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.k_min > cfg.k_max {
            return Err(Error::Config("k_min must be ≤ k_max".into()));
        }
        Ok(cfg)
    }
}

/// Enumerates and classifies the critical points for each `k` in the range,
/// returning the CSV text (also written to `critical_points.csv`).
pub fn run_critical(config: &CriticalConfig) -> Result<String> {
    let data = config.data.realize()?;
    let qdec = landscape::compute_q(&data);
    let mut out = String::from("k,indices,loss,kind,cert_j0,cert_j1,cert_second_derivative\n");
    for k in config.k_min..=config.k_max {
        if k > qdec.rank() {
            out.push_str(&format!("# k={k}: no critical points (k > rank(Q) = {})\n", qdec.rank()));
            continue;
        }
        for cp in landscape::enumerate_critical_points(&data, k)? {
            let kind = match cp.kind {
                CriticalKind::GlobalMinOnMk => "GlobalMinOnMk",
                CriticalKind::StrictSaddle => "StrictSaddle",
                CriticalKind::Zero => "Zero",
            };
            let indices = cp
                .indices
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join("|");
            let (j0, j1, dd) = match &cp.certificate {
                Some(c) => (c.j0.to_string(), c.j1.to_string(), fmt_f64(c.second_derivative)),
                None => (String::new(), String::new(), String::new()),
            };
            out.push_str(&format!("{k},{indices},{},{kind},{j0},{j1},{dd}\n", fmt_f64(cp.loss)));
        }
    }
    let out_dir = match std::env::var_os("LINFLOW_OUT") {
        Some(dir) => PathBuf::from(dir),
        None => config.output_dir.clone(),
    };
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("critical_points.csv"), &out)?;
    Ok(out)
}

/// One trial of the metric self-check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricTrial {
    pub n: u32,
    pub rank: usize,
    pub quad_vs_solver: f64,
    pub quad_vs_closed: Option<f64>,
    pub g_zz: f64,
}

/// Summary of the metric triple-agreement check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricCheckReport {
    pub dims: (usize, usize),
    pub n_values: Vec<u32>,
    pub trials: usize,
    pub max_quad_vs_solver: f64,
    pub max_quad_vs_closed: f64,
    pub min_g_zz: f64,
    pub all_positive: bool,
    pub details: Vec<MetricTrial>,
}

/// Randomized agreement check of the three metric routes: quadrature vs the
/// tangent-space linear solve (all `N`), plus the closed form at `N = 2`,
/// with positivity of `g(Z, Z)` on every trial.
pub fn run_metric_check(
    dims: (usize, usize),
    n_values: &[u32],
    trials: usize,
    seed: u64,
) -> Result<MetricCheckReport> {
    let (dy, dx) = dims;
    if dy == 0 || dx == 0 {
        return Err(Error::Config("dims must be positive".into()));
    }
    let qcfg = QuadratureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_max = dy.min(dx);

    let mut details = Vec::with_capacity(trials * n_values.len());
    let mut max_qs = 0.0f64;
    let mut max_qc = 0.0f64;
    let mut min_gzz = f64::INFINITY;

    for trial in 0..trials {
        let k = 1 + trial % k_max;
        let a = Mat::from_fn(dy, k, |_, _| rng.random_range(-1.0..1.0));
        let b = Mat::from_fn(k, dx, |_, _| rng.random_range(-1.0..1.0));
        let w = a * b;
        let raw1 = Mat::from_fn(dy, dx, |_, _| rng.random_range(-1.0..1.0));
        let raw2 = Mat::from_fn(dy, dx, |_, _| rng.random_range(-1.0..1.0));
        let z1 = geometry::tangent_project(&w, &raw1)?;
        let z2 = geometry::tangent_project(&w, &raw2)?;

        for &n in n_values {
            let g_quad = geometry::metric_g_quadrature(&w, &z1, &z2, n, &qcfg)?;
            let g_solve = geometry::metric_g_solver(&w, &z1, &z2, n)?;
            let scale = g_solve.abs().max(1e-12);
            let quad_vs_solver = (g_quad - g_solve).abs() / scale;
            max_qs = max_qs.max(quad_vs_solver);

            let quad_vs_closed = if n == 2 {
                let g_closed = geometry::metric_g_n2(&w, &z1, &z2)?;
                let dev = (g_quad - g_closed).abs() / g_closed.abs().max(1e-12);
                max_qc = max_qc.max(dev);
                Some(dev)
            } else {
                None
            };

            let g_zz = geometry::metric_g_quadrature(&w, &z1, &z1, n, &qcfg)?;
            min_gzz = min_gzz.min(g_zz);

            details.push(MetricTrial { n, rank: k, quad_vs_solver, quad_vs_closed, g_zz });
        }
    }

    Ok(MetricCheckReport {
        dims,
        n_values: n_values.to_vec(),
        trials,
        max_quad_vs_solver: max_qs,
        max_quad_vs_closed: max_qc,
        min_g_zz: min_gzz,
        all_positive: min_gzz > 0.0,
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            experiment: Experiment::AutoencoderBalanced,
            d: 8,
            r: 4,
            n_layers: 2,
            m: None,
            seed: 1,
            init: None,
            integrator: IntegratorConfig { h: 2e-3, t_max: 50.0, ..Default::default() },
            output_dir: dir.to_path_buf(),
            emit_svg: true,
            sweep_layers: default_sweep(),
            check_dist_tol: Some(1e-4),
        }
    }

    #[test]
    fn autoencoder_balanced_run_converges_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path());
        let report = run(&config).unwrap();
        assert!(report.final_metrics.dist_to_target <= 1e-4,
            "dist {:e}", report.final_metrics.dist_to_target);
        assert_eq!(report.check_passed, Some(true));
        assert!(report.invariants.iter().all(|r| r.passed));
        assert!(dir.path().join("trajectory.csv").exists());
        assert!(dir.path().join("report.json").exists());
        assert!(dir.path().join("convergence.svg").exists());
    }

    #[test]
    fn runs_are_byte_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut config = base_config(dir_a.path());
        config.emit_svg = false;
        config.integrator.t_max = 2.0;
        run(&config).unwrap();
        config.output_dir = dir_b.path().to_path_buf();
        run(&config).unwrap();
        let a = fs::read(dir_a.path().join("trajectory.csv")).unwrap();
        let b = fs::read(dir_b.path().join("trajectory.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pathological_run_reports_regression() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path());
        config.experiment = Experiment::AutoencoderPathological;
        config.d = 1;
        config.r = 1;
        config.m = Some(1);
        config.seed = 3;
        config.integrator = IntegratorConfig { h: 1e-3, t_max: 3.0, ..Default::default() };
        config.check_dist_tol = None;
        config.emit_svg = false;
        let report = run(&config).unwrap();
        let regression = report
            .invariants
            .iter()
            .find(|r| r.name == "pathological-closed-form")
            .expect("regression report present");
        assert!(regression.passed, "max deviation {:e}", regression.max_violation);
    }

    #[test]
    fn supervised_teacher_recovers_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path());
        config.experiment = Experiment::SupervisedTeacher;
        config.d = 8;
        config.r = 2;
        config.integrator = IntegratorConfig { h: 2e-3, t_max: 40.0, ..Default::default() };
        config.check_dist_tol = Some(1e-3);
        config.emit_svg = false;
        let report = run(&config).unwrap();
        assert_eq!(report.check_passed, Some(true), "dist {:e}", report.final_metrics.dist_to_target);

        // the optimal W equals the teacher product here
        let shape = initializers::grid_dims(config.d, config.r, config.n_layers).unwrap();
        let (data, w_teacher) = teacher_data(&shape, config.samples(), config.seed).unwrap();
        let target = target_matrix(&config, &data).unwrap();
        assert!((&target - &w_teacher).norm() <= 1e-8 * w_teacher.norm());
    }

    #[test]
    fn sweep_emits_per_depth_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path());
        config.experiment = Experiment::ConvergenceRateSweep;
        config.sweep_layers = vec![2, 3];
        config.integrator = IntegratorConfig { h: 2e-3, t_max: 5.0, ..Default::default() };
        config.check_dist_tol = None;
        config.emit_svg = false;
        let report = run(&config).unwrap();
        assert_eq!(report.csv_paths.len(), 2);
        assert!(dir.path().join("sweep_n2.csv").exists());
        assert!(dir.path().join("sweep_n3.csv").exists());
    }

    #[test]
    fn critical_table_on_diag_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let config = CriticalConfig {
            data: DataSource::DiagAutoencoder { values: vec![2.0, 1.0] },
            k_min: 0,
            k_max: 3,
            output_dir: dir.path().to_path_buf(),
        };
        let csv = run_critical(&config).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,indices,loss,kind,cert_j0,cert_j1,cert_second_derivative");
        // k=0 zero point, k=1 two points, k=2 one point, k=3 note
        assert!(lines.iter().any(|l| l.starts_with("0,,") && l.contains("Zero")));
        let k1: Vec<&&str> = lines.iter().filter(|l| l.starts_with("1,")).collect();
        assert_eq!(k1.len(), 2);
        assert!(k1[0].contains("GlobalMinOnMk") && k1[0].contains("5.0000000000000000e-1"));
        assert!(k1[1].contains("StrictSaddle") && k1[1].contains("2.0000000000000000e0"));
        assert!(k1[1].contains("-2.0000000000000"));
        let k2: Vec<&&str> = lines.iter().filter(|l| l.starts_with("2,")).collect();
        assert_eq!(k2.len(), 1);
        assert!(k2[0].contains("GlobalMinOnMk"));
        assert!(lines.iter().any(|l| l.starts_with("# k=3: no critical points")));
    }

    #[test]
    fn metric_check_small() {
        let report = run_metric_check((4, 3), &[2, 3], 6, 42).unwrap();
        assert!(report.max_quad_vs_solver <= 1e-6, "{:e}", report.max_quad_vs_solver);
        assert!(report.max_quad_vs_closed <= 1e-6, "{:e}", report.max_quad_vs_closed);
        assert!(report.all_positive);
        assert_eq!(report.details.len(), 12);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path());
        config.r = 20;
        assert!(matches!(run(&config), Err(Error::Config(_))));

        let mut config = base_config(dir.path());
        config.experiment = Experiment::AutoencoderPathological;
        config.n_layers = 3;
        assert!(matches!(run(&config), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path());
        let text = serde_json::to_string_pretty(&config).unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, &text).unwrap();
        let loaded = ExperimentConfig::from_path(&path).unwrap();
        assert_eq!(loaded.d, config.d);
        assert_eq!(loaded.experiment, config.experiment);
    }
}
