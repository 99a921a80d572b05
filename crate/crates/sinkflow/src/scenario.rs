//! Built-in scenarios and the runner shared by the binary and the tests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sinkflow_core::{
    embed, run_flow, run_sjko, DiscreteMeasure, DiscreteSpace, DoubleWell, FactorConfig, FlowConfig, FlowTrajectory,
    KernelSpace, LcpConfig, Mode, PointCloud, Potential, PotentialOperator, Quadratic, Scheme, SinkhornConfig,
    SjkoConfig, Tabulated,
};

use crate::config::{
    ExperimentConfig, Format, InitialSpec, LagrangianComparison, OutputSpec, PotentialSpec, SchemeName, SolverSpec,
    SpaceSpec, VerticalSpec, SCHEMA_VERSION,
};
use crate::export::{self, FrameRecord, SummaryRow};
use crate::svg;

pub const PRESETS: [&str; 5] = ["convex1d", "nonconvex1d", "sphere3", "convex2d", "vertical_cost"];

fn output(dir: &Path) -> OutputSpec {
    OutputSpec { dir: dir.to_path_buf(), formats: vec![Format::Json, Format::Jsonl, Format::Csv, Format::Svg], svg_frames: 6 }
}

fn double_well() -> PotentialSpec {
    let d = DoubleWell::<f64>::default();
    PotentialSpec::DoubleWell { height: d.height, left: d.left, right: d.right, tilt: d.tilt }
}

/// The preset called `name`, writing into `dir`.
pub fn preset(name: &str, dir: &Path) -> Option<ExperimentConfig> {
    let base = |space, potential, initial, epsilon, tau, horizon, scheme, record_every| ExperimentConfig {
        version: SCHEMA_VERSION,
        scenario: name.to_string(),
        space,
        potential,
        initial,
        epsilon,
        tau,
        horizon,
        scheme,
        seed: 0,
        output: output(dir),
        solver: SolverSpec { record_every, ..SolverSpec::default() },
        lagrangian_comparison: None,
        sphere_export: false,
        vertical: None,
    };
    let unit = SpaceSpec::Interval { lo: 0.0, hi: 1.0, n: 100 };
    let cfg = match name {
        "convex1d" => base(
            unit,
            PotentialSpec::Quadratic { center: vec![] },
            InitialSpec::Gaussian { mean: vec![0.3], sd: 0.08 },
            0.04,
            1e-3,
            1.0,
            SchemeName::Flow,
            10,
        ),
        "nonconvex1d" => {
            let mut c = base(
                unit,
                double_well(),
                InitialSpec::Gaussian { mean: vec![0.3], sd: 0.1 },
                0.04,
                1e-3,
                7.35,
                SchemeName::Flow,
                50,
            );
            c.lagrangian_comparison = Some(LagrangianComparison { tau: 0.1, particles: 32 });
            c
        }
        "sphere3" => {
            let mut c = base(
                SpaceSpec::Points { points: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 0.75f64.sqrt()]] },
                PotentialSpec::Table { values: vec![1.0, 0.5, 0.0] },
                InitialSpec::Weights { values: vec![0.6, 0.3, 0.1] },
                0.5,
                1e-3,
                3.0,
                SchemeName::Flow,
                10,
            );
            c.sphere_export = true;
            c
        }
        "convex2d" => {
            let mut c = base(
                SpaceSpec::Square { lo: 0.0, hi: 1.0, n: 32 },
                PotentialSpec::Quadratic { center: vec![] },
                InitialSpec::Gaussian { mean: vec![0.6, 0.6], sd: 0.1 },
                0.04,
                0.05,
                1.0,
                SchemeName::SjkoLagrangian,
                1,
            );
            c.solver.particles = 48;
            c
        }
        "vertical_cost" => {
            let mut c = base(
                SpaceSpec::Points { points: vec![vec![0.0], vec![1.0]] },
                PotentialSpec::Quadratic { center: vec![] },
                InitialSpec::Uniform,
                0.5,
                1.0,
                1.0,
                SchemeName::Flow,
                1,
            );
            c.vertical = Some(VerticalSpec { m_grid: (1..100).map(|k| k as f64 / 100.0).collect() });
            c
        }
        _ => return None,
    };
    Some(cfg)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Embed the wall-clock time in the SVG files.
    pub timestamps: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub final_energy: f64,
    pub mass_near_argmin: f64,
    pub unconverged_steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub steps: usize,
    pub final_energy: f64,
    pub min_potential: f64,
    pub final_mass_near_argmin: f64,
    /// Steps that missed the inner tolerance (SJKO) and would make the run fail.
    pub failed_steps: Vec<usize>,
    /// Flow steps accepted at the relaxed complementarity bound.
    pub relaxed_steps: Vec<usize>,
    pub comparison: Option<ComparisonReport>,
    pub vertical: Option<Vec<(f64, f64)>>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn converged(&self) -> bool {
        self.failed_steps.is_empty() && self.comparison.as_ref().map_or(true, |c| c.unconverged_steps.is_empty())
    }
}

pub fn build_points(spec: &SpaceSpec) -> Result<PointCloud<f64>> {
    Ok(match spec {
        SpaceSpec::Interval { lo, hi, n } => PointCloud::grid_1d(*lo, *hi, *n),
        SpaceSpec::Square { lo, hi, n } => PointCloud::grid_2d((*lo, *lo), (*hi, *hi), *n, *n),
        SpaceSpec::Points { points } => PointCloud::from_points(points)?,
    })
}

pub fn build_potential(spec: &PotentialSpec, points: &PointCloud<f64>) -> Box<dyn Potential<f64>> {
    match spec {
        PotentialSpec::Quadratic { center } if center.is_empty() => Box::new(Quadratic::origin(points.dim())),
        PotentialSpec::Quadratic { center } => Box::new(Quadratic { center: center.clone() }),
        PotentialSpec::DoubleWell { height, left, right, tilt } => {
            Box::new(DoubleWell { height: *height, left: *left, right: *right, tilt: *tilt })
        }
        PotentialSpec::Table { values } => {
            Box::new(Tabulated { points: points.clone(), values: DVector::from_vec(values.clone()) })
        }
    }
}

pub fn initial_weights(spec: &InitialSpec, points: &PointCloud<f64>, seed: u64) -> DVector<f64> {
    let w = match spec {
        InitialSpec::Gaussian { mean, sd } => DVector::from_iterator(
            points.len(),
            points.iter().map(|p| {
                let d2: f64 = p.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sd * sd)).exp()
            }),
        ),
        InitialSpec::Uniform => DVector::from_element(points.len(), 1.0),
        InitialSpec::Weights { values } => DVector::from_vec(values.clone()),
        InitialSpec::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DVector::from_fn(points.len(), |_, _| 0.2 + rng.gen::<f64>())
        }
    };
    let s = w.sum();
    w / s
}

/// Grid spacing, or the smallest pairwise distance for explicit points.
pub fn spacing(spec: &SpaceSpec, points: &PointCloud<f64>) -> f64 {
    match spec {
        SpaceSpec::Interval { lo, hi, n } | SpaceSpec::Square { lo, hi, n } => (hi - lo) / (*n as f64 - 1.0),
        SpaceSpec::Points { .. } => {
            let mut best = f64::INFINITY;
            for (i, p) in points.iter().enumerate() {
                for q in points.iter().skip(i + 1) {
                    let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    best = best.min(d);
                }
            }
            best
        }
    }
}

/// `count` particles: a grid point drawn from `weights`, then moved
/// uniformly within half a cell and clamped to the bounding box.
pub fn sample_particles(points: &PointCloud<f64>, weights: &DVector<f64>, h: f64, count: usize, seed: u64) -> Result<PointCloud<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(weights.iter().copied()).context("initial weights cannot be sampled")?;
    let dim = points.dim();
    let (mut lo, mut hi) = (vec![f64::INFINITY; dim], vec![f64::NEG_INFINITY; dim]);
    for p in points.iter() {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let jitter = if h.is_finite() { 0.5 * h } else { 0.0 };
    let mut coords = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let p = points.point(pick.sample(&mut rng));
        for k in 0..dim {
            let x = p[k] + jitter * (2.0 * rng.gen::<f64>() - 1.0);
            coords.push(x.clamp(lo[k], hi[k]));
        }
    }
    Ok(PointCloud::new(dim, coords)?)
}

/// Fraction of mass within two grid cells of `center`.
pub fn mass_near(mu: &DiscreteMeasure<f64>, center: &[f64], h: f64) -> f64 {
    let radius2 = (2.0 * h * (1.0 + 1e-9)).powi(2);
    let near = |p: &[f64]| p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius2;
    match mu.mode() {
        Mode::Eulerian => mu.points().iter().zip(mu.weights().iter()).filter(|(p, _)| near(p)).map(|(_, &w)| w).sum(),
        Mode::Lagrangian => mu.points().iter().filter(|p| near(p)).count() as f64 / mu.len() as f64,
    }
}

/// `g_mu(sigma, sigma)` for `mu = m delta_x1 + (1 - m) delta_x2` and
/// `sigma = delta_x2 - delta_x1`, over `m_grid`.
pub fn vertical_cost_curve(x1: &[f64], x2: &[f64], epsilon: f64, m_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if x1.len() != x2.len() || x1 == x2 {
        bail!("the vertical cost curve needs two distinct points of equal dimension");
    }
    let space = Arc::new(DiscreteSpace::new(PointCloud::from_points(&[x1.to_vec(), x2.to_vec()])?)?);
    let ks = KernelSpace::new(space.clone(), epsilon)?;
    let sigma = DVector::from_vec(vec![-1.0, 1.0]);
    m_grid
        .iter()
        .map(|&m| {
            let mu = DiscreteMeasure::eulerian(space.clone(), DVector::from_vec(vec![m, 1.0 - m]))?;
            let emb = embed(&mu, &ks, &SinkhornConfig::with_tolerance(1e-13))?;
            Ok((m, emb.metric_g_mu(&sigma)?))
        })
        .collect()
}

struct Built {
    points: PointCloud<f64>,
    space: Arc<DiscreteSpace<f64>>,
    potential: Box<dyn Potential<f64>>,
    values: DVector<f64>,
    mu0: DiscreteMeasure<f64>,
    h: f64,
    argmin: Vec<f64>,
}

fn build(cfg: &ExperimentConfig) -> Result<Built> {
    let points = build_points(&cfg.space).context("building the space")?;
    let space = Arc::new(DiscreteSpace::new(points.clone()).context("building the space")?);
    let potential = build_potential(&cfg.potential, &points);
    let values = potential.values_on(&points);
    let mu0 = DiscreteMeasure::eulerian_normalized(space.clone(), initial_weights(&cfg.initial, &points, cfg.seed))
        .context("building the initial measure")?;
    let h = spacing(&cfg.space, &points);
    let argmin = points.point(values.argmin().0).to_vec();
    Ok(Built { points, space, potential, values, mu0, h, argmin })
}

fn lcp_config(s: &SolverSpec) -> LcpConfig {
    LcpConfig { tol: s.lcp_tol, accept_tol: s.lcp_accept_tol, ..LcpConfig::default() }
}

fn sjko_config(cfg: &ExperimentConfig, tau: f64, scheme: Scheme) -> SjkoConfig<f64> {
    let mut c = SjkoConfig::new(tau, scheme);
    if let Some(t) = cfg.solver.inner_tol {
        c.inner_tol = t;
    }
    c.inner_max_iter = cfg.solver.inner_max_iter;
    c.sinkhorn = SinkhornConfig::with_tolerance(cfg.solver.sinkhorn_tol);
    c
}

fn lagrangian_start(cfg: &ExperimentConfig, b: &Built, particles: usize) -> Result<DiscreteMeasure<f64>> {
    let cloud = sample_particles(&b.points, b.mu0.weights(), b.h, particles, cfg.seed)?;
    Ok(DiscreteMeasure::lagrangian(cloud)?)
}

fn integrate(cfg: &ExperimentConfig, b: &Built) -> Result<FlowTrajectory<f64>> {
    match cfg.scheme {
        SchemeName::Flow => {
            let ks = KernelSpace::new(b.space.clone(), cfg.epsilon)?;
            let op = PotentialOperator::new(&ks, b.values.clone())?;
            let b0 = embed(&b.mu0, &ks, &SinkhornConfig::default()).context("embedding the initial measure")?;
            let mut fc = FlowConfig::new(cfg.tau, cfg.horizon);
            fc.lcp = lcp_config(&cfg.solver);
            fc.record_every = cfg.solver.record_every;
            Ok(run_flow(&b0, &op, &fc)?)
        }
        SchemeName::SjkoEulerian => {
            let ks = KernelSpace::new(b.space.clone(), cfg.epsilon)?;
            let sc = sjko_config(cfg, cfg.tau, Scheme::Eulerian);
            Ok(run_sjko(&b.mu0, b.potential.as_ref(), cfg.epsilon, &sc, cfg.horizon, Some(&ks))?)
        }
        SchemeName::SjkoLagrangian => {
            let start = lagrangian_start(cfg, b, cfg.solver.particles)?;
            let sc = sjko_config(cfg, cfg.tau, Scheme::Lagrangian);
            Ok(run_sjko(&start, b.potential.as_ref(), cfg.epsilon, &sc, cfg.horizon, None)?)
        }
    }
}

fn stamp(opts: &RunOptions) -> Option<String> {
    opts.timestamps.then(|| {
        let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        format!("generated at unix time {secs}")
    })
}

fn snapshot(cfg: &ExperimentConfig, b: &Built, rec: &FrameRecord, stamp: Option<&str>) -> ::svg::Document {
    let title = format!("{} t = {:.4}", cfg.scenario, rec.t);
    match (&rec.weights, &rec.positions, &cfg.space) {
        (Some(w), _, SpaceSpec::Square { lo, hi, n }) => svg::heatmap_2d(*n, *lo, *hi, w, &title, stamp),
        (Some(w), _, _) if b.points.dim() == 1 => {
            let xs: Vec<f64> = b.points.iter().map(|p| p[0]).collect();
            svg::histogram_1d(&xs, w, Some(b.values.as_slice()), &title, stamp)
        }
        (Some(w), _, _) => {
            let idx: Vec<f64> = (0..w.len()).map(|i| i as f64).collect();
            svg::histogram_1d(&idx, w, None, &title, stamp)
        }
        (None, Some(p), _) if b.points.dim() >= 2 => {
            let lo = b.points.coords().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = b.points.coords().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            svg::scatter_2d(p, lo, hi, &title, stamp)
        }
        (None, Some(p), _) => {
            // Particle counts per grid cell.
            let xs: Vec<f64> = b.points.iter().map(|q| q[0]).collect();
            let mut counts = vec![0.0; xs.len()];
            for q in p {
                let k = xs
                    .iter()
                    .enumerate()
                    .min_by(|a, c| (a.1 - q[0]).abs().total_cmp(&(c.1 - q[0]).abs()))
                    .map_or(0, |(k, _)| k);
                counts[k] += 1.0 / p.len() as f64;
            }
            svg::histogram_1d(&xs, &counts, Some(b.values.as_slice()), &title, stamp)
        }
        _ => svg::line_plot(&[], &[], &title, stamp),
    }
}

/// Evenly spread indices into `0..len`, first and last included.
fn spread(len: usize, count: usize) -> Vec<usize> {
    if len == 0 || count == 0 {
        return vec![];
    }
    if count == 1 || len == 1 {
        return vec![len - 1];
    }
    let mut out: Vec<usize> = (0..count).map(|k| (k * (len - 1) + (count - 1) / 2) / (count - 1)).collect();
    out.dedup();
    out
}

fn summary_rows(traj: &FlowTrajectory<f64>, frames: &[usize], recs: &[FrameRecord], b: &Built) -> Vec<SummaryRow> {
    frames
        .iter()
        .zip(recs)
        .map(|(&i, r)| SummaryRow {
            t: r.t,
            energy: r.energy,
            speed_hc: r.speed_hc,
            mass_near_argmin: mass_near(&traj.measures[i], &b.argmin, b.h),
            hc_norm_residual: traj.states.get(i).map(|s| (s.hc_norm() - 1.0).abs()),
        })
        .collect()
}

fn run_vertical(cfg: &ExperimentConfig, v: &VerticalSpec, opts: &RunOptions, files: &mut Vec<PathBuf>) -> Result<Vec<(f64, f64)>> {
    let SpaceSpec::Points { points } = &cfg.space else {
        bail!("config field `space`: the vertical cost curve needs explicit points");
    };
    let curve = vertical_cost_curve(&points[0], &points[1], cfg.epsilon, &v.m_grid)?;
    let dir = &cfg.output.dir;
    if cfg.output.formats.contains(&Format::Csv) {
        let p = dir.join("vertical_cost.csv");
        export::write_table(&p, "m,cost", &curve.iter().map(|&(m, c)| vec![m, c]).collect::<Vec<_>>())?;
        files.push(p);
    }
    if cfg.output.formats.contains(&Format::Svg) {
        let (ms, cs): (Vec<f64>, Vec<f64>) = curve.iter().copied().unzip();
        let p = dir.join("vertical_cost.svg");
        let title = format!("vertical perturbation cost, eps = {}", cfg.epsilon);
        svg::save(&p, &svg::line_plot(&ms, &cs, &title, stamp(opts).as_deref()))?;
        files.push(p);
    }
    Ok(curve)
}

/// Runs the configured experiment and writes its files.
pub fn run_scenario(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    if cfg.output.formats.contains(&Format::Json) {
        let p = dir.join("config.json");
        std::fs::write(&p, cfg.to_json() + "\n").with_context(|| format!("writing {}", p.display()))?;
        files.push(p);
    }
    let built = build(cfg)?;
    let min_potential = built.values.min();

    if let Some(v) = &cfg.vertical {
        let curve = run_vertical(cfg, v, opts, &mut files)?;
        return Ok(RunReport {
            steps: 0,
            final_energy: built.mu0.integrate(&built.values),
            min_potential,
            final_mass_near_argmin: mass_near(&built.mu0, &built.argmin, built.h),
            failed_steps: vec![],
            relaxed_steps: vec![],
            comparison: None,
            vertical: Some(curve),
            files,
        });
    }

    log::info!("{}: {:?} scheme, {} steps", cfg.scenario, cfg.scheme, sinkflow_core::flow::step_count(cfg.tau, cfg.horizon));
    let traj = integrate(cfg, &built).with_context(|| format!("scenario `{}`", cfg.scenario))?;
    let (failed_steps, relaxed_steps) = match cfg.scheme {
        SchemeName::Flow => (vec![], traj.unconverged_steps.clone()),
        _ => (traj.unconverged_steps.clone(), vec![]),
    };
    // Flow trajectories are already thinned by `record_every`.
    let every = if cfg.scheme == SchemeName::Flow { 1 } else { cfg.solver.record_every };
    let frames = export::frame_selection(traj.len(), every);
    let recs = export::records(&traj, &frames, cfg.tau);
    let rows = summary_rows(&traj, &frames, &recs, &built);
    let st = stamp(opts);

    if cfg.output.formats.contains(&Format::Jsonl) {
        let p = dir.join("trajectory.jsonl");
        export::write_jsonl(&p, &recs)?;
        files.push(p);
    }
    if cfg.output.formats.contains(&Format::Csv) {
        let p = dir.join("summary.csv");
        export::write_summary(&p, &rows)?;
        files.push(p);
    }
    if cfg.output.formats.contains(&Format::Svg) {
        for (k, &i) in spread(recs.len(), cfg.output.svg_frames).iter().enumerate() {
            let p = dir.join(format!("frame_{k:04}.svg"));
            svg::save(&p, &snapshot(cfg, &built, &recs[i], st.as_deref()))?;
            files.push(p);
        }
    }
    if cfg.sphere_export {
        let ks = KernelSpace::new(built.space.clone(), cfg.epsilon)?;
        let r: DMatrix<f64> = ks.kernel().hc_inv_sqrt(&FactorConfig::default())?;
        let coords: Vec<[f64; 3]> = frames
            .iter()
            .map(|&i| {
                let y = &r * traj.states[i].values();
                [y[0], y[1], y[2]]
            })
            .collect();
        let p = dir.join("sphere.csv");
        let rows: Vec<Vec<f64>> = frames.iter().zip(&coords).map(|(&i, c)| vec![traj.times[i], c[0], c[1], c[2]]).collect();
        export::write_table(&p, "t,y1,y2,y3", &rows)?;
        files.push(p);
        if cfg.output.formats.contains(&Format::Svg) {
            let p = dir.join("sphere.svg");
            svg::save(&p, &svg::sphere_path(&coords, &format!("{} on the unit sphere", cfg.scenario), st.as_deref()))?;
            files.push(p);
        }
    }

    let comparison = match &cfg.lagrangian_comparison {
        Some(c) => {
            let start = lagrangian_start(cfg, &built, c.particles)?;
            let sc = sjko_config(cfg, c.tau, Scheme::Lagrangian);
            let lt = run_sjko(&start, built.potential.as_ref(), cfg.epsilon, &sc, cfg.horizon, None)
                .context("Lagrangian comparison run")?;
            let lframes = export::frame_selection(lt.len(), 1);
            let lrecs = export::records(&lt, &lframes, c.tau);
            let lrows = summary_rows(&lt, &lframes, &lrecs, &built);
            if cfg.output.formats.contains(&Format::Csv) {
                let p = dir.join("lagrangian_summary.csv");
                export::write_summary(&p, &lrows)?;
                files.push(p);
            }
            if cfg.output.formats.contains(&Format::Svg) {
                if let Some(last) = lrecs.last() {
                    let p = dir.join("lagrangian_final.svg");
                    svg::save(&p, &snapshot(cfg, &built, last, st.as_deref()))?;
                    files.push(p);
                }
            }
            Some(ComparisonReport {
                final_energy: *lt.energies.last().unwrap_or(&f64::NAN),
                mass_near_argmin: lrows.last().map_or(0.0, |r| r.mass_near_argmin),
                unconverged_steps: lt.unconverged_steps.clone(),
            })
        }
        None => None,
    };

    Ok(RunReport {
        steps: sinkflow_core::flow::step_count(cfg.tau, cfg.horizon),
        final_energy: *traj.energies.last().unwrap_or(&f64::NAN),
        min_potential,
        final_mass_near_argmin: rows.last().map_or(0.0, |r| r.mass_near_argmin),
        failed_steps,
        relaxed_steps,
        comparison,
        vertical: None,
        files,
    })
}
