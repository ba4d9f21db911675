//! The four subcommands as library functions operating on files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use ndtslam_core::graph::{EdgeKind, PoseGraph};
use ndtslam_core::kdtree::KdTree;
use ndtslam_core::metrics::{
    align_by_timestamp, epoch_error, summarize_run, EpochError, RunSummary, TimedPose,
};
use ndtslam_core::ndt::{NdtParams, NdtPyramid};
use ndtslam_core::sim::{enu_to_pose, pose_to_enu, SimulatedRun};
use ndtslam_core::uncertainty::{
    information_matrix, matching_degree_with, reliability_radius, total_uncertainty, InformationMatrix6,
};
use ndtslam_core::urban::{
    build_skyplot, classify, trajectory_urbanization, urbanization_degree, Building, Origin, SkyplotParams,
    Urbanization, UrbanizationClass,
};
use ndtslam_core::{PointCloud, Pose6D};

use crate::config::{LoopMode, PipelineConfig, Timing};
use crate::error::{PipelineError, Result};
use crate::formats::{
    format_buildings, format_cloud, format_graph, format_trajectory, list_scans, parse_buildings, parse_trajectory,
    read_cloud, read_text, scan_file_name, sha256_hex, write_text, Manifest, ManifestScan, TrajectoryRow,
};
use crate::svg;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub manifest: PathBuf,
    pub manifest_sha256: String,
    pub scans: usize,
}

/// Writes a simulated run: scans, `truth.csv`, `buildings.json`, the config
/// echo and `manifest.txt` with SHA-256 checksums of every file.
pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<SimulateOutput> {
    create_dir(out)?;
    let run = SimulatedRun::new(cfg.scenario.clone())?;

    let mut files = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        write_text(&out.join(name), &text)?;
        files.push((name.to_string(), sha256_hex(text.as_bytes())));
        Ok(())
    };
    emit("config.txt", cfg.to_text())?;
    let truth: Vec<TrajectoryRow> = (0..run.len())
        .map(|k| TrajectoryRow {
            pose: run.truth(k),
            reliability: None,
        })
        .collect();
    emit("truth.csv", format_trajectory(&truth)?)?;
    emit("buildings.json", format_buildings(&run.scene.buildings))?;

    let scans: Vec<ManifestScan> = (0..run.len())
        .into_par_iter()
        .map(|k| -> Result<ManifestScan> {
            let text = format_cloud(&run.scan(k)?);
            let file = scan_file_name(k);
            write_text(&out.join(&file), &text)?;
            Ok(ManifestScan {
                file,
                t: run.time(k),
                sha256: sha256_hex(text.as_bytes()),
            })
        })
        .collect::<Result<_>>()?;

    let manifest = Manifest {
        seed: cfg.scenario.seed,
        initial_pose: run.sensor_pose(0),
        files,
        scans,
    };
    let text = manifest.to_text();
    let path = out.join(Manifest::FILE);
    write_text(&path, &text)?;
    Ok(SimulateOutput {
        manifest: path,
        manifest_sha256: sha256_hex(text.as_bytes()),
        scans: manifest.scans.len(),
    })
}

/// One registration step of the odometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLog {
    pub frame: usize,
    pub iterations: usize,
    /// Registration time fed to the uncertainty model, seconds.
    pub t_c: f64,
    pub score: f64,
    pub u_total: f64,
    pub failed: bool,
}

impl FrameLog {
    pub fn line(&self) -> String {
        format!(
            "frame {:6} N_c {:3} t_c {:.6} score {:.3} u_total {:.6}{}",
            self.frame,
            self.iterations,
            self.t_c,
            self.score,
            self.u_total,
            if self.failed { " FAILED" } else { "" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct SlamOutput {
    pub trajectory: PathBuf,
    pub graph: PathBuf,
    pub frames: Vec<FrameLog>,
    pub failed: usize,
}

struct Frame {
    t: f64,
    input: PointCloud,
    grid: NdtPyramid,
    tree: KdTree,
}

fn prepare(path: &Path, t: f64, k: usize, params: &NdtParams) -> Result<Frame> {
    let cloud = read_cloud(path, t, k as u64)?;
    let input = if params.downsample_leaf > 0.0 {
        cloud.voxel_downsample(params.downsample_leaf)?
    } else {
        cloud.clone()
    };
    let grid = NdtPyramid::build(&cloud, params)?;
    let tree = KdTree::new(cloud.points());
    Ok(Frame { t, input, grid, tree })
}

/// Scans with timestamps and the anchor pose. Uses the manifest when present,
/// otherwise the `scan_%06d.txt` files at the configured scan rate.
fn scan_sequence(dir: &Path, cfg: &PipelineConfig) -> Result<(Vec<(PathBuf, f64)>, Pose6D)> {
    let manifest_path = dir.join(Manifest::FILE);
    if manifest_path.exists() {
        let m = Manifest::parse(&read_text(&manifest_path)?, &manifest_path)?;
        let mut scans = Vec::with_capacity(m.scans.len());
        for s in &m.scans {
            let p = dir.join(&s.file);
            if !p.is_file() {
                return Err(PipelineError::Data(format!("missing scan file {}", p.display())));
            }
            scans.push((p, s.t));
        }
        Ok((scans, m.initial_pose))
    } else {
        let rate = cfg.scenario.lidar.scan_rate;
        let scans = list_scans(dir)?
            .into_iter()
            .enumerate()
            .map(|(k, p)| (p, k as f64 / rate))
            .collect();
        Ok((scans, Pose6D::IDENTITY))
    }
}

/// Scans prepared in parallel per batch; registration itself is sequential.
const BATCH: usize = 32;

/// Sequential NDT odometry with a constant-velocity prior, uncertainty-weighted
/// pose graph, optional loop edges, optimization, and export.
pub fn slam(scans_dir: &Path, cfg: &PipelineConfig, out: &Path) -> Result<SlamOutput> {
    let (scans, anchor) = scan_sequence(scans_dir, cfg)?;
    if scans.len() < 2 {
        return Err(PipelineError::Data(format!(
            "{}: need at least 2 scans, found {}",
            scans_dir.display(),
            scans.len()
        )));
    }
    create_dir(out)?;
    let params = cfg.registration;
    // Inputs are downsampled once in `prepare`.
    let register_params = NdtParams {
        downsample_leaf: 0.0,
        ..params
    };
    let coeffs = cfg.uncertainty;

    let mut graph = PoseGraph::new(anchor, scans[0].1);
    let mut reliability = vec![0.0];
    let mut frames = Vec::with_capacity(scans.len() - 1);
    let mut motion = Pose6D::IDENTITY;
    let mut previous: Option<Frame> = None;
    let mut failed = 0;

    for (start, batch) in scans.chunks(BATCH).enumerate().map(|(b, c)| (b * BATCH, c)) {
        let prepared: Vec<Frame> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (path, t))| prepare(path, *t, start + i, &params))
            .collect::<Result<_>>()?;
        for (i, current) in prepared.into_iter().enumerate() {
            let k = start + i;
            let Some(prev) = previous.take() else {
                previous = Some(current);
                continue;
            };
            let attempt = prev.grid.register(&current.input, &motion, &register_params);
            let (transform, iterations, evaluations, elapsed, score, ok) = match &attempt {
                Ok(r) if r.converged => (r.transform, r.iterations, r.point_evaluations, r.elapsed, r.final_score, true),
                Ok(r) => (motion, r.iterations, r.point_evaluations, r.elapsed, r.final_score, false),
                Err(e) => {
                    warn!("frame {k}: registration error: {e}");
                    (motion, params.max_iterations, 0, 0.0, 0.0, false)
                }
            };
            let t_c = match cfg.timing {
                Timing::Wall => elapsed,
                Timing::Deterministic => evaluations as f64 * cfg.seconds_per_evaluation,
            };
            let u_delta = matching_degree_with(&prev.tree, &current.input, &transform);
            let breakdown = total_uncertainty(u_delta, t_c, iterations, &coeffs)?;
            let omega = information_matrix(breakdown.u_total, &coeffs)?;
            graph.add_odometry_step(transform, omega, current.t, ok);
            reliability.push(reliability_radius(breakdown.u_total, coeffs.c_p));

            let log = FrameLog {
                frame: k,
                iterations,
                t_c,
                score,
                u_total: breakdown.u_total,
                failed: !ok,
            };
            if ok {
                motion = transform;
                info!("{}", log.line());
            } else {
                failed += 1;
                warn!("{}", log.line());
            }
            frames.push(log);
            previous = Some(current);
        }
    }

    if cfg.loops.mode == LoopMode::Truth {
        add_truth_loops(&mut graph, scans_dir, cfg)?;
    }
    let (optimized, report) = graph.optimize(&cfg.optimizer)?;
    info!(
        "graph: {} nodes, {} edges, cost {:.6} -> {:.6} in {} iterations",
        optimized.nodes().len(),
        optimized.edges().len(),
        report.initial_cost(),
        report.final_cost(),
        report.iterations
    );

    let rows: Vec<TrajectoryRow> = optimized
        .nodes()
        .iter()
        .zip(&reliability)
        .map(|(n, r)| TrajectoryRow {
            pose: TimedPose {
                t: n.timestamp,
                pose: pose_to_enu(&n.estimate),
            },
            reliability: Some(*r),
        })
        .collect();
    let trajectory = out.join("trajectory.csv");
    write_text(&trajectory, &format_trajectory(&rows)?)?;
    let graph_path = out.join("graph.txt");
    write_text(&graph_path, &format_graph(&optimized))?;
    write_text(&out.join("slam_config.txt"), &cfg.to_text())?;
    let mut log_text = String::new();
    for f in &frames {
        let _ = writeln!(log_text, "{}", f.line());
    }
    write_text(&out.join("slam_log.txt"), &log_text)?;

    let total = frames.len();
    if failed as f64 > cfg.max_failure_fraction * total as f64 {
        return Err(PipelineError::TooManyFailures {
            failed,
            total,
            limit: cfg.max_failure_fraction * 100.0,
        });
    }
    Ok(SlamOutput {
        trajectory,
        graph: graph_path,
        frames,
        failed,
    })
}

/// Loop edges from the run's `truth.csv` between nodes `stride` apart.
/// Truth carries no roll or pitch, so these are planar measurements.
fn add_truth_loops(graph: &mut PoseGraph, scans_dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    let path = scans_dir.join("truth.csv");
    let truth = parse_trajectory(&read_text(&path)?, &path)?;
    let information = InformationMatrix6::new(cfg.loops.weight_translation, cfg.loops.weight_rotation)?;
    let n = graph.nodes().len().min(truth.len());
    let stride = cfg.loops.stride;
    let mut j = stride;
    while j < n {
        let i = j - stride;
        let a = enu_to_pose(&truth[i].pose.pose);
        let b = enu_to_pose(&truth[j].pose.pose);
        graph.add_loop(i, j, a.inverse().compose(&b), information)?;
        j += stride;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub summary: RunSummary,
    pub errors: Vec<EpochError>,
    pub dropped: usize,
    pub urbanization: UrbanizationClass,
    pub mean_urbanization_degree: f64,
    pub traffic: String,
    pub config_echo: String,
    pub version: &'static str,
}

pub const SUMMARY_COLUMNS: [&str; 31] = [
    "urbanization",
    "traffic",
    "epochs",
    "dropped",
    "duration_s",
    "lateral_mean",
    "lateral_std",
    "longitudinal_mean",
    "longitudinal_std",
    "altitude_mean",
    "altitude_std",
    "reliability_mean",
    "reliability_std",
    "err2d_mean",
    "err2d_std",
    "err3d_mean",
    "err3d_std",
    "gradient2d_mean",
    "gradient2d_std",
    "gradient3d_mean",
    "gradient3d_std",
    "coverage",
    "coverage_gap",
    "std_mode",
    "c_t",
    "c_n",
    "c_p",
    "c_r",
    "urbanization_degree",
    "seed",
    "version",
];

impl RunReport {
    pub fn summary_header() -> String {
        SUMMARY_COLUMNS.join(",")
    }

    pub fn summary_row(&self, cfg: &PipelineConfig) -> String {
        let s = &self.summary;
        let f = |v: f64| format!("{v:.6}");
        let u = &cfg.uncertainty;
        let fields = [
            self.urbanization.name().to_string(),
            self.traffic.clone(),
            s.epochs.to_string(),
            self.dropped.to_string(),
            f(s.duration),
            f(s.lateral.mean),
            f(s.lateral.std),
            f(s.longitudinal.mean),
            f(s.longitudinal.std),
            f(s.altitude.mean),
            f(s.altitude.std),
            f(s.reliability.mean),
            f(s.reliability.std),
            f(s.err2d.mean),
            f(s.err2d.std),
            f(s.err3d.mean),
            f(s.err3d.std),
            f(s.gradient2d.mean),
            f(s.gradient2d.std),
            f(s.gradient3d.mean),
            f(s.gradient3d.std),
            f(s.coverage.fraction),
            f(s.coverage.mean_gap),
            cfg.std_mode.name().to_string(),
            u.c_t.to_string(),
            u.c_n.to_string(),
            u.c_p.to_string(),
            u.c_r.to_string(),
            f(self.mean_urbanization_degree),
            cfg.scenario.seed.to_string(),
            self.version.to_string(),
        ];
        fields.join(",")
    }

    pub fn text(&self, cfg: &PipelineConfig) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "ndtslam {} evaluation report", self.version);
        let _ = writeln!(
            out,
            "urbanization: {} (mean degree {:.2} deg)",
            self.urbanization, self.mean_urbanization_degree
        );
        let _ = writeln!(out, "traffic: {}", self.traffic);
        let _ = writeln!(
            out,
            "epochs: {} matched, {} dropped; duration {:.2} s",
            s.epochs, self.dropped, s.duration
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<16} {:>12} {:>12}", "", "mean", "std");
        for (name, m) in [
            ("lateral (m)", s.lateral),
            ("longitudinal (m)", s.longitudinal),
            ("altitude (m)", s.altitude),
            ("reliability (m)", s.reliability),
            ("2D (m)", s.err2d),
            ("3D (m)", s.err3d),
            ("2D gradient", s.gradient2d),
            ("3D gradient", s.gradient3d),
        ] {
            let _ = writeln!(out, "{name:<16} {:>12.4} {:>12.4}", m.mean, m.std);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "reliability coverage: {:.4} of epochs; mean gap {:+.4} m ({})",
            s.coverage.fraction,
            s.coverage.mean_gap,
            if s.coverage.underestimated() { "underestimated" } else { "not underestimated" }
        );
        let _ = writeln!(
            out,
            "note: gradients are mean error / duration; gradient std is error std / duration (interpretation), {} std",
            cfg.std_mode.name()
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "config:");
        out.push_str(&self.config_echo);
        out
    }
}

/// Compares an estimated trajectory to the truth and writes `summary.csv`,
/// `report.txt`, `errors.csv` and three SVG figures to `out`. The summary row
/// is also appended to `results` (created with a header when absent).
pub fn eval(
    estimate: &Path,
    truth: &Path,
    buildings: &Path,
    cfg: Option<&PipelineConfig>,
    out: &Path,
    results: Option<&Path>,
) -> Result<RunReport> {
    let default_cfg = PipelineConfig::default();
    let config = cfg.unwrap_or(&default_cfg);
    let est = parse_trajectory(&read_text(estimate)?, estimate)?;
    let gt = parse_trajectory(&read_text(truth)?, truth)?;
    let blds = parse_buildings(&read_text(buildings)?, buildings)?;

    let est_poses: Vec<TimedPose> = est.iter().map(|r| r.pose).collect();
    let gt_poses: Vec<TimedPose> = gt.iter().map(|r| r.pose).collect();
    let alignment = align_by_timestamp(&est_poses, &gt_poses, config.align_tolerance);
    if alignment.pairs.is_empty() {
        return Err(PipelineError::Data(format!(
            "{} and {} share no epochs within {} s",
            estimate.display(),
            truth.display(),
            config.align_tolerance
        )));
    }
    let errors: Vec<EpochError> = alignment
        .pairs
        .iter()
        .map(|&(i, j)| EpochError {
            t: gt[j].pose.t,
            reliability: est[i].reliability.unwrap_or(0.0),
            ..epoch_error(&est[i].pose.pose, &gt[j].pose.pose)
        })
        .collect();
    let duration = errors[errors.len() - 1].t - errors[0].t;
    if !(duration > 0.0) {
        return Err(PipelineError::Data("matched epochs span no time".into()));
    }
    let summary = summarize_run(&errors, duration, config.std_mode)?;

    let origins: Vec<Origin> = alignment
        .pairs
        .iter()
        .map(|&(_, j)| {
            let p = gt[j].pose.pose;
            [p.e, p.n, p.u]
        })
        .collect();
    let sky = SkyplotParams::default();
    let urban = trajectory_urbanization(&blds, &origins, &sky)?;

    let report = RunReport {
        summary,
        errors,
        dropped: alignment.dropped,
        urbanization: urban.majority,
        mean_urbanization_degree: urban.mean_degree,
        traffic: cfg.map_or_else(|| "unknown".to_string(), |c| c.scenario.traffic.name().to_string()),
        config_echo: config.to_text(),
        version: VERSION,
    };

    create_dir(out)?;
    let header = RunReport::summary_header();
    let row = report.summary_row(config);
    write_text(&out.join("summary.csv"), &format!("{header}\n{row}\n"))?;
    write_text(&out.join("report.txt"), &report.text(config))?;

    let mut errors_csv = String::from("t,lateral,longitudinal,altitude,err2d,err3d,reliability\n");
    for e in &report.errors {
        let _ = writeln!(
            errors_csv,
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            e.t, e.lateral, e.longitudinal, e.altitude, e.err2d, e.err3d, e.reliability
        );
    }
    write_text(&out.join("errors.csv"), &errors_csv)?;

    let mid = origins[origins.len() / 2];
    if let Ok(plot) = build_skyplot(&blds, &mid, &sky) {
        let u = classify(urbanization_degree(&plot));
        let title = format!("Skyplot at ({:.1}, {:.1}): {:.1} deg, {}", mid[0], mid[1], u.degree, u.class);
        write_text(&out.join("skyplot.svg"), &svg::skyplot(&plot, &title))?;
    }
    let series = |label, color, f: fn(&EpochError) -> f64| svg::Series {
        label,
        color,
        points: report.errors.iter().map(|e| (e.t, f(e))).collect(),
    };
    write_text(
        &out.join("error_curve.svg"),
        &svg::line_chart(
            "Positioning error",
            "time (s)",
            "error (m)",
            &[series("2D", "#1f77b4", |e| e.err2d), series("3D", "#d62728", |e| e.err3d)],
        ),
    )?;
    write_text(
        &out.join("reliability_curve.svg"),
        &svg::line_chart(
            "Reliability vs 3D error",
            "time (s)",
            "meters",
            &[series("3D error", "#d62728", |e| e.err3d), series("reliability", "#2ca02c", |e| e.reliability)],
        ),
    )?;

    let results = results.map(Path::to_path_buf).unwrap_or_else(|| out.join("results.csv"));
    append_result(&results, &header, &row)?;
    Ok(report)
}

fn append_result(path: &Path, header: &str, row: &str) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| PipelineError::io(path, e))?;
    let text = if fresh { format!("{header}\n{row}\n") } else { format!("{row}\n") };
    f.write_all(text.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

/// Standalone skyplot for one observation point.
pub fn skyplot(buildings: &Path, origin: Origin, out: &Path) -> Result<Urbanization> {
    let blds: Vec<Building> = parse_buildings(&read_text(buildings)?, buildings)?;
    let plot = build_skyplot(&blds, &origin, &SkyplotParams::default())?;
    let u = classify(urbanization_degree(&plot));
    let title = format!(
        "Skyplot at ({}, {}, {}): {:.2} deg, {}",
        origin[0], origin[1], origin[2], u.degree, u.class
    );
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &svg::skyplot(&plot, &title))?;
    Ok(u)
}

/// Odometry edges whose registration failed, by target node.
pub fn failed_edges(graph: &PoseGraph) -> Vec<usize> {
    graph
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::Odometry && !e.converged)
        .map(|e| e.to)
        .collect()
}
