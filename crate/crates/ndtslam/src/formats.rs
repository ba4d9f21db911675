//! Text formats for clouds, pose graphs, building models, trajectories and
//! the simulator manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndtslam_core::graph::{EdgeKind, GraphEdge, GraphNode, PoseGraph};
use ndtslam_core::metrics::{EnuPose, TimedPose};
use ndtslam_core::uncertainty::InformationMatrix6;
use ndtslam_core::urban::Building;
use ndtslam_core::{Point3, PointCloud, Pose6D};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse_floats<const N: usize>(fields: &[&str], path: &Path, line: usize) -> Result<[f64; N]> {
    if fields.len() != N {
        return Err(PipelineError::format(
            path,
            line,
            format!("expected {N} numbers, found {}", fields.len()),
        ));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| PipelineError::format(path, line, format!("bad number {f:?}")))?;
    }
    Ok(out)
}

/// `POINTS <n>` then one `x y z` line per point, 0.1 mm resolution.
pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 28 + 16);
    let _ = writeln!(out, "POINTS {}", cloud.len());
    for p in cloud.points() {
        push_fixed4(&mut out, p.x);
        out.push(' ');
        push_fixed4(&mut out, p.y);
        out.push(' ');
        push_fixed4(&mut out, p.z);
        out.push('\n');
    }
    out
}

/// `v` rounded half away from zero to four decimals. Much faster than `{:.4}`,
/// which dominates scan writing otherwise.
fn push_fixed4(out: &mut String, v: f64) {
    let q = (v * 1e4).round() as i64;
    if q < 0 {
        out.push('-');
    }
    let q = q.unsigned_abs();
    let _ = write!(out, "{}.{:04}", q / 10_000, q % 10_000);
}

pub fn parse_cloud(text: &str, path: &Path) -> Result<Vec<Point3>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| PipelineError::format(path, 1, "missing POINTS header"))?;
    let count: usize = header
        .trim()
        .strip_prefix("POINTS")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| PipelineError::format(path, 1, "expected `POINTS <n>`"))?;
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [x, y, z] = parse_floats::<3>(&fields, path, i + 1)?;
        points.push(Point3::new(x, y, z));
    }
    if points.len() != count {
        return Err(PipelineError::format(
            path,
            text.lines().count(),
            format!("header says {count} points, found {}", points.len()),
        ));
    }
    Ok(points)
}

pub fn read_cloud(path: &Path, timestamp: f64, frame_id: u64) -> Result<PointCloud> {
    let points = parse_cloud(&read_text(path)?, path)?;
    PointCloud::new(points, timestamp, frame_id)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

/// `NODE id tx ty tz rx ry rz` and `EDGE from to tx ty tz rx ry rz w_p w_r`.
pub fn format_graph(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for n in graph.nodes() {
        let p = n.estimate;
        let _ = writeln!(out, "NODE {} {} {} {} {} {} {}", n.id, p.tx, p.ty, p.tz, p.rx, p.ry, p.rz);
    }
    for e in graph.edges() {
        let m = e.measurement;
        let _ = writeln!(
            out,
            "EDGE {} {} {} {} {} {} {} {} {} {}",
            e.from, e.to, m.tx, m.ty, m.tz, m.rx, m.ry, m.rz, e.information.translation, e.information.rotation
        );
    }
    out
}

/// Edges between consecutive ids are read as odometry, all others as loops.
/// Node 0 is the anchor.
pub fn parse_graph(text: &str, path: &Path) -> Result<PoseGraph> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let index = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| PipelineError::format(path, line_no, format!("bad node id {s:?}")))
        };
        match fields.first() {
            None => continue,
            Some(&"NODE") if fields.len() == 8 => {
                let id = index(fields[1])?;
                let v = parse_floats::<6>(&fields[2..], path, line_no)?;
                nodes.push(GraphNode {
                    id,
                    estimate: Pose6D::new(v[0], v[1], v[2], v[3], v[4], v[5]),
                    timestamp: id as f64,
                });
            }
            Some(&"EDGE") if fields.len() == 11 => {
                let (from, to) = (index(fields[1])?, index(fields[2])?);
                let v = parse_floats::<8>(&fields[3..], path, line_no)?;
                let information = InformationMatrix6::new(v[6], v[7])
                    .map_err(|e| PipelineError::format(path, line_no, e.to_string()))?;
                edges.push(GraphEdge {
                    from,
                    to,
                    measurement: Pose6D::new(v[0], v[1], v[2], v[3], v[4], v[5]),
                    information,
                    kind: if to == from + 1 { EdgeKind::Odometry } else { EdgeKind::Loop },
                    converged: true,
                });
            }
            Some(_) => return Err(PipelineError::format(path, line_no, "expected a NODE or EDGE record")),
        }
    }
    PoseGraph::from_parts(nodes, edges, 0).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
struct BuildingRecord {
    footprint: Vec<[f64; 2]>,
    height: f64,
}

/// JSON array of `{"footprint": [[e, n], ...], "height": h}`.
pub fn format_buildings(buildings: &[Building]) -> String {
    let records: Vec<BuildingRecord> = buildings
        .iter()
        .map(|b| BuildingRecord {
            footprint: b.footprint().to_vec(),
            height: b.height(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&records).unwrap_or_else(|_| "[]".into());
    s.push('\n');
    s
}

pub fn parse_buildings(text: &str, path: &Path) -> Result<Vec<Building>> {
    let records: Vec<BuildingRecord> = serde_json::from_str(text)
        .map_err(|e| PipelineError::format(path, e.line(), e.to_string()))?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Building::new(r.footprint, r.height)
                .map_err(|e| PipelineError::Data(format!("{}: building {i}: {e}", path.display())))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub pose: TimedPose,
    pub reliability: Option<f64>,
}

/// Header `t,e,n,u,heading`, plus `reliability` when every row has one.
/// Refuses non-finite values.
pub fn format_trajectory(rows: &[TrajectoryRow]) -> Result<String> {
    let with_reliability = !rows.is_empty() && rows.iter().all(|r| r.reliability.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t", "e", "n", "u", "heading"];
    if with_reliability {
        header.push("reliability");
    }
    let csv_err = |e: csv::Error| PipelineError::Data(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, r) in rows.iter().enumerate() {
        let p = r.pose.pose;
        let mut values = vec![r.pose.t, p.e, p.n, p.u, p.heading];
        if with_reliability {
            values.push(r.reliability.unwrap_or(0.0));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::Data(format!("non-finite value in trajectory row {i}")));
        }
        w.write_record(values.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PipelineError::Data(e.to_string()))
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = r
        .headers()
        .map_err(|e| PipelineError::format(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(["t", "e", "n", "u", "heading"]) {
        *slot = column(name).ok_or_else(|| PipelineError::format(path, 1, format!("missing column {name:?}")))?;
    }
    let rel = column("reliability");
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| PipelineError::format(path, line, e.to_string()))?;
        let get = |k: usize| -> Result<f64> {
            record
                .get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| PipelineError::format(path, line, format!("bad value in column {k}")))
        };
        rows.push(TrajectoryRow {
            pose: TimedPose {
                t: get(idx[0])?,
                pose: EnuPose::new(get(idx[1])?, get(idx[2])?, get(idx[3])?, get(idx[4])?),
            },
            reliability: rel.map(get).transpose()?,
        });
    }
    if rows.windows(2).any(|w| w[1].pose.t < w[0].pose.t) {
        return Err(PipelineError::Data(format!("{}: timestamps not sorted", path.display())));
    }
    Ok(rows)
}

pub fn scan_file_name(k: usize) -> String {
    format!("scan_{k:06}.txt")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestScan {
    pub file: String,
    pub t: f64,
    pub sha256: String,
}

/// Index of a simulated run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub initial_pose: Pose6D,
    /// (file, sha256) for the config echo, truth and buildings.
    pub files: Vec<(String, String)>,
    pub scans: Vec<ManifestScan>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.txt";

    pub fn to_text(&self) -> String {
        let p = self.initial_pose;
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "initial_pose = {} {} {} {} {} {}", p.tx, p.ty, p.tz, p.rx, p.ry, p.rz);
        let _ = writeln!(out, "scans = {}", self.scans.len());
        for (name, sha) in &self.files {
            let _ = writeln!(out, "file {name} {sha}");
        }
        for s in &self.scans {
            let _ = writeln!(out, "scan {} {} {}", s.file, s.t, s.sha256);
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut seed = None;
        let mut initial_pose = None;
        let mut declared = None;
        let mut files = Vec::new();
        let mut scans = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| PipelineError::format(path, line_no, m.to_string());
            match fields.as_slice() {
                [] => {}
                ["seed", "=", v] => seed = Some(v.parse().map_err(|_| bad("bad seed"))?),
                ["scans", "=", v] => declared = Some(v.parse::<usize>().map_err(|_| bad("bad scan count"))?),
                ["initial_pose", "=", rest @ ..] => {
                    let v = parse_floats::<6>(rest, path, line_no)?;
                    initial_pose = Some(Pose6D::new(v[0], v[1], v[2], v[3], v[4], v[5]));
                }
                ["file", name, sha] => files.push((name.to_string(), sha.to_string())),
                ["scan", name, t, sha] => scans.push(ManifestScan {
                    file: name.to_string(),
                    t: t.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| bad("bad timestamp"))?,
                    sha256: sha.to_string(),
                }),
                _ => return Err(bad("unrecognized manifest line")),
            }
        }
        if declared.is_some_and(|n| n != scans.len()) {
            return Err(PipelineError::format(path, 0, "scan count does not match scan entries"));
        }
        Ok(Self {
            seed: seed.unwrap_or(0),
            initial_pose: initial_pose.unwrap_or(Pose6D::IDENTITY),
            files,
            scans,
        })
    }
}

/// Scan files in a directory, `scan_000000.txt` upward; a gap in the
/// numbering is reported by the name of the first missing file.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(k) = name
            .strip_prefix("scan_")
            .and_then(|r| r.strip_suffix(".txt"))
            .and_then(|n| n.parse::<usize>().ok())
        {
            indices.push(k);
        }
    }
    indices.sort_unstable();
    for (expected, &k) in indices.iter().enumerate() {
        if k != expected {
            return Err(PipelineError::Data(format!(
                "missing scan file {}",
                dir.join(scan_file_name(expected)).display()
            )));
        }
    }
    Ok(indices.into_iter().map(|k| dir.join(scan_file_name(k))).collect())
}
