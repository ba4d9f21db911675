//! Flat `section.key = value` configuration.
//!
//! `#` starts a comment. Every key is optional; unknown and repeated keys are
//! errors. The scenario preset keys (`scenario.urbanization`,
//! `scenario.traffic`, `scenario.seed`) are applied first wherever they
//! appear, so explicit geometry keys override the preset regardless of order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndtslam_core::graph::OptimizerParams;
use ndtslam_core::metrics::StdMode;
use ndtslam_core::ndt::NdtParams;
use ndtslam_core::sim::{ScenarioConfig, TrafficPreset};
use ndtslam_core::uncertainty::UncertaintyCoefficients;
use ndtslam_core::urban::UrbanizationClass;

use crate::error::{PipelineError, Result};

/// Source of the registration time `t_c` fed to the uncertainty model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Measured wall-clock time.
    Wall,
    /// Point evaluations times a fixed cost; reproducible across machines.
    Deterministic,
}

impl Timing {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Wall => "wall",
            Self::Deterministic => "deterministic",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "wall" => Some(Self::Wall),
            "deterministic" => Some(Self::Deterministic),
            _ => None,
        }
    }
}

/// Loop edges added to the graph before optimization. `Truth` derives them
/// from the run's ground truth; it exists to exercise the back end in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    None,
    Truth,
}

impl LoopMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Truth => "truth",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "truth" => Some(Self::Truth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopPolicy {
    pub mode: LoopMode,
    /// Node spacing between the two ends of each injected edge.
    pub stride: usize,
    pub weight_translation: f64,
    pub weight_rotation: f64,
}

impl Default for LoopPolicy {
    fn default() -> Self {
        Self {
            mode: LoopMode::None,
            stride: 50,
            weight_translation: 100.0,
            weight_rotation: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    pub registration: NdtParams,
    pub timing: Timing,
    /// Nominal seconds per point evaluation under [`Timing::Deterministic`].
    pub seconds_per_evaluation: f64,
    pub uncertainty: UncertaintyCoefficients,
    pub optimizer: OptimizerParams,
    pub loops: LoopPolicy,
    /// Largest tolerated fraction of failed registrations.
    pub max_failure_fraction: f64,
    pub std_mode: StdMode,
    pub align_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::preset(UrbanizationClass::Sparse, TrafficPreset::Normal, 1),
            registration: NdtParams::default(),
            timing: Timing::Wall,
            seconds_per_evaluation: 1e-7,
            uncertainty: UncertaintyCoefficients::default(),
            optimizer: OptimizerParams::default(),
            loops: LoopPolicy::default(),
            max_failure_fraction: 0.2,
            std_mode: StdMode::Population,
            align_tolerance: 0.05,
        }
    }
}

type Get = fn(&PipelineConfig) -> String;
type Set = fn(&mut PipelineConfig, &str) -> std::result::Result<(), String>;

fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse {s:?} as a number"))
}

fn finite(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = num(s)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

const PRESET_KEYS: [&str; 3] = ["scenario.urbanization", "scenario.traffic", "scenario.seed"];

#[rustfmt::skip]
const KEYS: &[(&str, Get, Set)] = &[
    ("scenario.urbanization", |c| c.scenario.urbanization.name().into(), |c, v| {
        c.scenario.urbanization = UrbanizationClass::parse(v)
            .ok_or_else(|| format!("expected sparse, sub-urban or dense-urban, got {v:?}"))?;
        Ok(())
    }),
    ("scenario.traffic", |c| c.scenario.traffic.name().into(), |c, v| {
        c.scenario.traffic = TrafficPreset::parse(v).ok_or_else(|| format!("expected normal or dense, got {v:?}"))?;
        Ok(())
    }),
    ("scenario.seed", |c| c.scenario.seed.to_string(), |c, v| { c.scenario.seed = num(v)?; Ok(()) }),
    ("scenario.street_width", |c| c.scenario.street_width.to_string(), |c, v| { c.scenario.street_width = finite(v)?; Ok(()) }),
    ("scenario.building_height_min", |c| c.scenario.building_height_min.to_string(), |c, v| { c.scenario.building_height_min = finite(v)?; Ok(()) }),
    ("scenario.building_height_max", |c| c.scenario.building_height_max.to_string(), |c, v| { c.scenario.building_height_max = finite(v)?; Ok(()) }),
    ("scenario.duration", |c| c.scenario.duration.to_string(), |c, v| { c.scenario.duration = finite(v)?; Ok(()) }),
    ("scenario.speed", |c| c.scenario.speed.to_string(), |c, v| { c.scenario.speed = finite(v)?; Ok(()) }),
    ("scenario.accel_time", |c| c.scenario.accel_time.to_string(), |c, v| { c.scenario.accel_time = finite(v)?; Ok(()) }),
    ("scenario.vehicles", |c| c.scenario.vehicle_count.to_string(), |c, v| { c.scenario.vehicle_count = num(v)?; Ok(()) }),
    ("scenario.weave_amplitude", |c| c.scenario.weave_amplitude.to_string(), |c, v| { c.scenario.weave_amplitude = finite(v)?; Ok(()) }),
    ("scenario.weave_wavelength", |c| c.scenario.weave_wavelength.to_string(), |c, v| { c.scenario.weave_wavelength = finite(v)?; Ok(()) }),
    ("scenario.pitch_amplitude", |c| c.scenario.pitch_amplitude_deg.to_string(), |c, v| { c.scenario.pitch_amplitude_deg = finite(v)?; Ok(()) }),
    ("scenario.roll_amplitude", |c| c.scenario.roll_amplitude_deg.to_string(), |c, v| { c.scenario.roll_amplitude_deg = finite(v)?; Ok(()) }),
    ("lidar.beams", |c| c.scenario.lidar.beams.to_string(), |c, v| { c.scenario.lidar.beams = num(v)?; Ok(()) }),
    ("lidar.min_elevation", |c| c.scenario.lidar.min_elevation_deg.to_string(), |c, v| { c.scenario.lidar.min_elevation_deg = finite(v)?; Ok(()) }),
    ("lidar.max_elevation", |c| c.scenario.lidar.max_elevation_deg.to_string(), |c, v| { c.scenario.lidar.max_elevation_deg = finite(v)?; Ok(()) }),
    ("lidar.azimuth_step", |c| c.scenario.lidar.azimuth_step_deg.to_string(), |c, v| { c.scenario.lidar.azimuth_step_deg = finite(v)?; Ok(()) }),
    ("lidar.max_range", |c| c.scenario.lidar.max_range.to_string(), |c, v| { c.scenario.lidar.max_range = finite(v)?; Ok(()) }),
    ("lidar.range_noise", |c| c.scenario.lidar.range_noise.to_string(), |c, v| { c.scenario.lidar.range_noise = finite(v)?; Ok(()) }),
    ("lidar.scan_rate", |c| c.scenario.lidar.scan_rate.to_string(), |c, v| { c.scenario.lidar.scan_rate = finite(v)?; Ok(()) }),
    ("lidar.mount_height", |c| c.scenario.lidar.mount_height.to_string(), |c, v| { c.scenario.lidar.mount_height = finite(v)?; Ok(()) }),
    ("registration.cell_size", |c| c.registration.cell_size.to_string(), |c, v| { c.registration.cell_size = finite(v)?; Ok(()) }),
    ("registration.levels", |c| c.registration.levels.to_string(), |c, v| { c.registration.levels = num(v)?; Ok(()) }),
    ("registration.min_points_per_cell", |c| c.registration.min_points_per_cell.to_string(), |c, v| { c.registration.min_points_per_cell = num(v)?; Ok(()) }),
    ("registration.eigen_ratio", |c| c.registration.eigen_ratio.to_string(), |c, v| { c.registration.eigen_ratio = finite(v)?; Ok(()) }),
    ("registration.covariance_floor", |c| c.registration.covariance_floor.to_string(), |c, v| { c.registration.covariance_floor = finite(v)?; Ok(()) }),
    ("registration.step_tolerance", |c| c.registration.step_tolerance.to_string(), |c, v| { c.registration.step_tolerance = finite(v)?; Ok(()) }),
    ("registration.max_iterations", |c| c.registration.max_iterations.to_string(), |c, v| { c.registration.max_iterations = num(v)?; Ok(()) }),
    ("registration.downsample_leaf", |c| c.registration.downsample_leaf.to_string(), |c, v| { c.registration.downsample_leaf = finite(v)?; Ok(()) }),
    ("registration.initial_step", |c| c.registration.initial_step.to_string(), |c, v| { c.registration.initial_step = finite(v)?; Ok(()) }),
    ("registration.timing", |c| c.timing.name().into(), |c, v| {
        c.timing = Timing::parse(v).ok_or_else(|| format!("expected wall or deterministic, got {v:?}"))?;
        Ok(())
    }),
    ("registration.seconds_per_evaluation", |c| c.seconds_per_evaluation.to_string(), |c, v| { c.seconds_per_evaluation = finite(v)?; Ok(()) }),
    ("uncertainty.c_t", |c| c.uncertainty.c_t.to_string(), |c, v| { c.uncertainty.c_t = finite(v)?; Ok(()) }),
    ("uncertainty.c_n", |c| c.uncertainty.c_n.to_string(), |c, v| { c.uncertainty.c_n = finite(v)?; Ok(()) }),
    ("uncertainty.c_p", |c| c.uncertainty.c_p.to_string(), |c, v| { c.uncertainty.c_p = finite(v)?; Ok(()) }),
    ("uncertainty.c_r", |c| c.uncertainty.c_r.to_string(), |c, v| { c.uncertainty.c_r = finite(v)?; Ok(()) }),
    ("optimizer.initial_damping", |c| c.optimizer.initial_damping.to_string(), |c, v| { c.optimizer.initial_damping = finite(v)?; Ok(()) }),
    ("optimizer.damping_factor", |c| c.optimizer.damping_factor.to_string(), |c, v| { c.optimizer.damping_factor = finite(v)?; Ok(()) }),
    ("optimizer.max_iterations", |c| c.optimizer.max_iterations.to_string(), |c, v| { c.optimizer.max_iterations = num(v)?; Ok(()) }),
    ("optimizer.relative_tolerance", |c| c.optimizer.relative_tolerance.to_string(), |c, v| { c.optimizer.relative_tolerance = finite(v)?; Ok(()) }),
    ("optimizer.jacobian_step", |c| c.optimizer.jacobian_step.to_string(), |c, v| { c.optimizer.jacobian_step = finite(v)?; Ok(()) }),
    ("loops.policy", |c| c.loops.mode.name().into(), |c, v| {
        c.loops.mode = LoopMode::parse(v).ok_or_else(|| format!("expected none or truth, got {v:?}"))?;
        Ok(())
    }),
    ("loops.stride", |c| c.loops.stride.to_string(), |c, v| { c.loops.stride = num(v)?; Ok(()) }),
    ("loops.weight_translation", |c| c.loops.weight_translation.to_string(), |c, v| { c.loops.weight_translation = finite(v)?; Ok(()) }),
    ("loops.weight_rotation", |c| c.loops.weight_rotation.to_string(), |c, v| { c.loops.weight_rotation = finite(v)?; Ok(()) }),
    ("slam.max_failure_fraction", |c| c.max_failure_fraction.to_string(), |c, v| { c.max_failure_fraction = finite(v)?; Ok(()) }),
    ("eval.std", |c| c.std_mode.name().into(), |c, v| {
        c.std_mode = StdMode::parse(v).ok_or_else(|| format!("expected population or sample, got {v:?}"))?;
        Ok(())
    }),
    ("eval.align_tolerance", |c| c.align_tolerance.to_string(), |c, v| { c.align_tolerance = finite(v)?; Ok(()) }),
];

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses config text; `origin` only labels diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, key: &str, message: String| PipelineError::Config {
            path: origin.to_path_buf(),
            line,
            key: key.to_string(),
            message,
        };
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut order = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(line_no, line, "expected `key = value`".into()));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _, _)| *k == key) {
                return Err(err(line_no, key, "unknown key".into()));
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(err(line_no, key, format!("repeated; first set on line {first}")));
            }
            entries.insert(key.to_string(), (line_no, value.to_string()));
            order.push(key.to_string());
        }

        let mut cfg = PipelineConfig::default();
        let setter = |key: &str| KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, _, s)| *s);
        for key in PRESET_KEYS {
            if let (Some((line, value)), Some(set)) = (entries.get(key), setter(key)) {
                set(&mut cfg, value).map_err(|m| err(*line, key, m))?;
            }
        }
        let preset = &cfg.scenario;
        let lidar = preset.lidar;
        cfg.scenario = ScenarioConfig {
            lidar,
            ..ScenarioConfig::preset(preset.urbanization, preset.traffic, preset.seed)
        };
        for key in &order {
            if PRESET_KEYS.contains(&key.as_str()) {
                continue;
            }
            let (line, value) = &entries[key];
            if let Some(set) = setter(key) {
                set(&mut cfg, value).map_err(|m| err(*line, key, m))?;
            }
        }
        cfg.validate().map_err(|(key, message)| {
            let line = entries.get(key).map(|(l, _)| *l).unwrap_or(0);
            err(line, key, message)
        })?;
        Ok(cfg)
    }

    /// Checks numeric bounds; on failure names the offending key.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        use ndtslam_core::Error;
        let map_core = |e: Error, fallback: &'static str| -> (&'static str, String) {
            let key = match e {
                Error::InvalidParameter { name, .. } => KEYS
                    .iter()
                    .map(|(k, _, _)| *k)
                    .find(|k| *k == name || k.strip_prefix("registration.") == Some(name))
                    .unwrap_or(fallback),
                _ => fallback,
            };
            (key, e.to_string())
        };
        self.scenario.validate().map_err(|e| map_core(e, "scenario.urbanization"))?;
        self.registration.validate().map_err(|e| map_core(e, "registration.cell_size"))?;
        let u = &self.uncertainty;
        for (key, c) in [("uncertainty.c_t", u.c_t), ("uncertainty.c_n", u.c_n), ("uncertainty.c_p", u.c_p), ("uncertainty.c_r", u.c_r)] {
            if !(c > 0.0) {
                return Err((key, "coefficients must be positive".into()));
            }
        }
        let o = &self.optimizer;
        if !(o.initial_damping > 0.0) {
            return Err(("optimizer.initial_damping", "must be positive".into()));
        }
        if !(o.damping_factor > 1.0) {
            return Err(("optimizer.damping_factor", "must exceed 1".into()));
        }
        if o.max_iterations == 0 {
            return Err(("optimizer.max_iterations", "must be at least 1".into()));
        }
        if !(o.relative_tolerance >= 0.0) {
            return Err(("optimizer.relative_tolerance", "must be non-negative".into()));
        }
        if !(o.jacobian_step > 0.0 && o.jacobian_step < 1.0) {
            return Err(("optimizer.jacobian_step", "must be in (0, 1)".into()));
        }
        if !(self.seconds_per_evaluation > 0.0) {
            return Err(("registration.seconds_per_evaluation", "must be positive".into()));
        }
        if self.loops.stride == 0 {
            return Err(("loops.stride", "must be at least 1".into()));
        }
        if !(self.loops.weight_translation > 0.0) {
            return Err(("loops.weight_translation", "must be positive".into()));
        }
        if !(self.loops.weight_rotation > 0.0) {
            return Err(("loops.weight_rotation", "must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(("slam.max_failure_fraction", "must be in [0, 1]".into()));
        }
        if !(self.align_tolerance >= 0.0) {
            return Err(("eval.align_tolerance", "must be non-negative".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, get, _) in KEYS {
            let this = key.split('.').next().unwrap_or("");
            if this != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = this;
            }
            let _ = writeln!(out, "{key} = {}", get(self));
        }
        out
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _, _)| *k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig> {
        PipelineConfig::parse(text, Path::new("test.cfg"))
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse(
            "scenario.urbanization = dense-urban\nscenario.seed = 9\nuncertainty.c_t = 0.25\n\
             registration.timing = deterministic\nloops.policy = truth\neval.std = sample\n",
        )
        .unwrap();
        assert_eq!(parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn preset_applies_before_overrides_in_any_order() {
        let cfg = parse("scenario.street_width = 19\nscenario.urbanization = dense-urban\n").unwrap();
        assert_eq!(cfg.scenario.street_width, 19.0);
        assert_eq!(cfg.scenario.building_height_min, 50.0);
    }

    #[test]
    fn unknown_key_is_reported_with_line() {
        let e = parse("# header\nuncertainty.c_x = 1\n").unwrap_err();
        match e {
            PipelineError::Config { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "uncertainty.c_x");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_preset_names_the_key() {
        let e = parse("scenario.urbanization = downtown\n").unwrap_err();
        assert!(e.to_string().contains("scenario.urbanization"));
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn repeated_key_rejected() {
        assert!(parse("eval.std = sample\neval.std = population\n").is_err());
    }

    #[test]
    fn out_of_range_value_names_the_key() {
        let e = parse("uncertainty.c_p = -1\n").unwrap_err();
        assert!(matches!(e, PipelineError::Config { line: 1, .. }), "{e}");
        let e = parse("optimizer.damping_factor = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("optimizer.damping_factor"));
    }

    #[test]
    fn missing_equals_rejected() {
        assert!(parse("scenario.seed 4\n").is_err());
    }
}
