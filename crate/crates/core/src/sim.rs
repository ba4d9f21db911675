//! Deterministic street-canyon scenes and a ray-cast multi-beam LiDAR.
//!
//! The street runs north along `e = 0`. Building rows line both sides, their
//! heights drawn uniformly from the preset range. Lamp posts stand along both
//! sidewalks. Traffic is a set of boxes
//! moving parallel to the ego vehicle in the neighbouring lanes. Every random
//! draw comes from ChaCha streams seeded by the scenario seed, so a config
//! reproduces its output bit for bit.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, TAU};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose6D};
use crate::math::{atan, cos, floor, hypot, round, sin, sin_cos, to_radians};
use crate::metrics::{EnuPose, TimedPose};
use crate::urban::{build_skyplot, classify, urbanization_degree, Building, SkyplotParams, UrbanizationClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficPreset {
    Normal,
    Dense,
}

impl TrafficPreset {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(Self::Normal),
            "dense" => Some(Self::Dense),
            _ => None,
        }
    }

    /// Inclusive range of vehicles around the ego vehicle.
    pub fn vehicle_range(&self) -> (usize, usize) {
        match self {
            Self::Normal => (2, 5),
            Self::Dense => (8, 12),
        }
    }

    /// Count used when the config does not override it: the rounded midpoint.
    pub fn default_vehicle_count(&self) -> usize {
        let (lo, hi) = self.vehicle_range();
        (lo + hi).div_ceil(2)
    }
}

/// Sensor geometry. Beam elevations are evenly spaced between the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarModel {
    pub beams: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    pub range_noise: f64,
    pub scan_rate: f64,
    /// Height of the sensor above the road surface.
    pub mount_height: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            beams: 32,
            min_elevation_deg: -30.0,
            max_elevation_deg: 10.0,
            azimuth_step_deg: 0.5,
            max_range: 80.0,
            range_noise: 0.02,
            scan_rate: 10.0,
            mount_height: 2.0,
        }
    }
}

impl LidarModel {
    pub fn elevation_deg(&self, beam: usize) -> f64 {
        if self.beams <= 1 {
            self.min_elevation_deg
        } else {
            self.min_elevation_deg
                + beam as f64 * (self.max_elevation_deg - self.min_elevation_deg) / (self.beams - 1) as f64
        }
    }

    pub fn azimuth_count(&self) -> usize {
        round(360.0 / self.azimuth_step_deg) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
        if self.beams == 0 {
            return bad("lidar.beams", "must be at least 1");
        }
        if !(self.min_elevation_deg <= self.max_elevation_deg)
            || self.min_elevation_deg <= -90.0
            || self.max_elevation_deg >= 90.0
        {
            return bad("lidar.min_elevation", "bounds must satisfy -90 < min <= max < 90");
        }
        if !(self.azimuth_step_deg > 0.0 && self.azimuth_step_deg <= 360.0) {
            return bad("lidar.azimuth_step", "must be in (0, 360]");
        }
        if !(self.max_range > 0.0) {
            return bad("lidar.max_range", "must be positive");
        }
        if !(self.range_noise >= 0.0) {
            return bad("lidar.range_noise", "must be non-negative");
        }
        if !(self.scan_rate > 0.0) {
            return bad("lidar.scan_rate", "must be positive");
        }
        if !(self.mount_height > 0.0) {
            return bad("lidar.mount_height", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub urbanization: UrbanizationClass,
    pub traffic: TrafficPreset,
    /// Distance between the lot lines on either side, meters. Buildings stand
    /// back from them by a preset-dependent setback.
    pub street_width: f64,
    pub building_height_min: f64,
    pub building_height_max: f64,
    pub duration: f64,
    /// Cruise speed, m/s.
    pub speed: f64,
    /// Seconds to reach cruise speed from rest; 0 starts at speed.
    pub accel_time: f64,
    pub seed: u64,
    pub vehicle_count: usize,
    /// Peak lateral offset of the lane-change weave, meters.
    pub weave_amplitude: f64,
    /// Distance travelled per weave cycle, meters.
    pub weave_wavelength: f64,
    /// Peak body pitch and roll from suspension motion, degrees.
    pub pitch_amplitude_deg: f64,
    pub roll_amplitude_deg: f64,
    pub lidar: LidarModel,
}

impl ScenarioConfig {
    /// Preset geometry: sparse 5-10 m buildings on a 16 m street, sub-urban
    /// 10-25 m on 18 m, dense urban 50-175 m on 18 m.
    pub fn preset(urbanization: UrbanizationClass, traffic: TrafficPreset, seed: u64) -> Self {
        let (street_width, lo, hi) = match urbanization {
            UrbanizationClass::Sparse => (16.0, 5.0, 10.0),
            UrbanizationClass::SubUrban => (18.0, 10.0, 25.0),
            UrbanizationClass::DenseUrban => (18.0, 50.0, 175.0),
        };
        Self {
            urbanization,
            traffic,
            street_width,
            building_height_min: lo,
            building_height_max: hi,
            duration: 64.0,
            speed: 8.0,
            accel_time: 5.0,
            seed,
            vehicle_count: traffic.default_vehicle_count(),
            weave_amplitude: 1.0,
            weave_wavelength: 240.0,
            pitch_amplitude_deg: 0.5,
            roll_amplitude_deg: 0.3,
            lidar: LidarModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
        self.lidar.validate()?;
        if !(self.street_width >= 8.0) {
            return bad("scenario.street_width", "must be at least 8 m");
        }
        if !(self.building_height_min > 0.0 && self.building_height_min <= self.building_height_max) {
            return bad("scenario.building_height_min", "need 0 < min <= max");
        }
        if !(self.duration > 0.0) {
            return bad("scenario.duration", "must be positive");
        }
        if !(self.speed >= 0.0) {
            return bad("scenario.speed", "must be non-negative");
        }
        if !(self.accel_time >= 0.0 && self.accel_time.is_finite()) {
            return bad("scenario.accel_time", "must be non-negative");
        }
        if !(self.weave_amplitude >= 0.0) || !(self.weave_wavelength > 0.0) {
            return bad("scenario.weave_wavelength", "amplitude >= 0 and wavelength > 0 required");
        }
        if !(self.pitch_amplitude_deg >= 0.0 && self.pitch_amplitude_deg < 10.0)
            || !(self.roll_amplitude_deg >= 0.0 && self.roll_amplitude_deg < 10.0)
        {
            return bad("scenario.pitch_amplitude", "pitch and roll amplitudes must be in [0, 10) degrees");
        }
        if self.weave_amplitude + 2.0 > self.street_width / 2.0 {
            return bad("scenario.weave_amplitude", "ego would leave the road");
        }
        Ok(())
    }

    pub fn scan_count(&self) -> usize {
        round(self.duration * self.lidar.scan_rate) as usize
    }
}

/// Building-row geometry for one preset, meters. Lengths, gaps and setbacks
/// are drawn uniformly from their ranges.
struct BlockLayout {
    length: (f64, f64),
    gap: (f64, f64),
    depth: f64,
    /// Distance of the front wall behind the facade line.
    setback: (f64, f64),
}

fn block_layout(class: UrbanizationClass) -> BlockLayout {
    match class {
        // Detached houses behind front yards, with open lots between them.
        UrbanizationClass::Sparse => BlockLayout {
            length: (8.0, 12.0),
            gap: (8.0, 14.0),
            depth: 10.0,
            setback: (4.0, 6.0),
        },
        UrbanizationClass::SubUrban => BlockLayout {
            length: (15.0, 35.0),
            gap: (3.0, 8.0),
            depth: 15.0,
            setback: (1.0, 3.0),
        },
        // Towers in near-continuous frontage, broken by narrow alleys.
        UrbanizationClass::DenseUrban => BlockLayout {
            length: (30.0, 60.0),
            gap: (2.0, 5.0),
            depth: 25.0,
            setback: (0.0, 2.0),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicVehicle {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Lane centre, east coordinate.
    pub lane_e: f64,
    /// Longitudinal offset from the ego vehicle at t = 0.
    pub offset: f64,
    /// Speed relative to the ego vehicle along the street.
    pub relative_speed: f64,
}

/// Half-length of the window around the ego vehicle that traffic cycles in.
const TRAFFIC_WINDOW: f64 = 50.0;

pub const BUS: (f64, f64, f64) = (12.0, 2.5, 4.4);
pub const CAR: (f64, f64, f64) = (4.5, 1.8, 1.5);

impl DynamicVehicle {
    /// Axis-aligned box at time `t` given the ego's north coordinate then.
    pub fn bounds(&self, t: f64, ego_n: f64) -> Aabb {
        let span = 2.0 * TRAFFIC_WINDOW;
        let mut rel = (self.offset + self.relative_speed * t + TRAFFIC_WINDOW) % span;
        if rel < 0.0 {
            rel += span;
        }
        let centre_n = ego_n + rel - TRAFFIC_WINDOW;
        Aabb {
            min: [self.lane_e - self.width / 2.0, centre_n - self.length / 2.0, 0.0],
            max: [self.lane_e + self.width / 2.0, centre_n + self.length / 2.0, self.height],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Entry distance of the ray `o + t d`, if it hits with t > 0.
    fn ray_entry(&self, o: &[f64; 3], d: &[f64; 3]) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if d[k] == 0.0 {
                if o[k] < self.min[k] || o[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[k];
            let (mut a, mut b) = ((self.min[k] - o[k]) * inv, (self.max[k] - o[k]) * inv);
            if a > b {
                core::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        if t0 > 0.0 {
            Some(t0)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub buildings: Vec<Building>,
    /// Static street furniture; not part of the urbanization skyline.
    pub poles: Vec<Aabb>,
    pub vehicles: Vec<DynamicVehicle>,
    /// Ego cruise speed and ramp time, used to place traffic relative to it.
    pub ego_speed: f64,
    pub ego_accel_time: f64,
}

impl Scene {
    pub fn static_only(buildings: Vec<Building>) -> Self {
        Self {
            buildings,
            poles: Vec::new(),
            vehicles: Vec::new(),
            ego_speed: 0.0,
            ego_accel_time: 0.0,
        }
    }

    pub fn vehicle_boxes(&self, t: f64) -> Vec<Aabb> {
        let ego_n = ego_distance(self.ego_speed, self.ego_accel_time, t);
        self.vehicles.iter().map(|v| v.bounds(t, ego_n)).collect()
    }
}

struct Sampler(ChaCha8Rng);

impl Sampler {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

const STREAM_BUILDINGS: u64 = 1;
const STREAM_TRAFFIC: u64 = 2;
const STREAM_ATTITUDE: u64 = 3;
const STREAM_POLES: u64 = 4;

/// Lamp post cross-section and height, meters, and spacing range along a
/// sidewalk.
const POLE_WIDTH: f64 = 0.3;
const POLE_HEIGHT: f64 = 6.0;
const POLE_SPACING: (f64, f64) = (20.0, 35.0);

/// Facade pilasters: width, protrusion into the street, spacing range.
const PILASTER_WIDTH: f64 = 0.6;
const PILASTER_DEPTH: f64 = 0.4;
const PILASTER_SPACING: (f64, f64) = (4.0, 8.0);

/// Northward extent of the building rows beyond the driven distance.
const STREET_MARGIN: f64 = 150.0;

/// Builds the street canyon and traffic for `cfg` and checks that mid-street
/// poses fall in the preset's urbanization band.
pub fn generate_scene(cfg: &ScenarioConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = Sampler::new(cfg.seed, STREAM_BUILDINGS);
    let layout = block_layout(cfg.urbanization);
    let facade = cfg.street_width / 2.0;
    let start = -STREET_MARGIN;
    let end = cfg.speed * cfg.duration + STREET_MARGIN;
    let mut buildings = Vec::new();
    let mut fixtures = Vec::new();
    for side in [-1.0f64, 1.0] {
        let mut n = start - rng.uniform(0.0, layout.length.1);
        while n < end {
            let length = rng.uniform(layout.length.0, layout.length.1);
            let height = rng.uniform(cfg.building_height_min, cfg.building_height_max);
            let front = facade + rng.uniform(layout.setback.0, layout.setback.1);
            let (e0, e1) = if side < 0.0 { (-front - layout.depth, -front) } else { (front, front + layout.depth) };
            buildings.push(Building::rectangle(e0, n, e1, n + length, height)?);
            let spacing = rng.uniform(PILASTER_SPACING.0, PILASTER_SPACING.1);
            let mut m = n + 0.5 * spacing;
            while m + 0.5 * PILASTER_WIDTH < n + length {
                let (f0, f1) = if side < 0.0 { (-front, -front + PILASTER_DEPTH) } else { (front - PILASTER_DEPTH, front) };
                fixtures.push(Aabb {
                    min: [f0, m - 0.5 * PILASTER_WIDTH, 0.0],
                    max: [f1, m + 0.5 * PILASTER_WIDTH, height],
                });
                m += spacing;
            }
            n += length + rng.uniform(layout.gap.0, layout.gap.1);
        }
    }

    let mut rng = Sampler::new(cfg.seed, STREAM_POLES);
    let mut poles = fixtures;
    for side in [-1.0f64, 1.0] {
        let e = side * (facade - 0.5);
        let mut n = start + rng.uniform(0.0, POLE_SPACING.1);
        while n < end {
            let h = POLE_WIDTH / 2.0;
            poles.push(Aabb {
                min: [e - h, n - h, 0.0],
                max: [e + h, n + h, POLE_HEIGHT],
            });
            n += rng.uniform(POLE_SPACING.0, POLE_SPACING.1);
        }
    }

    let vehicles = generate_traffic(cfg);
    let scene = Scene {
        buildings,
        poles,
        vehicles,
        ego_speed: cfg.speed,
        ego_accel_time: cfg.accel_time,
    };

    let achieved = mid_street_degree(cfg, &scene)?;
    if classify(achieved).class != cfg.urbanization {
        return Err(Error::InfeasibleScenario { achieved });
    }
    Ok(scene)
}

/// Mean urbanization degree over poses sampled along the driven segment.
pub fn mid_street_degree(cfg: &ScenarioConfig, scene: &Scene) -> Result<f64> {
    let params = SkyplotParams::default();
    let samples = 5;
    let mut sum = 0.0;
    for k in 0..samples {
        let t = cfg.duration * (k as f64 + 0.5) / samples as f64;
        let p = ego_enu(cfg, t);
        let plot = build_skyplot(&scene.buildings, &[p.e, p.n, p.u], &params)?;
        sum += urbanization_degree(&plot);
    }
    Ok(sum / samples as f64)
}

/// Vehicle `i` depends only on the seed and `i`, so a larger count adds
/// vehicles to a smaller one without moving any. Lanes are filled in turn and
/// positions along each lane follow a golden-ratio sequence.
fn generate_traffic(cfg: &ScenarioConfig) -> Vec<DynamicVehicle> {
    let mut rng = Sampler::new(cfg.seed, STREAM_TRAFFIC);
    let mut lanes = alloc::vec![-4.0, 4.0];
    if cfg.street_width >= 18.0 {
        lanes.extend([-7.0, 7.0]);
    }
    (0..cfg.vehicle_count)
        .map(|i| {
            let lane = lanes[i % lanes.len()];
            let slot = (i / lanes.len()) as f64;
            // One bus for every two cars.
            let (length, width, height) = if i % 3 == 0 { BUS } else { CAR };
            let x = (slot + 0.5) * GOLDEN;
            let phase = x - floor(x);
            let offset = -TRAFFIC_WINDOW + 2.0 * TRAFFIC_WINDOW * phase + rng.uniform(-2.0, 2.0);
            DynamicVehicle {
                length,
                width,
                height,
                lane_e: lane,
                offset,
                relative_speed: rng.uniform(-5.0, 5.0),
            }
        })
        .collect()
}

const GOLDEN: f64 = 0.618_033_988_749_895;

/// Distance driven by time `t`. Speed follows a smoothstep from rest to
/// `speed` over `accel_time`, then stays constant.
pub fn ego_distance(speed: f64, accel_time: f64, t: f64) -> f64 {
    if t >= accel_time {
        return speed * (t - 0.5 * accel_time);
    }
    let x = t / accel_time;
    speed * accel_time * (x * x * x - 0.5 * x * x * x * x)
}

/// Ground-truth sensor pose at time `t` in ENU. The ego weaves sinusoidally
/// about the street centre line while advancing north.
pub fn ego_enu(cfg: &ScenarioConfig, t: f64) -> EnuPose {
    let s = ego_distance(cfg.speed, cfg.accel_time, t);
    let k = TAU / cfg.weave_wavelength;
    let e = cfg.weave_amplitude * sin(k * s);
    let slope = cfg.weave_amplitude * k * cos(k * s);
    let heading = atan(slope);
    EnuPose::new(e, s, cfg.lidar.mount_height, heading)
}

/// Body (roll, pitch) in radians at time `t`: two incommensurate sinusoids
/// per axis with seed-dependent phases. Without it every scan would sample
/// the flat road along identical rings, and a zero-motion alignment of
/// consecutive scans would outscore the true one.
pub fn ego_attitude(cfg: &ScenarioConfig, t: f64) -> (f64, f64) {
    let mut rng = Sampler::new(cfg.seed, STREAM_ATTITUDE);
    let mut phase = || rng.uniform(0.0, TAU);
    let (p1, p2, p3, p4) = (phase(), phase(), phase(), phase());
    let roll = to_radians(cfg.roll_amplitude_deg) * (0.7 * sin(TAU * 1.7 * t + p1) + 0.3 * sin(TAU * 3.1 * t + p2));
    let pitch = to_radians(cfg.pitch_amplitude_deg) * (0.7 * sin(TAU * 1.1 * t + p3) + 0.3 * sin(TAU * 2.3 * t + p4));
    (roll, pitch)
}

/// Full 6-DoF sensor pose at time `t`.
pub fn ego_pose(cfg: &ScenarioConfig, t: f64) -> Pose6D {
    let p = ego_enu(cfg, t);
    let (roll, pitch) = ego_attitude(cfg, t);
    Pose6D::new(p.e, p.n, p.u, roll, pitch, FRAC_PI_2 - p.heading)
}

/// Converts an ENU pose (heading clockwise from north) into a world pose
/// whose x axis points along the heading, with z up.
pub fn enu_to_pose(p: &EnuPose) -> Pose6D {
    Pose6D::new(p.e, p.n, p.u, 0.0, 0.0, FRAC_PI_2 - p.heading)
}

/// Inverse of [`enu_to_pose`]; roll and pitch are dropped.
pub fn pose_to_enu(p: &Pose6D) -> EnuPose {
    EnuPose::new(p.tx, p.ty, p.tz, FRAC_PI_2 - p.rz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitKind {
    Ground,
    Building,
    Pole,
    Vehicle,
}

fn ray_seed(seed: u64, scan: u64, beam: usize, azimuth: usize) -> u64 {
    let mut z = seed
        ^ scan.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((beam as u64) << 20 | azimuth as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Casts every (beam, azimuth) ray from the sensor at `sensor` (world pose,
/// z up, ground at z = 0) against the scene at time `t`. Returned points are
/// in the sensor frame.
pub fn simulate_scan(
    scene: &Scene,
    t: f64,
    sensor: &Pose6D,
    lidar: &LidarModel,
    seed: u64,
    scan_index: u64,
) -> Result<PointCloud> {
    let (points, _) = simulate_scan_labeled(scene, t, sensor, lidar, seed, scan_index);
    PointCloud::new(points, t, scan_index)
}

/// [`simulate_scan`] without the non-empty check, with a label per point.
pub fn simulate_scan_labeled(
    scene: &Scene,
    t: f64,
    sensor: &Pose6D,
    lidar: &LidarModel,
    seed: u64,
    scan_index: u64,
) -> (Vec<Point3>, Vec<HitKind>) {
    let origin = [sensor.tx, sensor.ty, sensor.tz];
    let rot = sensor.rotation();
    let range = lidar.max_range;
    let near: Vec<&Building> = scene
        .buildings
        .iter()
        .filter(|b| b.bbox_distance_squared(origin[0], origin[1]) <= range * range)
        .collect();
    let poles: Vec<Aabb> = scene
        .poles
        .iter()
        .filter(|p| {
            let (de, dn) = (p.min[0] - origin[0], p.min[1] - origin[1]);
            de * de + dn * dn <= (range + 1.0) * (range + 1.0)
        })
        .copied()
        .collect();
    let boxes = scene.vehicle_boxes(t);
    let noise = if lidar.range_noise > 0.0 {
        Normal::new(0.0, lidar.range_noise).ok()
    } else {
        None
    };

    let azimuths = lidar.azimuth_count();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for beam in 0..lidar.beams {
        let (se, ce) = sin_cos(to_radians(lidar.elevation_deg(beam)));
        for k in 0..azimuths {
            let (sa, ca) = sin_cos(to_radians(k as f64 * lidar.azimuth_step_deg));
            let local = nalgebra::Vector3::new(ce * ca, ce * sa, se);
            let w = rot * local;
            let dir = [w.x, w.y, w.z];
            let Some((dist, kind)) = cast(&origin, &dir, range, &near, &poles, &boxes) else {
                continue;
            };
            let measured = match &noise {
                Some(n) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(ray_seed(seed, scan_index, beam, k));
                    dist + n.sample(&mut rng)
                }
                None => dist,
            };
            if measured <= 0.0 || measured > range {
                continue;
            }
            points.push(Point3::from(local * measured));
            labels.push(kind);
        }
    }
    (points, labels)
}

fn cast(
    o: &[f64; 3],
    d: &[f64; 3],
    max_range: f64,
    buildings: &[&Building],
    poles: &[Aabb],
    boxes: &[Aabb],
) -> Option<(f64, HitKind)> {
    let mut best: Option<(f64, HitKind)> = None;
    let mut consider = |t: f64, kind: HitKind| {
        if t > 0.0 && t <= max_range && best.is_none_or(|(b, _)| t < b) {
            best = Some((t, kind));
        }
    };
    if d[2] < 0.0 {
        consider(-o[2] / d[2], HitKind::Ground);
    }
    for b in buildings {
        for (p, q) in b.edges() {
            let (se, sn) = (q[0] - p[0], q[1] - p[1]);
            let denom = d[0] * sn - d[1] * se;
            if denom.abs() <= 1e-9 * hypot(se, sn) {
                continue;
            }
            let (we, wn) = (p[0] - o[0], p[1] - o[1]);
            let t = (we * sn - wn * se) / denom;
            let s = (we * d[1] - wn * d[0]) / denom;
            if t <= 0.0 || !(-1e-9..=1.0 + 1e-9).contains(&s) {
                continue;
            }
            let z = o[2] + t * d[2];
            if z >= 0.0 && z <= b.height() {
                consider(t, HitKind::Building);
            }
        }
    }
    for p in poles {
        if let Some(t) = p.ray_entry(o, d) {
            consider(t, HitKind::Pole);
        }
    }
    for bx in boxes {
        if let Some(t) = bx.ray_entry(o, d) {
            consider(t, HitKind::Vehicle);
        }
    }
    best
}

/// A complete simulated drive: scene, truth trajectory and scans on demand.
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub config: ScenarioConfig,
    pub scene: Scene,
}

impl SimulatedRun {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let scene = generate_scene(&config)?;
        Ok(Self { config, scene })
    }

    pub fn len(&self) -> usize {
        self.config.scan_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.config.lidar.scan_rate
    }

    pub fn truth(&self, k: usize) -> TimedPose {
        let t = self.time(k);
        TimedPose {
            t,
            pose: ego_enu(&self.config, t),
        }
    }

    pub fn sensor_pose(&self, k: usize) -> Pose6D {
        ego_pose(&self.config, self.time(k))
    }

    pub fn scan(&self, k: usize) -> Result<PointCloud> {
        simulate_scan(
            &self.scene,
            self.time(k),
            &self.sensor_pose(k),
            &self.config.lidar,
            self.config.seed,
            k as u64,
        )
    }
}
