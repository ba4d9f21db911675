//! Building-mask skyplots and the urbanization degree derived from them.
//!
//! Azimuths are degrees clockwise from north; the ground frame is
//! (east, north, up) in meters.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{atan2, cos, hypot, sin, to_degrees, to_radians};

pub const AZIMUTH_BINS: usize = 360;
pub const DEFAULT_MAX_RANGE: f64 = 500.0;
pub const DEFAULT_SENSOR_HEIGHT: f64 = 2.0;

/// Lower bound of sub-urban, inclusive.
pub const SUB_URBAN_MIN_DEG: f64 = 15.0;
/// Upper bound of sub-urban, inclusive; anything above is dense urban.
pub const SUB_URBAN_MAX_DEG: f64 = 46.0;

/// Extruded footprint. Vertices are (east, north), stored counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    footprint: Vec<[f64; 2]>,
    height: f64,
}

impl Building {
    /// Validates the footprint (at least 3 vertices, simple) and height, and
    /// reorders clockwise input to counterclockwise.
    pub fn new(mut footprint: Vec<[f64; 2]>, height: f64) -> Result<Self> {
        if footprint.len() > 3 && footprint.first() == footprint.last() {
            footprint.pop();
        }
        if footprint.len() < 3 {
            return Err(Error::InvalidBuilding("footprint needs at least 3 vertices"));
        }
        if !(height > 0.0) || !height.is_finite() {
            return Err(Error::InvalidBuilding("height must be positive"));
        }
        if footprint.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBuilding("non-finite vertex"));
        }
        let area = signed_area(&footprint);
        if area == 0.0 {
            return Err(Error::InvalidBuilding("degenerate footprint"));
        }
        if !is_simple(&footprint) {
            return Err(Error::InvalidBuilding("footprint self-intersects"));
        }
        if area < 0.0 {
            footprint.reverse();
        }
        Ok(Self { footprint, height })
    }

    /// Axis-aligned rectangular footprint.
    pub fn rectangle(min_e: f64, min_n: f64, max_e: f64, max_n: f64, height: f64) -> Result<Self> {
        Self::new(
            alloc::vec![[min_e, min_n], [max_e, min_n], [max_e, max_n], [min_e, max_n]],
            height,
        )
    }

    pub fn footprint(&self) -> &[[f64; 2]] {
        &self.footprint
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.footprint.len();
        (0..n).map(move |i| (self.footprint[i], self.footprint[(i + 1) % n]))
    }

    /// Even-odd test; points on the boundary count as outside.
    pub fn contains(&self, e: f64, n: f64) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > n) != (b[1] > n) {
                let x = a[0] + (n - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if e < x {
                    inside = !inside;
                }
            }
        }
        inside && !self.on_boundary(e, n)
    }

    fn on_boundary(&self, e: f64, n: f64) -> bool {
        self.edges().any(|(a, b)| {
            let cross = (b[0] - a[0]) * (n - a[1]) - (b[1] - a[1]) * (e - a[0]);
            let within = e >= a[0].min(b[0]) && e <= a[0].max(b[0]) && n >= a[1].min(b[1]) && n <= a[1].max(b[1]);
            cross.abs() <= 1e-12 * (1.0 + (b[0] - a[0]).abs() + (b[1] - a[1]).abs()) && within
        })
    }

    /// Squared horizontal distance from (e, n) to the footprint's bounding box.
    pub fn bbox_distance_squared(&self, e: f64, n: f64) -> f64 {
        let (mut lo_e, mut lo_n, mut hi_e, mut hi_n) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.footprint {
            lo_e = lo_e.min(v[0]);
            hi_e = hi_e.max(v[0]);
            lo_n = lo_n.min(v[1]);
            hi_n = hi_n.max(v[1]);
        }
        let de = (lo_e - e).max(0.0).max(e - hi_e);
        let dn = (lo_n - n).max(0.0).max(n - hi_n);
        de * de + dn * dn
    }

    pub fn with_height(&self, height: f64) -> Result<Self> {
        Self::new(self.footprint.clone(), height)
    }
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        let v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    let on_seg = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        c[0] >= a[0].min(b[0]) && c[0] <= a[0].max(b[0]) && c[1] >= a[1].min(b[1]) && c[1] <= a[1].max(b[1])
    };
    let (o1, o2, o3, o4) = (orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2));
    if o1 != o2 && o3 != o4 {
        return true;
    }
    (o1 == 0 && on_seg(p1, p2, q1))
        || (o2 == 0 && on_seg(p1, p2, q2))
        || (o3 == 0 && on_seg(q1, q2, p1))
        || (o4 == 0 && on_seg(q1, q2, p2))
}

fn is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyplotParams {
    /// Buildings beyond this horizontal range are ignored, in meters.
    pub max_range: f64,
}

impl Default for SkyplotParams {
    fn default() -> Self {
        Self {
            max_range: DEFAULT_MAX_RANGE,
        }
    }
}

/// Observation point (east, north, up). `up` is the eye height above the
/// ground plane the building heights refer to.
pub type Origin = [f64; 3];

fn check_origin(buildings: &[Building], origin: &Origin) -> Result<()> {
    match buildings.iter().position(|b| b.contains(origin[0], origin[1])) {
        Some(i) => Err(Error::OriginInsideBuilding(i)),
        None => Ok(()),
    }
}

/// Highest building-top elevation angle (degrees) seen along one azimuth.
pub fn mask_elevation(
    buildings: &[Building],
    origin: &Origin,
    azimuth_deg: f64,
    params: &SkyplotParams,
) -> Result<f64> {
    check_origin(buildings, origin)?;
    Ok(mask_elevation_unchecked(buildings, origin, azimuth_deg, params))
}

fn mask_elevation_unchecked(
    buildings: &[Building],
    origin: &Origin,
    azimuth_deg: f64,
    params: &SkyplotParams,
) -> f64 {
    let az = to_radians(azimuth_deg);
    let (de, dn) = (sin(az), cos(az));
    let range2 = params.max_range * params.max_range;
    let mut best = 0.0f64;
    for b in buildings {
        let h = b.height - origin[2];
        if h <= 0.0 || b.bbox_distance_squared(origin[0], origin[1]) > range2 {
            continue;
        }
        for (p, q) in b.edges() {
            if let Some(w) = ray_segment(origin[0], origin[1], de, dn, p, q) {
                if w > 0.0 && w <= params.max_range {
                    let elev = to_degrees(atan2(h, w));
                    if elev > best {
                        best = elev;
                    }
                }
            }
        }
    }
    best
}

/// Distance along the unit ray (o + t d) to segment pq, if it is hit.
fn ray_segment(oe: f64, on: f64, de: f64, dn: f64, p: [f64; 2], q: [f64; 2]) -> Option<f64> {
    let (se, sn) = (q[0] - p[0], q[1] - p[1]);
    let denom = de * sn - dn * se;
    // A ray running along the edge meets the neighbouring edges at the same
    // endpoints, and solving the near-singular system here gives noise.
    if denom.abs() <= 1e-9 * hypot(se, sn) {
        return None;
    }
    let (we, wn) = (p[0] - oe, p[1] - on);
    let t = (we * sn - wn * se) / denom;
    let s = (we * dn - wn * de) / denom;
    // Rays through a shared vertex must not slip between the two edges.
    if t > 0.0 && (-1e-9..=1.0 + 1e-9).contains(&s) {
        Some(t)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skyplot {
    pub origin: Origin,
    /// Mask elevation in degrees per integer azimuth, clockwise from north.
    pub mask: [f64; AZIMUTH_BINS],
}

pub fn build_skyplot(buildings: &[Building], origin: &Origin, params: &SkyplotParams) -> Result<Skyplot> {
    check_origin(buildings, origin)?;
    let nearby: Vec<Building> = buildings
        .iter()
        .filter(|b| b.bbox_distance_squared(origin[0], origin[1]) <= params.max_range * params.max_range)
        .cloned()
        .collect();
    let mut mask = [0.0; AZIMUTH_BINS];
    for (i, m) in mask.iter_mut().enumerate() {
        *m = mask_elevation_unchecked(&nearby, origin, i as f64, params);
    }
    Ok(Skyplot { origin: *origin, mask })
}

/// Mean of the 360 mask angles, in degrees.
pub fn urbanization_degree(plot: &Skyplot) -> f64 {
    plot.mask.iter().sum::<f64>() / AZIMUTH_BINS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UrbanizationClass {
    Sparse,
    SubUrban,
    DenseUrban,
}

impl UrbanizationClass {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sparse => "sparse",
            Self::SubUrban => "sub-urban",
            Self::DenseUrban => "dense-urban",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sparse" => Some(Self::Sparse),
            "sub-urban" => Some(Self::SubUrban),
            "dense-urban" => Some(Self::DenseUrban),
            _ => None,
        }
    }
}

impl core::fmt::Display for UrbanizationClass {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Urbanization {
    pub degree: f64,
    pub class: UrbanizationClass,
}

/// `[0, 15)` sparse, `[15, 46]` sub-urban, above 46 dense urban.
pub fn classify(degree: f64) -> Urbanization {
    let class = if degree < SUB_URBAN_MIN_DEG {
        UrbanizationClass::Sparse
    } else if degree <= SUB_URBAN_MAX_DEG {
        UrbanizationClass::SubUrban
    } else {
        UrbanizationClass::DenseUrban
    };
    Urbanization { degree, class }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryUrbanization {
    /// One entry per input pose; `None` where the pose was inside a building.
    pub per_pose: Vec<Option<Urbanization>>,
    pub skipped: usize,
    pub mean_degree: f64,
    /// Most frequent class; ties go to the class of the mean degree.
    pub majority: UrbanizationClass,
}

pub fn trajectory_urbanization(
    buildings: &[Building],
    trajectory: &[Origin],
    params: &SkyplotParams,
) -> Result<TrajectoryUrbanization> {
    if trajectory.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut per_pose = Vec::with_capacity(trajectory.len());
    let mut skipped = 0;
    for origin in trajectory {
        match build_skyplot(buildings, origin, params) {
            Ok(plot) => per_pose.push(Some(classify(urbanization_degree(&plot)))),
            Err(Error::OriginInsideBuilding(_)) => {
                skipped += 1;
                per_pose.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let valid: Vec<&Urbanization> = per_pose.iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mean_degree = valid.iter().map(|u| u.degree).sum::<f64>() / valid.len() as f64;
    let mut counts = [0usize; 3];
    for u in &valid {
        counts[u.class as usize] += 1;
    }
    let top = *counts.iter().max().unwrap_or(&0);
    let mean_class = classify(mean_degree).class;
    let majority = if counts[mean_class as usize] == top {
        mean_class
    } else {
        [UrbanizationClass::Sparse, UrbanizationClass::SubUrban, UrbanizationClass::DenseUrban]
            .into_iter()
            .find(|c| counts[*c as usize] == top)
            .unwrap_or(mean_class)
    };
    Ok(TrajectoryUrbanization {
        per_pose,
        skipped,
        mean_degree,
        majority,
    })
}
