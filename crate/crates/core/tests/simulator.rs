use ndtslam_core::sim::{
    ego_enu, generate_scene, simulate_scan_labeled, HitKind, ScenarioConfig, SimulatedRun, TrafficPreset,
};
use ndtslam_core::urban::{trajectory_urbanization, SkyplotParams, SUB_URBAN_MAX_DEG, SUB_URBAN_MIN_DEG};
use ndtslam_core::UrbanizationClass;
use proptest::prelude::*;

const CLASSES: [UrbanizationClass; 3] = [
    UrbanizationClass::Sparse,
    UrbanizationClass::SubUrban,
    UrbanizationClass::DenseUrban,
];

fn route_degrees(cfg: &ScenarioConfig) -> Vec<f64> {
    let scene = generate_scene(cfg).unwrap();
    let origins: Vec<[f64; 3]> = (0..=16)
        .map(|i| {
            let p = ego_enu(cfg, cfg.duration * i as f64 / 64.0);
            [p.e, p.n, p.u]
        })
        .collect();
    let u = trajectory_urbanization(&scene.buildings, &origins, &SkyplotParams::default()).unwrap();
    assert_eq!(u.skipped, 0);
    u.per_pose.iter().map(|p| p.unwrap().degree).collect()
}

#[test]
fn presets_stay_in_their_band_along_the_route() {
    for seed in 1..=8 {
        for class in CLASSES {
            let cfg = ScenarioConfig::preset(class, TrafficPreset::Normal, seed);
            for d in route_degrees(&cfg) {
                let ok = match class {
                    UrbanizationClass::Sparse => (6.0..SUB_URBAN_MIN_DEG).contains(&d),
                    UrbanizationClass::SubUrban => (SUB_URBAN_MIN_DEG..=SUB_URBAN_MAX_DEG).contains(&d),
                    UrbanizationClass::DenseUrban => d > SUB_URBAN_MAX_DEG,
                };
                assert!(ok, "{class} seed {seed}: degree {d}");
            }
        }
    }
}

#[test]
fn default_run_length() {
    let cfg = ScenarioConfig::preset(UrbanizationClass::Sparse, TrafficPreset::Normal, 1);
    let run = SimulatedRun::new(cfg).unwrap();
    assert_eq!(run.len(), 640);
    assert_eq!(run.truth(639).t, 63.9);
}

#[test]
fn points_within_range_and_above_ground() {
    for class in CLASSES {
        let cfg = ScenarioConfig::preset(class, TrafficPreset::Dense, 3);
        let run = SimulatedRun::new(cfg.clone()).unwrap();
        let sigma = cfg.lidar.range_noise;
        for k in [0, 137, 400, 639] {
            let pose = run.sensor_pose(k);
            let (points, _) =
                simulate_scan_labeled(&run.scene, run.time(k), &pose, &cfg.lidar, cfg.seed, k as u64);
            assert!(!points.is_empty());
            for p in &points {
                assert!(p.coords.norm() <= cfg.lidar.max_range);
                assert!(pose.apply(p).z >= -5.0 * sigma, "{class} scan {k}: {p:?}");
            }
        }
    }
}

fn vehicle_hits(cfg: &ScenarioConfig, k: usize) -> usize {
    let run = SimulatedRun::new(cfg.clone()).unwrap();
    let (_, labels) = simulate_scan_labeled(
        &run.scene,
        run.time(k),
        &run.sensor_pose(k),
        &cfg.lidar,
        cfg.seed,
        k as u64,
    );
    labels.iter().filter(|l| **l == HitKind::Vehicle).count()
}

#[test]
fn dense_traffic_fills_more_of_the_view() {
    for class in CLASSES {
        for seed in 1..=3 {
            let normal = ScenarioConfig::preset(class, TrafficPreset::Normal, seed);
            let dense = ScenarioConfig::preset(class, TrafficPreset::Dense, seed);
            for k in [50, 200, 350, 500, 630] {
                let (n, d) = (vehicle_hits(&normal, k), vehicle_hits(&dense, k));
                assert!(d > n, "{class} seed {seed} scan {k}: dense {d} normal {n}");
            }
        }
    }
}

#[test]
fn identical_config_gives_identical_run() {
    let cfg = ScenarioConfig::preset(UrbanizationClass::SubUrban, TrafficPreset::Dense, 9);
    let (a, b) = (SimulatedRun::new(cfg.clone()).unwrap(), SimulatedRun::new(cfg).unwrap());
    assert_eq!(a.scene, b.scene);
    let (pa, pb) = (a.scan(321).unwrap(), b.scan(321).unwrap());
    let bits = |c: &ndtslam_core::PointCloud| -> Vec<u64> {
        c.points().iter().flat_map(|p| p.coords.iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&pa), bits(&pb));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ego_stays_on_the_road(seed in 0u64..1000, t in 0.0f64..64.0, class in 0usize..3) {
        let cfg = ScenarioConfig::preset(CLASSES[class], TrafficPreset::Normal, seed);
        let p = ego_enu(&cfg, t);
        prop_assert!(p.u > 0.0 && p.u <= 4.5);
        prop_assert!(p.e.abs() + 1.0 <= cfg.street_width / 2.0);
        prop_assert!(p.heading > -std::f64::consts::PI && p.heading <= std::f64::consts::PI);
    }

    #[test]
    fn vehicle_count_follows_traffic(seed in 0u64..1000, dense in any::<bool>()) {
        let traffic = if dense { TrafficPreset::Dense } else { TrafficPreset::Normal };
        let cfg = ScenarioConfig::preset(UrbanizationClass::SubUrban, traffic, seed);
        let n = generate_scene(&cfg).unwrap().vehicles.len();
        let (lo, hi) = if dense { (8, 12) } else { (2, 5) };
        prop_assert!((lo..=hi).contains(&n));
    }
}
