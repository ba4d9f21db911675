use ndtslam_core::icp::{icp_register, IcpParams};
use ndtslam_core::ndt::{ndt_register, ndt_score, NdtObjective};
use ndtslam_core::sim::{ScenarioConfig, SimulatedRun, TrafficPreset};
use ndtslam_core::{NdtGrid, NdtParams, Point3, PointCloud, Pose6D, UrbanizationClass};
use proptest::prelude::*;
use std::sync::OnceLock;

fn run() -> &'static SimulatedRun {
    static RUN: OnceLock<SimulatedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = ScenarioConfig::preset(UrbanizationClass::SubUrban, TrafficPreset::Normal, 4);
        SimulatedRun::new(cfg).unwrap()
    })
}

fn scan(k: usize) -> PointCloud {
    run().scan(k).unwrap()
}

/// Truth transform taking scan `b` points into the frame of scan `a`.
fn truth(a: usize, b: usize) -> Pose6D {
    run().sensor_pose(a).inverse().compose(&run().sensor_pose(b))
}

fn gap(a: &Pose6D, b: &Pose6D) -> (f64, f64) {
    let d = a.inverse().compose(b);
    (d.translation_norm(), d.rotation_norm())
}

fn shifted(cloud: &PointCloud, t: [f64; 3]) -> PointCloud {
    cloud.transformed(&Pose6D::from_translation(t[0], t[1], t[2]))
}

#[test]
fn self_registration_is_identity() {
    let a = scan(200);
    let params = NdtParams::default();
    let r = ndt_register(&a, &a, &Pose6D::identity(), &params).unwrap();
    assert!(r.converged);
    assert!(r.transform.translation_norm() < 1e-3 && r.transform.rotation_norm() < 1e-3);
    assert!(r.iterations <= 3 * params.levels, "{} iterations", r.iterations);
}

#[test]
fn recovers_half_meter_shift() {
    let a = scan(300);
    let b = shifted(&a, [0.5, 0.0, 0.0]);
    let r = ndt_register(&a, &b, &Pose6D::identity(), &NdtParams::default()).unwrap();
    let (dt, _) = gap(&Pose6D::from_translation(-0.5, 0.0, 0.0), &r.transform);
    assert!(dt < 0.05, "residual {dt}");
}

#[test]
fn far_initial_guess_on_open_ground_is_flagged_or_wrong() {
    let mut cfg = ScenarioConfig::preset(UrbanizationClass::Sparse, TrafficPreset::Normal, 1);
    cfg.vehicle_count = 0;
    let open = SimulatedRun::new(cfg).unwrap();
    let ground = |k: usize| {
        let pose = open.sensor_pose(k);
        let pts: Vec<Point3> = open.scan(k).unwrap().points().iter().filter(|p| pose.apply(p).z < 0.2).copied().collect();
        PointCloud::from_points(pts).unwrap()
    };
    let (a, b) = (ground(300), ground(301));
    let initial = Pose6D::from_translation(3.0, 2.0, 0.0);
    let r = ndt_register(&a, &b, &initial, &NdtParams::default()).unwrap();
    let (dt, _) = gap(&truth(300, 301), &r.transform);
    // Flat ground alone cannot pin the horizontal position.
    assert!(!r.converged || dt > 0.05, "converged with residual {dt}");
}

#[test]
fn agrees_with_icp_on_simulator_pairs() {
    let icp_params = IcpParams {
        max_correspondence_distance: 0.5,
        step_tolerance: 1e-6,
        ..IcpParams::default()
    };
    for k in [100, 300, 500] {
        let (a, b) = (scan(k), scan(k + 1));
        let initial = truth(k, k + 1).compose(&Pose6D::new(0.1, -0.05, 0.02, 0.002, -0.001, 0.005));
        let ndt = ndt_register(&a, &b, &initial, &NdtParams::default()).unwrap();
        let input = b.voxel_downsample(0.5).unwrap();
        let icp = icp_register(&a, &input, &initial, &icp_params).unwrap();
        let (dt, _) = gap(&ndt.transform, &icp.transform);
        assert!(dt < 0.1, "scan {k}: ndt vs icp {dt}");
    }
}

#[test]
fn forward_and_backward_registrations_cancel() {
    for k in [60, 250, 470] {
        let (a, b) = (scan(k), scan(k + 1));
        let t = truth(k, k + 1);
        let nudge = Pose6D::new(0.15, 0.1, 0.0, 0.0, 0.0, 0.01);
        let ab = ndt_register(&a, &b, &t.compose(&nudge), &NdtParams::default()).unwrap();
        let ba = ndt_register(&b, &a, &t.inverse().compose(&nudge), &NdtParams::default()).unwrap();
        let (dt, dr) = gap(&Pose6D::identity(), &ab.transform.compose(&ba.transform));
        assert!(dt < 0.05 && dr < 0.01, "scan {k}: {dt} m {dr} rad");
    }
}

#[test]
fn score_does_not_decrease_with_more_iterations() {
    let (a, b) = (scan(400), scan(401));
    let initial = truth(400, 401).compose(&Pose6D::new(0.3, -0.2, 0.05, 0.0, 0.01, -0.02));
    let mut last = f64::NEG_INFINITY;
    for n in 1..=12 {
        let params = NdtParams {
            levels: 1,
            max_iterations: n,
            step_tolerance: 1e-12,
            ..NdtParams::default()
        };
        let r = ndt_register(&a, &b, &initial, &params).unwrap();
        assert!(r.final_score >= last - 1e-9, "iteration {n}: {} after {last}", r.final_score);
        last = r.final_score;
    }
}

#[test]
fn cell_eigenvalues_respect_the_floor() {
    let params = NdtParams::default();
    let grid = NdtGrid::build(&scan(10), &params).unwrap();
    assert!(!grid.is_empty());
    for (_, cell) in grid.cells() {
        let eig = cell.covariance.symmetric_eigen().eigenvalues;
        let max = eig.max();
        assert!(eig.min() >= (params.eigen_ratio * max).max(params.covariance_floor) * (1.0 - 1e-9));
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let grid = NdtGrid::build(&scan(150), &NdtParams::default()).unwrap();
    let input = scan(151).voxel_downsample(0.5).unwrap();
    let objective = NdtObjective::new(&grid, input.points());
    let base = truth(150, 151);
    let h = 1e-5;
    let mut rng = 0x2545_F491_4F6C_DD1Du64;
    let mut next = || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for _ in 0..20 {
        let jitter = Pose6D::new(0.3 * next(), 0.3 * next(), 0.1 * next(), 0.02 * next(), 0.02 * next(), 0.05 * next());
        let pose = base.compose(&jitter);
        let assignment = objective.assign(&pose);
        let analytic = objective.evaluate(&pose, &assignment).gradient;
        let x = pose.to_vector();
        let mut numeric = nalgebra::Vector6::zeros();
        for i in 0..6 {
            let (mut lo, mut hi) = (x, x);
            lo[i] -= h;
            hi[i] += h;
            let f = |v| objective.evaluate(&Pose6D::from_vector(&v), &assignment).value;
            numeric[i] = (f(hi) - f(lo)) / (2.0 * h);
        }
        let rel = (analytic - numeric).norm() / numeric.norm().max(1e-12);
        assert!(rel <= 1e-3, "relative gradient error {rel}");
    }
}

fn small_cloud() -> PointCloud {
    static CLOUD: OnceLock<PointCloud> = OnceLock::new();
    CLOUD.get_or_init(|| scan(320).voxel_downsample(0.3).unwrap()).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn score_is_invariant_under_cell_aligned_translation(
        shift in (-40i32..40, -40i32..40, -5i32..5),
        pose in (-0.5f64..0.5, -0.5f64..0.5, -0.2f64..0.2, -0.05f64..0.05, -0.05f64..0.05, -0.1f64..0.1),
    ) {
        let params = NdtParams::default();
        let reference = small_cloud();
        let input = scan(321).voxel_downsample(0.5).unwrap();
        let c = [shift.0 as f64, shift.1 as f64, shift.2 as f64];
        let p = Pose6D::new(pose.0, pose.1, pose.2, pose.3, pose.4, pose.5);
        let t = Pose6D::from_translation(c[0], c[1], c[2]);
        let conjugated = t.compose(&p).compose(&t.inverse());
        let s0 = ndt_score(&NdtGrid::build(&reference, &params).unwrap(), &input, &p);
        let s1 = ndt_score(&NdtGrid::build(&shifted(&reference, c), &params).unwrap(), &shifted(&input, c), &conjugated);
        prop_assert!((s0 - s1).abs() <= 1e-6, "{} vs {}", s0, s1);
    }
}
