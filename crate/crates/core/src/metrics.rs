//! Positioning error against ground truth, projected into the vehicle's
//! heading frame, and the per-run summary used in the result tables.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{cos, sin, sqrt, wrap_angle};

/// Local ENU position with heading measured clockwise from north, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnuPose {
    pub e: f64,
    pub n: f64,
    pub u: f64,
    pub heading: f64,
}

impl EnuPose {
    pub fn new(e: f64, n: f64, u: f64, heading: f64) -> Self {
        Self {
            e,
            n,
            u,
            heading: wrap_angle(heading),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: EnuPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochError {
    pub t: f64,
    pub lateral: f64,
    pub longitudinal: f64,
    pub altitude: f64,
    pub err2d: f64,
    pub err3d: f64,
    pub reliability: f64,
}

/// Splits a horizontal offset into (lateral, longitudinal) components for a
/// vehicle heading `heading` radians clockwise from north. Positive lateral
/// is to the right of the direction of travel.
pub fn project_heading(delta_e: f64, delta_n: f64, heading: f64) -> (f64, f64) {
    let (s, c) = (sin(heading), cos(heading));
    let longitudinal = delta_e * s + delta_n * c;
    let lateral = delta_e * c - delta_n * s;
    (lateral, longitudinal)
}

/// Error of `estimate` relative to `truth`, projected with the true heading.
pub fn epoch_error(estimate: &EnuPose, truth: &EnuPose) -> EpochError {
    let de = estimate.e - truth.e;
    let dn = estimate.n - truth.n;
    let du = estimate.u - truth.u;
    let (lateral, longitudinal) = project_heading(de, dn, truth.heading);
    EpochError {
        t: 0.0,
        lateral,
        longitudinal,
        altitude: du,
        err2d: sqrt(de * de + dn * dn),
        err3d: sqrt(de * de + dn * dn + du * du),
        reliability: 0.0,
    }
}

/// Mean error per second of run duration.
pub fn error_gradient(mean_error: f64, duration: f64) -> Result<f64> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidDuration);
    }
    Ok(mean_error / duration)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    /// Fraction of epochs whose reliability is at least the 3-D error.
    pub fraction: f64,
    /// Mean of `reliability - err3d`; negative means the radius underestimates.
    pub mean_gap: f64,
}

impl Coverage {
    pub fn underestimated(&self) -> bool {
        self.mean_gap < 0.0
    }
}

pub fn reliability_coverage(errors: &[EpochError]) -> Result<Coverage> {
    if errors.is_empty() {
        return Err(Error::EmptySeries);
    }
    let n = errors.len() as f64;
    let covered = errors.iter().filter(|e| e.reliability >= e.err3d).count();
    let gap = errors.iter().map(|e| e.reliability - e.err3d).sum::<f64>() / n;
    Ok(Coverage {
        fraction: covered as f64 / n,
        mean_gap: gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdMode {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1.
    Sample,
}

impl StdMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Population => "population",
            Self::Sample => "sample",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "population" => Some(Self::Population),
            "sample" => Some(Self::Sample),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64], mode: StdMode) -> MeanStd {
    if values.is_empty() {
        return MeanStd::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let denom = match mode {
        StdMode::Population => n,
        StdMode::Sample if values.len() > 1 => n - 1.0,
        StdMode::Sample => 1.0,
    };
    MeanStd {
        mean,
        std: sqrt(ss / denom),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub lateral: MeanStd,
    pub longitudinal: MeanStd,
    pub altitude: MeanStd,
    pub reliability: MeanStd,
    pub err2d: MeanStd,
    pub err3d: MeanStd,
    /// Mean and std of the 2-D error, each divided by the duration.
    pub gradient2d: MeanStd,
    pub gradient3d: MeanStd,
    pub duration: f64,
    pub epochs: usize,
    pub coverage: Coverage,
}

/// Per-direction statistics use absolute values. Gradient "std" columns are
/// the error std divided by the duration.
pub fn summarize_run(errors: &[EpochError], duration: f64, mode: StdMode) -> Result<RunSummary> {
    if errors.is_empty() {
        return Err(Error::EmptySeries);
    }
    let column = |f: fn(&EpochError) -> f64| -> Vec<f64> { errors.iter().map(f).collect() };
    let lateral = mean_std(&column(|e| e.lateral.abs()), mode);
    let longitudinal = mean_std(&column(|e| e.longitudinal.abs()), mode);
    let altitude = mean_std(&column(|e| e.altitude.abs()), mode);
    let reliability = mean_std(&column(|e| e.reliability), mode);
    let err2d = mean_std(&column(|e| e.err2d), mode);
    let err3d = mean_std(&column(|e| e.err3d), mode);
    let gradient = |m: MeanStd| -> Result<MeanStd> {
        Ok(MeanStd {
            mean: error_gradient(m.mean, duration)?,
            std: error_gradient(m.std, duration)?,
        })
    };
    Ok(RunSummary {
        lateral,
        longitudinal,
        altitude,
        reliability,
        err2d,
        err3d,
        gradient2d: gradient(err2d)?,
        gradient3d: gradient(err3d)?,
        duration,
        epochs: errors.len(),
        coverage: reliability_coverage(errors)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// (estimate index, truth index) pairs in estimate order.
    pub pairs: Vec<(usize, usize)>,
    pub dropped: usize,
}

/// Joins each estimate to the truth sample nearest in time, keeping pairs
/// within `tolerance` seconds. `truth` must be sorted by time.
pub fn align_by_timestamp(estimate: &[TimedPose], truth: &[TimedPose], tolerance: f64) -> Alignment {
    let mut pairs = Vec::with_capacity(estimate.len());
    let mut dropped = 0;
    for (i, est) in estimate.iter().enumerate() {
        let k = truth.partition_point(|s| s.t < est.t);
        let mut best: Option<(usize, f64)> = None;
        for j in [k.wrapping_sub(1), k] {
            if let Some(s) = truth.get(j) {
                let dt = (s.t - est.t).abs();
                if best.is_none_or(|(_, b)| dt < b) {
                    best = Some((j, dt));
                }
            }
        }
        match best {
            Some((j, dt)) if dt <= tolerance => pairs.push((i, j)),
            _ => dropped += 1,
        }
    }
    Alignment { pairs, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::FRAC_PI_2;
    use proptest::prelude::*;

    #[test]
    fn epoch_error_examples() {
        let truth = EnuPose::new(10.0, 20.0, 2.0, 0.3);
        let zero = epoch_error(&truth, &truth);
        assert_eq!((zero.err3d, zero.err2d, zero.altitude), (0.0, 0.0, 0.0));

        let est = EnuPose::new(13.0, 24.0, 2.0, 0.3);
        let e = epoch_error(&est, &truth);
        assert!((e.err3d - 5.0).abs() < 1e-12 && (e.err2d - 5.0).abs() < 1e-12);
        assert_eq!(e.altitude, 0.0);

        let up = epoch_error(&EnuPose::new(10.0, 20.0, 4.0, 0.0), &truth);
        assert_eq!((up.err3d, up.err2d, up.altitude), (2.0, 0.0, 2.0));
    }

    #[test]
    fn projection_examples() {
        let (lat, lon) = project_heading(0.0, 1.0, 0.0);
        assert_eq!((lat, lon), (0.0, 1.0));
        let (lat, lon) = project_heading(1.0, 0.0, 0.0);
        assert_eq!((lat, lon), (1.0, 0.0));
        let (lat, lon) = project_heading(1.0, 0.0, FRAC_PI_2);
        assert!((lon - 1.0).abs() < 1e-15 && lat.abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        assert!((error_gradient(6.64, 395.0).unwrap() - 0.017).abs() < 0.0005);
        assert!((error_gradient(23.22, 124.0).unwrap() - 0.189).abs() < 0.002);
        assert!((error_gradient(1.44, 64.0).unwrap() - 0.023).abs() <= 0.0005 + 1e-12);
        assert_eq!(error_gradient(1.0, 0.0), Err(Error::InvalidDuration));
        assert_eq!(error_gradient(1.0, -3.0), Err(Error::InvalidDuration));
    }

    fn epoch(err3d: f64, reliability: f64) -> EpochError {
        EpochError {
            err3d,
            err2d: err3d,
            lateral: err3d,
            reliability,
            ..Default::default()
        }
    }

    #[test]
    fn coverage_examples() {
        let same: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&e| epoch(e, e)).collect();
        let c = reliability_coverage(&same).unwrap();
        assert_eq!((c.fraction, c.mean_gap), (1.0, 0.0));

        let none: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&e| epoch(e, 0.0)).collect();
        assert_eq!(reliability_coverage(&none).unwrap().fraction, 0.0);

        // Reliability around 5.93 m against a 3-D error around 11.99 m.
        let series: Vec<_> = (0..100)
            .map(|k| {
                let wobble = (k as f64 - 49.5) * 0.01;
                epoch(11.99 + wobble, 5.93 - wobble)
            })
            .collect();
        let c = reliability_coverage(&series).unwrap();
        assert!(c.underestimated());
        assert!((c.mean_gap - (5.93 - 11.99)).abs() < 1e-9);
        assert_eq!(reliability_coverage(&[]), Err(Error::EmptySeries));
    }

    #[test]
    fn summary_examples() {
        let constant = vec![epoch(2.0, 1.0); 10];
        let s = summarize_run(&constant, 10.0, StdMode::Population).unwrap();
        assert_eq!(s.err3d.std, 0.0);
        assert_eq!(s.lateral.std, 0.0);
        assert_eq!(s.reliability.std, 0.0);

        let two = vec![epoch(1.0, 0.0), epoch(3.0, 0.0)];
        let s = summarize_run(&two, 2.0, StdMode::Population).unwrap();
        assert_eq!((s.err3d.mean, s.err3d.std), (2.0, 1.0));
        let s = summarize_run(&two, 2.0, StdMode::Sample).unwrap();
        assert!((s.err3d.std - 2.0f64.sqrt()).abs() < 1e-12);

        let exp1: Vec<_> = (0..395).map(|k| epoch(9.69 + if k % 2 == 0 { 1.0 } else { -1.0 } * 0.5, 7.0)).collect();
        let mean = exp1.iter().map(|e| e.err3d).sum::<f64>() / 395.0;
        let s = summarize_run(&exp1, 395.0, StdMode::Population).unwrap();
        assert!((s.gradient3d.mean - mean / 395.0).abs() < 1e-15);
        assert!((s.gradient3d.mean - 0.024).abs() < 0.001);
    }

    #[test]
    fn alignment_drops_far_epochs() {
        let pose = EnuPose::default();
        let truth: Vec<_> = (0..10).map(|k| TimedPose { t: k as f64 * 0.1, pose }).collect();
        let est = vec![
            TimedPose { t: 0.02, pose },
            TimedPose { t: 0.47, pose },
            TimedPose { t: 5.0, pose },
        ];
        let a = align_by_timestamp(&est, &truth, 0.05);
        assert_eq!(a.pairs, vec![(0, 0), (1, 5)]);
        assert_eq!(a.dropped, 1);
    }

    proptest! {
        #[test]
        fn projection_preserves_norm(de in -1e3..1e3f64, dn in -1e3..1e3f64, h in -7.0..7.0f64) {
            let (lat, lon) = project_heading(de, dn, h);
            let a = lat * lat + lon * lon;
            let b = de * de + dn * dn;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b));
        }

        #[test]
        fn error_components_are_consistent(
            de in -50.0..50.0f64, dn in -50.0..50.0f64, du in -50.0..50.0f64, h in -3.1..3.1f64,
        ) {
            let truth = EnuPose::new(0.0, 0.0, 0.0, h);
            let e = epoch_error(&EnuPose::new(de, dn, du, h), &truth);
            prop_assert!((e.err3d * e.err3d - (e.err2d * e.err2d + e.altitude * e.altitude)).abs() < 1e-9 * (1.0 + e.err3d * e.err3d));
            prop_assert!((e.err3d - sqrt(e.lateral * e.lateral + e.longitudinal * e.longitudinal + e.altitude * e.altitude)).abs() < 1e-9);
            prop_assert!((e.err2d - sqrt(e.lateral * e.lateral + e.longitudinal * e.longitudinal)).abs() < 1e-9);
        }

        #[test]
        fn summary_matches_brute_force(
            raw in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, 0.0..10.0f64), 100),
            duration in 1.0..500.0f64,
        ) {
            let errors: Vec<EpochError> = raw.iter().map(|&(a, b, c, r)| {
                let mut e = epoch_error(&EnuPose::new(a, b, c, 0.4), &EnuPose::new(0.0, 0.0, 0.0, 0.4));
                e.reliability = r;
                e
            }).collect();
            let s = summarize_run(&errors, duration, StdMode::Population).unwrap();
            // Independent two-pass recomputation.
            let n = errors.len() as f64;
            let lat: Vec<f64> = errors.iter().map(|e| e.lateral.abs()).collect();
            let m = lat.iter().sum::<f64>() / n;
            let var = lat.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            prop_assert!((s.lateral.mean - m).abs() < 1e-12);
            prop_assert!((s.lateral.std - sqrt(var)).abs() < 1e-12);
            let m3 = errors.iter().map(|e| e.err3d).sum::<f64>() / n;
            prop_assert!((s.gradient3d.mean - m3 / duration).abs() < 1e-12);
            let cov = errors.iter().filter(|e| e.reliability >= e.err3d).count() as f64 / n;
            prop_assert_eq!(s.coverage.fraction, cov);
        }
    }
}
