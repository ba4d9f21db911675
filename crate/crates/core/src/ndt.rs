//! Normal distributions transform registration.
//!
//! The reference cloud is cut into cubic voxels and every voxel with enough
//! points is summarised by a Gaussian. A candidate pose is scored by the sum of
//! the Gaussian likelihoods of the transformed input points; registration
//! minimises the negated score with BFGS.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};

use crate::cloud::{voxel_index, PointCloud, VoxelIndex};
use crate::error::{Error, Result};
use crate::geometry::{rotation_zyx_derivatives, Point3, Pose6D};
use crate::math::exp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdtParams {
    /// Voxel edge length in meters, at the finest level.
    pub cell_size: f64,
    /// Resolution levels, coarse to fine; each level halves the cell size
    /// down to `cell_size`. One level is plain single-grid NDT.
    pub levels: usize,
    pub min_points_per_cell: usize,
    /// Smallest allowed ratio between the minor and major covariance eigenvalue.
    pub eigen_ratio: f64,
    /// Absolute eigenvalue floor in m^2; degenerate cells become `floor * I`.
    /// Kept above the squared range noise of typical sensors.
    pub covariance_floor: f64,
    /// Convergence threshold on the combined (m, rad) step norm.
    pub step_tolerance: f64,
    pub max_iterations: usize,
    /// Leaf size for input downsampling; 0 disables it.
    pub downsample_leaf: f64,
    /// Length of the first trial step, before curvature information exists.
    pub initial_step: f64,
}

impl Default for NdtParams {
    fn default() -> Self {
        Self {
            cell_size: 1.0,
            levels: 3,
            min_points_per_cell: 5,
            eigen_ratio: 1e-3,
            covariance_floor: 1e-3,
            step_tolerance: 1e-4,
            max_iterations: 30,
            downsample_leaf: 0.5,
            initial_step: 0.1,
        }
    }
}

const MAX_LEVELS: usize = 8;

impl NdtParams {
    /// Cell size of level `level`, counted from the coarsest.
    pub fn level_cell_size(&self, level: usize) -> f64 {
        let halvings = self.levels.saturating_sub(level + 1);
        self.cell_size * (1u32 << halvings) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
        if !(self.cell_size > 0.0) {
            return bad("cell_size", "must be positive");
        }
        if !(1..=MAX_LEVELS).contains(&self.levels) {
            return bad("levels", "must be between 1 and 8");
        }
        if self.min_points_per_cell < 1 {
            return bad("min_points_per_cell", "must be at least 1");
        }
        if !(self.eigen_ratio > 0.0 && self.eigen_ratio <= 1.0) {
            return bad("eigen_ratio", "must be in (0, 1]");
        }
        if !(self.covariance_floor > 0.0) {
            return bad("covariance_floor", "must be positive");
        }
        if !(self.step_tolerance > 0.0) {
            return bad("step_tolerance", "must be positive");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations", "must be at least 1");
        }
        if !(self.downsample_leaf >= 0.0) {
            return bad("downsample_leaf", "must be non-negative");
        }
        if !(self.initial_step > 0.0) {
            return bad("initial_step", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdtCell {
    pub mean: Point3,
    pub covariance: Matrix3<f64>,
    pub inverse: Matrix3<f64>,
    pub count: usize,
}

impl NdtCell {
    /// Gaussian of a set of points: mean and 1/n covariance, with the
    /// eigenvalues raised to `max(ratio * lambda_max, floor)`.
    pub fn from_points(points: &[Point3], eigen_ratio: f64, floor: f64) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p.coords - mean;
            cov += d * d.transpose();
        }
        cov /= n;
        let covariance = regularize(&cov, eigen_ratio, floor);
        let inverse = covariance.try_inverse()?;
        Some(Self {
            mean: Point3::from(mean),
            covariance,
            inverse: (inverse + inverse.transpose()) * 0.5,
            count: points.len(),
        })
    }

    /// Squared Mahalanobis distance of `p` to the cell mean.
    #[inline]
    pub fn mahalanobis_squared(&self, p: &Point3) -> f64 {
        let d = p - self.mean;
        d.dot(&(self.inverse * d))
    }
}

fn regularize(cov: &Matrix3<f64>, ratio: f64, floor: f64) -> Matrix3<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min_allowed = (ratio * max).max(floor);
    if eig.eigenvalues.min() >= min_allowed {
        return sym;
    }
    let lambdas = eig.eigenvalues.map(|l| l.max(min_allowed));
    let v = eig.eigenvectors;
    let out = v * Matrix3::from_diagonal(&lambdas) * v.transpose();
    (out + out.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdtGrid {
    cell_size: f64,
    cells: Vec<NdtCell>,
    index: BTreeMap<VoxelIndex, usize>,
}

impl NdtGrid {
    pub fn build(cloud: &PointCloud, params: &NdtParams) -> Result<Self> {
        params.validate()?;
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let size = params.cell_size;
        let mut buckets: BTreeMap<VoxelIndex, Vec<Point3>> = BTreeMap::new();
        for p in cloud.points() {
            buckets.entry(voxel_index(p, size)).or_default().push(*p);
        }
        let mut cells = Vec::new();
        let mut index = BTreeMap::new();
        for (key, pts) in buckets {
            if pts.len() < params.min_points_per_cell {
                continue;
            }
            if let Some(cell) =
                NdtCell::from_points(&pts, params.eigen_ratio, params.covariance_floor)
            {
                index.insert(key, cells.len());
                cells.push(cell);
            }
        }
        Ok(Self {
            cell_size: size,
            cells,
            index,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelIndex, &NdtCell)> {
        self.index.iter().map(move |(k, &i)| (k, &self.cells[i]))
    }

    pub fn cell(&self, key: &VoxelIndex) -> Option<&NdtCell> {
        self.index.get(key).map(|&i| &self.cells[i])
    }

    /// Cell of the voxel containing `p`, if that voxel is populated.
    #[inline]
    pub fn lookup(&self, p: &Point3) -> Option<usize> {
        self.index.get(&voxel_index(p, self.cell_size)).copied()
    }

    /// Registers `input` against this grid alone, ignoring `params.levels`.
    pub fn register(
        &self,
        input: &PointCloud,
        initial: &Pose6D,
        params: &NdtParams,
    ) -> Result<RegistrationResult> {
        params.validate()?;
        let source = if params.downsample_leaf > 0.0 {
            input.voxel_downsample(params.downsample_leaf)?
        } else {
            input.clone()
        };
        let objective = NdtObjective::new(self, source.points());
        let clock = Stopwatch::start();
        let mut result = minimize_bfgs(&objective, initial, params)?;
        result.elapsed = clock.elapsed();
        Ok(result)
    }
}

/// One NDT grid per resolution level, coarsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NdtPyramid {
    levels: Vec<NdtGrid>,
}

impl NdtPyramid {
    pub fn build(cloud: &PointCloud, params: &NdtParams) -> Result<Self> {
        params.validate()?;
        let levels = (0..params.levels)
            .map(|level| {
                let p = NdtParams {
                    cell_size: params.level_cell_size(level),
                    ..*params
                };
                NdtGrid::build(cloud, &p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[NdtGrid] {
        &self.levels
    }

    /// The full-resolution grid.
    pub fn finest(&self) -> &NdtGrid {
        &self.levels[self.levels.len() - 1]
    }

    /// Registers level by level, each starting where the coarser one ended.
    /// Iterations and evaluations are summed; the remaining fields come
    /// from the finest level.
    pub fn register(
        &self,
        input: &PointCloud,
        initial: &Pose6D,
        params: &NdtParams,
    ) -> Result<RegistrationResult> {
        params.validate()?;
        let source = if params.downsample_leaf > 0.0 {
            input.voxel_downsample(params.downsample_leaf)?
        } else {
            input.clone()
        };
        let clock = Stopwatch::start();
        let mut pose = *initial;
        let (mut iterations, mut evaluations) = (0, 0);
        let mut last = None;
        for grid in &self.levels {
            let objective = NdtObjective::new(grid, source.points());
            let r = minimize_bfgs(&objective, &pose, params)?;
            pose = r.transform;
            iterations += r.iterations;
            evaluations += r.point_evaluations;
            last = Some(r);
        }
        let mut result = last.ok_or(Error::InvalidParameter {
            name: "levels",
            reason: "must be between 1 and 8",
        })?;
        result.iterations = iterations;
        result.point_evaluations = evaluations;
        result.elapsed = clock.elapsed();
        Ok(result)
    }
}

/// Sum over points of `exp(-d^2 / 2)`, `d` the Mahalanobis distance of the
/// transformed point to the Gaussian of its containing voxel. Points in
/// unpopulated voxels contribute nothing.
pub fn ndt_score(grid: &NdtGrid, cloud: &PointCloud, pose: &Pose6D) -> f64 {
    let objective = NdtObjective::new(grid, cloud.points());
    let assignment = objective.assign(pose);
    -objective.evaluate(pose, &assignment).value
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Negated score.
    pub value: f64,
    pub gradient: Vector6<f64>,
    pub matched: usize,
}

/// The function `f(p) = -score(p)` over a fixed set of input points.
///
/// Cell assignment is separate from evaluation so the gradient can be checked
/// against finite differences of a smooth function.
pub struct NdtObjective<'a> {
    grid: &'a NdtGrid,
    points: &'a [Point3],
}

impl<'a> NdtObjective<'a> {
    pub fn new(grid: &'a NdtGrid, points: &'a [Point3]) -> Self {
        Self { grid, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cell index per input point after transforming by `pose`.
    pub fn assign(&self, pose: &Pose6D) -> Vec<Option<usize>> {
        let r = pose.rotation();
        let t = pose.translation();
        self.points
            .iter()
            .map(|p| self.grid.lookup(&Point3::from(r * p.coords + t)))
            .collect()
    }

    pub fn evaluate(&self, pose: &Pose6D, assignment: &[Option<usize>]) -> Evaluation {
        let r = pose.rotation();
        let t = pose.translation();
        let dr = rotation_zyx_derivatives(pose.rx, pose.ry, pose.rz);
        let mut value = 0.0;
        let mut gradient = Vector6::zeros();
        let mut matched = 0;
        for (p, cell) in self.points.iter().zip(assignment) {
            let Some(ci) = cell else { continue };
            let cell = &self.grid.cells[*ci];
            let x = r * p.coords + t;
            let d = x - cell.mean.coords;
            let w = cell.inverse * d;
            let e = exp(-0.5 * d.dot(&w));
            value -= e;
            matched += 1;
            // d f / d p = e * d^T S^-1 (d x / d p)
            gradient[0] += e * w.x;
            gradient[1] += e * w.y;
            gradient[2] += e * w.z;
            for k in 0..3 {
                gradient[3 + k] += e * w.dot(&(dr[k] * p.coords));
            }
        }
        Evaluation {
            value,
            gradient,
            matched,
        }
    }

    /// Gauss-Newton part of the Hessian of f: the sum over matched points of
    /// `e J^T S^-1 J` with `J = d x / d p`. Positive semidefinite.
    pub fn curvature(&self, pose: &Pose6D, assignment: &[Option<usize>]) -> Matrix6<f64> {
        let r = pose.rotation();
        let t = pose.translation();
        let dr = rotation_zyx_derivatives(pose.rx, pose.ry, pose.rz);
        let mut h = Matrix6::zeros();
        for (p, cell) in self.points.iter().zip(assignment) {
            let Some(ci) = cell else { continue };
            let cell = &self.grid.cells[*ci];
            let d = r * p.coords + t - cell.mean.coords;
            let e = exp(-0.5 * d.dot(&(cell.inverse * d)));
            let mut j = nalgebra::Matrix3x6::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
            for k in 0..3 {
                j.set_column(3 + k, &(dr[k] * p.coords));
            }
            h += j.transpose() * cell.inverse * j * e;
        }
        h
    }

    /// Value and gradient with the assignment re-binned at `pose`.
    pub fn evaluate_rebinned(&self, pose: &Pose6D) -> Evaluation {
        let a = self.assign(pose);
        self.evaluate(pose, &a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps input-frame points into the reference frame.
    pub transform: Pose6D,
    pub converged: bool,
    /// Optimizer iterations, at least 1.
    pub iterations: usize,
    /// Wall-clock seconds spent in the optimization loop (0 without `std`).
    pub elapsed: f64,
    pub final_score: f64,
    /// Mean nearest-neighbour residual after convergence, in meters.
    pub matching_degree: Option<f64>,
    /// Point-to-cell evaluations performed; a machine-independent cost measure.
    pub point_evaluations: u64,
    pub last_step_norm: f64,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn minimize_bfgs(
    objective: &NdtObjective<'_>,
    initial: &Pose6D,
    params: &NdtParams,
) -> Result<RegistrationResult> {
    let n_points = objective.len() as u64;
    let mut evaluations: u64 = 0;
    let mut eval_at = |x: &Vector6<f64>| -> Result<Evaluation> {
        evaluations += 2 * n_points;
        let ev = objective.evaluate_rebinned(&Pose6D::from_vector(x));
        if ev.value.is_finite() && ev.gradient.iter().all(|g| g.is_finite()) {
            Ok(ev)
        } else {
            Err(Error::NumericalDivergence)
        }
    };

    let mut x = initial.to_vector();
    let mut current = eval_at(&x)?;
    let mut metric_evaluations = n_points;
    let mut h_inv = gauss_newton_inverse(objective, &x);
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;

    while iterations < params.max_iterations {
        iterations += 1;
        let g = current.gradient;
        let g_norm = g.norm();
        if g_norm == 0.0 {
            last_step = 0.0;
            converged = current.matched > 0;
            break;
        }
        let steepest = -g * (params.initial_step / g_norm);
        let mut direction = match &h_inv {
            Some(h) => cap_step(-(h * g)),
            None => steepest,
        };
        if g.dot(&direction) >= 0.0 {
            h_inv = None;
            direction = steepest;
        }

        let mut accepted = line_search(&mut eval_at, &x, &current, &direction, params)?;
        if accepted.is_none() && h_inv.is_some() {
            // The quasi-Newton model is stale: rebuild it here and retry.
            h_inv = gauss_newton_inverse(objective, &x);
            metric_evaluations += n_points;
            let retry = match &h_inv {
                Some(h) => cap_step(-(h * g)),
                None => steepest,
            };
            if g.dot(&retry) < 0.0 {
                accepted = line_search(&mut eval_at, &x, &current, &retry, params)?;
            }
            if accepted.is_none() {
                accepted = line_search(&mut eval_at, &x, &current, &steepest, params)?;
            }
        }
        let Some((x_new, next)) = accepted else {
            // No decrease at any step longer than the tolerance: stationary.
            last_step = 0.0;
            converged = current.matched > 0;
            break;
        };

        let s = x_new - x;
        let y = next.gradient - g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let h = h_inv.unwrap_or_else(|| Matrix6::identity() * (sy / y.dot(&y)));
            let rho = 1.0 / sy;
            let left = Matrix6::identity() - s * y.transpose() * rho;
            let right = Matrix6::identity() - y * s.transpose() * rho;
            h_inv = Some(left * h * right + s * s.transpose() * rho);
        }
        x = x_new;
        current = next;
        last_step = s.norm();
        if last_step < params.step_tolerance {
            converged = current.matched > 0;
            break;
        }
    }
    let evaluations = evaluations + metric_evaluations;

    Ok(RegistrationResult {
        transform: Pose6D::from_vector(&x),
        converged,
        iterations: iterations.max(1),
        elapsed: 0.0,
        final_score: -current.value,
        matching_degree: None,
        point_evaluations: evaluations,
        last_step_norm: if last_step.is_finite() { last_step } else { 0.0 },
    })
}

/// Longest step, in the combined meter/radian norm, the optimizer proposes.
const MAX_STEP: f64 = 0.5;

fn cap_step(d: Vector6<f64>) -> Vector6<f64> {
    let n = d.norm();
    if n > MAX_STEP {
        d * (MAX_STEP / n)
    } else {
        d
    }
}

/// Inverse of the Gauss-Newton curvature at `x`, used to seed the BFGS
/// inverse Hessian. `None` when too few points constrain all six axes.
fn gauss_newton_inverse(objective: &NdtObjective<'_>, x: &Vector6<f64>) -> Option<Matrix6<f64>> {
    let pose = Pose6D::from_vector(x);
    let assignment = objective.assign(&pose);
    let h = objective.curvature(&pose, &assignment);
    let damping = h.trace() * 1e-9;
    if !(damping > 0.0) {
        return None;
    }
    (h + Matrix6::identity() * damping).cholesky().map(|c| c.inverse())
}

/// Backtracking search for the Armijo condition on the re-binned objective.
fn line_search<F>(
    eval_at: &mut F,
    x: &Vector6<f64>,
    current: &Evaluation,
    direction: &Vector6<f64>,
    params: &NdtParams,
) -> Result<Option<(Vector6<f64>, Evaluation)>>
where
    F: FnMut(&Vector6<f64>) -> Result<Evaluation>,
{
    let slope = current.gradient.dot(direction);
    let dir_norm = direction.norm();
    let mut alpha = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        if alpha * dir_norm < params.step_tolerance * 1e-2 {
            break;
        }
        let candidate = x + direction * alpha;
        let ev = eval_at(&candidate)?;
        if ev.value <= current.value + ARMIJO_C1 * alpha * slope {
            // Re-wrap angles so the stored vector matches the pose it encodes.
            let wrapped = Pose6D::from_vector(&candidate).to_vector();
            return Ok(Some((wrapped, ev)));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Registers `input` onto `reference` starting from `initial`, coarse to
/// fine over `params.levels` resolutions.
///
/// The returned transform maps input points into the reference frame. The
/// caller must check `converged`: the iteration limit, or a start outside the
/// basin of the score, leaves it false.
pub fn ndt_register(
    reference: &PointCloud,
    input: &PointCloud,
    initial: &Pose6D,
    params: &NdtParams,
) -> Result<RegistrationResult> {
    NdtPyramid::build(reference, params)?.register(input, initial, params)
}

struct Stopwatch {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> f64 {
        #[cfg(feature = "std")]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(not(feature = "std"))]
        {
            0.0
        }
    }
}
