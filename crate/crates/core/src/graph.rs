//! Pose graph built from LiDAR odometry, optimized with Levenberg-Marquardt.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix6, SMatrix, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{edge_error, Pose6D, PoseError6};
use crate::math::wrap_angle;
use crate::ndt::RegistrationResult;
use crate::sparse::BlockMatrix;
use crate::uncertainty::InformationMatrix6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub id: usize,
    pub estimate: Pose6D,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub measurement: Pose6D,
    pub information: InformationMatrix6,
    pub kind: EdgeKind,
    /// False when the registration behind this edge did not converge.
    pub converged: bool,
}

impl GraphEdge {
    pub fn error(&self, nodes: &[GraphNode]) -> PoseError6 {
        edge_error(
            &nodes[self.from].estimate,
            &nodes[self.to].estimate,
            &self.measurement,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    fixed_node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerParams {
    pub initial_damping: f64,
    pub damping_factor: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    pub jacobian_step: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            initial_damping: 1e-4,
            damping_factor: 10.0,
            max_iterations: 100,
            relative_tolerance: 1e-9,
            jacobian_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizationReport {
    /// Cost before optimization followed by the cost after every accepted step.
    pub costs: Vec<f64>,
    pub iterations: usize,
    pub rejected_steps: usize,
}

impl OptimizationReport {
    pub fn initial_cost(&self) -> f64 {
        self.costs.first().copied().unwrap_or(0.0)
    }

    pub fn final_cost(&self) -> f64 {
        self.costs.last().copied().unwrap_or(0.0)
    }
}

const MAX_DAMPING: f64 = 1e12;

impl PoseGraph {
    /// Graph with a single node, which is also the gauge anchor.
    pub fn new(origin: Pose6D, timestamp: f64) -> Self {
        Self {
            nodes: vec![GraphNode {
                id: 0,
                estimate: origin,
                timestamp,
            }],
            edges: Vec::new(),
            fixed_node: 0,
        }
    }

    /// Assembles a graph from parts, checking ids, edge endpoints and the anchor.
    pub fn from_parts(nodes: Vec<GraphNode>, edges: Vec<GraphEdge>, fixed_node: usize) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::UnknownNode(n.id));
            }
        }
        if fixed_node >= nodes.len() {
            return Err(Error::UnknownNode(fixed_node));
        }
        let graph = Self {
            nodes,
            edges: Vec::new(),
            fixed_node,
        };
        let mut graph = graph;
        for e in edges {
            graph.check_edge(e.from, e.to)?;
            graph.edges.push(e);
        }
        Ok(graph)
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn fixed_node(&self) -> usize {
        self.fixed_node
    }

    pub fn last_id(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn flagged_edges(&self) -> usize {
        self.edges.iter().filter(|e| !e.converged).count()
    }

    pub fn set_estimate(&mut self, id: usize, pose: Pose6D) -> Result<()> {
        let node = self.nodes.get_mut(id).ok_or(Error::UnknownNode(id))?;
        node.estimate = pose;
        Ok(())
    }

    fn check_edge(&self, from: usize, to: usize) -> Result<()> {
        if from >= self.nodes.len() {
            return Err(Error::UnknownNode(from));
        }
        if to >= self.nodes.len() {
            return Err(Error::UnknownNode(to));
        }
        if from == to {
            return Err(Error::SelfEdge(from));
        }
        Ok(())
    }

    /// Appends a node at `last * transform` and the odometry edge to it. Edges
    /// from non-converged registrations are kept but flagged.
    pub fn add_odometry(
        &mut self,
        result: &RegistrationResult,
        information: InformationMatrix6,
        timestamp: f64,
    ) -> usize {
        self.add_odometry_step(result.transform, information, timestamp, result.converged)
    }

    pub fn add_odometry_step(
        &mut self,
        transform: Pose6D,
        information: InformationMatrix6,
        timestamp: f64,
        converged: bool,
    ) -> usize {
        let last = self.last_id();
        let id = last + 1;
        let estimate = self.nodes[last].estimate.compose(&transform);
        self.nodes.push(GraphNode {
            id,
            estimate,
            timestamp,
        });
        self.edges.push(GraphEdge {
            from: last,
            to: id,
            measurement: transform,
            information,
            kind: EdgeKind::Odometry,
            converged,
        });
        id
    }

    pub fn add_loop(
        &mut self,
        from: usize,
        to: usize,
        measurement: Pose6D,
        information: InformationMatrix6,
    ) -> Result<()> {
        self.check_edge(from, to)?;
        self.edges.push(GraphEdge {
            from,
            to,
            measurement,
            information,
            kind: EdgeKind::Loop,
            converged: true,
        });
        Ok(())
    }

    /// Sum over edges of `e^T Omega e`.
    pub fn cost(&self) -> f64 {
        cost_of(&self.nodes, &self.edges)
    }

    fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.fixed_node]);
        seen[self.fixed_node] = true;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Minimizes [`PoseGraph::cost`] over every node except the anchor.
    ///
    /// Fails with [`Error::RankDeficientGraph`] when the graph is not connected
    /// to the anchor or the damped normal equations are singular.
    pub fn optimize(&self, params: &OptimizerParams) -> Result<(PoseGraph, OptimizationReport)> {
        if !self.is_connected() {
            return Err(Error::RankDeficientGraph);
        }
        let n = self.nodes.len();
        // Variable slot per node; the anchor has none.
        let slot: Vec<Option<usize>> = {
            let mut next = 0;
            (0..n)
                .map(|i| {
                    if i == self.fixed_node {
                        None
                    } else {
                        next += 1;
                        Some(next - 1)
                    }
                })
                .collect()
        };
        let n_vars = n - 1;

        let mut nodes = self.nodes.clone();
        let mut cost = cost_of(&nodes, &self.edges);
        let mut report = OptimizationReport {
            costs: vec![cost],
            ..Default::default()
        };
        if n_vars == 0 || cost == 0.0 {
            return Ok((self.with_nodes(nodes), report));
        }

        let mut lambda = params.initial_damping;
        while report.iterations < params.max_iterations {
            report.iterations += 1;
            let (h, b) = linearize(&nodes, &self.edges, &slot, n_vars, params.jacobian_step);

            let mut improved = false;
            while lambda <= MAX_DAMPING {
                let mut damped = h.clone();
                for v in 0..n_vars {
                    let d = h.diagonal(v);
                    for k in 0..6 {
                        damped.set_diagonal_entry(v, k, d[(k, k)] * (1.0 + lambda));
                    }
                }
                let rhs: Vec<Vector6<f64>> = b.iter().map(|g| -g).collect();
                let delta = damped.solve(&rhs).map_err(|_| Error::RankDeficientGraph)?;
                let candidate: Vec<GraphNode> = nodes
                    .iter()
                    .zip(&slot)
                    .map(|(node, s)| match s {
                        Some(v) => GraphNode {
                            estimate: Pose6D::from_vector(&(node.estimate.to_vector() + delta[*v])),
                            ..*node
                        },
                        None => *node,
                    })
                    .collect();
                let new_cost = cost_of(&candidate, &self.edges);
                if new_cost.is_finite() && new_cost < cost {
                    let decrease = (cost - new_cost) / cost;
                    nodes = candidate;
                    cost = new_cost;
                    report.costs.push(cost);
                    lambda = (lambda / params.damping_factor).max(1e-12);
                    improved = decrease >= params.relative_tolerance;
                    break;
                }
                report.rejected_steps += 1;
                lambda *= params.damping_factor;
            }
            if !improved || cost == 0.0 {
                break;
            }
        }
        Ok((self.with_nodes(nodes), report))
    }

    fn with_nodes(&self, nodes: Vec<GraphNode>) -> PoseGraph {
        PoseGraph {
            nodes,
            edges: self.edges.clone(),
            fixed_node: self.fixed_node,
        }
    }
}

fn cost_of(nodes: &[GraphNode], edges: &[GraphEdge]) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = e.error(nodes);
            (0..6).map(|k| e.information.weight(k) * r[k] * r[k]).sum::<f64>()
        })
        .sum()
}

type Jacobian6x12 = SMatrix<f64, 6, 12>;

/// Central-difference Jacobian of the edge residual with respect to the two
/// endpoint parameter vectors. Rotation differences are wrapped.
fn edge_jacobian(xi: &Pose6D, xj: &Pose6D, z: &Pose6D, step: f64) -> Jacobian6x12 {
    let mut jac = Jacobian6x12::zeros();
    let vi = xi.to_vector();
    let vj = xj.to_vector();
    for k in 0..12 {
        let perturb = |sign: f64| {
            let (mut a, mut b) = (vi, vj);
            if k < 6 {
                a[k] += sign * step;
            } else {
                b[k - 6] += sign * step;
            }
            edge_error(&Pose6D::from_vector(&a), &Pose6D::from_vector(&b), z)
        };
        let plus = perturb(1.0);
        let minus = perturb(-1.0);
        for r in 0..6 {
            let mut d = plus[r] - minus[r];
            if r >= 3 {
                d = wrap_angle(d);
            }
            jac[(r, k)] = d / (2.0 * step);
        }
    }
    jac
}

fn linearize(
    nodes: &[GraphNode],
    edges: &[GraphEdge],
    slot: &[Option<usize>],
    n_vars: usize,
    step: f64,
) -> (BlockMatrix, Vec<Vector6<f64>>) {
    let mut h = BlockMatrix::new(n_vars);
    let mut b = vec![Vector6::zeros(); n_vars];
    for e in edges {
        let xi = &nodes[e.from].estimate;
        let xj = &nodes[e.to].estimate;
        let r = *edge_error(xi, xj, &e.measurement).as_vector();
        let jac = edge_jacobian(xi, xj, &e.measurement, step);
        let omega = e.information.to_matrix();
        let ji = jac.fixed_columns::<6>(0).into_owned();
        let jj = jac.fixed_columns::<6>(6).into_owned();
        let wi: Matrix6<f64> = ji.transpose() * omega;
        let wj: Matrix6<f64> = jj.transpose() * omega;
        if let Some(si) = slot[e.from] {
            h.add(si, si, &(wi * ji));
            b[si] += wi * r;
        }
        if let Some(sj) = slot[e.to] {
            h.add(sj, sj, &(wj * jj));
            b[sj] += wj * r;
        }
        if let (Some(si), Some(sj)) = (slot[e.from], slot[e.to]) {
            h.add(si, sj, &(wi * jj));
        }
    }
    (h, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn step(tx: f64) -> Pose6D {
        Pose6D::from_translation(tx, 0.0, 0.0)
    }

    fn chain(steps: &[Pose6D]) -> PoseGraph {
        let mut g = PoseGraph::new(Pose6D::identity(), 0.0);
        for (k, s) in steps.iter().enumerate() {
            g.add_odometry_step(*s, InformationMatrix6::identity(), k as f64 + 1.0, true);
        }
        g
    }

    #[test]
    fn odometry_chains_compose() {
        let g = chain(&[step(1.0)]);
        assert_eq!(g.nodes()[1].estimate, step(1.0));
        let g = chain(&[step(1.0), step(1.0)]);
        assert!((g.nodes()[2].estimate.to_vector() - step(2.0).to_vector()).norm() < 1e-12);
        // Turn left a quarter, then drive 1 m forward.
        let g = chain(&[Pose6D::new(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2), step(1.0)]);
        let end = g.nodes()[2].estimate;
        assert!((end.tx).abs() < 1e-12 && (end.ty - 1.0).abs() < 1e-12);
        assert!((end.rz - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn cost_examples() {
        let g = chain(&[step(1.0), Pose6D::new(0.5, 0.1, 0.0, 0.0, 0.0, 0.3)]);
        assert!(g.cost() < 1e-20);

        let nodes = vec![
            GraphNode { id: 0, estimate: Pose6D::identity(), timestamp: 0.0 },
            GraphNode { id: 1, estimate: step(2.0), timestamp: 1.0 },
        ];
        let edge = GraphEdge {
            from: 0,
            to: 1,
            measurement: step(1.0),
            information: InformationMatrix6::identity(),
            kind: EdgeKind::Odometry,
            converged: true,
        };
        let g = PoseGraph::from_parts(nodes.clone(), vec![edge], 0).unwrap();
        assert!((g.cost() - 1.0).abs() < 1e-12);
        let doubled = GraphEdge { information: InformationMatrix6::identity().scaled(2.0), ..edge };
        let g2 = PoseGraph::from_parts(nodes, vec![doubled], 0).unwrap();
        assert!((g2.cost() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn odometry_only_chain_is_left_unchanged() {
        let g = chain(&[step(1.0), Pose6D::new(0.3, 0.2, 0.0, 0.0, 0.0, 0.2)]);
        let (opt, report) = g.optimize(&OptimizerParams::default()).unwrap();
        for (a, b) in opt.nodes().iter().zip(g.nodes()) {
            assert!((a.estimate.to_vector() - b.estimate.to_vector()).amax() < 1e-12);
        }
        assert!(report.final_cost() <= g.cost() && report.final_cost() < 1e-20);
    }

    fn triangle(loop_weight: f64) -> PoseGraph {
        let mut g = chain(&[step(1.0), step(1.0)]);
        g.add_loop(0, 2, step(1.5), InformationMatrix6::identity().scaled(loop_weight)).unwrap();
        g
    }

    #[test]
    fn triangle_matches_least_squares() {
        // argmin (x1-1)^2 + (x2-x1-1)^2 + (x2-1.5)^2 = (5/6, 5/3)
        let (opt, report) = triangle(1.0).optimize(&OptimizerParams::default()).unwrap();
        assert!((opt.nodes()[1].estimate.tx - 5.0 / 6.0).abs() < 1e-6);
        assert!((opt.nodes()[2].estimate.tx - 5.0 / 3.0).abs() < 1e-6);
        assert_eq!(opt.nodes()[0].estimate, Pose6D::identity());
        assert!(report.costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn heavy_loop_dominates() {
        // With weight 100: x2 = 2 x1, 402 x1 = 302.
        let (opt, _) = triangle(100.0).optimize(&OptimizerParams::default()).unwrap();
        let x2 = opt.nodes()[2].estimate.tx;
        assert!((x2 - 604.0 / 402.0).abs() < 1e-6);
        assert!((x2 - 1.5).abs() < 5e-3);
    }

    #[test]
    fn disconnected_graph_is_rank_deficient() {
        let nodes = vec![
            GraphNode { id: 0, estimate: Pose6D::identity(), timestamp: 0.0 },
            GraphNode { id: 1, estimate: step(1.0), timestamp: 1.0 },
            GraphNode { id: 2, estimate: step(2.0), timestamp: 2.0 },
        ];
        let edge = GraphEdge {
            from: 1,
            to: 2,
            measurement: step(1.5),
            information: InformationMatrix6::identity(),
            kind: EdgeKind::Odometry,
            converged: true,
        };
        let g = PoseGraph::from_parts(nodes, vec![edge], 0).unwrap();
        assert_eq!(g.optimize(&OptimizerParams::default()).unwrap_err(), Error::RankDeficientGraph);
    }

    #[test]
    fn invalid_edges_rejected() {
        let mut g = chain(&[step(1.0)]);
        assert_eq!(g.add_loop(0, 0, step(0.0), InformationMatrix6::identity()), Err(Error::SelfEdge(0)));
        assert_eq!(g.add_loop(0, 5, step(0.0), InformationMatrix6::identity()), Err(Error::UnknownNode(5)));
    }

    #[test]
    fn flagged_edges_are_counted() {
        let mut g = chain(&[step(1.0)]);
        g.add_odometry_step(step(1.0), InformationMatrix6::identity(), 2.0, false);
        assert_eq!(g.flagged_edges(), 1);
        assert_eq!(g.edges().len(), 2);
    }
}
