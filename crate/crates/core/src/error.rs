use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input cloud")]
    EmptyCloud,
    #[error("non-finite coordinate in point cloud")]
    NonFinitePoint,
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("numerical divergence")]
    NumericalDivergence,
    #[error("insufficient correspondences: {0} pairs")]
    InsufficientCorrespondences(usize),
    #[error("invalid coefficients")]
    InvalidCoefficients,
    #[error("rank-deficient graph")]
    RankDeficientGraph,
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("edge endpoints must differ (node {0})")]
    SelfEdge(usize),
    #[error("origin inside building {0}")]
    OriginInsideBuilding(usize),
    #[error("invalid building: {0}")]
    InvalidBuilding(&'static str),
    #[error("invalid duration")]
    InvalidDuration,
    #[error("empty input series")]
    EmptySeries,
    #[error("infeasible scenario: urbanization degree {achieved:.2} outside the preset band")]
    InfeasibleScenario { achieved: f64 },
}
