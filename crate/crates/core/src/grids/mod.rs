//! Feature grids, factored decompositions and their regularizers.

pub mod decomposition;
pub mod grid;
pub mod regularize;
pub mod volume;

pub use decomposition::{DecompositionKind, DecompositionSpec, FactorAxes};
pub use grid::{BoundaryMode, FeatureGrid1D, FeatureGrid2D};
pub use volume::{contract, FactoredVolume, QueryWorkspace, TransformSet, VolumeGrads};
