//! Topology identification for radial distribution networks from smart-meter
//! energy readings, using whitened principal component analysis.

pub mod experiment;
pub mod formats;
pub mod graph;
pub mod ident;
pub mod noise;
pub mod pca;
pub mod readings;
pub mod sim;

pub use experiment::{run_grid, GridConfig, Scenario};
pub use formats::{BenchmarkReport, FormatError, NoiseManifest, Orientation};
pub use graph::{GraphError, IncidenceMatrix, Layer, LayeredNetwork, NodeId, NodeLabel, Role};
pub use ident::{
    identify_phase, identify_topology, score, score_network, IdentError, LayerPairResult,
    PairDiagnostics, Score, TopologyResult,
};
pub use noise::NoiseStats;
pub use pca::{ErrorCovariance, PcaError, PcaModel};
pub use readings::{ReadingsError, ReadingsMatrix};
pub use sim::{GroundTruth, NetworkSpec, NoiseConfig, SampleCount, SimError};
