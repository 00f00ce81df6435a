//! Fixed-radius neighbor search and Gilbert-graph clustering.

mod cluster;
mod index;
mod scan;

pub use cluster::{gilbert_cluster, ClusterResult};
pub(crate) use cluster::cluster_slots;
pub use index::{build_index, NeighborIndex};
pub use scan::{percolation_scan, PercolationRow, PercolationScan};
