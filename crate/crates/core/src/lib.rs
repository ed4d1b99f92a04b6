//! Few-shot semantic relation prediction across heterogeneous graphs.

pub mod hetgraph;
pub mod synthgen;
pub mod embed;
pub mod extract;
pub mod model;
pub mod twoview;
pub mod hyperproto;
pub mod metrics;
pub mod episodic;
pub mod scenarios;
