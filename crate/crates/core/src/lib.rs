//! Solvers for branch model predictive control: parallel-scan LQR,
//! tree Riccati recursion, tree condensing and a multiple-shooting
//! iLQR-Tree solver with augmented-Lagrangian constraint handling.

pub mod condensed;
pub mod error;
pub mod linalg;
pub mod lqr;
pub mod models;
pub mod oracle;
pub mod problem;
pub mod random;
pub mod riccati;
pub mod scan;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
pub use lqr::{FeedbackPolicy, ScanElementBwd, ScanElementFwd, StageModel, ValueFunction};
pub use riccati::{TreeSolution, TreeStageModels};
pub use scan::ScanSchedule;
pub use tree::{build_tree, flatten, BranchSpec, TrajectoryTree, TreePath, TreeSpec, TreeTopology};
