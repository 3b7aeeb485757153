//! Linear rollout of the closed-loop tree LQR.

use crate::linalg::Vector;
use crate::lqr::{forward_scan, init_fwd_element, FeedbackPolicy};
use crate::riccati::TreeStageModels;
use crate::scan::ScanSchedule;
use crate::tree::TrajectoryTree;

/// Perturbations `(δx, δu)` from `δx_0 = 0`: each chain between branch
/// points is one forward scan, started from the state of its branch node.
pub fn linear_rollout(
    models: &TreeStageModels,
    policies: &[Option<FeedbackPolicy>],
    schedule: ScanSchedule,
) -> TrajectoryTree {
    let topo = &models.topology;
    let mut out = TrajectoryTree::zeros(topo, models.nx(), models.nu());
    let policy = |i: usize| policies[i].as_ref().expect("policy on every non-leaf node");
    for seg in topo.segments() {
        let mut prev = seg.start;
        let mut elements = Vec::with_capacity(seg.nodes.len());
        for &i in &seg.nodes {
            elements.push(init_fwd_element(&models.stage_toward(prev, i), policy(prev)));
            prev = i;
        }
        let start = out.states[seg.start].clone();
        for (&i, x) in seg.nodes.iter().zip(forward_scan(elements, &start, schedule)) {
            out.states[i] = x;
        }
    }
    for i in topo.non_leaves() {
        out.inputs[i] = Some(policy(i).apply(&out.states[i]));
    }
    out
}

/// Node-by-node propagation of the same closed loop.
pub fn sequential_rollout(
    models: &TreeStageModels,
    policies: &[Option<FeedbackPolicy>],
) -> TrajectoryTree {
    let topo = &models.topology;
    let mut out = TrajectoryTree::zeros(topo, models.nx(), models.nu());
    out.states[0] = Vector::zeros(models.nx());
    for i in 0..topo.node_count() {
        if let Some(p) = &policies[i] {
            let u = p.apply(&out.states[i]);
            for &ch in topo.children(i) {
                out.states[ch] = models.stage_toward(i, ch).step(&out.states[i], &u);
            }
            out.inputs[i] = Some(u);
        }
    }
    out
}
