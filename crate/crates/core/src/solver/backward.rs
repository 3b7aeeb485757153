//! Backward pass over a tree LQR, split at the last branching step into
//! the per-branch suffix segments (P1) and the shared part of the tree (P2).

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condensed::{condense_tree_upto, solve_dense};
use crate::error::Result;
use crate::linalg::Vector;
use crate::lqr::{backward_scan, feedback_from_values, FeedbackPolicy, ValueFunction};
use crate::riccati::{riccati_tree, riccati_tree_upto, TreeSolution, TreeStageModels};
use crate::scan::ScanSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackwardStrategy {
    /// Scan on P1, tree Riccati recursion on P2.
    ScanRiccati,
    /// Scan on P1, condensed dense solve on P2.
    ScanCondensed,
    /// Tree Riccati recursion over the whole tree.
    Sequential,
}

#[derive(Debug, Clone)]
pub struct BackwardResult {
    pub policies: Vec<Option<FeedbackPolicy>>,
    /// Value functions where they were computed (P2 nodes are `None` under
    /// the condensed strategy).
    pub values: Vec<Option<ValueFunction>>,
    pub t_p1: Duration,
    pub t_p2: Duration,
}

/// Scans every suffix chain that starts at step `N_b + 1` and runs to its
/// leaf, independently per branch.
fn solve_suffixes(
    models: &TreeStageModels,
    sol: &mut TreeSolution,
    schedule: ScanSchedule,
) -> Result<()> {
    let topo = &models.topology;
    let starts: Vec<usize> = topo.nodes_at_step(topo.suffix_start())?.collect();
    let chains = starts
        .par_iter()
        .map(|&start| {
            let mut nodes = vec![start];
            while let [only] = topo.children(*nodes.last().unwrap()) {
                nodes.push(*only);
            }
            let leaf = *nodes.last().unwrap();
            let terminal = models.terminal(leaf);
            if nodes.len() == 1 {
                return Ok((nodes, vec![terminal.clone()], Vec::new()));
            }
            let stages = models.chain_stages(&nodes);
            let values = backward_scan(&stages, terminal, schedule)?;
            let policies = stages
                .par_iter()
                .enumerate()
                .map(|(k, s)| feedback_from_values(s, &values[k + 1], nodes[k]))
                .collect::<Result<Vec<_>>>()?;
            Ok((nodes, values, policies))
        })
        .collect::<Result<Vec<_>>>()?;
    for (nodes, values, policies) in chains {
        for (k, v) in values.into_iter().enumerate() {
            sol.values[nodes[k]] = Some(v);
        }
        for (k, p) in policies.into_iter().enumerate() {
            sol.policies[nodes[k]] = Some(p);
        }
    }
    Ok(())
}

pub fn backward_pass(
    models: &TreeStageModels,
    strategy: BackwardStrategy,
    schedule: ScanSchedule,
) -> Result<BackwardResult> {
    let n = models.topology.node_count();
    if strategy == BackwardStrategy::Sequential {
        let start = Instant::now();
        let sol = riccati_tree(models)?;
        return Ok(BackwardResult {
            policies: sol.policies,
            values: sol.values,
            t_p1: start.elapsed(),
            t_p2: Duration::ZERO,
        });
    }
    models.validate()?;
    let mut sol = TreeSolution {
        values: vec![None; n],
        policies: vec![None; n],
    };
    let start = Instant::now();
    solve_suffixes(models, &mut sol, schedule)?;
    let t_p1 = start.elapsed();

    let cut = models.topology.suffix_start();
    let start = Instant::now();
    if cut > 0 {
        match strategy {
            BackwardStrategy::ScanCondensed => {
                let nx = models.nx();
                let (qp, gamma) =
                    condense_tree_upto(models, cut, &sol.values, &Vector::zeros(nx), schedule)?;
                let u = solve_dense(&qp)?;
                for (i, ui) in gamma.node_inputs(&u) {
                    sol.policies[i] = Some(FeedbackPolicy::open_loop(ui, nx));
                }
            }
            _ => riccati_tree_upto(models, &mut sol, cut)?,
        }
    }
    Ok(BackwardResult {
        policies: sol.policies,
        values: sol.values,
        t_p1,
        t_p2: start.elapsed(),
    })
}
