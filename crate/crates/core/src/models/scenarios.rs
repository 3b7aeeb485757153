//! The two driving case studies: an unprotected left turn with two crossing
//! vehicles whose speed targets are uncertain, and a straight-road tree whose
//! second branching models a slow decision maker that may call for a backup
//! manoeuvre.
//!
//! All numeric data (geometry, weights, bounds, target speeds) are defaults
//! of this crate and can be overridden through the JSON configs.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::unicycle::{unicycle_jacobians, unicycle_step, NU, NX};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{BmpcProblem, CostExpansion};
use crate::tree::{build_tree, BranchSpec, TreeTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Diagonal tracking weight on `(p_x, p_y, ψ, v)`.
    pub tracking: [f64; 4],
    /// Diagonal weight on `(a, ω)`.
    pub input: [f64; 2],
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            tracking: [1.0, 1.0, 0.1, 0.1],
            input: [0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub accel_max: f64,
    pub yaw_rate_max: f64,
    pub safety_radius: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            accel_max: 3.0,
            yaw_rate_max: 0.5,
            safety_radius: 3.0,
        }
    }
}

/// A vehicle driving along a fixed heading whose speed converges to its
/// target with time constant `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurroundingVehicle {
    pub start: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub tau: f64,
}

impl SurroundingVehicle {
    pub fn position(&self, t: f64, target: f64) -> [f64; 2] {
        let dist = target * t + (self.speed - target) * self.tau * (1.0 - (-t / self.tau).exp());
        [
            self.start[0] + dist * self.heading.cos(),
            self.start[1] + dist * self.heading.sin(),
        ]
    }
}

/// Tracking problem for a unicycle on a scenario tree, with input bounds on
/// every non-leaf node and circular keep-out zones around per-node obstacle
/// positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleProblem {
    pub topology: TreeTopology,
    pub dt: f64,
    pub x0: Vector,
    pub references: Vec<Vector>,
    pub obstacles: Vec<Vec<[f64; 2]>>,
    pub weights: CostWeights,
    pub limits: Limits,
}

impl VehicleProblem {
    fn tracking_error(&self, node: usize, x: &Vector) -> Vector {
        x - &self.references[node]
    }

    fn q_diag(&self) -> Vector {
        Vector::from_row_slice(&self.weights.tracking)
    }

    fn r_diag(&self) -> Vector {
        Vector::from_row_slice(&self.weights.input)
    }

    fn input_constraint_count(&self, node: usize) -> usize {
        if self.topology.is_leaf(node) {
            0
        } else {
            2 * NU
        }
    }
}

impl BmpcProblem for VehicleProblem {
    fn topology(&self) -> &TreeTopology {
        &self.topology
    }

    fn nx(&self) -> usize {
        NX
    }

    fn nu(&self) -> usize {
        NU
    }

    fn initial_state(&self) -> Vector {
        self.x0.clone()
    }

    fn dynamics(&self, _node: usize, x: &Vector, u: &Vector) -> Vector {
        unicycle_step(x, u, self.dt)
    }

    fn dynamics_jacobians(&self, _node: usize, x: &Vector, u: &Vector) -> (Mat, Mat) {
        unicycle_jacobians(x, u, self.dt)
    }

    fn stage_cost(&self, node: usize, x: &Vector, u: &Vector) -> f64 {
        let e = self.tracking_error(node, x);
        0.5 * e.dot(&self.q_diag().component_mul(&e)) + 0.5 * u.dot(&self.r_diag().component_mul(u))
    }

    fn stage_cost_expansion(&self, node: usize, x: &Vector, u: &Vector) -> CostExpansion {
        let q = self.q_diag();
        let r = self.r_diag();
        let e = self.tracking_error(node, x);
        CostExpansion {
            value: self.stage_cost(node, x, u),
            l_x: q.component_mul(&e),
            l_u: r.component_mul(u),
            l_xx: Mat::from_diagonal(&q),
            l_uu: Mat::from_diagonal(&r),
            l_ux: Mat::zeros(NU, NX),
        }
    }

    fn terminal_cost(&self, leaf: usize, x: &Vector) -> f64 {
        let e = self.tracking_error(leaf, x);
        0.5 * e.dot(&self.q_diag().component_mul(&e))
    }

    fn terminal_cost_expansion(&self, leaf: usize, x: &Vector) -> CostExpansion {
        let q = self.q_diag();
        CostExpansion {
            value: self.terminal_cost(leaf, x),
            l_x: q.component_mul(&self.tracking_error(leaf, x)),
            l_u: Vector::zeros(0),
            l_xx: Mat::from_diagonal(&q),
            l_uu: Mat::zeros(0, 0),
            l_ux: Mat::zeros(0, NX),
        }
    }

    fn constraint_count(&self, node: usize) -> usize {
        self.input_constraint_count(node) + self.obstacles[node].len()
    }

    /// `[a − ā, −a − ā, ω − ω̄, −ω − ω̄, r² − ‖p − o_j‖² ...]`.
    fn constraints(&self, node: usize, x: &Vector, u: Option<&Vector>) -> Vector {
        let lim = &self.limits;
        let mut g = Vec::with_capacity(self.constraint_count(node));
        if let Some(u) = u {
            g.extend([
                u[0] - lim.accel_max,
                -u[0] - lim.accel_max,
                u[1] - lim.yaw_rate_max,
                -u[1] - lim.yaw_rate_max,
            ]);
        }
        let r2 = lim.safety_radius * lim.safety_radius;
        for o in &self.obstacles[node] {
            let (dx, dy) = (x[0] - o[0], x[1] - o[1]);
            g.push(r2 - dx * dx - dy * dy);
        }
        Vector::from_vec(g)
    }

    fn constraint_jacobians(&self, node: usize, x: &Vector, u: Option<&Vector>) -> (Mat, Mat) {
        let m = self.constraint_count(node);
        let mi = self.input_constraint_count(node);
        let mut jx = Mat::zeros(m, NX);
        let mut ju = Mat::zeros(m, u.map_or(0, |_| NU));
        if mi > 0 {
            ju[(0, 0)] = 1.0;
            ju[(1, 0)] = -1.0;
            ju[(2, 1)] = 1.0;
            ju[(3, 1)] = -1.0;
        }
        for (j, o) in self.obstacles[node].iter().enumerate() {
            jx[(mi + j, 0)] = -2.0 * (x[0] - o[0]);
            jx[(mi + j, 1)] = -2.0 * (x[1] - o[1]);
        }
        (jx, ju)
    }
}

/// Which child was taken at each branching on the way to `node`.
fn branch_choices(topo: &TreeTopology, node: usize) -> Vec<usize> {
    let anc = topo.ancestry(node);
    anc.windows(2)
        .filter(|w| topo.children(w[0]).len() > 1)
        .map(|w| topo.children(w[0]).iter().position(|&c| c == w[1]).unwrap())
        .collect()
}

fn branch_step(shared_time: f64, dt: f64) -> usize {
    (shared_time / dt).round() as usize
}

/// Left-turn geometry of the ego vehicle: north along `x = lane`, a
/// quarter circle, then west along `y = lane`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeftTurn {
    pub lane: f64,
    pub start_y: f64,
    pub turn_start_y: f64,
    pub radius: f64,
}

impl Default for LeftTurn {
    fn default() -> Self {
        LeftTurn {
            lane: 1.75,
            start_y: -20.0,
            turn_start_y: -5.0,
            radius: 6.75,
        }
    }
}

impl LeftTurn {
    /// `(p_x, p_y, ψ)` at arc length `s`.
    pub fn pose(&self, s: f64) -> [f64; 3] {
        let straight = self.turn_start_y - self.start_y;
        let arc = FRAC_PI_2 * self.radius;
        let (cx, cy) = (self.lane - self.radius, self.turn_start_y);
        if s <= straight {
            [self.lane, self.start_y + s, FRAC_PI_2]
        } else if s <= straight + arc {
            let th = (s - straight) / self.radius;
            [cx + self.radius * th.cos(), cy + self.radius * th.sin(), FRAC_PI_2 + th]
        } else {
            let rest = s - straight - arc;
            [cx - rest, cy + self.radius, PI]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntersectionSpec {
    pub total_time: f64,
    pub shared_time: f64,
    pub horizon: usize,
    /// Number of speed targets considered for each surrounding vehicle.
    pub v1_count: usize,
    pub v2_count: usize,
    pub ego_speed: f64,
    pub path: LeftTurn,
    pub vehicles: [SurroundingVehicle; 2],
    /// Candidate speed targets; the first `v*_count` entries are used.
    pub v1_targets: Vec<f64>,
    pub v2_targets: Vec<f64>,
    pub weights: CostWeights,
    pub limits: Limits,
}

impl Default for IntersectionSpec {
    fn default() -> Self {
        IntersectionSpec {
            total_time: 10.0,
            shared_time: 0.1,
            horizon: 63,
            v1_count: 2,
            v2_count: 2,
            ego_speed: 8.0,
            path: LeftTurn::default(),
            vehicles: [
                // oncoming, southbound in the opposite lane
                SurroundingVehicle {
                    start: [-1.75, 25.0],
                    heading: -FRAC_PI_2,
                    speed: 8.0,
                    tau: 1.0,
                },
                // crossing from the west
                SurroundingVehicle {
                    start: [-20.0, -1.75],
                    heading: 0.0,
                    speed: 8.0,
                    tau: 1.0,
                },
            ],
            v1_targets: vec![8.0, 3.0, 12.0],
            v2_targets: vec![8.0, 3.0, 12.0, 5.0],
            weights: CostWeights::default(),
            limits: Limits::default(),
        }
    }
}

impl IntersectionSpec {
    /// Target counts `(|V¹|, |V²|)` for the leaf counts of the leaf sweep.
    pub fn counts_for_leaves(leaves: usize) -> Result<(usize, usize)> {
        match leaves {
            1 => Ok((1, 1)),
            2 => Ok((1, 2)),
            4 => Ok((2, 2)),
            6 => Ok((2, 3)),
            9 => Ok((3, 3)),
            12 => Ok((3, 4)),
            _ => Err(Error::InvalidScenario(format!(
                "no intersection case with {leaves} leaves (use 1, 2, 4, 6, 9 or 12)"
            ))),
        }
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.horizon as f64
    }
}

pub fn build_intersection_case(spec: &IntersectionSpec) -> Result<VehicleProblem> {
    let (n1, n2) = (spec.v1_count, spec.v2_count);
    if n1 == 0 || n2 == 0 || n1 > spec.v1_targets.len() || n2 > spec.v2_targets.len() {
        return Err(Error::InvalidScenario(format!(
            "target counts ({n1}, {n2}) exceed the candidate lists ({}, {})",
            spec.v1_targets.len(),
            spec.v2_targets.len()
        )));
    }
    if spec.horizon == 0 || !(spec.shared_time >= 0.0 && spec.shared_time < spec.total_time) {
        return Err(Error::InvalidScenario("need N >= 1 and 0 <= T_sh < T".into()));
    }
    let dt = spec.dt();
    let arity = n1 * n2;
    let branchings = if arity > 1 {
        let step = branch_step(spec.shared_time, dt);
        if step >= spec.horizon {
            return Err(Error::InvalidScenario("branching step falls on the horizon".into()));
        }
        vec![BranchSpec::uniform(step, arity)]
    } else {
        Vec::new()
    };
    let topology = build_tree(spec.horizon, &branchings)?;

    let n = topology.node_count();
    let mut references = Vec::with_capacity(n);
    let mut obstacles = Vec::with_capacity(n);
    for i in 0..n {
        let t = topology.time_step(i) as f64 * dt;
        let [px, py, psi] = spec.path.pose(spec.ego_speed * t);
        references.push(Vector::from_vec(vec![px, py, psi, spec.ego_speed]));
        let [sv1, sv2] = &spec.vehicles;
        let here = match branch_choices(&topology, i).first() {
            Some(&c) => vec![
                sv1.position(t, spec.v1_targets[c / n2]),
                sv2.position(t, spec.v2_targets[c % n2]),
            ],
            None => spec.v1_targets[..n1]
                .iter()
                .map(|&v| sv1.position(t, v))
                .chain(spec.v2_targets[..n2].iter().map(|&v| sv2.position(t, v)))
                .collect(),
        };
        obstacles.push(dedup_points(here));
    }
    let [px, py, psi] = spec.path.pose(0.0);
    Ok(VehicleProblem {
        topology,
        dt,
        x0: Vector::from_vec(vec![px, py, psi, spec.ego_speed]),
        references,
        obstacles,
        weights: spec.weights.clone(),
        limits: spec.limits.clone(),
    })
}

fn dedup_points(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for p in pts.drain(..) {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySpec {
    pub total_time: f64,
    /// Time of the fast decision (nominal vs anomaly).
    pub shared_time0: f64,
    /// Time of the slow decision (continue vs backup).
    pub shared_time1: f64,
    pub horizon: usize,
    pub cruise_speed: f64,
    /// Deceleration of the reference after a backup decision.
    pub backup_decel: f64,
    /// Obstacle present in the anomaly branches. Keep it off the reference
    /// line: a centred obstacle leaves the solver at a symmetric saddle.
    pub obstacle: [f64; 2],
    pub weights: CostWeights,
    pub limits: Limits,
}

impl Default for LatencySpec {
    fn default() -> Self {
        LatencySpec {
            total_time: 5.0,
            shared_time0: 0.05,
            shared_time1: 0.5,
            horizon: 255,
            cruise_speed: 10.0,
            backup_decel: 2.0,
            obstacle: [45.0, 0.5],
            weights: CostWeights::default(),
            limits: Limits::default(),
        }
    }
}

impl LatencySpec {
    pub fn dt(&self) -> f64 {
        self.total_time / self.horizon as f64
    }

    /// Steps of the two branchings.
    pub fn branch_steps(&self) -> (usize, usize) {
        let dt = self.dt();
        (branch_step(self.shared_time0, dt), branch_step(self.shared_time1, dt))
    }

    /// Reference `(p_x, v)` of the cruise or backup profile at time `t`.
    fn profile(&self, t: f64, backup: bool) -> (f64, f64) {
        let v0 = self.cruise_speed;
        if !backup || t <= self.shared_time1 {
            return (v0 * t, v0);
        }
        let tau = t - self.shared_time1;
        let t_stop = v0 / self.backup_decel;
        let base = v0 * self.shared_time1;
        if tau >= t_stop {
            (base + 0.5 * v0 * t_stop, 0.0)
        } else {
            (base + v0 * tau - 0.5 * self.backup_decel * tau * tau, v0 - self.backup_decel * tau)
        }
    }
}

pub fn build_latency_case(spec: &LatencySpec) -> Result<VehicleProblem> {
    if !(spec.shared_time0 < spec.shared_time1 && spec.shared_time1 < spec.total_time) {
        return Err(Error::InvalidScenario(
            "need T_sh0 < T_sh1 < T for the latency case".into(),
        ));
    }
    if spec.horizon == 0 {
        return Err(Error::InvalidScenario("horizon must be positive".into()));
    }
    let (b0, b1) = spec.branch_steps();
    if b0 >= b1 || b1 >= spec.horizon {
        return Err(Error::InvalidScenario(format!(
            "branching steps {b0} and {b1} must be increasing and below N = {}",
            spec.horizon
        )));
    }
    let dt = spec.dt();
    let topology = build_tree(
        spec.horizon,
        &[BranchSpec::uniform(b0, 2), BranchSpec::uniform(b1, 2)],
    )?;
    let n = topology.node_count();
    let mut references = Vec::with_capacity(n);
    let mut obstacles = Vec::with_capacity(n);
    for i in 0..n {
        let t = topology.time_step(i) as f64 * dt;
        let choices = branch_choices(&topology, i);
        let anomaly = choices.first() == Some(&1);
        let backup = choices.get(1) == Some(&1);
        let (px, v) = spec.profile(t, backup);
        references.push(Vector::from_vec(vec![px, 0.0, 0.0, v]));
        obstacles.push(if anomaly { vec![spec.obstacle] } else { Vec::new() });
    }
    Ok(VehicleProblem {
        topology,
        dt,
        x0: Vector::from_vec(vec![0.0, 0.0, 0.0, spec.cruise_speed]),
        references,
        obstacles,
        weights: spec.weights.clone(),
        limits: spec.limits.clone(),
    })
}

/// JSON scenario document: `{"intersection": {...}}` or `{"latency": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioConfig {
    Intersection(IntersectionSpec),
    Latency(LatencySpec),
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<VehicleProblem> {
        match self {
            ScenarioConfig::Intersection(s) => build_intersection_case(s),
            ScenarioConfig::Latency(s) => build_latency_case(s),
        }
    }
}
