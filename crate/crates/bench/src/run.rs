use std::path::{Path, PathBuf};
use std::time::Instant;

use bmpc::lqr::backward_scan;
use bmpc::models::{IntersectionSpec, LatencySpec, ScenarioConfig};
use bmpc::random::{self, random_lqr};
use bmpc::riccati::riccati_path;
use bmpc::solver::{solve, SolveReport, SolverKind, SolverOptions};
use bmpc::ScanSchedule;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result, OUTPUT_DIR_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Intersection case over `horizons × leaves`.
    HorizonSweep,
    /// Same grid as the horizon sweep; kept separate for labelling.
    LeafSweep,
    /// Latency case over `horizons × t_sh1`.
    LatencySweep,
    /// A single scenario from `scenario`.
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::HorizonSweep => "horizon-sweep",
            Experiment::LeafSweep => "leaf-sweep",
            Experiment::LatencySweep => "latency-sweep",
            Experiment::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub solver: SolverKind,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_leaves")]
    pub leaves: Vec<usize>,
    #[serde(default = "default_t_sh1")]
    pub t_sh1: Vec<f64>,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// CSV path; relative names land in `$BMPC_BENCH_OUT` when it is set.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Run sweep points concurrently (timings get noisier).
    #[serde(default)]
    pub parallel: bool,
    /// Overrides on top of the solver's preset.
    #[serde(default)]
    pub options: Option<serde_json::Value>,
    /// Only for `custom`.
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
}

fn default_horizons() -> Vec<usize> {
    vec![63]
}

fn default_leaves() -> Vec<usize> {
    vec![4]
}

fn default_t_sh1() -> Vec<f64> {
    vec![0.5]
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::Config(m.into()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        match self.experiment {
            Experiment::HorizonSweep | Experiment::LeafSweep => {
                if self.horizons.is_empty() || self.leaves.is_empty() {
                    return bad("horizons and leaves must be non-empty");
                }
                for &l in &self.leaves {
                    IntersectionSpec::counts_for_leaves(l).map_err(|e| BenchError::Config(e.to_string()))?;
                }
            }
            Experiment::LatencySweep => {
                if self.horizons.is_empty() || self.t_sh1.is_empty() {
                    return bad("horizons and t_sh1 must be non-empty");
                }
            }
            Experiment::Custom => {
                if self.scenario.is_none() {
                    return bad("custom experiments need a scenario");
                }
            }
        }
        self.solver_options().map(|_| ())
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        let preset = self.solver.options();
        let Some(overrides) = &self.options else {
            return Ok(preset);
        };
        let mut merged = serde_json::to_value(&preset).expect("options serialize");
        let (Some(base), Some(extra)) = (merged.as_object_mut(), overrides.as_object()) else {
            return Err(BenchError::Config("options must be a JSON object".into()));
        };
        for (k, v) in extra {
            base.insert(k.clone(), v.clone());
        }
        SolverOptions::from_json(&merged.to_string()).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Where the CSV goes, if anywhere.
    pub fn output_path(&self) -> Option<PathBuf> {
        let dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
        match (&self.output, dir) {
            (Some(p), Some(d)) if p.is_relative() => Some(d.join(p)),
            (Some(p), _) => Some(p.clone()),
            (None, Some(d)) => Some(d.join(format!("{}.csv", self.experiment.name()))),
            (None, None) => None,
        }
    }

    fn points(&self) -> Vec<Point> {
        match self.experiment {
            Experiment::HorizonSweep | Experiment::LeafSweep => self
                .horizons
                .iter()
                .flat_map(|&n| self.leaves.iter().map(move |&l| Point::Intersection { horizon: n, leaves: l }))
                .collect(),
            Experiment::LatencySweep => self
                .horizons
                .iter()
                .flat_map(|&n| self.t_sh1.iter().map(move |&t| Point::Latency { horizon: n, t_sh1: t }))
                .collect(),
            Experiment::Custom => vec![Point::Custom(self.scenario.clone().expect("validated"))],
        }
    }
}

#[derive(Debug, Clone)]
enum Point {
    Intersection { horizon: usize, leaves: usize },
    Latency { horizon: usize, t_sh1: f64 },
    Custom(ScenarioConfig),
}

impl Point {
    fn scenario(&self) -> Result<ScenarioConfig> {
        Ok(match self {
            Point::Intersection { horizon, leaves } => {
                let (a, b) = IntersectionSpec::counts_for_leaves(*leaves)?;
                ScenarioConfig::Intersection(IntersectionSpec {
                    horizon: *horizon,
                    v1_count: a,
                    v2_count: b,
                    ..Default::default()
                })
            }
            Point::Latency { horizon, t_sh1 } => ScenarioConfig::Latency(LatencySpec {
                horizon: *horizon,
                shared_time1: *t_sh1,
                ..Default::default()
            }),
            Point::Custom(s) => s.clone(),
        })
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub solver: String,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub leaves: usize,
    #[serde(rename = "T_sh1")]
    pub t_sh1: Option<f64>,
    pub rep: usize,
    pub iters: usize,
    pub cost: f64,
    pub violation: f64,
    pub t_setup_ms: f64,
    pub t_bp1_ms: f64,
    pub t_bp2_ms: f64,
    pub t_fwd_ms: f64,
    pub t_ls_ms: f64,
    pub t_total_ms: f64,
    pub status: String,
    /// Merit descent and μ monotonicity held on the logged iterations.
    #[serde(skip)]
    pub consistent: bool,
}

impl RunRecord {
    fn new(cfg: &RunConfig, point: &Point, scenario: &ScenarioConfig, rep: usize) -> Self {
        let (horizon, leaves, t_sh1) = match scenario {
            ScenarioConfig::Intersection(s) => (s.horizon, s.v1_count * s.v2_count, None),
            ScenarioConfig::Latency(s) => (s.horizon, 4, Some(s.shared_time1)),
        };
        let t_sh1 = match point {
            Point::Custom(_) => t_sh1,
            _ => t_sh1.filter(|_| cfg.experiment == Experiment::LatencySweep),
        };
        RunRecord {
            experiment: cfg.experiment.name().into(),
            solver: cfg.solver.name().into(),
            horizon,
            leaves,
            t_sh1,
            rep,
            iters: 0,
            cost: f64::NAN,
            violation: f64::NAN,
            t_setup_ms: 0.0,
            t_bp1_ms: 0.0,
            t_bp2_ms: 0.0,
            t_fwd_ms: 0.0,
            t_ls_ms: 0.0,
            t_total_ms: 0.0,
            status: "error".into(),
            consistent: false,
        }
    }

    fn fill(&mut self, r: &SolveReport) {
        self.iters = r.inner_iterations;
        self.cost = r.cost;
        self.violation = r.violation;
        self.t_setup_ms = r.times.setup_ms;
        self.t_bp1_ms = r.times.bp1_ms;
        self.t_bp2_ms = r.times.bp2_ms;
        self.t_fwd_ms = r.times.fwd_ms;
        self.t_ls_ms = r.times.ls_ms;
        self.t_total_ms = r.times.total_ms;
        self.status = r.status.as_str().into();
        self.consistent = r.merit_descent_holds() && r.mu_monotone();
    }
}

fn run_point(cfg: &RunConfig, opts: &SolverOptions, point: &Point) -> Result<Vec<RunRecord>> {
    let scenario = point.scenario()?;
    let problem = scenario.build().map_err(|e| BenchError::Config(e.to_string()))?;
    // warm-up, discarded
    let _ = solve(&problem, opts, None);
    let mut rows = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let mut rec = RunRecord::new(cfg, point, &scenario, rep);
        // a failing solve is recorded in its row, not raised
        if let Ok((_, report)) = solve(&problem, opts, None) {
            rec.fill(&report);
        }
        rows.push(rec);
    }
    Ok(rows)
}

/// Runs every sweep point in order (or concurrently with `parallel`).
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let opts = cfg.solver_options()?;
    let points = cfg.points();
    let chunks: Vec<Vec<RunRecord>> = if cfg.parallel {
        points.par_iter().map(|p| run_point(cfg, &opts, p)).collect::<Result<_>>()?
    } else {
        points.iter().map(|p| run_point(cfg, &opts, p)).collect::<Result<_>>()?
    };
    Ok(chunks.into_iter().flatten().collect())
}

pub fn write_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Wall time of one backward pass by scan and by the sequential recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanTiming {
    pub horizon: usize,
    pub scan_ms: f64,
    pub sequential_ms: f64,
}

/// Median over `reps` runs on a seeded random LQR (nx = 4, nu = 2).
pub fn scan_timing(horizon: usize, seed: u64, reps: usize) -> Result<ScanTiming> {
    let inst = random_lqr(&mut random::rng(seed), 4, 2, horizon);
    let median = |f: &dyn Fn() -> bmpc::Result<()>| -> Result<f64> {
        f()?;
        let mut t = Vec::with_capacity(reps);
        for _ in 0..reps.max(1) {
            let start = Instant::now();
            f()?;
            t.push(start.elapsed().as_secs_f64() * 1e3);
        }
        t.sort_by(f64::total_cmp);
        Ok(t[t.len() / 2])
    };
    let scan_ms = median(&|| backward_scan(&inst.stages, &inst.terminal, ScanSchedule::ParallelTree).map(|_| ()))?;
    let sequential_ms = median(&|| riccati_path(&inst.stages, &inst.terminal).map(|_| ()))?;
    Ok(ScanTiming {
        horizon,
        scan_ms,
        sequential_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_sizes() {
        let cfg = RunConfig::from_json(
            r#"{"experiment": "leaf-sweep", "solver": "pmsilqr", "horizons": [15], "leaves": [2, 4, 6, 9, 12]}"#,
        )
        .unwrap();
        assert_eq!(cfg.points().len(), 5);
        let cfg = RunConfig::from_json(
            r#"{"experiment": "latency-sweep", "solver": "smsilqr", "horizons": [63, 127], "t_sh1": [0.5, 1.0, 1.5, 2.0]}"#,
        )
        .unwrap();
        assert_eq!(cfg.points().len(), 8);
    }

    #[test]
    fn config_rejections() {
        for bad in [
            r#"{"experiment": "horizon-sweep", "solver": "foo"}"#,
            r#"{"experiment": "nope", "solver": "pmsilqr"}"#,
            r#"{"experiment": "horizon-sweep", "solver": "pmsilqr", "horizons": []}"#,
            r#"{"experiment": "horizon-sweep", "solver": "pmsilqr", "repetitions": 0}"#,
            r#"{"experiment": "leaf-sweep", "solver": "pmsilqr", "leaves": [5]}"#,
            r#"{"experiment": "custom", "solver": "pmsilqr"}"#,
            r#"{"experiment": "custom", "solver": "pmsilqr", "options": {"beta": 3.0}, "scenario": {"latency": {}}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(BenchError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn option_overrides_merge_into_the_preset() {
        let cfg = RunConfig::from_json(
            r#"{"experiment": "horizon-sweep", "solver": "hypmsilqr", "options": {"max_inner": 7}}"#,
        )
        .unwrap();
        let opts = cfg.solver_options().unwrap();
        assert_eq!(opts.max_inner, 7);
        assert_eq!(opts.backward, SolverKind::Hypmsilqr.options().backward);
    }
}
