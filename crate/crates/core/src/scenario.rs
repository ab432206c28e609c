//! TOML scenario files.
//!
//! ```toml
//! name = "example1"
//! plant = "double_integrator_2d"      # or a table with A, B, C (and psi)
//! costs = "rendezvous"                # "example2" or a list of tables
//!
//! [graph]
//! n = 5
//! edges = [[1, 2], [2, 3, 0.5]]       # one-based, optional weight
//!
//! [controller]
//! feedback = "state"                  # "output"
//! gradient = "exact"                  # "realtime"
//! eps = 1.0
//! c = [4.0, 8.0]                      # or poles = 2.0
//! l = [4.0, 8.0]                      # or observer_poles = 2.0
//!
//! [generator]
//! lambda0 = "zero"                    # "box" or explicit values
//!
//! [sim]
//! h = 1e-3
//! T = 20.0
//! seed = 1
//! init_box = [-10.0, 10.0]
//! decimation = 10
//! observer_init = "zero"              # "box" or "exact"
//!
//! [output]
//! dir = "out"
//! fit_window = [2.0, 10.0]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::controller::{Feedback, GradientKind, Variant};
use crate::convex::{self, Cost, ExampleCosts, QuadraticToPoint, QuarticLinear};
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::plant::{matrix_from_rows, LtiPlant};
use crate::sim::{
    AgentPlant, ControllerConfig, CostSpec, GainSpec, InitMode, LambdaInit, Scenario, SimParams,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    plant: Option<RawPlant>,
    plants: Option<Vec<RawPlant>>,
    costs: RawCosts,
    graph: RawGraph,
    controller: RawController,
    generator: Option<RawGenerator>,
    sim: Option<RawSim>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    n: Option<usize>,
    edges: Option<Vec<Vec<f64>>>,
    preset: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawPlant {
    Builtin(String),
    Table(RawPlantTable),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlantTable {
    builtin: Option<String>,
    #[serde(rename = "A")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    c: Option<Vec<Vec<f64>>>,
    psi: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawCosts {
    Named(String),
    List(Vec<RawCost>),
}

#[derive(Debug, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
enum RawCost {
    QuadraticToPoint {
        point: Vec<f64>,
        weight: Option<f64>,
    },
    QuarticLinear {
        b: Vec<f64>,
    },
    Example2 {
        index: usize,
    },
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawFeedback {
    State,
    Output,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "lowercase")]
enum RawGradient {
    Exact,
    Realtime,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    feedback: RawFeedback,
    gradient: Option<RawGradient>,
    eps: Option<f64>,
    poles: Option<f64>,
    c: Option<Vec<f64>>,
    observer_poles: Option<f64>,
    l: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    mode: Option<RawGradient>,
    lambda0: Option<RawLambda>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawLambda {
    Named(String),
    Values(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    h: Option<f64>,
    #[serde(rename = "T")]
    horizon: Option<f64>,
    seed: Option<u64>,
    init_box: Option<[f64; 2]>,
    decimation: Option<usize>,
    observer_init: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    fit_window: Option<[f64; 2]>,
}

/// Output-related settings that do not affect the dynamics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub fit_window: Option<(f64, f64)>,
}

/// A parsed scenario file.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub output: OutputConfig,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    build(raw)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Built-in scenario text by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "example1" => Some(include_str!("../scenarios/example1.toml")),
        "example2" => Some(include_str!("../scenarios/example2.toml")),
        "example2_eps1" => Some(include_str!("../scenarios/example2_eps1.toml")),
        _ => None,
    }
}

pub fn bundled_names() -> &'static [&'static str] {
    &["example1", "example2", "example2_eps1"]
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn build(raw: RawScenario) -> Result<ScenarioFile> {
    let graph = build_graph(&raw.graph)?;
    let n = graph.n_nodes();

    let plants = match (raw.plant, raw.plants) {
        (Some(p), None) => vec![build_plant(p)?],
        (None, Some(ps)) => ps
            .into_iter()
            .map(build_plant)
            .collect::<Result<Vec<_>>>()?,
        (Some(_), Some(_)) => return Err(config("give either `plant` or `plants`, not both")),
        (None, None) => return Err(config("missing `plant`")),
    };
    if plants.len() != 1 && plants.len() != n {
        return Err(config(format!(
            "`plants` needs 1 or {n} entries, got {}",
            plants.len()
        )));
    }

    let costs = match raw.costs {
        RawCosts::Named(s) => match s.as_str() {
            "rendezvous" => CostSpec::Rendezvous,
            "example2" => CostSpec::Fixed(convex::build_example_costs(&ExampleCosts::Example2)?),
            other => return Err(config(format!("unknown cost set `{other}`"))),
        },
        RawCosts::List(list) => CostSpec::Fixed(
            list.into_iter()
                .map(build_cost)
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    let rc = raw.controller;
    let gen_mode = raw.generator.as_ref().and_then(|g| g.mode);
    let gradient = match (rc.gradient, gen_mode) {
        (Some(a), Some(b)) if a != b => {
            return Err(config("controller.gradient and generator.mode disagree"));
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => RawGradient::Exact,
    };
    let variant = Variant {
        feedback: match rc.feedback {
            RawFeedback::State => Feedback::State,
            RawFeedback::Output => Feedback::Output,
        },
        gradient: match gradient {
            RawGradient::Exact => GradientKind::Exact,
            RawGradient::Realtime => GradientKind::Realtime,
        },
    };
    let mut controller = ControllerConfig::new(variant);
    if let Some(e) = rc.eps {
        controller.eps = e;
    }
    controller.tracking = gain_spec(rc.poles, rc.c, "poles", "c")?.unwrap_or(controller.tracking);
    controller.observer =
        gain_spec(rc.observer_poles, rc.l, "observer_poles", "l")?.unwrap_or(controller.observer);

    let mut sim = SimParams::default();
    if let Some(rs) = raw.sim {
        if let Some(h) = rs.h {
            sim.h = h;
        }
        if let Some(t) = rs.horizon {
            sim.horizon = t;
        }
        if let Some(s) = rs.seed {
            sim.seed = s;
        }
        if let Some([lo, hi]) = rs.init_box {
            sim.init_box = (lo, hi);
        }
        if let Some(d) = rs.decimation {
            sim.decimation = d;
        }
        if let Some(o) = rs.observer_init {
            sim.observer_init = match o.as_str() {
                "zero" => InitMode::Zero,
                "box" => InitMode::Box,
                "exact" => InitMode::Exact,
                other => return Err(config(format!("unknown observer_init `{other}`"))),
            };
        }
    }
    if let Some(l) = raw.generator.and_then(|g| g.lambda0) {
        sim.lambda_init = match l {
            RawLambda::Named(s) if s == "zero" => LambdaInit::Zero,
            RawLambda::Named(s) if s == "box" => LambdaInit::Box,
            RawLambda::Named(s) => return Err(config(format!("unknown lambda0 `{s}`"))),
            RawLambda::Values(v) => LambdaInit::Explicit(v),
        };
    }

    let output = raw
        .output
        .map_or_else(OutputConfig::default, |o| OutputConfig {
            dir: o.dir,
            fit_window: o.fit_window.map(|[a, b]| (a, b)),
        });

    let scenario = Scenario {
        name: raw.name.unwrap_or_else(|| "scenario".into()),
        graph,
        plants,
        costs,
        controller,
        sim,
    };
    Ok(ScenarioFile { scenario, output })
}

fn gain_spec(
    pole: Option<f64>,
    coeffs: Option<Vec<f64>>,
    pk: &str,
    ck: &str,
) -> Result<Option<GainSpec>> {
    match (pole, coeffs) {
        (Some(_), Some(_)) => Err(config(format!("give either `{pk}` or `{ck}`, not both"))),
        (Some(p), None) => Ok(Some(GainSpec::Pole(p))),
        (None, Some(c)) => Ok(Some(GainSpec::Coeffs(c))),
        (None, None) => Ok(None),
    }
}

fn build_graph(g: &RawGraph) -> Result<WeightedGraph> {
    if let Some(p) = &g.preset {
        if g.edges.is_some() {
            return Err(config("graph: give either `preset` or `edges`"));
        }
        return match p.as_str() {
            "five_node" => Ok(WeightedGraph::five_node()),
            other => Err(config(format!("unknown graph preset `{other}`"))),
        };
    }
    let n = g.n.ok_or_else(|| config("graph.n is required"))?;
    let mut edges = Vec::new();
    for e in g.edges.as_deref().unwrap_or(&[]) {
        let idx = |v: f64| -> Result<usize> {
            if v.fract() != 0.0 || v < 0.0 {
                return Err(config(format!(
                    "graph edge index {v} is not a non-negative integer"
                )));
            }
            Ok(v as usize)
        };
        match e.as_slice() {
            [i, j] => edges.push((idx(*i)?, idx(*j)?, 1.0)),
            [i, j, w] => edges.push((idx(*i)?, idx(*j)?, *w)),
            _ => {
                return Err(config(format!(
                    "graph edge {e:?} must be [i, j] or [i, j, weight]"
                )))
            }
        }
    }
    WeightedGraph::from_one_based(n, &edges)
}

fn build_plant(p: RawPlant) -> Result<AgentPlant> {
    let (t, builtin) = match p {
        RawPlant::Builtin(name) => (None, Some(name)),
        RawPlant::Table(t) => {
            let b = t.builtin.clone();
            (Some(t), b)
        }
    };
    let plant = match (&builtin, &t) {
        (Some(name), t) => {
            if t.as_ref()
                .is_some_and(|t| t.a.is_some() || t.b.is_some() || t.c.is_some())
            {
                return Err(config("plant: give either `builtin` or matrices, not both"));
            }
            LtiPlant::builtin(name)
                .ok_or_else(|| config(format!("unknown builtin plant `{name}`")))?
        }
        (None, Some(t)) => match (&t.a, &t.b, &t.c) {
            (Some(a), Some(b), Some(c)) => LtiPlant::from_rows(a, b, c)?,
            _ => return Err(config("plant needs all of A, B and C")),
        },
        (None, None) => unreachable!("plant spec is either a name or a table"),
    };
    let complement = match t.and_then(|t| t.psi) {
        Some(rows) => Some(matrix_from_rows(&rows)?),
        None => None,
    };
    Ok(AgentPlant { plant, complement })
}

fn build_cost(c: RawCost) -> Result<Cost> {
    Ok(match c {
        RawCost::QuadraticToPoint { point, weight } => {
            let w = weight.unwrap_or(1.0);
            if !(w > 0.0) {
                return Err(config(format!(
                    "quadratic weight must be positive, got {w}"
                )));
            }
            Arc::new(QuadraticToPoint { point, weight: w })
        }
        RawCost::QuarticLinear { b } => Arc::new(QuarticLinear { b }),
        RawCost::Example2 { index } => Arc::new(convex::Example2Cost::new(index)?),
    })
}
