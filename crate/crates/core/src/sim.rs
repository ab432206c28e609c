//! Closed-loop network assembly, fixed-step RK4 integration, trajectory
//! recording and convergence metrics.
//!
//! The network state is one flat vector. Agent `i` owns a contiguous block
//! laid out as `[plant (kappa) | chain | observer | z (m) | lambda (m)]`,
//! where the chain holds `u_iota, u_iota', ...` for channels with
//! `r_iota < n` and the observer block (output feedback only) holds the
//! `n * m` estimated derivative stack followed by `chi_a_hat`.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{
    assemble_agent_controller, AgentController, Feedback, GradientKind, ObserverGains,
    TrackingGains, Variant,
};
use crate::convex::{self, Cost, QuadraticToPoint};
use crate::error::{Assumption, Error, Result};
use crate::generator::{self, GeneratorState, GradientMode};
use crate::graph::WeightedGraph;
use crate::plant::{self, LtiPlant, NormalForm};

/// Any state whose Euclidean norm exceeds this is treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;
/// Sweep rows count as converged when the final gap is at most this.
pub const SWEEP_CONVERGED_GAP: f64 = 1e-2;
/// Gradient-norm tolerance for the `y*` oracle.
pub const ORACLE_TOL: f64 = 1e-10;

/// Reusable classical Runge–Kutta stepper.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advance `x` in place from `t` to `t + h`. On a non-finite stage `x` is
    /// left untouched and a divergence error stamped with `t` is returned.
    pub fn step<F>(&mut self, mut f: F, t: f64, x: &mut [f64], h: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let bad = |v: &[f64]| v.iter().any(|a| !a.is_finite());
        f(t, x, &mut self.k1)?;
        if bad(&self.k1) {
            return Err(Error::Divergence { time: t });
        }
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2)?;
        if bad(&self.k2) {
            return Err(Error::Divergence { time: t });
        }
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3)?;
        if bad(&self.k3) {
            return Err(Error::Divergence { time: t });
        }
        for i in 0..x.len() {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4)?;
        if bad(&self.k4) {
            return Err(Error::Divergence { time: t });
        }
        for i in 0..x.len() {
            self.tmp[i] =
                x[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        if bad(&self.tmp) {
            return Err(Error::Divergence { time: t });
        }
        x.copy_from_slice(&self.tmp);
        Ok(())
    }
}

/// One RK4 step for an autonomous or time-varying `rhs`.
pub fn rk4_step<F>(rhs: F, t: f64, state: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut x = state.to_vec();
    Rk4::new(state.len()).step(rhs, t, &mut x, h)?;
    Ok(x)
}

/// Integration and initialization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub h: f64,
    pub horizon: f64,
    pub seed: u64,
    pub init_box: (f64, f64),
    pub decimation: usize,
    pub observer_init: InitMode,
    pub lambda_init: LambdaInit,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            h: 1e-3,
            horizon: 20.0,
            seed: 0,
            init_box: (-10.0, 10.0),
            decimation: 10,
            observer_init: InitMode::Zero,
            lambda_init: LambdaInit::Zero,
        }
    }
}

/// Initialization of the observer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Zero,
    /// Drawn from the init box.
    Box,
    /// Zero estimation error.
    Exact,
}

/// Initialization of the dual variables.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaInit {
    Zero,
    Box,
    /// Agent-major, `N * m` entries.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GainSpec {
    /// All poles at `-pole`.
    Pole(f64),
    Coeffs(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub variant: Variant,
    pub eps: f64,
    pub tracking: GainSpec,
    pub observer: GainSpec,
}

impl ControllerConfig {
    /// Default gains: all poles at -2; eps = 1 with exact gradients, 0.2 with
    /// realtime gradients.
    pub fn new(variant: Variant) -> Self {
        let eps = match variant.gradient {
            GradientKind::Exact => 1.0,
            GradientKind::Realtime => 0.2,
        };
        Self {
            variant,
            eps,
            tracking: GainSpec::Pole(2.0),
            observer: GainSpec::Pole(2.0),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CostSpec {
    /// `(1/2) ||y - y_i(0)||^2` from the drawn initial outputs.
    Rendezvous,
    Fixed(Vec<Cost>),
}

/// One agent's plant with an optional complement basis for its normal form.
#[derive(Debug, Clone)]
pub struct AgentPlant {
    pub plant: LtiPlant,
    pub complement: Option<DMatrix<f64>>,
}

impl From<LtiPlant> for AgentPlant {
    fn from(plant: LtiPlant) -> Self {
        Self {
            plant,
            complement: None,
        }
    }
}

/// A complete closed-loop problem instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub graph: WeightedGraph,
    /// Either one shared plant or one per agent.
    pub plants: Vec<AgentPlant>,
    pub costs: CostSpec,
    pub controller: ControllerConfig,
    pub sim: SimParams,
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn plant(&self, i: usize) -> &AgentPlant {
        if self.plants.len() == 1 {
            &self.plants[0]
        } else {
            &self.plants[i]
        }
    }

    /// Output dimension shared by all agents.
    pub fn m(&self) -> usize {
        self.plants[0].plant.m()
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        let mut s = self.clone();
        s.controller.eps = eps;
        s
    }
}

/// Structural facts established before a run.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub normal_forms: Vec<Arc<NormalForm>>,
    /// `max Re eig(Pi)` per agent.
    pub margins: Vec<f64>,
    pub connected: bool,
    pub algebraic_connectivity: f64,
}

fn assumption(a: Assumption, detail: String) -> Error {
    Error::Assumption {
        assumption: a,
        detail,
    }
}

/// Check dimensions and the standing assumptions. Relative-degree and
/// minimum-phase failures are reported as violations of the first assumption.
pub fn analyze(s: &Scenario) -> Result<Analysis> {
    let n = s.n_agents();
    if s.plants.is_empty() || (s.plants.len() != 1 && s.plants.len() != n) {
        return Err(Error::Dimension(format!(
            "need 1 or {n} plants, got {}",
            s.plants.len()
        )));
    }
    let m = s.m();
    if s.plants.iter().any(|p| p.plant.m() != m) {
        return Err(Error::Dimension(
            "all plants must share the output dimension".into(),
        ));
    }
    if !(s.sim.h > 0.0) || !(s.sim.horizon > s.sim.h) {
        return Err(Error::Config(format!(
            "need h > 0 and T > h, got h={} T={}",
            s.sim.h, s.sim.horizon
        )));
    }
    if s.sim.decimation == 0 {
        return Err(Error::Config("decimation must be at least 1".into()));
    }
    if !(s.sim.init_box.0 <= s.sim.init_box.1) {
        return Err(Error::Config(format!(
            "init box {:?} is empty",
            s.sim.init_box
        )));
    }
    if let CostSpec::Fixed(costs) = &s.costs {
        if costs.len() != n {
            return Err(Error::Dimension(format!(
                "need {n} costs, got {}",
                costs.len()
            )));
        }
        if let Some((i, c)) = costs.iter().enumerate().find(|(_, c)| c.dim() != m) {
            return Err(Error::Dimension(format!(
                "cost {} has dimension {}, outputs have {m}",
                i + 1,
                c.dim()
            )));
        }
        if s.controller.variant.gradient == GradientKind::Realtime {
            if let Some((i, c)) = costs
                .iter()
                .enumerate()
                .find(|(_, c)| !c.class().is_strong())
            {
                return Err(assumption(
                    Assumption::StrongConvexity,
                    format!(
                        "realtime gradients need strongly convex costs; cost {} ({}) is not",
                        i + 1,
                        c.name()
                    ),
                ));
            }
        }
    }
    if let LambdaInit::Explicit(l) = &s.sim.lambda_init {
        if l.len() != n * m {
            return Err(Error::Dimension(format!(
                "lambda0 needs {} entries, got {}",
                n * m,
                l.len()
            )));
        }
    }

    let mut normal_forms = Vec::with_capacity(s.plants.len());
    let mut margins = Vec::with_capacity(s.plants.len());
    for (k, ap) in s.plants.iter().enumerate() {
        let nf = plant::normal_form(&ap.plant, ap.complement.as_ref()).map_err(|e| match e {
            Error::NoRelativeDegree { .. } | Error::SingularDecoupling { .. } => assumption(
                Assumption::MinimumPhaseRelativeDegree,
                format!("plant {}: {e}", k + 1),
            ),
            other => other,
        })?;
        let (ok, margin) = plant::is_minimum_phase(&nf, 0.0);
        if !ok {
            return Err(assumption(
                Assumption::MinimumPhaseRelativeDegree,
                format!(
                    "plant {} has zero dynamics with spectral abscissa {margin:.4}",
                    k + 1
                ),
            ));
        }
        normal_forms.push(Arc::new(nf));
        margins.push(margin);
    }
    let connected = s.graph.is_connected();
    let lambda2 = s.graph.algebraic_connectivity();
    if !connected {
        return Err(assumption(
            Assumption::ConnectedGraph,
            format!("graph is disconnected (algebraic connectivity {lambda2:.3e})"),
        ));
    }
    Ok(Analysis {
        normal_forms,
        margins,
        connected,
        algebraic_connectivity: lambda2,
    })
}

#[derive(Debug, Clone)]
struct AgentSlot {
    plant: LtiPlant,
    ctrl: AgentController,
    offset: usize,
    kappa: usize,
}

impl AgentSlot {
    fn plant_range(&self) -> Range<usize> {
        self.offset..self.offset + self.kappa
    }
    fn chain_range(&self) -> Range<usize> {
        let a = self.offset + self.kappa;
        a..a + self.ctrl.chain_dim()
    }
    fn observer_range(&self) -> Range<usize> {
        let a = self.chain_range().end;
        a..a + self.ctrl.observer_dim()
    }
    fn z_range(&self) -> Range<usize> {
        let a = self.observer_range().end;
        a..a + self.ctrl.m()
    }
    fn lambda_range(&self) -> Range<usize> {
        let a = self.z_range().end;
        a..a + self.ctrl.m()
    }
}

/// The assembled closed-loop vector field.
#[derive(Debug, Clone)]
pub struct Network {
    graph: WeightedGraph,
    agents: Vec<AgentSlot>,
    costs: Vec<Cost>,
    m: usize,
    dim: usize,
    gradient: GradientKind,
}

impl Network {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn costs(&self) -> &[Cost] {
        &self.costs
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn controller(&self, i: usize) -> &AgentController {
        &self.agents[i].ctrl
    }

    pub fn plant_range(&self, i: usize) -> Range<usize> {
        self.agents[i].plant_range()
    }

    pub fn chain_range(&self, i: usize) -> Range<usize> {
        self.agents[i].chain_range()
    }

    pub fn observer_range(&self, i: usize) -> Range<usize> {
        self.agents[i].observer_range()
    }

    pub fn z_range(&self, i: usize) -> Range<usize> {
        self.agents[i].z_range()
    }

    pub fn lambda_range(&self, i: usize) -> Range<usize> {
        self.agents[i].lambda_range()
    }

    /// Agent-major plant outputs.
    pub fn outputs(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.agents.len() * self.m];
        for (i, a) in self.agents.iter().enumerate() {
            a.plant
                .output(&x[a.plant_range()], &mut y[i * self.m..(i + 1) * self.m]);
        }
        y
    }

    /// Agent-major generator blocks `(z, lambda)`.
    pub fn generator_state(&self, x: &[f64]) -> GeneratorState {
        let mut z = Vec::with_capacity(self.agents.len() * self.m);
        let mut l = Vec::with_capacity(self.agents.len() * self.m);
        for a in &self.agents {
            z.extend_from_slice(&x[a.z_range()]);
            l.extend_from_slice(&x[a.lambda_range()]);
        }
        GeneratorState {
            z,
            lambda: l,
            n_agents: self.agents.len(),
            dim: self.m,
        }
    }

    /// Observer estimation error per agent, if the agent runs output feedback.
    pub fn observer_error(&self, x: &[f64], i: usize) -> Option<f64> {
        let a = &self.agents[i];
        if a.ctrl.variant.feedback != Feedback::Output {
            return None;
        }
        let exact = a
            .ctrl
            .exact_observer_state(&x[a.plant_range()], &x[a.chain_range()]);
        let est = &x[a.observer_range()];
        Some(
            exact
                .iter()
                .zip(est)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt(),
        )
    }

    pub fn rhs(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let m = self.m;
        let y_all = self.outputs(x);
        let z_all: Vec<f64> = self
            .agents
            .iter()
            .flat_map(|a| x[a.z_range()].iter().copied())
            .collect();
        let l_all: Vec<f64> = self
            .agents
            .iter()
            .flat_map(|a| x[a.lambda_range()].iter().copied())
            .collect();
        for (i, a) in self.agents.iter().enumerate() {
            let xp = &x[a.plant_range()];
            let chain = &x[a.chain_range()];
            let z = &x[a.z_range()];
            let y = &y_all[i * m..(i + 1) * m];
            let out = match a.ctrl.variant.feedback {
                Feedback::State => a.ctrl.state_feedback(xp, chain, z),
                Feedback::Output => a.ctrl.output_feedback(y, chain, &x[a.observer_range()], z),
            };
            plant::plant_rhs_into(&a.plant, xp, &out.u_tilde, &mut dx[a.plant_range()]);
            dx[a.chain_range()].copy_from_slice(&out.chain_dot);
            dx[a.observer_range()].copy_from_slice(&out.observer_dot);

            let grad_at = match self.gradient {
                GradientKind::Exact => z,
                GradientKind::Realtime => y,
            };
            let (zr, lr) = (a.z_range(), a.lambda_range());
            let (zd, ld) = dx[zr.start..lr.end].split_at_mut(m);
            generator::agent_rhs(
                i,
                &self.graph,
                &self.costs[i],
                &z_all,
                &l_all,
                grad_at,
                m,
                zd,
                ld,
            )?;
        }
        Ok(())
    }
}

/// Whether a run reached the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Aborted; `time` is the last finite sample.
    Diverged {
        time: f64,
    },
}

/// Recorded samples; per-sample vectors are agent-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_agents: usize,
    pub m: usize,
    pub times: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub plant_norm: Vec<Vec<f64>>,
    pub observer_error: Option<Vec<Vec<f64>>>,
    pub status: RunStatus,
    pub final_state: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn y_i(&self, sample: usize, i: usize) -> &[f64] {
        &self.y[sample][i * self.m..(i + 1) * self.m]
    }

    pub fn z_i(&self, sample: usize, i: usize) -> &[f64] {
        &self.z[sample][i * self.m..(i + 1) * self.m]
    }

    pub fn lambda_sum(&self, sample: usize) -> Vec<f64> {
        generator::block_sum(&self.lambda[sample], self.m)
    }
}

/// A scenario with its network built and initial state drawn.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    network: Network,
    initial: Vec<f64>,
}

impl Simulation {
    pub fn new(s: &Scenario) -> Result<Self> {
        let analysis = analyze(s)?;
        let n = s.n_agents();
        let m = s.m();
        let cfg = &s.controller;
        let mut agents = Vec::with_capacity(n);
        let mut offset = 0;
        for i in 0..n {
            let ap = s.plant(i);
            let nf = analysis.normal_forms[if s.plants.len() == 1 { 0 } else { i }].clone();
            let tracking = match &cfg.tracking {
                GainSpec::Pole(p) => TrackingGains::from_pole(nf.n, *p, cfg.eps)?,
                GainSpec::Coeffs(c) => TrackingGains::new(c.clone(), cfg.eps)?,
            };
            let observer = match cfg.variant.feedback {
                Feedback::State => None,
                Feedback::Output => Some(match &cfg.observer {
                    GainSpec::Pole(p) => ObserverGains::from_pole(nf.n, *p)?,
                    GainSpec::Coeffs(l) => ObserverGains::new(l.clone())?,
                }),
            };
            let ctrl = assemble_agent_controller(cfg.variant, nf, tracking, observer)?;
            let slot = AgentSlot {
                plant: ap.plant.clone(),
                ctrl,
                offset,
                kappa: ap.plant.kappa(),
            };
            offset = slot.lambda_range().end;
            agents.push(slot);
        }
        let mut network = Network {
            graph: s.graph.clone(),
            agents,
            costs: Vec::new(),
            m,
            dim: offset,
            gradient: cfg.variant.gradient,
        };

        let initial = draw_initial(&network, &s.sim)?;
        network.costs = match &s.costs {
            CostSpec::Fixed(c) => c.clone(),
            CostSpec::Rendezvous => {
                let y0 = network.outputs(&initial);
                y0.chunks(m)
                    .map(|p| Arc::new(QuadraticToPoint::new(p.to_vec())) as Cost)
                    .collect()
            }
        };
        Ok(Self {
            scenario: s.clone(),
            network,
            initial,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial
    }

    pub fn set_initial_state(&mut self, x: Vec<f64>) -> Result<()> {
        if x.len() != self.network.dim {
            return Err(Error::Dimension(format!(
                "state needs {} entries, got {}",
                self.network.dim,
                x.len()
            )));
        }
        self.initial = x;
        Ok(())
    }

    pub fn costs(&self) -> &[Cost] {
        &self.network.costs
    }

    /// Centralized minimizer of `sum_i f_i`, started at the mean initial output.
    pub fn y_star(&self) -> Result<Vec<f64>> {
        let m = self.network.m;
        let y0 = self.network.outputs(&self.initial);
        let n = self.network.n_agents() as f64;
        let mut start = generator::block_sum(&y0, m);
        start.iter_mut().for_each(|v| *v /= n);
        convex::minimize_global(&self.network.costs, &start, ORACLE_TOL)
    }

    pub fn run(&self) -> Result<Trajectory> {
        let p = &self.scenario.sim;
        let net = &self.network;
        let steps = (p.horizon / p.h).round() as usize;
        let mut x = self.initial.clone();
        let mut tr = Trajectory {
            n_agents: net.n_agents(),
            m: net.m,
            times: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
            lambda: Vec::new(),
            plant_norm: Vec::new(),
            observer_error: match self.scenario.controller.variant.feedback {
                Feedback::Output => Some(Vec::new()),
                Feedback::State => None,
            },
            status: RunStatus::Completed,
            final_state: Vec::new(),
        };
        record(net, &mut tr, 0.0, &x);
        let mut rk = Rk4::new(x.len());
        for k in 0..steps {
            let t = k as f64 * p.h;
            // a failed step leaves x at t; a blown-up step has already moved it to t + h
            let stopped_at = match rk.step(|_, s, d| net.rhs(s, d), t, &mut x, p.h) {
                Ok(()) if x.iter().map(|v| v * v).sum::<f64>().sqrt() > DIVERGENCE_NORM => {
                    Some(t + p.h)
                }
                Ok(()) => None,
                Err(Error::Divergence { .. }) | Err(Error::NonFiniteGradient { .. }) => Some(t),
                Err(e) => return Err(e),
            };
            if let Some(time) = stopped_at {
                if tr.times.last() != Some(&time) {
                    record(net, &mut tr, time, &x);
                }
                tr.status = RunStatus::Diverged { time };
                tr.final_state = x;
                return Ok(tr);
            }
            if (k + 1) % p.decimation == 0 {
                record(net, &mut tr, (k + 1) as f64 * p.h, &x);
            }
        }
        tr.final_state = x;
        Ok(tr)
    }
}

fn draw_initial(net: &Network, p: &SimParams) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (lo, hi) = p.init_box;
    let dist =
        Uniform::new_inclusive(lo, hi).map_err(|e| Error::Config(format!("init box: {e}")))?;
    let mut x = vec![0.0; net.dim];
    let m = net.m;
    for (i, a) in net.agents.iter().enumerate() {
        for v in &mut x[a.plant_range()] {
            *v = dist.sample(&mut rng);
        }
        for v in &mut x[a.chain_range()] {
            *v = dist.sample(&mut rng);
        }
        match p.observer_init {
            InitMode::Zero => {}
            InitMode::Box => {
                for v in &mut x[a.observer_range()] {
                    *v = dist.sample(&mut rng);
                }
            }
            InitMode::Exact => {
                if a.ctrl.variant.feedback == Feedback::Output {
                    let obs = a
                        .ctrl
                        .exact_observer_state(&x[a.plant_range()], &x[a.chain_range()]);
                    x[a.observer_range()].copy_from_slice(&obs);
                }
            }
        }
        for v in &mut x[a.z_range()] {
            *v = dist.sample(&mut rng);
        }
        match &p.lambda_init {
            LambdaInit::Zero => {}
            LambdaInit::Box => {
                for v in &mut x[a.lambda_range()] {
                    *v = dist.sample(&mut rng);
                }
            }
            LambdaInit::Explicit(l) => {
                x[a.lambda_range()].copy_from_slice(&l[i * m..(i + 1) * m]);
            }
        }
    }
    Ok(x)
}

fn record(net: &Network, tr: &mut Trajectory, t: f64, x: &[f64]) {
    let g = net.generator_state(x);
    tr.times.push(t);
    tr.y.push(net.outputs(x));
    tr.z.push(g.z);
    tr.lambda.push(g.lambda);
    tr.plant_norm.push(
        (0..net.n_agents())
            .map(|i| {
                x[net.plant_range(i)]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
    );
    if let Some(obs) = tr.observer_error.as_mut() {
        obs.push(
            (0..net.n_agents())
                .map(|i| net.observer_error(x, i).unwrap_or(0.0))
                .collect(),
        );
    }
}

/// Build, draw and integrate a scenario.
pub fn run(s: &Scenario) -> Result<Trajectory> {
    Simulation::new(s)?.run()
}

/// Standalone generator trajectory: `(times, states)`.
pub fn run_generator(
    g: &WeightedGraph,
    costs: &[Cost],
    init: &GeneratorState,
    h: f64,
    horizon: f64,
    decimation: usize,
) -> Result<(Vec<f64>, Vec<GeneratorState>)> {
    let n = init.n_agents;
    let d = init.dim;
    let mut x: Vec<f64> = init.z.iter().chain(&init.lambda).copied().collect();
    let unpack = |x: &[f64]| GeneratorState {
        z: x[..n * d].to_vec(),
        lambda: x[n * d..].to_vec(),
        n_agents: n,
        dim: d,
    };
    let rhs = |_: f64, s: &[f64], out: &mut [f64]| -> Result<()> {
        let (zd, ld) = generator::generator_rhs(&unpack(s), g, costs, GradientMode::Exact)?;
        out[..n * d].copy_from_slice(&zd);
        out[n * d..].copy_from_slice(&ld);
        Ok(())
    };
    let steps = (horizon / h).round() as usize;
    let dec = decimation.max(1);
    let mut rk = Rk4::new(x.len());
    let mut times = vec![0.0];
    let mut states = vec![unpack(&x)];
    for k in 0..steps {
        rk.step(rhs, k as f64 * h, &mut x, h)?;
        if (k + 1) % dec == 0 {
            times.push((k + 1) as f64 * h);
            states.push(unpack(&x));
        }
    }
    Ok((times, states))
}

/// `max_i ||y_i(t) - y*||` per sample.
pub fn optimality_gap(tr: &Trajectory, y_star: &[f64]) -> Vec<f64> {
    (0..tr.len())
        .map(|k| {
            (0..tr.n_agents)
                .map(|i| dist(tr.y_i(k, i), y_star))
                .fold(0.0, f64::max)
        })
        .collect()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Least-squares line through `log(series)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit `log(series)` against time over the closed window. Values are clipped
/// below at 1e-15 before taking logs.
pub fn exp_rate_fit(times: &[f64], series: &[f64], window: (f64, f64)) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(series)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, v.max(1e-15).ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::TooFewSamples { got: pts.len() });
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    // exact comparisons: a constant series has no trend even if its mean rounds
    let flat = pts.iter().all(|p| p.1 == pts[0].1) || pts.iter().all(|p| p.0 == pts[0].0);
    let slope = if flat { 0.0 } else { sty / stt };
    let intercept = my - slope * mt;
    let r_squared = if flat { 0.0 } else { (sty * sty) / (stt * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}

/// One row of an eps sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub converged: bool,
    /// Final gap; infinite when the run diverged.
    pub gap_at_t: f64,
    /// Log-gap slope over `[T/5, T]`; NaN when unavailable.
    pub slope: f64,
}

/// Run the scenario once per `eps`, in parallel.
pub fn sweep_eps(s: &Scenario, eps_list: &[f64]) -> Result<Vec<SweepRow>> {
    let rows: Vec<Result<SweepRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = eps_list
            .iter()
            .map(|&eps| scope.spawn(move || sweep_one(s, eps)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    rows.into_iter().collect()
}

fn sweep_one(s: &Scenario, eps: f64) -> Result<SweepRow> {
    let sim = Simulation::new(&s.with_eps(eps))?;
    let y_star = sim.y_star()?;
    let tr = sim.run()?;
    if tr.diverged() {
        return Ok(SweepRow {
            eps,
            converged: false,
            gap_at_t: f64::INFINITY,
            slope: f64::NAN,
        });
    }
    let gap = optimality_gap(&tr, &y_star);
    let last = *gap.last().unwrap_or(&f64::INFINITY);
    let horizon = s.sim.horizon;
    let slope =
        exp_rate_fit(&tr.times, &gap, (horizon / 5.0, horizon)).map_or(f64::NAN, |f| f.slope);
    Ok(SweepRow {
        eps,
        converged: last <= SWEEP_CONVERGED_GAP,
        gap_at_t: last,
        slope,
    })
}

/// Values of eps that failed although some larger eps converged.
pub fn monotonicity_violations(rows: &[SweepRow]) -> Vec<f64> {
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| !r.converged) {
        if rows.iter().any(|q| q.converged && q.eps > r.eps) {
            out.push(r.eps);
        }
    }
    out
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["eps", "converged", "gap_at_T", "slope"])?;
    for r in rows {
        wr.write_record([
            r.eps.to_string(),
            r.converged.to_string(),
            format!("{:e}", r.gap_at_t),
            format!("{:e}", r.slope),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// CSV with one row per sample and agent: `t,agent,y_1..y_m,z_1..z_m,gap`,
/// where `gap` is that agent's distance to `y*`.
pub fn write_trajectory_csv<W: Write>(tr: &Trajectory, y_star: &[f64], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((1..=tr.m).map(|k| format!("y_{k}")));
    header.extend((1..=tr.m).map(|k| format!("z_{k}")));
    header.push("gap".into());
    wr.write_record(&header)?;
    for k in 0..tr.len() {
        for i in 0..tr.n_agents {
            let mut row = vec![tr.times[k].to_string(), (i + 1).to_string()];
            row.extend(tr.y_i(k, i).iter().map(f64::to_string));
            row.extend(tr.z_i(k, i).iter().map(f64::to_string));
            row.push(dist(tr.y_i(k, i), y_star).to_string());
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}
