//! High-gain tracking, precompensator chains, the output observer and the
//! assembled per-agent controllers.
//!
//! Output-derivative stacks are stored row-major by derivative order:
//! entry `k * m + iota` holds `y_iota^{(k)}`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::{self, NormalForm};

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Lower coefficients `c_0..c_{n-1}` of `(s + pole)^n`.
pub fn hurwitz_coeffs(n: usize, pole: f64) -> Vec<f64> {
    (0..n)
        .map(|k| binomial(n, k) * pole.powi((n - k) as i32))
        .collect()
}

/// Observer gains `l_1..l_n` placing every error pole at `-pole`.
pub fn observer_coeffs(n: usize, pole: f64) -> Vec<f64> {
    (1..=n)
        .map(|k| binomial(n, k) * pole.powi(k as i32))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingGains {
    pub n: usize,
    pub c: Vec<f64>,
    pub eps: f64,
}

impl TrackingGains {
    pub fn new(c: Vec<f64>, eps: f64) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::Config(
                "tracking gains need at least one coefficient".into(),
            ));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        let mut poly = c.clone();
        poly.push(1.0);
        if !linalg::is_hurwitz_poly(&poly) {
            return Err(Error::Config(format!(
                "tracking polynomial with c = {c:?} is not Hurwitz"
            )));
        }
        Ok(Self { n: c.len(), c, eps })
    }

    pub fn from_pole(n: usize, pole: f64, eps: f64) -> Result<Self> {
        if n == 0 || !(pole > 0.0) {
            return Err(Error::Config(format!(
                "need n >= 1 and pole > 0, got n={n} pole={pole}"
            )));
        }
        Self::new(hurwitz_coeffs(n, pole), eps)
    }

    /// Companion matrix of `s^n + sum c_k s^k`.
    pub fn tracking_matrix(&self) -> DMatrix<f64> {
        linalg::companion(&self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains {
    pub l: Vec<f64>,
}

impl ObserverGains {
    pub fn new(l: Vec<f64>) -> Result<Self> {
        if l.is_empty() {
            return Err(Error::Config(
                "observer gains need at least one coefficient".into(),
            ));
        }
        let mut poly: Vec<f64> = l.iter().rev().copied().collect();
        poly.push(1.0);
        if !linalg::is_hurwitz_poly(&poly) {
            return Err(Error::Config(format!(
                "observer polynomial with l = {l:?} is not Hurwitz"
            )));
        }
        Ok(Self { l })
    }

    pub fn from_pole(n: usize, pole: f64) -> Result<Self> {
        if n == 0 || !(pole > 0.0) {
            return Err(Error::Config(format!(
                "need n >= 1 and pole > 0, got n={n} pole={pole}"
            )));
        }
        Self::new(observer_coeffs(n, pole))
    }

    pub fn n(&self) -> usize {
        self.l.len()
    }

    /// Estimation-error matrix: first column `-l`, ones on the superdiagonal.
    pub fn error_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(j, 0)] = -self.l[j];
            if j + 1 < n {
                a[(j, j + 1)] = 1.0;
            }
        }
        a
    }
}

/// `v = -(1/eps^n) [c_0 (x - z) + sum_{k>=1} eps^k c_k x^{(k)}]`.
pub fn tracking_control(gains: &TrackingGains, stack: &[f64], z: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; z.len()];
    tracking_control_into(gains, stack, z, &mut v);
    v
}

pub(crate) fn tracking_control_into(
    gains: &TrackingGains,
    stack: &[f64],
    z: &[f64],
    v: &mut [f64],
) {
    let m = z.len();
    let scale = gains.eps.powi(gains.n as i32);
    for iota in 0..m {
        let mut acc = gains.c[0] * (stack[iota] - z[iota]);
        let mut ek = 1.0;
        for k in 1..gains.n {
            ek *= gains.eps;
            acc += ek * gains.c[k] * stack[k * m + iota];
        }
        v[iota] = -acc / scale;
    }
}

/// Chain layout: channel `iota` owns `n - r_iota` states `u, u', ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLayout {
    pub r: Vec<usize>,
    pub n: usize,
    offsets: Vec<usize>,
    dim: usize,
}

impl ChainLayout {
    pub fn new(r: &[usize], n: usize) -> Result<Self> {
        if r.iter().any(|&ri| ri == 0 || ri > n) {
            return Err(Error::Config(format!(
                "relative degrees {r:?} incompatible with n = {n}"
            )));
        }
        let mut offsets = Vec::with_capacity(r.len());
        let mut dim = 0;
        for &ri in r {
            offsets.push(dim);
            dim += n - ri;
        }
        Ok(Self {
            r: r.to_vec(),
            n,
            offsets,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self, iota: usize) -> usize {
        self.n - self.r[iota]
    }

    /// `u_iota^{(j)}` from the chain, `j < n - r_iota`.
    pub fn get(&self, chain: &[f64], iota: usize, j: usize) -> f64 {
        chain[self.offsets[iota] + j]
    }
}

/// Chain derivatives and the effective decoupled input `u`.
pub fn chain_rhs(layout: &ChainLayout, chain: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut cd = vec![0.0; layout.dim()];
    let mut u = vec![0.0; v.len()];
    chain_rhs_into(layout, chain, v, &mut cd, &mut u);
    (cd, u)
}

pub(crate) fn chain_rhs_into(
    layout: &ChainLayout,
    chain: &[f64],
    v: &[f64],
    cd: &mut [f64],
    u: &mut [f64],
) {
    for iota in 0..v.len() {
        let d = layout.len(iota);
        if d == 0 {
            u[iota] = v[iota];
            continue;
        }
        let o = layout.offsets[iota];
        u[iota] = chain[o];
        for j in 0..d - 1 {
            cd[o + j] = chain[o + j + 1];
        }
        cd[o + d - 1] = v[iota];
    }
}

/// Observer state: the `n * m` estimated stack followed by `chi_a_hat`.
pub fn observer_rhs(
    gains: &ObserverGains,
    nf: &NormalForm,
    obs: &[f64],
    y: &[f64],
    v: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; obs.len()];
    observer_rhs_into(gains, nf, obs, y, v, &mut out);
    out
}

pub(crate) fn observer_rhs_into(
    gains: &ObserverGains,
    nf: &NormalForm,
    obs: &[f64],
    y: &[f64],
    v: &[f64],
    out: &mut [f64],
) {
    let m = nf.m();
    let n = gains.n();
    for iota in 0..m {
        let e = obs[iota] - y[iota];
        for k in 0..n {
            let next = if k + 1 < n {
                obs[(k + 1) * m + iota]
            } else {
                v[iota]
            };
            out[k * m + iota] = next - gains.l[k] * e;
        }
    }
    let na = nf.zero_dim();
    if na > 0 {
        let chi_a = &obs[n * m..];
        let chi_b = chi_b_from_stack(nf, &obs[..n * m]);
        for i in 0..na {
            let mut s = 0.0;
            for (j, a) in chi_a.iter().enumerate() {
                s += nf.pi[(i, j)] * a;
            }
            for (j, b) in chi_b.iter().enumerate() {
                s += nf.psi[(i, j)] * b;
            }
            out[n * m + i] = s;
        }
    }
}

/// `xi_{iota,j} = y_iota^{(j-1)}` read from a derivative stack.
pub fn chi_b_from_stack(nf: &NormalForm, stack: &[f64]) -> Vec<f64> {
    let m = nf.m();
    let mut chi_b = vec![0.0; nf.chain_dim()];
    for (iota, &ri) in nf.r.iter().enumerate() {
        for j in 1..=ri {
            chi_b[nf.xi_index(iota, j)] = stack[(j - 1) * m + iota];
        }
    }
    chi_b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    State,
    Output,
}

/// Gradient source for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientKind {
    Exact,
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub feedback: Feedback,
    pub gradient: GradientKind,
}

/// Per-agent control map composing tracking, the chain and decoupling.
#[derive(Debug, Clone)]
pub struct AgentController {
    pub variant: Variant,
    pub nf: Arc<NormalForm>,
    pub tracking: TrackingGains,
    pub observer: Option<ObserverGains>,
    pub chain: ChainLayout,
}

/// Derivatives produced by one controller evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u_tilde: Vec<f64>,
    pub chain_dot: Vec<f64>,
    pub observer_dot: Vec<f64>,
}

pub fn assemble_agent_controller(
    variant: Variant,
    nf: Arc<NormalForm>,
    tracking: TrackingGains,
    observer: Option<ObserverGains>,
) -> Result<AgentController> {
    if tracking.n != nf.n {
        return Err(Error::Config(format!(
            "tracking gains have order {}, plant needs n = {}",
            tracking.n, nf.n
        )));
    }
    let observer = match variant.feedback {
        Feedback::State => None,
        Feedback::Output => {
            let obs = observer
                .ok_or_else(|| Error::Config("output feedback needs observer gains".into()))?;
            if obs.n() != nf.n {
                return Err(Error::Config(format!(
                    "observer gains have order {}, plant needs n = {}",
                    obs.n(),
                    nf.n
                )));
            }
            let (ok, margin) = plant::is_minimum_phase(&nf, 0.0);
            if !ok {
                return Err(Error::Assumption {
                    assumption: crate::error::Assumption::MinimumPhaseRelativeDegree,
                    detail: format!("zero dynamics margin {margin:.3e} is not negative"),
                });
            }
            Some(obs)
        }
    };
    let chain = ChainLayout::new(&nf.r, nf.n)?;
    Ok(AgentController {
        variant,
        nf,
        tracking,
        observer,
        chain,
    })
}

impl AgentController {
    pub fn m(&self) -> usize {
        self.nf.m()
    }

    pub fn chain_dim(&self) -> usize {
        self.chain.dim()
    }

    pub fn observer_dim(&self) -> usize {
        match self.variant.feedback {
            Feedback::State => 0,
            Feedback::Output => self.nf.n * self.m() + self.nf.zero_dim(),
        }
    }

    /// True derivative stack: `chi_b` below the relative degree, chain above.
    pub fn true_stack(&self, chi_b: &[f64], chain: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut stack = vec![0.0; self.nf.n * m];
        for (iota, &ri) in self.nf.r.iter().enumerate() {
            for k in 0..self.nf.n {
                stack[k * m + iota] = if k < ri {
                    chi_b[self.nf.xi_index(iota, k + 1)]
                } else {
                    self.chain.get(chain, iota, k - ri)
                };
            }
        }
        stack
    }

    /// Observer state with zero estimation error for plant state `x`.
    pub fn exact_observer_state(&self, x: &[f64], chain: &[f64]) -> Vec<f64> {
        let (chi_a, chi_b) = self.nf.split(x);
        let mut obs = self.true_stack(&chi_b, chain);
        obs.extend(chi_a);
        obs
    }

    /// Full-state control law.
    pub fn state_feedback(&self, x: &[f64], chain: &[f64], z: &[f64]) -> ControlOutput {
        let (chi_a, chi_b) = self.nf.split(x);
        let stack = self.true_stack(&chi_b, chain);
        let m = self.m();
        let mut v = vec![0.0; m];
        tracking_control_into(&self.tracking, &stack, z, &mut v);
        let mut chain_dot = vec![0.0; self.chain_dim()];
        let mut u = vec![0.0; m];
        chain_rhs_into(&self.chain, chain, &v, &mut chain_dot, &mut u);
        let u_tilde = plant::decoupling_control(&self.nf, &chi_a, &chi_b, &u);
        ControlOutput {
            u_tilde,
            chain_dot,
            observer_dot: Vec::new(),
        }
    }

    /// Measured-output control law driven by the observer estimates.
    pub fn output_feedback(
        &self,
        y: &[f64],
        chain: &[f64],
        obs: &[f64],
        z: &[f64],
    ) -> ControlOutput {
        let gains = self
            .observer
            .as_ref()
            .expect("output feedback controller carries observer gains");
        let m = self.m();
        let n = self.nf.n;
        let chi_b_hat = chi_b_from_stack(&self.nf, &obs[..n * m]);
        let chi_a_hat = &obs[n * m..];
        let stack = self.true_stack(&chi_b_hat, chain);
        let mut v = vec![0.0; m];
        tracking_control_into(&self.tracking, &stack, z, &mut v);
        let mut chain_dot = vec![0.0; self.chain_dim()];
        let mut u = vec![0.0; m];
        chain_rhs_into(&self.chain, chain, &v, &mut chain_dot, &mut u);
        let u_tilde = plant::decoupling_control(&self.nf, chi_a_hat, &chi_b_hat, &u);
        let mut observer_dot = vec![0.0; obs.len()];
        observer_rhs_into(gains, &self.nf, obs, y, &v, &mut observer_dot);
        ControlOutput {
            u_tilde,
            chain_dot,
            observer_dot,
        }
    }
}
