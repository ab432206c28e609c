//! Distributed primal-dual optimal signal generator and a small testbed for
//! the passivity-type stability lemma behind it.

use nalgebra::DMatrix;

use crate::convex::Cost;
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::linalg;

/// Agent-major `(z, lambda)`, each `N * m` long.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub n_agents: usize,
    pub dim: usize,
}

impl GeneratorState {
    pub fn new(z: Vec<f64>, lambda: Vec<f64>, n_agents: usize, dim: usize) -> Result<Self> {
        if z.len() != n_agents * dim || lambda.len() != n_agents * dim {
            return Err(Error::Dimension(format!(
                "generator state needs {} entries per block, got z={} lambda={}",
                n_agents * dim,
                z.len(),
                lambda.len()
            )));
        }
        Ok(Self {
            z,
            lambda,
            n_agents,
            dim,
        })
    }

    pub fn zeros(n_agents: usize, dim: usize) -> Self {
        Self {
            z: vec![0.0; n_agents * dim],
            lambda: vec![0.0; n_agents * dim],
            n_agents,
            dim,
        }
    }

    pub fn z_i(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lambda_i(&self, i: usize) -> &[f64] {
        &self.lambda[i * self.dim..(i + 1) * self.dim]
    }

    /// `sum_i lambda_i`.
    pub fn lambda_sum(&self) -> Vec<f64> {
        block_sum(&self.lambda, self.dim)
    }
}

pub(crate) fn block_sum(v: &[f64], dim: usize) -> Vec<f64> {
    let mut s = vec![0.0; dim];
    for chunk in v.chunks(dim) {
        s.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
    }
    s
}

/// Where the local gradients are evaluated.
#[derive(Debug, Clone, Copy)]
pub enum GradientMode<'a> {
    /// `grad f_i(z_i)`.
    Exact,
    /// `grad f_i(y_i)` with agent-major plant outputs.
    Realtime(&'a [f64]),
}

fn check_shapes(s: &GeneratorState, g: &WeightedGraph, costs: &[Cost]) -> Result<()> {
    if g.n_nodes() != s.n_agents || costs.len() != s.n_agents {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, state {} agents, {} costs",
            g.n_nodes(),
            s.n_agents,
            costs.len()
        )));
    }
    if let Some((i, _)) = costs.iter().enumerate().find(|(_, c)| c.dim() != s.dim) {
        return Err(Error::Dimension(format!(
            "cost {} has dimension != {}",
            i + 1,
            s.dim
        )));
    }
    Ok(())
}

/// `z_i' = -grad f_i(.) - sum_j a_ij (lambda_i - lambda_j)`,
/// `lambda_i' = sum_j a_ij (z_i - z_j)`.
pub fn generator_rhs(
    s: &GeneratorState,
    g: &WeightedGraph,
    costs: &[Cost],
    mode: GradientMode<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(s, g, costs)?;
    let at = match mode {
        GradientMode::Exact => &s.z[..],
        GradientMode::Realtime(y) => {
            if y.len() != s.z.len() {
                return Err(Error::Dimension(format!(
                    "realtime gradient needs {} outputs, got {}",
                    s.z.len(),
                    y.len()
                )));
            }
            y
        }
    };
    let mut zd = vec![0.0; s.z.len()];
    let mut ld = vec![0.0; s.z.len()];
    for i in 0..s.n_agents {
        let r = i * s.dim..(i + 1) * s.dim;
        agent_rhs(
            i,
            g,
            &costs[i],
            &s.z,
            &s.lambda,
            &at[r.clone()],
            s.dim,
            &mut zd[r.clone()],
            &mut ld[r],
        )?;
    }
    Ok((zd, ld))
}

/// One agent's generator derivative; `grad_at` is the point fed to `grad f_i`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn agent_rhs(
    i: usize,
    g: &WeightedGraph,
    cost: &Cost,
    z: &[f64],
    lambda: &[f64],
    grad_at: &[f64],
    dim: usize,
    zd: &mut [f64],
    ld: &mut [f64],
) -> Result<()> {
    cost.gradient(grad_at, zd);
    if zd.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient {
            agent: i + 1,
            point: grad_at.to_vec(),
        });
    }
    zd.iter_mut().for_each(|v| *v = -*v);
    ld.iter_mut().for_each(|v| *v = 0.0);
    for (j, w) in g.neighbors(i) {
        for k in 0..dim {
            zd[k] -= w * (lambda[i * dim + k] - lambda[j * dim + k]);
            ld[k] += w * (z[i * dim + k] - z[j * dim + k]);
        }
    }
    Ok(())
}

fn laplacian_apply(g: &WeightedGraph, v: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in 0..g.n_nodes() {
        for (j, w) in g.neighbors(i) {
            for k in 0..dim {
                out[i * dim + k] += w * (v[i * dim + k] - v[j * dim + k]);
            }
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||grad f(z) + (L x I) lambda|| + ||(L x I) z||`.
pub fn generator_equilibrium_residual(
    s: &GeneratorState,
    g: &WeightedGraph,
    costs: &[Cost],
) -> Result<f64> {
    check_shapes(s, g, costs)?;
    let mut first = laplacian_apply(g, &s.lambda, s.dim);
    let mut grad = vec![0.0; s.dim];
    for i in 0..s.n_agents {
        costs[i].gradient(s.z_i(i), &mut grad);
        for k in 0..s.dim {
            first[i * s.dim + k] += grad[k];
        }
    }
    Ok(norm(&first) + norm(&laplacian_apply(g, &s.z, s.dim)))
}

/// Scalar-or-vector nonlinearity `phi` for the testbed.
pub type Phi = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `x' = -phi(x) - S z`, `z' = S^T x + T z` with `T + T^T <= 0`.
pub struct Lemma2Testbed {
    phi: Phi,
    s: DMatrix<f64>,
    t: DMatrix<f64>,
}

impl std::fmt::Debug for Lemma2Testbed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lemma2Testbed")
            .field("s", &self.s)
            .field("t", &self.t)
            .finish_non_exhaustive()
    }
}

impl Lemma2Testbed {
    pub fn new(phi: Phi, s: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        let nx = s.nrows();
        let nz = s.ncols();
        if t.nrows() != nz || t.ncols() != nz {
            return Err(Error::Config(format!(
                "T must be {nz}x{nz}, got {}x{}",
                t.nrows(),
                t.ncols()
            )));
        }
        let sym = &t + t.transpose();
        let top = linalg::symmetric_eigenvalues(&sym, 1e-14)
            .last()
            .copied()
            .unwrap_or(0.0);
        if top > 1e-12 {
            return Err(Error::Config(format!(
                "T + T^T must be negative semidefinite, has eigenvalue {top:.3e}"
            )));
        }
        let mut at0 = vec![0.0; nx];
        phi(&vec![0.0; nx], &mut at0);
        if at0.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Config("phi(0) must vanish".into()));
        }
        Ok(Self { phi, s, t })
    }

    pub fn nx(&self) -> usize {
        self.s.nrows()
    }

    pub fn nz(&self) -> usize {
        self.s.ncols()
    }

    pub fn rhs(&self, x: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut xd = vec![0.0; self.nx()];
        (self.phi)(x, &mut xd);
        for i in 0..self.nx() {
            let sz: f64 = (0..self.nz()).map(|j| self.s[(i, j)] * z[j]).sum();
            xd[i] = -xd[i] - sz;
        }
        let mut zd = vec![0.0; self.nz()];
        for (j, d) in zd.iter_mut().enumerate() {
            let stx: f64 = (0..self.nx()).map(|i| self.s[(i, j)] * x[i]).sum();
            let tz: f64 = (0..self.nz()).map(|k| self.t[(j, k)] * z[k]).sum();
            *d = stx + tz;
        }
        (xd, zd)
    }
}

/// Free-function form of [`Lemma2Testbed::rhs`] that validates on every call.
pub fn lemma2_testbed_rhs(
    x: &[f64],
    z: &[f64],
    phi: Phi,
    s: DMatrix<f64>,
    t: DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tb = Lemma2Testbed::new(phi, s, t)?;
    if x.len() != tb.nx() || z.len() != tb.nz() {
        return Err(Error::Dimension("testbed state does not match S".into()));
    }
    Ok(tb.rhs(x, z))
}
