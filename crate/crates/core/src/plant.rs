//! LTI agent models, vector relative degree and the normal-form transformation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Default absolute tolerance on Markov parameters (max-norm).
pub const MARKOV_TOL: f64 = 1e-9;
/// Tolerance for `psi * B = 0`.
pub const COMPLEMENT_TOL: f64 = 1e-12;
/// Tolerance for the normal-form round trip.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;

/// `x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        if k == 0 || a.ncols() != k {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != k || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {k}xm, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        let m = b.ncols();
        if c.nrows() != m || c.ncols() != k {
            return Err(Error::Dimension(format!(
                "C must be {m}x{k} (square input-output), got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if a.iter()
            .chain(b.iter())
            .chain(c.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Dimension(
                "plant matrices contain non-finite entries".into(),
            ));
        }
        Ok(Self { a, b, c })
    }

    /// Build from row-major nested vectors.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>], c: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            matrix_from_rows(a)?,
            matrix_from_rows(b)?,
            matrix_from_rows(c)?,
        )
    }

    /// `m` decoupled double integrators: position outputs, acceleration inputs.
    pub fn double_integrator(m: usize) -> Self {
        let k = 2 * m;
        let mut a = DMatrix::zeros(k, k);
        let mut b = DMatrix::zeros(k, m);
        let mut c = DMatrix::zeros(m, k);
        for i in 0..m {
            a[(i, m + i)] = 1.0;
            b[(m + i, i)] = 1.0;
            c[(i, i)] = 1.0;
        }
        Self { a, b, c }
    }

    /// The fourth-order, two-input plant of the second example.
    pub fn example2() -> Self {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.1, 0.1, -2.5, 0.5, //
                0.0, -0.4, 0.0, -1.5, //
                2.0, 0.0, 0.0, -1.0, //
                0.0, 0.2, 1.0, 0.8,
            ],
        );
        let b = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        Self { a, b, c }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "double_integrator_2d" => Some(Self::double_integrator(2)),
            "example2" => Some(Self::example2()),
            _ => None,
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// State dimension.
    pub fn kappa(&self) -> usize {
        self.a.nrows()
    }

    /// Number of inputs (= outputs).
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn output(&self, x: &[f64], y: &mut [f64]) {
        mat_vec(&self.c, x, y);
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged matrix literal".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// `out = M x` without allocation.
pub(crate) fn mat_vec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, xj) in x.iter().enumerate() {
            s += m[(i, j)] * xj;
        }
        *o = s;
    }
}

/// `A x + B u`.
pub fn plant_rhs(p: &LtiPlant, x: &[f64], u_tilde: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.kappa()];
    plant_rhs_into(p, x, u_tilde, &mut out);
    out
}

pub(crate) fn plant_rhs_into(p: &LtiPlant, x: &[f64], u_tilde: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, xj) in x.iter().enumerate() {
            s += p.a[(i, j)] * xj;
        }
        for (j, uj) in u_tilde.iter().enumerate() {
            s += p.b[(i, j)] * uj;
        }
        *o = s;
    }
}

/// Per-output relative degrees and the decoupling matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeDegree {
    pub r: Vec<usize>,
    pub decoupling: DMatrix<f64>,
}

pub fn vector_relative_degree(p: &LtiPlant, tol: f64) -> Result<RelativeDegree> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "relative-degree tolerance must be positive, got {tol}"
        )));
    }
    let kappa = p.kappa();
    let m = p.m();
    let mut r = Vec::with_capacity(m);
    let mut dec = DMatrix::zeros(m, m);
    for iota in 0..m {
        // row C_iota A^k, advanced one power at a time
        let mut row = p.c.row(iota).clone_owned();
        let mut found = None;
        for k in 0..kappa {
            let markov = &row * &p.b;
            if markov.amax() > tol {
                found = Some((k + 1, markov));
                break;
            }
            row = &row * &p.a;
        }
        match found {
            Some((rk, markov)) => {
                r.push(rk);
                dec.row_mut(iota).copy_from(&markov);
            }
            None => {
                return Err(Error::NoRelativeDegree {
                    output: iota + 1,
                    kappa,
                })
            }
        }
    }
    let ratio = linalg::pivot_ratio(&dec);
    if ratio < linalg::PIVOT_RATIO_TOL {
        return Err(Error::SingularDecoupling { ratio });
    }
    Ok(RelativeDegree { r, decoupling: dec })
}

/// Plant in coordinates `chi = T x = (chi_a, chi_b)`, where `chi_b` stacks
/// `xi_{iota,j} = C_iota A^{j-1} x` channel by channel.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub r: Vec<usize>,
    pub n: usize,
    pub decoupling: DMatrix<f64>,
    pub decoupling_inv: DMatrix<f64>,
    pub transform: DMatrix<f64>,
    pub transform_inv: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Offsets of each channel's chain inside `chi_b`.
    chain_offsets: Vec<usize>,
}

impl NormalForm {
    /// Dimension of the zero dynamics.
    pub fn zero_dim(&self) -> usize {
        self.pi.nrows()
    }

    /// `sum r_iota`.
    pub fn chain_dim(&self) -> usize {
        self.r.iter().sum()
    }

    pub fn kappa(&self) -> usize {
        self.transform.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.len()
    }

    /// Index of `xi_{iota,j}` in `chi_b` (`iota` zero-based, `j` one-based).
    pub fn xi_index(&self, iota: usize, j: usize) -> usize {
        self.chain_offsets[iota] + j - 1
    }

    /// `(chi_a, chi_b)` from an original-coordinate state.
    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut chi = vec![0.0; self.kappa()];
        mat_vec(&self.transform, x, &mut chi);
        let chi_b = chi.split_off(self.zero_dim());
        (chi, chi_b)
    }

    /// Original-coordinate state from `(chi_a, chi_b)`.
    pub fn join(&self, chi_a: &[f64], chi_b: &[f64]) -> Vec<f64> {
        let chi: Vec<f64> = chi_a.iter().chain(chi_b).copied().collect();
        let mut x = vec![0.0; self.kappa()];
        mat_vec(&self.transform_inv, &chi, &mut x);
        x
    }

    /// Normal-form vector field driven by the physical input `u_tilde`.
    pub fn rhs(&self, chi_a: &[f64], chi_b: &[f64], u_tilde: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let na = self.zero_dim();
        let mut da = vec![0.0; na];
        for (i, d) in da.iter_mut().enumerate() {
            *d = dot_row(&self.pi, i, chi_a) + dot_row(&self.psi, i, chi_b);
        }
        let mut db = vec![0.0; chi_b.len()];
        for (iota, &ri) in self.r.iter().enumerate() {
            for j in 1..ri {
                db[self.xi_index(iota, j)] = chi_b[self.xi_index(iota, j + 1)];
            }
            db[self.xi_index(iota, ri)] = dot_row(&self.upsilon, iota, chi_a)
                + dot_row(&self.s, iota, chi_b)
                + dot_row(&self.decoupling, iota, u_tilde);
        }
        (da, db)
    }

    /// Original-coordinate matrices rebuilt from the normal-form blocks.
    pub fn reconstruct(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let k = self.kappa();
        let na = self.zero_dim();
        let m = self.m();
        let mut abar = DMatrix::zeros(k, k);
        let mut bbar = DMatrix::zeros(k, m);
        let mut cbar = DMatrix::zeros(m, k);
        abar.view_mut((0, 0), (na, na)).copy_from(&self.pi);
        abar.view_mut((0, na), (na, k - na)).copy_from(&self.psi);
        for (iota, &ri) in self.r.iter().enumerate() {
            for j in 1..ri {
                abar[(na + self.xi_index(iota, j), na + self.xi_index(iota, j + 1))] = 1.0;
            }
            let row = na + self.xi_index(iota, ri);
            abar.view_mut((row, 0), (1, na))
                .copy_from(&self.upsilon.row(iota));
            abar.view_mut((row, na), (1, k - na))
                .copy_from(&self.s.row(iota));
            bbar.row_mut(row).copy_from(&self.decoupling.row(iota));
            cbar[(iota, na + self.xi_index(iota, 1))] = 1.0;
        }
        let a = &self.transform_inv * abar * &self.transform;
        let b = &self.transform_inv * bbar;
        let c = cbar * &self.transform;
        (a, b, c)
    }
}

fn dot_row(m: &DMatrix<f64>, i: usize, x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(j, v)| m[(i, j)] * v).sum()
}

/// Compute the normal form, optionally with user-supplied complement rows `psi`.
pub fn normal_form(p: &LtiPlant, complement: Option<&DMatrix<f64>>) -> Result<NormalForm> {
    let rd = vector_relative_degree(p, MARKOV_TOL)?;
    let kappa = p.kappa();
    let m = p.m();
    let rsum: usize = rd.r.iter().sum();
    if rsum > kappa {
        return Err(Error::NormalForm(format!(
            "sum of relative degrees {rsum} exceeds state dimension {kappa}"
        )));
    }
    let na = kappa - rsum;

    let mut xi_rows: Vec<DVector<f64>> = Vec::with_capacity(rsum);
    let mut chain_offsets = Vec::with_capacity(m);
    for (iota, &ri) in rd.r.iter().enumerate() {
        chain_offsets.push(xi_rows.len());
        let mut row = p.c.row(iota).clone_owned();
        for _ in 0..ri {
            xi_rows.push(row.transpose());
            row = &row * &p.a;
        }
    }

    let b_scale = p.b.amax().max(1.0);
    let psi_rows: Vec<DVector<f64>> = match complement {
        Some(psi) => {
            if psi.nrows() != na || psi.ncols() != kappa {
                return Err(Error::InvalidComplement(format!(
                    "expected {na}x{kappa} complement rows, got {}x{}",
                    psi.nrows(),
                    psi.ncols()
                )));
            }
            let pb = psi * &p.b;
            if pb.amax() > COMPLEMENT_TOL * b_scale {
                return Err(Error::InvalidComplement(format!(
                    "psi*B has entry of size {:.3e}",
                    pb.amax()
                )));
            }
            psi.row_iter().map(|r| r.transpose()).collect()
        }
        None => select_complement(&p.b, &xi_rows, na)?,
    };

    let t_rows: Vec<DVector<f64>> = psi_rows.iter().chain(&xi_rows).cloned().collect();
    let t = DMatrix::from_fn(kappa, kappa, |i, j| t_rows[i][j]);
    let ratio = linalg::pivot_ratio(&t);
    if ratio < linalg::PIVOT_RATIO_TOL {
        return Err(if complement.is_some() {
            Error::InvalidComplement(format!(
                "stacked transform is singular (pivot ratio {ratio:.3e})"
            ))
        } else {
            Error::ComplementNotFound
        });
    }
    let t_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NormalForm("transform inversion failed".into()))?;

    let abar = &t * &p.a * &t_inv;
    let bbar = &t * &p.b;
    let pi = abar.view((0, 0), (na, na)).clone_owned();
    let psi = abar.view((0, na), (na, rsum)).clone_owned();
    let mut upsilon = DMatrix::zeros(m, na);
    let mut s = DMatrix::zeros(m, rsum);
    for (iota, &ri) in rd.r.iter().enumerate() {
        let row = na + chain_offsets[iota] + ri - 1;
        upsilon
            .row_mut(iota)
            .copy_from(&abar.view((row, 0), (1, na)));
        s.row_mut(iota).copy_from(&abar.view((row, na), (1, rsum)));
    }

    let decoupling_inv = rd
        .decoupling
        .clone()
        .try_inverse()
        .ok_or(Error::SingularDecoupling { ratio: 0.0 })?;

    let nf = NormalForm {
        n: rd.r.iter().copied().max().unwrap_or(0),
        r: rd.r,
        decoupling: rd.decoupling,
        decoupling_inv,
        transform: t,
        transform_inv: t_inv,
        pi,
        psi,
        upsilon,
        s,
        chain_offsets,
    };

    // the chain structure and input pattern must come out exactly as assumed
    let scale = p.a.amax().max(p.b.amax()).max(1.0);
    let mut bexpect = DMatrix::zeros(kappa, m);
    for (iota, &ri) in nf.r.iter().enumerate() {
        bexpect
            .row_mut(na + nf.xi_index(iota, ri))
            .copy_from(&nf.decoupling.row(iota));
    }
    let berr = (&bbar - bexpect).amax();
    if berr > RECONSTRUCTION_TOL * scale {
        return Err(Error::NormalForm(format!(
            "transformed input matrix off pattern by {berr:.3e}"
        )));
    }
    let (a2, b2, c2) = nf.reconstruct();
    let err = (a2 - &p.a)
        .amax()
        .max((b2 - &p.b).amax())
        .max((c2 - &p.c).amax());
    if err > RECONSTRUCTION_TOL * scale {
        return Err(Error::NormalForm(format!(
            "round-trip reconstruction error {err:.3e}"
        )));
    }
    Ok(nf)
}

/// Greedy pick of left-null-space vectors of `B` that keep the stacked rows
/// linearly independent.
fn select_complement(
    b: &DMatrix<f64>,
    xi_rows: &[DVector<f64>],
    na: usize,
) -> Result<Vec<DVector<f64>>> {
    if na == 0 {
        return Ok(Vec::new());
    }
    let kappa = b.nrows();
    let candidates = linalg::left_null_space(b, COMPLEMENT_TOL);
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(na);
    for cand in candidates {
        let rows: Vec<&DVector<f64>> = xi_rows
            .iter()
            .chain(&chosen)
            .chain(std::iter::once(&cand))
            .collect();
        let stacked = DMatrix::from_fn(rows.len(), kappa, |i, j| rows[i][j]);
        if linalg::rank(&stacked, linalg::PIVOT_RATIO_TOL) == rows.len() {
            chosen.push(cand);
            if chosen.len() == na {
                return Ok(chosen);
            }
        }
    }
    Err(Error::ComplementNotFound)
}

/// Minimum-phase verdict and the spectral margin `max Re eig(Pi)`.
pub fn is_minimum_phase(nf: &NormalForm, margin_tol: f64) -> (bool, f64) {
    if nf.zero_dim() == 0 {
        return (true, f64::NEG_INFINITY);
    }
    let margin = linalg::eigenvalues(&nf.pi)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    (margin < -margin_tol, margin)
}

/// `u_tilde = R^{-1} (-Upsilon chi_a - S chi_b + u)`.
pub fn decoupling_control(nf: &NormalForm, chi_a: &[f64], chi_b: &[f64], u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; nf.m()];
    decoupling_control_into(nf, chi_a, chi_b, u, &mut out);
    out
}

pub(crate) fn decoupling_control_into(
    nf: &NormalForm,
    chi_a: &[f64],
    chi_b: &[f64],
    u: &[f64],
    out: &mut [f64],
) {
    let w: Vec<f64> = (0..nf.m())
        .map(|iota| u[iota] - dot_row(&nf.upsilon, iota, chi_a) - dot_row(&nf.s, iota, chi_b))
        .collect();
    mat_vec(&nf.decoupling_inv, &w, out);
}
