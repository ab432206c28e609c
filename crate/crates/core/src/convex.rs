//! Local cost functions, gradient validation and a centralized minimizer.
//!
//! The minimizer is the reference for `y*`; the distributed generator never
//! calls it.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Convexity class a cost is declared to satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvexityClass {
    StrictlyConvex,
    /// `omega`-strongly convex with `lipschitz`-Lipschitz gradient.
    StronglyConvex {
        omega: f64,
        lipschitz: f64,
    },
}

impl ConvexityClass {
    pub fn is_strong(&self) -> bool {
        matches!(self, ConvexityClass::StronglyConvex { .. })
    }
}

/// A differentiable local objective `f_i : R^m -> R`.
pub trait CostFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64], out: &mut [f64]);
    fn class(&self) -> ConvexityClass;
    fn name(&self) -> String;

    fn gradient_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(y, &mut g);
        g
    }
}

pub type Cost = Arc<dyn CostFunction>;

/// `(w/2) ||y - p||^2`.
#[derive(Debug, Clone)]
pub struct QuadraticToPoint {
    pub point: Vec<f64>,
    pub weight: f64,
}

impl QuadraticToPoint {
    pub fn new(point: Vec<f64>) -> Self {
        Self { point, weight: 1.0 }
    }
}

impl CostFunction for QuadraticToPoint {
    fn dim(&self) -> usize {
        self.point.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        0.5 * self.weight
            * y.iter()
                .zip(&self.point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(y).zip(&self.point) {
            *o = self.weight * (a - b);
        }
    }

    fn class(&self) -> ConvexityClass {
        ConvexityClass::StronglyConvex {
            omega: self.weight,
            lipschitz: self.weight,
        }
    }

    fn name(&self) -> String {
        format!("quadratic_to_point{:?}", self.point)
    }
}

/// `(1/4) sum_k y_k^4 + b^T y`: strictly but not strongly convex.
#[derive(Debug, Clone)]
pub struct QuarticLinear {
    pub b: Vec<f64>,
}

impl CostFunction for QuarticLinear {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.b)
            .map(|(t, b)| 0.25 * t.powi(4) + b * t)
            .sum()
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        for ((o, t), b) in out.iter_mut().zip(y).zip(&self.b) {
            *o = t.powi(3) + b;
        }
    }

    fn class(&self) -> ConvexityClass {
        ConvexityClass::StrictlyConvex
    }

    fn name(&self) -> String {
        format!("quartic_linear{:?}", self.b)
    }
}

/// The five local costs of the second bundled example (two-dimensional).
#[derive(Debug, Clone)]
pub struct Example2Cost {
    index: usize,
    lipschitz: f64,
}

fn ratio_sqrt(t: f64, k: f64) -> (f64, f64) {
    // t^2 / (k sqrt(t^2 + 1))
    let s = (t * t + 1.0).sqrt();
    let v = t * t / (k * s);
    let d = t * (t * t + 2.0) / (k * s * s * s);
    (v, d)
}

fn ratio_log(t: f64, k: f64) -> (f64, f64) {
    // t^2 / (k ln(t^2 + 2))
    let q = t * t + 2.0;
    let l = q.ln();
    let v = t * t / (k * l);
    let d = (2.0 * t * l - 2.0 * t * t * t / q) / (k * l * l);
    (v, d)
}

fn log_cosh_pair(t: f64, a: f64) -> (f64, f64) {
    // ln(e^{-a t} + e^{a t}), evaluated without overflow
    let x = (a * t).abs();
    let v = x + (1.0 + (-2.0 * x).exp()).ln();
    (v, a * (a * t).tanh())
}

impl Example2Cost {
    /// `index` in 1..=5.
    pub fn new(index: usize) -> Result<Self> {
        if !(1..=5).contains(&index) {
            return Err(Error::Config(format!(
                "example2 cost index {index} not in 1..=5"
            )));
        }
        let mut c = Self {
            index,
            lipschitz: f64::NAN,
        };
        c.lipschitz = c.estimate_lipschitz(20.0, 4001);
        Ok(c)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Per-component scalar parts (value, derivative); the costs are separable
    /// apart from the linear term of f5.
    fn component(&self, t: f64, target: f64) -> (f64, f64) {
        let sq = ((t - target) * (t - target), 2.0 * (t - target));
        match self.index {
            1 => sq,
            2 => {
                let (v, d) = ratio_sqrt(t, 20.0);
                (v + sq.0, d + sq.1)
            }
            3 => {
                let (v, d) = ratio_log(t, 80.0);
                (v + sq.0, d + sq.1)
            }
            4 => {
                let (v, d) = log_cosh_pair(t, 0.05);
                (v + sq.0, d + sq.1)
            }
            5 => {
                let (v, d) = ratio_sqrt(t, 25.0);
                (v + sq.0 + t, d + sq.1 + 1.0)
            }
            _ => unreachable!(),
        }
    }

    fn targets(&self) -> [f64; 2] {
        match self.index {
            1 => [8.0, 1.0],
            3 => [5.0, 5.0],
            _ => [0.0, 0.0],
        }
    }

    /// Largest second derivative magnitude over a grid on `[-half, half]`,
    /// from central differences of the analytic derivative.
    fn estimate_lipschitz(&self, half: f64, samples: usize) -> f64 {
        let h = 1e-5;
        let targets = self.targets();
        let mut best = 0.0f64;
        for &tgt in &targets {
            for s in 0..samples {
                let t = -half + 2.0 * half * s as f64 / (samples - 1) as f64;
                let dp = self.component(t + h, tgt).1;
                let dm = self.component(t - h, tgt).1;
                best = best.max(((dp - dm) / (2.0 * h)).abs());
            }
        }
        best
    }
}

impl CostFunction for Example2Cost {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, y: &[f64]) -> f64 {
        let t = self.targets();
        self.component(y[0], t[0]).0 + self.component(y[1], t[1]).0
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        let t = self.targets();
        out[0] = self.component(y[0], t[0]).1;
        out[1] = self.component(y[1], t[1]).1;
    }

    fn class(&self) -> ConvexityClass {
        let omega = if self.index == 1 { 2.0 } else { 1.0 };
        ConvexityClass::StronglyConvex {
            omega,
            lipschitz: self.lipschitz,
        }
    }

    fn name(&self) -> String {
        format!("example2_f{}", self.index)
    }
}

/// Which bundled cost set to build.
#[derive(Debug, Clone)]
pub enum ExampleCosts {
    /// Rendezvous costs `(1/2)||y - y_i(0)||^2` from the initial outputs.
    Example1 {
        initials: Vec<Vec<f64>>,
    },
    Example2,
}

pub fn build_example_costs(which: &ExampleCosts) -> Result<Vec<Cost>> {
    match which {
        ExampleCosts::Example1 { initials } => Ok(initials
            .iter()
            .map(|p| Arc::new(QuadraticToPoint::new(p.clone())) as Cost)
            .collect()),
        ExampleCosts::Example2 => (1..=5)
            .map(|k| Example2Cost::new(k).map(|c| Arc::new(c) as Cost))
            .collect(),
    }
}

/// Maximum absolute deviation between central differences and the analytic
/// gradient over `points`.
pub fn grad_check(f: &dyn CostFunction, points: &[Vec<f64>], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let m = f.dim();
    let mut worst = 0.0f64;
    let mut g = vec![0.0; m];
    let mut probe = vec![0.0; m];
    for p in points {
        if p.len() != m {
            return Err(Error::Dimension(format!(
                "probe point has {} entries, cost has {m}",
                p.len()
            )));
        }
        f.gradient(p, &mut g);
        for k in 0..m {
            probe.copy_from_slice(p);
            probe[k] = p[k] + h;
            let fp = f.value(&probe);
            if !fp.is_finite() {
                return Err(Error::NonFiniteEval {
                    point: probe.clone(),
                });
            }
            probe[k] = p[k] - h;
            let fm = f.value(&probe);
            if !fm.is_finite() {
                return Err(Error::NonFiniteEval {
                    point: probe.clone(),
                });
            }
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs());
        }
    }
    Ok(worst)
}

pub fn total_value(costs: &[Cost], y: &[f64]) -> f64 {
    costs.iter().map(|c| c.value(y)).sum()
}

pub fn total_gradient(costs: &[Cost], y: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut g = vec![0.0; out.len()];
    for c in costs {
        c.gradient(y, &mut g);
        out.iter_mut().zip(&g).for_each(|(o, gi)| *o += gi);
    }
}

pub const MINIMIZE_MAX_ITERS: usize = 1_000_000;
const ARMIJO: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const INITIAL_STEP: f64 = 1.0;
const ROUNDOFF: f64 = 1e-10;

/// Gradient descent with Armijo backtracking on `sum_i f_i`, stopping once the
/// gradient norm is at most `tol`.
pub fn minimize_global(costs: &[Cost], x0: &[f64], tol: f64) -> Result<Vec<f64>> {
    let m = x0.len();
    if costs.is_empty() {
        return Err(Error::Config("no costs to minimize".into()));
    }
    if let Some(c) = costs.iter().find(|c| c.dim() != m) {
        return Err(Error::Dimension(format!(
            "cost {} has dimension {}, start point has {m}",
            c.name(),
            c.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut x = x0.to_vec();
    let mut g = vec![0.0; m];
    let mut gt = vec![0.0; m];
    let mut trial = vec![0.0; m];
    let mut fx = total_value(costs, &x);
    for _ in 0..MINIMIZE_MAX_ITERS {
        total_gradient(costs, &x, &mut g);
        let gg: f64 = g.iter().map(|a| a * a).sum();
        if gg.sqrt() <= tol {
            return Ok(x);
        }
        let mut step = INITIAL_STEP;
        loop {
            for k in 0..m {
                trial[k] = x[k] - step * g[k];
            }
            let ft = total_value(costs, &trial);
            let mut decrease = fx - ft;
            if decrease.abs() <= ROUNDOFF * fx.abs().max(1.0) {
                // value differences are lost in roundoff; estimate the
                // decrease by the trapezoid rule on the directional derivative
                total_gradient(costs, &trial, &mut gt);
                let gtg: f64 = gt.iter().zip(&g).map(|(a, b)| a * b).sum();
                decrease = 0.5 * step * (gg + gtg);
            }
            if decrease >= ARMIJO * step * gg || step < 1e-20 {
                std::mem::swap(&mut x, &mut trial);
                fx = ft;
                break;
            }
            step *= SHRINK;
        }
    }
    total_gradient(costs, &x, &mut g);
    Err(Error::NotConverged {
        iterations: MINIMIZE_MAX_ITERS,
        grad_norm: g.iter().map(|a| a * a).sum::<f64>().sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex2() -> Vec<Cost> {
        build_example_costs(&ExampleCosts::Example2).unwrap()
    }

    #[test]
    fn quadratic_grad_check_is_exact() {
        let f = QuadraticToPoint::new(vec![0.0, 0.0]);
        let err = grad_check(&f, &[vec![1.0, 2.0]], 1e-4).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn example2_point_values() {
        let c = ex2();
        assert_eq!(c[0].value(&[8.0, 1.0]), 0.0);
        let want = 2.0 * 2f64.ln();
        assert!((c[3].value(&[0.0, 0.0]) - want).abs() < 1e-15);
        assert_eq!(c[4].gradient_vec(&[0.0, 0.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn log_cosh_is_overflow_safe() {
        let c = Example2Cost::new(4).unwrap();
        let v = c.value(&[1e5, -1e5]);
        assert!(v.is_finite());
        let direct = (1.0 + (-2.0f64 * 3.0).exp()).ln() + 3.0;
        let (got, _) = log_cosh_pair(60.0, 0.05);
        assert!((got - direct).abs() < 1e-14);
    }

    #[test]
    fn single_quadratic_minimizer_is_center() {
        let c: Vec<Cost> = vec![Arc::new(QuadraticToPoint::new(vec![0.0, 0.0]))];
        let y = minimize_global(&c, &[7.0, -3.0], 1e-12).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rendezvous_minimizer_is_average() {
        let initials = vec![
            vec![1.0, 2.0],
            vec![-3.0, 4.0],
            vec![5.5, -6.0],
            vec![0.0, 9.0],
            vec![-8.0, -1.5],
        ];
        let c = build_example_costs(&ExampleCosts::Example1 {
            initials: initials.clone(),
        })
        .unwrap();
        let y = minimize_global(&c, &[0.0, 0.0], 1e-12).unwrap();
        for k in 0..2 {
            let avg: f64 = initials.iter().map(|p| p[k]).sum::<f64>() / 5.0;
            assert!((y[k] - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn example2_minimizer_near_reported_values() {
        let y = minimize_global(&ex2(), &[0.0, 0.0], 1e-10).unwrap();
        let d = ((y[0] - 2.5).powi(2) + (y[1] - 1.1).powi(2)).sqrt();
        assert!(d <= 0.05, "{y:?}");
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let c: Vec<Cost> = vec![Arc::new(QuadraticToPoint::new(vec![0.0; 3]))];
        assert!(matches!(
            minimize_global(&c, &[0.0, 0.0], 1e-6),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn non_finite_probe_is_reported() {
        #[derive(Debug)]
        struct Bad;
        impl CostFunction for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, y: &[f64]) -> f64 {
                if y[0] > 0.5 {
                    f64::NAN
                } else {
                    y[0]
                }
            }
            fn gradient(&self, _y: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
            }
            fn class(&self) -> ConvexityClass {
                ConvexityClass::StrictlyConvex
            }
            fn name(&self) -> String {
                "bad".into()
            }
        }
        let e = grad_check(&Bad, &[vec![0.5]], 1e-4).unwrap_err();
        assert!(matches!(e, Error::NonFiniteEval { .. }));
    }

    #[test]
    fn example2_lipschitz_estimates_are_sane() {
        for c in ex2() {
            match c.class() {
                ConvexityClass::StronglyConvex { omega, lipschitz } => {
                    assert!((2.0..2.2).contains(&lipschitz), "{} {lipschitz}", c.name());
                    assert!(omega <= lipschitz);
                }
                _ => panic!("example2 costs are declared strongly convex"),
            }
        }
    }
}
