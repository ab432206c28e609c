#![allow(dead_code)]

use optcons::sim::Trajectory;
use optcons::{scenario, ScenarioFile};

pub fn bundled(name: &str) -> ScenarioFile {
    let text = scenario::bundled(name).unwrap_or_else(|| panic!("no bundled scenario {name}"));
    scenario::parse_scenario(text).expect("bundled scenario parses")
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Arithmetic mean of the agents' outputs at sample 0.
pub fn mean_initial_output(tr: &Trajectory) -> Vec<f64> {
    let mut mean = vec![0.0; tr.m];
    for i in 0..tr.n_agents {
        for (s, v) in mean.iter_mut().zip(tr.y_i(0, i)) {
            *s += v / tr.n_agents as f64;
        }
    }
    mean
}

/// Largest distance between any agent's final output and `target`.
pub fn final_gap(tr: &Trajectory, target: &[f64]) -> f64 {
    let k = tr.len() - 1;
    (0..tr.n_agents)
        .map(|i| dist(tr.y_i(k, i), target))
        .fold(0.0, f64::max)
}

// Scalar parts of the five non-quadratic costs, written out independently of
// the library so that the minimizer can be cross-checked.
fn sqrt_ratio(t: f64, k: f64) -> f64 {
    t * t / (k * (t * t + 1.0).sqrt())
}

fn log_ratio(t: f64, k: f64) -> f64 {
    t * t / (k * (t * t + 2.0).ln())
}

fn log_cosh(t: f64) -> f64 {
    ((-0.05 * t).exp() + (0.05 * t).exp()).ln()
}

/// Total cost restricted to one coordinate; the sum is separable.
fn example2_component(t: f64, component: usize) -> f64 {
    let (p1, p3) = if component == 0 {
        (8.0, 5.0)
    } else {
        (1.0, 5.0)
    };
    let f1 = (t - p1) * (t - p1);
    let f2 = sqrt_ratio(t, 20.0) + t * t;
    let f3 = log_ratio(t, 80.0) + (t - p3) * (t - p3);
    let f4 = log_cosh(t) + t * t;
    let f5 = sqrt_ratio(t, 25.0) + t * t + t;
    f1 + f2 + f3 + f4 + f5
}

/// Minimizer of the second example's global cost by bisection on a
/// central-difference derivative of each separable component.
pub fn example2_oracle() -> Vec<f64> {
    (0..2)
        .map(|k| {
            let d = |t: f64| {
                let h = 1e-6;
                (example2_component(t + h, k) - example2_component(t - h, k)) / (2.0 * h)
            };
            let (mut lo, mut hi) = (-100.0, 100.0);
            assert!(d(lo) < 0.0 && d(hi) > 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if d(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Ordinary least squares of `ln(series)` against `times`: (slope, R^2).
pub fn log_fit(times: &[f64], series: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(series)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    (sty / stt, sty * sty / (stt * syy))
}
