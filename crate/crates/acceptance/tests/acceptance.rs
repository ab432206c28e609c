//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fail.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use optcons::controller::{self, ChainLayout, ObserverGains, TrackingGains};
use optcons::convex::{self, Example2Cost, QuadraticToPoint, QuarticLinear};
use optcons::generator::{GeneratorState, Lemma2Testbed};
use optcons::plant::{self, LtiPlant};
use optcons::sim::{self, InitMode, Simulation};
use optcons::{Cost, Feedback, Trajectory, WeightedGraph};

use common::{bundled, dist, final_gap, log_fit, mean_initial_output, norm};

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn check(&mut self, id: &str, label: &str, pass: bool, detail: String) {
        println!(
            "[{}] {id} {label}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn lambda_drift(tr: &Trajectory) -> f64 {
    let first = tr.lambda_sum(0);
    (0..tr.len())
        .map(|k| dist(&tr.lambda_sum(k), &first))
        .fold(0.0, f64::max)
}

fn criterion_1(r: &mut Report) -> Trajectory {
    let sf = bundled("example1");
    let started = Instant::now();
    let tr = sim::run(&sf.scenario).expect("example 1 runs");
    let wall = started.elapsed().as_secs_f64();
    let gap = final_gap(&tr, &mean_initial_output(&tr));
    r.check(
        "1",
        "rendezvous at the mean initial output",
        gap <= 1e-3 && !tr.diverged(),
        format!("max_i |y_i(20) - mean y(0)| = {gap:.3e} (tol 1e-3)"),
    );
    r.check(
        "1",
        "runtime",
        wall <= 10.0,
        format!("{wall:.2} s (limit 10 s)"),
    );
    tr
}

fn criterion_2(r: &mut Report) -> Trajectory {
    let oracle = common::example2_oracle();
    let sf = bundled("example2_eps1");
    let tr = sim::run(&sf.scenario).expect("example 2 runs");
    let gap = if tr.diverged() {
        f64::INFINITY
    } else {
        final_gap(&tr, &oracle)
    };
    r.check(
        "2",
        "output feedback with realtime gradients at eps = 1",
        gap <= 1e-2,
        format!(
            "max_i |y_i(50) - y*| = {gap:.3e} (tol 1e-2), y* = ({:.6}, {:.6})",
            oracle[0], oracle[1]
        ),
    );
    let off = dist(&oracle, &[2.5, 1.1]);
    r.check(
        "2",
        "oracle optimum near (2.5, 1.1)",
        off <= 0.05,
        format!("distance {off:.4} (tol 0.05)"),
    );
    tr
}

fn generator_gap(states: &[GeneratorState], y_star: &[f64]) -> Vec<f64> {
    states
        .iter()
        .map(|s| {
            (0..s.n_agents)
                .map(|i| dist(s.z_i(i), y_star))
                .fold(0.0, f64::max)
        })
        .collect()
}

fn criterion_3(r: &mut Report) {
    let sf = bundled("example1");
    let simulation = Simulation::new(&sf.scenario).unwrap();
    let net = simulation.network();
    let init = net.generator_state(simulation.initial_state());
    let y0 = net.outputs(simulation.initial_state());
    let y_star: Vec<f64> = (0..2)
        .map(|k| (0..5).map(|i| y0[2 * i + k]).sum::<f64>() / 5.0)
        .collect();
    let (times, states) =
        sim::run_generator(net.graph(), simulation.costs(), &init, 1e-3, 50.0, 100).unwrap();
    let gap = generator_gap(&states, &y_star);
    let last = *gap.last().unwrap();
    let fit = sim::exp_rate_fit(&times, &gap, (0.0, 50.0)).unwrap();
    r.check(
        "3",
        "generator alone, strongly convex costs",
        last <= 1e-6 && fit.slope < 0.0 && fit.r_squared >= 0.99,
        format!(
            "gap(50) = {last:.3e} (tol 1e-6), slope {:.4}, R^2 {:.4} (min 0.99)",
            fit.slope, fit.r_squared
        ),
    );

    let b = [
        [1.0, -2.0],
        [-3.0, 0.5],
        [2.0, 1.0],
        [-0.5, -1.5],
        [1.5, 4.0],
    ];
    let costs: Vec<Cost> = b
        .iter()
        .map(|b| Arc::new(QuarticLinear { b: b.to_vec() }) as Cost)
        .collect();
    let y_star: Vec<f64> = (0..2)
        .map(|k| (-b.iter().map(|v| v[k]).sum::<f64>() / 5.0).cbrt())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..=5.0)).collect();
    let init = GeneratorState::new(z, vec![0.0; 10], 5, 2).unwrap();
    let (_, states) = sim::run_generator(
        &WeightedGraph::five_node(),
        &costs,
        &init,
        1e-3,
        200.0,
        1000,
    )
    .unwrap();
    let last = *generator_gap(&states, &y_star).last().unwrap();
    r.check(
        "3",
        "generator alone, strictly convex quartic costs",
        last <= 1e-3,
        format!("gap(200) = {last:.3e} (tol 1e-3)"),
    );
}

fn matrix_eq(a: &DMatrix<f64>, rows: &[&[f64]], tol: f64) -> bool {
    a.nrows() == rows.len()
        && rows.iter().enumerate().all(|(i, row)| {
            row.len() == a.ncols()
                && row
                    .iter()
                    .enumerate()
                    .all(|(j, v)| (a[(i, j)] - v).abs() <= tol)
        })
}

fn sorted_spectrum(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = m
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn criterion_4(r: &mut Report) {
    let di =
        plant::vector_relative_degree(&LtiPlant::double_integrator(2), plant::MARKOV_TOL).unwrap();
    let ex2 = plant::vector_relative_degree(&LtiPlant::example2(), plant::MARKOV_TOL).unwrap();
    let ok = di.r == [2, 2]
        && di.decoupling == DMatrix::identity(2, 2)
        && ex2.r == [2, 1]
        && ex2.decoupling == DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
    r.check(
        "4",
        "vector relative degree and decoupling matrix",
        ok,
        format!(
            "r = {:?} / {:?}, R rows = {:?}",
            di.r,
            ex2.r,
            ex2.decoupling.transpose().as_slice()
        ),
    );

    let psi = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 0.0, -1.0]);
    let nf = plant::normal_form(&LtiPlant::example2(), Some(&psi)).unwrap();
    let tol = 1e-9;
    let ok = matrix_eq(&nf.pi, &[&[-0.5]], tol)
        && matrix_eq(&nf.psi, &[&[-3.5, 0.3, -2.0]], tol)
        && matrix_eq(&nf.upsilon, &[&[0.0], &[0.2]], tol)
        && matrix_eq(&nf.s, &[&[-6.0, 0.1, 0.3], &[1.0, -0.1, 0.9]], tol);
    r.check(
        "4",
        "normal form blocks with the given complement",
        ok,
        format!(
            "Pi {:?}, Psi {:?}, Upsilon {:?}",
            nf.pi.as_slice(),
            nf.psi.transpose().as_slice(),
            nf.upsilon.as_slice()
        ),
    );

    let auto = plant::normal_form(&LtiPlant::example2(), None).unwrap();
    let (a, b) = (sorted_spectrum(&nf.pi), sorted_spectrum(&auto.pi));
    let ok = a.len() == b.len()
        && a.iter()
            .zip(&b)
            .all(|(p, q)| (p.0 - q.0).abs() <= tol && (p.1 - q.1).abs() <= tol);
    r.check(
        "4",
        "zero dynamics spectrum under the automatic complement",
        ok,
        format!("{a:?} vs {b:?}"),
    );
}

/// Error of one RK4 run of `x'' = -x` from (1, 0) to t = 1.
fn oscillator_error(h: f64) -> f64 {
    let mut x = vec![1.0, 0.0];
    let steps = (1.0 / h).round() as usize;
    let mut rk = sim::Rk4::new(2);
    for k in 0..steps {
        rk.step(
            |_, s, d| {
                d[0] = s[1];
                d[1] = -s[0];
                Ok(())
            },
            k as f64 * h,
            &mut x,
            h,
        )
        .unwrap();
    }
    dist(&x, &[1f64.cos(), -1f64.sin()])
}

/// Stack estimation error of a single Example 2 agent whose precompensated
/// plant is driven by true-state tracking of the origin.
fn observer_error_series(l: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let psi = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 0.0, -1.0]);
    let ex2 = LtiPlant::example2();
    let nf = plant::normal_form(&ex2, Some(&psi)).unwrap();
    let gains = ObserverGains::new(l).unwrap();
    let tracking = TrackingGains::new(vec![4.0, 8.0], 1.0).unwrap();
    let layout = ChainLayout::new(&nf.r, nf.n).unwrap();
    let (nc, m, n) = (layout.dim(), nf.m(), nf.n);
    let nobs = n * m + nf.zero_dim();
    let true_stack = |x: &[f64], chain: &[f64]| {
        let (_, chi_b) = nf.split(x);
        let mut st = vec![0.0; n * m];
        for (iota, &ri) in nf.r.iter().enumerate() {
            for k in 0..n {
                st[k * m + iota] = if k < ri {
                    chi_b[nf.xi_index(iota, k + 1)]
                } else {
                    layout.get(chain, iota, k - ri)
                };
            }
        }
        st
    };
    let rhs = |_: f64, s: &[f64], d: &mut [f64]| -> optcons::Result<()> {
        let (x, rest) = s.split_at(4);
        let (chain, obs) = rest.split_at(nc);
        let stack = true_stack(x, chain);
        let v = controller::tracking_control(&tracking, &stack, &[0.0; 2]);
        let (chain_dot, u) = controller::chain_rhs(&layout, chain, &v);
        let (chi_a, chi_b) = nf.split(x);
        let u_tilde = plant::decoupling_control(&nf, &chi_a, &chi_b, &u);
        let mut y = vec![0.0; m];
        ex2.output(x, &mut y);
        d[..4].copy_from_slice(&plant::plant_rhs(&ex2, x, &u_tilde));
        d[4..4 + nc].copy_from_slice(&chain_dot);
        d[4 + nc..].copy_from_slice(&controller::observer_rhs(&gains, &nf, obs, &y, &v));
        Ok(())
    };
    let mut s = vec![0.0; 4 + nc + nobs];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    s.iter_mut().for_each(|v| *v = rng.random_range(-1.0..=1.0));
    let h = 1e-3;
    let mut rk = sim::Rk4::new(s.len());
    let (mut times, mut errs) = (Vec::new(), Vec::new());
    for k in 0..=5000 {
        if k % 10 == 0 {
            let stack = true_stack(&s[..4], &s[4..4 + nc]);
            times.push(k as f64 * h);
            errs.push(dist(&s[4 + nc..4 + nc + n * m], &stack));
        }
        rk.step(rhs, k as f64 * h, &mut s, h).unwrap();
    }
    (times, errs)
}

/// Breadth-first connectivity check.
fn bfs_connected(n: usize, edges: &[(usize, usize, f64)]) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &(a, b, _) in edges {
            let j = if a == i {
                b
            } else if b == i {
                a
            } else {
                continue;
            };
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.iter().all(|s| *s)
}

fn laplacian_violations(graphs: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut bad = 0;
    for _ in 0..graphs {
        let n = rng.random_range(2..=8);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.35) {
                    edges.push((i, j, rng.random_range(0.1..3.0)));
                }
            }
        }
        let g = WeightedGraph::new(n, edges.clone()).unwrap();
        let l = g.laplacian();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let quad: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| x[i] * l[(i, j)] * x[j])
            .sum();
        let expected: f64 = edges
            .iter()
            .map(|&(i, j, w)| w * (x[i] - x[j]).powi(2))
            .sum();
        let eig = SymmetricEigen::new(l.clone()).eigenvalues;
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ok = l == l.transpose()
            && (0..n).all(|i| l.row(i).sum().abs() <= 1e-12)
            && (0..n).all(|i| (0..n).all(|j| i == j || l[(i, j)] <= 0.0))
            && (quad - expected).abs() <= 1e-10 * (1.0 + expected)
            && ev[0] >= -1e-10
            && (ev[1] > 1e-9) == bfs_connected(n, &edges)
            && g.is_connected() == bfs_connected(n, &edges);
        if !ok {
            bad += 1;
        }
    }
    bad
}

fn library_costs() -> Vec<Cost> {
    let mut costs: Vec<Cost> = vec![
        Arc::new(QuadraticToPoint {
            point: vec![3.0, -4.0],
            weight: 2.5,
        }),
        Arc::new(QuarticLinear { b: vec![1.5, -0.5] }),
    ];
    for k in 1..=5 {
        costs.push(Arc::new(Example2Cost::new(k).unwrap()));
    }
    costs
}

fn criterion_5(r: &mut Report, runs: &[(&str, &Trajectory)]) {
    let (e1, e2, e3) = (
        oscillator_error(0.1),
        oscillator_error(0.05),
        oscillator_error(0.025),
    );
    let (r1, r2) = (e1 / e2, e2 / e3);
    let ok = [r1, r2].iter().all(|q| (q - 16.0).abs() <= 0.2 * 16.0);
    r.check(
        "5a",
        "RK4 order ratio",
        ok,
        format!("{r1:.2}, {r2:.2} (16 +/- 20%)"),
    );

    let drifts: Vec<String> = runs
        .iter()
        .map(|(n, tr)| format!("{n} {:.1e}", lambda_drift(tr)))
        .collect();
    let ok = runs.iter().all(|(_, tr)| lambda_drift(tr) <= 1e-9);
    r.check(
        "5b",
        "conservation of the dual sum",
        ok,
        format!("{} (tol 1e-9)", drifts.join(", ")),
    );

    let (times, errs) = observer_error_series(vec![6.0, 5.0]);
    let window: Vec<usize> = (0..times.len())
        .filter(|&k| times[k] >= 1.0 && times[k] <= 5.0)
        .collect();
    let (slope, _) = log_fit(
        &window.iter().map(|&k| times[k]).collect::<Vec<_>>(),
        &window.iter().map(|&k| errs[k]).collect::<Vec<_>>(),
    );
    let slowest = ObserverGains::new(vec![6.0, 5.0])
        .unwrap()
        .error_matrix()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let ok = ((slope - slowest) / slowest).abs() <= 0.1;
    r.check(
        "5c",
        "observer error decay rate",
        ok,
        format!("slope {slope:.4} vs eigenvalue {slowest:.4} (10%)"),
    );

    let mut base = bundled("example2").scenario;
    base.sim.horizon = 10.0;
    base.sim.observer_init = InitMode::Exact;
    let output = sim::run(&base).unwrap();
    let mut state = base.clone();
    state.controller.variant.feedback = Feedback::State;
    let state = sim::run(&state).unwrap();
    let worst = (0..output.len())
        .map(|k| dist(&output.y[k], &state.y[k]))
        .fold(0.0, f64::max);
    r.check(
        "5d",
        "state and output feedback agree at zero estimation error",
        worst <= 1e-6 && output.len() == state.len(),
        format!("max deviation {worst:.3e} over 10 s (tol 1e-6)"),
    );

    let bad = laplacian_violations(1000);
    r.check(
        "5e",
        "Laplacian invariants on 1000 seeded graphs",
        bad == 0,
        format!("{bad} violations"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let points: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..2).map(|_| rng.random_range(-20.0..=20.0)).collect())
        .collect();
    let worst = library_costs()
        .iter()
        .map(|c| convex::grad_check(c.as_ref(), &points, 1e-5).unwrap())
        .fold(0.0, f64::max);
    r.check(
        "5f",
        "gradient finite-difference check",
        worst <= 1e-5,
        format!("max error {worst:.3e} (tol 1e-5)"),
    );
}

fn testbed_norms(phi: optcons::generator::Phi, horizon: f64, h: f64) -> (Vec<f64>, Vec<f64>) {
    let tb =
        Lemma2Testbed::new(phi, DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1)).unwrap();
    let mut s = vec![1.0, 1.0];
    let mut rk = sim::Rk4::new(2);
    let steps = (horizon / h).round() as usize;
    let (mut times, mut norms) = (vec![0.0], vec![norm(&s)]);
    for k in 0..steps {
        rk.step(
            |_, x, d| {
                let (xd, zd) = tb.rhs(&x[..1], &x[1..]);
                d[0] = xd[0];
                d[1] = zd[0];
                Ok(())
            },
            k as f64 * h,
            &mut s,
            h,
        )
        .unwrap();
        if (k + 1) % 100 == 0 {
            times.push((k + 1) as f64 * h);
            norms.push(norm(&s));
        }
    }
    (times, norms)
}

fn criterion_6(r: &mut Report) {
    let (_, norms) = testbed_norms(Box::new(|x, o| o[0] = x[0].powi(3)), 200.0, 1e-2);
    let last = *norms.last().unwrap();
    r.check(
        "6a",
        "cubic damping testbed",
        last < 1e-2,
        format!("|(x, z)(200)| = {last:.4e} (tol 1e-2)"),
    );

    let (times, norms) = testbed_norms(Box::new(|x, o| o[0] = 2.0 * x[0]), 20.0, 1e-3);
    let fit = sim::exp_rate_fit(&times, &norms, (0.0, 20.0)).unwrap();
    r.check(
        "6b",
        "linear damping testbed",
        fit.slope < 0.0 && fit.r_squared >= 0.99,
        format!(
            "slope {:.4}, R^2 {:.4} (min 0.99)",
            fit.slope, fit.r_squared
        ),
    );
}

fn criterion_7(r: &mut Report) {
    let eps = [0.05, 0.1, 0.2, 0.5, 1.0];
    let rows = sim::sweep_eps(&bundled("example2").scenario, &eps).unwrap();
    let golden_path =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/eps_sweep_example2.csv");
    let golden = fs::read_to_string(&golden_path).expect("golden sweep file");
    let mut reader = csv::Reader::from_reader(golden.as_bytes());
    let golden_rows: Vec<(f64, bool, f64)> = reader
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (
                rec[0].parse().unwrap(),
                rec[1].parse().unwrap(),
                rec[2].parse().unwrap(),
            )
        })
        .collect();
    let matches = golden_rows.len() == rows.len()
        && rows.iter().zip(&golden_rows).all(|(row, g)| {
            row.eps == g.0
                && row.converged == g.1
                && (row.gap_at_t - g.2).abs() <= 1e-6 * g.2.abs() + 1e-9
        });
    let column: Vec<String> = rows
        .iter()
        .map(|row| format!("{}:{}", row.eps, row.converged))
        .collect();
    r.check(
        "7",
        "sweep reproduces the golden file",
        matches,
        column.join(" "),
    );
    let all = rows.iter().all(|row| row.converged);
    let gaps: Vec<String> = rows
        .iter()
        .map(|row| format!("{:.2e}", row.gap_at_t))
        .collect();
    r.check(
        "7",
        "every eps <= 1 converges",
        all,
        format!("final gaps {}", gaps.join(", ")),
    );
}

fn main() {
    let mut r = Report { failed: Vec::new() };
    let ex1 = criterion_1(&mut r);
    let ex2_eps1 = criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    let ex2 = sim::run(&bundled("example2").scenario).expect("example 2 runs");
    criterion_5(
        &mut r,
        &[
            ("example1", &ex1),
            ("example2", &ex2),
            ("example2_eps1", &ex2_eps1),
        ],
    );
    criterion_6(&mut r);
    criterion_7(&mut r);
    if r.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", r.failed.join(", "));
        std::process::exit(1);
    }
}
