use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use optcons::plant::{self, NormalForm};
use optcons::scenario::{self, ScenarioFile};
use optcons::sim::{self, CostSpec, RunStatus, Simulation};

use crate::error::CliError;
use crate::plot::{self, PlotKind};

/// A scenario path, or the name of a bundled scenario when no such file exists.
pub fn resolve_scenario(arg: &str) -> Result<ScenarioFile, CliError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(text) = scenario::bundled(arg) {
            return Ok(scenario::parse_scenario(text)?);
        }
    }
    Ok(scenario::load_scenario(path)?)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn fmt_matrix(m: &nalgebra::DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let e: Vec<String> = r.iter().map(|x| format!("{x}")).collect();
            format!("[{}]", e.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn describe_normal_form(out: &mut dyn Write, nf: &NormalForm) -> std::io::Result<()> {
    let r: Vec<String> = nf.r.iter().map(usize::to_string).collect();
    writeln!(out, "  relative degree: ({}), n = {}", r.join(", "), nf.n)?;
    writeln!(out, "  decoupling matrix: {}", fmt_matrix(&nf.decoupling))?;
    if nf.zero_dim() == 0 {
        writeln!(out, "  zero dynamics: none")?;
        writeln!(out, "  minimum phase: true (no zero dynamics)")?;
    } else {
        let spec: Vec<String> = optcons::linalg::eigenvalues(&nf.pi)
            .iter()
            .map(|z| {
                if z.im.abs() < 1e-12 {
                    format!("{:.6}", z.re)
                } else {
                    format!("{:.6}{:+.6}i", z.re, z.im)
                }
            })
            .collect();
        writeln!(out, "  zero dynamics spectrum: [{}]", spec.join(", "))?;
        let (ok, margin) = plant::is_minimum_phase(nf, 0.0);
        writeln!(out, "  minimum phase: {ok} (margin {margin:.6})")?;
    }
    Ok(())
}

pub fn analyze(sf: &ScenarioFile, out: &mut dyn Write) -> Result<(), CliError> {
    let s = &sf.scenario;
    writeln!(
        out,
        "scenario: {} ({} agents, m = {})",
        s.name,
        s.n_agents(),
        s.m()
    )?;
    writeln!(
        out,
        "graph: connected = {}, algebraic connectivity = {:.6}",
        s.graph.is_connected(),
        s.graph.algebraic_connectivity()
    )?;
    for (k, ap) in s.plants.iter().enumerate() {
        if s.plants.len() == 1 {
            writeln!(out, "plant (shared by all agents):")?;
        } else {
            writeln!(out, "plant {}:", k + 1)?;
        }
        match plant::normal_form(&ap.plant, ap.complement.as_ref()) {
            Ok(nf) => describe_normal_form(out, &nf)?,
            Err(e) => writeln!(out, "  structure: {e}")?,
        }
    }
    match &s.costs {
        CostSpec::Rendezvous => writeln!(out, "costs: rendezvous at the mean initial output")?,
        CostSpec::Fixed(c) => {
            let strong = c.iter().filter(|c| c.class().is_strong()).count();
            writeln!(out, "costs: {} ({strong} strongly convex)", c.len())?;
        }
    }
    let v = s.controller.variant;
    writeln!(
        out,
        "controller: {:?} feedback, {:?} gradients, eps = {}",
        v.feedback, v.gradient, s.controller.eps
    )?;
    sim::analyze(s)?;
    writeln!(out, "assumptions: satisfied")?;
    Ok(())
}

fn output_dir(sf: &ScenarioFile, cli_out: Option<PathBuf>) -> PathBuf {
    cli_out
        .or_else(|| sf.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Run and write `<dir>/<name>.csv`; returns the CSV path.
pub fn run(
    sf: &ScenarioFile,
    cli_out: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<PathBuf, CliError> {
    let s = &sf.scenario;
    let started = Instant::now();
    let simulation = Simulation::new(s)?;
    let y_star = simulation.y_star()?;
    let tr = simulation.run()?;
    let elapsed = started.elapsed();

    let dir = output_dir(sf, cli_out);
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join(format!("{}.csv", s.name));
    sim::write_trajectory_csv(&tr, &y_star, fs::File::create(&csv_path)?)?;

    writeln!(out, "scenario: {}", s.name)?;
    writeln!(out, "y* (centralized oracle): {}", fmt_vec(&y_star))?;
    writeln!(
        out,
        "trajectory: {} ({} samples)",
        csv_path.display(),
        tr.len()
    )?;
    if let RunStatus::Diverged { time } = tr.status {
        return Err(CliError::Diverged { time });
    }
    let gap = sim::optimality_gap(&tr, &y_star);
    let t_end = *tr.times.last().unwrap_or(&0.0);
    writeln!(
        out,
        "final gap at t = {t_end}: {:.6e}",
        gap.last().copied().unwrap_or(f64::NAN)
    )?;
    let window = sf
        .output
        .fit_window
        .unwrap_or((s.sim.horizon / 5.0, s.sim.horizon));
    match sim::exp_rate_fit(&tr.times, &gap, window) {
        Ok(f) => writeln!(
            out,
            "log-gap slope on [{}, {}]: {:.6} (R^2 = {:.6})",
            window.0, window.1, f.slope, f.r_squared
        )?,
        Err(e) => writeln!(out, "log-gap slope: unavailable ({e})")?,
    }
    writeln!(out, "wall time: {:.3} s", elapsed.as_secs_f64())?;
    Ok(csv_path)
}

pub fn parse_eps_list(arg: &str) -> Result<Vec<f64>, CliError> {
    arg.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0)
                .ok_or_else(|| CliError::Usage(format!("invalid eps value `{s}`")))
        })
        .collect()
}

pub fn sweep(
    sf: &ScenarioFile,
    eps: &[f64],
    target: Option<&Path>,
    out: &mut dyn Write,
    diag: &mut dyn Write,
) -> Result<(), CliError> {
    let rows = sim::sweep_eps(&sf.scenario, eps)?;
    match target {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            sim::write_sweep_csv(&rows, fs::File::create(p)?)?;
            writeln!(out, "wrote {} rows to {}", rows.len(), p.display())?;
        }
        None => sim::write_sweep_csv(&rows, &mut *out)?,
    }
    for e in sim::monotonicity_violations(&rows) {
        writeln!(
            diag,
            "warning: eps = {e} did not converge although a larger eps did"
        )?;
    }
    Ok(())
}

pub fn plot(
    csv: &Path,
    kind: PlotKind,
    target: &Path,
    y_star: Option<&[f64]>,
    out: &mut dyn Write,
) -> Result<plot::Chart, CliError> {
    let table = plot::read_table(csv)?;
    let chart = plot::build_chart(&table, kind, y_star)?;
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(target, &chart.svg)?;
    let scale = if chart.log_y { "log" } else { "linear" };
    writeln!(
        out,
        "wrote {} series ({} samples, {scale} y axis) to {}",
        chart.series.len(),
        table.sample_count(),
        target.display()
    )?;
    if let Some((x, y)) = chart.marker {
        writeln!(out, "marker: ({x:.6}, {y:.6})")?;
    }
    Ok(chart)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_list_parsing() {
        assert_eq!(parse_eps_list("0.1, 0.2,1").unwrap(), vec![0.1, 0.2, 1.0]);
        assert!(parse_eps_list("").unwrap().is_empty());
        assert!(parse_eps_list("0.1,abc").is_err());
        assert!(parse_eps_list("-1").is_err());
    }

    #[test]
    fn analyze_bundled_example2() {
        let sf = resolve_scenario("example2").unwrap();
        let mut buf = Vec::new();
        analyze(&sf, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("relative degree: (2, 1)"), "{text}");
        assert!(text.contains("minimum phase: true"), "{text}");
        assert!(text.contains("connected = true"), "{text}");
    }
}
