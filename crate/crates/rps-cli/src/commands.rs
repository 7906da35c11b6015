//! Implementations behind the CLI subcommands: each builds the pipeline a
//! config describes, runs one experiment, and writes its artifacts through
//! the manifest-tracked output writer.

use std::path::Path;
use std::sync::Arc;

use rps_core::analysis::{fit_log_linear, DecayRow, ErrorMeta, NormContext};
use rps_core::assembly::Discretization;
use rps_core::coeff::sample;
use rps_core::homog::{coarse_solve, recover, solve_fine};
use rps_core::mesh::{build_structured, mesh_norm, refine, write_mesh_text, Point};
use rps_core::rps::{gram, theta, BasisSolver, Layers, RpsBasis};
use rps_core::solver::SolverOpts;
use rps_core::timedep::{solve_parabolic, solve_wave, InitialData, Space, TimeGrid, Trajectory};
use rps_core::{Result, RpsError};

use crate::config::{ExperimentConfig, ProblemSpec};
use crate::output::{csv_table, fmt_f64, OutputWriter};
use crate::svg::{line_plot, Series};

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub disc: Discretization,
    pub opts: SolverOpts,
}

impl Pipeline {
    pub fn build(cfg: ExperimentConfig) -> Result<Pipeline> {
        cfg.validate()?;
        let coarse = Arc::new(build_structured(cfg.dimension, cfg.coarse_divisions)?);
        let fine = refine(&coarse, cfg.refinements);
        let coeffs = sample(&cfg.coeff, &fine)?;
        let disc = Discretization::build(coarse, fine, coeffs)?;
        let opts = cfg.solver.opts()?;
        Ok(Pipeline { cfg, disc, opts })
    }

    fn g_nodal(&self) -> Vec<f64> {
        let dim = self.cfg.dimension;
        (0..self.disc.fine.n_vertices())
            .map(|v| self.cfg.rhs.evaluate(dim, self.disc.fine.vertex(v), 0.0))
            .collect()
    }

    fn g_fn(&self) -> impl Fn(Point, f64) -> f64 + '_ {
        let dim = self.cfg.dimension;
        move |p, t| self.cfg.rhs.evaluate(dim, p, t)
    }

    /// Coarse node closest to the domain center.
    fn center_node(&self) -> usize {
        let target = [0.5, if self.cfg.dimension == 2 { 0.5 } else { 0.0 }];
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.disc.coarse.coarse_node_positions().iter().enumerate() {
            let d = (p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn layer_tag(layers: Layers) -> String {
        match layers {
            Layers::Global => "global".into(),
            Layers::Local(l) => format!("l{l}"),
        }
    }

    fn solve_basis(&self, layers: Layers, workers: usize, out: &mut OutputWriter) -> Result<RpsBasis> {
        let basis = BasisSolver::new(&self.disc, self.opts).solve_all(layers, workers)?;
        let total_nnz: usize = basis.functions.iter().map(|f| f.nnz()).sum();
        out.log(format!(
            "basis layers={layers}: {} functions, total nonzeros {total_nnz}",
            basis.len()
        ));
        for f in &basis.functions {
            out.log(format!(
                "  node {}: objective {} ({} iterations, residual {:.3e}, {})",
                f.node, f.objective, f.report.iterations, f.report.residual, f.report.method
            ));
        }
        Ok(basis)
    }

    fn dump_basis(&self, basis: &RpsBasis, out: &mut OutputWriter) -> Result<()> {
        let tag = Self::layer_tag(basis.layers);
        for f in &basis.functions {
            let rows: Vec<(usize, f64)> =
                f.indices.iter().copied().zip(f.values.iter().copied()).collect();
            let csv = csv_table("node,value", &rows, |(n, v)| format!("{n},{}", fmt_f64(*v)));
            out.write_text(&format!("basis_{tag}/node_{:04}.csv", f.node), csv)?;
        }
        Ok(())
    }

    fn common_dumps(&self, out: &mut OutputWriter) -> Result<()> {
        let dumps = &self.cfg.outputs.dumps;
        if dumps.iter().any(|d| d == "field") {
            let rows: Vec<usize> = (0..self.disc.fine.n_cells()).collect();
            let csv = csv_table("cell,x,y,value", &rows, |&t| {
                let b = self.disc.fine.barycenter(t);
                format!("{t},{},{},{}", fmt_f64(b[0]), fmt_f64(b[1]), fmt_f64(self.disc.coeffs.value(t)))
            });
            out.write_text("field.csv", csv)?;
        }
        if dumps.iter().any(|d| d == "matrices") {
            let mut buf = Vec::new();
            self.disc.stiffness.write_coo(&mut buf)?;
            out.write_file("stiffness.coo.txt", &buf)?;
            let mut buf = Vec::new();
            self.disc.fv.matrix().write_coo(&mut buf)?;
            out.write_file("fv.coo.txt", &buf)?;
        }
        if dumps.iter().any(|d| d == "mesh") {
            let mut buf = Vec::new();
            write_mesh_text(&self.disc.coarse, &mut buf)?;
            out.write_file("coarse_mesh.txt", &buf)?;
            let mut buf = Vec::new();
            write_mesh_text(&self.disc.fine, &mut buf)?;
            out.write_file("fine_mesh.txt", &buf)?;
        }
        Ok(())
    }

    fn dump_solution(&self, name: &str, sol: &[f64], out: &mut OutputWriter) -> Result<()> {
        let rows: Vec<usize> = (0..sol.len()).collect();
        let csv = csv_table("node,value", &rows, |&v| format!("{v},{}", fmt_f64(sol[v])));
        out.write_text(name, csv)
    }
}

fn error_row(tag: &str, norms: rps_core::analysis::Norms) -> String {
    format!(
        "{tag},{},{},{}",
        fmt_f64(norms.l2),
        fmt_f64(norms.h1),
        fmt_f64(norms.linf)
    )
}

pub fn mesh_info(pipe: &Pipeline, out: &mut OutputWriter) -> Result<()> {
    let coarse = &pipe.disc.coarse;
    let fine = &pipe.disc.fine;
    let h = mesh_norm(&coarse.coarse_node_positions(), fine)?;
    let volume: f64 = pipe.disc.dual.volumes().iter().sum();
    let lines = [
        format!("dimension {}", coarse.dim()),
        format!(
            "coarse: {} vertices, {} cells, {} coarse nodes",
            coarse.n_vertices(),
            coarse.n_cells(),
            coarse.coarse_nodes().len()
        ),
        format!("fine: {} vertices, {} cells", fine.n_vertices(), fine.n_cells()),
        format!("mesh norm H {}", fmt_f64(h)),
        format!("dual volume total {}", fmt_f64(volume)),
        format!(
            "coefficient bounds [{}, {}]",
            fmt_f64(pipe.disc.coeffs.lambda_min()),
            fmt_f64(pipe.disc.coeffs.lambda_max())
        ),
    ];
    for line in &lines {
        println!("{line}");
        out.log(line);
    }
    let mut buf = Vec::new();
    write_mesh_text(coarse, &mut buf)?;
    out.write_file("coarse_mesh.txt", &buf)?;
    let mut buf = Vec::new();
    write_mesh_text(fine, &mut buf)?;
    out.write_file("fine_mesh.txt", &buf)?;
    pipe.common_dumps(out)?;
    Ok(())
}

pub fn basis(pipe: &Pipeline, workers: usize, out: &mut OutputWriter) -> Result<()> {
    for layers in pipe.cfg.layers.resolve()? {
        let basis = pipe.solve_basis(layers, workers, out)?;
        let tag = Pipeline::layer_tag(layers);
        let csv = csv_table(
            "node,objective,iterations,residual",
            &basis.functions,
            |f| {
                format!(
                    "{},{},{},{}",
                    f.node,
                    fmt_f64(f.objective),
                    f.report.iterations,
                    fmt_f64(f.report.residual)
                )
            },
        );
        out.write_text(&format!("objectives_{tag}.csv"), csv)?;
        if pipe.cfg.outputs.dumps.iter().any(|d| d == "basis") {
            pipe.dump_basis(&basis, out)?;
        }
        println!("basis layers={layers}: {} functions solved", basis.len());
    }
    pipe.common_dumps(out)?;
    Ok(())
}

pub fn gram_cmd(pipe: &Pipeline, workers: usize, out: &mut OutputWriter) -> Result<()> {
    let layers = pipe.cfg.layers.resolve()?[0];
    if layers != Layers::Global {
        out.log("note: gram matrix of a localized basis is an approximation of the global P");
    }
    let basis = pipe.solve_basis(layers, workers, out)?;
    let p = gram(&pipe.disc, &basis);
    let th = theta(&p)?;
    let dense_csv = |m: &rps_core::nalgebra::DMatrix<f64>| {
        let mut s = String::new();
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    };
    out.write_text("P.csv", dense_csv(&p))?;
    out.write_text("Theta.csv", dense_csv(&th))?;
    out.log(format!("gram: {} x {} matrices written", p.nrows(), p.ncols()));
    pipe.common_dumps(out)?;
    println!("gram: wrote P.csv and Theta.csv ({} nodes)", p.nrows());
    Ok(())
}

pub fn decay(pipe: &Pipeline, workers: usize, out: &mut OutputWriter) -> Result<()> {
    let node = pipe.cfg.node.unwrap_or_else(|| pipe.center_node());
    let settings = pipe.cfg.layers.resolve()?;
    let ls: Vec<u32> = settings
        .iter()
        .filter_map(|s| match s {
            Layers::Local(l) => Some(*l),
            Layers::Global => None,
        })
        .collect();
    if ls.is_empty() {
        return Err(RpsError::Config(
            "decay needs a list or range of layer counts (e.g. layers=\"1..6\")".into(),
        ));
    }
    let _ = workers;
    let solver = BasisSolver::new(&pipe.disc, pipe.opts);
    let global = solver.solve_node(node, Layers::Global)?;
    out.log(format!(
        "decay reference: global basis at node {node}, objective {}",
        global.objective
    ));
    let ctx = NormContext::new(&pipe.disc);
    let rows = rps_core::analysis::decay_curve(
        &ctx,
        pipe.disc.fine.n_vertices(),
        &global,
        ls.iter().copied(),
        |l| solver.solve_node(node, Layers::Local(l)),
    )?;
    write_decay_outputs(&rows, pipe.cfg.outputs.plots, out)?;
    for r in &rows {
        println!(
            "l={} err_L2={} err_H1={} err_Linf={}",
            r.l,
            fmt_f64(r.err_l2),
            fmt_f64(r.err_h1),
            fmt_f64(r.err_linf)
        );
    }
    pipe.common_dumps(out)?;
    Ok(())
}

fn write_decay_outputs(rows: &[DecayRow], plots: bool, out: &mut OutputWriter) -> Result<()> {
    let csv = csv_table("l,err_L2,err_H1,err_Linf", rows, |r| {
        format!(
            "{},{},{},{}",
            r.l,
            fmt_f64(r.err_l2),
            fmt_f64(r.err_h1),
            fmt_f64(r.err_linf)
        )
    });
    out.write_text("decay.csv", csv)?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.err_h1 > 0.0)
        .map(|r| (r.l as f64, r.err_h1))
        .collect();
    if pts.len() >= 2 {
        let fit = fit_log_linear(&pts)?;
        out.write_text(
            "decay_fit.json",
            format!(
                "{{ \"slope\": {}, \"intercept\": {}, \"residual\": {} }}\n",
                fmt_f64(fit.slope),
                fmt_f64(fit.intercept),
                fmt_f64(fit.residual)
            ),
        )?;
        out.log(format!(
            "decay fit (log err_H1 vs l): slope {} residual {}",
            fmt_f64(fit.slope),
            fmt_f64(fit.residual)
        ));
    }
    if plots {
        let series = [
            ("L2", rows.iter().map(|r| (r.l as f64, r.err_l2)).collect::<Vec<_>>()),
            ("H1", rows.iter().map(|r| (r.l as f64, r.err_h1)).collect()),
            ("Linf", rows.iter().map(|r| (r.l as f64, r.err_linf)).collect()),
        ];
        let series: Vec<Series> = series
            .into_iter()
            .map(|(name, points)| Series { name: name.into(), points })
            .collect();
        out.write_text(
            "decay.svg",
            line_plot("localization decay", "layers l", "error", &series, false, true),
        )?;
    }
    Ok(())
}

pub fn solve(pipe: &Pipeline, workers: usize, out: &mut OutputWriter) -> Result<()> {
    let g = pipe.g_nodal();
    let fine_ref = solve_fine(&pipe.disc, &g, &pipe.opts)?;
    if let Some(r) = &fine_ref.report {
        out.log(format!(
            "fine reference: {} iterations, residual {:.3e}",
            r.iterations, r.residual
        ));
    }
    let ctx = NormContext::new(&pipe.disc);
    let dumps_solution = pipe.cfg.outputs.dumps.iter().any(|d| d == "solution");
    if dumps_solution {
        pipe.dump_solution("fine_solution.csv", &fine_ref.values, out)?;
    }

    let mut local_rows: Vec<(u32, rps_core::analysis::Norms)> = Vec::new();
    let mut global_row = None;
    for layers in pipe.cfg.layers.resolve()? {
        let basis = pipe.solve_basis(layers, workers, out)?;
        let (_, sol) = coarse_solve(&pipe.disc, &basis, &g)?;
        let report = ctx.error_report(&sol.values, &fine_ref.values, ErrorMeta::default());
        if dumps_solution {
            pipe.dump_solution(
                &format!("coarse_solution_{}.csv", Pipeline::layer_tag(layers)),
                &sol.values,
                out,
            )?;
        }
        match layers {
            Layers::Global => global_row = Some(report.absolute),
            Layers::Local(l) => local_rows.push((l, report.absolute)),
        }
        out.log(format!(
            "coarse solve layers={layers}: err_L2 {} err_H1 {} err_Linf {}",
            fmt_f64(report.absolute.l2),
            fmt_f64(report.absolute.h1),
            fmt_f64(report.absolute.linf)
        ));
    }

    if !local_rows.is_empty() {
        let csv = csv_table("l,err_L2,err_H1,err_Linf", &local_rows, |(l, n)| {
            error_row(&l.to_string(), *n)
        });
        out.write_text("errors.csv", csv)?;
        if pipe.cfg.outputs.plots {
            let series = vec![
                Series {
                    name: "L2".into(),
                    points: local_rows.iter().map(|(l, n)| (*l as f64, n.l2)).collect(),
                },
                Series {
                    name: "H1".into(),
                    points: local_rows.iter().map(|(l, n)| (*l as f64, n.h1)).collect(),
                },
                Series {
                    name: "Linf".into(),
                    points: local_rows.iter().map(|(l, n)| (*l as f64, n.linf)).collect(),
                },
            ];
            out.write_text(
                "errors.svg",
                line_plot("coarse-space error vs layers", "layers l", "error", &series, false, true),
            )?;
        }
    }
    if let Some(n) = global_row {
        let h = 1.0 / pipe.cfg.coarse_divisions as f64;
        let csv = csv_table("H,err_L2,err_H1,err_Linf", &[n], |n| error_row(&fmt_f64(h), *n));
        out.write_text("errors_global.csv", csv)?;
    }
    pipe.common_dumps(out)?;
    println!(
        "solve: fine reference plus {} coarse solves written",
        local_rows.len() + global_row.is_some() as usize
    );
    Ok(())
}

fn time_setup(pipe: &Pipeline, wave: bool) -> Result<(TimeGrid, usize)> {
    let (final_time, steps) = match (&pipe.cfg.problem, wave) {
        (ProblemSpec::Wave { final_time, steps }, true) => (*final_time, *steps),
        (ProblemSpec::Parabolic { final_time, steps }, false) => (*final_time, *steps),
        _ => (1.0, None),
    };
    let steps = pipe.cfg.time_steps(steps);
    let grid = TimeGrid::new(final_time, steps)?;
    let every = if pipe.cfg.outputs.dumps.iter().any(|d| d == "trajectory") {
        (steps / 8).max(1)
    } else {
        0
    };
    Ok((grid, every))
}

fn dump_trajectory(name: &str, traj: &Trajectory, out: &mut OutputWriter) -> Result<()> {
    let mut rows = Vec::new();
    for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
        for (node, v) in snap.iter().enumerate() {
            rows.push((*t, node, *v));
        }
    }
    let csv = csv_table("t,node,value", &rows, |(t, n, v)| {
        format!("{},{n},{}", fmt_f64(*t), fmt_f64(*v))
    });
    out.write_text(name, csv)
}

pub fn timedep_cmd(pipe: &Pipeline, workers: usize, wave: bool, out: &mut OutputWriter) -> Result<()> {
    let (grid, every) = time_setup(pipe, wave)?;
    let g = pipe.g_fn();
    let kind = if wave { "wave" } else { "parabolic" };
    out.log(format!(
        "{kind}: T {} steps {} dt {}",
        fmt_f64(grid.final_time),
        grid.steps,
        fmt_f64(grid.dt())
    ));
    let fine_traj = if wave {
        solve_wave(&pipe.disc, Space::Fine, &g, &grid, 1.0, &InitialData::default(), every)?
    } else {
        solve_parabolic(&pipe.disc, Space::Fine, &g, &grid, &InitialData::default(), every)?
    };
    pipe.dump_solution("terminal_fine.csv", fine_traj.terminal(), out)?;
    if every > 0 {
        dump_trajectory("trajectory_fine.csv", &fine_traj, out)?;
    }

    let ctx = NormContext::new(&pipe.disc);
    let mut rows: Vec<(u32, rps_core::analysis::Norms)> = Vec::new();
    for layers in pipe.cfg.layers.resolve()? {
        let basis = pipe.solve_basis(layers, workers, out)?;
        let traj = if wave {
            solve_wave(
                &pipe.disc,
                Space::Coarse(&basis),
                &g,
                &grid,
                1.0,
                &InitialData::default(),
                every,
            )?
        } else {
            solve_parabolic(
                &pipe.disc,
                Space::Coarse(&basis),
                &g,
                &grid,
                &InitialData::default(),
                every,
            )?
        };
        let tag = Pipeline::layer_tag(layers);
        pipe.dump_solution(&format!("terminal_{tag}.csv"), traj.terminal(), out)?;
        if every > 0 {
            dump_trajectory(&format!("trajectory_{tag}.csv"), &traj, out)?;
        }
        let report = ctx.error_report(traj.terminal(), fine_traj.terminal(), ErrorMeta::default());
        out.log(format!(
            "{kind} layers={layers}: terminal err_L2 {} err_H1 {} err_Linf {}",
            fmt_f64(report.absolute.l2),
            fmt_f64(report.absolute.h1),
            fmt_f64(report.absolute.linf)
        ));
        if let Layers::Local(l) = layers {
            rows.push((l, report.absolute));
        }
    }
    if !rows.is_empty() {
        let csv = csv_table("l,err_L2,err_H1,err_Linf", &rows, |(l, n)| {
            error_row(&l.to_string(), *n)
        });
        out.write_text("terminal_errors.csv", csv)?;
        if pipe.cfg.outputs.plots {
            let series = vec![
                Series {
                    name: "L2".into(),
                    points: rows.iter().map(|(l, n)| (*l as f64, n.l2)).collect(),
                },
                Series {
                    name: "H1".into(),
                    points: rows.iter().map(|(l, n)| (*l as f64, n.h1)).collect(),
                },
                Series {
                    name: "Linf".into(),
                    points: rows.iter().map(|(l, n)| (*l as f64, n.linf)).collect(),
                },
            ];
            out.write_text(
                "terminal_errors.svg",
                line_plot(
                    &format!("{kind} terminal error vs layers"),
                    "layers l",
                    "error",
                    &series,
                    false,
                    true,
                ),
            )?;
        }
    }
    pipe.common_dumps(out)?;
    println!("{kind}: {} coarse runs compared against the fine reference", rows.len());
    Ok(())
}

fn read_measurements(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RpsError::Config(format!("cannot read measurements {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| {
            RpsError::Config(format!("measurements line {} is not `node,value`", k + 1))
        })?;
        if k == 0 && a.trim().parse::<usize>().is_err() {
            continue; // header row
        }
        let node: usize = a.trim().parse().map_err(|_| {
            RpsError::Config(format!("measurements line {}: bad node index", k + 1))
        })?;
        let value: f64 = b.trim().parse().map_err(|_| {
            RpsError::Config(format!("measurements line {}: bad value", k + 1))
        })?;
        out.push((node, value));
    }
    Ok(out)
}

pub fn recover_cmd(pipe: &Pipeline, workers: usize, out: &mut OutputWriter) -> Result<()> {
    let (path, bound) = match &pipe.cfg.problem {
        ProblemSpec::Recover { measurements, source_bound } => {
            (measurements.clone(), *source_bound)
        }
        _ => {
            return Err(RpsError::Config(
                "recover needs problem.kind = \"recover\" with a measurements file".into(),
            ))
        }
    };
    let measurements = read_measurements(&path)?;
    let layers = pipe.cfg.layers.resolve()?[0];
    let basis = pipe.solve_basis(layers, workers, out)?;
    let (sol, report) = recover(&pipe.disc, &basis, &measurements, bound)?;
    pipe.dump_solution("recovered.csv", &sol.values, out)?;
    out.write_text(
        "recovery_report.json",
        format!(
            "{{ \"mesh_norm\": {}, \"source_bound\": {}, \"statement\": \"{}\" }}\n",
            fmt_f64(report.mesh_norm),
            report
                .source_bound
                .map(|m| fmt_f64(m))
                .unwrap_or_else(|| "null".into()),
            report.statement
        ),
    )?;
    out.log(report.statement.clone());
    pipe.common_dumps(out)?;
    println!("recover: {}", report.statement);
    Ok(())
}

/// `run` dispatches on the configured problem kind.
pub fn run(pipe: &Pipeline, workers: usize, out: &mut OutputWriter) -> Result<()> {
    match &pipe.cfg.problem {
        ProblemSpec::BasisOnly => basis(pipe, workers, out),
        ProblemSpec::Elliptic => solve(pipe, workers, out),
        ProblemSpec::Wave { .. } => timedep_cmd(pipe, workers, true, out),
        ProblemSpec::Parabolic { .. } => timedep_cmd(pipe, workers, false, out),
        ProblemSpec::Recover { .. } => recover_cmd(pipe, workers, out),
    }
}
