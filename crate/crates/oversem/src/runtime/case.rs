//! Case orchestration: build sessions from a config, autotune, timestep,
//! write snapshots, and emit runtime statistics. Also the `tune`, `scale`,
//! and `mesh-info` entry points used by the CLI.

use crate::comm::{spawn, Comm, ReduceOp};
use crate::error::{Error, Result};
use crate::fields::{named_field, FieldFn};
use crate::findpts::FindConfig;
use crate::mesh::{self, BoxSpec, MeshPartition, Region};
use crate::overset::{
    couple_setup, step_coupled, InterfaceExchange, Session, SessionKind, SessionRunner,
};
use crate::runtime::autotune::{autotune, standard_registry, TuningReport};
use crate::runtime::config::{CaseConfig, DeformKind, MeshConfig, MetricsKind, PhysicsConfig};
use crate::runtime::stats;
use crate::solver::{
    Coefficient, IdentityPrecond, JacobiPrecond, LevelOperator, Pmg, PmgConfig, PmgPrecond,
    PmgProblem, Precond,
};
use crate::timestepper::{
    FlowSolvers, FlowState, MaterialProps, ScalarBc, ScalarSolvers, SimDomain,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct CaseSummary {
    pub e_global: u64,
    pub order: usize,
    pub gridpoints: u64,
    pub steps: u64,
    pub final_time: f64,
    pub stats_block: String,
    pub tuning_report: String,
    pub flops_per_rank: f64,
    pub log: String,
}

fn build_mesh_from_config(m: &MeshConfig, order: usize, comm: &Comm) -> Result<MeshPartition> {
    let domain = BoxSpec::new(m.box_lo, m.box_hi);
    let mut mesh = mesh::build_box_mesh(m.extents, domain, order, comm)?;
    let walls = m.walls;
    mesh::retag_boundary(&mut mesh, |axis, side| walls[axis][side as usize]);
    if let Some(y) = m.solid_above_y {
        mesh::assign_regions(&mut mesh, |c| {
            if c[1] > y {
                Region::Solid
            } else {
                Region::Fluid
            }
        });
    }
    match m.deform {
        DeformKind::None => {}
        DeformKind::Sinusoidal(amp) => {
            let ly = m.box_hi[1] - m.box_lo[1];
            let y0 = m.box_lo[1];
            mesh::deform(&mut mesh, |x| {
                [
                    x[0] + amp * (std::f64::consts::PI * (x[1] - y0) / ly).sin(),
                    x[1],
                    x[2],
                ]
            })?;
        }
    }
    Ok(mesh)
}

fn field3(names: &[String; 3]) -> Result<[FieldFn; 3]> {
    Ok([
        named_field(&names[0])?,
        named_field(&names[1])?,
        named_field(&names[2])?,
    ])
}

fn region_coefficients(mesh: &MeshPartition, p: &PhysicsConfig) -> (Coefficient, Coefficient) {
    let props = MaterialProps {
        re: p.re,
        pr: p.pr,
        rho_cp: p.rho_cp,
        conductivity: p.conductivity,
    };
    let kappa: Vec<f64> = mesh
        .elements
        .iter()
        .map(|e| match e.region {
            Region::Fluid => props.fluid_kappa(),
            Region::Solid => p.conductivity,
        })
        .collect();
    let rho_cp: Vec<f64> = mesh
        .elements
        .iter()
        .map(|e| match e.region {
            Region::Fluid => 1.0,
            Region::Solid => p.rho_cp,
        })
        .collect();
    (
        Coefficient::PerElement(kappa),
        Coefficient::PerElement(rho_cp),
    )
}

fn pressure_preconditioner(
    cfg: &CaseConfig,
    mesh: &MeshPartition,
    disc: Arc<crate::mesh::Discretization>,
    comm: &Comm,
) -> Result<Box<dyn Precond + Send>> {
    match cfg.pressure.preconditioner.as_str() {
        "jacobi" => {
            let op = LevelOperator::new(
                disc,
                Coefficient::Uniform(1.0),
                Coefficient::Uniform(0.0),
                vec![false; mesh.n_local_slots()],
                comm,
            )?;
            Ok(Box::new(JacobiPrecond::new(&op)))
        }
        "none" => Ok(Box::new(IdentityPrecond)),
        _ => {
            let mut pcfg = PmgConfig::for_order(mesh.order);
            if let Some(s) = &cfg.pressure.pmg_schedule {
                pcfg.schedule = s.clone();
            }
            pcfg.cheb_order = cfg.pressure.chebyshev_order;
            let problem = PmgProblem {
                mesh,
                h_laplace: Coefficient::Uniform(1.0),
                h_mass: Coefficient::Uniform(0.0),
                dirichlet: |_| false,
            };
            let pre = if cfg.pressure.precision == "fp32" {
                PmgPrecond::F32(Pmg::<f32>::build(&problem, disc, comm, &pcfg)?)
            } else {
                PmgPrecond::F64(Pmg::<f64>::build(&problem, disc, comm, &pcfg)?)
            };
            Ok(Box::new(pre))
        }
    }
}

struct BuiltSession {
    runner: SessionRunner,
    with_flow: bool,
    nq: usize,
}

fn build_session(
    cfg: &CaseConfig,
    mesh_cfg: &MeshConfig,
    phys: &PhysicsConfig,
    order: usize,
    session_id: u32,
    session_comm: Comm,
) -> Result<BuiltSession> {
    let mesh = build_mesh_from_config(mesh_cfg, order, &session_comm)?;
    let kind = if phys.kind == "solid" {
        SessionKind::Solid
    } else {
        SessionKind::FluidCht
    };
    let needs_advection = kind == SessionKind::FluidCht;
    let nq = cfg.general.nq().max(order);
    let dom = SimDomain::build(
        mesh,
        &session_comm,
        needs_advection.then_some(nq),
    )?;
    let n = dom.disc.n_slots();
    let (kappa, rho_cp) = region_coefficients(&dom.mesh, phys);
    let scalar_solvers = ScalarSolvers::build(
        &dom,
        &session_comm,
        kappa,
        rho_cp,
        cfg.scalar.tolerance,
        cfg.scalar.max_iterations,
    )?;
    let props = MaterialProps {
        re: phys.re,
        pr: phys.pr,
        rho_cp: phys.rho_cp,
        conductivity: phys.conductivity,
    };
    let with_flow = kind == SessionKind::FluidCht && phys.solve_flow;
    let flow_solvers = if with_flow {
        let pre = pressure_preconditioner(cfg, &dom.mesh, dom.disc.clone(), &session_comm)?;
        Some(FlowSolvers::build(
            &dom,
            &session_comm,
            pre,
            cfg.pressure.projection,
            cfg.pressure.tolerance,
            cfg.velocity.tolerance,
            cfg.pressure.max_iterations,
            field3(&phys.bc_velocity)?,
            None,
        )?)
    } else {
        None
    };
    let mut state = FlowState::new(n, cfg.general.integrator_order)?;
    // initial conditions
    let t0_field = named_field(&phys.initial_temperature)?;
    let q_field = named_field(&phys.source)?;
    let u0 = field3(&phys.initial_velocity)?;
    for s in 0..n {
        let p = dom.disc.slot_coords(s);
        state.temp[s] = t0_field(p, 0.0);
        state.q[s] = q_field(p, 0.0);
        for c in 0..3 {
            state.u[c][s] = u0[c](p, 0.0);
        }
    }
    let prescribed_velocity = match (&phys.velocity_field, with_flow) {
        (Some(vf), false) => {
            let f = field3(vf)?;
            // set the initial prescribed field (fluid elements only)
            let nodes = dom.disc.nodes_per_element;
            for (e, el) in dom.mesh.elements.iter().enumerate() {
                for i in 0..nodes {
                    let s = e * nodes + i;
                    let p = dom.disc.slot_coords(s);
                    for c in 0..3 {
                        state.u[c][s] = if el.region == Region::Fluid {
                            f[c](p, 0.0)
                        } else {
                            0.0
                        };
                    }
                }
            }
            Some(f)
        }
        _ => None,
    };
    let scalar_bc = ScalarBc {
        dirichlet: named_field(&phys.bc_temperature)?,
        neumann_flux: crate::fields::flux_from_field(named_field(&phys.bc_heat_flux)?),
    };
    Ok(BuiltSession {
        runner: SessionRunner {
            session: Session {
                id: session_id,
                kind,
                dom,
                comm: session_comm,
            },
            state,
            scalar_solvers,
            flow_solvers,
            scalar_bc,
            props,
            prescribed_velocity,
        },
        with_flow,
        nq,
    })
}

/// Emit one statistics block collectively: min/max/flops reduced over the
/// communicator, the row structure from rank 0's timer tree.
pub fn emit_stats_collective(step: u64, total_elapsed: f64, comm: &Comm) -> Result<String> {
    let snap = stats::snapshot();
    let solve = snap
        .rows
        .iter()
        .find(|r| r.depth == 1 && r.name == "solve")
        .map(|r| r.seconds)
        .unwrap_or(0.0);
    let mn = comm.allreduce_scalar(solve, ReduceOp::Min)?;
    let mx = comm.allreduce_scalar(solve, ReduceOp::Max)?;
    let fl = comm.allreduce_scalar(crate::flops::weighted_total(), ReduceOp::Sum)?
        / comm.size() as f64;
    Ok(stats::emit_stats(
        &snap,
        step,
        total_elapsed,
        Some(stats::SolveSummary {
            solve_min: mn,
            solve_max: mx,
            flops_per_rank: fl,
        }),
    ))
}

struct RankOutput {
    summary: CaseSummary,
}

/// Run a case end to end. Collective orchestration happens inside the
/// spawned rank harness; rank 0's log and summary are returned.
pub fn run_case(
    cfg: &CaseConfig,
    out_dir: Option<&Path>,
    force_variants: &[(String, usize)],
) -> Result<CaseSummary> {
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
    }
    let scheduler = cfg.scheduler()?;
    let out_dir: Option<PathBuf> = out_dir.map(|p| p.to_path_buf());
    let results: Vec<Result<Option<RankOutput>>> =
        spawn(cfg.comm.ranks, scheduler, |comm| {
            run_case_rank(cfg, out_dir.as_deref(), force_variants, comm)
        })?;
    let mut first: Option<CaseSummary> = None;
    for r in results {
        match r {
            Ok(Some(out)) => first = Some(out.summary),
            Ok(None) => {}
            Err(e) => return Err(e),
        }
    }
    first.ok_or_else(|| Error::Harness {
        rank: 0,
        msg: "no summary produced".into(),
    })
}

fn run_case_rank(
    cfg: &CaseConfig,
    out_dir: Option<&Path>,
    force_variants: &[(String, usize)],
    comm: &Comm,
) -> Result<Option<RankOutput>> {
    stats::reset();
    crate::flops::reset();
    let mut log = String::new();
    if comm.rank() == 0 {
        let _ = writeln!(log, "case configuration (defaults applied):");
        log.push_str(&crate::runtime::config::serialize_config(cfg));
    }
    let steps = match cfg.general.end_time {
        Some(t) => (t / cfg.general.dt).round() as u64,
        None => cfg.general.num_steps,
    };
    let dt = cfg.general.dt;
    let t_start = std::time::Instant::now();

    if cfg.sessions.is_empty() {
        // ---- single session ----
        let built = build_session(
            cfg,
            &cfg.mesh,
            &cfg.physics,
            cfg.general.polynomial_order,
            0,
            comm.split(0, comm.rank())?,
        )?;
        let mut runner = built.runner;
        let dom_n = runner.session.dom.disc.n_slots();
        let _ = dom_n;
        // autotune
        let tuning_report = {
            let mask_op = LevelOperator::new(
                runner.session.dom.disc.clone(),
                Coefficient::Uniform(1.0),
                Coefficient::Uniform(0.0),
                vec![false; runner.session.dom.disc.n_slots()],
                &runner.session.comm,
            )?;
            let adv = match runner.session.dom.adv.as_ref() {
                Some(_) => Some(Arc::new(crate::timestepper::AdvectionKernel::build(
                    &runner.session.dom.disc,
                    built.nq,
                )?)),
                None => None,
            };
            let mut reg = standard_registry(
                runner.session.dom.disc.clone(),
                Arc::new(mask_op),
                adv,
            );
            for (op, v) in force_variants {
                reg.force(op, *v)?;
            }
            let report: TuningReport = autotune(&mut reg, &runner.session.comm)?;
            report.render()
        };
        if comm.rank() == 0 {
            log.push_str(&tuning_report);
        }
        // flops/rank reports the solve, not the tuning battery
        crate::flops::reset();
        let mut metrics: Vec<(u64, f64, f64)> = Vec::new();
        let mut last_stats = String::new();
        let with_adv =
            runner.session.kind == SessionKind::FluidCht && runner.session.dom.adv.is_some();
        for step in 1..=steps {
            {
                let _solve = stats::scoped("solve");
                {
                    let _t = stats::scoped("udfExecuteStep");
                }
                {
                    let _t = stats::scoped("udfProperties");
                }
                runner.advance(dt, None, with_adv)?;
            }
            if cfg.general.metrics == MetricsKind::KineticEnergy {
                let dom = &runner.session.dom;
                let n = dom.disc.n_slots();
                let mut e = vec![0.0; n];
                for s in 0..n {
                    e[s] = 0.5
                        * (runner.state.u[0][s] * runner.state.u[0][s]
                            + runner.state.u[1][s] * runner.state.u[1][s]
                            + runner.state.u[2][s] * runner.state.u[2][s]);
                }
                let ke = dom.volume_integral(&e, &runner.session.comm)?;
                metrics.push((step, runner.state.t, ke));
            }
            if cfg.general.stats_interval > 0 && step % cfg.general.stats_interval == 0 {
                let block =
                    emit_stats_collective(step, t_start.elapsed().as_secs_f64(), comm)?;
                if comm.rank() == 0 {
                    log.push_str(&block);
                    last_stats = block;
                }
            }
            if cfg.general.write_interval > 0 && step % cfg.general.write_interval == 0 {
                if let Some(dir) = out_dir {
                    let path = dir.join(format!("fields_{step:06}.msem"));
                    mesh::io::dump(
                        &runner.session.dom.mesh,
                        &[
                            ("temperature", runner.state.temp.as_slice()),
                            ("velocity_x", runner.state.u[0].as_slice()),
                            ("velocity_y", runner.state.u[1].as_slice()),
                            ("velocity_z", runner.state.u[2].as_slice()),
                            ("pressure", runner.state.p.as_slice()),
                        ],
                        &runner.session.comm,
                        path,
                    )?;
                }
            }
        }
        let final_block = emit_stats_collective(steps, t_start.elapsed().as_secs_f64(), comm)?;
        if comm.rank() == 0 {
            if last_stats.is_empty() {
                last_stats = final_block.clone();
            }
            log.push_str(&final_block);
        }
        if let (Some(dir), MetricsKind::KineticEnergy) = (out_dir, cfg.general.metrics) {
            if comm.rank() == 0 {
                let mut csv = String::from("step,time,kinetic_energy\n");
                for (s, t, ke) in &metrics {
                    let _ = writeln!(csv, "{s},{t},{ke}");
                }
                std::fs::write(dir.join("metrics.csv"), csv)?;
            }
        }
        let mesh = &runner.session.dom.mesh;
        let n_grid = mesh.gridpoints();
        let flops = comm.allreduce_scalar(crate::flops::weighted_total(), ReduceOp::Sum)?
            / comm.size() as f64;
        if comm.rank() == 0 {
            let _ = writeln!(
                log,
                "run complete: E = {}, N = {}, n = E*N^3 = {}, steps = {}, flops/rank = {}",
                mesh.e_global,
                mesh.order,
                n_grid,
                steps,
                stats::sci5(flops)
            );
            return Ok(Some(RankOutput {
                summary: CaseSummary {
                    e_global: mesh.e_global,
                    order: mesh.order,
                    gridpoints: n_grid,
                    steps,
                    final_time: runner.state.t,
                    stats_block: last_stats,
                    tuning_report,
                    flops_per_rank: flops,
                    log,
                },
            }));
        }
        Ok(None)
    } else {
        // ---- multi-session overset ----
        let mut start = 0usize;
        let mut my_session = usize::MAX;
        let mut color = 0usize;
        for (i, s) in cfg.sessions.iter().enumerate() {
            if comm.rank() >= start && comm.rank() < start + s.ranks {
                my_session = i;
                color = i;
            }
            start += s.ranks;
        }
        if my_session == usize::MAX {
            return Err(Error::Config("rank not covered by session blocks".into()));
        }
        let scfg = &cfg.sessions[my_session];
        let sub = comm.split(color, comm.rank())?;
        let order = scfg
            .polynomial_order
            .unwrap_or(cfg.general.polynomial_order);
        let built = build_session(cfg, &scfg.mesh, &scfg.physics, order, my_session as u32, sub)?;
        let mut runner = built.runner;
        let mut ex: InterfaceExchange = couple_setup(
            &runner.session,
            comm,
            FindConfig::default(),
            cfg.general.exchange_order,
            cfg.general.corrections,
            true,
            built.with_flow,
        )?;
        // seed the ring with initial fields
        {
            let state_t = runner.state.t;
            let (session, state) = (&runner.session, &runner.state);
            ex.exchange(session, state, state_t, false, comm)?;
        }
        let mut last_stats = String::new();
        for step in 1..=steps {
            {
                let _solve = stats::scoped("solve");
                {
                    let _t = stats::scoped("udfExecuteStep");
                }
                step_coupled(&mut runner, &mut ex, dt, comm)?;
            }
            if cfg.general.stats_interval > 0 && step % cfg.general.stats_interval == 0 {
                let block =
                    emit_stats_collective(step, t_start.elapsed().as_secs_f64(), comm)?;
                if comm.rank() == 0 {
                    log.push_str(&block);
                    last_stats = block;
                }
            }
            if cfg.general.write_interval > 0 && step % cfg.general.write_interval == 0 {
                if let Some(dir) = out_dir {
                    let path = dir.join(format!(
                        "session_{}_{step:06}.msem",
                        cfg.sessions[my_session].name
                    ));
                    mesh::io::dump(
                        &runner.session.dom.mesh,
                        &[("temperature", runner.state.temp.as_slice())],
                        &runner.session.comm,
                        path,
                    )?;
                }
            }
        }
        let final_block = emit_stats_collective(steps, t_start.elapsed().as_secs_f64(), comm)?;
        if comm.rank() == 0 {
            if last_stats.is_empty() {
                last_stats = final_block.clone();
            }
            log.push_str(&final_block);
        }
        let e_total = comm.allreduce_u64(
            runner.session.dom.mesh.elements.len() as u64,
            ReduceOp::Sum,
        )?;
        let n_grid = e_total * (order as u64).pow(3);
        let flops = comm.allreduce_scalar(crate::flops::weighted_total(), ReduceOp::Sum)?
            / comm.size() as f64;
        if comm.rank() == 0 {
            let _ = writeln!(
                log,
                "run complete: E = {}, N = {}, n = E*N^3 = {}, steps = {}, flops/rank = {}",
                e_total,
                order,
                n_grid,
                steps,
                stats::sci5(flops)
            );
            return Ok(Some(RankOutput {
                summary: CaseSummary {
                    e_global: e_total,
                    order,
                    gridpoints: n_grid,
                    steps,
                    final_time: runner.state.t,
                    stats_block: last_stats,
                    tuning_report: String::new(),
                    flops_per_rank: flops,
                    log,
                },
            }));
        }
        Ok(None)
    }
}

/// Autotune only: build the case's discretization, run the variant battery,
/// and return the rendered report.
pub fn tune_case(cfg: &CaseConfig) -> Result<String> {
    let scheduler = cfg.scheduler()?;
    let results: Vec<Result<Option<String>>> = spawn(cfg.comm.ranks, scheduler, |comm| {
        let mesh = build_mesh_from_config(&cfg.mesh, cfg.general.polynomial_order, comm)?;
        let disc = Arc::new(crate::mesh::Discretization::build(
            &mesh,
            comm,
            mesh.order,
        )?);
        let op = LevelOperator::new(
            disc.clone(),
            Coefficient::Uniform(1.0),
            Coefficient::Uniform(0.0),
            vec![false; disc.n_slots()],
            comm,
        )?;
        let adv = Arc::new(crate::timestepper::AdvectionKernel::build(
            &disc,
            cfg.general.nq(),
        )?);
        let mut reg = standard_registry(disc, Arc::new(op), Some(adv));
        let report = autotune(&mut reg, comm)?;
        Ok((comm.rank() == 0).then(|| report.render()))
    })?;
    for r in results {
        if let Some(text) = r? {
            return Ok(text);
        }
    }
    Err(Error::Harness {
        rank: 0,
        msg: "no tuning report produced".into(),
    })
}

#[derive(Debug, Clone)]
pub struct ScalePoint {
    pub ranks: usize,
    pub points_per_rank: f64,
    pub time_per_step: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone)]
pub struct ScaleStudy {
    pub points: Vec<ScalePoint>,
    /// points-per-rank at 80% efficiency from a log-linear fit, if the
    /// efficiency curve crosses 0.8 in the sampled range
    pub n_08: Option<f64>,
}

impl ScaleStudy {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6} {:>14} {:>14} {:>12}", "ranks", "n/P", "s/step", "efficiency");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{:>6} {:>14.0} {:>14.6} {:>12.3}",
                p.ranks, p.points_per_rank, p.time_per_step, p.efficiency
            );
        }
        match self.n_08 {
            Some(n) => {
                let _ = writeln!(out, "n_0.8 = {:.3e} points/rank", n);
            }
            None => {
                let _ = writeln!(out, "n_0.8 not bracketed by the sampled rank counts");
            }
        }
        out
    }
}

/// Strong-scaling study: run a few steps of the case at each rank count,
/// report time-per-step, efficiency, and the n_0.8 fit. A derived metric
/// only; never gates acceptance.
pub fn scale_study(cfg: &CaseConfig, ranks_list: &[usize]) -> Result<ScaleStudy> {
    let mut reduced = cfg.clone();
    reduced.general.num_steps = reduced.general.num_steps.min(10).max(2);
    reduced.general.end_time = None;
    reduced.general.write_interval = 0;
    reduced.general.stats_interval = 0;
    reduced.general.metrics = MetricsKind::None;
    let mut points = Vec::new();
    let mut t0p0: Option<f64> = None;
    for &p in ranks_list {
        let e_total = (reduced.mesh.extents.0 * reduced.mesh.extents.1 * reduced.mesh.extents.2)
            as u64;
        if (p as u64) > e_total {
            continue;
        }
        reduced.comm.ranks = p;
        reduced.sessions.clear();
        let t0 = std::time::Instant::now();
        let summary = run_case(&reduced, None, &[])?;
        let wall = t0.elapsed().as_secs_f64();
        let per_step = wall / summary.steps as f64;
        let work = per_step * p as f64;
        let eff = match t0p0 {
            None => {
                t0p0 = Some(work);
                1.0
            }
            Some(base) => base / work,
        };
        points.push(ScalePoint {
            ranks: p,
            points_per_rank: summary.gridpoints as f64 / p as f64,
            time_per_step: per_step,
            efficiency: eff,
        });
    }
    // fit crossing of 0.8 on (ln n/P, eff), scanning ascending n/P
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.points_per_rank.partial_cmp(&b.points_per_rank).unwrap());
    let mut n08 = None;
    for w in sorted.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if (a.efficiency - 0.8) * (b.efficiency - 0.8) <= 0.0 && a.efficiency != b.efficiency {
            let t = (0.8 - a.efficiency) / (b.efficiency - a.efficiency);
            let ln = a.points_per_rank.ln() + t * (b.points_per_rank.ln() - a.points_per_rank.ln());
            n08 = Some(ln.exp());
            break;
        }
    }
    Ok(ScaleStudy { points, n_08: n08 })
}
