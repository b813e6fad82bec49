//! Case configuration: a sectioned key = value file with full validation,
//! line-numbered errors, and documented defaults (N = 7, integrator order
//! 2, tolerance 1e-6, N_q by the 3/2 rule).

use crate::comm::Scheduler;
use crate::error::{Error, Result};
use crate::mesh::FaceTag;
use crate::timestepper::dealias_order;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralConfig {
    pub dt: f64,
    pub num_steps: u64,
    pub end_time: Option<f64>,
    pub polynomial_order: usize,
    pub integrator_order: usize,
    pub dealiasing_order: Option<usize>,
    pub write_interval: u64,
    pub stats_interval: u64,
    pub exchange_order: usize,
    pub corrections: usize,
    pub metrics: MetricsKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsKind {
    None,
    KineticEnergy,
}

impl GeneralConfig {
    pub fn nq(&self) -> usize {
        self.dealiasing_order
            .unwrap_or_else(|| dealias_order(self.polynomial_order))
    }
}

impl Default for GeneralConfig {
    fn default() -> Self {
        GeneralConfig {
            dt: 1e-3,
            num_steps: 10,
            end_time: None,
            polynomial_order: 7,
            integrator_order: 2,
            dealiasing_order: None,
            write_interval: 0,
            stats_interval: 500,
            exchange_order: 0,
            corrections: 0,
            metrics: MetricsKind::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub extents: (usize, usize, usize),
    pub box_lo: [f64; 3],
    pub box_hi: [f64; 3],
    pub deform: DeformKind,
    /// wall tags indexed [axis][side]
    pub walls: [[FaceTag; 2]; 3],
    /// elements with centroid x-coordinate above this become solid (CHT)
    pub solid_above_y: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeformKind {
    None,
    Sinusoidal(f64),
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            extents: (2, 2, 2),
            box_lo: [0.0; 3],
            box_hi: [1.0; 3],
            deform: DeformKind::None,
            walls: [[FaceTag::Dirichlet; 2]; 3],
            solid_above_y: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsConfig {
    pub kind: String, // "fluid_cht" | "solid"
    pub re: f64,
    pub pr: f64,
    pub rho_cp: f64,
    pub conductivity: f64,
    pub solve_flow: bool,
    pub source: String,
    pub velocity_field: Option<[String; 3]>,
    pub initial_temperature: String,
    pub initial_velocity: [String; 3],
    pub bc_temperature: String,
    pub bc_heat_flux: String,
    pub bc_velocity: [String; 3],
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            kind: "fluid_cht".into(),
            re: 100.0,
            pr: 1.0,
            rho_cp: 1.0,
            conductivity: 1.0,
            solve_flow: true,
            source: "zero".into(),
            velocity_field: None,
            initial_temperature: "zero".into(),
            initial_velocity: ["zero".into(), "zero".into(), "zero".into()],
            bc_temperature: "zero".into(),
            bc_heat_flux: "zero".into(),
            bc_velocity: ["zero".into(), "zero".into(), "zero".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub preconditioner: String, // "pmg" | "jacobi" | "none"
    pub pmg_schedule: Option<Vec<usize>>,
    pub chebyshev_order: usize,
    pub projection: usize,
    pub precision: String, // "fp64" | "fp32"
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tolerance: 1e-6,
            max_iterations: 2000,
            preconditioner: "pmg".into(),
            pmg_schedule: None,
            chebyshev_order: 6,
            projection: 8,
            precision: "fp64".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommConfig {
    pub ranks: usize,
    pub seed: u64,
    pub scheduler: String, // "concurrent" | "serial"
}

impl Default for CommConfig {
    fn default() -> Self {
        CommConfig {
            ranks: 1,
            seed: 0,
            scheduler: "concurrent".into(),
        }
    }
}

/// Per-session block for overset cases.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub name: String,
    pub kind: String,
    pub ranks: usize,
    pub polynomial_order: Option<usize>,
    pub mesh: MeshConfig,
    pub physics: PhysicsConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseConfig {
    pub general: GeneralConfig,
    pub mesh: MeshConfig,
    pub physics: PhysicsConfig,
    pub pressure: SolverSection,
    pub velocity: SolverSection,
    pub scalar: SolverSection,
    pub comm: CommConfig,
    pub sessions: Vec<SessionConfig>,
}

impl Default for CaseConfig {
    fn default() -> Self {
        CaseConfig {
            general: GeneralConfig::default(),
            mesh: MeshConfig::default(),
            physics: PhysicsConfig::default(),
            pressure: SolverSection::default(),
            velocity: SolverSection {
                tolerance: 1e-8,
                preconditioner: "jacobi".into(),
                ..SolverSection::default()
            },
            scalar: SolverSection {
                tolerance: 1e-8,
                preconditioner: "jacobi".into(),
                ..SolverSection::default()
            },
            comm: CommConfig::default(),
            sessions: Vec::new(),
        }
    }
}

impl CaseConfig {
    pub fn scheduler(&self) -> Result<Scheduler> {
        self.comm.scheduler.parse()
    }
}

fn err_at(line: usize, msg: impl Into<String>) -> Error {
    Error::ConfigAt {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| err_at(line, format!("key '{key}' expects a number, got '{v}'")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| err_at(line, format!("key '{key}' expects an integer, got '{v}'")))
}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64> {
    v.parse::<u64>()
        .map_err(|_| err_at(line, format!("key '{key}' expects an integer, got '{v}'")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err_at(line, format!("key '{key}' expects true/false, got '{v}'"))),
    }
}

fn parse_wall(line: usize, v: &str) -> Result<FaceTag> {
    match v {
        "dirichlet" => Ok(FaceTag::Dirichlet),
        "neumann" => Ok(FaceTag::Neumann),
        "interface" => Ok(FaceTag::Interface),
        _ => Err(err_at(
            line,
            format!("wall tag must be dirichlet|neumann|interface, got '{v}'"),
        )),
    }
}

fn apply_mesh_key(m: &mut MeshConfig, line: usize, key: &str, v: &str) -> Result<bool> {
    match key {
        "extents" => {
            let parts: Vec<usize> = v
                .split_whitespace()
                .map(|s| parse_usize(line, key, s))
                .collect::<Result<_>>()?;
            if parts.len() != 3 {
                return Err(err_at(line, "extents expects three integers"));
            }
            m.extents = (parts[0], parts[1], parts[2]);
        }
        "box" => {
            let parts: Vec<f64> = v
                .split_whitespace()
                .map(|s| parse_f64(line, key, s))
                .collect::<Result<_>>()?;
            if parts.len() != 6 {
                return Err(err_at(line, "box expects x0 x1 y0 y1 z0 z1"));
            }
            m.box_lo = [parts[0], parts[2], parts[4]];
            m.box_hi = [parts[1], parts[3], parts[5]];
        }
        "deform" => {
            let parts: Vec<&str> = v.split_whitespace().collect();
            m.deform = match parts.first().copied() {
                Some("none") => DeformKind::None,
                Some("sinusoidal") => {
                    let amp = parts
                        .get(1)
                        .ok_or_else(|| err_at(line, "deform sinusoidal expects an amplitude"))?;
                    DeformKind::Sinusoidal(parse_f64(line, key, amp)?)
                }
                _ => return Err(err_at(line, format!("unknown deform '{v}'"))),
            };
        }
        "wallX0" => m.walls[0][0] = parse_wall(line, v)?,
        "wallX1" => m.walls[0][1] = parse_wall(line, v)?,
        "wallY0" => m.walls[1][0] = parse_wall(line, v)?,
        "wallY1" => m.walls[1][1] = parse_wall(line, v)?,
        "wallZ0" => m.walls[2][0] = parse_wall(line, v)?,
        "wallZ1" => m.walls[2][1] = parse_wall(line, v)?,
        "solidAboveY" => m.solid_above_y = Some(parse_f64(line, key, v)?),
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_physics_key(p: &mut PhysicsConfig, line: usize, key: &str, v: &str) -> Result<bool> {
    match key {
        "kind" => {
            if v != "fluid_cht" && v != "solid" {
                return Err(err_at(line, format!("kind must be fluid_cht|solid, got '{v}'")));
            }
            p.kind = v.into();
        }
        "Re" => p.re = parse_f64(line, key, v)?,
        "Pr" => p.pr = parse_f64(line, key, v)?,
        "rhoCp" => p.rho_cp = parse_f64(line, key, v)?,
        "conductivity" => p.conductivity = parse_f64(line, key, v)?,
        "solveFlow" => p.solve_flow = parse_bool(line, key, v)?,
        "source" => p.source = v.into(),
        "velocityFieldX" => set_vf(p, 0, v),
        "velocityFieldY" => set_vf(p, 1, v),
        "velocityFieldZ" => set_vf(p, 2, v),
        "initialTemperature" => p.initial_temperature = v.into(),
        "initialVelocityX" => p.initial_velocity[0] = v.into(),
        "initialVelocityY" => p.initial_velocity[1] = v.into(),
        "initialVelocityZ" => p.initial_velocity[2] = v.into(),
        "bcTemperature" => p.bc_temperature = v.into(),
        "bcHeatFlux" => p.bc_heat_flux = v.into(),
        "bcVelocityX" => p.bc_velocity[0] = v.into(),
        "bcVelocityY" => p.bc_velocity[1] = v.into(),
        "bcVelocityZ" => p.bc_velocity[2] = v.into(),
        _ => return Ok(false),
    }
    // validate named fields eagerly for line-numbered errors
    match key {
        "source" | "initialTemperature" | "bcTemperature" | "bcHeatFlux" => {
            crate::fields::named_field(v).map_err(|e| err_at(line, e.to_string()))?;
        }
        k if k.starts_with("initialVelocity")
            || k.starts_with("bcVelocity")
            || k.starts_with("velocityField") =>
        {
            crate::fields::named_field(v).map_err(|e| err_at(line, e.to_string()))?;
        }
        _ => {}
    }
    Ok(true)
}

fn set_vf(p: &mut PhysicsConfig, c: usize, v: &str) {
    let mut vf = p
        .velocity_field
        .clone()
        .unwrap_or(["zero".into(), "zero".into(), "zero".into()]);
    vf[c] = v.into();
    p.velocity_field = Some(vf);
}

fn apply_solver_key(s: &mut SolverSection, line: usize, key: &str, v: &str) -> Result<bool> {
    match key {
        "tolerance" => s.tolerance = parse_f64(line, key, v)?,
        "maxIterations" => s.max_iterations = parse_usize(line, key, v)?,
        "preconditioner" => {
            if !["pmg", "jacobi", "none"].contains(&v) {
                return Err(err_at(
                    line,
                    format!("preconditioner must be pmg|jacobi|none, got '{v}'"),
                ));
            }
            s.preconditioner = v.into();
        }
        "pMGSchedule" => {
            let sched: Vec<usize> = v
                .split_whitespace()
                .map(|t| parse_usize(line, key, t))
                .collect::<Result<_>>()?;
            s.pmg_schedule = Some(sched);
        }
        "chebyshevOrder" => s.chebyshev_order = parse_usize(line, key, v)?,
        "projection" => s.projection = parse_usize(line, key, v)?,
        "precision" => {
            if v != "fp64" && v != "fp32" {
                return Err(err_at(line, format!("precision must be fp64|fp32, got '{v}'")));
            }
            s.precision = v.into();
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parse a case file; unknown sections and keys are rejected with line
/// numbers, and all defaults are applied.
pub fn parse_config(text: &str) -> Result<CaseConfig> {
    let mut cfg = CaseConfig::default();
    let mut section = String::new();
    let mut session_idx: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if let Some(sname) = name.strip_prefix("SESSION.") {
                cfg.sessions.push(SessionConfig {
                    name: sname.to_string(),
                    kind: "solid".into(),
                    ranks: 1,
                    polynomial_order: None,
                    mesh: MeshConfig::default(),
                    physics: PhysicsConfig {
                        kind: "solid".into(),
                        solve_flow: false,
                        ..PhysicsConfig::default()
                    },
                });
                session_idx = Some(cfg.sessions.len() - 1);
                section = "SESSION".into();
                continue;
            }
            match name {
                "GENERAL" | "MESH" | "PHYSICS" | "PRESSURE" | "VELOCITY" | "SCALAR" | "COMM" => {
                    section = name.to_string();
                    session_idx = None;
                }
                other => return Err(err_at(line_no, format!("unknown section [{other}]"))),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err_at(line_no, format!("expected key = value, got '{line}'")))?;
        let key = key.trim();
        let v = value.trim();
        let known = match section.as_str() {
            "GENERAL" => {
                let g = &mut cfg.general;
                match key {
                    "dt" => {
                        g.dt = parse_f64(line_no, key, v)?;
                        true
                    }
                    "numSteps" => {
                        g.num_steps = parse_u64(line_no, key, v)?;
                        true
                    }
                    "endTime" => {
                        g.end_time = Some(parse_f64(line_no, key, v)?);
                        true
                    }
                    "polynomialOrder" => {
                        g.polynomial_order = parse_usize(line_no, key, v)?;
                        true
                    }
                    "integratorOrder" => {
                        g.integrator_order = parse_usize(line_no, key, v)?;
                        true
                    }
                    "dealiasingOrder" => {
                        g.dealiasing_order = Some(parse_usize(line_no, key, v)?);
                        true
                    }
                    "writeInterval" => {
                        g.write_interval = parse_u64(line_no, key, v)?;
                        true
                    }
                    "statsInterval" => {
                        g.stats_interval = parse_u64(line_no, key, v)?;
                        true
                    }
                    "exchangeOrder" => {
                        g.exchange_order = parse_usize(line_no, key, v)?;
                        true
                    }
                    "corrections" => {
                        g.corrections = parse_usize(line_no, key, v)?;
                        true
                    }
                    "metrics" => {
                        g.metrics = match v {
                            "none" => MetricsKind::None,
                            "kineticEnergy" => MetricsKind::KineticEnergy,
                            _ => {
                                return Err(err_at(
                                    line_no,
                                    format!("metrics must be none|kineticEnergy, got '{v}'"),
                                ))
                            }
                        };
                        true
                    }
                    _ => false,
                }
            }
            "MESH" => apply_mesh_key(&mut cfg.mesh, line_no, key, v)?,
            "PHYSICS" => apply_physics_key(&mut cfg.physics, line_no, key, v)?,
            "PRESSURE" => apply_solver_key(&mut cfg.pressure, line_no, key, v)?,
            "VELOCITY" => apply_solver_key(&mut cfg.velocity, line_no, key, v)?,
            "SCALAR" => apply_solver_key(&mut cfg.scalar, line_no, key, v)?,
            "COMM" => {
                let c = &mut cfg.comm;
                match key {
                    "ranks" => {
                        c.ranks = parse_usize(line_no, key, v)?;
                        true
                    }
                    "seed" => {
                        c.seed = parse_u64(line_no, key, v)?;
                        true
                    }
                    "scheduler" => {
                        if v != "concurrent" && v != "serial" {
                            return Err(err_at(
                                line_no,
                                format!("scheduler must be concurrent|serial, got '{v}'"),
                            ));
                        }
                        c.scheduler = v.into();
                        true
                    }
                    _ => false,
                }
            }
            "SESSION" => {
                let s = &mut cfg.sessions[session_idx.unwrap()];
                match key {
                    "kind" => {
                        if v != "fluid_cht" && v != "solid" {
                            return Err(err_at(
                                line_no,
                                format!("kind must be fluid_cht|solid, got '{v}'"),
                            ));
                        }
                        s.kind = v.into();
                        s.physics.kind = v.into();
                        s.physics.solve_flow = v == "fluid_cht";
                        true
                    }
                    "ranks" => {
                        s.ranks = parse_usize(line_no, key, v)?;
                        true
                    }
                    "polynomialOrder" => {
                        s.polynomial_order = Some(parse_usize(line_no, key, v)?);
                        true
                    }
                    _ => {
                        apply_mesh_key(&mut s.mesh, line_no, key, v)?
                            || apply_physics_key(&mut s.physics, line_no, key, v)?
                    }
                }
            }
            "" => {
                return Err(err_at(
                    line_no,
                    format!("key '{key}' appears before any [SECTION] header"),
                ))
            }
            _ => unreachable!(),
        };
        if !known {
            return Err(err_at(
                line_no,
                format!("unknown key '{key}' in section [{section}]"),
            ));
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &CaseConfig) -> Result<()> {
    let g = &cfg.general;
    if g.dt <= 0.0 {
        return Err(Error::Config("dt must be positive".into()));
    }
    if g.polynomial_order < 1 || g.polynomial_order > 15 {
        return Err(Error::Config(format!(
            "polynomialOrder {} out of range 1..=15",
            g.polynomial_order
        )));
    }
    if g.integrator_order < 1 || g.integrator_order > 3 {
        return Err(Error::Config("integratorOrder must be 1..=3".into()));
    }
    if let Some(nq) = g.dealiasing_order {
        if nq < g.polynomial_order {
            return Err(Error::Config(format!(
                "dealiasingOrder {nq} below polynomialOrder {}",
                g.polynomial_order
            )));
        }
    }
    if g.exchange_order > 0 && g.corrections == 0 {
        return Err(Error::Config(
            "exchangeOrder > 0 requires corrections >= 1".into(),
        ));
    }
    if !cfg.sessions.is_empty() {
        let total: usize = cfg.sessions.iter().map(|s| s.ranks).sum();
        if total != cfg.comm.ranks {
            return Err(Error::Config(format!(
                "session ranks sum to {total} but [COMM] ranks = {}",
                cfg.comm.ranks
            )));
        }
    }
    Ok(())
}

fn wall_name(tag: FaceTag) -> &'static str {
    match tag {
        FaceTag::Dirichlet => "dirichlet",
        FaceTag::Neumann => "neumann",
        FaceTag::Interface => "interface",
        FaceTag::Interior => "dirichlet",
    }
}

fn write_mesh(out: &mut String, m: &MeshConfig) {
    let _ = writeln!(out, "extents = {} {} {}", m.extents.0, m.extents.1, m.extents.2);
    let _ = writeln!(
        out,
        "box = {} {} {} {} {} {}",
        m.box_lo[0], m.box_hi[0], m.box_lo[1], m.box_hi[1], m.box_lo[2], m.box_hi[2]
    );
    match m.deform {
        DeformKind::None => {
            let _ = writeln!(out, "deform = none");
        }
        DeformKind::Sinusoidal(a) => {
            let _ = writeln!(out, "deform = sinusoidal {a}");
        }
    }
    for (axis, name) in ["X", "Y", "Z"].iter().enumerate() {
        for (side, sname) in ["0", "1"].iter().enumerate() {
            let _ = writeln!(out, "wall{name}{sname} = {}", wall_name(m.walls[axis][side]));
        }
    }
    if let Some(y) = m.solid_above_y {
        let _ = writeln!(out, "solidAboveY = {y}");
    }
}

fn write_physics(out: &mut String, p: &PhysicsConfig) {
    let _ = writeln!(out, "kind = {}", p.kind);
    let _ = writeln!(out, "Re = {}", p.re);
    let _ = writeln!(out, "Pr = {}", p.pr);
    let _ = writeln!(out, "rhoCp = {}", p.rho_cp);
    let _ = writeln!(out, "conductivity = {}", p.conductivity);
    let _ = writeln!(out, "solveFlow = {}", p.solve_flow);
    let _ = writeln!(out, "source = {}", p.source);
    if let Some(vf) = &p.velocity_field {
        let _ = writeln!(out, "velocityFieldX = {}", vf[0]);
        let _ = writeln!(out, "velocityFieldY = {}", vf[1]);
        let _ = writeln!(out, "velocityFieldZ = {}", vf[2]);
    }
    let _ = writeln!(out, "initialTemperature = {}", p.initial_temperature);
    let _ = writeln!(out, "initialVelocityX = {}", p.initial_velocity[0]);
    let _ = writeln!(out, "initialVelocityY = {}", p.initial_velocity[1]);
    let _ = writeln!(out, "initialVelocityZ = {}", p.initial_velocity[2]);
    let _ = writeln!(out, "bcTemperature = {}", p.bc_temperature);
    let _ = writeln!(out, "bcHeatFlux = {}", p.bc_heat_flux);
    let _ = writeln!(out, "bcVelocityX = {}", p.bc_velocity[0]);
    let _ = writeln!(out, "bcVelocityY = {}", p.bc_velocity[1]);
    let _ = writeln!(out, "bcVelocityZ = {}", p.bc_velocity[2]);
}

fn write_solver(out: &mut String, name: &str, s: &SolverSection) {
    let _ = writeln!(out, "[{name}]");
    let _ = writeln!(out, "tolerance = {}", s.tolerance);
    let _ = writeln!(out, "maxIterations = {}", s.max_iterations);
    let _ = writeln!(out, "preconditioner = {}", s.preconditioner);
    if let Some(sched) = &s.pmg_schedule {
        let txt: Vec<String> = sched.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "pMGSchedule = {}", txt.join(" "));
    }
    let _ = writeln!(out, "chebyshevOrder = {}", s.chebyshev_order);
    let _ = writeln!(out, "projection = {}", s.projection);
    let _ = writeln!(out, "precision = {}", s.precision);
}

/// Serialize a config in canonical form: parse(serialize(c)) == c.
pub fn serialize_config(cfg: &CaseConfig) -> String {
    let mut out = String::new();
    let g = &cfg.general;
    let _ = writeln!(out, "[GENERAL]");
    let _ = writeln!(out, "dt = {}", g.dt);
    let _ = writeln!(out, "numSteps = {}", g.num_steps);
    if let Some(t) = g.end_time {
        let _ = writeln!(out, "endTime = {t}");
    }
    let _ = writeln!(out, "polynomialOrder = {}", g.polynomial_order);
    let _ = writeln!(out, "integratorOrder = {}", g.integrator_order);
    if let Some(nq) = g.dealiasing_order {
        let _ = writeln!(out, "dealiasingOrder = {nq}");
    }
    let _ = writeln!(out, "writeInterval = {}", g.write_interval);
    let _ = writeln!(out, "statsInterval = {}", g.stats_interval);
    let _ = writeln!(out, "exchangeOrder = {}", g.exchange_order);
    let _ = writeln!(out, "corrections = {}", g.corrections);
    let _ = writeln!(
        out,
        "metrics = {}",
        match g.metrics {
            MetricsKind::None => "none",
            MetricsKind::KineticEnergy => "kineticEnergy",
        }
    );
    let _ = writeln!(out, "[MESH]");
    write_mesh(&mut out, &cfg.mesh);
    let _ = writeln!(out, "[PHYSICS]");
    write_physics(&mut out, &cfg.physics);
    write_solver(&mut out, "PRESSURE", &cfg.pressure);
    write_solver(&mut out, "VELOCITY", &cfg.velocity);
    write_solver(&mut out, "SCALAR", &cfg.scalar);
    let _ = writeln!(out, "[COMM]");
    let _ = writeln!(out, "ranks = {}", cfg.comm.ranks);
    let _ = writeln!(out, "seed = {}", cfg.comm.seed);
    let _ = writeln!(out, "scheduler = {}", cfg.comm.scheduler);
    for s in &cfg.sessions {
        let _ = writeln!(out, "[SESSION.{}]", s.name);
        let _ = writeln!(out, "kind = {}", s.kind);
        let _ = writeln!(out, "ranks = {}", s.ranks);
        if let Some(p) = s.polynomial_order {
            let _ = writeln!(out, "polynomialOrder = {p}");
        }
        write_mesh(&mut out, &s.mesh);
        write_physics(&mut out, &s.physics);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_case_gets_documented_defaults() {
        let cfg = parse_config(
            "[MESH]\nextents = 2 2 2\n[GENERAL]\ndt = 0.001\nnumSteps = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.general.polynomial_order, 7);
        assert_eq!(cfg.general.integrator_order, 2);
        assert_eq!(cfg.general.nq(), 11); // 3/2 rule at N = 7
        assert_eq!(cfg.pressure.tolerance, 1e-6);
        assert_eq!(cfg.comm.ranks, 1);
    }

    #[test]
    fn type_error_names_line() {
        let err = parse_config("[GENERAL]\npolynomialOrder = banana\n").unwrap_err();
        match err {
            Error::ConfigAt { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("banana"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_section_rejected() {
        assert!(matches!(
            parse_config("[GENERAL]\nfoo = 1\n"),
            Err(Error::ConfigAt { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("[BANANAS]\n"),
            Err(Error::ConfigAt { line: 1, .. })
        ));
        assert!(parse_config("dt = 1\n").is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let text = "\
[GENERAL]
dt = 0.002
numSteps = 100
polynomialOrder = 5
integratorOrder = 2
[MESH]
extents = 4 4 1
box = 0 6.28 0 6.28 0 1
deform = sinusoidal 0.05
wallY0 = neumann
[PHYSICS]
Re = 250
source = constant 1.5
[PRESSURE]
tolerance = 1e-9
pMGSchedule = 5 3 1
precision = fp32
[COMM]
ranks = 4
scheduler = serial
";
        let cfg = parse_config(text).unwrap();
        let ser = serialize_config(&cfg);
        let cfg2 = parse_config(&ser).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn session_blocks_parse() {
        let text = "\
[GENERAL]
dt = 0.01
numSteps = 10
[COMM]
ranks = 3
[SESSION.left]
kind = solid
ranks = 2
extents = 3 1 1
box = 0 0.6 0 1 0 1
wallX1 = interface
[SESSION.right]
kind = solid
ranks = 1
extents = 3 1 1
box = 0.4 1 0 1 0 1
wallX0 = interface
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.sessions.len(), 2);
        assert_eq!(cfg.sessions[0].ranks, 2);
        assert_eq!(cfg.sessions[0].mesh.walls[0][1], FaceTag::Interface);
        let ser = serialize_config(&cfg);
        assert_eq!(parse_config(&ser).unwrap(), cfg);
    }

    #[test]
    fn session_rank_sum_validated() {
        let text = "\
[GENERAL]
dt = 0.01
numSteps = 1
[COMM]
ranks = 2
[SESSION.a]
kind = solid
ranks = 2
[SESSION.b]
kind = solid
ranks = 2
";
        assert!(parse_config(text).is_err());
    }

    #[test]
    fn bad_field_name_is_line_numbered() {
        let err = parse_config("[PHYSICS]\nsource = banana\n").unwrap_err();
        assert!(matches!(err, Error::ConfigAt { line: 2, .. }));
    }
}
