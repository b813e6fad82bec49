//! Kernel and communication-pattern autotuning.
//!
//! Variants of an operation are cross-checked against each other first
//! (a disagreeing variant is disqualified and logged, never selected),
//! then timed with barrier-bracketed repetitions; the fastest qualified
//! variant wins, ties broken toward the lower index. Selections persist
//! for the run through the process-wide switches in [`crate::tuning`].

use crate::comm::Comm;
use crate::error::{Error, Result};
use crate::mesh::{Discretization, GsOp};
use crate::ref_element::local_grad_sliced;
use crate::tuning;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Fp64,
    Fp32,
}

impl Precision {
    pub fn label(&self) -> &'static str {
        match self {
            Precision::Fp64 => "FP64",
            Precision::Fp32 => "FP32",
        }
    }
}

type RunFn = Box<dyn Fn(&Comm) -> Result<Vec<f64>> + Send>;
type SelectFn = Box<dyn Fn(usize) + Send>;

pub struct Variant {
    pub name: String,
    pub precision: Precision,
    /// execute once, returning the output field for cross-checking
    pub run: RunFn,
    /// counted floating-point operations per run (FP32 weighted 1/2)
    pub flops: f64,
    /// estimated bytes moved per run
    pub bytes: f64,
    /// gridpoints processed per run
    pub dofs: f64,
}

pub struct Operation {
    pub name: String,
    pub variants: Vec<Variant>,
    pub apply_selection: SelectFn,
    /// forced selection (skips timing), from --force-variant
    pub forced: Option<usize>,
}

#[derive(Default)]
pub struct KernelVariantRegistry {
    pub ops: Vec<Operation>,
}

impl KernelVariantRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, op: Operation) {
        self.ops.push(op);
    }

    pub fn force(&mut self, op_name: &str, variant: usize) -> Result<()> {
        for op in &mut self.ops {
            if op.name == op_name {
                if variant >= op.variants.len() {
                    return Err(Error::Config(format!(
                        "operation '{op_name}' has {} variants, cannot force {variant}",
                        op.variants.len()
                    )));
                }
                op.forced = Some(variant);
                return Ok(());
            }
        }
        Err(Error::Config(format!("unknown operation '{op_name}'")))
    }
}

#[derive(Debug, Clone)]
pub struct TuningRow {
    pub operation: String,
    pub variant: String,
    pub precision: &'static str,
    pub gdofs: f64,
    pub bandwidth_gbs: f64,
    pub gflops: f64,
    pub median_seconds: f64,
    pub selected: bool,
    pub disqualified: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TuningReport {
    pub rows: Vec<TuningRow>,
    pub notes: Vec<String>,
}

impl TuningReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "autotune results (operation, variant, precision, GDOFS, GB/s, GFLOPS):"
        );
        for r in &self.rows {
            let mark = if r.disqualified {
                "DISQUALIFIED"
            } else if r.selected {
                "selected"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "  {:<16} {:<14} {:<5} {:>8.3} {:>8.2} {:>8.3}  {}",
                r.operation, r.variant, r.precision, r.gdofs, r.bandwidth_gbs, r.gflops, mark
            );
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        out
    }
}

const WARMUP: usize = 5;
const MEASURED: usize = 20;
const AGREE_TOL: f64 = 1e-12;

fn agrees(a: &[f64], b: &[f64]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= AGREE_TOL * scale)
}

/// Tune every registered operation (collective: timing is bracketed by
/// barriers on the supplied communicator). Selections are applied.
pub fn autotune(registry: &mut KernelVariantRegistry, comm: &Comm) -> Result<TuningReport> {
    let mut report = TuningReport::default();
    for op in &mut registry.ops {
        if op.variants.is_empty() {
            continue;
        }
        // correctness cross-check: reference = variant with the most
        // agreements (ties toward the lower index)
        let outputs: Vec<Vec<f64>> = op
            .variants
            .iter()
            .map(|v| (v.run)(comm))
            .collect::<Result<_>>()?;
        let nv = op.variants.len();
        let mut agree_count = vec![0usize; nv];
        for i in 0..nv {
            for j in 0..nv {
                if agrees(&outputs[i], &outputs[j]) {
                    agree_count[i] += 1;
                }
            }
        }
        let reference = (0..nv)
            .max_by_key(|&i| (agree_count[i], usize::MAX - i))
            .unwrap();
        let qualified: Vec<bool> = (0..nv)
            .map(|i| agrees(&outputs[i], &outputs[reference]))
            .collect();
        for (i, q) in qualified.iter().enumerate() {
            if !q {
                report.notes.push(format!(
                    "operation '{}': variant '{}' disagreed beyond {:.0e} and was disqualified",
                    op.name, op.variants[i].name, AGREE_TOL
                ));
            }
        }
        // timing
        let mut medians = vec![f64::INFINITY; nv];
        if let Some(forced) = op.forced {
            report
                .notes
                .push(format!("operation '{}': variant {} forced", op.name, forced));
            medians[forced] = 0.0;
        } else {
            for (i, v) in op.variants.iter().enumerate() {
                if !qualified[i] {
                    continue;
                }
                for _ in 0..WARMUP {
                    (v.run)(comm)?;
                }
                let mut times = Vec::with_capacity(MEASURED);
                for _ in 0..MEASURED {
                    comm.barrier();
                    let t0 = Instant::now();
                    (v.run)(comm)?;
                    comm.barrier();
                    times.push(t0.elapsed().as_secs_f64());
                }
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = times[times.len() / 2];
                // agree on one value across ranks
                let median = comm.allreduce_scalar(median, crate::comm::ReduceOp::Max)?;
                medians[i] = median;
            }
        }
        let selected = match op.forced {
            Some(f) => f,
            None => {
                let mut best = None;
                for i in 0..nv {
                    if !qualified[i] {
                        continue;
                    }
                    best = match best {
                        None => Some(i),
                        Some(b) if medians[i] < medians[b] => Some(i),
                        Some(b) => Some(b),
                    };
                }
                best.ok_or_else(|| {
                    Error::Numerical(format!("all variants of '{}' disqualified", op.name))
                })?
            }
        };
        (op.apply_selection)(selected);
        for (i, v) in op.variants.iter().enumerate() {
            let t = medians[i].max(1e-12);
            report.rows.push(TuningRow {
                operation: op.name.clone(),
                variant: v.name.clone(),
                precision: v.precision.label(),
                gdofs: if medians[i].is_finite() { v.dofs / t / 1e9 } else { 0.0 },
                bandwidth_gbs: if medians[i].is_finite() { v.bytes / t / 1e9 } else { 0.0 },
                gflops: if medians[i].is_finite() { v.flops / t / 1e9 } else { 0.0 },
                median_seconds: medians[i],
                selected: i == selected,
                disqualified: !qualified[i],
            });
        }
    }
    Ok(report)
}

/// The standard operation set for a discretization: tensor local_grad
/// (naive vs sliced), Helmholtz apply (staged vs fused metric multiply),
/// gather-scatter packing (per-peer packed vs per-dof messages), and the
/// dealiasing interpolation axis order.
pub fn standard_registry(
    disc: Arc<Discretization>,
    op: Arc<crate::solver::LevelOperator<f64>>,
    adv: Option<Arc<crate::timestepper::AdvectionKernel>>,
) -> KernelVariantRegistry {
    let mut reg = KernelVariantRegistry::new();
    let n = disc.n_slots();
    let field: Arc<Vec<f64>> = Arc::new(
        (0..n)
            .map(|s| {
                let p = disc.slot_coords(s);
                (3.1 * p[0] + 1.7 * p[1]).sin() + 0.5 * p[2]
            })
            .collect(),
    );
    let n1 = disc.order + 1;
    let elem_flops = (2 * 3 * n1 * n1 * n1 * n1 * disc.n_elements()) as f64;
    let elem_bytes = (8 * 4 * disc.n_slots()) as f64;
    let dofs = disc.n_slots() as f64;

    // localGrad
    {
        let mk = |variant: usize| -> RunFn {
            let disc = disc.clone();
            let field = field.clone();
            Box::new(move |_c: &Comm| {
                let nodes = disc.nodes_per_element;
                let mut out = vec![0.0; disc.n_slots()];
                for e in 0..disc.n_elements() {
                    let fe = &field[e * nodes..(e + 1) * nodes];
                    let (ur, us, ut, _) = if variant == tuning::LOCAL_GRAD_SLICED {
                        local_grad_sliced(&disc.basis.deriv.entries, fe, disc.dims)?
                    } else {
                        crate::ref_element::tensor::local_grad_naive(
                            &disc.basis.deriv.entries,
                            fe,
                            disc.dims,
                        )?
                    };
                    for i in 0..nodes {
                        out[e * nodes + i] = ur[i] + us[i] + ut[i];
                    }
                }
                Ok(out)
            })
        };
        reg.add(Operation {
            name: "localGrad".into(),
            variants: vec![
                Variant {
                    name: "naive".into(),
                    precision: Precision::Fp64,
                    run: mk(tuning::LOCAL_GRAD_NAIVE),
                    flops: elem_flops,
                    bytes: elem_bytes,
                    dofs,
                },
                Variant {
                    name: "sliced".into(),
                    precision: Precision::Fp64,
                    run: mk(tuning::LOCAL_GRAD_SLICED),
                    flops: elem_flops,
                    bytes: elem_bytes,
                    dofs,
                },
            ],
            apply_selection: Box::new(tuning::set_local_grad_variant),
            forced: None,
        });
    }

    // laplacianApply
    {
        let mk = |variant: usize| -> RunFn {
            let op = op.clone();
            let field = field.clone();
            Box::new(move |c: &Comm| {
                let old = tuning::laplace_variant();
                tuning::set_laplace_variant(variant);
                let mut out = vec![0.0; field.len()];
                let r = op.apply(&field, &mut out, c);
                tuning::set_laplace_variant(old);
                r?;
                Ok(out)
            })
        };
        reg.add(Operation {
            name: "laplacianApply".into(),
            variants: vec![
                Variant {
                    name: "staged".into(),
                    precision: Precision::Fp64,
                    run: mk(tuning::LAPLACE_STAGED),
                    flops: elem_flops * 1.5,
                    bytes: elem_bytes * 2.0,
                    dofs,
                },
                Variant {
                    name: "fused".into(),
                    precision: Precision::Fp64,
                    run: mk(tuning::LAPLACE_FUSED),
                    flops: elem_flops * 1.5,
                    bytes: elem_bytes * 2.0,
                    dofs,
                },
            ],
            apply_selection: Box::new(tuning::set_laplace_variant),
            forced: None,
        });
    }

    // gsExchange
    {
        let mk = |variant: usize| -> RunFn {
            let disc = disc.clone();
            let field = field.clone();
            Box::new(move |c: &Comm| {
                let old = tuning::gs_variant();
                tuning::set_gs_variant(variant);
                let mut buf = field.as_ref().clone();
                let r = disc.gs.exchange(&mut buf, GsOp::Sum, c);
                tuning::set_gs_variant(old);
                r?;
                Ok(buf)
            })
        };
        reg.add(Operation {
            name: "gsExchange".into(),
            variants: vec![
                Variant {
                    name: "prepack".into(),
                    precision: Precision::Fp64,
                    run: mk(tuning::GS_PREPACK),
                    flops: dofs,
                    bytes: (16 * disc.n_slots()) as f64,
                    dofs,
                },
                Variant {
                    name: "permessage".into(),
                    precision: Precision::Fp64,
                    run: mk(tuning::GS_PERMESSAGE),
                    flops: dofs,
                    bytes: (16 * disc.n_slots()) as f64,
                    dofs,
                },
            ],
            apply_selection: Box::new(tuning::set_gs_variant),
            forced: None,
        });
    }

    // advection interpolation axis order
    if let Some(adv) = adv {
        let mk = |variant: usize| -> RunFn {
            let adv = adv.clone();
            let field = field.clone();
            Box::new(move |_c: &Comm| {
                let old = tuning::adv_interp_variant();
                tuning::set_adv_interp_variant(variant);
                let r = adv.weak_advect(&[&field, &field, &field], &field);
                tuning::set_adv_interp_variant(old);
                r
            })
        };
        let q_dofs = (adv.working_set_per_element * disc.n_elements()) as f64;
        reg.add(Operation {
            name: "advInterp".into(),
            variants: vec![
                Variant {
                    name: "axes-rst".into(),
                    precision: Precision::Fp64,
                    run: mk(tuning::ADV_INTERP_RST),
                    flops: q_dofs * 40.0,
                    bytes: q_dofs * 32.0,
                    dofs: q_dofs,
                },
                Variant {
                    name: "axes-tsr".into(),
                    precision: Precision::Fp64,
                    run: mk(tuning::ADV_INTERP_TSR),
                    flops: q_dofs * 40.0,
                    bytes: q_dofs * 32.0,
                    dofs: q_dofs,
                },
            ],
            apply_selection: Box::new(tuning::set_adv_interp_variant),
            forced: None,
        });
    }
    reg
}
