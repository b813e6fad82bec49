//! Overset coupling in time: interface extrapolation order, the
//! predictor-corrector, and the sync/exchange timer taxonomy.

mod common;

use oversem::comm::{spawn, Comm, Scheduler};
use oversem::fields;
use oversem::findpts::FindConfig;
use oversem::mesh::{build_box_mesh, retag_boundary, BoxSpec, FaceTag};
use oversem::overset::{couple_setup, step_coupled, Session, SessionKind, SessionRunner};
use oversem::runtime::stats;
use oversem::solver::Coefficient;
use oversem::timestepper::{FlowState, MaterialProps, ScalarBc, ScalarSolvers, SimDomain};
use std::sync::Arc;

/// Two-slab conduction with an oscillatory left-wall temperature; the
/// final field depends on dt through both the BDF2 interior error and the
/// interface data. Returns the session-0 temperature at t_end.
fn oscillatory_run(c: &Comm, k: usize, corrections: usize, dt: f64, t_end: f64) -> Vec<f64> {
    let color = if c.rank() < c.size() / 2 { 0 } else { 1 };
    let sub = c.split(color, c.rank()).unwrap();
    let mut mesh = if color == 0 {
        build_box_mesh((2, 1, 1), BoxSpec::new([0.0; 3], [0.6, 1.0, 1.0]), 4, &sub).unwrap()
    } else {
        build_box_mesh((2, 1, 1), BoxSpec::new([0.4, 0.0, 0.0], [1.0, 1.0, 1.0]), 4, &sub).unwrap()
    };
    retag_boundary(&mut mesh, |axis, side| {
        if axis == 0 {
            if (color == 0 && side) || (color == 1 && !side) {
                FaceTag::Interface
            } else {
                FaceTag::Dirichlet
            }
        } else {
            FaceTag::Neumann
        }
    });
    let dom = SimDomain::build(mesh, &sub, None).unwrap();
    let n = dom.disc.n_slots();
    let scalar_solvers = ScalarSolvers::build(
        &dom,
        &sub,
        Coefficient::Uniform(0.2),
        Coefficient::Uniform(1.0),
        1e-12,
        4000,
    )
    .unwrap();
    let session = Session {
        id: color as u32,
        kind: SessionKind::Solid,
        dom,
        comm: sub,
    };
    let mut ex = couple_setup(&session, c, FindConfig::default(), k, corrections, true, false)
        .unwrap();
    let omega = 4.0;
    let mut runner = SessionRunner {
        session,
        state: FlowState::new(n, 2).unwrap(),
        scalar_solvers,
        flow_solvers: None,
        scalar_bc: ScalarBc {
            dirichlet: Arc::new(move |p: [f64; 3], t: f64| {
                if p[0] < 0.2 {
                    (omega * t).sin()
                } else {
                    0.0
                }
            }),
            neumann_flux: fields::zero_flux(),
        },
        props: MaterialProps::new(1.0, 1.0).unwrap(),
        prescribed_velocity: None,
    };
    // seed the exchange ring with the initial field
    {
        let t0 = runner.state.t;
        let (session, state) = (&runner.session, &runner.state);
        ex.exchange(session, state, t0, false, c).unwrap();
    }
    let steps = (t_end / dt).round() as usize;
    for _ in 0..steps {
        step_coupled(&mut runner, &mut ex, dt, c).unwrap();
    }
    if color == 0 {
        runner.state.temp
    } else {
        Vec::new()
    }
}

#[test]
fn interface_extrapolation_order() {
    let t_end = 1.0;
    let errors = |k: usize, corr: usize, dts: [f64; 2]| -> Vec<f64> {
        dts.iter()
            .map(|&dt| {
                let out = spawn(2, Scheduler::Concurrent, move |c| {
                    let coarse = oscillatory_run(c, k, corr, dt, t_end);
                    let fine = oscillatory_run(c, 1, 2, dt / 16.0, t_end);
                    coarse
                        .iter()
                        .zip(&fine)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .unwrap();
                out.iter().cloned().fold(0.0f64, f64::max)
            })
            .collect()
    };
    // the k=0 lag error reaches its first-order asymptote only below the
    // BDF2 interior error, hence the smaller dt pair
    let e0 = errors(0, 0, [0.0125, 0.00625]);
    let e1 = errors(1, 1, [0.05, 0.025]);
    let order0 = (e0[0] / e0[1]).log2();
    let order1 = (e1[0] / e1[1]).log2();
    println!("interface time accuracy: k=0 order {order0:.2} ({e0:?}), k=1 order {order1:.2} ({e1:?})");
    assert!(
        (0.6..=1.45).contains(&order0),
        "k=0 should be first order, got {order0:.2} ({e0:?})"
    );
    assert!(
        (1.6..=2.4).contains(&order1),
        "k=1 with a corrector should be second order, got {order1:.2} ({e1:?})"
    );
    // and k=1 at dt = 0.025 beats k=0 at half that step
    assert!(e1[1] < e0[1]);
}

#[test]
fn neknek_timer_taxonomy() {
    let out = spawn(2, Scheduler::Concurrent, |c| {
        stats::reset();
        oscillatory_run(c, 0, 0, 0.05, 0.25);
        let neknek = stats::elapsed_of("neknek");
        let sync = stats::elapsed_of("neknek/sync");
        let exchange = stats::elapsed_of("neknek/exchange");
        let eval = stats::elapsed_of("neknek/exchange/eval kernel");
        stats::reset();
        (neknek, sync, exchange, eval)
    })
    .unwrap();
    for (neknek, sync, exchange, eval) in out {
        assert!(neknek > 0.0 && sync >= 0.0 && exchange > 0.0);
        assert!(eval <= exchange * (1.0 + 1e-9));
        let child_sum = sync + exchange;
        assert!(
            child_sum <= neknek * (1.0 + 1e-9),
            "children exceed parent: {child_sum} vs {neknek}"
        );
        assert!(
            child_sum >= 0.8 * neknek,
            "neknek total {neknek:.3e} not accounted for by sync {sync:.3e} + exchange {exchange:.3e}"
        );
    }
}

#[test]
fn coupled_steady_state_under_timestepping() {
    // both sessions initialized to the steady linear profile stay put
    // while timestepping with exchanges (fixed point of step_coupled)
    let out = spawn(4, Scheduler::Concurrent, |c| {
        let color = if c.rank() < 2 { 0 } else { 1 };
        let sub = c.split(color, c.rank()).unwrap();
        let mut mesh = if color == 0 {
            build_box_mesh((2, 2, 1), BoxSpec::new([0.0; 3], [0.6, 1.0, 1.0]), 3, &sub).unwrap()
        } else {
            build_box_mesh((2, 2, 1), BoxSpec::new([0.4, 0.0, 0.0], [1.0, 1.0, 1.0]), 3, &sub)
                .unwrap()
        };
        retag_boundary(&mut mesh, |axis, side| {
            if axis == 0 {
                if (color == 0 && side) || (color == 1 && !side) {
                    FaceTag::Interface
                } else {
                    FaceTag::Dirichlet
                }
            } else {
                FaceTag::Neumann
            }
        });
        let dom = SimDomain::build(mesh, &sub, None).unwrap();
        let n = dom.disc.n_slots();
        let scalar_solvers = ScalarSolvers::build(
            &dom,
            &sub,
            Coefficient::Uniform(1.0),
            Coefficient::Uniform(1.0),
            1e-12,
            4000,
        )
        .unwrap();
        let session = Session {
            id: color as u32,
            kind: SessionKind::Solid,
            dom,
            comm: sub,
        };
        let mut ex =
            couple_setup(&session, c, FindConfig::default(), 0, 0, true, false).unwrap();
        let mut runner = SessionRunner {
            session,
            state: FlowState::new(n, 2).unwrap(),
            scalar_solvers,
            flow_solvers: None,
            scalar_bc: ScalarBc {
                dirichlet: fields::linear(0.0, 1.0, 0.0, 0.0),
                neumann_flux: fields::zero_flux(),
            },
            props: MaterialProps::new(1.0, 1.0).unwrap(),
            prescribed_velocity: None,
        };
        for s in 0..n {
            runner.state.temp[s] = runner.session.dom.disc.slot_coords(s)[0];
        }
        {
            let t0 = runner.state.t;
            let (session, state) = (&runner.session, &runner.state);
            ex.exchange(session, state, t0, false, c).unwrap();
        }
        let before = runner.state.temp.clone();
        for _ in 0..5 {
            step_coupled(&mut runner, &mut ex, 0.05, c).unwrap();
        }
        runner
            .state
            .temp
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    })
    .unwrap();
    for drift in out {
        assert!(drift < 1e-9, "steady profile drifted by {drift:.3e}");
    }
}
