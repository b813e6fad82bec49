//! Explicit-matrix oracles for the assembled operators: symmetry, positive
//! semidefiniteness, nullspace dimension, and the V-cycle as an SPD
//! preconditioner, all checked by dense assembly at N = 3, E = 8.

mod common;

use oversem::comm::{spawn, Scheduler};
use oversem::mesh::{build_box_mesh, BoxSpec, Discretization, FaceTag};
use oversem::solver::{
    build_mask, Coefficient, LevelOperator, Pmg, PmgConfig, PmgProblem,
};
use std::sync::Arc;

fn neumann_poisson(c: &oversem::comm::Comm) -> LevelOperator<f64> {
    let m = build_box_mesh((2, 2, 2), BoxSpec::unit(), 3, c).unwrap();
    let disc = Arc::new(Discretization::build(&m, c, 3).unwrap());
    LevelOperator::new(
        disc,
        Coefficient::Uniform(1.0),
        Coefficient::Uniform(0.0),
        vec![false; m.n_local_slots()],
        c,
    )
    .unwrap()
}

#[test]
fn laplacian_is_spsd_with_constant_nullspace() {
    let out = spawn(1, Scheduler::Concurrent, |c| {
        let op = neumann_poisson(c);
        let (a, _) = common::assemble_dense(&op, c);
        let n = a.len();
        // symmetry
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                asym = asym.max((a[i][j] - a[j][i]).abs());
            }
        }
        let eigs = common::jacobi_eigenvalues(a);
        (asym, eigs)
    })
    .unwrap();
    let (asym, eigs) = &out[0];
    assert!(*asym < 1e-11, "assembled operator not symmetric: {asym:.2e}");
    let scale = eigs.last().unwrap();
    // exactly one (near-)zero eigenvalue: the constants
    assert!(eigs[0].abs() < 1e-10 * scale, "nullspace eigenvalue {:.3e}", eigs[0]);
    assert!(
        eigs[1] > 1e-8 * scale,
        "second eigenvalue {:.3e} suggests extra nullspace",
        eigs[1]
    );
    assert!(eigs.iter().all(|&l| l > -1e-10 * scale), "negative eigenvalue found");
}

#[test]
fn masked_helmholtz_is_spd() {
    let out = spawn(1, Scheduler::Concurrent, |c| {
        let m = build_box_mesh((2, 2, 2), BoxSpec::unit(), 3, c).unwrap();
        let disc = Arc::new(Discretization::build(&m, c, 3).unwrap());
        let mask = build_mask(&m, &disc, c, |t| t == FaceTag::Dirichlet).unwrap();
        let op = LevelOperator::new(
            disc,
            Coefficient::Uniform(1.0),
            Coefficient::Uniform(2.5),
            mask.clone(),
            c,
        )
        .unwrap();
        let (a, rep) = common::assemble_dense(&op, c);
        // restrict to unmasked dofs
        let free: Vec<usize> = (0..a.len())
            .filter(|&g| !mask[rep[g]])
            .collect();
        let sub: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| free.iter().map(|&j| a[i][j]).collect())
            .collect();
        common::jacobi_eigenvalues(sub)
    })
    .unwrap();
    let eigs = &out[0];
    assert!(
        eigs[0] > 0.0,
        "masked Helmholtz not positive definite: min eig {:.3e}",
        eigs[0]
    );
}

#[test]
fn vcycle_preconditioner_is_spd() {
    // assemble M^{-1} column by column at N = 3, E = 8 and check symmetry
    // and positive definiteness on the mean-zero subspace
    let out = spawn(1, Scheduler::Concurrent, |c| {
        let m = build_box_mesh((2, 2, 2), BoxSpec::unit(), 3, c).unwrap();
        let disc = Arc::new(Discretization::build(&m, c, 3).unwrap());
        let mask = build_mask(&m, &disc, c, |t| t == FaceTag::Dirichlet).unwrap();
        let op = LevelOperator::new(
            disc.clone(),
            Coefficient::Uniform(1.0),
            Coefficient::Uniform(0.0),
            mask.clone(),
            c,
        )
        .unwrap();
        let problem = PmgProblem {
            mesh: &m,
            h_laplace: Coefficient::Uniform(1.0),
            h_mass: Coefficient::Uniform(0.0),
            dirichlet: |t| t == FaceTag::Dirichlet,
        };
        let cfg = PmgConfig {
            schedule: vec![3, 1],
            ..PmgConfig::for_order(3)
        };
        let pmg = Pmg::<f64>::build(&problem, disc.clone(), c, &cfg).unwrap();
        let nodes_per = disc.nodes_per_element;
        let n_global = disc.numbering.n_global as usize;
        let mut rep = vec![usize::MAX; n_global];
        for (e, egids) in disc.numbering.gids.iter().enumerate() {
            for (i, &g) in egids.iter().enumerate() {
                if rep[g as usize] == usize::MAX {
                    rep[g as usize] = e * nodes_per + i;
                }
            }
        }
        let free: Vec<usize> = (0..n_global).filter(|&g| !mask[rep[g]]).collect();
        let mut mat = vec![vec![0.0; free.len()]; free.len()];
        for (jj, &gj) in free.iter().enumerate() {
            let mut r = vec![0.0; disc.n_slots()];
            for (e, egids) in disc.numbering.gids.iter().enumerate() {
                for (i, &g) in egids.iter().enumerate() {
                    if g as usize == gj {
                        r[e * nodes_per + i] = 1.0;
                    }
                }
            }
            op.zero_masked(&mut r);
            let z = pmg.apply_t(&r, c).unwrap();
            for (ii, &gi) in free.iter().enumerate() {
                mat[ii][jj] = z[rep[gi]];
            }
        }
        let mut asym: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..free.len() {
            for j in 0..free.len() {
                asym = asym.max((mat[i][j] - mat[j][i]).abs());
                scale = scale.max(mat[i][j].abs());
            }
        }
        // symmetrize the roundoff before the eigen decomposition
        let n = free.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (mat[i][j] + mat[j][i]);
                mat[i][j] = v;
                mat[j][i] = v;
            }
        }
        let eigs = common::jacobi_eigenvalues(mat);
        (asym / scale, eigs)
    })
    .unwrap();
    let (rel_asym, eigs) = &out[0];
    assert!(*rel_asym < 1e-9, "V-cycle not symmetric: rel {rel_asym:.2e}");
    assert!(
        eigs[0] > 0.0,
        "V-cycle preconditioner not positive definite: min eig {:.3e}",
        eigs[0]
    );
}

#[test]
fn pmg_iterations_nearly_e_independent() {
    // fixed N = 7 with the aggressive [7,5,3,1] schedule, E grows 8x:
    // iteration growth <= 30%
    let run = |extents: (usize, usize, usize)| {
        spawn(2, Scheduler::Concurrent, move |c| {
            let m = build_box_mesh(extents, BoxSpec::unit(), 7, c).unwrap();
            let disc = Arc::new(Discretization::build(&m, c, 7).unwrap());
            let mask = build_mask(&m, &disc, c, |t| t == FaceTag::Dirichlet).unwrap();
            let op = LevelOperator::new(
                disc.clone(),
                Coefficient::Uniform(1.0),
                Coefficient::Uniform(0.0),
                mask,
                c,
            )
            .unwrap();
            let n = op.n_slots();
            let mut f = vec![0.0; n];
            for s in 0..n {
                let p = op.disc.slot_coords(s);
                f[s] = (2.0 * p[0] - p[1] + 0.5 * p[2]).sin();
            }
            let mut b = op.mass_rhs(&f, c).unwrap();
            op.zero_masked(&mut b);
            let problem = PmgProblem {
                mesh: &m,
                h_laplace: Coefficient::Uniform(1.0),
                h_mass: Coefficient::Uniform(0.0),
                dirichlet: |t| t == FaceTag::Dirichlet,
            };
            let pre = oversem::solver::PmgPrecond::F64(
                Pmg::<f64>::build(&problem, disc, c, &PmgConfig::for_order(7)).unwrap(),
            );
            let mut x = vec![0.0; n];
            let stats = oversem::solver::pcg(&op, &pre, &b, &mut x, 1e-12, 200, c).unwrap();
            assert!(stats.converged);
            stats.iterations
        })
        .unwrap()[0]
    };
    let small = run((2, 2, 2));
    let big = run((4, 4, 4));
    assert!(
        big as f64 <= 1.3 * small as f64,
        "pMG iterations grew {small} -> {big} (more than 30%)"
    );
}
