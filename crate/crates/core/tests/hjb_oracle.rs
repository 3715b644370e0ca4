mod common;

use common::Enumerator;
use ksc_core::hjb::control_grid;
use ksc_core::{bellman_update, ControlBox, GridGeometry, HjbParams, InteractionKernel, Penalty, ValueGrid};

fn check(n: usize, nc: usize, depth: usize, kernel: InteractionKernel, penalty: Penalty) {
    let params = HjbParams {
        dt: 0.2,
        lambda: 0.5,
        gamma_bar: 0.4,
        penalty,
        n_controls: nc,
        ..HjbParams::default()
    };
    let bx = ControlBox::default();
    let geo = GridGeometry::new(-1.0, 1.0, n).unwrap();
    let terminal = ValueGrid::from_fn(geo, |x, y| 0.3 * x * x + 0.1 * (y - 0.2).abs());
    let oracle = Enumerator {
        lo: -1.0,
        hi: 1.0,
        n,
        controls: control_grid(&bx, nc),
        kernel,
        dt: params.dt,
        beta: params.beta(),
        gamma: params.gamma(),
        penalty,
        target: 0.0,
        terminal: terminal.values.clone(),
    };
    let mut v = terminal;
    for _ in 0..depth {
        v = bellman_update(&v, &kernel, &params, &bx).unwrap().0;
    }
    for i in 0..n {
        for j in 0..n {
            let want = oracle.value(i, j, depth);
            let got = v.values[geo.index(i, j)];
            assert!(
                (got - want).abs() <= 1e-13 * want.abs().max(1.0),
                "n={n} nc={nc} depth={depth} node=({i},{j}): {got} vs {want}"
            );
        }
    }
}

#[test]
fn dynamic_programming_matches_enumeration_on_small_grids() {
    for n in [2, 3, 5, 9] {
        for nc in [1, 3, 5] {
            for kernel in [InteractionKernel::Zero, InteractionKernel::hegselmann_krause()] {
                check(n, nc, 2, kernel, Penalty::L1);
            }
        }
    }
    check(4, 3, 3, InteractionKernel::Constant, Penalty::L2);
    check(9, 5, 3, InteractionKernel::hegselmann_krause(), Penalty::L2);
}

#[test]
fn bellman_operator_is_a_beta_contraction() {
    let params = HjbParams {
        n_controls: 5,
        ..HjbParams::default()
    };
    let kernel = InteractionKernel::hegselmann_krause();
    let bx = ControlBox::default();
    let geo = GridGeometry::new(-1.0, 1.0, 11).unwrap();
    let a = ValueGrid::from_fn(geo, |x, y| x.sin() + y * y);
    let b = ValueGrid::from_fn(geo, |x, y| (x * y).cos() - 0.5 * x);
    let ta = bellman_update(&a, &kernel, &params, &bx).unwrap().0;
    let tb = bellman_update(&b, &kernel, &params, &bx).unwrap().0;
    assert!(ta.sup_distance(&tb) <= params.beta() * a.sup_distance(&b) + 1e-14);
}

#[test]
fn bellman_operator_is_monotone() {
    let params = HjbParams {
        n_controls: 5,
        ..HjbParams::default()
    };
    let kernel = InteractionKernel::attraction_repulsion();
    let bx = ControlBox::default();
    let geo = GridGeometry::new(-1.0, 1.0, 9).unwrap();
    let a = ValueGrid::from_fn(geo, |x, y| x * x + y * y);
    let b = ValueGrid::from_fn(geo, |x, y| x * x + y * y + 0.1 + 0.05 * x.abs());
    let ta = bellman_update(&a, &kernel, &params, &bx).unwrap().0;
    let tb = bellman_update(&b, &kernel, &params, &bx).unwrap().0;
    for (x, y) in ta.values.iter().zip(&tb.values) {
        assert!(x <= y);
    }
}

#[test]
fn solution_is_exchange_symmetric() {
    let params = HjbParams {
        n_controls: 7,
        ..HjbParams::default()
    };
    let kernel = InteractionKernel::hegselmann_krause();
    let bx = ControlBox::default();
    let geo = GridGeometry::new(-1.0, 1.0, 21).unwrap();
    let sol = ksc_core::solve_policy_iteration(&ValueGrid::zeros(geo), &kernel, &params, &bx).unwrap();
    for i in 0..21 {
        for j in 0..21 {
            let a = sol.values.values[geo.index(i, j)];
            let b = sol.values.values[geo.index(j, i)];
            assert!((a - b).abs() <= 1e-9, "({i},{j})");
            let (ui, uj) = sol.table.controls[geo.index(i, j)];
            let (vi, vj) = sol.table.controls[geo.index(j, i)];
            assert_eq!((ui, uj), (vj, vi), "({i},{j})");
        }
    }
}
