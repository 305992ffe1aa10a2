mod common;

use common::{model_oracle, siso_instance};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use syndeepc::deepc::{
    build_robust, deterministic_deepc, soften, solve_robust, AmbiguitySpec, CostSpec, InputBox,
};
use syndeepc::hankel::{HankelBlocks, InitialWindow};
use syndeepc::lp::LpStatus;

/// Minimum of the robust objective over `g` for single-row blocks, by
/// enumerating every vertex of the arrangement of hyperplanes on which the
/// piecewise-linear objective or the box constraint changes form.
fn brute_force_robust(b: &HankelBlocks, u_ini: f64, y_ini: f64, cost: &CostSpec, eps: f64, lo: f64, hi: f64) -> f64 {
    let r = b.ncols();
    let row = |m: &DMatrix<f64>| DVector::from_iterator(r, m.row(0).iter().cloned());
    let (ub, yb, uf, yf) = (row(&b.ub), row(&b.yb), row(&b.uf), row(&b.yf));
    let scale = cost.c.max(cost.rho);
    let kink = cost.rho / scale;
    let mut planes: Vec<(DVector<f64>, f64)> = vec![
        (uf.clone(), 0.0),
        (uf.clone(), lo),
        (uf.clone(), hi),
        (yf.clone(), cost.reference[0]),
        (yb.clone(), y_ini),
    ];
    let unit = |i: usize| DVector::from_fn(r, |k, _| if k == i { 1.0 } else { 0.0 });
    for i in 0..r {
        planes.push((unit(i), 0.0));
        planes.push((unit(i), kink));
        planes.push((unit(i), -kink));
        for j in i + 1..r {
            planes.push((unit(i) - unit(j), 0.0));
            planes.push((unit(i) + unit(j), 0.0));
        }
    }
    let f = |g: &DVector<f64>| {
        let u = uf.dot(g);
        u.abs()
            + cost.c * (yf.dot(g) - cost.reference[0]).abs()
            + cost.rho * (yb.dot(g) - y_ini).abs()
            + eps * (scale * g.amax()).max(cost.rho)
    };
    let mut best = f64::INFINITY;
    let p = planes.len();
    let pick = r - 1;
    let mut idx: Vec<usize> = (0..pick).collect();
    loop {
        let mut a = DMatrix::zeros(r, r);
        let mut rhs = DVector::zeros(r);
        a.row_mut(0).copy_from(&ub.transpose());
        rhs[0] = u_ini;
        for (k, &h) in idx.iter().enumerate() {
            a.row_mut(k + 1).copy_from(&planes[h].0.transpose());
            rhs[k + 1] = planes[h].1;
        }
        if a.determinant().abs() > 1e-12 {
            if let Some(g) = a.lu().solve(&rhs) {
                let u = uf.dot(&g);
                if u >= lo - 1e-9 && u <= hi + 1e-9 {
                    best = best.min(f(&g));
                }
            }
        }
        let mut i = pick;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < p - pick + i {
                idx[i] += 1;
                for k in i + 1..pick {
                    idx[k] = idx[k - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn robust_lp_matches_arrangement_enumeration() {
    for seed in 0..12u64 {
        let inst = siso_instance(seed, 1, 1, 1, 5, 0.05);
        assert_eq!(inst.blocks.ncols(), 4);
        let reference = DVector::from_element(1, 0.3 + 0.1 * seed as f64);
        let (c, rho) = (2.0 + seed as f64, 5.0);
        let cost = CostSpec::new(c, rho, reference, 1).unwrap();
        let (lo, hi) = (-0.8, 0.6);
        let bx = InputBox::uniform(1, lo, hi).unwrap();
        for eps in [1e-3, 0.1, 1.0] {
            let amb = AmbiguitySpec::new(eps, 0.0).unwrap();
            let p = build_robust(&inst.blocks, &inst.window, &cost, &amb, &bx).unwrap();
            let sol = solve_robust(&p).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal);
            let oracle = brute_force_robust(
                &inst.blocks,
                inst.window.u_ini[0],
                inst.window.y_ini[0],
                &cost,
                eps,
                lo,
                hi,
            );
            assert!((sol.objective - oracle).abs() <= 1e-7, "seed {seed} eps {eps}: {} vs {oracle}", sol.objective);
            assert!((p.evaluate(&sol.g_star) - sol.objective).abs() <= 1e-7);
        }
    }
}

#[test]
fn deterministic_deepc_matches_the_model() {
    for seed in 0..10u64 {
        let inst = siso_instance(100 + seed, 2, 2, 5, 40, 0.0);
        let reference = DVector::from_fn(5, |t, _| 0.5 * ((t + seed as usize) as f64 * 0.7).sin());
        let cost = CostSpec::new(10.0, 100.0, reference, 1).unwrap();
        let bx = InputBox::uniform(1, -1.0, 1.0).unwrap();
        let sol = deterministic_deepc(&inst.blocks, &inst.window, &cost, &bx).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let oracle = model_oracle(&inst.sys, &inst.state, &cost, &bx, 5);
        assert!((sol.objective - oracle).abs() <= 1e-7, "{} vs {oracle}", sol.objective);
        assert!((&inst.blocks.yb * &sol.g_star - &inst.window.y_ini).amax() <= 1e-9);
        assert!((&inst.blocks.ub * &sol.g_star - &inst.window.u_ini).amax() <= 1e-9);
        assert!(bx.contains(&sol.u_star, 1e-9));
    }
}

#[test]
fn reduction_chain_on_noise_free_data() {
    for seed in 0..5u64 {
        let inst = siso_instance(200 + seed, 2, 2, 5, 40, 0.0);
        let cost = CostSpec::new(10.0, 100.0, DVector::from_element(5, 0.4), 1).unwrap();
        let bx = InputBox::uniform(1, -1.0, 1.0).unwrap();
        let det = deterministic_deepc(&inst.blocks, &inst.window, &cost, &bx).unwrap();
        let soft = soften(&inst.blocks, &inst.window, &cost, &bx).unwrap();
        let soft_sol = soft.solve().unwrap();
        let amb = AmbiguitySpec::new(0.0, 0.0).unwrap();
        let robust = solve_robust(&build_robust(&inst.blocks, &inst.window, &cost, &amb, &bx).unwrap()).unwrap();
        assert!((robust.objective - soft_sol.objective).abs() <= 1e-7);
        assert!((soft_sol.objective - det.objective).abs() <= 1e-7);
        // on the hard-constrained optimum the penalty vanishes
        assert!((soft.evaluate(&det.g_star) - det.objective).abs() <= 1e-7);
        assert!(soft.is_admissible(&det.g_star, 1e-9));
    }
}

#[test]
fn objective_grows_with_the_radius() {
    let inst = siso_instance(300, 2, 2, 5, 40, 0.02);
    let cost = CostSpec::new(10.0, 100.0, DVector::from_element(5, 0.4), 1).unwrap();
    let bx = InputBox::uniform(1, -1.0, 1.0).unwrap();
    let mut last = f64::NEG_INFINITY;
    for eps in [0.0, 1e-3, 1e-1] {
        let amb = AmbiguitySpec::new(eps, 0.0).unwrap();
        let p = build_robust(&inst.blocks, &inst.window, &cost, &amb, &bx).unwrap();
        let sol = solve_robust(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective >= last - 1e-9);
        // the regularizer only adds
        let soft = soften(&inst.blocks, &inst.window, &cost, &bx).unwrap();
        assert!(sol.objective >= soft.evaluate(&sol.g_star) - 1e-9);
        last = sol.objective;
    }
}

#[test]
fn tracked_channel_mask() {
    // two outputs, only the first tracked: the second reference is ignored
    let inst = siso_instance(400, 2, 2, 3, 30, 0.0);
    let b = &inst.blocks;
    let yf2 = DMatrix::from_fn(6, b.ncols(), |r, j| b.yf[(r / 2, j)] * if r % 2 == 0 { 1.0 } else { -2.0 });
    let yb2 = DMatrix::from_fn(4, b.ncols(), |r, j| b.yb[(r / 2, j)] * if r % 2 == 0 { 1.0 } else { -2.0 });
    let data = DMatrix::from_fn(2 + 4 + 3 + 6, b.ncols(), |r, j| match r {
        0..=1 => b.ub[(r, j)],
        2..=4 => b.uf[(r - 2, j)],
        5..=8 => yb2[(r - 5, j)],
        _ => yf2[(r - 9, j)],
    });
    let two = HankelBlocks::split(&data, 1, 2, 2, 3).unwrap();
    let y_ini = DVector::from_fn(4, |r, _| inst.window.y_ini[r / 2] * if r % 2 == 0 { 1.0 } else { -2.0 });
    let window = syndeepc::hankel::InitialWindow::new(inst.window.u_ini.clone(), y_ini, 1, 2, 2).unwrap();
    let bx = InputBox::uniform(1, -1.0, 1.0).unwrap();
    let reference = DVector::from_vec(vec![0.3, 50.0, 0.3, -50.0, 0.3, 7.0]);
    let masked = CostSpec::with_tracked(10.0, 100.0, reference, vec![true, false]).unwrap();
    let single = CostSpec::new(10.0, 100.0, DVector::from_element(3, 0.3), 1).unwrap();
    let a = deterministic_deepc(&two, &window, &masked, &bx).unwrap();
    let s = deterministic_deepc(&inst.blocks, &inst.window, &single, &bx).unwrap();
    assert!((a.objective - s.objective).abs() <= 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solutions_respect_constraints(seed in 0u64..10_000, eps in 0.0f64..0.5, lo in -1.0f64..-0.1, hi in 0.1f64..1.0) {
        let inst = siso_instance(seed, 2, 2, 4, 30, 0.02);
        let cost = CostSpec::new(5.0, 50.0, DVector::from_element(4, 0.2), 1).unwrap();
        let bx = InputBox::uniform(1, lo, hi).unwrap();
        let amb = AmbiguitySpec::new(eps, 0.0).unwrap();
        let p = build_robust(&inst.blocks, &inst.window, &cost, &amb, &bx).unwrap();
        let sol = solve_robust(&p).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        prop_assert!(bx.contains(&sol.u_star, 1e-9));
        prop_assert!((&inst.blocks.ub * &sol.g_star - &inst.window.u_ini).amax() <= 1e-9);
        prop_assert!((p.evaluate(&sol.g_star) - sol.objective).abs() <= 1e-6 * (1.0 + sol.objective.abs()));
        if eps > 0.0 {
            prop_assert!(sol.objective >= eps * cost.rho - 1e-9);
        }
    }
}

#[test]
fn noisy_problems_with_nonnegative_costs_are_never_unbounded() {
    // every cost coefficient is nonnegative, so any unbounded verdict is
    // accumulated rounding in the tableau
    let cfg = syndeepc::harness::ExperimentConfig::from_kv(
        "system.kind = double-integrator\nsystem.ts = 0.1\nhorizon.ki = 2\nhorizon.k = 15\ndata.length = 120\n\
         input.box = -2,2\nreference.value = 1\ndata.noise_std = 0.01\n",
    )
    .unwrap();
    let blocks = syndeepc::harness::collect_training_data(&cfg).unwrap().blocks;
    let window = InitialWindow::new(DVector::zeros(2), DVector::zeros(2), 1, 1, 2).unwrap();
    let cost = CostSpec::new(10.0, 1e5, DVector::from_element(15, 1.0), 1).unwrap();
    let bx = InputBox::uniform(1, -2.0, 2.0).unwrap();
    for eps in [0.0, 1e-3] {
        let p = build_robust(&blocks, &window, &cost, &AmbiguitySpec::new(eps, 0.0).unwrap(), &bx).unwrap();
        let sol = solve_robust(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective >= -1e-9);
        assert!((p.evaluate(&sol.g_star) - sol.objective).abs() <= 1e-6 * (1.0 + sol.objective));
    }
}
