use super::*;
use crate::mechanisms::grr_matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(p: &[f64], r: &[f64]) -> JointDistribution {
    JointDistribution::new(p.to_vec(), r.to_vec()).unwrap()
}

fn fixture() -> JointDistribution {
    dist(&[0.5, 0.3, 0.2], &[0.2, 0.5, 0.8])
}

fn count(sys: &LinearConstraintSystem, kind: ConstraintKind) -> usize {
    sys.rows.iter().filter(|r| r.kind == kind).count()
}

#[test]
fn row_counts() {
    let cfg = SolverConfig::new(1.0, 0.3);
    let s2 = assemble_constraints(&dist(&[0.5, 0.5], &[0.2, 0.6]), &cfg);
    assert_eq!((s2.num_vars, s2.rows.len()), (2, 11));
    let s3 = assemble_constraints(&fixture(), &cfg);
    assert_eq!((s3.num_vars, s3.rows.len()), (6, 28));
    assert_eq!(count(&s3, ConstraintKind::TruthRow) + count(&s3, ConstraintKind::TruthColumn), 12);
    assert_eq!(count(&s3, ConstraintKind::Ldp), 6);
    assert_eq!(count(&s3, ConstraintKind::RowMass), 3);
    assert_eq!(count(&s3, ConstraintKind::NonNegative), 6);
    assert_eq!(count(&s3, ConstraintKind::Utility), 1);
}

#[test]
fn identity_breaks_only_ldp_rows() {
    let sys = assemble_constraints(&fixture(), &SolverConfig::new(2.0, 0.0));
    let x = vec![0.0; 6];
    for row in &sys.rows {
        let ok = row.slack(&x) >= 0.0;
        assert_eq!(ok, row.kind != ConstraintKind::Ldp, "{:?}", row.kind);
    }
}

#[test]
fn offdiagonal_round_trip() {
    let q = grr_matrix(4, 0.7).unwrap();
    let x = offdiagonal(&q);
    assert_eq!(x.len(), 12);
    let back = matrix_from_offdiagonal(4, &x).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert!((back.get(i, j) - q.get(i, j)).abs() < 1e-15);
        }
    }
}

#[test]
fn fairness_rows_large_t_are_implied() {
    let d = fixture();
    let t = 1.0 / d.pos_marginal() - 1.0;
    let t = t.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let q: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let x = offdiagonal(&MechanismMatrix::new(q).unwrap());
        assert!(fairness_rows_at(&d, t).iter().all(|r| r.slack(&x) >= -1e-12));
    }
}

#[test]
fn fairness_rows_on_fair_data() {
    let d = dist(&[0.2, 0.3, 0.5], &[0.4, 0.4, 0.4]);
    for q in [MechanismMatrix::identity(3).unwrap(), MechanismMatrix::uniform(3).unwrap()] {
        let x = offdiagonal(&q);
        assert!(fairness_rows_at(&d, 0.0).iter().all(|r| r.slack(&x) >= -1e-12));
    }
}

#[test]
fn fairness_rows_match_induced_ratio() {
    let d = dist(&[0.5, 0.5], &[0.2, 0.6]);
    let t = 0.1;
    for (p, q) in [(0.9, 0.85), (0.6, 0.55), (0.7, 0.7), (0.52, 0.5)] {
        let m = MechanismMatrix::new(vec![vec![p, 1.0 - p], vec![1.0 - q, q]]).unwrap();
        let z = induced_distribution(&d, &m).unwrap();
        let x = offdiagonal(&m);
        let rows = fairness_rows_at(&d, t);
        for a in 0..2 {
            let dev = (z.pos_rates()[a] / d.pos_marginal() - 1.0).abs();
            let ok = rows[2 * a].slack(&x) >= 0.0 && rows[2 * a + 1].slack(&x) >= 0.0;
            assert_eq!(ok, dev <= t, "a = {a}, dev = {dev}");
        }
    }
}

fn system(n: usize, rows: &[(&[f64], Relation, f64)]) -> LinearConstraintSystem {
    let mut s = LinearConstraintSystem::new(n);
    for (c, rel, b) in rows {
        s.push(c.to_vec(), *rel, *b, ConstraintKind::RowMass);
    }
    s
}

#[test]
fn lp_small_examples() {
    let s = system(1, &[(&[1.0], Relation::Ge, 0.5), (&[1.0], Relation::Le, 1.0)]);
    match lp_feasible(&s, 1e-9).unwrap() {
        Feasibility::Feasible(x) => assert!((0.5 - 1e-9..=1.0 + 1e-9).contains(&x[0])),
        Feasibility::Infeasible => panic!("should be feasible"),
    }
    let s = system(1, &[(&[1.0], Relation::Ge, 0.7), (&[1.0], Relation::Le, 0.3)]);
    assert_eq!(lp_feasible(&s, 1e-9).unwrap(), Feasibility::Infeasible);
    let s = system(2, &[(&[0.0, 0.0], Relation::Ge, 1.0)]);
    assert_eq!(lp_feasible(&s, 1e-9).unwrap(), Feasibility::Infeasible);
}

#[test]
fn lp_minimize_small() {
    // min −x − y on the unit simplex corner cut
    let s = system(2, &[(&[1.0, 1.0], Relation::Le, 1.0), (&[1.0, 0.0], Relation::Le, 0.7)]);
    let Feasibility::Feasible(x) = lp_minimize(&s, Some(&[-1.0, -2.0]), 1e-9).unwrap() else {
        panic!()
    };
    assert!((x[0]).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    let Feasibility::Feasible(x) = lp_minimize(&s, Some(&[-2.0, -1.0]), 1e-9).unwrap() else {
        panic!()
    };
    assert!((x[0] - 0.7).abs() < 1e-12 && (x[1] - 0.3).abs() < 1e-12);
}

/// Random systems over `[0, 1]^6`; whenever uniform sampling finds a point
/// the LP must also find one.
#[test]
fn lp_agrees_with_rejection_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 6;
    let samples = 500_000;
    let (mut both, mut lp_only) = (0, 0);
    for sys_id in 0..20 {
        let mut s = LinearConstraintSystem::new(n);
        for v in 0..n {
            let mut c = vec![0.0; n];
            c[v] = 1.0;
            s.push(c, Relation::Le, 1.0, ConstraintKind::RowMass);
        }
        let center: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        for _ in 0..20 - n {
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let at: f64 = c.iter().zip(&center).map(|(a, b)| a * b).sum();
            // later systems get tighter, some become empty
            let slack = rng.random_range(-0.05..0.6) / (1.0 + sys_id as f64 / 4.0);
            if rng.random::<bool>() {
                s.push(c, Relation::Le, at + slack, ConstraintKind::RowMass);
            } else {
                s.push(c, Relation::Ge, at - slack, ConstraintKind::RowMass);
            }
        }
        let verdict = lp_feasible(&s, 1e-9).unwrap();
        if let Feasibility::Feasible(x) = &verdict {
            assert!(s.max_violation(x) <= 1e-9);
        }
        let found = (0..samples).any(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            s.max_violation(&x) == 0.0
        });
        if found {
            assert!(matches!(verdict, Feasibility::Feasible(_)), "system {sys_id}");
            both += 1;
        } else if matches!(verdict, Feasibility::Feasible(_)) {
            lp_only += 1;
        }
    }
    assert!(both > 0, "no system had a sampled point");
    let _ = lp_only;
}

fn check_valid(d: &JointDistribution, cfg: &SolverConfig, r: &KaryDesignResult) {
    let q = r.matrix().unwrap();
    let k = q.k();
    let tol = cfg.feasibility_tol;
    assert!(verify_ldp(&q, cfg.epsilon, tol).satisfied);
    for i in 0..k {
        assert!((q.entries()[i].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for j in 0..k {
            assert!(q.get(i, i) >= q.get(i, j) - tol);
            assert!(q.get(j, j) >= q.get(i, j) - tol);
        }
    }
    let hit: f64 = (0..k).map(|i| d.group_probs()[i] * q.get(i, i)).sum();
    assert!(hit >= 1.0 - cfg.zeta - tol);
    let direct = delta(&induced_distribution(d, &q).unwrap()).unwrap();
    assert!((direct - r.objective).abs() <= 1e-8);
    assert!(r.certificate.slacks.iter().all(|&s| s >= -tol));
}

fn check_trace(r: &KaryDesignResult) {
    let worst_infeasible = r.certificate.iterations.iter().filter(|s| !s.feasible).map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
    let best_feasible = r.certificate.iterations.iter().filter(|s| s.feasible).map(|s| s.t).fold(f64::INFINITY, f64::min);
    assert!(worst_infeasible < best_feasible);
}

#[test]
fn fair_data_reaches_zero() {
    let d = dist(&[0.2, 0.3, 0.5], &[0.4, 0.4, 0.4]);
    let cfg = SolverConfig::new(0.8, 0.0_f64.max(min_achievable_error(&d, 0.8).unwrap() + 0.01));
    let r = solve_opt_k(&d, &cfg).unwrap();
    assert!(r.objective < 1e-12);
    check_valid(&d, &cfg, &r);
}

#[test]
fn tiny_budget_unconstrained_utility() {
    let d = fixture();
    let cfg = SolverConfig::new(0.01, 1.0);
    let r = solve_opt_k(&d, &cfg).unwrap();
    assert!(r.objective < 1e-5, "{}", r.objective);
    check_valid(&d, &cfg, &r);
}

#[test]
fn tight_budget_is_infeasible() {
    let err = solve_opt_k(&fixture(), &SolverConfig::new(1.0, 0.3)).unwrap_err();
    assert_eq!(err, Error::InfeasibleBudget { epsilon: 1.0, zeta: 0.3 });
}

#[test]
fn invalid_config() {
    assert!(solve_opt_k(&fixture(), &SolverConfig::new(0.0, 0.5)).is_err());
    assert!(solve_opt_k(&fixture(), &SolverConfig::new(1.0, 1.5)).is_err());
    let mut cfg = SolverConfig::new(1.0, 0.5);
    cfg.objective_tol = 0.0;
    assert!(matches!(solve_opt_k(&fixture(), &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn iteration_cap_is_reported() {
    let mut cfg = SolverConfig::new(1.0, 0.5);
    cfg.max_bisection_iters = 3;
    assert!(matches!(solve_opt_k(&fixture(), &cfg), Err(Error::NumericalFailure(_))));
}

#[test]
fn fixture_regression() {
    let d = fixture();
    let cfg = SolverConfig::new(1.0, 0.5);
    let r = solve_opt_k(&d, &cfg).unwrap();
    check_valid(&d, &cfg, &r);
    check_trace(&r);
    assert!((r.objective - 0.079_786_4).abs() < 2e-6, "{}", r.objective);
    let g = brute_force_opt_k(&d, &cfg, 17).unwrap();
    assert!(g.objective >= r.objective - 1e-9);
    let fine = refined_grid_search(&d, 1.0, 0.5, 9, 20, |q| delta_of(&d, q)).unwrap().unwrap();
    assert!((fine.objective - r.objective).abs() < 2e-3, "{} vs {}", fine.objective, r.objective);
}

#[test]
fn deterministic() {
    let d = fixture();
    let cfg = SolverConfig::new(1.0, 0.5);
    let a = solve_opt_k(&d, &cfg).unwrap();
    let b = solve_opt_k(&d, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn json_shape() {
    let r = solve_opt_k(&fixture(), &SolverConfig::new(1.0, 0.5)).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for f in ["k", "epsilon", "zeta", "objective", "entries"] {
        assert!(v.get(f).is_some(), "{f}");
    }
    assert!(v["certificate"]["iterations"].is_array() && v["certificate"]["slacks"].is_array());
}

#[test]
fn beats_grr_when_grr_is_admissible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 10 {
        let k = rng.random_range(2..=5);
        let p = random_simplex(&mut rng, k);
        let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        let d = dist(&p, &r);
        let eps = rng.random_range(0.2..3.0);
        let g = grr_matrix(k, eps).unwrap();
        let grr_err: f64 = (0..k).map(|i| p[i] * (1.0 - g.get(i, i))).sum();
        let zeta = (grr_err + rng.random_range(0.0..0.1)).min(1.0);
        let cfg = SolverConfig::new(eps, zeta);
        let res = solve_opt_k(&d, &cfg).unwrap();
        check_valid(&d, &cfg, &res);
        check_trace(&res);
        let grr_delta = delta(&induced_distribution(&d, &g).unwrap()).unwrap();
        assert!(res.objective <= grr_delta + cfg.objective_tol, "{} > {}", res.objective, grr_delta);
        checked += 1;
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

#[test]
fn min_error_examples() {
    let d = fixture();
    let e = min_achievable_error(&d, 1.0).unwrap();
    assert!((e - 0.420_204_18).abs() < 1e-6, "{e}");
    let g = refined_grid_search(&d, 1.0, 1.0, 9, 20, |q| (0..3).map(|i| d.group_probs()[i] * (1.0 - q[i][i])).sum())
        .unwrap()
        .unwrap();
    assert!((g.objective - e).abs() < 1e-3, "{} vs {e}", g.objective);
    let big = min_achievable_error(&d, 12.0).unwrap();
    let grr = grr_matrix(3, 12.0).unwrap();
    assert!(big <= 1.0 - grr.get(0, 0) + 1e-12 && big < 1e-4, "{big}");

    let d2 = dist(&[0.3, 0.7], &[0.2, 0.6]);
    let e2 = min_achievable_error(&d2, 0.9).unwrap();
    let g2 = refined_grid_search(&d2, 0.9, 1.0, 25, 20, |q| 0.3 * q[0][1] + 0.7 * q[1][0]).unwrap().unwrap();
    assert!((g2.objective - e2).abs() < 1e-6, "{} vs {e2}", g2.objective);
    // for two values the cheapest truthful point is randomized response
    assert!((e2 - 1.0 / (0.9f64.exp() + 1.0)).abs() < 1e-12);
}

#[test]
fn grid_limits() {
    let d4 = dist(&[0.25; 4], &[0.1, 0.2, 0.3, 0.4]);
    assert!(matches!(brute_force_opt_k(&d4, &SolverConfig::new(1.0, 1.0), 5), Err(Error::TooLarge(_))));
    assert!(matches!(brute_force_opt_k(&fixture(), &SolverConfig::new(1.0, 1.0), 26), Err(Error::TooLarge(_))));
}

#[test]
fn grid_on_fair_data_is_zero() {
    let d = dist(&[0.5, 0.2, 0.3], &[0.3, 0.3, 0.3]);
    let g = brute_force_opt_k(&d, &SolverConfig::new(1.0, 1.0), 9).unwrap();
    assert!(g.objective < 1e-12);
}

#[test]
fn binary_grid_within_a_cell() {
    let d = dist(&[0.35, 0.65], &[0.25, 0.7]);
    let eps = 1.2;
    let zeta = min_achievable_error(&d, eps).unwrap() + 0.1;
    let cfg = SolverConfig::new(eps, zeta);
    let r = solve_opt_k(&d, &cfg).unwrap();
    let g = brute_force_opt_k(&d, &cfg, 25).unwrap();
    assert!(g.objective >= r.objective - 1e-9);
    // objective moves by at most |∂Δ/∂q| · cell; bound the slope loosely
    assert!(g.objective - r.objective < 0.05, "{} vs {}", g.objective, r.objective);
    let fine = refined_grid_search(&d, eps, zeta, 25, 20, |q| delta_of(&d, q)).unwrap().unwrap();
    assert!((fine.objective - r.objective).abs() < 1e-4, "{} vs {}", fine.objective, r.objective);
}

