use std::f64::consts::PI;

use whiskers::dynamics::{ModelParams, State4};
use whiskers::grid::FixedPoint;
use whiskers::seed::{refine_periodic_orbit, Resonance, ShootingOptions};
use whiskers::torus::{
    compute_errors, init_from_periodic_orbit, make_lambda_constant, shrink_grid, tail_mass, SolverOptions,
    TorusSolution,
};

fn circle(n: usize) -> TorusSolution {
    let p = ModelParams::jupiter_europa(0.0);
    let orbit = refine_periodic_orbit(
        &State4::new(1.033133, 0.0, 0.0, 1.054882),
        4.0 * PI * PI / 1.559620297,
        Resonance { m: 3, n: 4 },
        &p,
        &ShootingOptions::default(),
    )
    .unwrap();
    let sol = init_from_periodic_orbit(&orbit, &p, n, &FixedPoint::default()).unwrap();
    let (_, data) = compute_errors(&sol).unwrap();
    make_lambda_constant(&sol, &data).unwrap()
}

#[test]
fn oversized_grid_shrinks_and_stays_solved() {
    let big = circle(512).resample(4096);
    let opts = SolverOptions::default();
    let small = shrink_grid(&big, &opts, 64).unwrap();
    assert!(small.n() < 4096 && small.n() >= 64, "{}", small.n());
    let (errs, _) = compute_errors(&small).unwrap();
    assert!(errs.e_sup() <= opts.tol && errs.e_red_sup() <= opts.tol);
    assert!(tail_mass(&small.k) <= 0.01 * opts.tail_threshold);
    assert_eq!(small.omega, big.omega);
}

#[test]
fn floor_is_respected() {
    let sol = circle(512);
    let same = shrink_grid(&sol, &SolverOptions::default(), 512).unwrap();
    assert_eq!(same.n(), 512);
    assert_eq!(same.k.sub(&sol.k).max_abs(), 0.0);
}
