//! Manifold pipeline on the unperturbed 3:4 circle at a coarse grid.

use std::f64::consts::PI;
use std::sync::OnceLock;

use whiskers::dynamics::{ModelParams, Propagation, State4};
use whiskers::grid::FixedPoint;
use whiskers::manifold::*;
use whiskers::seed::{refine_periodic_orbit, Resonance, ShootingOptions};
use whiskers::torus::{compute_errors, init_from_periodic_orbit, make_lambda_constant, TorusSolution};

fn circle() -> &'static TorusSolution {
    static SOL: OnceLock<TorusSolution> = OnceLock::new();
    SOL.get_or_init(|| {
        let p = ModelParams::jupiter_europa(0.0);
        let w = 1.559620297f64;
        let orbit = refine_periodic_orbit(
            &State4::new(1.033133, 0.0, 0.0, 1.054882),
            4.0 * PI * PI / w,
            Resonance { m: 3, n: 4 },
            &p,
            &ShootingOptions::default(),
        )
        .unwrap();
        let sol = init_from_periodic_orbit(&orbit, &p, 512, &FixedPoint::default()).unwrap();
        let (_, data) = compute_errors(&sol).unwrap();
        make_lambda_constant(&sol, &data).unwrap()
    })
}

fn unstable(degree: usize) -> ManifoldSeries {
    order_by_order(circle(), Stability::Unstable, degree, 1e-2, &OrderOptions::default())
        .unwrap()
        .0
}

#[test]
fn lower_orders_vanish() {
    let (_, rep) = order_by_order(circle(), Stability::Stable, 4, 1e-2, &OrderOptions::default()).unwrap();
    assert_eq!(rep.sub_order.len(), 3);
    for (k, r) in rep.sub_order {
        assert!(r <= 1e-9, "order {k}: {r:e}");
    }
}

#[test]
fn first_coefficient_has_requested_size() {
    let s = linear_series(circle(), Stability::Unstable, 0.05).unwrap();
    assert!((s.coefs[1].sup_norm() - 0.05).abs() < 1e-12);
    assert_eq!(s.degree(), 1);
}

#[test]
fn higher_degree_widens_domain() {
    let series = unstable(3);
    let d1 = fundamental_domain(&series.truncated(1), 1e-6, 10.0).unwrap().domain;
    let d3 = fundamental_domain(&series, 1e-6, 10.0).unwrap().domain;
    assert!(d3 > 3.0 * d1, "D1={d1} D3={d3}");
}

#[test]
fn linear_residual_is_quadratic() {
    let series = unstable(3);
    let floor = invariance_residual(&series, 0.0).unwrap();
    let t = series.truncated(1);
    let samples: Vec<(f64, f64)> = (0..10)
        .map(|j| {
            let s = 0.05 * 1.5f64.powi(j);
            (s, invariance_residual(&t, s).unwrap())
        })
        .collect();
    let slope = residual_slope(&samples, floor).unwrap();
    assert!((slope - 2.0).abs() < 0.3, "{slope}");
}

#[test]
fn symmetry_twice_is_identity() {
    let ws = order_by_order(circle(), Stability::Stable, 2, 1e-2, &OrderOptions::default())
        .unwrap()
        .0;
    let back = symmetry_conjugate(&symmetry_conjugate(&ws).unwrap()).unwrap();
    for (a, b) in ws.coefs.iter().zip(&back.coefs) {
        assert_eq!(a.sub(b).max_abs(), 0.0);
    }
}

#[test]
fn mesh_layers_follow_the_map() {
    let mut series = unstable(3);
    series.domain = fundamental_domain(&series, 1e-6, 10.0).unwrap().domain;
    let mesh = globalize_mesh(&series, series.domain, 3, 1, &MeshOptions::default()).unwrap();
    assert_eq!(mesh.points.len(), 512 * 3 * 2);
    // s = 0 stays on the circle
    let p = mesh.point(1, 5, 1);
    assert!(p.valid);
    assert!((p.x - series.coefs[0].state(5)).norm() < 1e-8);
    // layer 1 at s_j approximates W(θ_i, λ s_j)
    let q = mesh.point(1, 7, 2);
    let want = evaluate_global(&series, 2.0 * PI * 7.0 / 512.0, q.s, Propagation::Auto).unwrap();
    assert!((q.x - want).norm() < 1e-5, "{:e}", (q.x - want).norm());
}

#[test]
fn mesh_round_trips_through_text() {
    let series = unstable(2);
    let mesh = globalize_mesh(&series, 0.5, 3, 1, &MeshOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_mesh(&mesh, &mut buf).unwrap();
    let back = read_mesh(buf.as_slice()).unwrap();
    assert_eq!((back.n, back.l, back.k_max), (mesh.n, mesh.l, mesh.k_max));
    assert_eq!(back.points, mesh.points);
}

#[test]
fn series_round_trips_through_text() {
    let series = unstable(2);
    let mut buf = Vec::new();
    write_series(&series, &mut buf).unwrap();
    let back = read_series(buf.as_slice(), &series.params).unwrap();
    assert_eq!(back.degree(), 2);
    assert_eq!(back.lam, series.lam);
    for (a, b) in series.coefs.iter().zip(&back.coefs) {
        assert_eq!(a.sub(b).max_abs(), 0.0);
    }
}

#[test]
fn truncated_mesh_file_is_rejected() {
    let text = "# k i j s x y px py valid\n0 0 0 0 1 0 0 1 1\n0 1 0 0 1 0 0 1 1\n0 0 1 0 1 0 0 1 1\n";
    assert!(read_mesh(text.as_bytes()).is_err());
}
