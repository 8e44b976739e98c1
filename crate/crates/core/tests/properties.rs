use std::sync::Arc;

use modlab::bounds::{psi_bound, BoundParams};
use modlab::convergence::{local_uniform_gap, MappingSequence};
use modlab::curves::{rho_length, shortest_curve};
use modlab::geometry::{distance_to_boundary, rasterize, separation_ratio, Continuum, Point, Shape};
use modlab::parallel;
use modlab::qmaps::{proof_configuration, MappingSpec, TestDensity};
use modlab::{p_modulus, CurveFamily, DensityField, Execution, SolverOptions};
use proptest::prelude::*;

fn pt() -> impl Strategy<Value = Point> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y)| Point::new2(x, y))
}

fn polyline(pts: &[Point]) -> Continuum {
    Continuum::polyline("C", pts, 0.05).unwrap()
}

/// Two facing vertical segments inside `[-1, 1]²`, for small modulus solves.
fn segments(dx: f64, y0: f64, len: f64) -> (Continuum, Continuum) {
    let e = Continuum::segment("E", Point::new2(-dx, y0), Point::new2(-dx, y0 + len), 0.01).unwrap();
    let f = Continuum::segment("F", Point::new2(dx, y0), Point::new2(dx, y0 + len), 0.01).unwrap();
    (e, f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn separation_ratio_symmetric_and_scale_free(
        a in prop::collection::vec(pt(), 2..5),
        b in prop::collection::vec(pt(), 2..5),
        lambda in 0.1..10.0f64,
    ) {
        let (e, f) = (polyline(&a), polyline(&b));
        prop_assume!(e.diameter() > 1e-3 && f.diameter() > 1e-3);
        let r = separation_ratio(&e, &f).unwrap();
        prop_assert_eq!(r, separation_ratio(&f, &e).unwrap());
        let scale = |c: &Continuum| Continuum { points: c.points.iter().map(|p| p.scale(lambda)).collect(), label: c.label.clone() };
        let rs = separation_ratio(&scale(&e), &scale(&f)).unwrap();
        prop_assert!((rs - r).abs() <= 1e-9 * r.max(1.0), "{} vs {}", rs, r);
    }

    #[test]
    fn rasterization_refines(cx in -0.3..0.3f64, cy in -0.3..0.3f64, radius in 0.6..1.5f64, res in 8.0..20.0f64) {
        let shape = Shape::disk(Point::new2(cx, cy), radius);
        let coarse = rasterize(&shape, res.floor()).unwrap();
        let fine = rasterize(&shape, 2.0 * res.floor()).unwrap();
        for k in coarse.keys() {
            let hit = (0..2).any(|i| (0..2).any(|j| fine.id_of(&[2 * k[0] + i, 2 * k[1] + j, 0]).is_some()));
            prop_assert!(hit, "cell {:?} has no occupied sub-cell", k);
        }
    }

    #[test]
    fn boundary_distance_shrinks_with_k(cut1 in 0.1..0.8f64, cut2 in 0.1..0.8f64) {
        let d = rasterize(&Shape::disk(Point::origin(2), 1.0), 16.0).unwrap();
        let (small, big) = (cut1.min(cut2), cut1.max(cut2));
        let k_small: Vec<Point> = d.centers().into_iter().filter(|p| p.norm() < small).collect();
        let k_big: Vec<Point> = d.centers().into_iter().filter(|p| p.norm() < big).collect();
        prop_assume!(!k_small.is_empty());
        prop_assert!(distance_to_boundary(&k_big, &d).unwrap() <= distance_to_boundary(&k_small, &d).unwrap());
    }

    #[test]
    fn psi_is_monotone(t1 in 0.01..3.0f64, t2 in 0.01..3.0f64, delta in 0.1..2.0f64, a in 1.0..3.0f64, c in 0.1..5.0f64, q in 0.1..10.0f64) {
        let b = BoundParams::new(2, delta, a, c, q).unwrap();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert!(psi_bound(&b, lo) <= psi_bound(&b, hi));
        prop_assert!(psi_bound(&b, hi) < 0.5 * delta);
        let base = psi_bound(&b, hi);
        let more_q = psi_bound(&BoundParams { q_l1: 2.0 * q, ..b.clone() }, hi);
        let more_a = psi_bound(&BoundParams { a_qed: 2.0 * a, ..b.clone() }, hi);
        let more_c = psi_bound(&BoundParams { c_loewner: 2.0 * c, ..b.clone() }, hi);
        let more_delta = psi_bound(&BoundParams { delta: 2.0 * delta, ..b.clone() }, hi);
        prop_assert!(more_q <= base && more_a <= base);
        prop_assert!(more_c >= base && more_delta >= base);
    }

    #[test]
    fn test_densities_are_admissible(r1 in 0.05..2.0f64, ratio in 1.1..10.0f64) {
        for eta in [TestDensity::uniform(r1, r1 * ratio).unwrap(), TestDensity::log_radial(r1, r1 * ratio).unwrap()] {
            prop_assert!((eta.integral() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn proof_epsilons_differ_by_the_distance(x in (-0.4..0.4f64, -0.4..0.4f64), y in (-0.4..0.4f64, -0.4..0.4f64), alpha in 0.5..2.0f64) {
        let d = rasterize(&Shape::disk(Point::origin(2), 1.0), 16.0).unwrap();
        let (x, y) = (Point::new2(x.0, x.1), Point::new2(y.0, y.1));
        prop_assume!(x.dist(&y) > 0.05);
        let map = MappingSpec::radial_stretch(2, alpha).unwrap();
        if let Ok(cfg) = proof_configuration(&map, &d, x, y, 0.2) {
            prop_assert!((cfg.eps2 - cfg.eps1 - x.dist(&y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_gap_decreases_along_the_sequence(c in 0.2..3.0f64) {
        let d = rasterize(&Shape::disk(Point::origin(2), 1.0), 12.0).unwrap();
        let seq = MappingSequence::radial_stretch(2, c).unwrap();
        let gaps: Vec<f64> = (0..8).map(|i| local_uniform_gap(&seq, 1 << i, &d.centers()).unwrap()).collect();
        for w in gaps.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15, "{:?}", gaps);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rho_length_additive_and_monotone(seed in 0u64..1000, bump in 0.0..2.0f64) {
        let d = Arc::new(rasterize(&Shape::Box { lo: Point::new2(-1.0, -1.0), hi: Point::new2(1.0, 1.0) }, 8.0).unwrap());
        let (e, f) = segments(0.8, -0.5, 1.0);
        let fam = CurveFamily::joining(d.clone(), &e, &f).unwrap();
        let curves = modlab::curves::sample_curves(&fam, 3, seed).unwrap();
        let vals: Vec<f64> = (0..d.len()).map(|i| 0.5 + ((i as u64 * 2654435761 + seed) % 97) as f64 / 97.0).collect();
        let rho = DensityField::new(d.clone(), vals.clone()).unwrap();
        let more = DensityField::new(d.clone(), vals.iter().map(|v| v + bump).collect()).unwrap();
        for c in &curves {
            prop_assert!(rho_length(c, &rho) <= rho_length(c, &more));
            if c.len() >= 3 {
                let mid = c.len() / 2;
                let (a, b) = (c.subcurve(0, mid).unwrap(), c.subcurve(mid, c.len() - 1).unwrap());
                let joined = a.concat(&b).unwrap();
                prop_assert_eq!(&joined, c);
                let sum = rho_length(&a, &rho) + rho_length(&b, &rho);
                prop_assert!((sum - rho_length(c, &rho)).abs() <= 1e-12 * sum.max(1.0));
            }
        }
    }

    #[test]
    fn sandwich_and_domain_monotonicity(dx in 0.15..0.6f64, y0 in -0.6..0.0f64, len in 0.2..0.6f64, p in 1.5..3.5f64) {
        let inner = Arc::new(rasterize(&Shape::Box { lo: Point::new2(-0.7, -0.7), hi: Point::new2(0.7, 0.7) }, 10.0).unwrap());
        let outer = Arc::new(rasterize(&Shape::Box { lo: Point::new2(-1.5, -1.5), hi: Point::new2(1.5, 1.5) }, 10.0).unwrap());
        let (e, f) = segments(dx, y0, len);
        let opts = SolverOptions { p, ..SolverOptions::default() };
        let fam = CurveFamily::joining(inner.clone(), &e, &f).unwrap();
        let r = p_modulus(&fam, &opts).unwrap();
        prop_assert!(r.dual_lower_bound <= r.value * (1.0 + 1e-12));
        prop_assert!(r.value <= r.upper_bound * (1.0 + 1e-12));
        let rho_hat = r.rho_star.scaled(1.0 / r.min_curve_length);
        prop_assert!((rho_hat.energy(p) - r.upper_bound).abs() <= 1e-9 * r.upper_bound);
        // fewer curves, smaller modulus
        let wide = p_modulus(&CurveFamily::joining(outer, &e, &f).unwrap(), &opts).unwrap();
        prop_assert!(r.dual_lower_bound <= wide.upper_bound);
    }
}

#[test]
fn shortest_curve_is_deterministic() {
    let d = Arc::new(rasterize(&Shape::disk(Point::origin(2), 1.0), 16.0).unwrap());
    let (e, f) = segments(0.5, -0.3, 0.6);
    let fam = CurveFamily::joining(d.clone(), &e, &f).unwrap();
    let rho = DensityField::constant(d, 1.0);
    let first = shortest_curve(&fam, &rho).unwrap();
    for _ in 0..5 {
        assert_eq!(shortest_curve(&fam, &rho).unwrap(), first);
    }
}

#[test]
fn solves_are_bitwise_reproducible_across_execution_modes() {
    let d = Arc::new(rasterize(&Shape::unit_square(), 12.0).unwrap());
    let fams: Vec<CurveFamily> = (0..4)
        .map(|i| {
            let dx = 0.1 + 0.08 * i as f64;
            let e = Continuum::segment("E", Point::new2(0.5 - dx, 0.3), Point::new2(0.5 - dx, 0.7), 0.01).unwrap();
            let f = Continuum::segment("F", Point::new2(0.5 + dx, 0.3), Point::new2(0.5 + dx, 0.7), 0.01).unwrap();
            CurveFamily::joining(d.clone(), &e, &f).unwrap()
        })
        .collect();
    let opts = SolverOptions::default();
    let seq = parallel::map(Execution::Sequential, &fams, |f| p_modulus(f, &opts).unwrap());
    let par = parallel::map(Execution::Parallel, &fams, |f| p_modulus(f, &opts).unwrap());
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.rho_star.values(), b.rho_star.values());
        assert_eq!(a.iterations, b.iterations);
    }
}
