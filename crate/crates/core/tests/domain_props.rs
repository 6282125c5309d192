use homog::domain::{make_ball_domain, make_halfspace_domain, make_interval_domain, DomainSpec};
use proptest::prelude::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn domain(kind: u8, m: usize, r: f64) -> DomainSpec {
    match kind % 3 {
        0 => make_ball_domain(m, r).unwrap(),
        1 => make_halfspace_domain(m).unwrap(),
        _ => make_interval_domain(-r, 0.5 * r).unwrap(),
    }
}

fn point_pair() -> impl Strategy<Value = (u8, usize, f64, Vec<f64>, Vec<f64>)> {
    (0u8..3, 1usize..5, 0.1f64..10.0).prop_flat_map(|(kind, m, r)| {
        let m = if kind == 2 { 1 } else { m };
        (
            Just(kind),
            Just(m),
            Just(r),
            prop::collection::vec(-20.0f64..20.0, m),
            prop::collection::vec(-20.0f64..20.0, m),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn projection_is_idempotent((kind, m, r, x, _) in point_pair()) {
        let d = domain(kind, m, r);
        let p = d.project(&x);
        prop_assert!(d.contains(&p));
        prop_assert_eq!(d.project(&p), p);
    }

    #[test]
    fn projection_is_nonexpansive((kind, m, r, x, y) in point_pair()) {
        let d = domain(kind, m, r);
        let (px, py) = (d.project(&x), d.project(&y));
        prop_assert!(dist(&px, &py) <= dist(&x, &y) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn projection_fixes_interior_points((kind, m, r, x, _) in point_pair()) {
        let d = domain(kind, m, r);
        if d.phi(&x) > 0.0 {
            prop_assert_eq!(d.project(&x), x);
        }
    }

    #[test]
    fn outside_points_land_on_the_boundary((kind, m, r, x, _) in point_pair()) {
        let d = domain(kind, m, r);
        if !d.contains(&x) {
            prop_assert!(d.is_on_boundary(&d.project(&x)));
        }
    }
}

#[test]
fn bad_parameters_are_rejected() {
    assert!(make_ball_domain(0, 1.0).is_err());
    assert!(make_ball_domain(2, -1.0).is_err());
    assert!(make_interval_domain(1.0, -1.0).is_err());
    assert!(make_halfspace_domain(0).is_err());
}

#[test]
fn validation_passes_for_builtins() {
    for d in [
        make_ball_domain(3, 2.0).unwrap(),
        make_interval_domain(-1.0, 1.0).unwrap(),
        make_halfspace_domain(2).unwrap(),
    ] {
        assert!(d.validate(2000, 1).passed());
    }
}
