use proptest::prelude::*;

use nlexit::domain_geometry::DomainSpec;
use nlexit::exit_time::{exit_times, stopped_path};
use nlexit::path_engine::{path_metric, GridPath, TimeGrid};
use nlexit::regularity_lab::{partition_indicator_approx, PartitionScheme};
use nlexit::upper_expectation::{estimate, LawSamples};

fn grid() -> TimeGrid {
    TimeGrid::new(2.0, 32).unwrap()
}

fn path_strategy() -> impl Strategy<Value = GridPath> {
    prop::collection::vec(-3.0f64..3.0, 33).prop_map(|v| GridPath::from_flat(grid(), 1, v).unwrap())
}

fn laws(values: Vec<Vec<f64>>) -> Vec<LawSamples> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, values)| LawSamples {
            law_id: i,
            label: format!("law{i}"),
            values,
        })
        .collect()
}

fn family() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..5, 1usize..40).prop_flat_map(|(n_laws, n)| {
        let one = prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), n_laws);
        (one.clone(), one)
    })
}

fn ue(v: &[Vec<f64>]) -> f64 {
    estimate(&laws(v.to_vec())).unwrap().value
}

fn zip_with(a: &[Vec<f64>], b: &[Vec<f64>], f: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metric_is_a_bounded_pseudometric(a in path_strategy(), b in path_strategy(), c in path_strategy()) {
        let ab = path_metric(&a, &b, 20).unwrap().value;
        let ba = path_metric(&b, &a, 20).unwrap().value;
        let ac = path_metric(&a, &c, 20).unwrap().value;
        let cb = path_metric(&c, &b, 20).unwrap().value;
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(ab <= ac + cb + 1e-15);
        prop_assert_eq!(path_metric(&a, &a, 20).unwrap().value, 0.0);
    }

    #[test]
    fn partition_sums_to_one(k in 1u32..14, t in 0.0f64..=1.0) {
        let s = PartitionScheme::new(k).unwrap();
        let phis = s.phis(t);
        prop_assert!((phis.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(phis.iter().filter(|v| **v > 0.0).count() <= 2);
    }

    #[test]
    fn partition_gap_within_bound(k in 1u32..10, tau in 0.0f64..=1.0) {
        let s = PartitionScheme::new(k).unwrap();
        let r = partition_indicator_approx(&s, tau, &TimeGrid::new(1.0, 1024).unwrap()).unwrap();
        prop_assert!(r.identity_error <= 1e-12);
        prop_assert!(r.l1_gap <= 3.0 * s.h());
    }

    #[test]
    fn estimator_is_sublinear((x, y) in family()) {
        let sum = zip_with(&x, &y, |a, b| a + b);
        prop_assert!(ue(&sum) <= ue(&x) + ue(&y) + 1e-12);
    }

    #[test]
    fn estimator_is_monotone((x, y) in family()) {
        let hi = zip_with(&x, &y, f64::max);
        prop_assert!(ue(&x) <= ue(&hi));
    }

    #[test]
    fn estimator_shifts_constants((x, _y) in family(), c in -5.0f64..5.0) {
        let shifted: Vec<Vec<f64>> = x.iter().map(|v| v.iter().map(|p| p + c).collect()).collect();
        prop_assert!((ue(&shifted) - (ue(&x) + c)).abs() <= 1e-12 * (1.0 + ue(&x).abs() + c.abs()));
    }

    #[test]
    fn estimator_converges_upward((x, _y) in family()) {
        let mut prev = f64::NEG_INFINITY;
        for n in 1..=50 {
            let xn: Vec<Vec<f64>> = x.iter().map(|v| v.iter().map(|p| p - 1.0 / n as f64).collect()).collect();
            let e = ue(&xn);
            prop_assert!(e >= prev);
            prev = e;
        }
        prop_assert!((ue(&x) - prev) <= 0.02 + 1e-12);
    }

    #[test]
    fn larger_domains_exit_later(p in path_strategy(), a in 0.1f64..2.0, extra in 0.0f64..1.0) {
        let small = DomainSpec::interval(-a, a).unwrap();
        let large = DomainSpec::interval(-a - extra, a + extra).unwrap();
        let (s, l) = (exit_times(&p, &small).unwrap(), exit_times(&p, &large).unwrap());
        prop_assert!(s.tau_open <= l.tau_open);
        prop_assert!(s.tau_closed <= l.tau_closed);
        prop_assert!(s.tau_open <= s.tau_closed);
    }

    #[test]
    fn exit_time_ignores_the_path_after_exit(p in path_strategy(), q in path_strategy(), a in 0.1f64..2.5) {
        // Galmarino: paths agreeing up to τ have the same τ
        let d = DomainSpec::interval(-a, a).unwrap();
        let r = exit_times(&p, &d).unwrap();
        let Some(t) = r.tau_open.time() else { return Ok(()); };
        let stop = p.grid().last_node_at_or_before(t);
        let mut spliced = p.as_flat().to_vec();
        spliced[stop + 1..].copy_from_slice(&q.as_flat()[stop + 1..]);
        let spliced = GridPath::from_flat(grid(), 1, spliced).unwrap();
        prop_assert_eq!(exit_times(&spliced, &d).unwrap().tau_open, r.tau_open);
        let stopped = stopped_path(&p, t).unwrap();
        prop_assert_eq!(exit_times(&stopped, &d).unwrap().tau_open, r.tau_open);
    }
}
