use std::f64::consts::PI;

use proptest::prelude::*;
use rabitrack::projective::switch_probability;
use rabitrack::{count_switches, projective_fisher, projective_loglike, projective_mle, ProjectiveRecord};

#[test]
fn curvature_at_half_switching_is_inverse_variance() {
    for (n_meas, tau) in [(100usize, 1.0), (400, 0.5), (1000, 2.0)] {
        let est = projective_mle(n_meas / 2, n_meas, tau).unwrap();
        let h = 1e-4;
        let l = |w: f64| projective_loglike(n_meas / 2, n_meas, w, tau).unwrap();
        let w = est.omega_ml;
        let second = (l(w + h) - 2.0 * l(w) + l(w - h)) / (h * h);
        let want = -1.0 / est.sigma.powi(2);
        assert!((second - want).abs() < 1e-5 * want.abs(), "{second} vs {want}");
        assert!((w - PI / (2.0 * tau)).abs() < 1e-12);
    }
}

#[test]
fn fisher_sum_does_not_depend_on_omega() {
    let (n_meas, tau) = (60usize, 1.0);
    let numeric = |omega: f64| -> f64 {
        let (p, dp) = (switch_probability(omega, tau), 0.5 * tau * (omega * tau).sin());
        (0..=n_meas)
            .map(|n| {
                let score = n as f64 * dp / p - (n_meas - n) as f64 * dp / (1.0 - p);
                projective_loglike(n, n_meas, omega, tau).unwrap().exp() * score * score
            })
            .sum()
    };
    for omega in [0.3, 1.0, 2.5] {
        assert!((numeric(omega) - projective_fisher(n_meas, tau)).abs() < 1e-6 * projective_fisher(n_meas, tau));
    }
}

proptest! {
    #[test]
    fn relabeling_keeps_the_estimate(bits in prop::collection::vec(any::<bool>(), 1..300), start in any::<bool>(), tau in 0.1f64..3.0) {
        let rec = ProjectiveRecord::new(bits, tau, start).unwrap();
        let flipped = rec.relabeled();
        prop_assert_eq!(count_switches(&rec), count_switches(&flipped));
        let a = projective_mle(count_switches(&rec), rec.len(), tau).unwrap();
        let b = projective_mle(count_switches(&flipped), flipped.len(), tau).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn estimate_stays_in_the_unaliased_range(n_meas in 1usize..2000, frac in 0.0f64..=1.0, tau in 0.01f64..5.0) {
        let n = ((n_meas as f64) * frac).round() as usize;
        let est = projective_mle(n, n_meas, tau).unwrap();
        prop_assert!(est.omega_ml >= 0.0 && est.omega_ml <= PI / tau * (1.0 + 1e-12));
    }

    #[test]
    fn aliased_drives_switch_equally(omega in 0.0f64..10.0, tau in 0.05f64..2.0) {
        let alias = 2.0 * PI / tau - omega;
        prop_assert!((switch_probability(omega, tau) - switch_probability(alias, tau)).abs() < 1e-12);
    }
}
