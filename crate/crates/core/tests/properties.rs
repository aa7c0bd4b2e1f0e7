use gripforge::dataset::make_windows;
use gripforge::eval::{quantile, r_squared};
use gripforge::models::gru_update;
use gripforge::nncore::{relu_scalar, sigmoid_scalar};
use gripforge::signals::{apply_filter, design_bandpass, design_notch, ScalerParams, Segment, Table};
use gripforge::training::mse_loss;
use proptest::prelude::*;

fn signal(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..max_len)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bandpass_is_linear(x in signal(300), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let f = design_bandpass(20.0, 95.0, 200.0, 4).unwrap();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| ((i as u64 * 31 + seed) % 17) as f64 - 8.0 + 0.1 * v).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fx = apply_filter(&f, &x).unwrap();
        let fy = apply_filter(&f, &y).unwrap();
        let fm = apply_filter(&f, &mix).unwrap();
        for n in 0..x.len() {
            prop_assert!(close(fm[n], a * fx[n] + b * fy[n], 1e-9), "n={n}: {} vs {}", fm[n], a * fx[n] + b * fy[n]);
        }
    }

    #[test]
    fn notch_is_time_invariant(x in signal(200), delay in 0usize..50) {
        let f = design_notch(50.0, 30.0, 200.0).unwrap();
        let mut shifted = vec![0.0; delay];
        shifted.extend_from_slice(&x);
        let direct = apply_filter(&f, &x).unwrap();
        let late = apply_filter(&f, &shifted).unwrap();
        prop_assert!(late[..delay].iter().all(|v| *v == 0.0));
        prop_assert_eq!(&late[delay..], &direct[..]);
    }

    #[test]
    fn scaler_round_trips_and_bounds(rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..40)) {
        let data: Vec<f64> = rows.concat();
        let n = rows.len();
        let table = Table::new(3, 200.0, data, vec![Segment { id: "s".into(), start: 0, len: n }]).unwrap();
        let s = ScalerParams::fit(&table);
        for r in 0..n {
            for (c, &v) in table.row(r).iter().enumerate() {
                let u = s.apply_value(c, v);
                prop_assert!((0.0..=1.0).contains(&u));
                if s.max[c] > s.min[c] {
                    prop_assert!(close(s.invert_value(c, u), v, 1e-12));
                } else {
                    prop_assert_eq!(u, 0.5);
                }
            }
        }
    }

    #[test]
    fn gate_activations_stay_in_range(x in -1e3f64..1e3) {
        let s = sigmoid_scalar(x);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(relu_scalar(x) >= 0.0);
        if x.abs() < 30.0 {
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn gru_update_is_convex(
        triples in prop::collection::vec((0.0f64..=1.0, -5.0f64..5.0, -5.0f64..5.0), 1..16)
    ) {
        let z: Vec<f64> = triples.iter().map(|t| t.0).collect();
        let hp: Vec<f64> = triples.iter().map(|t| t.1).collect();
        let ht: Vec<f64> = triples.iter().map(|t| t.2).collect();
        let h = gru_update(&z, &hp, &ht);
        for k in 0..h.len() {
            let (lo, hi) = (hp[k].min(ht[k]), hp[k].max(ht[k]));
            prop_assert!(h[k] >= lo - 1e-12 && h[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn window_count_per_segment(lens in prop::collection::vec(1usize..60, 1..4), w in 1usize..10, h in 1usize..6) {
        let mut segments = Vec::new();
        let mut start = 0;
        for (i, &len) in lens.iter().enumerate() {
            segments.push(Segment { id: format!("s{i}"), start, len });
            start += len;
        }
        let data: Vec<f64> = (0..start * 2).map(|i| (i % 7) as f64).collect();
        let table = Table::new(2, 200.0, data, segments).unwrap();
        let expected: usize = lens.iter().map(|&n| n.saturating_sub(w + h - 1)).sum();
        match make_windows(&table, w, h) {
            Ok(ds) => {
                prop_assert!(lens.iter().all(|&n| n >= w + h));
                prop_assert_eq!(ds.len(), expected);
                for i in 0..ds.len() {
                    let row = ds.target_row(i);
                    prop_assert_eq!(ds.sample(i).target(), table.row(row)[1]);
                }
            }
            Err(_) => prop_assert!(lens.iter().any(|&n| n < w + h)),
        }
    }

    #[test]
    fn metric_identities(x in prop::collection::vec(-50.0f64..50.0, 2..64)) {
        prop_assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        if x.iter().any(|v| (v - mean).abs() > 1e-6) {
            prop_assert_eq!(r_squared(&x, &x).unwrap(), 1.0);
            let flat = vec![mean; x.len()];
            prop_assert_eq!(r_squared(&flat, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn quantiles_are_monotone(mut x in prop::collection::vec(-50.0f64..50.0, 1..64), q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0) {
        x.sort_by(f64::total_cmp);
        let (a, b) = (q1.min(q2), q1.max(q2));
        prop_assert!(quantile(&x, a) <= quantile(&x, b));
        prop_assert_eq!(quantile(&x, 0.0), x[0]);
        prop_assert_eq!(quantile(&x, 1.0), x[x.len() - 1]);
    }
}
