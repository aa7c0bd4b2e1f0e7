use gripforge::eval::r_squared;
use gripforge::signals::{preprocess_with_bank, FilterBank, PreprocessConfig, Recording};
use gripforge::synth::{synthesize, SynthConfig};

/// Least squares via normal equations and Gaussian elimination with pivoting.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, &t) in rows.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += r[i] * r[j];
            }
            a[i][k] += r[i] * t;
        }
    }
    for col in 0..k {
        let p = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, p);
        for row in 0..k {
            if row != col {
                let f = a[row][col] / a[col][col];
                for j in col..=k {
                    a[row][j] -= f * a[col][j];
                }
            }
        }
    }
    (0..k).map(|i| a[i][k] / a[i][i]).collect()
}

/// Bias plus per-channel mean |EMG| over the `w` samples ending at `n`.
fn features(rec: &Recording, n: usize, w: usize) -> Vec<f64> {
    let mut f = vec![1.0];
    for c in 0..rec.n_channels() {
        let ch = rec.emg_channel(c);
        f.push(ch[n + 1 - w..=n].iter().map(|v| v.abs()).sum::<f64>() / w as f64);
    }
    f
}

fn held_out_r2(recs: &[Recording], w: usize) -> f64 {
    let (mut tr_x, mut tr_y, mut te_x, mut te_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in recs {
        let n = rec.n_samples();
        let split = n * 85 / 100;
        for t in 19..n - 1 {
            let (x, y) = if t < split { (&mut tr_x, &mut tr_y) } else { (&mut te_x, &mut te_y) };
            x.push(features(rec, t, w));
            y.push(rec.force()[t + 1]);
        }
    }
    let beta = least_squares(&tr_x, &tr_y);
    let pred: Vec<f64> = te_x.iter().map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
    r_squared(&pred, &te_y).unwrap()
}

#[test]
fn emg_history_carries_more_force_information_than_one_sample() {
    let recs = synthesize(&SynthConfig {
        duration_s: 60.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let bank = FilterBank::design(&PreprocessConfig::default(), 200.0).unwrap();
    let filtered: Vec<Recording> = recs.iter().map(|r| preprocess_with_bank(r, &bank).unwrap()).collect();
    let single = held_out_r2(&filtered, 1);
    let window = held_out_r2(&filtered, 20);
    assert!(window > single + 0.1, "single-sample R² {single:.3}, 20-sample R² {window:.3}");
    assert!(window > 0.5, "20-sample R² {window:.3}");
}
