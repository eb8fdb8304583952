//! Randomized invariants of the channel, sensors, networks and tape.

use molmix::channel::{propagate_accumulate, release_with, ChannelMatrixSet, MixtureVector, SystemConfig};
use molmix::diffcore::{check_gradients, Matrix, ParamStore, Tape};
use molmix::networks::Model;
use molmix::sensor::{ArraySpec, SensorArray, SensorModel};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(5, 7), shift in -50.0f64..50.0) {
        let mut t = Tape::new();
        let shifted = x.map(|v| v * 10.0 + shift);
        let v = t.constant(shifted);
        let p = t.softmax(v);
        let p = t.value(p);
        for r in 0..p.rows() {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(r).iter().all(|&q| (0.0..=1.0).contains(&q)));
        }
    }

    #[test]
    fn encoders_stay_feasible_for_any_weights(seed in any::<u64>(), blow_up in 1.0f64..1e3) {
        let system = SystemConfig::reference(3, 2, vec![8], 2e4, 0.01);
        let mut model = Model::autoencoder(&system, 1e-5, seed);
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let scaled = model.store.value(id).map(|v| v * blow_up);
            *model.store.value_mut(id) = scaled;
        }
        for table in model.alphabets().unwrap() {
            for row in &table.rows {
                prop_assert!(row.is_feasible(2e4), "{row:?}");
            }
        }
    }

    #[test]
    fn superposition_is_exactly_linear(
        x1 in prop::collection::vec(0.0f64..2e4, 3),
        x2 in prop::collection::vec(0.0f64..2e4, 3),
        h1 in prop::collection::vec(1e-3f64..0.1, 3),
        h2 in prop::collection::vec(1e-3f64..0.1, 3),
    ) {
        let h = ChannelMatrixSet { gains: vec![h1.clone(), h2.clone()] };
        let y = propagate_accumulate(&[MixtureVector(x1.clone()), MixtureVector(x2.clone())], &h).unwrap();
        for m in 0..3 {
            prop_assert_eq!(y.0[m], h1[m] * x1[m] + h2[m] * x2[m]);
        }
    }

    #[test]
    fn release_is_non_negative(x in prop::collection::vec(0.0f64..2e4, 4), n in prop::collection::vec(-3e4f64..3e4, 4)) {
        let out = release_with(&MixtureVector(x.clone()), &n);
        for ((o, x), n) in out.0.iter().zip(&x).zip(&n) {
            prop_assert_eq!(*o, (x + n).max(0.0));
        }
    }

    #[test]
    fn sensor_response_is_monotone(seed in any::<u64>(), y in prop::collection::vec(0.0f64..500.0, 3), m in 0usize..3, dy in 1e-3f64..100.0) {
        let a = SensorArray::generate(&ArraySpec { molecules: 3, sensors: 2, seed, z_scale: 1e-5, h_ref: 0.01, x_max: 2e4 }).unwrap();
        let mut up = y.clone();
        up[m] += dy;
        for (lo, hi) in a.respond(&y).iter().zip(a.respond(&up)) {
            prop_assert!(hi > *lo);
        }
    }

    #[test]
    fn linear_array_equals_matrix_product(
        gains in prop::collection::vec(prop::collection::vec(1e-3f64..10.0, 4), 3),
        y in prop::collection::vec(0.0f64..1e3, 4),
    ) {
        let a = SensorArray::linear(gains.clone()).unwrap();
        let z = a.respond(&y);
        // Dense oracle: plain row-by-column dot products.
        for (r, row) in gains.iter().enumerate() {
            let mut acc = 0.0;
            for (g, v) in row.iter().zip(&y) {
                acc += g * v;
            }
            prop_assert_eq!(z[r], acc);
        }
        let mut t = Tape::new();
        let yv = t.constant(Matrix::from_vec(1, 4, y.clone()).unwrap());
        let zt = a.respond_tape(&mut t, yv).unwrap();
        prop_assert_eq!(t.value(zt).as_slice(), z.as_slice());
    }

    #[test]
    fn frozen_batchnorm_matches_train_mode_at_batch_statistics(x in matrix(9, 3)) {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let gamma = t.constant(Matrix::from_vec(1, 3, vec![1.5, 0.5, 2.0]).unwrap());
        let beta = t.constant(Matrix::from_vec(1, 3, vec![0.1, -0.2, 0.0]).unwrap());
        let (train, stats) = t.batch_norm(xv, gamma, beta, 1e-5).unwrap();
        // Stored variance is unbiased; the normalization uses the biased one.
        let biased: Vec<f64> = stats.var.iter().map(|v| v * 8.0 / 9.0).collect();
        let eval = t.frozen_batch_norm(xv, gamma, beta, &stats.mean, &biased, 1e-5).unwrap();
        for (a, b) in t.value(train).as_slice().iter().zip(t.value(eval).as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = molmix::rng::seeded(seed);
        let mut r = |rows, cols, lo: f64, hi: f64| {
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
        };
        let mut store = ParamStore::new();
        let x = store.add("x", r(6, 3, 0.5, 3.0));
        let w = store.add("w", r(3, 4, -1.0, 1.0));
        let b = store.add("b", r(1, 4, -0.5, 0.5));
        let g = store.add("g", r(1, 4, 0.5, 1.5));
        let be = store.add("be", r(1, 4, -0.5, 0.5));
        let exps = vec![0.4, 0.7, 1.0];
        let report = check_gradients(&mut store, 1e-6, |t, s| {
            let xv = t.param(s, x);
            let p = t.power(xv, exps.clone())?;
            let sg = t.scaled_sigmoid(p, 3.0);
            let (wv, bv) = (t.param(s, w), t.param(s, b));
            let a = t.affine(sg, wv, Some(bv))?;
            let (gv, bev) = (t.param(s, g), t.param(s, be));
            let (n, _) = t.batch_norm(a, gv, bev, 1e-5)?;
            let sl = t.slice(n, 1, 3)?;
            let head = t.slice(n, 0, 1)?;
            let c = t.concat(&[head, sl])?;
            let sc = t.scale(c, 0.7);
            t.softmax_cross_entropy(sc, &[0, 1, 2, 3, 0, 1])
        }).unwrap();
        prop_assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
