use altmin::altmin::{bcd_sweeps, surrogate_value, MuEvent, MuSchedule};
use altmin::datasets::{decode_idx_images, decode_idx_labels, encode_idx_images, encode_idx_labels, IdxImages};
use altmin::model::{read_checkpoint, write_checkpoint, NetworkSpec};
use altmin::numerics::{activate, multinomial_loss, softmax};
use altmin::{ActivationKind, DenseMatrix, NetworkState};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |d| DenseMatrix::from_vec(rows, cols, d).unwrap())
}

fn naive(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum())
}

fn sq_residuals(w: &DenseMatrix, x: &DenseMatrix, c: &DenseMatrix) -> f64 {
    c.sub(&x.matmul_t(w).unwrap()).unwrap().sum_squares()
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop((a, b) in (1usize..6, 1usize..6, 1usize..6)
        .prop_flat_map(|(n, k, m)| (matrix(n, k), matrix(k, m))))
    {
        let fast = a.matmul(&b).unwrap();
        prop_assert!(fast.max_abs_diff(&naive(&a, &b)).unwrap() < 1e-12);
        prop_assert!(a.matmul_t(&b.transpose()).unwrap().max_abs_diff(&fast).unwrap() < 1e-12);
    }

    #[test]
    fn activations_stay_in_range(v in prop::collection::vec(-5.0..5.0f64, 1..20)) {
        prop_assert!(activate(ActivationKind::Sign, &v).iter().all(|&s| s == 1.0 || s == -1.0));
        prop_assert!(activate(ActivationKind::ReLU, &v).iter().all(|&r| r >= 0.0));
        prop_assert!(activate(ActivationKind::Tanh, &v).iter().all(|&t| t > -1.0 && t < 1.0));
        prop_assert_eq!(activate(ActivationKind::Identity, &v).into_vec(), v);
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0..50.0f64, 1..12)) {
        let p = softmax(&z);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn multinomial_loss_is_nonnegative(w in matrix(3, 4), x in prop::collection::vec(-2.0..2.0f64, 3), k in 0usize..4) {
        let mut y = vec![0.0; 4];
        y[k] = 1.0;
        prop_assert!(multinomial_loss(&y, &x, &w).unwrap() >= 0.0);
    }

    /// Σ‖cᵢ − W aᵢ‖² and the memory surrogate differ by a W-independent
    /// constant.
    #[test]
    fn memory_form_is_equivalent(x in matrix(12, 4), c in matrix(12, 3), w1 in matrix(3, 4), w2 in matrix(3, 4)) {
        let a = x.t_matmul(&x).unwrap();
        let b = c.t_matmul(&x).unwrap();
        let d1 = sq_residuals(&w1, &x, &c) - surrogate_value(&w1, &a, &b).unwrap();
        let d2 = sq_residuals(&w2, &x, &c) - surrogate_value(&w2, &a, &b).unwrap();
        prop_assert!((d1 - d2).abs() < 1e-8 * (1.0 + d1.abs()));
        prop_assert!((d1 - c.sum_squares()).abs() < 1e-8 * (1.0 + d1.abs()));
    }

    #[test]
    fn bcd_sweep_never_increases_the_surrogate(x in matrix(10, 4), c in matrix(10, 3), w0 in matrix(3, 4)) {
        let a = x.t_matmul(&x).unwrap();
        let b = c.t_matmul(&x).unwrap();
        let mut w = w0;
        let mut prev = surrogate_value(&w, &a, &b).unwrap();
        for _ in 0..5 {
            bcd_sweeps(&mut w, &a, &b, 1).unwrap();
            let next = surrogate_value(&w, &a, &b).unwrap();
            prop_assert!(next <= prev + 1e-9 * (1.0 + prev.abs()));
            prev = next;
        }
    }

    #[test]
    fn mu_is_nondecreasing_and_clamped(
        mu0 in 0.0..2.0f64,
        inc in 0.0..0.5f64,
        mult in 1.0..2.0f64,
        max in 0.0..3.0f64,
        events in prop::collection::vec(any::<bool>(), 0..40),
    ) {
        let s = MuSchedule { mu0, batch_increment: inc, epoch_multiplier: mult, mu_max: max };
        let mut mu = s.initial();
        prop_assert!(mu <= max);
        for e in events {
            let next = s.step(mu, if e { MuEvent::Epoch } else { MuEvent::Batch });
            prop_assert!(next >= mu && next <= max);
            mu = next;
        }
    }

    #[test]
    fn idx_round_trip_is_exact(count in 0usize..5, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let img = IdxImages { count, rows, cols, pixels: pixels.clone() };
        prop_assert_eq!(decode_idx_images(&encode_idx_images(&img)).unwrap(), img);
        prop_assert_eq!(decode_idx_labels(&encode_idx_labels(&pixels)).unwrap(), pixels);
    }

    #[test]
    fn idx_decoding_arbitrary_bytes_does_not_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_idx_images(&bytes);
        let _ = decode_idx_labels(&bytes);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), h in 1usize..6) {
        let spec = NetworkSpec::mlp(4, &[h, 3], 2, ActivationKind::Tanh, seed).unwrap();
        let net = NetworkState::init(spec).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back: NetworkState = read_checkpoint(buf.as_slice()).unwrap();
        prop_assert_eq!(back, net);
    }
}
