use nbq_core::qat::{reconstruct, reconstruct_assign};
use nbq_core::quantizer::{decode, encode, levels, loss_delta, sampling_loss, staircase, Density, QuantSpec};
use nbq_core::shift::FxVal;
use nbq_core::tensor::{conv2d, softmax};
use nbq_core::Tensor;
use proptest::prelude::*;

/// Nearest level by exhaustive search; ties go to the larger magnitude.
fn nearest_level(w: f64, n: u8) -> f64 {
    let mut cands: Vec<f64> = (0..(1u32 << (n - 1)).saturating_sub(1)).map(|i| 2f64.powi(-(i as i32))).collect();
    if n == 1 {
        return if w < 0.0 { -1.0 } else { 1.0 };
    }
    cands.push(0.0);
    let a = w.abs();
    let best = cands
        .iter()
        .copied()
        .min_by(|x, y| (a - x).abs().partial_cmp(&(a - y).abs()).unwrap().then(y.partial_cmp(x).unwrap()))
        .unwrap();
    if w < 0.0 {
        -best
    } else {
        best
    }
}

proptest! {
    #[test]
    fn staircase_is_nearest_level(w in -1.0f64..=1.0, n in 1u8..=8) {
        let s = staircase(w, n);
        prop_assert_eq!(s, nearest_level(w, n));
        prop_assert!(levels(n).contains(&s));
        prop_assert_eq!(staircase(-w, n), if s == 0.0 { 0.0 } else { -s });
    }

    #[test]
    fn codes_round_trip(ws in prop::collection::vec(-1.0f64..=1.0, 1..64), n in 1u8..=8, scale in 0.01f64..4.0) {
        let spec = QuantSpec::new(n).unwrap().with_scale(scale).unwrap();
        let levels = Tensor::new(vec![ws.len()], ws.iter().map(|&w| scale * staircase(w, n)).collect()).unwrap();
        let k = encode(&levels, &spec).unwrap();
        prop_assert_eq!(decode(&k), levels);
    }

    #[test]
    fn q78_round_trip_and_bound(raw in any::<i16>(), x in -200.0f64..200.0) {
        prop_assert_eq!(FxVal::from_real(FxVal(raw).to_real()), FxVal(raw));
        let v = FxVal::from_real(x).to_real();
        if x.abs() < 127.99 {
            prop_assert!((v - x).abs() <= 1.0 / 512.0);
        } else {
            prop_assert!(v.abs() >= 127.99);
        }
    }

    /// Each zero-gradient step shrinks the distance to the level by exactly α.
    #[test]
    fn reconstruct_contracts(w in -1.0f64..=1.0, alpha in 0.05f64..0.95, n in 1u8..=8) {
        let spec = QuantSpec::new(n).unwrap().with_alpha(alpha).unwrap();
        let a = staircase(w, n);
        let mut t = Tensor::new(vec![1], vec![w]).unwrap();
        let mut gap = (w - a).abs();
        for _ in 0..6 {
            reconstruct_assign(&mut t, &spec);
            let next = (t.data()[0] - a).abs();
            prop_assert!((next - alpha * gap).abs() <= 1e-12 * (1.0 + gap));
            prop_assert_eq!(staircase(t.data()[0], n), a);
            gap = next;
        }
        let one = QuantSpec::new(n).unwrap().with_alpha(1.0).unwrap();
        prop_assert_eq!(reconstruct(&Tensor::new(vec![1], vec![w]).unwrap(), &one).data()[0], w);
    }

    #[test]
    fn loss_delta_is_consecutive_difference(sigma in 0.05f64..2.0, n in 2u32..10) {
        let phi = Density::truncated_gaussian(sigma).unwrap();
        let d = sampling_loss(&phi, n).unwrap() - sampling_loss(&phi, n - 1).unwrap();
        prop_assert!((loss_delta(&phi, n).unwrap() - d).abs() <= 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-30.0f64..30.0, 12)) {
        let p = softmax(&Tensor::new(vec![3, 4], v).unwrap()).unwrap();
        for row in p.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn conv_is_linear_in_the_input(a in prop::collection::vec(-1.0f64..1.0, 50), b in prop::collection::vec(-1.0f64..1.0, 50), c in -3.0f64..3.0) {
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 7 % 11) as f64 - 5.0) / 5.0);
        let ta = Tensor::new(vec![1, 2, 5, 5], a).unwrap();
        let tb = Tensor::new(vec![1, 2, 5, 5], b).unwrap();
        let mix = ta.zip_map(&tb, |x, y| x + c * y).unwrap();
        let lhs = conv2d(&mix, &w, 1, 1).unwrap();
        let rhs = conv2d(&ta, &w, 1, 1).unwrap().zip_map(&conv2d(&tb, &w, 1, 1).unwrap(), |x, y| x + c * y).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}
