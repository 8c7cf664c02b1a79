use autorecon_core::autodiff::grad_check_many;
use autorecon_core::{Result, Tape, Tensor, Var};
use proptest::prelude::*;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Values with magnitude in [0.1, 2] so no gradient component sits at a
/// cancellation point of the readout.
fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        (0.1f64..2.0, any::<bool>()).prop_map(|(m, neg)| if neg { -m } else { m }),
        len,
    )
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = Tensor> {
    values(r * c).prop_map(move |d| Tensor::from_matrix(r, c, d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..4, 1usize..4)
}

/// `sum(w ⊙ y)` with a fixed weight pattern, so every output element
/// carries a distinct nonzero sensitivity.
fn readout(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|k| 0.5 + 0.37 * k as f64).collect())?;
    let w = tape.constant(w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check(xs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    grad_check_many(
        |tape, v| {
            let y = f(tape, v)?;
            if tape.value(y).is_scalar() {
                Ok(y)
            } else {
                readout(tape, y)
            }
        },
        xs,
        STEP,
    )
    .unwrap()
}

fn pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    dims().prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn add_gradient((a, b) in pair()) {
        prop_assert!(check(&[a, b], |t, v| t.add(v[0], v[1])) < TOL);
    }

    #[test]
    fn sub_gradient((a, b) in pair()) {
        prop_assert!(check(&[a, b], |t, v| t.sub(v[0], v[1])) < TOL);
    }

    #[test]
    fn mul_gradient((a, b) in pair()) {
        prop_assert!(check(&[a, b], |t, v| t.mul(v[0], v[1])) < TOL);
    }

    #[test]
    fn matmul_gradient((a, b) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(r, k, c)| (matrix(r, k), matrix(k, c)))) {
        prop_assert!(check(&[a, b], |t, v| t.matmul(v[0], v[1])) < TOL);
    }

    #[test]
    fn scale_gradient(a in dims().prop_flat_map(|(r, c)| matrix(r, c)), k in -3.0f64..3.0) {
        prop_assume!(k.abs() > 0.1);
        prop_assert!(check(&[a], |t, v| t.scale(v[0], k)) < TOL);
    }

    #[test]
    fn tanh_gradient(a in dims().prop_flat_map(|(r, c)| matrix(r, c))) {
        prop_assert!(check(&[a], |t, v| t.tanh(v[0])) < TOL);
    }

    #[test]
    fn sigmoid_gradient(a in dims().prop_flat_map(|(r, c)| matrix(r, c))) {
        prop_assert!(check(&[a], |t, v| t.sigmoid(v[0])) < TOL);
    }

    #[test]
    fn add_row_gradient((a, row) in dims().prop_flat_map(|(r, c)| (matrix(r, c), matrix(1, c)))) {
        let n = row.len();
        let row = row.reshape(vec![n]).unwrap();
        prop_assert!(check(&[a, row], |t, v| t.add_row(v[0], v[1])) < TOL);
    }

    #[test]
    fn transpose_gradient(a in dims().prop_flat_map(|(r, c)| matrix(r, c))) {
        prop_assert!(check(&[a], |t, v| t.transpose(v[0])) < TOL);
    }

    #[test]
    fn concat_rows_gradient((a, b) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(r1, r2, c)| (matrix(r1, c), matrix(r2, c)))) {
        prop_assert!(check(&[a, b], |t, v| t.concat_rows(&[v[0], v[1]])) < TOL);
    }

    #[test]
    fn concat_cols_gradient((a, b) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(r, c1, c2)| (matrix(r, c1), matrix(r, c2)))) {
        prop_assert!(check(&[a, b], |t, v| t.concat_cols(&[v[0], v[1]])) < TOL);
    }

    #[test]
    fn slice_rows_gradient((a, start, count) in (2usize..5, 1usize..4).prop_flat_map(|(r, c)| (matrix(r, c), 0..r)).prop_flat_map(|(a, s)| { let r = a.rows(); (Just(a), Just(s), 1..=r - s) })) {
        prop_assert!(check(&[a], |t, v| t.slice_rows(v[0], start, count)) < TOL);
    }

    #[test]
    fn slice_cols_gradient((a, start, width) in (1usize..4, 2usize..5).prop_flat_map(|(r, c)| (matrix(r, c), 0..c)).prop_flat_map(|(a, s)| { let c = a.cols(); (Just(a), Just(s), 1..=c - s) })) {
        prop_assert!(check(&[a], |t, v| t.slice_cols(v[0], start, width)) < TOL);
    }

    #[test]
    fn sum_gradient(a in dims().prop_flat_map(|(r, c)| matrix(r, c))) {
        prop_assert!(check(&[a], |t, v| t.sum(v[0])) < TOL);
    }

    #[test]
    fn mean_squared_diff_gradient((a, b) in pair()) {
        prop_assert!(check(&[a, b], |t, v| t.mean_squared_diff(v[0], v[1])) < TOL);
    }

    #[test]
    fn fan_out_sums_contributions(x in values(1), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::vector(x).unwrap(), true).unwrap();
        let ax = tape.scale(xv, a).unwrap();
        let bx = tape.scale(xv, b).unwrap();
        let y = tape.add(ax, bx).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        prop_assert_eq!(g.get(xv).unwrap().item(), a + b);
    }

    #[test]
    fn complementary_slices_reassemble(a in (2usize..5, 2usize..6).prop_flat_map(|(r, c)| matrix(r, c)), cut in 1usize..5) {
        let c = a.cols();
        let cut = cut.min(c - 1);
        let mut tape = Tape::new();
        let v = tape.leaf(a.clone(), false).unwrap();
        let left = tape.slice_cols(v, 0, cut).unwrap();
        let right = tape.slice_cols(v, cut, c - cut).unwrap();
        let back = tape.concat_cols(&[left, right]).unwrap();
        prop_assert_eq!(tape.value(back), &a);

        let r = a.rows();
        let top = tape.slice_rows(v, 0, r / 2).unwrap();
        let bottom = tape.slice_rows(v, r / 2, r - r / 2).unwrap();
        let back = tape.concat_rows(&[top, bottom]).unwrap();
        prop_assert_eq!(tape.value(back), &a);
    }

    #[test]
    fn replay_reproduces_values_and_gradients((a, b) in pair()) {
        let mut tape = Tape::new();
        let va = tape.leaf(a, true).unwrap();
        let vb = tape.leaf(b, true).unwrap();
        let p = tape.mul(va, vb).unwrap();
        let h = tape.tanh(p).unwrap();
        let loss = tape.mean_squared_diff(h, va).unwrap();
        let again = tape.replay().unwrap();
        prop_assert!(tape.values_identical(&again));
        let g1 = tape.backward(loss).unwrap();
        let g2 = again.backward(loss).unwrap();
        for v in [va, vb] {
            let (x, y) = (g1.get(v).unwrap(), g2.get(v).unwrap());
            prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
