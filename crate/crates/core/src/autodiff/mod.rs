//! Reverse-mode automatic differentiation on a flat tape.
//!
//! The engine is deliberately small: dense `f64` tensors, a closed set of
//! primitive operations ([`OpKind`]), and a single-use [`Tape`] that records
//! the forward pass and replays it backwards. There is no graph pruning, no
//! broadcasting beyond bias vectors and scalars, and no in-place mutation.
//! Everything downstream (the encoder, the contrastive losses, training)
//! composes these primitives, so a gradient bug here poisons the whole
//! model; the test suite leans on finite-difference checks for every
//! primitive and for full end-to-end losses.

mod check;
mod tape;
mod tensor;

pub use check::grad_check;
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_of(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_exactly_half() {
        let mut tape = Tape::new();
        let x = tape.parameter(Tensor::scalar(0.0)).unwrap();
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(scalar_of(&tape, y), 0.5);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data()[0], 0.25);
    }

    #[test]
    fn square_gradient_matches_closed_form() {
        // loss = sum(w * w), d/dw = 2w
        let mut tape = Tape::new();
        let w = tape
            .parameter(Tensor::from_vec(vec![3.0, -1.5, 0.25]))
            .unwrap();
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        assert_eq!(scalar_of(&tape, loss), 9.0 + 2.25 + 0.0625);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[6.0, -3.0, 0.5]);
    }

    #[test]
    fn bias_broadcast_add_and_gradient() {
        let mut tape = Tape::new();
        let m = tape
            .constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let b = tape.parameter(Tensor::from_vec(vec![10.0, 20.0, 30.0])).unwrap();
        let s = tape.add(m, b).unwrap();
        assert_eq!(
            tape.value(s).data(),
            &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
        );
        let loss = tape.sum_all(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        // Each bias entry is used once per row.
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn mean_over_axis_known_values() {
        let mut tape = Tape::new();
        let m = tape
            .constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let rows = tape.mean_axis(m, 0).unwrap();
        assert_eq!(tape.value(rows).shape(), &[3]);
        assert_eq!(tape.value(rows).data(), &[2.5, 3.5, 4.5]);
        let cols = tape.mean_axis(m, 1).unwrap();
        assert_eq!(tape.value(cols).data(), &[2.0, 5.0]);
    }

    #[test]
    fn concat_then_slice_roundtrips() {
        let mut tape = Tape::new();
        let a = tape
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let b = tape
            .constant(Tensor::matrix(1, 2, vec![5.0, 6.0]).unwrap())
            .unwrap();
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).shape(), &[3, 2]);
        let back = tape.slice(c, 0, 0, 2).unwrap();
        assert_eq!(tape.value(back), tape.value(a));
    }

    #[test]
    fn cosine_similarity_corner_values() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0, 0.0])).unwrap();
        let b = tape.constant(Tensor::from_vec(vec![0.0, 1.0])).unwrap();
        let ortho = tape.cosine(a, b).unwrap();
        assert_eq!(scalar_of(&tape, ortho), 0.0);

        let c = tape.constant(Tensor::from_vec(vec![2.0, 0.0])).unwrap();
        let same = tape.cosine(a, c).unwrap();
        assert!((scalar_of(&tape, same) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_similarity_of_zero_vector_is_zero_with_zero_gradient() {
        let mut tape = Tape::new();
        let z = tape.parameter(Tensor::from_vec(vec![0.0, 0.0, 0.0])).unwrap();
        let b = tape.parameter(Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let s = tape.cosine(z, b).unwrap();
        assert_eq!(scalar_of(&tape, s), 0.0);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(z).unwrap().data(), &[0.0; 3]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn l2_norm_of_zero_vector_is_zero_with_zero_gradient() {
        let mut tape = Tape::new();
        let z = tape.parameter(Tensor::from_vec(vec![0.0, 0.0])).unwrap();
        let n = tape.l2_norm(z).unwrap();
        assert_eq!(scalar_of(&tape, n), 0.0);
        let grads = tape.backward(n).unwrap();
        assert_eq!(grads.get(z).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.parameter(Tensor::scalar(2.0)).unwrap();
        let unused = tape.parameter(Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        let loss = tape.mul(used, used).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(used).unwrap().data(), &[4.0]);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_consumes_the_tape() {
        let mut tape = Tape::new();
        let x = tape.parameter(Tensor::scalar(1.0)).unwrap();
        let y = tape.exp(x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.parameter(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn domain_errors_are_reported() {
        let mut tape = Tape::new();
        let neg = tape.constant(Tensor::from_vec(vec![1.0, -1.0])).unwrap();
        assert!(matches!(tape.log(neg), Err(Error::Domain { op: "log", .. })));

        let zero = tape.constant(Tensor::from_vec(vec![1.0, 0.0])).unwrap();
        let num = tape.constant(Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(matches!(
            tape.div(num, zero),
            Err(Error::Domain { op: "divide", .. })
        ));
    }

    #[test]
    fn overflow_surfaces_as_non_finite_error() {
        let mut tape = Tape::new();
        let big = tape.constant(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(tape.exp(big), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn mismatched_matmul_shapes_are_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        let b = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        assert!(matches!(
            tape.matmul(a, b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn reshape_passes_gradients_through() {
        let mut tape = Tape::new();
        let x = tape
            .parameter(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let flat = tape.reshape(x, vec![4, 1]).unwrap();
        let w = tape.constant(Tensor::matrix(1, 1, vec![3.0]).unwrap()).unwrap();
        let y = tape.matmul(flat, w).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().shape(), &[2, 2]);
        assert_eq!(grads.get(x).unwrap().data(), &[3.0; 4]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut tape = Tape::new();
            let a = tape
                .parameter(Tensor::matrix(
                    4,
                    3,
                    (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ).unwrap())
                .unwrap();
            let b = tape
                .parameter(Tensor::matrix(
                    3,
                    2,
                    (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ).unwrap())
                .unwrap();
            let p = tape.matmul(a, b).unwrap();
            let s = tape.sigmoid(p).unwrap();
            let loss = tape.mean_all(s).unwrap();
            let value = scalar_of(&tape, loss);
            let tape_len = tape.len();
            let grads = tape.backward(loss).unwrap();
            (
                value.to_bits(),
                tape_len,
                grads.get(a).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    /// Builds a random tensor with entries in `lo..hi`.
    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    /// Random entries with magnitude in `lo..hi` and random sign, keeping
    /// values away from zero for kinked or singular operations.
    fn rand_tensor_signed(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let mag = rng.gen_range(lo..hi);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Reduces an op output to a scalar via a fixed random weighting so that
    /// every output element influences the loss.
    fn weighted_sum(tape: &mut Tape, v: Var, weights: &Tensor) -> Var {
        let w = tape.constant(weights.clone()).unwrap();
        let prod = tape.mul(v, w).unwrap();
        tape.sum_all(prod).unwrap()
    }

    const FD_STEP: f64 = 1e-5;
    const FD_TOL: f64 = 1e-4;
    const FD_SEEDS: u64 = 100;

    /// Finite-difference check for every primitive over 100 random seeds.
    /// Input domains are nudged away from kinks (relu at 0) and
    /// singularities (log, divide) so the central difference is valid.
    #[test]
    fn every_primitive_matches_finite_differences() {
        for seed in 0..FD_SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_binary(OpKind::Add, &mut rng, seed);
            check_binary(OpKind::Subtract, &mut rng, seed);
            check_binary(OpKind::ElementwiseMultiply, &mut rng, seed);
            check_binary(OpKind::Divide, &mut rng, seed);
            check_matmul(&mut rng, seed);
            check_unary(OpKind::Transpose, &mut rng, seed);
            check_unary(OpKind::Sigmoid, &mut rng, seed);
            check_unary(OpKind::Relu, &mut rng, seed);
            check_unary(OpKind::Exp, &mut rng, seed);
            check_unary(OpKind::Log, &mut rng, seed);
            check_unary(OpKind::SumOverAxis(seed as usize % 2), &mut rng, seed);
            check_unary(OpKind::MeanOverAxis(seed as usize % 2), &mut rng, seed);
            check_unary(OpKind::Slice { axis: 0, start: 1, len: 2 }, &mut rng, seed);
            check_concat(&mut rng, seed);
            check_unary(OpKind::ScalarMultiply(-1.75), &mut rng, seed);
            check_l2_and_cosine(&mut rng, seed);
        }
    }

    fn assert_fd(op: &str, seed: u64, err: f64) {
        assert!(
            err < FD_TOL,
            "{} gradient mismatch at seed {}: relative error {:.3e}",
            op,
            seed,
            err
        );
    }

    fn check_binary(op: OpKind, rng: &mut ChaCha8Rng, seed: u64) {
        let lhs = rand_tensor(rng, vec![3, 4], -2.0, 2.0);
        let rhs = match seed % 3 {
            0 => match op {
                OpKind::Divide => rand_tensor_signed(rng, vec![3, 4], 0.3, 2.0),
                _ => rand_tensor(rng, vec![3, 4], -2.0, 2.0),
            },
            1 => match op {
                OpKind::Divide => rand_tensor_signed(rng, vec![4], 0.3, 2.0),
                _ => rand_tensor(rng, vec![4], -2.0, 2.0),
            },
            _ => match op {
                OpKind::Divide => rand_tensor_signed(rng, vec![1], 0.3, 2.0),
                _ => rand_tensor(rng, vec![1], -2.0, 2.0),
            },
        };
        let weights = rand_tensor(rng, vec![3, 4], -1.0, 1.0);
        let err = grad_check(
            |tape, vars| {
                let out = tape.apply(op, vars)?;
                Ok(weighted_sum(tape, out, &weights))
            },
            &[lhs, rhs],
            FD_STEP,
        )
        .unwrap();
        assert_fd(&format!("{:?}", op), seed, err);
    }

    fn check_matmul(rng: &mut ChaCha8Rng, seed: u64) {
        let a = rand_tensor(rng, vec![3, 4], -2.0, 2.0);
        let b = rand_tensor(rng, vec![4, 2], -2.0, 2.0);
        let weights = rand_tensor(rng, vec![3, 2], -1.0, 1.0);
        let err = grad_check(
            |tape, vars| {
                let out = tape.matmul(vars[0], vars[1])?;
                Ok(weighted_sum(tape, out, &weights))
            },
            &[a, b],
            FD_STEP,
        )
        .unwrap();
        assert_fd("MatMul", seed, err);
    }

    fn check_unary(op: OpKind, rng: &mut ChaCha8Rng, seed: u64) {
        let input = match op {
            OpKind::Log => rand_tensor(rng, vec![3, 4], 0.1, 2.0),
            OpKind::Relu => rand_tensor_signed(rng, vec![3, 4], 0.01, 2.0),
            _ => rand_tensor(rng, vec![3, 4], -2.0, 2.0),
        };
        let mut probe = Tape::new();
        let pv = probe.constant(input.clone()).unwrap();
        let out_shape = probe.apply(op, &[pv]).unwrap();
        let weights = rand_tensor(rng, probe.value(out_shape).shape().to_vec(), -1.0, 1.0);
        let err = grad_check(
            |tape, vars| {
                let out = tape.apply(op, vars)?;
                Ok(weighted_sum(tape, out, &weights))
            },
            &[input],
            FD_STEP,
        )
        .unwrap();
        assert_fd(&format!("{:?}", op), seed, err);
    }

    fn check_concat(rng: &mut ChaCha8Rng, seed: u64) {
        let a = rand_tensor(rng, vec![2, 3], -2.0, 2.0);
        let b = rand_tensor(rng, vec![1, 3], -2.0, 2.0);
        let c = rand_tensor(rng, vec![2, 3], -2.0, 2.0);
        let weights = rand_tensor(rng, vec![5, 3], -1.0, 1.0);
        let err = grad_check(
            |tape, vars| {
                let out = tape.concat(vars, 0)?;
                Ok(weighted_sum(tape, out, &weights))
            },
            &[a, b, c],
            FD_STEP,
        )
        .unwrap();
        assert_fd("Concat", seed, err);
    }

    fn check_l2_and_cosine(rng: &mut ChaCha8Rng, seed: u64) {
        let a = rand_tensor_signed(rng, vec![5], 0.5, 2.0);
        let err = grad_check(
            |tape, vars| tape.l2_norm(vars[0]),
            &[a],
            FD_STEP,
        )
        .unwrap();
        assert_fd("L2Norm", seed, err);

        let a = rand_tensor_signed(rng, vec![5], 0.5, 2.0);
        let b = rand_tensor_signed(rng, vec![5], 0.5, 2.0);
        let err = grad_check(
            |tape, vars| tape.cosine(vars[0], vars[1]),
            &[a, b],
            FD_STEP,
        )
        .unwrap();
        assert_fd("CosineSimilarity", seed, err);
    }

    /// backward(a*f + b*g) must equal a*grad(f) + b*grad(g) to within 1e-10.
    #[test]
    fn gradient_accumulation_is_linear() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = rand_tensor(&mut rng, vec![2, 3], -1.5, 1.5);
            let w = rand_tensor(&mut rng, vec![3, 2], -1.5, 1.5);
            let a = rng.gen_range(-2.0..2.0);
            let b = rng.gen_range(-2.0..2.0);

            let f_expr = |tape: &mut Tape, x: Var, w: Var| {
                let p = tape.matmul(x, w).unwrap();
                let s = tape.sigmoid(p).unwrap();
                tape.sum_all(s).unwrap()
            };
            let g_expr = |tape: &mut Tape, x: Var, w: Var| {
                let p = tape.matmul(x, w).unwrap();
                let e = tape.mul(p, p).unwrap();
                tape.mean_all(e).unwrap()
            };

            let grads_of = |expr: &dyn Fn(&mut Tape, Var, Var) -> Var| {
                let mut tape = Tape::new();
                let xv = tape.parameter(x.clone()).unwrap();
                let wv = tape.parameter(w.clone()).unwrap();
                let loss = expr(&mut tape, xv, wv);
                let g = tape.backward(loss).unwrap();
                (
                    g.get(xv).unwrap().data().to_vec(),
                    g.get(wv).unwrap().data().to_vec(),
                )
            };
            let (gfx, gfw) = grads_of(&f_expr);
            let (ggx, ggw) = grads_of(&g_expr);

            let mut tape = Tape::new();
            let xv = tape.parameter(x.clone()).unwrap();
            let wv = tape.parameter(w.clone()).unwrap();
            let fv = f_expr(&mut tape, xv, wv);
            let gv = g_expr(&mut tape, xv, wv);
            let fa = tape.scale(fv, a).unwrap();
            let gb = tape.scale(gv, b).unwrap();
            let combined = tape.add(fa, gb).unwrap();
            let grads = tape.backward(combined).unwrap();

            for (i, got) in grads.get(xv).unwrap().data().iter().enumerate() {
                let want = a * gfx[i] + b * ggx[i];
                assert!(
                    (got - want).abs() <= 1e-10,
                    "x gradient not linear at seed {}: {} vs {}",
                    seed,
                    got,
                    want
                );
            }
            for (i, got) in grads.get(wv).unwrap().data().iter().enumerate() {
                let want = a * gfw[i] + b * ggw[i];
                assert!(
                    (got - want).abs() <= 1e-10,
                    "w gradient not linear at seed {}: {} vs {}",
                    seed,
                    got,
                    want
                );
            }
        }
    }
}
