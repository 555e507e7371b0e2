//! Dense tensors, reverse-mode gradients, Adam and a finite-difference
//! gradient checker.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use tape::{matmul, transpose, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::error::Result;
    use crate::rng::seeded;

    fn m(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn primitive_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(Tensor::identity(2));
        let p = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(p), tape.value(a));

        let v = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        let r = tape.relu(v).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);

        let rows = tape.constant(m(&[&[1.0], &[2.0], &[3.0]]));
        let s = tape.segment_sum(rows, Arc::from(vec![0, 0, 1]), 2).unwrap();
        assert_eq!(tape.value(s), &m(&[&[3.0], &[3.0]]));

        let z = tape.constant(m(&[&[0.0, 0.0], &[3.0, 4.0]]));
        let n = tape.row_l2_normalize(z).unwrap();
        assert_eq!(tape.value(n).data(), &[0.0, 0.0, 0.6, 0.8]);

        let lse = tape.constant(m(&[&[1000.0, 1000.0], &[0.0, 0.0]]));
        let out = tape.log_sum_exp_rows(lse, false).unwrap();
        let expected = 2f64.ln();
        assert!((tape.value(out).data()[0] - 1000.0 - expected).abs() < 1e-9);
        assert!((tape.value(out).data()[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn primitive_errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(m(&[&[1.0, 2.0]]));
        let b = tape.constant(m(&[&[1.0, 2.0]]));
        assert!(tape.matmul(a, b).is_err());
        let neg = tape.constant(Tensor::vector(vec![1.0, -1.0]));
        assert!(tape.log(neg).is_err());
        let big = tape.constant(Tensor::vector(vec![1000.0]));
        assert!(matches!(tape.exp(big), Err(crate::Error::NonFinite(_))));
        let one = tape.constant(m(&[&[1.0]]));
        assert!(tape.log_sum_exp_rows(one, true).is_err());
        let v = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.5, -2.0, 3.0]));
        let loss = tape.sum(x, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![-1.0, 2.0]));
        let r = tape.relu(x).unwrap();
        let loss = tape.sum(r, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn matmul_sum_gradient_is_broadcast_row_sums() {
        let mut rng = seeded(3);
        let x0 = Tensor::<f64>::uniform(&[4, 3], 1.0, &mut rng);
        let w0 = Tensor::<f64>::uniform(&[3, 5], 1.0, &mut rng);
        let eval = |x: &Tensor<f64>| -> f64 { matmul(x, &w0).unwrap().data().iter().sum() };

        // oracle: central differences on x
        let h = 1e-5;
        let mut numeric = vec![0.0; x0.len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let mut plus = x0.clone();
            plus.data_mut()[e] += h;
            let mut minus = x0.clone();
            minus.data_mut()[e] -= h;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let row_sums: Vec<f64> = (0..3).map(|k| w0.row(k).iter().sum()).collect();
        for (e, n) in numeric.iter().enumerate() {
            assert!((n - row_sums[e % 3]).abs() < 1e-8);
        }

        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let w = tape.constant(w0.clone());
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum(y, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (e, g) in grads.get(x).unwrap().data().iter().enumerate() {
            assert!((g - row_sums[e % 3]).abs() < 1e-12);
        }
        assert!(grads.get(w).is_none());
    }

    /// Every primitive against central differences, each composed into a scalar
    /// through a fixed random weighting so gradients are generic.
    #[test]
    fn primitives_pass_finite_differences() {
        type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;
        let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
            ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1])),
            ("transpose", vec![vec![3, 4]], |t, v| t.transpose(v[0])),
            ("add", vec![vec![3, 4], vec![3, 4]], |t, v| t.add(v[0], v[1])),
            ("add_broadcast", vec![vec![3, 4], vec![1, 4]], |t, v| t.add(v[0], v[1])),
            ("sub", vec![vec![3, 4], vec![3, 4]], |t, v| t.sub(v[0], v[1])),
            ("mul", vec![vec![3, 4], vec![3, 4]], |t, v| t.mul(v[0], v[1])),
            ("mul_scalar", vec![vec![3, 4]], |t, v| t.mul_scalar(v[0], -1.7)),
            ("relu", vec![vec![3, 4]], |t, v| t.relu(v[0])),
            ("exp", vec![vec![3, 4]], |t, v| t.exp(v[0])),
            ("log", vec![vec![3, 4]], |t, v| {
                let e = t.exp(v[0])?;
                t.log(e)
            }),
            ("row_l2_normalize", vec![vec![3, 4]], |t, v| t.row_l2_normalize(v[0])),
            ("sum_rows", vec![vec![3, 4]], |t, v| t.sum(v[0], Some(0))),
            ("sum_cols", vec![vec![3, 4]], |t, v| t.sum(v[0], Some(1))),
            ("mean_rows", vec![vec![3, 4]], |t, v| t.mean_rows(v[0])),
            ("concat_rows", vec![vec![3, 4], vec![2, 4]], |t, v| t.concat_rows(&[v[0], v[1]])),
            ("segment_sum", vec![vec![5, 3]], |t, v| {
                t.segment_sum(v[0], Arc::from(vec![0, 0, 2, 1, 2]), 3)
            }),
            ("gather_rows", vec![vec![3, 4]], |t, v| t.gather_rows(v[0], Arc::from(vec![2, 0, 2, 1]))),
            ("scale_rows", vec![vec![3, 4]], |t, v| t.scale_rows(v[0], Arc::from(vec![0.5, -2.0, 3.0]))),
            ("log_sum_exp", vec![vec![4, 4]], |t, v| t.log_sum_exp_rows(v[0], false)),
            ("log_sum_exp_masked", vec![vec![4, 4]], |t, v| t.log_sum_exp_rows(v[0], true)),
            ("diagonal", vec![vec![4, 4]], |t, v| t.diagonal(v[0])),
            ("pick_per_row", vec![vec![3, 4]], |t, v| t.pick_per_row(v[0], Arc::from(vec![3, 0, 1]))),
        ];
        for (name, shapes, build) in cases {
            for draw in 0..5u64 {
                let mut rng = seeded(draw * 31 + shapes.len() as u64);
                let params: Vec<Tensor<f64>> =
                    shapes.iter().map(|s| Tensor::uniform(s, 1.0, &mut rng)).collect();
                let weight_seed = 1000 + draw;
                let objective = |ps: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
                    let mut tape = Tape::new();
                    let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
                    let out = build(&mut tape, &vars)?;
                    let shape = tape.value(out).shape().to_vec();
                    let w = tape.constant(Tensor::uniform(&shape, 1.0, &mut seeded(weight_seed)));
                    let prod = tape.mul(out, w)?;
                    let loss = tape.sum(prod, None)?;
                    let value = tape.value(loss).item()?;
                    let mut grads = tape.backward(loss)?;
                    Ok((value, vars.iter().map(|&v| grads.take(v).unwrap()).collect()))
                };
                let report = finite_diff_check(objective, &params, 1e-5, 1e-4).unwrap();
                assert!(report.pass, "{name} draw {draw}: {report:?}");
            }
        }
    }

    #[test]
    fn gradcheck_examples() {
        let quadratic = |ps: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
            let value = ps[0].data().iter().map(|x| x * x).sum();
            Ok((value, vec![ps[0].map(|x| 2.0 * x)]))
        };
        let theta = vec![Tensor::vector(vec![0.3, -1.2, 5.0, 0.0])];
        let report = finite_diff_check(quadratic, &theta, 1e-5, 1e-4).unwrap();
        assert!(report.pass);
        assert_eq!(report.checked, 4);

        let corrupted = |ps: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
            let value = ps[0].data().iter().map(|x| x * x).sum();
            Ok((value, vec![ps[0].map(|x| 2.1 * x)]))
        };
        assert!(!finite_diff_check(corrupted, &theta, 1e-5, 1e-4).unwrap().pass);

        assert!(finite_diff_check(quadratic, &theta, 0.0, 1e-4).is_err());
        let nan = |_: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
            Ok((f64::NAN, vec![Tensor::zeros(&[4])]))
        };
        assert!(finite_diff_check(nan, &theta, 1e-5, 1e-4).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::zeros(&[2]);
        let mut state = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let grads = [3.0, -0.02, 1e-3];
        let lr = 0.01;
        let eps = 1e-8;
        let mut p = Tensor::vector(vec![0.0; 3]);
        let g = Tensor::vector(grads.to_vec());
        let mut state = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &AdamConfig::with_learning_rate(lr)).unwrap();
        for (x, gi) in p.data().iter().zip(grads) {
            // m̂ = g, v̂ = g², so the step is -lr·g/(|g| + eps)
            let expected = -lr * gi / (gi.abs() + eps);
            assert!((x - expected).abs() < 1e-15);
            assert!((x + lr * gi.signum()).abs() < 1e-4 * lr);
        }
    }

    #[test]
    fn adam_is_deterministic_and_rejects_bad_input() {
        let run = || {
            let mut rng = seeded(11);
            let mut p = Tensor::<f64>::uniform(&[3, 3], 1.0, &mut rng);
            let mut state = AdamState::new([&p]);
            for _ in 0..10 {
                let g = p.map(|x| x.sin());
                adam_step(&mut [&mut p], &[&g], &mut state, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run().data(), run().data());

        let mut p = Tensor::vector(vec![1.0]);
        let mut state = AdamState::new([&p]);
        let bad = Tensor::vector(vec![f64::NAN]);
        assert!(adam_step(&mut [&mut p], &[&bad], &mut state, &AdamConfig::default()).is_err());
        let wrong = Tensor::vector(vec![1.0, 2.0]);
        assert!(adam_step(&mut [&mut p], &[&wrong], &mut state, &AdamConfig::default()).is_err());
    }

    #[test]
    fn generic_over_single_precision() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::vector(vec![-1.0f32, 2.0]));
        let r = tape.relu(x).unwrap();
        let loss = tape.sum(r, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0f32, 1.0]);
    }

    #[test]
    fn segment_sum_gradient_scatters() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::<f64>::zeros(&[4, 2]));
        let s = tape.segment_sum(x, Arc::from(vec![1, 0, 1, 1]), 2).unwrap();
        let w = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let ws = tape.sub(s, w).unwrap();
        let loss = tape.sum(ws, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 1.0));
    }
}
