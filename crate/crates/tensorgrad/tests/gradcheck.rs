//! Analytic gradients of every op against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::check::{numeric_gradient, relative_error};
use tensorgrad::{Graph, Result, Tensor, Var};

const TRIALS: u64 = 20;
const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

type Builder = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Checks `d/dinputs sum(k * op(inputs))` for a random projection `k`.
fn check_op(name: &str, shapes: &[Vec<usize>], build: &Builder) {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 * trial + name.len() as u64);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|s| Tensor::randn(s, 1.0, &mut rng))
            .collect();
        let out_len = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            let out = build(&mut g, &vars).unwrap();
            g.value(out).len()
        };
        let k: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        let loss = g.dot_const(out, &k).unwrap();
        g.backward(loss).unwrap();

        for (i, input) in inputs.iter().enumerate() {
            let analytic = g
                .grad(vars[i])
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; input.len()]);
            let f = |x: &[f64]| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == i {
                            g.constant(Tensor::new(t.shape(), x.to_vec()).unwrap())
                        } else {
                            g.constant(t.clone())
                        }
                    })
                    .collect();
                let out = build(&mut g, &vars).unwrap();
                g.value(out).data().iter().zip(&k).map(|(a, b)| a * b).sum()
            };
            let numeric = numeric_gradient(f, input.data(), H);
            let err = relative_error(&analytic, &numeric);
            assert!(
                err < TOL,
                "{name}: input {i}, trial {trial}: relative error {err:e}"
            );
        }
    }
}

#[test]
fn conv2d_gradients() {
    check_op(
        "conv2d",
        &[vec![2, 2, 5, 5], vec![3, 2, 3, 3], vec![3]],
        &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
    );
    check_op(
        "conv2d_strided",
        &[vec![1, 2, 6, 6], vec![2, 2, 4, 4], vec![2]],
        &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1),
    );
}

#[test]
fn conv_transpose2d_gradients() {
    check_op(
        "conv_t",
        &[vec![2, 2, 3, 3], vec![2, 3, 4, 4], vec![3]],
        &|g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1),
    );
}

#[test]
fn pointwise_gradients() {
    check_op("relu", &[vec![3, 7]], &|g, v| Ok(g.relu(v[0])));
    check_op("leaky_relu", &[vec![3, 7]], &|g, v| {
        Ok(g.leaky_relu(v[0], 0.2))
    });
    check_op("tanh", &[vec![3, 7]], &|g, v| Ok(g.tanh(v[0])));
    check_op("scale", &[vec![4]], &|g, v| Ok(g.scale(v[0], -1.7)));
    check_op("add", &[vec![2, 3], vec![2, 3]], &|g, v| g.add(v[0], v[1]));
    check_op("sub", &[vec![2, 3], vec![2, 3]], &|g, v| g.sub(v[0], v[1]));
    check_op("mul", &[vec![2, 3], vec![2, 3]], &|g, v| g.mul(v[0], v[1]));
}

#[test]
fn dense_and_pooling_gradients() {
    check_op("linear", &[vec![3, 5], vec![4, 5], vec![4]], &|g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    });
    check_op("avg_pool", &[vec![2, 3, 4, 4]], &|g, v| {
        g.global_avg_pool(v[0])
    });
    check_op("upsample", &[vec![1, 2, 3, 3]], &|g, v| {
        g.upsample_nearest(v[0], 2)
    });
    check_op("reshape", &[vec![2, 6]], &|g, v| g.reshape(v[0], &[3, 4]));
    check_op("concat", &[vec![2, 1, 3, 3], vec![2, 2, 3, 3]], &|g, v| {
        g.concat_channels(&[v[0], v[1]])
    });
}

#[test]
fn normalization_gradients() {
    check_op("instance_norm", &[vec![2, 3, 4, 4]], &|g, v| {
        g.instance_norm(v[0], 1e-5)
    });
    check_op(
        "adain",
        &[vec![2, 3, 4, 4], vec![2, 3], vec![2, 3]],
        &|g, v| g.adain(v[0], v[1], v[2], 1e-5),
    );
}

#[test]
fn loss_gradients() {
    check_op("l1", &[vec![3, 4], vec![3, 4]], &|g, v| {
        g.l1_loss(v[0], v[1])
    });
    check_op("mse", &[vec![3, 4], vec![3, 4]], &|g, v| {
        g.mse_loss(v[0], v[1])
    });
    check_op("mse_to", &[vec![3, 4]], &|g, v| g.mse_to(v[0], 1.0));
    check_op("sum", &[vec![3, 4]], &|g, v| Ok(g.sum(v[0])));
    check_op("mean", &[vec![3, 4]], &|g, v| Ok(g.mean(v[0])));
}

#[test]
fn spectral_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = Tensor::randn(&[3], 1.0, &mut rng).into_data();
    let v = Tensor::randn(&[8], 1.0, &mut rng).into_data();
    check_op("spectral_norm", &[vec![3, 2, 2, 2]], &move |g, vars| {
        g.spectral_norm(vars[0], &u, &v)
    });
}

#[test]
fn residual_block_gradient() {
    // conv -> instance norm -> relu -> conv -> instance norm, plus skip.
    // Biases are omitted: instance norm cancels them, leaving a zero gradient.
    check_op(
        "residual",
        &[vec![1, 2, 5, 5], vec![2, 2, 3, 3], vec![2, 2, 3, 3]],
        &|g, v| {
            let h = g.conv2d(v[0], v[1], None, 1, 1)?;
            let h = g.instance_norm(h, 1e-5)?;
            let h = g.relu(h);
            let h = g.conv2d(h, v[2], None, 1, 1)?;
            let h = g.instance_norm(h, 1e-5)?;
            g.add(v[0], h)
        },
    );
}

#[test]
fn composed_conv_relu_sum_matches_finite_differences() {
    check_op(
        "conv_relu_sum",
        &[vec![1, 1, 6, 6], vec![2, 1, 3, 3]],
        &|g, v| {
            let h = g.conv2d(v[0], v[1], None, 1, 0)?;
            let h = g.relu(h);
            Ok(g.sum(h))
        },
    );
}
