//! Every graph op checked against central finite differences.

use aura_tensor::gradcheck::{numeric_grad, relative_error, STEP};
use aura_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Reduces the op output with a fixed random projection so every output
/// element contributes to the scalar.
fn check(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        rand_tensor(&mut rng, g.shape(out))
    };
    let eval = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars);
    let p = g.constant(probe.clone());
    let prod = g.mul(out, p);
    let loss = g.sum(prod);
    let grads = g.backward(loss);
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numeric = numeric_grad(
            |x| {
                let mut ins = inputs.clone();
                ins[i] = x.clone();
                eval(&ins)
            },
            &inputs[i],
            STEP,
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err < TOL, "{name}: input {i} relative error {err:e}");
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[3, 4]);
    check("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    check("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    check("scale", vec![a.clone()], |g, v| g.scale(v[0], -2.5));
    check("gelu", vec![a.clone()], |g, v| g.gelu(v[0]));
    check("sigmoid", vec![a.clone()], |g, v| g.sigmoid(v[0]));
    check("tanh", vec![a.clone()], |g, v| g.tanh(v[0]));
    check("sum", vec![a.clone()], |g, v| g.sum(v[0]));
    check("mean", vec![a], |g, v| g.mean(v[0]));
}

#[test]
fn relu_away_from_kink() {
    let a = Tensor::new([4], vec![-0.7, -0.2, 0.3, 0.9]);
    check("relu", vec![a], |g, v| g.relu(v[0]));
}

#[test]
fn linear_algebra_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[4, 3]);
    let b = rand_tensor(&mut rng, &[3, 5]);
    let bt = rand_tensor(&mut rng, &[5, 3]);
    let bias = rand_tensor(&mut rng, &[3]);
    check("matmul", vec![a.clone(), b], |g, v| g.matmul(v[0], v[1]));
    check("matmul_bt", vec![a.clone(), bt], |g, v| g.matmul_bt(v[0], v[1]));
    check("transpose", vec![a.clone()], |g, v| g.transpose(v[0]));
    check("row_bias", vec![a.clone(), bias], |g, v| g.add_row_bias(v[0], v[1]));
}

#[test]
fn normalisation_and_attention_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[4, 6]);
    let gamma = rand_tensor(&mut rng, &[6]);
    let beta = rand_tensor(&mut rng, &[6]);
    check("layer_norm", vec![x, gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    let s = rand_tensor(&mut rng, &[5, 5]);
    check("causal_softmax", vec![s], |g, v| g.causal_softmax(v[0]));
}

#[test]
fn indexing_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let table = rand_tensor(&mut rng, &[6, 3]);
    let a = rand_tensor(&mut rng, &[2, 3]);
    let b = rand_tensor(&mut rng, &[3, 3]);
    let c = rand_tensor(&mut rng, &[3, 2]);
    check("embedding", vec![table.clone()], |g, v| g.embedding(v[0], &[1, 4, 1, 0]));
    check("concat", vec![a.clone(), b.clone()], |g, v| g.concat(&[v[0], v[1]]));
    check("concat_cols", vec![b.clone(), c], |g, v| g.concat_cols(&[v[0], v[1]]));
    check("slice_rows", vec![table.clone()], |g, v| g.slice_rows(v[0], 2, 5));
    check("slice_cols", vec![table.clone()], |g, v| g.slice_cols(v[0], 1, 3));
    check("gather_rows", vec![table.clone()], |g, v| g.gather_rows(v[0], &[5, 0, 5]));
    check("reshape", vec![table], |g, v| g.reshape(v[0], &[3, 6]));
}

#[test]
fn spatial_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[2, 6, 6]);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    let s = rand_tensor(&mut rng, &[2]);
    check("conv_s1", vec![x.clone(), w.clone(), b.clone()], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), 1, 1)
    });
    check("conv_s2", vec![x.clone(), w], |g, v| g.conv2d(v[0], v[1], None, 2, 1));
    check("upsample", vec![x.clone()], |g, v| g.upsample2x(v[0]));
    check("avg_pool", vec![x.clone()], |g, v| g.avg_pool2(v[0]));
    check("scale_channels", vec![x, s], |g, v| g.scale_channels(v[0], v[1]));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new([2], vec![1.0, 2.0]));
    let b = g.input(Tensor::new([2], vec![3.0, 4.0]));
    let p = g.mul(a, b);
    let s = g.sum(p);
    let grads = g.backward(s);
    assert!(grads.wrt(a).is_none());
    assert_eq!(grads.wrt(b).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn shared_inputs_accumulate() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new([1], vec![3.0]));
    let y = g.mul(x, x);
    let z = g.add(y, x);
    let grads = g.backward(z);
    assert_eq!(grads.wrt(x).unwrap().item(), 7.0);
}
