//! Central finite differences against the tape for every primitive.

use std::sync::Arc;

use ivfx_core::autodiff::{Graph, RotaryAngles, Var};
use ivfx_core::params::ParamStore;
use ivfx_core::rng;
use ivfx_core::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Denominator floor so that gradients indistinguishable from zero at the
/// finite-difference resolution are compared absolutely.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(FLOOR)
}

/// Builds a scalar from the given inputs.
type Build = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var;

fn check(name: &str, inputs: Vec<Tensor<f64>>, build: &Build) {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::inference(&store);
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).data()[0]
    };

    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let e = rel_err(analytic.data()[j], fd);
            worst = worst.max(e);
            assert!(e < TOL, "{name}: input {i} elem {j}: autodiff {} vs fd {fd} (rel {e:e})", analytic.data()[j]);
        }
    }
    println!("{name}: max rel err {worst:.2e}");
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng::seeded(seed))
}

/// Reduces any output to a scalar with fixed random weights so every
/// output element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Var {
    let w = g.input(rand(g.shape(y), seed));
    let p = g.mul(y, w).unwrap();
    g.mean(p)
}

#[test]
fn matmul_matches_finite_differences() {
    check("matmul", vec![rand(&[3, 4], 1), rand(&[4, 2], 2)], &|g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        let s = g.mean(y);
        // gradient of the plain sum
        g.scale(s, 6.0)
    });
    check("matmul_batched", vec![rand(&[2, 3, 4], 3), rand(&[2, 4, 2], 4)], &|g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, y, 5)
    });
    check("matmul_shared_rhs", vec![rand(&[2, 3, 4], 6), rand(&[4, 5], 7)], &|g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, y, 8)
    });
}

#[test]
fn elementwise_primitives() {
    check("add", vec![rand(&[3, 4], 1), rand(&[3, 4], 2)], &|g, v| {
        let y = g.add(v[0], v[1]).unwrap();
        weighted_sum(g, y, 3)
    });
    check("sub", vec![rand(&[3, 4], 1), rand(&[3, 4], 2)], &|g, v| {
        let y = g.sub(v[0], v[1]).unwrap();
        weighted_sum(g, y, 3)
    });
    check("mul", vec![rand(&[3, 4], 4), rand(&[3, 4], 5)], &|g, v| {
        let y = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, y, 6)
    });
    check("add_row", vec![rand(&[3, 4], 7), rand(&[4], 8)], &|g, v| {
        let y = g.add_row(v[0], v[1]).unwrap();
        weighted_sum(g, y, 9)
    });
    check("mul_row", vec![rand(&[3, 4], 10), rand(&[1, 4], 11)], &|g, v| {
        let y = g.mul_row(v[0], v[1]).unwrap();
        weighted_sum(g, y, 12)
    });
    check("scale_add_scalar", vec![rand(&[5], 13)], &|g, v| {
        let y = g.scale(v[0], -1.7);
        let y = g.add_scalar(y, 0.3);
        weighted_sum(g, y, 14)
    });
    check("silu", vec![rand(&[4, 3], 15)], &|g, v| {
        let y = g.silu(v[0]);
        weighted_sum(g, y, 16)
    });
}

#[test]
fn normalization_and_softmax() {
    check("rmsnorm", vec![rand(&[3, 6], 1), rand(&[6], 2)], &|g, v| {
        let y = g.rmsnorm(v[0], v[1], 6).unwrap();
        weighted_sum(g, y, 3)
    });
    check("rmsnorm_grouped", vec![rand(&[3, 6], 4), rand(&[2], 5)], &|g, v| {
        let y = g.rmsnorm(v[0], v[1], 2).unwrap();
        weighted_sum(g, y, 6)
    });
    check("softmax", vec![rand(&[3, 5], 7)], &|g, v| {
        let y = g.softmax(v[0], None).unwrap();
        weighted_sum(g, y, 8)
    });
    let ninf = f32::NEG_INFINITY;
    let mask: Vec<f32> = (0..15).map(|i| if i % 4 == 1 { ninf } else { 0.0 }).collect();
    check("softmax_masked", vec![rand(&[3, 5], 9)], &move |g, v| {
        let y = g.softmax(v[0], Some(&mask)).unwrap();
        weighted_sum(g, y, 10)
    });
}

#[test]
fn attention_and_rotary() {
    let ninf = f32::NEG_INFINITY;
    // 5 queries over 5 keys, block structure like the sparse-condition mask
    let mask: Vec<f32> = (0..25)
        .map(|i| {
            let (r, c) = (i / 5, i % 5);
            if r < 2 || (r >= 2 && c >= 2) {
                0.0
            } else {
                ninf
            }
        })
        .collect();
    check("attention", vec![rand(&[5, 8], 1), rand(&[5, 8], 2), rand(&[5, 8], 3)], &move |g, v| {
        let y = g.attention(v[0], v[1], v[2], 2, Some(&mask)).unwrap();
        weighted_sum(g, y, 4)
    });
    check("cross_attention", vec![rand(&[4, 6], 5), rand(&[3, 6], 6), rand(&[3, 6], 7)], &|g, v| {
        let y = g.attention(v[0], v[1], v[2], 3, None).unwrap();
        weighted_sum(g, y, 8)
    });
    let angles = Arc::new(RotaryAngles {
        half: 2,
        cos: (0..6).map(|i| (i as f64 * 0.7).cos()).collect(),
        sin: (0..6).map(|i| (i as f64 * 0.7).sin()).collect(),
    });
    check("rotary", vec![rand(&[3, 8], 9)], &move |g, v| {
        let y = g.rotary(v[0], angles.clone(), 2).unwrap();
        weighted_sum(g, y, 10)
    });
}

#[test]
fn structural_primitives() {
    check("reshape", vec![rand(&[2, 6], 1)], &|g, v| {
        let y = g.reshape(v[0], &[3, 4]).unwrap();
        weighted_sum(g, y, 2)
    });
    check("concat_slice", vec![rand(&[2, 3], 3), rand(&[3, 3], 4)], &|g, v| {
        let c = g.concat_rows(&[v[0], v[1]]).unwrap();
        let s = g.slice_rows(c, 1, 3).unwrap();
        let t = g.slice_cols(s, 1, 2).unwrap();
        weighted_sum(g, t, 5)
    });
    check("mean_rows", vec![rand(&[4, 3], 6)], &|g, v| {
        let y = g.mean_rows(v[0]);
        weighted_sum(g, y, 7)
    });
    check("mse", vec![rand(&[3, 3], 8), rand(&[3, 3], 9)], &|g, v| g.mse(v[0], v[1]).unwrap());
    check("gather", vec![rand(&[5, 3], 10)], &|g, v| {
        let y = g.gather_rows(v[0], &[4, 0, 4, 2]).unwrap();
        weighted_sum(g, y, 11)
    });
    check("linear", vec![rand(&[3, 4], 12), rand(&[4, 2], 13), rand(&[2], 14)], &|g, v| {
        let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
        weighted_sum(g, y, 15)
    });
}
