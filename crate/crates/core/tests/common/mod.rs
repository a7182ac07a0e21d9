//! Finite-difference checks of every differentiable op, shared by the
//! gradient tests and the acceptance harness.

use hmjnd::tensor::gradcheck::{check_inputs, GradCheckReport};
use hmjnd::tensor::{Graph, Tensor, Var};
use hmjnd::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-4;
pub const OP_TOL: f64 = 1e-4;

/// Uniform values in ±[0.05, 1] so kinks at zero are never crossed.
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct amount.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let w = g.input(rand_tensor(g.shape(out), seed));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

#[derive(Default)]
pub struct Suite {
    pub reports: Vec<(&'static str, GradCheckReport)>,
}

impl Suite {
    fn push(&mut self, name: &'static str, r: GradCheckReport) {
        self.reports.push((name, r));
    }

    fn check(&mut self, name: &'static str, inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
        let r = check_inputs(inputs, H, OP_TOL, |g, v| {
            let out = f(g, v)?;
            project(g, out, 99)
        })
        .unwrap();
        self.push(name, r);
    }
}

pub fn op_suite() -> Suite {
    let mut s = Suite::default();
    // conv2d same padding
    {
        let x = rand_tensor(&[2, 3, 5, 6], 1);
        let w = rand_tensor(&[4, 3, 3, 3], 2);
        let b = rand_tensor(&[4], 3);
        s.check("conv3x3", &[x, w, b], |g, v| g.conv2d(v[0], v[1], v[2], 1, 1));
    }

    // conv2d pointwise and strided
    {
        let x = rand_tensor(&[2, 3, 4, 4], 4);
        let w = rand_tensor(&[5, 3, 1, 1], 5);
        let b = rand_tensor(&[5], 6);
        s.check("conv1x1", &[x.clone(), w, b], |g, v| g.conv2d(v[0], v[1], v[2], 1, 0));
        let w = rand_tensor(&[2, 3, 3, 3], 7);
        let b = rand_tensor(&[2], 8);
        s.check("conv stride 2", &[x, w, b], |g, v| g.conv2d(v[0], v[1], v[2], 2, 1));
    }

    // fully connected and pool
    {
        let x = rand_tensor(&[3, 4], 9);
        let w = rand_tensor(&[2, 4], 10);
        let b = rand_tensor(&[2], 11);
        s.check("dense", &[x, w, b], |g, v| g.fully_connected(v[0], v[1], v[2]));
        s.check("pool", &[rand_tensor(&[2, 3, 3, 2], 12)], |g, v| {
            g.global_avg_pool(v[0])
        });
    }

    // activations
    {
        let x = rand_tensor(&[2, 7], 13);
        s.check("relu", std::slice::from_ref(&x), |g, v| Ok(g.relu(v[0])));
        s.check("sigmoid", std::slice::from_ref(&x), |g, v| Ok(g.sigmoid(v[0])));
        s.check("softmax", std::slice::from_ref(&x), |g, v| Ok(g.softmax(v[0])));
        s.check("abs", std::slice::from_ref(&x), |g, v| Ok(g.abs(v[0])));
        s.check("square", std::slice::from_ref(&x), |g, v| Ok(g.square(v[0])));
        s.check("scale", std::slice::from_ref(&x), |g, v| Ok(g.scale(v[0], -2.5)));
        s.check("clamp", &[x], |g, v| Ok(g.clamp(v[0], -0.5, 0.5)));
    }

    // elementwise with broadcast
    {
        let a = rand_tensor(&[2, 3, 2, 2], 14);
        let b = rand_tensor(&[2, 3, 2, 2], 15);
        let c = rand_tensor(&[2, 3], 16);
        s.check("add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
        s.check("sub", &[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
        s.check("mul", &[a.clone(), b], |g, v| g.mul(v[0], v[1]));
        s.check("mul broadcast", &[a.clone(), c.clone()], |g, v| g.mul(v[0], v[1]));
        s.check("add broadcast", &[a.clone(), c], |g, v| g.add(v[0], v[1]));
        s.check("same operand", &[a], |g, v| g.mul(v[0], v[0]));
    }

    // reductions
    {
        let x = rand_tensor(&[3, 4], 17);
        let r = check_inputs(std::slice::from_ref(&x), H, OP_TOL, |g, v| Ok(g.sum(v[0]))).unwrap();
        s.push("sum", r);
        let r = check_inputs(&[x], H, OP_TOL, |g, v| {
            let s = g.square(v[0]);
            Ok(g.mean(s))
        })
        .unwrap();
        s.push("mean", r);
    }

    // layer norm over channels
    {
        let x = rand_tensor(&[2, 4, 2, 3], 18);
        let gamma = rand_tensor(&[4], 19);
        let beta = rand_tensor(&[4], 20);
        s.check("layer norm rank 4", &[x, gamma.clone(), beta.clone()], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5)
        });
        let x = rand_tensor(&[2, 3, 4], 21);
        s.check("layer norm rank 3", &[x, gamma, beta], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5)
        });
    }

    // reshape and concat
    {
        let a = rand_tensor(&[2, 3, 2, 2], 22);
        let b = rand_tensor(&[2, 1, 2, 2], 23);
        s.check("reshape", std::slice::from_ref(&a), |g, v| g.reshape(v[0], &[6, 4]));
        s.check("concat", &[a, b], |g, v| g.concat_channels(&[v[0], v[1]]));
    }

    // window partition and merge
    {
        let x = rand_tensor(&[2, 3, 6, 5], 24);
        for shift in [0, 2] {
            s.check("partition", std::slice::from_ref(&x), |g, v| {
                g.window_partition(v[0], 4, shift)
            });
            s.check("round trip", std::slice::from_ref(&x), |g, v| {
                let t = g.window_partition(v[0], 4, shift)?;
                g.window_merge(t, 4, shift, 6, 5)
            });
        }
    }

    // attention with and without mask
    {
        let q = rand_tensor(&[2, 4, 6], 25);
        let k = rand_tensor(&[2, 4, 6], 26);
        let v = rand_tensor(&[2, 4, 6], 27);
        s.check("attention", &[q.clone(), k.clone(), v.clone()], |g, x| {
            g.attention(x[0], x[1], x[2], 2, None)
        });
        let mut mask = vec![0.0; 16];
        mask[1] = f64::NEG_INFINITY;
        mask[6] = f64::NEG_INFINITY;
        s.check("masked attention", &[q.clone(), k, v], |g, x| {
            g.attention(x[0], x[1], x[2], 3, Some(&mask))
        });
        s.check("self attention", &[q], |g, x| g.attention(x[0], x[0], x[0], 1, None));
    }
    s
}
