//! Finite-difference gradient checking.
//!
//! The numeric side only evaluates forward values on constant tensors, so it
//! never touches the backward rules it is checking.

use rand::Rng;

use crate::backward::grad;
use crate::error::Result;
use crate::graph::Graph;
use crate::nn;
use crate::tensor::Tensor;

/// A scalar function of several tensors.
pub type ScalarFn<'a> = dyn Fn(&[Tensor]) -> Result<Tensor> + 'a;

#[derive(Clone, Debug)]
pub struct Input {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Input {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Self {
        Input { data, shape: shape.to_vec() }
    }
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn eval_constant(f: &ScalarFn, inputs: &[Input]) -> Result<f64> {
    let ts: Vec<Tensor> = inputs.iter().map(|i| Tensor::constant(i.data.clone(), &i.shape)).collect::<Result<_>>()?;
    Ok(f(&ts)?.item())
}

/// Central-difference gradient of `f` with respect to every input.
pub fn numeric_grad(f: &ScalarFn, inputs: &[Input], step: f64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut gi = vec![0.0; inputs[i].data.len()];
        for (j, g) in gi.iter_mut().enumerate() {
            let orig = work[i].data[j];
            work[i].data[j] = orig + step;
            let plus = eval_constant(f, &work)?;
            work[i].data[j] = orig - step;
            let minus = eval_constant(f, &work)?;
            work[i].data[j] = orig;
            *g = (plus - minus) / (2.0 * step);
        }
        out.push(gi);
    }
    Ok(out)
}

pub fn analytic_grad(f: &ScalarFn, inputs: &[Input]) -> Result<Vec<Vec<f64>>> {
    let g = Graph::checked();
    let ts: Vec<Tensor> =
        inputs.iter().map(|i| Tensor::leaf(&g, i.data.clone(), &i.shape, true)).collect::<Result<_>>()?;
    let y = f(&ts)?;
    let refs: Vec<&Tensor> = ts.iter().collect();
    Ok(crate::backward::grad_allow_unused(&y, &refs, false)?.iter().map(|t| t.to_vec()).collect())
}

/// Largest relative error over inputs between analytic and numeric gradients.
pub fn gradcheck(f: &ScalarFn, inputs: &[Input], step: f64) -> Result<f64> {
    let a = analytic_grad(f, inputs)?;
    let n = numeric_grad(f, inputs, step)?;
    Ok(a.iter().zip(&n).map(|(a, n)| relative_error(a, n)).fold(0.0, f64::max))
}

/// Checks a Hessian-vector product obtained by double backward against a
/// central difference of the analytic first-order gradient along `dir`.
pub fn hessian_vector_check(f: &ScalarFn, x: &Input, dir: &[f64], step: f64) -> Result<f64> {
    let g = Graph::checked();
    let xt = Tensor::leaf(&g, x.data.clone(), &x.shape, true)?;
    let y = f(std::slice::from_ref(&xt))?;
    let gx = grad(&y, &[&xt], true)?.remove(0);
    let v = Tensor::constant(dir.to_vec(), &x.shape)?;
    let s = gx.mul(&v)?.sum()?;
    let hv = crate::backward::grad_allow_unused(&s, &[&xt], false)?.remove(0).to_vec();

    let first = |data: Vec<f64>| -> Result<Vec<f64>> { Ok(analytic_grad(f, &[Input::new(data, &x.shape)])?.remove(0)) };
    let plus = first(x.data.iter().zip(dir).map(|(a, d)| a + step * d).collect())?;
    let minus = first(x.data.iter().zip(dir).map(|(a, d)| a - step * d).collect())?;
    let fd: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * step)).collect();
    Ok(relative_error(&hv, &fd))
}

/// Draws random inputs and the function to check on them.
pub type CaseBuilder = fn(&mut dyn rand::RngCore) -> (Vec<Input>, Box<ScalarFn<'static>>);

/// A randomized test case for one primitive or composite op.
pub struct OpCase {
    pub name: &'static str,
    pub make: CaseBuilder,
}

fn uniform(rng: &mut dyn rand::RngCore, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut dyn rand::RngCore, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn dim(rng: &mut dyn rand::RngCore, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// Wraps a tensor-valued op as a scalar function `sum(op(x) * r)` with a
/// fixed random projection `r`, so every output element is exercised.
fn project(
    rng: &mut dyn rand::RngCore,
    out_len: usize,
    out_shape: Vec<usize>,
    op: impl Fn(&[Tensor]) -> Result<Tensor> + 'static,
) -> Box<ScalarFn<'static>> {
    let r = uniform(rng, out_len, -1.0, 1.0);
    Box::new(move |xs: &[Tensor]| {
        let y = op(xs)?;
        y.mul(&Tensor::constant(r.clone(), &out_shape)?)?.sum()
    })
}

macro_rules! unary_case {
    ($name:expr, $gen:expr, $op:expr) => {
        OpCase {
            name: $name,
            make: |rng| {
                let shape = vec![dim(rng, 1, 4), dim(rng, 1, 8)];
                let n = shape.iter().product();
                let gen: fn(&mut dyn rand::RngCore, usize) -> Vec<f64> = $gen;
                let x = gen(rng, n);
                let f = project(rng, n, shape.clone(), |xs: &[Tensor]| $op(&xs[0]));
                (vec![Input::new(x, &shape)], f)
            },
        }
    };
}

fn normal_vals(rng: &mut dyn rand::RngCore, n: usize) -> Vec<f64> {
    uniform(rng, n, -2.0, 2.0)
}

fn positive_vals(rng: &mut dyn rand::RngCore, n: usize) -> Vec<f64> {
    uniform(rng, n, 0.3, 2.5)
}

/// Every primitive plus the composites built on them.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "add",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 8)];
                let n = s.iter().product();
                let f = project(rng, n, s.clone(), |x| x[0].add(&x[1]));
                (vec![Input::new(normal_vals(rng, n), &s), Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "sub",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 8)];
                let n = s.iter().product();
                let f = project(rng, n, s.clone(), |x| x[0].sub(&x[1]));
                (vec![Input::new(normal_vals(rng, n), &s), Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "mul",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 8)];
                let n = s.iter().product();
                let f = project(rng, n, s.clone(), |x| x[0].mul(&x[1]));
                (vec![Input::new(normal_vals(rng, n), &s), Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "div",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 8)];
                let n = s.iter().product();
                let f = project(rng, n, s.clone(), |x| x[0].div(&x[1]));
                (vec![Input::new(normal_vals(rng, n), &s), Input::new(positive_vals(rng, n), &s)], f)
            },
        },
        unary_case!("scale", normal_vals, |x: &Tensor| x.scale(-1.7)),
        OpCase {
            name: "scalar_tensor_mul",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 8)];
                let n = s.iter().product();
                let f = project(rng, n, s.clone(), |x| x[0].mul_scalar_tensor(&x[1]));
                (vec![Input::new(normal_vals(rng, n), &s), Input::new(normal_vals(rng, 1), &[])], f)
            },
        },
        OpCase {
            name: "matmul",
            make: |rng| {
                let (m, k, n) = (dim(rng, 1, 5), dim(rng, 1, 6), dim(rng, 1, 5));
                let f = project(rng, m * n, vec![m, n], |x| x[0].matmul(&x[1]));
                (vec![Input::new(normal_vals(rng, m * k), &[m, k]), Input::new(normal_vals(rng, k * n), &[k, n])], f)
            },
        },
        OpCase {
            name: "batched_matmul",
            make: |rng| {
                let (b, m, k, n) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
                let f = project(rng, b * m * n, vec![b, m, n], |x| x[0].matmul(&x[1]));
                (
                    vec![
                        Input::new(normal_vals(rng, b * m * k), &[b, m, k]),
                        Input::new(normal_vals(rng, b * k * n), &[b, k, n]),
                    ],
                    f,
                )
            },
        },
        OpCase { name: "conv2d_stride1", make: |rng| conv_case(rng, 1) },
        OpCase { name: "conv2d_stride2", make: |rng| conv_case(rng, 2) },
        OpCase {
            name: "upsample2",
            make: |rng| {
                let s = vec![dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
                let n: usize = s.iter().product();
                let f = project(rng, 4 * n, vec![s[0], 2 * s[1], 2 * s[2]], |x| x[0].upsample2());
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "sumpool2",
            make: |rng| {
                let s = vec![dim(rng, 1, 3), 2 * dim(rng, 1, 2), 2 * dim(rng, 1, 3)];
                let n: usize = s.iter().product();
                let f = project(rng, n / 4, vec![s[0], s[1] / 2, s[2] / 2], |x| x[0].sumpool2());
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        unary_case!("relu", away_from_zero, |x: &Tensor| x.relu()),
        unary_case!("gelu", normal_vals, |x: &Tensor| x.gelu()),
        unary_case!("sigmoid", normal_vals, |x: &Tensor| x.sigmoid()),
        unary_case!("exp", normal_vals, |x: &Tensor| x.exp()),
        unary_case!("log", positive_vals, |x: &Tensor| x.ln()),
        unary_case!("powf", positive_vals, |x: &Tensor| x.powf(-0.5)),
        unary_case!("softplus", normal_vals, |x: &Tensor| x.softplus()),
        unary_case!("clamp", away_from_zero, |x: &Tensor| x.clamp(-1.0, 1.0)),
        unary_case!("softmax", normal_vals, |x: &Tensor| x.softmax()),
        unary_case!("log_softmax", normal_vals, |x: &Tensor| x.log_softmax()),
        OpCase {
            name: "layer_norm",
            make: |rng| {
                let (n, d) = (dim(rng, 1, 4), dim(rng, 2, 8));
                let f = project(rng, n * d, vec![n, d], |x| nn::layer_norm(&x[0], &x[1], &x[2], 1e-5));
                (
                    vec![
                        Input::new(normal_vals(rng, n * d), &[n, d]),
                        Input::new(normal_vals(rng, d), &[d]),
                        Input::new(normal_vals(rng, d), &[d]),
                    ],
                    f,
                )
            },
        },
        OpCase {
            name: "mean",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 8)];
                let n = s.iter().product();
                let f = project(rng, 1, vec![], |x| x[0].mean());
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "sum",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 8)];
                let n = s.iter().product();
                let f = project(rng, 1, vec![], |x| x[0].sum());
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "sum_axis",
            make: |rng| {
                let s = vec![dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4)];
                let n = s.iter().product();
                let f = project(rng, s[0] * s[2], vec![s[0], s[2]], |x| x[0].sum_axis(1));
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "broadcast_axis",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 4)];
                let n: usize = s.iter().product();
                let f = project(rng, 3 * n, vec![s[0], 3, s[1]], |x| x[0].broadcast_axis(1, 3));
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "concat",
            make: |rng| {
                let (a, b, c) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4));
                let f = project(rng, (a + b) * c, vec![a + b, c], |x| Tensor::concat(&[&x[0], &x[1]], 0));
                (vec![Input::new(normal_vals(rng, a * c), &[a, c]), Input::new(normal_vals(rng, b * c), &[b, c])], f)
            },
        },
        OpCase {
            name: "concat_last_axis",
            make: |rng| {
                let (r, a, b) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4));
                let f = project(rng, r * (a + b), vec![r, a + b], |x| Tensor::concat(&[&x[0], &x[1]], 1));
                (vec![Input::new(normal_vals(rng, r * a), &[r, a]), Input::new(normal_vals(rng, r * b), &[r, b])], f)
            },
        },
        OpCase {
            name: "slice",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 3, 8)];
                let n = s.iter().product();
                let f = project(rng, s[0] * 2, vec![s[0], 2], |x| x[0].slice(1, 1, 2));
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "pad",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 4)];
                let n: usize = s.iter().product();
                let total = s[1] + 3;
                let f = project(rng, s[0] * total, vec![s[0], total], |x| {
                    let w = x[0].shape()[1];
                    x[0].pad(1, 2, w + 3)
                });
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "reshape",
            make: |rng| {
                let (a, b) = (dim(rng, 1, 4), dim(rng, 1, 4));
                let f = project(rng, a * b * 2, vec![b, a * 2], |x| {
                    let s = x[0].shape();
                    x[0].reshape(&[s[1], s[0] * s[2]])
                });
                (vec![Input::new(normal_vals(rng, a * b * 2), &[a, b, 2])], f)
            },
        },
        OpCase {
            name: "transpose",
            make: |rng| {
                let (a, b) = (dim(rng, 1, 5), dim(rng, 1, 5));
                let f = project(rng, a * b, vec![b, a], |x| x[0].transpose_last());
                (vec![Input::new(normal_vals(rng, a * b), &[a, b])], f)
            },
        },
        OpCase {
            name: "permute3",
            make: |rng| {
                let s = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4)];
                let n = s.iter().product();
                let f = project(rng, n, vec![s[2], s[0], s[1]], |x| x[0].permute(&[2, 0, 1]));
                (vec![Input::new(normal_vals(rng, n), &s)], f)
            },
        },
        OpCase {
            name: "embedding_lookup",
            make: |rng| {
                let (v, d) = (dim(rng, 2, 6), dim(rng, 1, 6));
                let idx: Vec<usize> = (0..dim(rng, 1, 5)).map(|_| rng.gen_range(0..v)).collect();
                let m = idx.len();
                let f = project(rng, m * d, vec![m, d], move |x| x[0].gather_rows(&idx));
                (vec![Input::new(normal_vals(rng, v * d), &[v, d])], f)
            },
        },
        OpCase {
            name: "scatter_rows",
            make: |rng| {
                let (v, d) = (dim(rng, 2, 6), dim(rng, 1, 6));
                let idx: Vec<usize> = (0..dim(rng, 1, 5)).map(|_| rng.gen_range(0..v)).collect();
                let m = idx.len();
                let f = project(rng, v * d, vec![v, d], move |x| x[0].scatter_rows(&idx, v));
                (vec![Input::new(normal_vals(rng, m * d), &[m, d])], f)
            },
        },
        OpCase {
            name: "attention",
            make: |rng| {
                let heads = dim(rng, 1, 2);
                let d = heads * dim(rng, 1, 3);
                let (n, m) = (dim(rng, 1, 4), dim(rng, 1, 4));
                let causal = n == m && rng.gen_bool(0.5);
                let f = project(rng, n * d, vec![n, d], move |x| {
                    let mask = if causal { Some(nn::causal_mask(x[0].shape()[0])) } else { None };
                    nn::attention(&x[0], &x[1], &x[2], heads, mask.as_ref())
                });
                (
                    vec![
                        Input::new(normal_vals(rng, n * d), &[n, d]),
                        Input::new(normal_vals(rng, m * d), &[m, d]),
                        Input::new(normal_vals(rng, m * d), &[m, d]),
                    ],
                    f,
                )
            },
        },
    ]
}

fn conv_case(rng: &mut dyn rand::RngCore, stride: usize) -> (Vec<Input>, Box<ScalarFn<'static>>) {
    let (cin, cout) = (dim(rng, 1, 2), dim(rng, 1, 2));
    let (h, w) = (dim(rng, 2, 4), dim(rng, 2, 4));
    let ho = (h - 1) / stride + 1;
    let wo = (w - 1) / stride + 1;
    let f = project(rng, cout * ho * wo, vec![cout, ho, wo], move |x| nn::conv2d(&x[0], &x[1], Some(&x[2]), stride));
    (
        vec![
            Input::new(normal_vals(rng, cin * h * w), &[cin, h, w]),
            Input::new(normal_vals(rng, cout * cin * 9), &[cout, cin, 3, 3]),
            Input::new(normal_vals(rng, cout), &[cout]),
        ],
        f,
    )
}

/// A random smooth scalar composite of the given depth over `x [n]`, built
/// from a fixed random sequence of layers; used for second-order checks.
pub fn random_composite(rng: &mut dyn rand::RngCore, n: usize, depth: usize) -> Box<ScalarFn<'static>> {
    #[derive(Clone)]
    enum Layer {
        Affine(Vec<f64>, Vec<f64>),
        Gelu,
        Sigmoid,
        Softmax,
        Softplus,
        Square,
        Exp,
    }
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let layer = match rng.gen_range(0..7) {
            0 => Layer::Affine(uniform(rng, n * n, -0.8, 0.8), uniform(rng, n, -0.5, 0.5)),
            1 => Layer::Gelu,
            2 => Layer::Sigmoid,
            3 => Layer::Softmax,
            4 => Layer::Softplus,
            5 => Layer::Square,
            _ => Layer::Exp,
        };
        layers.push(layer);
    }
    let r = uniform(rng, n, -1.0, 1.0);
    Box::new(move |xs: &[Tensor]| {
        let mut h = xs[0].reshape(&[1, n])?;
        for layer in &layers {
            h = match layer {
                Layer::Affine(w, b) => {
                    nn::linear(&h, &Tensor::constant(w.clone(), &[n, n])?, Some(&Tensor::constant(b.clone(), &[n])?))?
                }
                Layer::Gelu => h.gelu()?,
                Layer::Sigmoid => h.sigmoid()?,
                Layer::Softmax => h.softmax()?,
                Layer::Softplus => h.softplus()?,
                Layer::Square => h.mul(&h)?.scale(0.5)?,
                Layer::Exp => h.clamp(-5.0, 5.0)?.scale(0.5)?.exp()?,
            };
        }
        h.mul(&Tensor::constant(r.clone(), &[1, n])?)?.sum()
    })
}

pub fn random_input(rng: &mut dyn rand::RngCore, n: usize) -> Input {
    Input::new(uniform(rng, n, -1.5, 1.5), &[n])
}
