//! Eager reverse-mode tape.
//!
//! Every op computes its value immediately and appends one node. Nodes only
//! reference earlier nodes, so the append order is already a topological
//! order and `backward` is a single reverse sweep.

use super::kernels::{self, ConvGeom};
use super::{dims4, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type ScalarRule<T> = Box<dyn Fn(&[T], T) -> Vec<T>>;

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Sigmoid {
        input: Var,
        clamped: Vec<bool>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    MaxPool3 {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        input: Var,
    },
    Softmax {
        input: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    ScalarFn {
        input: Var,
        rule: ScalarRule<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Recorded computation graph for one forward/backward step.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    record: bool,
    consumed: bool,
    saw_non_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            record: true,
            consumed: false,
            saw_non_finite: false,
        }
    }

    /// A tape that never keeps backward state. Used for inference.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            record: false,
            consumed: false,
            saw_non_finite: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
        self.saw_non_finite = false;
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        match self.nodes[v.0].data.as_slice() {
            [x] => Ok(*x),
            d => Err(Error::invalid(format!("expected a scalar, got {} values", d.len()))),
        }
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape is consistent")
    }

    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        if cfg!(debug_assertions) && !t.is_finite() {
            self.saw_non_finite = true;
        }
        let requires_grad = self.record && t.requires_grad();
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, requires_grad)
    }

    /// Records a constant from raw parts.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if cfg!(debug_assertions) {
            let finite = data.iter().all(|v| v.is_finite());
            debug_assert!(finite || self.saw_non_finite, "non-finite output from finite inputs");
            self.saw_non_finite |= !finite;
        }
        let (op, requires_grad) = if self.record && requires_grad {
            (op, true)
        } else {
            (Op::Leaf, false)
        };
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, w) = dims4(self.shape(input))?;
        let (cout, wcin, kh, kw) = dims4(self.shape(weight))?;
        if wcin != cin {
            return Err(Error::invalid(format!(
                "conv2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::invalid(format!("conv2d: kernel must be square and odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be at least 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::invalid(format!(
                "conv2d: padded input {}x{} smaller than kernel {kh}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::invalid(format!(
                    "conv2d: bias shape {:?} does not match {cout} output channels",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
        };
        let out = kernels::conv2d_forward(&geom, self.value(input), self.value(weight), bias.map(|b| self.value(b)));
        let (ho, wo) = geom.out_hw();
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            vec![n, cout, ho, wo],
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        // Written out rather than `max` so that NaN propagates.
        let data = self.value(input).iter().map(|&v| if v < T::zero() { T::zero() } else { v }).collect();
        let rg = self.any_grad(&[input]);
        self.push(self.shape(input).to_vec(), data, Op::Relu(input), rg)
    }

    /// Logistic function, clamped away from 0 and 1 by [`kernels::PROB_EPS`].
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let eps = T::lit(kernels::PROB_EPS);
        let data: Vec<T> = self.value(input).iter().map(|&v| kernels::sigmoid_clamped(v)).collect();
        let clamped = data.iter().map(|&p| p <= eps || p >= T::one() - eps).collect();
        let rg = self.any_grad(&[input]);
        self.push(self.shape(input).to_vec(), data, Op::Sigmoid { input, clamped }, rg)
    }

    /// Train-mode batch norm. Returns the output plus the batch mean and the
    /// unbiased batch variance for running-statistics updates.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (n, c, h, w) = dims4(self.shape(input))?;
        self.check_channel_param(gamma, c)?;
        self.check_channel_param(beta, c)?;
        let m = n * h * w;
        if m < 2 {
            return Err(Error::DegenerateVariance(m));
        }
        let stats = kernels::channel_stats(self.value(input), n, c, h * w, eps);
        let (y, xhat) = kernels::affine_normalize(
            self.value(input),
            c,
            h * w,
            &stats.mean,
            &stats.inv_std,
            self.value(gamma),
            self.value(beta),
        );
        let correction = T::lit(m as f64 / (m - 1) as f64);
        let unbiased = stats.var.iter().map(|&v| v * correction).collect();
        let rg = self.any_grad(&[input, gamma, beta]);
        let out = self.push(
            vec![n, c, h, w],
            y,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: if rg { xhat } else { Vec::new() },
                inv_std: stats.inv_std,
                batch_stats: true,
            },
            rg,
        );
        Ok((out, stats.mean, unbiased))
    }

    /// Normalization with fixed statistics: `gamma·(x−mean)/sqrt(var+eps) + beta`.
    pub fn batch_norm_eval(&mut self, input: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input))?;
        self.check_channel_param(gamma, c)?;
        self.check_channel_param(beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::invalid("batch_norm_eval: running statistics length mismatch"));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::affine_normalize(self.value(input), c, h * w, mean, &inv_std, self.value(gamma), self.value(beta));
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            vec![n, c, h, w],
            y,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: if rg { xhat } else { Vec::new() },
                inv_std,
                batch_stats: false,
            },
            rg,
        ))
    }

    /// Per-channel affine `gamma·x + beta` (the batch-size-1 normalization substitute).
    pub fn channel_affine(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input))?;
        let zeros = vec![T::zero(); c];
        let ones = vec![T::one(); c];
        self.check_channel_param(gamma, c)?;
        self.check_channel_param(beta, c)?;
        let (y, xhat) = kernels::affine_normalize(self.value(input), c, h * w, &zeros, &ones, self.value(gamma), self.value(beta));
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            vec![n, c, h, w],
            y,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: if rg { xhat } else { Vec::new() },
                inv_std: ones,
                batch_stats: false,
            },
            rg,
        ))
    }

    fn check_channel_param(&self, p: Var, c: usize) -> Result<()> {
        if self.shape(p) != [c] {
            return Err(Error::invalid(format!(
                "per-channel parameter has shape {:?}, expected [{c}]",
                self.shape(p)
            )));
        }
        Ok(())
    }

    /// 3×3 stride-1 max pool, shape preserving.
    pub fn max_pool3(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input))?;
        let (y, argmax) = kernels::max_pool3_forward(self.value(input), n * c, h, w);
        let rg = self.any_grad(&[input]);
        Ok(self.push(vec![n, c, h, w], y, Op::MaxPool3 { input, argmax }, rg))
    }

    pub fn upsample_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input))?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("upsample: output size must be non-zero"));
        }
        if out_h < h || out_w < w {
            return Err(Error::invalid(format!(
                "upsample: output {out_h}x{out_w} smaller than input {h}x{w}"
            )));
        }
        let y = kernels::upsample_forward(self.value(input), n * c, h, w, out_h, out_w);
        let rg = self.any_grad(&[input]);
        Ok(self.push(vec![n, c, out_h, out_w], y, Op::Upsample { input }, rg))
    }

    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input))?;
        if c == 0 {
            return Err(Error::invalid("softmax over zero channels"));
        }
        let y = kernels::softmax_channels_forward(self.value(input), n, c, h * w);
        let rg = self.any_grad(&[input]);
        Ok(self.push(vec![n, c, h, w], y, Op::Softmax { input }, rg))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let data = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.any_grad(&[a]);
        self.push(self.shape(a).to_vec(), data, Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.any_grad(&[a]);
        self.push(vec![], vec![s], Op::Sum(a), rg)
    }

    /// Records a scalar-valued function of `input` with a caller-supplied
    /// vector-Jacobian rule `rule(input_values, upstream) -> d input`.
    pub fn scalar_fn(&mut self, input: Var, value: T, rule: impl Fn(&[T], T) -> Vec<T> + 'static) -> Var {
        let rg = self.any_grad(&[input]);
        self.push(
            vec![],
            vec![value],
            Op::ScalarFn {
                input,
                rule: Box::new(rule),
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// across fan-out. The tape may only be swept once per [`reset`](Self::reset).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::invalid("loss is not connected to any parameter that requires grad"));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.local_backward(node, &g);
            for (v, d) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a = *a + b),
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_backward(&self, node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let val = |v: Var| self.nodes[v.0].data.as_slice();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need_dx = self.nodes[input.0].requires_grad;
                let (dx, dw, db) = kernels::conv2d_backward(geom, val(*input), val(*weight), g, need_dx);
                let mut out = vec![(*weight, dw)];
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                if let Some(b) = bias {
                    out.push((*b, db));
                }
                out
            }
            Op::Relu(input) => {
                let dx = val(*input)
                    .iter()
                    .zip(g)
                    .map(|(&x, &d)| if x > T::zero() { d } else { T::zero() })
                    .collect();
                vec![(*input, dx)]
            }
            Op::Sigmoid { input, clamped } => {
                let dx = node
                    .data
                    .iter()
                    .zip(g)
                    .zip(clamped)
                    .map(|((&p, &d), &c)| if c { T::zero() } else { d * p * (T::one() - p) })
                    .collect();
                vec![(*input, dx)]
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = dims4(&node.shape).expect("rank-4");
                let (dx, dgamma, dbeta) = if *batch_stats {
                    kernels::batch_norm_backward(g, xhat, inv_std, val(*gamma), n, c, h * w)
                } else {
                    kernels::affine_normalize_backward(g, xhat, inv_std, val(*gamma), c, h * w)
                };
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::MaxPool3 { input, argmax } => vec![(*input, kernels::max_pool3_backward(g, argmax))],
            Op::Upsample { input } => {
                let (n, c, h, w) = dims4(&self.nodes[input.0].shape).expect("rank-4");
                let (_, _, oh, ow) = dims4(&node.shape).expect("rank-4");
                vec![(*input, kernels::upsample_backward(g, n * c, h, w, oh, ow))]
            }
            Op::Softmax { input } => {
                let (n, c, h, w) = dims4(&node.shape).expect("rank-4");
                vec![(*input, kernels::softmax_channels_backward(&node.data, g, n, c, h * w))]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b)).map(|(&d, &y)| d * y).collect();
                let db = g.iter().zip(val(*a)).map(|(&d, &x)| d * x).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|&d| d * *c).collect())],
            Op::Sum(a) => vec![(*a, vec![g[0]; self.nodes[a.0].data.len()])],
            Op::ScalarFn { input, rule } => vec![(*input, rule(val(*input), g[0]))],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap().with_requires_grad(true)
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.0, -2.0, 5.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, -2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[0.5, 3.0]));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r), &[0.0, 0.0, 2.0]);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[-1.0, -0.5, -3.0]));
        let r = tape.relu(x);
        assert!(tape.value(r).iter().all(|&v| v == 0.0));
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_and_second_sweep() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::InvalidArgument(_))));
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::StaleTape)));
        tape.reset();
        assert!(tape.is_empty());
    }

    #[test]
    fn conv_channel_mismatch_is_invalid_argument() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![1, 2, 4, 4]));
        let w = tape.leaf(&Tensor::zeros(vec![3, 1, 3, 3]));
        assert!(matches!(tape.conv2d(x, w, None, 1, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identity_and_box_kernels() {
        let mut tape = Tape::<f64>::new();
        let img: Vec<f64> = (0..16).map(|v| v as f64 * 0.25 - 1.0).collect();
        let x = tape.leaf(&Tensor::new(vec![1, 1, 4, 4], img.clone()).unwrap());
        let w = tape.leaf(&Tensor::full(vec![1, 1, 1, 1], 1.0));
        let b = tape.leaf(&Tensor::zeros(vec![1]));
        let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(tape.value(y), img.as_slice());

        let c = 1.7;
        let x = tape.leaf(&Tensor::full(vec![1, 1, 5, 5], c));
        let w = tape.leaf(&Tensor::full(vec![1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        let out = tape.value(y);
        for r in 1..4 {
            for col in 1..4 {
                assert!((out[r * 5 + col] - 9.0 * c).abs() < 1e-12);
            }
        }

        let x = tape.leaf(&Tensor::zeros(vec![1, 1, 8, 8]));
        let w = tape.leaf(&Tensor::zeros(vec![2, 1, 3, 3]));
        let y = tape.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 4, 4]);
    }

    #[test]
    fn batch_norm_train_normalizes_each_channel() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| ((i * 37) % 11) as f64 * 0.3 + i as f64 * 0.01).collect();
        let x = tape.leaf(&Tensor::new(vec![2, 3, 2, 2], data).unwrap());
        let g = tape.leaf(&Tensor::full(vec![3], 1.0));
        let b = tape.leaf(&Tensor::zeros(vec![3]));
        let (y, _, _) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
        let out = tape.value(y).to_vec();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|n| out[(n * 3 + ch) * 4..(n * 3 + ch + 1) * 4].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / 8.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_zero_gamma_gives_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn(vec![2, 2, 3, 3], |i| (i as f64).sin()));
        let g = tape.leaf(&Tensor::zeros(vec![2]));
        let b = tape.leaf(&Tensor::new(vec![2], vec![0.25, -1.5]).unwrap());
        let (y, _, _) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
        for (i, block) in tape.value(y).chunks(9).enumerate() {
            let want = if i % 2 == 0 { 0.25 } else { -1.5 };
            assert!(block.iter().all(|&v| v == want));
        }
    }

    #[test]
    fn batch_norm_eval_matches_hand_formula() {
        let mut tape = Tape::<f64>::new();
        let xs = [0.5, -1.0, 2.0, 3.5];
        let (mu, var, gamma, beta, eps) = (0.7, 2.25, 1.3, -0.4, 1e-5);
        let x = tape.leaf(&Tensor::new(vec![1, 1, 2, 2], xs.to_vec()).unwrap());
        let g = tape.leaf(&Tensor::full(vec![1], gamma));
        let b = tape.leaf(&Tensor::full(vec![1], beta));
        let y = tape.batch_norm_eval(x, g, b, &[mu], &[var], eps).unwrap();
        for (o, &xv) in tape.value(y).iter().zip(&xs) {
            let want = (xv - mu) / (var + eps).sqrt() * gamma + beta;
            assert!((o - want).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_degenerate_variance() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![1, 2, 1, 1]));
        let g = tape.leaf(&Tensor::full(vec![2], 1.0));
        let b = tape.leaf(&Tensor::zeros(vec![2]));
        assert!(matches!(tape.batch_norm_train(x, g, b, 1e-5), Err(Error::DegenerateVariance(1))));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::full(vec![1, 4, 2, 2], 0.3));
        let y = tape.softmax_channels(x).unwrap();
        assert!(tape.value(y).iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let x = tape.leaf(&Tensor::new(vec![1, 2, 1, 1], vec![0.0, 3f64.ln()]).unwrap());
        let y = tape.softmax_channels(x).unwrap();
        assert!((tape.value(y)[0] - 0.25).abs() < 1e-12);
        assert!((tape.value(y)[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn upsample_rejects_zero_and_shrinking() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![1, 1, 2, 2]));
        assert!(tape.upsample_bilinear(x, 0, 4).is_err());
        assert!(tape.upsample_bilinear(x, 1, 4).is_err());
        let y = tape.upsample_bilinear(x, 2, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut tape = Tape::<f64>::inference();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
        let s = tape.sum(x);
        assert!(!tape.requires_grad(s));
        assert!(tape.backward(s).is_err());
    }
}
