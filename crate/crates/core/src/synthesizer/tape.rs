//! Minimal reverse-mode automatic differentiation over 2-D arrays.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] walks it in
//! reverse and returns gradients for the parameter leaves.

use ndarray::{s, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Array2<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    StackSteps(Vec<Var>),
    Im2Col { input: Var, time: usize, kernel: usize },
    MaskedL1 { pred: Var, target: Array2<f64>, weight: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// A differentiable leaf; its gradient is returned at position `index`.
    pub fn param(&mut self, index: usize, value: Array2<f64>) -> Var {
        self.push(value, Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `x + bias` with `bias` of shape `1 x n` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let v = self.value(x) + self.value(bias);
        self.push(v, Op::AddBias(x, bias))
    }

    /// `x · W + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xw = self.matmul(x, weight);
        self.add_bias(xw, bias)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Elementwise product with a constant of the same shape (dropout masks, padding masks).
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Stacks `T` per-step `B x C` values into a `(B*T) x C` matrix whose row
    /// `b*T + t` is row `b` of step `t`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Var {
        let time = steps.len();
        let (batch, cols) = self.value(steps[0]).dim();
        let mut v = Array2::zeros((batch * time, cols));
        for (t, &step) in steps.iter().enumerate() {
            let sv = &self.nodes[step.0].value;
            for b in 0..batch {
                v.row_mut(b * time + t).assign(&sv.row(b));
            }
        }
        self.push(v, Op::StackSteps(steps.to_vec()))
    }

    /// Unfolds a stacked `(B*T) x C` sequence for a same-padded 1-D
    /// convolution of odd width `kernel`; the result is `(B*T) x (kernel*C)`.
    pub fn im2col(&mut self, input: Var, time: usize, kernel: usize) -> Var {
        let x = self.value(input);
        let (rows, cols) = x.dim();
        let batch = rows / time;
        let pad = kernel / 2;
        let mut v = Array2::zeros((rows, kernel * cols));
        for b in 0..batch {
            for t in 0..time {
                for j in 0..kernel {
                    let src = t as isize + j as isize - pad as isize;
                    if src >= 0 && (src as usize) < time {
                        v.slice_mut(s![b * time + t, j * cols..(j + 1) * cols])
                            .assign(&x.row(b * time + src as usize));
                    }
                }
            }
        }
        self.push(v, Op::Im2Col { input, time, kernel })
    }

    /// `sum(weight * |pred - target|)` as a `1 x 1` value. With `weight` equal
    /// to `mask / count` this is a masked mean absolute error.
    pub fn masked_l1(&mut self, pred: Var, target: Array2<f64>, weight: Array2<f64>) -> Var {
        let p = self.value(pred);
        let total: f64 = ndarray::Zip::from(p)
            .and(&target)
            .and(&weight)
            .fold(0.0, |acc, &p, &t, &w| acc + w * (p - t).abs());
        self.push(Array2::from_elem((1, 1), total), Op::MaskedL1 { pred, target, weight })
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf,
    /// indexed as registered with [`Tape::param`]. Unused parameters get zeros
    /// of the right shape.
    pub fn backward(&self, loss: Var, num_params: usize) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.value(loss).raw_dim()));
        let mut out: Vec<Option<Array2<f64>>> = (0..num_params).map(|_| None).collect();

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(idx) => match &mut out[*idx] {
                    Some(existing) => *existing += &g,
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddBias(x, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *bias, gb);
                    acc(&mut grads, *x, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, g * c),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::StackSteps(steps) => {
                    let time = steps.len();
                    for (t, &step) in steps.iter().enumerate() {
                        let batch = self.value(step).nrows();
                        let mut gs = Array2::zeros(self.value(step).raw_dim());
                        for b in 0..batch {
                            gs.row_mut(b).assign(&g.row(b * time + t));
                        }
                        acc(&mut grads, step, gs);
                    }
                }
                Op::Im2Col { input, time, kernel } => {
                    let (rows, cols) = self.value(*input).dim();
                    let (time, kernel) = (*time, *kernel);
                    let pad = kernel / 2;
                    let mut gx = Array2::zeros((rows, cols));
                    for b in 0..rows / time {
                        for t in 0..time {
                            for j in 0..kernel {
                                let src = t as isize + j as isize - pad as isize;
                                if src >= 0 && (src as usize) < time {
                                    let mut dst = gx.row_mut(b * time + src as usize);
                                    dst += &g.slice(s![b * time + t, j * cols..(j + 1) * cols]);
                                }
                            }
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::MaskedL1 { pred, target, weight } => {
                    let scale = g[[0, 0]];
                    let mut gp = self.value(*pred) - target;
                    ndarray::Zip::from(&mut gp).and(weight).for_each(|d, &w| {
                        *d = scale * w * if *d > 0.0 { 1.0 } else if *d < 0.0 { -1.0 } else { 0.0 };
                    });
                    acc(&mut grads, *pred, gp);
                }
            }
        }
        out
    }
}
