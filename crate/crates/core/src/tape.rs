//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on the tape is an `Array2<f64>`; scalars are `1 x 1`. Operations
//! are recorded eagerly in evaluation order, so [`Tape::backward`] walks the
//! node list in reverse without a topological sort.

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a^T b`
    MatMulTn(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Exp(Var),
    Elu(Var),
    Tanh(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    MaskDiag(Var),
    Sum(Var),
    /// `max(ln sigmoid(x), ln floor)`
    LogSigmoid(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recorded computation graph.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the output does not depend on it.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Array2<f64> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Array2::zeros(self.shapes[v.0]),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln sigmoid(x) = -softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
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

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Inputs, parameters and detached values all enter as leaves.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    /// A leaf carrying the current value of `v` with no gradient path back.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).t().dot(self.value(b));
        self.push(value, Op::MatMulTn(a, b))
    }

    /// Adds a `1 x k` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        self.push(value, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(elu);
        self.push(value, Op::Elu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols: row counts differ");
        self.push(value, Op::ConcatCols(a, b))
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), index);
        self.push(value, Op::GatherRows(a, index.to_vec()))
    }

    /// Zeroes the diagonal; the diagonal receives no gradient.
    pub fn mask_diag(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.diag_mut().fill(0.0);
        self.push(value, Op::MaskDiag(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let count = self.value(a).len() as f64;
        let total = self.sum(a);
        self.scale(total, 1.0 / count)
    }

    /// `sum(a^2)`
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum(sq)
    }

    /// Logarithm of the logistic function, floored at `ln(floor)`.
    pub fn log_sigmoid(&mut self, a: Var, floor: f64) -> Var {
        let lf = floor.ln();
        let value = self.value(a).mapv(|x| log_sigmoid(x).max(lf));
        self.push(value, Op::LogSigmoid(a, floor))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulTn(a, b) => {
                    // y = a^T b: dA = b g^T, dB = a g
                    let ga = self.value(*b).dot(&g.t());
                    let gb = self.value(*a).dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, grow);
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Square(a) => {
                    let ga = g * &self.value(*a).mapv(|x| 2.0 * x);
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g * &node.value;
                    acc(&mut grads, *a, ga);
                }
                Op::Elu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| {
                        if x <= 0.0 {
                            *gi *= x.exp();
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gi, &y| *gi *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| {
                        if x < *lo || x > *hi {
                            *gi = 0.0;
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    let ga = g.slice(s![.., ..ca]).to_owned();
                    let gb = g.slice(s![.., ca..]).to_owned();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::GatherRows(a, index) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (r, &src) in index.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaskDiag(a) => {
                    let mut ga = g;
                    ga.diag_mut().fill(0.0);
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::LogSigmoid(a, floor) => {
                    let lf = floor.ln();
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| {
                        if log_sigmoid(x) < lf {
                            *gi = 0.0;
                        } else {
                            *gi *= 1.0 - sigmoid(x);
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
            }
        }

        let shapes = self.nodes[..=output.0].iter().map(|n| n.value.dim()).collect();
        Gradients { grads, shapes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Array2<f64>) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let out = build(&mut tape, x);
        let g = tape.backward(out).get(x);
        let eps = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp[[r, c]] += delta;
                let mut t = Tape::new();
                let xv = t.leaf(xp);
                let o = build(&mut t, xv);
                t.scalar(o)
            };
            let num = (eval(eps) - eval(-eps)) / (2.0 * eps);
            assert!(
                (num - g[[r, c]]).abs() < 1e-6 * (1.0 + num.abs()),
                "coord {idx}: fd {num} vs analytic {}",
                g[[r, c]]
            );
        }
    }

    #[test]
    fn matmul_chain_matches_fd() {
        let w = array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]];
        fd_check(
            move |t, x| {
                let wv = t.leaf(w.clone());
                let y = t.matmul(x, wv);
                let y = t.elu(y);
                let y = t.tanh(y);
                t.sum_squares(y)
            },
            array![[0.5, -1.0, 2.0], [-0.3, 0.7, -1.5]],
        );
    }

    #[test]
    fn transpose_matmul_and_mask_match_fd() {
        let z = array![[1.0, 0.5], [-0.2, 0.3], [0.7, -1.1]];
        fd_check(
            move |t, c| {
                let zv = t.leaf(z.clone());
                let cm = t.mask_diag(c);
                let rec = t.matmul_tn(cm, zv);
                let diff = t.sub(zv, rec);
                t.sum_squares(diff)
            },
            array![[0.0, 0.2, -0.1], [0.4, 0.0, 0.3], [-0.5, 0.6, 0.0]],
        );
    }

    #[test]
    fn log_sigmoid_gather_concat_match_fd() {
        fd_check(
            |t, x| {
                let p = t.gather_rows(x, &[2, 0, 1]);
                let cat = t.concat_cols(x, p);
                let ls = t.log_sigmoid(cat, 1e-12);
                let e = t.exp(x);
                let m = t.mul(e, x);
                let a = t.mean(ls);
                let b = t.mean(m);
                t.add(a, b)
            },
            array![[0.5, -1.0], [2.0, 0.1], [-0.3, 0.8]],
        );
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let mut t = Tape::new();
        let x = t.leaf(array![[-20.0, 0.5, 20.0]]);
        let c = t.clamp(x, -10.0, 10.0);
        let s = t.sum(c);
        let g = t.backward(s).get(x);
        assert_eq!(g, array![[0.0, 1.0, 0.0]]);
    }

    #[test]
    fn log_sigmoid_is_floored() {
        let mut t = Tape::new();
        let x = t.leaf(array![[-100.0, 0.0]]);
        let y = t.log_sigmoid(x, 1e-12);
        assert!((t.value(y)[[0, 0]] - 1e-12f64.ln()).abs() < 1e-12);
        assert!((t.value(y)[[0, 1]] - 0.5f64.ln()).abs() < 1e-15);
        let s = t.sum(y);
        let g = t.backward(s).get(x);
        assert_eq!(g[[0, 0]], 0.0);
        assert!((g[[0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0]]);
        let unused = t.leaf(array![[3.0]]);
        let s = t.sum_squares(x);
        let g = t.backward(s);
        assert_eq!(g.get(unused), array![[0.0]]);
        assert_eq!(g.get(x), array![[2.0, 4.0]]);
    }
}
