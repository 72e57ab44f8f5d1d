//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every node holds a dense matrix (a batch of rows). Values are computed
//! eagerly when a node is recorded; [`Tape::gradients`] then sweeps the tape
//! backwards once. Forward-mode quantities (input tangents, Jacobian
//! columns) are obtained by recording their propagation rules as ordinary
//! nodes, so a scalar built from a Jacobian can itself be reverse
//! differentiated with respect to the parameters.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    /// `a + 1 r` with `r` a `1 x c` row
    AddRow(Var, Var),
    /// `a .* (1 r)`
    MulRow(Var, Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Softplus(Var),
    /// Sum of all entries, `1 x 1`.
    Sum(Var),
    /// Per-row sums, `r x 1`.
    RowSum(Var),
    SelectCols(Var, Vec<usize>),
    /// Scatters the columns of each part into a matrix with `usize` columns.
    Assemble(Vec<(Var, Vec<usize>)>),
    /// Replaces the last column with minus the sum of the others.
    VpAdjust(Var),
}

#[derive(Debug)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<DMatrix<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> DMatrix<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DMatrix::zeros(r, c)
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
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

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    /// The single entry of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).add_scalar(c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b).transpose();
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        debug_assert_eq!(r.nrows(), 1);
        let mut v = self.value(a).clone();
        for mut line in v.row_iter_mut() {
            line += r;
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        debug_assert_eq!(r.nrows(), 1);
        let mut v = self.value(a).clone();
        for mut line in v.row_iter_mut() {
            line.component_mul_assign(r);
        }
        self.push(v, Op::MulRow(a, row))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        self.push(v, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = DMatrix::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = DMatrix::from_iterator(m.nrows(), 1, m.row_iter().map(|r| r.sum()));
        self.push(v, Op::RowSum(a))
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let m = self.value(a);
        let v = DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])]);
        self.push(v, Op::SelectCols(a, cols.to_vec()))
    }

    pub fn assemble(&mut self, parts: &[(Var, &[usize])], ncols: usize) -> Var {
        let rows = self.value(parts[0].0).nrows();
        let mut v = DMatrix::zeros(rows, ncols);
        for (var, cols) in parts {
            let m = self.value(*var);
            for (src, &dst) in cols.iter().enumerate() {
                v.set_column(dst, &m.column(src));
            }
        }
        let owned = parts.iter().map(|(var, cols)| (*var, cols.to_vec())).collect();
        self.push(v, Op::Assemble(owned))
    }

    pub fn vp_adjust(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let last = v.ncols() - 1;
        for r in 0..v.nrows() {
            let others: f64 = (0..last).map(|c| v[(r, c)]).sum();
            v[(r, last)] = -others;
        }
        self.push(v, Op::VpAdjust(a))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn gradients(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
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
                    acc(&mut grads, *a, g.component_mul(val(*b)));
                    acc(&mut grads, *b, g.component_mul(val(*a)));
                }
                Op::Neg(a) => acc(&mut grads, *a, -g),
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, &g * val(*b));
                    acc(&mut grads, *b, g.transpose() * val(*a));
                }
                Op::AddRow(a, row) => {
                    let col_sums = DMatrix::from_iterator(1, g.ncols(), g.column_iter().map(|c| c.sum()));
                    acc(&mut grads, *row, col_sums);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let r = val(*row);
                    let prod = g.component_mul(val(*a));
                    let col_sums = DMatrix::from_iterator(1, g.ncols(), prod.column_iter().map(|c| c.sum()));
                    acc(&mut grads, *row, col_sums);
                    let mut ga = g;
                    for mut line in ga.row_iter_mut() {
                        line.component_mul_assign(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, g.zip_map(y, |g, y| g * (1.0 - y * y)));
                }
                Op::Exp(a) => acc(&mut grads, *a, g.component_mul(&node.value)),
                Op::Log(a) => acc(&mut grads, *a, g.component_div(val(*a))),
                Op::Sqrt(a) => acc(&mut grads, *a, g.zip_map(&node.value, |g, y| g / (2.0 * y))),
                Op::Square(a) => acc(&mut grads, *a, g.zip_map(val(*a), |g, x| 2.0 * g * x)),
                Op::Abs(a) => acc(&mut grads, *a, g.zip_map(val(*a), |g, x| g * sign(x))),
                Op::Softplus(a) => acc(&mut grads, *a, g.zip_map(val(*a), |g, x| g * sigmoid(x))),
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut grads, *a, DMatrix::from_element(r, c, g[(0, 0)]));
                }
                Op::RowSum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut grads, *a, DMatrix::from_fn(r, c, |i, _| g[(i, 0)]));
                }
                Op::SelectCols(a, cols) => {
                    let (r, c) = val(*a).shape();
                    let mut ga = DMatrix::zeros(r, c);
                    for (src, &dst) in cols.iter().enumerate() {
                        let mut col = ga.column_mut(dst);
                        col += g.column(src);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Assemble(parts) => {
                    for (var, cols) in parts {
                        let ga = DMatrix::from_fn(g.nrows(), cols.len(), |r, c| g[(r, cols[c])]);
                        acc(&mut grads, *var, ga);
                    }
                }
                Op::VpAdjust(a) => {
                    let last = g.ncols() - 1;
                    let ga = DMatrix::from_fn(g.nrows(), g.ncols(), |r, c| {
                        if c == last {
                            0.0
                        } else {
                            g[(r, c)] - g[(r, last)]
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
