//! Minimal reverse-mode engine over row-major batches.
//!
//! Only the operations the denoiser and its losses need are supported. Every
//! node keeps its forward value; [`Tape::backward`] can be called repeatedly
//! with different seeds, which is how Jacobians are assembled row by row.

use ndarray::{s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    /// Parameter block copied from the flat vector at `offset` (row-major).
    Param { offset: usize },
    /// `x * w^T + b` with `w: out x in`, `b: 1 x out`.
    Affine { x: Var, w: Var, b: Var },
    Silu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    /// Row `k` of the output is `x[a_k] - x[b_k]`.
    RowDiff { x: Var, pairs: Vec<(usize, usize)> },
    /// Row `k` scaled by `scales[k]`.
    RowScale { x: Var, scales: Vec<f64> },
    /// `log(mean_{i != j} exp(-|x_i - x_j|^2 / temperature))` over rows.
    PairwiseLogMeanExp { x: Var, temperature: f64 },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node reached by one backward sweep.
#[derive(Debug)]
pub struct Grads {
    adj: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.adj[v.0].as_ref()
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, flat: &[f64], offset: usize, rows: usize, cols: usize) -> Var {
        let data = flat[offset..offset + rows * cols].to_vec();
        let value = Array2::from_shape_vec((rows, cols), data).expect("param block shape");
        self.push(value, Op::Param { offset })
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut y = self.value(x).dot(&self.value(w).t());
        y += self.value(b);
        self.push(y, Op::Affine { x, w, b })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(silu);
        self.push(y, Op::Silu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) - self.value(b);
        self.push(y, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a) * c;
        self.push(y, Op::Scale(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|v| v * v);
        self.push(y, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(y, Op::Sum(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let y = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat rows must agree");
        self.push(y, Op::ConcatCols(a, b))
    }

    pub fn row_diff(&mut self, x: Var, pairs: Vec<(usize, usize)>) -> Var {
        let xv = self.value(x);
        let mut y = Array2::zeros((pairs.len(), xv.ncols()));
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let mut row = y.row_mut(k);
            row.assign(&xv.row(a));
            row -= &xv.row(b);
        }
        self.push(y, Op::RowDiff { x, pairs })
    }

    pub fn row_scale(&mut self, x: Var, scales: Vec<f64>) -> Var {
        let mut y = self.value(x).clone();
        for (mut row, &c) in y.axis_iter_mut(Axis(0)).zip(&scales) {
            row *= c;
        }
        self.push(y, Op::RowScale { x, scales })
    }

    pub fn pairwise_log_mean_exp(&mut self, x: Var, temperature: f64) -> Var {
        let (_, lse, _) = pairwise_softmax(self.value(x), temperature);
        let b = self.value(x).nrows() as f64;
        let y = Array2::from_elem((1, 1), lse - (b * (b - 1.0)).ln());
        self.push(y, Op::PairwiseLogMeanExp { x, temperature })
    }

    /// Reverse sweep from `root` seeded with `seed` (same shape as the root value).
    pub fn backward(&self, root: Var, seed: Array2<f64>) -> Grads {
        assert_eq!(seed.dim(), self.value(root).dim(), "seed shape");
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param { .. } => {}
                Op::Affine { x, w, b } => {
                    accumulate(&mut adj, *x, g.dot(self.value(*w)));
                    accumulate(&mut adj, *w, g.t().dot(self.value(*x)));
                    accumulate(&mut adj, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Silu(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|gv, &xv| *gv *= silu_prime(xv));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, -&g);
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, &g * *c),
                Op::Square(a) => accumulate(&mut adj, *a, self.value(*a) * 2.0 * &g),
                Op::Sum(a) => {
                    let gv = g[[0, 0]];
                    accumulate(&mut adj, *a, Array2::from_elem(self.value(*a).dim(), gv));
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).ncols();
                    accumulate(&mut adj, *a, g.slice(s![.., ..split]).to_owned());
                    accumulate(&mut adj, *b, g.slice(s![.., split..]).to_owned());
                }
                Op::RowDiff { x, pairs } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (k, &(a, b)) in pairs.iter().enumerate() {
                        let gk = g.row(k);
                        let mut ra = gx.row_mut(a);
                        ra += &gk;
                        let mut rb = gx.row_mut(b);
                        rb -= &gk;
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::RowScale { x, scales } => {
                    let mut gx = g.clone();
                    for (mut row, &c) in gx.axis_iter_mut(Axis(0)).zip(scales) {
                        row *= c;
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::PairwiseLogMeanExp { x, temperature } => {
                    let xv = self.value(*x);
                    let (p, _, _) = pairwise_softmax(xv, *temperature);
                    let n = xv.nrows();
                    let mut gx = Array2::zeros(xv.dim());
                    let c = -4.0 / temperature * g[[0, 0]];
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let coef = c * p[[i, j]];
                            let mut row = gx.row_mut(i);
                            row.scaled_add(coef, &xv.row(i));
                            row.scaled_add(-coef, &xv.row(j));
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
            }
            adj[i] = Some(g);
        }
        Grads { adj }
    }

    pub fn backward_scalar(&self, root: Var) -> Grads {
        self.backward(root, Array2::ones((1, 1)))
    }

    /// Scatters the adjoints of every parameter node into a flat gradient.
    pub fn param_gradient(&self, grads: &Grads, n_params: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_params];
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param { offset }, Some(Some(g))) = (&node.op, grads.adj.get(i)) {
                for (dst, v) in out[*offset..*offset + g.len()].iter_mut().zip(g.iter()) {
                    *dst += v;
                }
            }
        }
        out
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut adj[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

/// Softmax over off-diagonal pairs of `-|x_i - x_j|^2 / temperature`.
/// Returns `(p, logsumexp, logits)`; the diagonal of `p` is zero.
fn pairwise_softmax(x: &Array2<f64>, temperature: f64) -> (Array2<f64>, f64, Array2<f64>) {
    let n = x.nrows();
    let mut logits = Array2::from_elem((n, n), f64::NEG_INFINITY);
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                let l = -d / temperature;
                logits[[i, j]] = l;
                max = max.max(l);
            }
        }
    }
    let total: f64 = logits.iter().filter(|l| l.is_finite()).map(|l| (l - max).exp()).sum();
    let lse = max + total.ln();
    let p = logits.mapv(|l| if l.is_finite() { (l - lse).exp() } else { 0.0 });
    (p, lse, logits)
}
