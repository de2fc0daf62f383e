use std::cell::RefCell;
use std::rc::Rc;

use super::Tensor;
use crate::linalg::Mat;

/// A scalar objective evaluated independently on aligned row blocks of two
/// matrices, with its gradient. Used to fuse pairwise-kernel reductions into
/// a single tape node.
pub trait BlockObjective {
    fn value(&self, x: &Mat, y: &Mat) -> f64;
    /// Value and gradients with respect to both blocks.
    fn value_and_grad(&self, x: &Mat, y: &Mat) -> (f64, Mat, Mat);
}

/// Tensors that support fused block reductions.
pub trait BlockReduce: Tensor {
    /// Sums `f` over consecutive blocks of `group` rows of `self` and
    /// `other`. Returns a `1 x 1` value.
    fn reduce_blocks(&self, other: &Self, group: usize, f: Rc<dyn BlockObjective>) -> Self;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Tanh(usize),
    Exp(usize),
    Recip(usize),
    MatMulT(usize, usize),
    AddBias(usize, usize),
    Sum(usize),
    Blocks {
        x: usize,
        y: usize,
        group: usize,
        f: Rc<dyn BlockObjective>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Recip(..) => "recip",
            Op::MatMulT(..) => "matmul_t",
            Op::AddBias(..) => "add_bias",
            Op::Sum(..) => "sum",
            Op::Blocks { .. } => "reduce_blocks",
        }
    }
}

struct Node {
    op: Op,
    value: Mat,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// index is a topological order and the backward sweep is a single reverse
/// pass.
///
/// A tape is `!Sync`; build one per thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    rows: usize,
    cols: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}[{}x{}]", self.id, self.rows, self.cols)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names of recorded operations, in order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op.name()).collect()
    }

    /// A differentiable input.
    pub fn variable(&self, value: Mat) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// An input that gradients do not flow into.
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    fn push(&self, op: Op, value: Mat, needs_grad: bool) -> Var<'_> {
        let (rows, cols) = value.shape();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            tape: self,
            id,
            rows,
            cols,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn unary(&self, a: usize, op: Op, f: impl FnOnce(&Mat) -> Mat) -> Var<'_> {
        let value = f(&self.nodes.borrow()[a].value);
        let needs = self.needs(&[a]);
        self.push(op, value, needs)
    }

    fn binary(&self, a: usize, b: usize, op: Op, f: impl FnOnce(&Mat, &Mat) -> Mat) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let needs = self.needs(&[a, b]);
        self.push(op, value, needs)
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn gradients(&self, root: &Var<'_>) -> Gradients {
        assert!(std::ptr::eq(root.tape, self), "root from another tape");
        assert_eq!((root.rows, root.cols), (1, 1), "root must be scalar");
        let nodes = self.nodes.borrow();
        let mut adj: Vec<Option<Mat>> = (0..nodes.len()).map(|_| None).collect();
        adj[root.id] = Some(Mat::scalar(1.0));

        fn acc(adj: &mut [Option<Mat>], nodes: &[Node], id: usize, g: Mat) {
            if !nodes[id].needs_grad {
                return;
            }
            let (r, c) = nodes[id].value.shape();
            let g = if g.shape() == (r, c) {
                g
            } else {
                g.reduce_to(r, c)
            };
            match &mut adj[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    adj[id] = Some(g);
                }
                &Op::Add(a, b) => {
                    acc(&mut adj, &nodes, a, g.clone());
                    acc(&mut adj, &nodes, b, g);
                }
                &Op::Sub(a, b) => {
                    acc(&mut adj, &nodes, a, g.clone());
                    acc(&mut adj, &nodes, b, g.scale(-1.0));
                }
                &Op::Mul(a, b) => {
                    if nodes[a].needs_grad {
                        acc(&mut adj, &nodes, a, g.mul(&nodes[b].value));
                    }
                    if nodes[b].needs_grad {
                        acc(&mut adj, &nodes, b, g.mul(&nodes[a].value));
                    }
                }
                &Op::Scale(a, c) => acc(&mut adj, &nodes, a, g.scale(c)),
                &Op::Offset(a) => acc(&mut adj, &nodes, a, g),
                &Op::Tanh(a) => {
                    let d = g.zip(&node.value, |g, y| g * (1.0 - y * y));
                    acc(&mut adj, &nodes, a, d);
                }
                &Op::Exp(a) => acc(&mut adj, &nodes, a, g.mul(&node.value)),
                &Op::Recip(a) => {
                    let d = g.zip(&node.value, |g, y| -g * y * y);
                    acc(&mut adj, &nodes, a, d);
                }
                &Op::MatMulT(x, w) => {
                    if nodes[x].needs_grad {
                        acc(&mut adj, &nodes, x, g.matmul(&nodes[w].value));
                    }
                    if nodes[w].needs_grad {
                        acc(&mut adj, &nodes, w, g.t_matmul(&nodes[x].value));
                    }
                }
                &Op::AddBias(x, b) => {
                    if nodes[b].needs_grad {
                        acc(&mut adj, &nodes, b, g.reduce_to(1, g.cols()));
                    }
                    acc(&mut adj, &nodes, x, g);
                }
                &Op::Sum(a) => {
                    let (r, c) = nodes[a].value.shape();
                    acc(&mut adj, &nodes, a, Mat::filled(r, c, g[(0, 0)]));
                }
                Op::Blocks { x, y, group, f } => {
                    let (x, y, group) = (*x, *y, *group);
                    let scale = g[(0, 0)];
                    let xv = &nodes[x].value;
                    let yv = &nodes[y].value;
                    let cols = xv.cols();
                    let mut gx = Mat::zeros(xv.rows(), cols);
                    let mut gy = Mat::zeros(yv.rows(), cols);
                    for b in 0..xv.rows() / group {
                        let xb = block(xv, b, group);
                        let yb = block(yv, b, group);
                        let (_, dx, dy) = f.value_and_grad(&xb, &yb);
                        let span = b * group * cols..(b + 1) * group * cols;
                        for (o, v) in gx.as_mut_slice()[span.clone()].iter_mut().zip(dx.as_slice()) {
                            *o = scale * v;
                        }
                        for (o, v) in gy.as_mut_slice()[span].iter_mut().zip(dy.as_slice()) {
                            *o = scale * v;
                        }
                    }
                    acc(&mut adj, &nodes, x, gx);
                    acc(&mut adj, &nodes, y, gy);
                }
            }
        }
        Gradients { adj }
    }
}

fn block(m: &Mat, b: usize, group: usize) -> Mat {
    let cols = m.cols();
    Mat::from_vec(
        group,
        cols,
        m.as_slice()[b * group * cols..(b + 1) * group * cols].to_vec(),
    )
}

/// Adjoints of the leaves reached by a backward sweep.
pub struct Gradients {
    adj: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` does not influence the root.
    pub fn wrt(&self, v: &Var<'_>) -> Mat {
        self.adj
            .get(v.id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Mat::zeros(v.rows, v.cols))
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }
}

impl<'t> Tensor for Var<'t> {
    type Param = Var<'t>;

    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }

    fn add(&self, rhs: &Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .binary(self.id, rhs.id, Op::Add(self.id, rhs.id), |a, b| a.add(b))
    }
    fn sub(&self, rhs: &Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .binary(self.id, rhs.id, Op::Sub(self.id, rhs.id), |a, b| a.sub(b))
    }
    fn mul(&self, rhs: &Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .binary(self.id, rhs.id, Op::Mul(self.id, rhs.id), |a, b| a.mul(b))
    }
    fn scale(&self, c: f64) -> Self {
        self.tape
            .unary(self.id, Op::Scale(self.id, c), |a| a.scale(c))
    }
    fn offset(&self, c: f64) -> Self {
        self.tape
            .unary(self.id, Op::Offset(self.id), |a| a.map(|v| v + c))
    }
    fn tanh(&self) -> Self {
        self.tape
            .unary(self.id, Op::Tanh(self.id), |a| a.map(f64::tanh))
    }
    fn exp(&self) -> Self {
        self.tape
            .unary(self.id, Op::Exp(self.id), |a| a.map(f64::exp))
    }
    fn recip(&self) -> Self {
        self.tape
            .unary(self.id, Op::Recip(self.id), |a| a.map(|v| 1.0 / v))
    }
    fn matmul_t(&self, w: &Self) -> Self {
        self.same_tape(w);
        self.tape
            .binary(self.id, w.id, Op::MatMulT(self.id, w.id), |x, w| x.matmul_t(w))
    }
    fn add_bias(&self, b: &Self) -> Self {
        self.same_tape(b);
        assert_eq!(b.rows, 1, "bias must be a row vector");
        self.tape
            .binary(self.id, b.id, Op::AddBias(self.id, b.id), |x, b| x.add(b))
    }
    fn sum(&self) -> Self {
        self.tape
            .unary(self.id, Op::Sum(self.id), |a| Mat::scalar(a.sum()))
    }
    fn constant_like(&self, m: Mat) -> Self {
        self.tape.constant(m)
    }
    fn param_like(&self, m: Mat) -> Self {
        self.tape.constant(m)
    }
    fn value(&self) -> Mat {
        self.tape.nodes.borrow()[self.id].value.clone()
    }
    fn is_finite(&self) -> bool {
        self.tape.nodes.borrow()[self.id].value.is_finite()
    }
}

impl BlockReduce for Mat {
    fn reduce_blocks(&self, other: &Self, group: usize, f: Rc<dyn BlockObjective>) -> Self {
        check_blocks(self.shape(), other.shape(), group);
        let total = (0..self.rows() / group)
            .map(|b| f.value(&block(self, b, group), &block(other, b, group)))
            .sum();
        Mat::scalar(total)
    }
}

impl BlockReduce for Var<'_> {
    fn reduce_blocks(&self, other: &Self, group: usize, f: Rc<dyn BlockObjective>) -> Self {
        self.same_tape(other);
        check_blocks((self.rows, self.cols), (other.rows, other.cols), group);
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.reduce_blocks(&nodes[other.id].value, group, f.clone())
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        self.tape.push(
            Op::Blocks {
                x: self.id,
                y: other.id,
                group,
                f,
            },
            value,
            needs,
        )
    }
}

fn check_blocks(a: (usize, usize), b: (usize, usize), group: usize) {
    assert_eq!(a, b, "block reduction needs equal shapes");
    assert!(group > 0 && a.0.is_multiple_of(group), "rows not divisible by group");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_product_chain() {
        let tape = Tape::new();
        let x = tape.variable(Mat::row_vector(&[1.0, 2.0, 3.0]));
        let y = x.mul(&x).tanh().sum();
        let g = tape.gradients(&y).wrt(&x);
        for (i, &xi) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            let t = (xi * xi).tanh();
            assert!((g[(0, i)] - 2.0 * xi * (1.0 - t * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Mat::row_vector(&[4.0]));
        let x = tape.variable(Mat::row_vector(&[2.0]));
        let y = x.mul(&c).sum();
        let g = tape.gradients(&y);
        assert_eq!(g.wrt(&x).as_slice(), &[4.0]);
        assert_eq!(g.wrt(&c).as_slice(), &[0.0]);
    }

    #[test]
    fn broadcast_adjoint_sums_blocks() {
        let tape = Tape::new();
        let small = tape.variable(Mat::row_vector(&[1.0, 1.0]));
        let big = tape.constant(Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]));
        let y = big.mul(&small).sum();
        let g = tape.gradients(&y).wrt(&small);
        assert_eq!(g.as_slice(), &[9.0, 12.0]);
    }

    #[test]
    fn matmul_and_bias_adjoints() {
        let tape = Tape::new();
        let x = tape.variable(Mat::from_rows(&[[1.0, 2.0], [3.0, -1.0]]));
        let w = tape.variable(Mat::from_rows(&[[0.5, -1.0]]));
        let b = tape.variable(Mat::row_vector(&[0.25]));
        let y = x.matmul_t(&w).add_bias(&b).sum();
        let g = tape.gradients(&y);
        assert_eq!(g.wrt(&w).as_slice(), &[4.0, 1.0]);
        assert_eq!(g.wrt(&b).as_slice(), &[2.0]);
        assert_eq!(g.wrt(&x).as_slice(), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn tape_records_in_order() {
        let tape = Tape::new();
        assert!(tape.is_empty());
        let x = tape.variable(Mat::scalar(1.0));
        let _ = x.exp().recip();
        assert_eq!(tape.op_names(), vec!["leaf", "exp", "recip"]);
    }
}
