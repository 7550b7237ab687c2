//! Differentiable primitives, each implemented as a method on
//! [`Graph`](crate::Graph) together with its backward rule.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linear;
pub(crate) mod loss;
pub mod norm;
pub(crate) mod pool;
pub(crate) mod reduce;
pub(crate) mod softmax;

pub use loss::{PROB_FLOOR, ROW_SUM_TOL};
pub use norm::RunningStats;

use crate::graph::{GradSink, Node, Op};
use crate::Real;

pub(crate) fn backward<T: Real>(node: &Node<T>, dy: &[T], sink: &mut GradSink<'_, T>) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf | Op::Barrier => {}
        Op::Reshape(x) => sink.add(*x, dy),
        Op::Conv2d(n) => conv::backward(n, dy, sink),
        Op::MaxPool(n) => pool::max_pool_backward(n, dy, sink),
        Op::GlobalAvgPool(x) => pool::gap_backward(*x, dy, sink),
        Op::BatchNorm(n) => norm::backward(n, dy, sink),
        Op::Linear(n) => linear::backward(n, dy, sink),
        Op::Unary(x, kind) => elementwise::unary_backward(*x, *kind, y, dy, sink),
        Op::Add(a, b) => {
            sink.add(*a, dy);
            sink.add(*b, dy);
        }
        Op::Mul(a, b) => elementwise::mul_backward(*a, *b, dy, sink),
        Op::Scale(x, c) => {
            let scaled: alloc::vec::Vec<T> = dy.iter().map(|&g| g * *c).collect();
            sink.add_vec(*x, scaled);
        }
        Op::Sum(x) => elementwise::broadcast_backward(*x, dy[0], sink),
        Op::Mean(x) => {
            let n = T::from_f64(sink.value(*x).numel().max(1) as f64);
            elementwise::broadcast_backward(*x, dy[0] / n, sink)
        }
        Op::Softmax(n) => softmax::softmax_backward(n, y, dy, sink),
        Op::Normalize(n) => softmax::normalize_backward(n, y, dy, sink),
        Op::WeightedSpatialSum(n) => reduce::wss_backward(n, dy, sink),
        Op::GateCombine(g, v) => reduce::gate_combine_backward(*g, *v, dy, sink),
        Op::Stack(parts) => reduce::stack_backward(parts, dy, sink),
        Op::Narrow(n) => reduce::narrow_backward(n, dy, sink),
        Op::Concat(n) => reduce::concat_backward(n, dy, sink),
        Op::Nll(p, targets) => loss::nll_backward(*p, targets, dy, sink),
        Op::HeadReg(m) => loss::head_reg_backward(*m, dy, sink),
    }
}
