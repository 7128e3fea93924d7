#include "mafaae/autodiff.hpp"

#include "mafaae/errors.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace mafaae::numerics {

Var Tape::push(Op op, Matrix value, std::size_t a, std::size_t b, bool requires_grad, const char* name) {
    if (!value.allFinite()) {
        throw NumericError(std::string("non-finite value produced by ") + name);
    }
    Node node;
    node.op = op;
    node.a = a;
    node.b = b;
    node.requires_grad = requires_grad;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(Op::Leaf, std::move(value), 0, 0, false, "constant"); }

Var Tape::parameter(const Matrix& value) { return push(Op::Leaf, value, 0, 0, true, "parameter"); }

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
        return Matrix::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

Matrix& Tape::grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
        n.grad.setZero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

} // namespace

Var Tape::matmul(Var a, Var b) {
    const Matrix& x = nodes_[a.id].value;
    const Matrix& y = nodes_[b.id].value;
    if (x.cols() != y.rows()) {
        throw std::invalid_argument("matmul: inner dimension mismatch");
    }
    Matrix v = x * y;
    return push(Op::MatMul, std::move(v), a.id, b.id,
                nodes_[a.id].requires_grad || nodes_[b.id].requires_grad, "matmul");
}

Var Tape::add(Var a, Var b) {
    require_same_shape(nodes_[a.id].value, nodes_[b.id].value, "add");
    Matrix v = nodes_[a.id].value + nodes_[b.id].value;
    return push(Op::Add, std::move(v), a.id, b.id,
                nodes_[a.id].requires_grad || nodes_[b.id].requires_grad, "add");
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(nodes_[a.id].value, nodes_[b.id].value, "sub");
    Matrix v = nodes_[a.id].value - nodes_[b.id].value;
    return push(Op::Sub, std::move(v), a.id, b.id,
                nodes_[a.id].requires_grad || nodes_[b.id].requires_grad, "sub");
}

Var Tape::mul(Var a, Var b) {
    require_same_shape(nodes_[a.id].value, nodes_[b.id].value, "mul");
    Matrix v = nodes_[a.id].value.cwiseProduct(nodes_[b.id].value);
    return push(Op::Mul, std::move(v), a.id, b.id,
                nodes_[a.id].requires_grad || nodes_[b.id].requires_grad, "mul");
}

Var Tape::add_colwise(Var a, Var b) {
    const Matrix& x = nodes_[a.id].value;
    const Matrix& bias = nodes_[b.id].value;
    if (bias.cols() != 1 || bias.rows() != x.rows()) {
        throw std::invalid_argument("add_colwise: bias must be a column vector matching rows");
    }
    Matrix v = x.colwise() + bias.col(0);
    return push(Op::AddColwise, std::move(v), a.id, b.id,
                nodes_[a.id].requires_grad || nodes_[b.id].requires_grad, "add_colwise");
}

Var Tape::affine(Var a, double scale, double shift) {
    Matrix v = (nodes_[a.id].value.array() * scale + shift).matrix();
    Var out = push(Op::Affine, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "affine");
    nodes_[out.id].p0 = scale;
    return out;
}

Var Tape::square(Var a) {
    Matrix v = nodes_[a.id].value.array().square().matrix();
    return push(Op::Square, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "square");
}

Var Tape::exp(Var a) {
    Matrix v = nodes_[a.id].value.array().exp().matrix();
    return push(Op::Exp, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "exp");
}

Var Tape::log(Var a) {
    Matrix v = nodes_[a.id].value.array().log().matrix();
    return push(Op::Log, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "log");
}

Var Tape::tanh(Var a) {
    Matrix v = nodes_[a.id].value.array().tanh().matrix();
    return push(Op::Tanh, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "tanh");
}

Var Tape::sigmoid(Var a) {
    Matrix v = (1.0 / (1.0 + (-nodes_[a.id].value.array()).exp())).matrix();
    return push(Op::Sigmoid, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "sigmoid");
}

Var Tape::relu(Var a) {
    Matrix v = nodes_[a.id].value.cwiseMax(0.0);
    return push(Op::Relu, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "relu");
}

Var Tape::abs(Var a) {
    Matrix v = nodes_[a.id].value.cwiseAbs();
    return push(Op::Abs, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "abs");
}

Var Tape::clamp(Var a, double lo, double hi) {
    Matrix v = nodes_[a.id].value.cwiseMax(lo).cwiseMin(hi);
    Var out = push(Op::Clamp, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "clamp");
    nodes_[out.id].p0 = lo;
    nodes_[out.id].p1 = hi;
    return out;
}

Var Tape::sum(Var a) {
    Matrix v(1, 1);
    v(0, 0) = nodes_[a.id].value.sum();
    return push(Op::Sum, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "sum");
}

Var Tape::rows(Var a, Index start, Index count) {
    const Matrix& x = nodes_[a.id].value;
    if (start < 0 || count < 0 || start + count > x.rows()) {
        throw std::invalid_argument("rows: range out of bounds");
    }
    Matrix v = x.middleRows(start, count);
    Var out = push(Op::Rows, std::move(v), a.id, 0, nodes_[a.id].requires_grad, "rows");
    nodes_[out.id].i0 = start;
    return out;
}

Var Tape::detach(Var a) { return push(Op::Leaf, nodes_[a.id].value, 0, 0, false, "detach"); }

void Tape::backward(Var output) {
    for (Node& n : nodes_) {
        n.grad.resize(0, 0);
    }
    Node& out = nodes_[output.id];
    out.grad = Matrix::Ones(out.value.rows(), out.value.cols());

    for (std::size_t id = output.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.size() == 0 || n.op == Op::Leaf) {
            continue;
        }
        const Matrix& g = n.grad;
        const bool da = nodes_[n.a].requires_grad;
        const bool db = nodes_[n.b].requires_grad;
        switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul:
            if (da) grad_slot(n.a).noalias() += g * nodes_[n.b].value.transpose();
            if (db) grad_slot(n.b).noalias() += nodes_[n.a].value.transpose() * g;
            break;
        case Op::Add:
            if (da) grad_slot(n.a) += g;
            if (db) grad_slot(n.b) += g;
            break;
        case Op::Sub:
            if (da) grad_slot(n.a) += g;
            if (db) grad_slot(n.b) -= g;
            break;
        case Op::Mul:
            if (da) grad_slot(n.a) += g.cwiseProduct(nodes_[n.b].value);
            if (db) grad_slot(n.b) += g.cwiseProduct(nodes_[n.a].value);
            break;
        case Op::AddColwise:
            if (da) grad_slot(n.a) += g;
            if (db) grad_slot(n.b) += g.rowwise().sum();
            break;
        case Op::Affine:
            grad_slot(n.a) += n.p0 * g;
            break;
        case Op::Square:
            grad_slot(n.a) += 2.0 * g.cwiseProduct(nodes_[n.a].value);
            break;
        case Op::Exp:
            grad_slot(n.a) += g.cwiseProduct(n.value);
            break;
        case Op::Log:
            grad_slot(n.a) += g.cwiseQuotient(nodes_[n.a].value);
            break;
        case Op::Tanh:
            grad_slot(n.a).array() += g.array() * (1.0 - n.value.array().square());
            break;
        case Op::Sigmoid:
            grad_slot(n.a).array() += g.array() * n.value.array() * (1.0 - n.value.array());
            break;
        case Op::Relu:
            grad_slot(n.a).array() += g.array() * (nodes_[n.a].value.array() > 0.0).cast<double>();
            break;
        case Op::Abs: {
            const auto& x = nodes_[n.a].value.array();
            // Subgradient at 0 is 0.
            grad_slot(n.a).array() += g.array() * ((x > 0.0).cast<double>() - (x < 0.0).cast<double>());
            break;
        }
        case Op::Clamp: {
            const auto& x = nodes_[n.a].value.array();
            grad_slot(n.a).array() += g.array() * ((x >= n.p0) && (x <= n.p1)).cast<double>();
            break;
        }
        case Op::Sum:
            grad_slot(n.a).array() += g(0, 0);
            break;
        case Op::Rows:
            grad_slot(n.a).middleRows(n.i0, g.rows()) += g;
            break;
        }
        if (!g.allFinite()) {
            throw NumericError("non-finite gradient during backward pass");
        }
    }
}

ValueAndGrad value_and_grad(const ParamSet& params, const LossBuilder& loss) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) {
        vars.push_back(tape.parameter(p.value));
    }
    const Var out = loss(tape, vars);
    if (tape.value(out).size() != 1) {
        throw std::invalid_argument("value_and_grad: loss must be a scalar");
    }
    tape.backward(out);

    ValueAndGrad result;
    result.value = tape.scalar(out);
    result.grads.reserve(params.size());
    for (const Var v : vars) {
        result.grads.push_back(tape.grad(v));
    }
    return result;
}

double evaluate(const ParamSet& params, const LossBuilder& loss) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) {
        vars.push_back(tape.constant(p.value));
    }
    return tape.scalar(loss(tape, vars));
}

double finite_diff_check(const ParamSet& params, const LossBuilder& loss, double step) {
    const ValueAndGrad analytic = value_and_grad(params, loss);
    ParamSet probe = params;
    double worst = 0.0;
    for (std::size_t k = 0; k < probe.size(); ++k) {
        Matrix& w = probe[k].value;
        for (Index i = 0; i < w.size(); ++i) {
            const double saved = w(i);
            w(i) = saved + step;
            const double up = evaluate(probe, loss);
            w(i) = saved - step;
            const double down = evaluate(probe, loss);
            w(i) = saved;
            const double central = (up - down) / (2.0 * step);
            const double a = analytic.grads[k](i);
            const double denom = std::max({std::abs(a), std::abs(central), 1e-12});
            worst = std::max(worst, std::abs(a - central) / denom);
        }
    }
    return worst;
}

} // namespace mafaae::numerics
