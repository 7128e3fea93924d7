#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to its variables; backward() walks the
// record in reverse and accumulates gradients. Only the primitives needed by the
// networks in this project are provided.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mafaae::numerics {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// A named learnable array. `decay` marks it as subject to weight decay.
struct ParamArray {
    std::string name;
    Matrix value;
    bool decay = true;
};

using ParamSet = std::vector<ParamArray>;
using GradientMap = std::vector<Matrix>;

/// Handle to a node on a Tape.
struct Var {
    std::size_t id = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var parameter(const Matrix& value);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    double scalar(Var v) const { return nodes_[v.id].value(0, 0); }

    /// Gradient of the last backward() target with respect to `v`.
    /// Returns a zero matrix of the right shape when nothing flowed into it.
    Matrix grad(Var v) const;

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    /// a (r x c) plus column vector b (r x 1) broadcast across columns.
    Var add_colwise(Var a, Var b);
    /// scale * a + shift, elementwise.
    Var affine(Var a, double scale, double shift = 0.0);
    Var square(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var relu(Var a);
    Var abs(Var a);
    Var clamp(Var a, double lo, double hi);
    /// Sum of all entries, as a 1x1 matrix.
    Var sum(Var a);
    Var rows(Var a, Index start, Index count);
    /// Same value, but no gradient flows back through it.
    Var detach(Var a);

    void backward(Var output);

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op {
        Leaf,
        MatMul,
        Add,
        Sub,
        Mul,
        AddColwise,
        Affine,
        Square,
        Exp,
        Log,
        Tanh,
        Sigmoid,
        Relu,
        Abs,
        Clamp,
        Sum,
        Rows,
    };

    struct Node {
        Op op = Op::Leaf;
        std::size_t a = 0;
        std::size_t b = 0;
        double p0 = 0.0;
        double p1 = 0.0;
        Index i0 = 0;
        bool requires_grad = false;
        Matrix value;
        Matrix grad;
    };

    Var push(Op op, Matrix value, std::size_t a, std::size_t b, bool requires_grad, const char* name);
    Matrix& grad_slot(std::size_t id);

    std::vector<Node> nodes_;
};

/// Builds a scalar loss on `tape` given the tape variables of a parameter set.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct ValueAndGrad {
    double value = 0.0;
    GradientMap grads;
};

/// Evaluates `loss` and its exact gradient with respect to every array in `params`.
/// Throws NumericError naming the op that produced a non-finite value.
ValueAndGrad value_and_grad(const ParamSet& params, const LossBuilder& loss);

/// Loss value only.
double evaluate(const ParamSet& params, const LossBuilder& loss);

/// Max over all parameter entries of |analytic - central| / max(|analytic|, |central|, 1e-12).
double finite_diff_check(const ParamSet& params, const LossBuilder& loss, double step);

} // namespace mafaae::numerics
