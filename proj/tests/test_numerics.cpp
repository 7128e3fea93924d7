#include "mafaae/autodiff.hpp"
#include "mafaae/errors.hpp"
#include "mafaae/optim.hpp"
#include "mafaae/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace mafaae::numerics;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m(i) = u(rng);
    return m;
}

ParamSet one_param(Matrix m) { return {ParamArray{"x", std::move(m), true}}; }


} // namespace

TEST_CASE("square at 3 gives value 9 and gradient 6") {
    const auto r = value_and_grad(one_param(Matrix::Constant(1, 1, 3.0)),
                                  [](Tape& t, std::span<const Var> p) { return t.sum(t.square(p[0])); });
    CHECK(r.value == 9.0);
    CHECK(r.grads[0](0, 0) == 6.0);
}

TEST_CASE("abs at -2 gives value 2 and gradient -1; gradient at 0 is 0") {
    auto f = [](Tape& t, std::span<const Var> p) { return t.sum(t.abs(p[0])); };
    const auto r = value_and_grad(one_param(Matrix::Constant(1, 1, -2.0)), f);
    CHECK(r.value == 2.0);
    CHECK(r.grads[0](0, 0) == -1.0);
    CHECK(value_and_grad(one_param(Matrix::Zero(1, 1)), f).grads[0](0, 0) == 0.0);
}

TEST_CASE("least squares gradient matches central differences") {
    std::mt19937_64 rng(11);
    const Matrix v = random_matrix(4, 1, rng);
    const Matrix y = random_matrix(3, 1, rng);
    LossBuilder f = [&](Tape& t, std::span<const Var> p) {
        return t.sum(t.square(t.sub(t.matmul(p[0], t.constant(v)), t.constant(y))));
    };
    CHECK(finite_diff_check(one_param(random_matrix(3, 4, rng)), f, 1e-5) < 1e-4);
}

TEST_CASE("linear loss has essentially exact finite differences") {
    std::mt19937_64 rng(5);
    const Matrix a = random_matrix(3, 3, rng);
    LossBuilder f = [&](Tape& t, std::span<const Var> p) { return t.sum(t.matmul(t.constant(a), p[0])); };
    CHECK(finite_diff_check(one_param(random_matrix(3, 2, rng)), f, 1e-5) < 1e-8);
}

TEST_CASE("every primitive matches central differences on 100 random trials") {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix w = random_matrix(3, 2, rng);
        const Matrix other = random_matrix(3, 2, rng);
        const Matrix col = random_matrix(3, 1, rng);
        const Matrix left = random_matrix(2, 3, rng);
        // Keeps abs/relu/clamp inputs away from their kinks.
        Matrix x = random_matrix(3, 2, rng);
        for (Index i = 0; i < x.size(); ++i) {
            if (std::abs(x(i)) < 0.05) x(i) = 0.3;
            if (std::abs(std::abs(x(i)) - 0.5) < 0.05) x(i) *= 1.3;
        }
        const Matrix positive = (x.array().abs() + 0.5).matrix();
        const std::vector<std::pair<Matrix, std::function<Var(Tape&, Var)>>> cases = {
            {x, [&](Tape& t, Var a) { return t.add(a, t.constant(other)); }},
            {x, [&](Tape& t, Var a) { return t.sub(t.constant(other), a); }},
            {x, [&](Tape& t, Var a) { return t.mul(a, a); }},
            {x, [&](Tape& t, Var a) { return t.matmul(t.constant(left), a); }},
            {x, [&](Tape& t, Var a) { return t.add_colwise(a, t.constant(col)); }},
            {col, [&](Tape& t, Var a) { return t.add_colwise(t.constant(other), a); }},
            {x, [&](Tape& t, Var a) { return t.affine(a, -1.7, 0.2); }},
            {x, [&](Tape& t, Var a) { return t.square(a); }},
            {x, [&](Tape& t, Var a) { return t.exp(a); }},
            {positive, [&](Tape& t, Var a) { return t.log(a); }},
            {x, [&](Tape& t, Var a) { return t.tanh(a); }},
            {x, [&](Tape& t, Var a) { return t.sigmoid(a); }},
            {x, [&](Tape& t, Var a) { return t.relu(a); }},
            {x, [&](Tape& t, Var a) { return t.abs(a); }},
            {x, [&](Tape& t, Var a) { return t.clamp(a, -0.5, 0.5); }},
            {x, [&](Tape& t, Var a) { return t.rows(a, 1, 2); }},
        };
        for (const auto& [value, op] : cases) {
            LossBuilder f = [&](Tape& t, std::span<const Var> p) {
                const Var out = op(t, p[0]);
                Matrix weights = w.topRows(t.value(out).rows()).leftCols(t.value(out).cols());
                return t.sum(t.mul(out, t.constant(weights)));
            };
            worst = std::max(worst, finite_diff_check(one_param(value), f, 1e-5));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("detach stops the gradient") {
    const auto r = value_and_grad(one_param(Matrix::Constant(1, 1, 2.0)), [](Tape& t, std::span<const Var> p) {
        return t.sum(t.mul(p[0], t.detach(p[0])));
    });
    CHECK(r.value == 4.0);
    CHECK(r.grads[0](0, 0) == 2.0);
}

TEST_CASE("non-finite intermediate names the op") {
    try {
        value_and_grad(one_param(Matrix::Constant(1, 1, -1.0)),
                       [](Tape& t, std::span<const Var> p) { return t.sum(t.log(p[0])); });
        FAIL("expected NumericError");
    } catch (const mafaae::NumericError& e) {
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
}

TEST_CASE("adamw with zero gradient and zero decay is the identity") {
    std::mt19937_64 rng(1);
    ParamSet p = one_param(random_matrix(2, 2, rng));
    const Matrix before = p[0].value;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    auto state = OptimizerState::for_params(p, 1e-3, cfg);
    for (int i = 0; i < 3; ++i) adamw_step(p, {Matrix::Zero(2, 2)}, state);
    CHECK(p[0].value == before);
    CHECK(state.step == 3);
}

TEST_CASE("adamw moments decay under zero gradients") {
    ParamSet p = one_param(Matrix::Zero(1, 1));
    auto state = OptimizerState::for_params(p, 1e-3);
    adamw_step(p, {Matrix::Constant(1, 1, 2.0)}, state);
    const double m = state.first_moment[0](0, 0);
    const double v = state.second_moment[0](0, 0);
    CHECK(m == doctest::Approx(0.2));
    CHECK(v == doctest::Approx(0.004));
    adamw_step(p, {Matrix::Zero(1, 1)}, state);
    CHECK(state.first_moment[0](0, 0) == doctest::Approx(0.9 * m));
    CHECK(state.second_moment[0](0, 0) == doctest::Approx(0.999 * v));
}

TEST_CASE("adamw first step moves a scalar by about the learning rate") {
    for (double g : {-3.0, 0.01, 250.0}) {
        ParamSet p = one_param(Matrix::Constant(1, 1, 1.0));
        AdamWConfig cfg;
        cfg.weight_decay = 0.0;
        auto state = OptimizerState::for_params(p, 1e-3, cfg);
        adamw_step(p, {Matrix::Constant(1, 1, g)}, state);
        const double delta = p[0].value(0, 0) - 1.0;
        CHECK(std::abs(delta) == doctest::Approx(1e-3).epsilon(1e-4));
        CHECK((delta < 0) == (g > 0));
    }
}

TEST_CASE("adamw zero gradient with decay scales by 1 - lr * wd; biases exempt") {
    ParamSet p{ParamArray{"w", Matrix::Constant(1, 1, 2.0), true}, ParamArray{"b", Matrix::Constant(1, 1, 2.0), false}};
    auto state = OptimizerState::for_params(p, 0.1, AdamWConfig{});
    adamw_step(p, {Matrix::Zero(1, 1), Matrix::Zero(1, 1)}, state);
    CHECK(p[0].value(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 1e-2)));
    CHECK(p[1].value(0, 0) == 2.0);
}

TEST_CASE("adamw rejects shape mismatch") {
    ParamSet p = one_param(Matrix::Zero(2, 2));
    auto state = OptimizerState::for_params(p, 1e-3);
    CHECK_THROWS_AS(adamw_step(p, {Matrix::Zero(3, 2)}, state), std::invalid_argument);
}

TEST_CASE("multi-step schedule") {
    ScheduleConfig cfg;
    cfg.initial_lr = 1e-3;
    CHECK(lr_schedule(1, cfg) == doctest::Approx(1e-3));
    CHECK(lr_schedule(2, cfg) == doctest::Approx(1e-4));
    CHECK(lr_schedule(14, cfg) == doctest::Approx(1e-5));
    double prev = lr_schedule(0, cfg);
    for (int e = 1; e < 30; ++e) {
        const double cur = lr_schedule(e, cfg);
        CHECK(cur <= prev);
        if (e != 2 && e != 12) CHECK(cur == prev);
        prev = cur;
    }
    cfg.milestones = {3, 3};
    CHECK_THROWS(lr_schedule(0, cfg));
}

TEST_CASE("inclusive quantiles and population std") {
    const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8};
    CHECK(quantile_sorted(v, 0.25) == doctest::Approx(2.75));
    CHECK(quantile_sorted(v, 0.75) == doctest::Approx(6.25));
    CHECK(quantile_sorted(v, 0.0) == 1.0);
    CHECK(quantile_sorted(v, 1.0) == 8.0);
    const std::vector<double> w{2, 4, 6};
    CHECK(population_std(w) == doctest::Approx(std::sqrt(8.0 / 3.0)));
}

TEST_CASE("tape evaluation is deterministic") {
    std::mt19937_64 rng(9);
    const ParamSet p = one_param(random_matrix(4, 4, rng));
    LossBuilder f = [](Tape& t, std::span<const Var> v) { return t.sum(t.tanh(t.matmul(v[0], v[0]))); };
    const auto a = value_and_grad(p, f);
    const auto b = value_and_grad(p, f);
    CHECK(a.value == b.value);
    CHECK(a.grads[0] == b.grads[0]);
}
