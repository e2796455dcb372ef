#include "sfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "sfa/ops.hpp"
#include "sfa/rng.hpp"

namespace sfa {

namespace {

using TensorD = BasicTensor<double>;
using VarD = Var<double>;
using Build = std::function<VarD(Tape<double>&, const std::vector<VarD>&)>;

struct Case {
    std::vector<TensorD> inputs;
    Build build;
};

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    TensorD t(std::move(shape));
    for (auto& v : t.data()) {
        v = dist(rng);
    }
    return t;
}

/// Values bounded away from zero so the relu kink is never straddled.
TensorD away_from_zero(Shape shape, Rng& rng) {
    TensorD t = random_tensor(std::move(shape), rng, 0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.data()) {
        v = sign(rng) ? v : -v;
    }
    return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Projects a non-scalar output to a scalar with fixed random weights so every
/// output element contributes a distinct coefficient.
VarD project(Tape<double>& tape, VarD y, std::uint64_t seed) {
    if (y.value().size() == 1) {
        return y;
    }
    Rng rng(seed);
    auto w = tape.constant(random_tensor(y.value().shape(), rng));
    return ops::sum(ops::mul(y, w));
}

Case make_case(const std::string& op, Rng& rng) {
    const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 5);
    if (op == "matmul") {
        const std::size_t k = pick(rng, 1, 4);
        return {{random_tensor({r, k}, rng), random_tensor({k, c}, rng)},
                [](auto&, const auto& v) { return ops::matmul(v[0], v[1]); }};
    }
    if (op == "add") {
        return {{random_tensor({r, c}, rng), random_tensor({r, c}, rng)},
                [](auto&, const auto& v) { return ops::add(v[0], v[1]); }};
    }
    if (op == "add_broadcast") {
        return {{random_tensor({2, r, c}, rng), random_tensor({c}, rng)},
                [](auto&, const auto& v) { return ops::add(v[0], v[1]); }};
    }
    if (op == "mul") {
        return {{random_tensor({r, c}, rng), random_tensor({r, c}, rng)},
                [](auto&, const auto& v) { return ops::mul(v[0], v[1]); }};
    }
    if (op == "scale") {
        return {{random_tensor({r, c}, rng)}, [](auto&, const auto& v) { return ops::scale(v[0], -0.7); }};
    }
    if (op == "relu") {
        return {{away_from_zero({r, c}, rng)}, [](auto&, const auto& v) { return ops::relu(v[0]); }};
    }
    if (op == "gelu") {
        return {{random_tensor({r, c}, rng, -3.0, 3.0)}, [](auto&, const auto& v) { return ops::gelu(v[0]); }};
    }
    if (op == "layer_norm") {
        const std::size_t d = pick(rng, 2, 6);
        return {{random_tensor({r, d}, rng), random_tensor({d}, rng), random_tensor({d}, rng)},
                [](auto&, const auto& v) { return ops::layer_norm(v[0], v[1], v[2]); }};
    }
    if (op == "softmax_lastdim") {
        return {{random_tensor({r, c}, rng, -2.0, 2.0)}, [](auto&, const auto& v) { return ops::softmax_lastdim(v[0]); }};
    }
    if (op == "linear") {
        const std::size_t k = pick(rng, 1, 4);
        return {{random_tensor({2, r, k}, rng), random_tensor({k, c}, rng), random_tensor({c}, rng)},
                [](auto&, const auto& v) { return ops::linear(v[0], v[1], v[2]); }};
    }
    if (op == "scaled_dot_attention") {
        const std::size_t heads = pick(rng, 1, 2), hd = pick(rng, 1, 3), tokens = pick(rng, 1, 4);
        const Shape s{2, tokens, heads * hd};
        return {{random_tensor(s, rng), random_tensor(s, rng), random_tensor(s, rng)},
                [heads](auto&, const auto& v) { return ops::scaled_dot_attention(v[0], v[1], v[2], heads); }};
    }
    if (op == "reshape") {
        return {{random_tensor({r, c}, rng)}, [r, c](auto&, const auto& v) { return ops::reshape(v[0], Shape{c, r}); }};
    }
    if (op == "upsample_nearest") {
        const std::size_t f = pick(rng, 1, 3);
        return {{random_tensor({1, r, 2, c}, rng)}, [f](auto&, const auto& v) { return ops::upsample_nearest(v[0], f); }};
    }
    if (op == "cross_entropy") {
        const std::size_t k = pick(rng, 2, 5);
        std::vector<std::int32_t> labels(r);
        for (auto& l : labels) {
            l = static_cast<std::int32_t>(pick(rng, 0, k - 1));
        }
        return {{random_tensor({r, k}, rng, -2.0, 2.0)},
                [labels](auto&, const auto& v) { return ops::cross_entropy(v[0], std::span<const std::int32_t>(labels)); }};
    }
    if (op == "mse") {
        auto target = random_tensor({r, c}, rng);
        return {{random_tensor({r, c}, rng)}, [target](auto&, const auto& v) { return ops::mse(v[0], target); }};
    }
    if (op == "sum") {
        return {{random_tensor({r, c}, rng)}, [](auto&, const auto& v) { return ops::sum(v[0]); }};
    }
    throw std::invalid_argument("gradcheck: unknown op '" + op + "'");
}

double evaluate(const Case& cs, const std::vector<TensorD>& inputs, std::uint64_t proj_seed) {
    Tape<double> tape;
    std::vector<VarD> vars;
    for (const auto& t : inputs) {
        vars.push_back(tape.variable(t, false));
    }
    return project(tape, cs.build(tape, vars), proj_seed).value()[0];
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
    return {"matmul",     "add",    "add_broadcast",        "mul",     "scale",
            "relu",       "gelu",   "layer_norm",           "softmax_lastdim", "linear",
            "scaled_dot_attention", "reshape", "upsample_nearest", "cross_entropy", "mse", "sum"};
}

GradCheckResult gradcheck(const std::string& op, std::size_t draws, std::uint64_t seed) {
    GradCheckResult res{op, draws, 0, 0.0};
    Rng rng(derive_seed(seed, {std::hash<std::string>{}(op)}));
    for (std::size_t d = 0; d < draws; ++d) {
        Case cs = make_case(op, rng);
        const std::uint64_t proj_seed = rng();

        Tape<double> tape;
        std::vector<VarD> vars;
        for (const auto& t : cs.inputs) {
            vars.push_back(tape.variable(t, true));
        }
        auto loss = project(tape, cs.build(tape, vars), proj_seed);
        tape.backward(loss);

        for (std::size_t i = 0; i < cs.inputs.size(); ++i) {
            const TensorD analytic = tape.grad(vars[i]);
            for (std::size_t j = 0; j < cs.inputs[i].size(); ++j) {
                auto plus = cs.inputs, minus = cs.inputs;
                plus[i][j] += kGradCheckStep;
                minus[i][j] -= kGradCheckStep;
                const double numeric =
                    (evaluate(cs, plus, proj_seed) - evaluate(cs, minus, proj_seed)) / (2.0 * kGradCheckStep);
                const double a = analytic[j];
                const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
                res.max_error = std::max(res.max_error, err);
                ++res.scalars_checked;
            }
        }
    }
    return res;
}

std::vector<GradCheckResult> gradcheck_all(std::size_t draws, std::uint64_t seed) {
    std::vector<GradCheckResult> out;
    for (const auto& op : gradcheck_ops()) {
        out.push_back(gradcheck(op, draws, seed));
    }
    return out;
}

}  // namespace sfa
