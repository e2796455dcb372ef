#include "sfa/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace sfa::ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
}

[[noreturn]] void bad_shape(const char* op, const std::string& what, const Shape& s) {
    throw ShapeError(std::string(op) + ": " + what + ", got " + shape_to_string(s));
}

template <class T>
void check_same_tape(const char* op, Var<T> a, Var<T> b) {
    if (&a.tape() != &b.tape()) {
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
    }
}

// True when `suffix` equals the trailing dimensions of `full`.
bool is_suffix(const Shape& full, const Shape& suffix) {
    if (suffix.size() > full.size()) {
        return false;
    }
    return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    check_same_tape("matmul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() < 1 || bv.rank() != 2 || av.cols() != bv.dim(0)) {
        mismatch("matmul", av.shape(), bv.shape());
    }
    const std::size_t m = av.rows(), k = av.cols(), n = bv.dim(1);
    Shape out_shape = av.shape();
    out_shape.back() = n;
    BasicTensor<T> out(out_shape);
    MatMap<T>(out.raw(), m, n).noalias() = CMatMap<T>(av.raw(), m, k) * CMatMap<T>(bv.raw(), k, n);

    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& tape, std::uint32_t self) {
        CMatMap<T> gc(tape.grad_buffer(self).data(), m, n);
        if (tape.requires_grad(ia)) {
            MatMap<T>(tape.grad_buffer(ia).data(), m, k).noalias() +=
                gc * CMatMap<T>(tape.value(ib).raw(), k, n).transpose();
        }
        if (tape.requires_grad(ib)) {
            MatMap<T>(tape.grad_buffer(ib).data(), k, n).noalias() +=
                CMatMap<T>(tape.value(ia).raw(), m, k).transpose() * gc;
        }
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    check_same_tape("add", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!is_suffix(av.shape(), bv.shape())) {
        mismatch("add", av.shape(), bv.shape());
    }
    const std::size_t inner = bv.size();
    const std::size_t outer = inner == 0 ? 0 : av.size() / inner;
    BasicTensor<T> out = av;
    for (std::size_t o = 0; o < outer; ++o) {
        T* dst = out.raw() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) {
            dst[i] += bv[i];
        }
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, inner, outer](Tape<T>& tape, std::uint32_t self) {
        auto g = tape.grad_buffer(self);
        if (tape.requires_grad(ia)) {
            auto ga = tape.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (tape.requires_grad(ib)) {
            auto gb = tape.grad_buffer(ib);
            for (std::size_t o = 0; o < outer; ++o) {
                const T* src = g.data() + o * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    gb[i] += src[i];
                }
            }
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    check_same_tape("mul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.shape() != bv.shape()) {
        mismatch("mul", av.shape(), bv.shape());
    }
    BasicTensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& tape, std::uint32_t self) {
        auto g = tape.grad_buffer(self);
        if (tape.requires_grad(ia)) {
            auto ga = tape.grad_buffer(ia);
            const auto& bv = tape.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * bv[i];
            }
        }
        if (tape.requires_grad(ib)) {
            auto gb = tape.grad_buffer(ib);
            const auto& av = tape.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i] * av[i];
            }
        }
    });
}

template <class T>
Var<T> scale(Var<T> x, double factor) {
    const auto& xv = x.value();
    const T f = static_cast<T>(factor);
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] * f;
    }
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, f](Tape<T>& tape, std::uint32_t self) {
        auto g = tape.grad_buffer(self);
        auto gx = tape.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * f;
        }
    });
}

template <class T>
Var<T> relu(Var<T> x) {
    const auto& xv = x.value();
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] > T{0} ? xv[i] : T{0};
    }
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix](Tape<T>& tape, std::uint32_t self) {
        auto g = tape.grad_buffer(self);
        auto gx = tape.grad_buffer(ix);
        const auto& xv = tape.value(ix);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > T{0}) {
                gx[i] += g[i];
            }
        }
    });
}

template <class T>
Var<T> gelu(Var<T> x) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    constexpr T kC = static_cast<T>(0.044715);
    const T kS = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    const auto& xv = x.value();
    BasicTensor<T> out(xv.shape());
    const Eigen::Index n = static_cast<Eigen::Index>(xv.size());
    Eigen::Map<const Arr> v(xv.raw(), n);
    Eigen::Map<Arr>(out.raw(), n) = T{0.5} * v * (T{1} + (kS * (v + kC * v.cube())).tanh());
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, kS, kC, n](Tape<T>& tape, std::uint32_t self) {
        auto g = tape.grad_buffer(self);
        auto gx = tape.grad_buffer(ix);
        Eigen::Map<const Arr> v(tape.value(ix).raw(), n);
        const Arr th = (kS * (v + kC * v.cube())).tanh();
        const Arr d = T{0.5} * (T{1} + th) + T{0.5} * v * (T{1} - th.square()) * (kS * (T{1} + T{3} * kC * v.square()));
        Eigen::Map<Arr>(gx.data(), n) += Eigen::Map<const Arr>(g.data(), n) * d;
    });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps) {
    check_same_tape("layer_norm", x, gamma);
    check_same_tape("layer_norm", x, beta);
    if (!(eps > 0.0)) {
        throw std::invalid_argument("layer_norm: eps must be positive");
    }
    const auto& xv = x.value();
    const std::size_t d = xv.cols();
    if (gamma.value().shape() != Shape{d} || beta.value().shape() != Shape{d}) {
        mismatch("layer_norm", xv.shape(), gamma.value().shape());
    }
    const std::size_t rows = xv.rows();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();

    BasicTensor<T> out(xv.shape());
    AlignedVector<T> xhat(xv.size());
    AlignedVector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = xv.raw() + r * d;
        // Accumulate in double so a constant row has an exact mean.
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            acc += static_cast<double>(src[j]);
        }
        const T mean = static_cast<T>(acc / static_cast<double>(d));
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(src[j] - mean);
            var += c * c;
        }
        var /= static_cast<double>(d);
        const T rs = static_cast<T>(1.0 / std::sqrt(var + eps));
        rstd[r] = rs;
        T* xh = xhat.data() + r * d;
        T* dst = out.raw() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (src[j] - mean) * rs;
            dst[j] = xh[j] * gv[j] + bv[j];
        }
    }

    const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().record(
        std::move(out), {x, gamma, beta},
        [ix, ig, ib, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& tape, std::uint32_t self) {
            auto g = tape.grad_buffer(self);
            const auto& gv = tape.value(ig);
            if (tape.requires_grad(ig)) {
                auto gg = tape.grad_buffer(ig);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if (tape.requires_grad(ib)) {
                auto gb = tape.grad_buffer(ib);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gb[j] += g[r * d + j];
                    }
                }
            }
            if (tape.requires_grad(ix)) {
                auto gx = tape.grad_buffer(ix);
                const T inv_d = T{1} / static_cast<T>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* gr = g.data() + r * d;
                    const T* xh = xhat.data() + r * d;
                    T mean_dy = 0, mean_dy_xh = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dyh = gr[j] * gv[j];
                        mean_dy += dyh;
                        mean_dy_xh += dyh * xh[j];
                    }
                    mean_dy *= inv_d;
                    mean_dy_xh *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dyh = gr[j] * gv[j];
                        gx[r * d + j] += rstd[r] * (dyh - mean_dy - xh[j] * mean_dy_xh);
                    }
                }
            }
        });
}

namespace {

template <class T>
void softmax_rows(const T* src, T* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* s = src + r * cols;
        T* o = dst + r * cols;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < cols; ++j) {
            mx = std::max(mx, s[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] = std::exp(s[j] - mx);
            total += o[j];
        }
        const T inv = T{1} / total;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] *= inv;
        }
    }
}

// dS = P * (dP - rowsum(dP * P)), written over dP.
template <class T>
void softmax_rows_backward(const T* p, T* dp, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* pr = p + r * cols;
        T* dr = dp + r * cols;
        T dot = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            dot += dr[j] * pr[j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            dr[j] = pr[j] * (dr[j] - dot);
        }
    }
}

}  // namespace

template <class T>
Var<T> softmax_lastdim(Var<T> x) {
    const auto& xv = x.value();
    BasicTensor<T> out(xv.shape());
    const std::size_t rows = xv.rows(), cols = xv.cols();
    softmax_rows(xv.raw(), out.raw(), rows, cols);
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, rows, cols](Tape<T>& tape, std::uint32_t self) {
        auto g = tape.grad_buffer(self);
        AlignedVector<T> tmp(g.begin(), g.end());
        softmax_rows_backward(tape.value(self).raw(), tmp.data(), rows, cols);
        auto gx = tape.grad_buffer(ix);
        for (std::size_t i = 0; i < tmp.size(); ++i) {
            gx[i] += tmp[i];
        }
    });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    check_same_tape("linear", x, w);
    check_same_tape("linear", x, b);
    const auto& xv = x.value();
    const auto& wv = w.value();
    const auto& bv = b.value();
    if (xv.rank() < 1 || wv.rank() != 2 || xv.cols() != wv.dim(0)) {
        mismatch("linear", xv.shape(), wv.shape());
    }
    if (bv.shape() != Shape{wv.dim(1)}) {
        mismatch("linear", wv.shape(), bv.shape());
    }
    const std::size_t m = xv.rows(), k = xv.cols(), n = wv.dim(1);
    Shape out_shape = xv.shape();
    out_shape.back() = n;
    BasicTensor<T> out(out_shape);
    MatMap<T> om(out.raw(), m, n);
    om.noalias() = CMatMap<T>(xv.raw(), m, k) * CMatMap<T>(wv.raw(), k, n);
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.raw(), n);

    const auto ix = x.id(), iw = w.id(), ib = b.id();
    return x.tape().record(std::move(out), {x, w, b}, [ix, iw, ib, m, k, n](Tape<T>& tape, std::uint32_t self) {
        CMatMap<T> gc(tape.grad_buffer(self).data(), m, n);
        if (tape.requires_grad(ix)) {
            MatMap<T>(tape.grad_buffer(ix).data(), m, k).noalias() +=
                gc * CMatMap<T>(tape.value(iw).raw(), k, n).transpose();
        }
        if (tape.requires_grad(iw)) {
            MatMap<T>(tape.grad_buffer(iw).data(), k, n).noalias() +=
                CMatMap<T>(tape.value(ix).raw(), m, k).transpose() * gc;
        }
        if (tape.requires_grad(ib)) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(tape.grad_buffer(ib).data(), n) += gc.colwise().sum();
        }
    });
}

template <class T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t num_heads) {
    check_same_tape("scaled_dot_attention", q, k);
    check_same_tape("scaled_dot_attention", q, v);
    const auto& qv = q.value();
    if (qv.rank() != 3) {
        bad_shape("scaled_dot_attention", "expected (batch, tokens, dim)", qv.shape());
    }
    if (k.value().shape() != qv.shape()) {
        mismatch("scaled_dot_attention", qv.shape(), k.value().shape());
    }
    if (v.value().shape() != qv.shape()) {
        mismatch("scaled_dot_attention", qv.shape(), v.value().shape());
    }
    const std::size_t batch = qv.dim(0), tokens = qv.dim(1), dim = qv.dim(2);
    if (num_heads == 0 || dim % num_heads != 0) {
        bad_shape("scaled_dot_attention", "dim not divisible by " + std::to_string(num_heads) + " heads", qv.shape());
    }
    const std::size_t hd = dim / num_heads;
    const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    const auto& kv = k.value();
    const auto& vv = v.value();

    BasicTensor<T> out(qv.shape());
    AlignedVector<T> probs(batch * num_heads * tokens * tokens);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim));
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < num_heads; ++h) {
            const std::size_t off = b * tokens * dim + h * hd;
            CStridedMap<T> qh(qv.raw() + off, tokens, hd, stride);
            CStridedMap<T> kh(kv.raw() + off, tokens, hd, stride);
            CStridedMap<T> vh(vv.raw() + off, tokens, hd, stride);
            T* p = probs.data() + (b * num_heads + h) * tokens * tokens;
            MatMap<T> pm(p, tokens, tokens);
            pm.noalias() = (qh * kh.transpose()) * sc;
            softmax_rows(p, p, tokens, tokens);
            StridedMap<T>(out.raw() + off, tokens, hd, stride).noalias() = pm * vh;
        }
    }

    const auto iq = q.id(), ik = k.id(), iv = v.id();
    return q.tape().record(
        std::move(out), {q, k, v},
        [iq, ik, iv, batch, tokens, dim, num_heads, hd, sc, probs = std::move(probs)](Tape<T>& tape,
                                                                                       std::uint32_t self) {
            const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim));
            const auto g = tape.grad_buffer(self);
            const bool need_q = tape.requires_grad(iq), need_k = tape.requires_grad(ik),
                       need_v = tape.requires_grad(iv);
            T* gq = need_q ? tape.grad_buffer(iq).data() : nullptr;
            T* gk = need_k ? tape.grad_buffer(ik).data() : nullptr;
            T* gv = need_v ? tape.grad_buffer(iv).data() : nullptr;
            const auto& qv = tape.value(iq);
            const auto& kv = tape.value(ik);
            const auto& vv = tape.value(iv);
            RowMat<T> dp(tokens, tokens);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < num_heads; ++h) {
                    const std::size_t off = b * tokens * dim + h * hd;
                    CStridedMap<T> go(g.data() + off, tokens, hd, stride);
                    CStridedMap<T> qh(qv.raw() + off, tokens, hd, stride);
                    CStridedMap<T> kh(kv.raw() + off, tokens, hd, stride);
                    CStridedMap<T> vh(vv.raw() + off, tokens, hd, stride);
                    const T* p = probs.data() + (b * num_heads + h) * tokens * tokens;
                    CMatMap<T> pm(p, tokens, tokens);
                    if (gv) {
                        StridedMap<T>(gv + off, tokens, hd, stride).noalias() += pm.transpose() * go;
                    }
                    if (!gq && !gk) {
                        continue;
                    }
                    dp.noalias() = go * vh.transpose();
                    softmax_rows_backward(p, dp.data(), tokens, tokens);
                    if (gq) {
                        StridedMap<T>(gq + off, tokens, hd, stride).noalias() += (dp * kh) * sc;
                    }
                    if (gk) {
                        StridedMap<T>(gk + off, tokens, hd, stride).noalias() += (dp.transpose() * qh) * sc;
                    }
                }
            }
        });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
    BasicTensor<T> out = x.value();
    out.reshape(std::move(shape));
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix](Tape<T>& tape, std::uint32_t self) {
        auto g = tape.grad_buffer(self);
        auto gx = tape.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i];
        }
    });
}

template <class T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor) {
    const auto& xv = x.value();
    if (xv.rank() != 4) {
        bad_shape("upsample_nearest", "expected (batch, h, w, channels)", xv.shape());
    }
    if (factor == 0) {
        throw std::invalid_argument("upsample_nearest: factor must be positive");
    }
    const std::size_t batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    const std::size_t oh = h * factor, ow = w * factor;
    BasicTensor<T> out(Shape{batch, oh, ow, c});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                const T* src = xv.raw() + ((b * h + y / factor) * w + xx / factor) * c;
                std::copy(src, src + c, out.raw() + ((b * oh + y) * ow + xx) * c);
            }
        }
    }
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, batch, h, w, c, factor](Tape<T>& tape, std::uint32_t self) {
        auto g = tape.grad_buffer(self);
        auto gx = tape.grad_buffer(ix);
        const std::size_t oh = h * factor, ow = w * factor;
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    const T* src = g.data() + ((b * oh + y) * ow + xx) * c;
                    T* dst = gx.data() + ((b * h + y / factor) * w + xx / factor) * c;
                    for (std::size_t j = 0; j < c; ++j) {
                        dst[j] += src[j];
                    }
                }
            }
        }
    });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> labels) {
    const auto& lv = logits.value();
    const std::size_t rows = lv.rows(), classes = lv.cols();
    if (labels.size() != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_to_string(lv.shape()));
    }
    if (rows == 0) {
        throw ShapeError("cross_entropy: empty logits");
    }
    AlignedVector<T> probs(lv.size());
    softmax_rows(lv.raw(), probs.data(), rows, classes);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::int32_t y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(classes) + ")");
        }
        const T* s = lv.raw() + r * classes;
        const T mx = *std::max_element(s, s + classes);
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            z += std::exp(static_cast<double>(s[j] - mx));
        }
        total += std::log(z) + static_cast<double>(mx) - static_cast<double>(s[y]);
    }
    BasicTensor<T> out(Shape{}, AlignedVector<T>{static_cast<T>(total / static_cast<double>(rows))});
    std::vector<std::int32_t> kept(labels.begin(), labels.end());
    const auto il = logits.id();
    return logits.tape().record(
        std::move(out), {logits},
        [il, rows, classes, probs = std::move(probs), kept = std::move(kept)](Tape<T>& tape, std::uint32_t self) {
            const T g = tape.grad_buffer(self)[0] / static_cast<T>(rows);
            auto gl = tape.grad_buffer(il);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < classes; ++j) {
                    const T onehot = static_cast<std::size_t>(kept[r]) == j ? T{1} : T{0};
                    gl[r * classes + j] += g * (probs[r * classes + j] - onehot);
                }
            }
        });
}

template <class T>
Var<T> mse(Var<T> pred, const BasicTensor<T>& target) {
    const auto& pv = pred.value();
    if (pv.shape() != target.shape()) {
        mismatch("mse", pv.shape(), target.shape());
    }
    if (pv.size() == 0) {
        throw ShapeError("mse: empty prediction");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double d = static_cast<double>(pv[i]) - static_cast<double>(target[i]);
        total += d * d;
    }
    const std::size_t n = pv.size();
    BasicTensor<T> out(Shape{}, AlignedVector<T>{static_cast<T>(total / static_cast<double>(n))});
    const auto ip = pred.id();
    return pred.tape().record(std::move(out), {pred}, [ip, n, target](Tape<T>& tape, std::uint32_t self) {
        const T g = tape.grad_buffer(self)[0] * T{2} / static_cast<T>(n);
        auto gp = tape.grad_buffer(ip);
        const auto& pv = tape.value(ip);
        for (std::size_t i = 0; i < n; ++i) {
            gp[i] += g * (pv[i] - target[i]);
        }
    });
}

template <class T>
Var<T> sum(Var<T> x) {
    const auto& xv = x.value();
    double total = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        total += static_cast<double>(xv[i]);
    }
    BasicTensor<T> out(Shape{}, AlignedVector<T>{static_cast<T>(total)});
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix](Tape<T>& tape, std::uint32_t self) {
        const T g = tape.grad_buffer(self)[0];
        for (auto& v : tape.grad_buffer(ix)) {
            v += g;
        }
    });
}

#define SFA_INSTANTIATE_OPS(T)                                                        \
    template Var<T> matmul<T>(Var<T>, Var<T>);                                        \
    template Var<T> add<T>(Var<T>, Var<T>);                                           \
    template Var<T> mul<T>(Var<T>, Var<T>);                                           \
    template Var<T> scale<T>(Var<T>, double);                                         \
    template Var<T> relu<T>(Var<T>);                                                  \
    template Var<T> gelu<T>(Var<T>);                                                  \
    template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, double);                    \
    template Var<T> softmax_lastdim<T>(Var<T>);                                       \
    template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                \
    template Var<T> scaled_dot_attention<T>(Var<T>, Var<T>, Var<T>, std::size_t);     \
    template Var<T> reshape<T>(Var<T>, Shape);                                        \
    template Var<T> upsample_nearest<T>(Var<T>, std::size_t);                         \
    template Var<T> cross_entropy<T>(Var<T>, std::span<const std::int32_t>);          \
    template Var<T> mse<T>(Var<T>, const BasicTensor<T>&);                            \
    template Var<T> sum<T>(Var<T>);

SFA_INSTANTIATE_OPS(float)
SFA_INSTANTIATE_OPS(double)

#undef SFA_INSTANTIATE_OPS

}  // namespace sfa::ops
