#include "camenn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "camenn/errors.hpp"

namespace camenn {

namespace {

Tape& tape_of(Var v) {
    if (!v.tape) throw ContractError("variable is not attached to a tape");
    return *v.tape;
}

void same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& t) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

Tensor values_of(const Tensor& t) { return Tensor(t.shape(), t.storage()); }

bool is_row_vector(const Tensor& t) { return t.rank() == 1 || (t.rank() == 2 && t.dim(0) == 1); }

// Elementwise op whose derivative depends only on the input value.
template <class F, class D>
Var unary(const char* op, Var x, F f, D dfdx) {
    Tape& t = tape_of(x);
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    const std::size_t xid = x.id;
    return t.record(op, std::move(out), {xid}, [xid, dfdx](Tape& tp, std::span<const double> g) {
        const Tensor& in = tp.value(xid);
        auto dx = tp.grad_sink(xid);
        for (std::size_t i = 0; i < in.size(); ++i) dx[i] += g[i] * dfdx(in[i]);
    });
}

// Strided view for reductions along one axis: outer x n x inner.
struct AxisLayout {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    l.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

}  // namespace

Var matmul(Var a, Var b) {
    same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix("matmul", A);
    require_matrix("matmul", B);
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    if (B.dim(0) != k)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_string(A.shape()) + " x " +
                             shape_string(B.shape()));
    Tensor C({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* c = &C[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* brow = &B[p * n];
            for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
        }
    }
    const std::size_t aid = a.id, bid = b.id;
    return tape_of(a).record("matmul", std::move(C), {aid, bid}, [aid, bid, m, k, n](Tape& tp, std::span<const double> g) {
        const Tensor& A = tp.value(aid);
        const Tensor& B = tp.value(bid);
        if (tp.needs_grad(aid)) {
            auto dA = tp.grad_sink(aid);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double* grow = &g[i * n];
                    const double* brow = &B[p * n];
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    dA[i * k + p] += s;
                }
        }
        if (tp.needs_grad(bid)) {
            auto dB = tp.grad_sink(bid);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    const double* grow = &g[i * n];
                    double* drow = &dB[p * n];
                    for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                }
        }
    });
}

Var add(Var a, Var b) {
    same_tape(a, b);
    require_same_shape("add", a.value(), b.value());
    Tensor out = values_of(a.value());
    const Tensor& B = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    const std::size_t aid = a.id, bid = b.id;
    return tape_of(a).record("add", std::move(out), {aid, bid}, [aid, bid](Tape& tp, std::span<const double> g) {
        for (auto id : {aid, bid}) {
            if (!tp.needs_grad(id)) continue;
            auto d = tp.grad_sink(id);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    same_tape(a, b);
    require_same_shape("sub", a.value(), b.value());
    Tensor out = values_of(a.value());
    const Tensor& B = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    const std::size_t aid = a.id, bid = b.id;
    return tape_of(a).record("sub", std::move(out), {aid, bid}, [aid, bid](Tape& tp, std::span<const double> g) {
        if (tp.needs_grad(aid)) {
            auto d = tp.grad_sink(aid);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (tp.needs_grad(bid)) {
            auto d = tp.grad_sink(bid);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    same_tape(a, b);
    require_same_shape("mul", a.value(), b.value());
    Tensor out = values_of(a.value());
    const Tensor& B = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    const std::size_t aid = a.id, bid = b.id;
    return tape_of(a).record("mul", std::move(out), {aid, bid}, [aid, bid](Tape& tp, std::span<const double> g) {
        const Tensor& A = tp.value(aid);
        const Tensor& B = tp.value(bid);
        if (tp.needs_grad(aid)) {
            auto d = tp.grad_sink(aid);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * B[i];
        }
        if (tp.needs_grad(bid)) {
            auto d = tp.grad_sink(bid);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * A[i];
        }
    });
}

Var scale(Var x, double factor) {
    Tensor out = values_of(x.value());
    for (auto& v : out.data()) v *= factor;
    const std::size_t xid = x.id;
    return tape_of(x).record("scale", std::move(out), {xid}, [xid, factor](Tape& tp, std::span<const double> g) {
        auto d = tp.grad_sink(xid);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
    });
}

Var scale_by(Var s, Var x) {
    same_tape(s, x);
    if (s.value().size() != 1)
        throw DimensionError("scale_by: factor must hold one value, got " + shape_string(s.value().shape()));
    const double f = s.value()[0];
    Tensor out = values_of(x.value());
    for (auto& v : out.data()) v *= f;
    const std::size_t sid = s.id, xid = x.id;
    return tape_of(x).record("scale_by", std::move(out), {sid, xid}, [sid, xid](Tape& tp, std::span<const double> g) {
        const Tensor& X = tp.value(xid);
        if (tp.needs_grad(sid)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * X[i];
            tp.grad_sink(sid)[0] += acc;
        }
        if (tp.needs_grad(xid)) {
            const double f = tp.value(sid)[0];
            auto d = tp.grad_sink(xid);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * f;
        }
    });
}

Var add_row(Var x, Var bias) {
    same_tape(x, bias);
    const Tensor& X = x.value();
    const Tensor& b = bias.value();
    require_matrix("add_row", X);
    if (!is_row_vector(b) || b.size() != X.dim(1))
        throw DimensionError("add_row: bias " + shape_string(b.shape()) + " does not fit rows of " +
                             shape_string(X.shape()));
    const std::size_t rows = X.dim(0), cols = X.dim(1);
    Tensor out = values_of(X);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
    const std::size_t xid = x.id, bid = bias.id;
    return tape_of(x).record("add_row", std::move(out), {xid, bid},
                             [xid, bid, rows, cols](Tape& tp, std::span<const double> g) {
                                 if (tp.needs_grad(xid)) {
                                     auto d = tp.grad_sink(xid);
                                     for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                                 }
                                 if (tp.needs_grad(bid)) {
                                     auto d = tp.grad_sink(bid);
                                     for (std::size_t r = 0; r < rows; ++r)
                                         for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
                                 }
                             });
}

Var relu(Var x) {
    return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
    return unary(
        "gelu", x,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
        [](double v) {
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        });
}

namespace {
double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var x) {
    return unary("sigmoid", x, stable_sigmoid, [](double v) {
        const double s = stable_sigmoid(v);
        return s * (1.0 - s);
    });
}

Var tanh(Var x) {
    return unary("tanh", x, [](double v) { return std::tanh(v); },
                 [](double v) {
                     const double t = std::tanh(v);
                     return 1.0 - t * t;
                 });
}

Var softmax(Var x, std::size_t axis) {
    const Tensor& X = x.value();
    const AxisLayout l = axis_layout(X.shape(), axis);
    Tensor out(X.shape());
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.n * l.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < l.n; ++j) mx = std::max(mx, X[base + j * l.inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < l.n; ++j) {
                const double e = std::exp(X[base + j * l.inner] - mx);
                out[base + j * l.inner] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] /= sum;
        }
    const std::size_t xid = x.id;
    Tensor saved = out;
    return tape_of(x).record("softmax", std::move(out), {xid},
                             [xid, l, saved = std::move(saved)](Tape& tp, std::span<const double> g) {
                                 auto d = tp.grad_sink(xid);
                                 for (std::size_t o = 0; o < l.outer; ++o)
                                     for (std::size_t in = 0; in < l.inner; ++in) {
                                         const std::size_t base = o * l.n * l.inner + in;
                                         double dot = 0.0;
                                         for (std::size_t j = 0; j < l.n; ++j) {
                                             const std::size_t i = base + j * l.inner;
                                             dot += g[i] * saved[i];
                                         }
                                         for (std::size_t j = 0; j < l.n; ++j) {
                                             const std::size_t i = base + j * l.inner;
                                             d[i] += saved[i] * (g[i] - dot);
                                         }
                                     }
                             });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    same_tape(x, gain);
    same_tape(x, bias);
    if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
    const Tensor& X = x.value();
    const std::size_t d = X.shape().back();
    if (gain.value().size() != d || bias.value().size() != d)
        throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
    const std::size_t rows = X.size() / d;
    const Tensor& G = gain.value();
    const Tensor& B = bias.value();

    Tensor out(X.shape());
    std::vector<double> xhat(X.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &X[r * d];
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += xr[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (xr[c] - mean) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * G[c] + B[c];
        }
    }
    const std::size_t xid = x.id, gid = gain.id, bid = bias.id;
    return tape_of(x).record(
        "layer_norm", std::move(out), {xid, gid, bid},
        [xid, gid, bid, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                                   std::span<const double> g) {
            if (tp.needs_grad(gid)) {
                auto dg = tp.grad_sink(gid);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < d; ++c) dg[c] += g[r * d + c] * xhat[r * d + c];
            }
            if (tp.needs_grad(bid)) {
                auto db = tp.grad_sink(bid);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < d; ++c) db[c] += g[r * d + c];
            }
            if (tp.needs_grad(xid)) {
                const Tensor& G = tp.value(gid);
                auto dx = tp.grad_sink(xid);
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dh = g[r * d + c] * G[c];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * d + c];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dh = g[r * d + c] * G[c];
                        dx[r * d + c] += inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
                    }
                }
            }
        });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no operands");
    Tape& t = tape_of(parts.front());
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Var& p : parts) {
        same_tape(parts.front(), p);
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i])
                throw DimensionError("concat: shape " + shape_string(s) + " incompatible with " + shape_string(first));
        out_shape[axis] += s[axis];
    }
    // outer x (axis*inner) chunks copied part by part.
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const std::size_t out_stride = out_shape[axis] * inner;

    Tensor out(out_shape);
    std::vector<std::size_t> ids, chunk, offset;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        const std::size_t ch = v.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(&v[o * ch], ch, &out[o * out_stride + off]);
        ids.push_back(p.id);
        chunk.push_back(ch);
        offset.push_back(off);
        off += ch;
    }
    auto inputs = ids;
    return t.record("concat", std::move(out), std::move(inputs),
                    [ids, chunk, offset, outer, out_stride](Tape& tp, std::span<const double> g) {
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                            if (!tp.needs_grad(ids[k])) continue;
                            auto d = tp.grad_sink(ids[k]);
                            for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t i = 0; i < chunk[k]; ++i)
                                    d[o * chunk[k] + i] += g[o * out_stride + offset[k] + i];
                        }
                    });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
    const Tensor& X = x.value();
    require_matrix("slice_rows", X);
    Tensor out = X.slice_rows(begin, end);
    const std::size_t xid = x.id, cols = X.dim(1);
    return tape_of(x).record("slice_rows", std::move(out), {xid}, [xid, begin, cols](Tape& tp, std::span<const double> g) {
        auto d = tp.grad_sink(xid);
        for (std::size_t i = 0; i < g.size(); ++i) d[begin * cols + i] += g[i];
    });
}

Var element(Var x, std::size_t index) {
    const Tensor& X = x.value();
    if (index >= X.size())
        throw DimensionError("element: index " + std::to_string(index) + " outside " + shape_string(X.shape()));
    const std::size_t xid = x.id;
    return tape_of(x).record("element", Tensor::scalar(X[index]), {xid},
                             [xid, index](Tape& tp, std::span<const double> g) { tp.grad_sink(xid)[index] += g[0]; });
}

Var mean_pool(Var x, std::size_t axis) {
    const Tensor& X = x.value();
    const AxisLayout l = axis_layout(X.shape(), axis);
    Shape out_shape = X.shape();
    out_shape[axis] = 1;
    Tensor out(out_shape);
    const double inv = 1.0 / static_cast<double>(l.n);
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t in = 0; in < l.inner; ++in) {
            double s = 0.0;
            for (std::size_t j = 0; j < l.n; ++j) s += X[o * l.n * l.inner + j * l.inner + in];
            out[o * l.inner + in] = s * inv;
        }
    const std::size_t xid = x.id;
    return tape_of(x).record("mean_pool", std::move(out), {xid}, [xid, l, inv](Tape& tp, std::span<const double> g) {
        auto d = tp.grad_sink(xid);
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t in = 0; in < l.inner; ++in) {
                const double gi = g[o * l.inner + in] * inv;
                for (std::size_t j = 0; j < l.n; ++j) d[o * l.n * l.inner + j * l.inner + in] += gi;
            }
    });
}

Var mean_rows(Var x, const PositionMask& mask) {
    const Tensor& X = x.value();
    require_matrix("mean_rows", X);
    const std::size_t rows = X.dim(0), cols = X.dim(1);
    if (mask.size() != rows) throw DimensionError("mean_rows: mask length differs from row count");
    const auto used = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    if (used == 0) throw ContractError("mean_rows: mask selects no rows");
    const double inv = 1.0 / static_cast<double>(used);
    Tensor out({1, cols});
    for (std::size_t r = 0; r < rows; ++r)
        if (mask[r])
            for (std::size_t c = 0; c < cols; ++c) out[c] += X[r * cols + c];
    for (auto& v : out.data()) v *= inv;
    const std::size_t xid = x.id;
    return tape_of(x).record("mean_rows", std::move(out), {xid}, [xid, mask, cols, inv](Tape& tp, std::span<const double> g) {
        auto d = tp.grad_sink(xid);
        for (std::size_t r = 0; r < mask.size(); ++r)
            if (mask[r])
                for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[c] * inv;
    });
}

Var embedding_lookup(Var table, std::span<const std::size_t> ids) {
    const Tensor& T = table.value();
    require_matrix("embedding_lookup", T);
    if (ids.empty()) throw ContractError("embedding_lookup: no ids");
    const std::size_t vocab = T.dim(0), d = T.dim(1);
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab)
            throw ContractError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                                std::to_string(vocab) + " rows");
        std::copy_n(&T[ids[i] * d], d, &out[i * d]);
    }
    const std::size_t tid = table.id;
    std::vector<std::size_t> saved(ids.begin(), ids.end());
    return tape_of(table).record("embedding_lookup", std::move(out), {tid},
                                 [tid, d, saved = std::move(saved)](Tape& tp, std::span<const double> g) {
                                     auto dt = tp.grad_sink(tid);
                                     for (std::size_t i = 0; i < saved.size(); ++i)
                                         for (std::size_t c = 0; c < d; ++c) dt[saved[i] * d + c] += g[i * d + c];
                                 });
}

Var bce_loss(Var p, std::span<const double> labels) {
    const Tensor& P = p.value();
    if (P.size() != labels.size())
        throw DimensionError("bce_loss: " + std::to_string(P.size()) + " probabilities vs " +
                             std::to_string(labels.size()) + " labels");
    if (P.size() == 0) throw ContractError("bce_loss: empty batch");
    const double n = static_cast<double>(P.size());
    double total = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double y = labels[i];
        if (y != 0.0 && y != 1.0) throw ContractError("bce_loss: labels must be 0 or 1");
        const double q = std::clamp(P[i], kProbClamp, 1.0 - kProbClamp);
        total -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
    }
    const std::size_t pid = p.id;
    std::vector<double> y(labels.begin(), labels.end());
    return tape_of(p).record("bce_loss", Tensor::scalar(total / n), {pid},
                             [pid, n, y = std::move(y)](Tape& tp, std::span<const double> g) {
                                 const Tensor& P = tp.value(pid);
                                 auto d = tp.grad_sink(pid);
                                 for (std::size_t i = 0; i < y.size(); ++i) {
                                     const double q = P[i];
                                     if (q < kProbClamp || q > 1.0 - kProbClamp) continue;  // clamp is flat
                                     d[i] += g[0] * (-y[i] / q + (1.0 - y[i]) / (1.0 - q)) / n;
                                 }
                             });
}

Var topk_renormalize(Var p, std::size_t k) {
    const Tensor& P = p.value();
    const std::size_t m = P.size();
    if (k < 1 || k > m) throw ContractError("topk_renormalize: k=" + std::to_string(k) + " outside [1," +
                                            std::to_string(m) + "]");
    if (k == m) return p;

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return P[a] > P[b]; });
    std::vector<bool> keep(m, false);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) keep[order[i]] = true;
    for (std::size_t i = 0; i < m; ++i)
        if (keep[i]) total += P[i];

    Tensor out(P.shape());
    for (std::size_t i = 0; i < m; ++i) out[i] = keep[i] ? P[i] / total : 0.0;
    const std::size_t pid = p.id;
    Tensor w = out;
    return tape_of(p).record("topk_renormalize", std::move(out), {pid},
                             [pid, keep, total, w = std::move(w)](Tape& tp, std::span<const double> g) {
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < keep.size(); ++i)
                                     if (keep[i]) dot += g[i] * w[i];
                                 auto d = tp.grad_sink(pid);
                                 for (std::size_t i = 0; i < keep.size(); ++i)
                                     if (keep[i]) d[i] += (g[i] - dot) / total;
                             });
}

Var dropout(Var x, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0,1)");
    if (rate == 0.0) return x;
    const Tensor& X = x.value();
    std::mt19937_64 gen(seed);
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(X.size());
    Tensor out(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
        mask[i] = u < rate ? 0.0 : keep_scale;
        out[i] = X[i] * mask[i];
    }
    const std::size_t xid = x.id;
    return tape_of(x).record("dropout", std::move(out), {xid}, [xid, mask = std::move(mask)](Tape& tp, std::span<const double> g) {
        auto d = tp.grad_sink(xid);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * mask[i];
    });
}

namespace {

void check_attention_inputs(const Tensor& q, const Tensor& k, std::size_t heads,
                            const std::optional<PositionMask>& mask) {
    require_matrix("attention", q);
    require_matrix("attention", k);
    const std::size_t L = q.dim(0), d = q.dim(1);
    if (L == 0) throw ContractError("attention: empty sequence");
    if (k.shape() != q.shape()) throw DimensionError("attention: q/k shape mismatch");
    if (heads == 0 || d % heads != 0)
        throw DimensionError("attention: width " + std::to_string(d) + " not divisible into " + std::to_string(heads) +
                             " heads");
    if (mask) {
        if (mask->size() != L) throw DimensionError("attention: mask length differs from sequence length");
        if (std::none_of(mask->begin(), mask->end(), [](bool b) { return b; }))
            throw ContractError("attention: mask leaves no attendable position");
    }
}

// Columns [off, off + dh) of an [L x d] matrix, transposed to [dh x L].
void head_transpose(const Tensor& x, std::size_t off, std::size_t dh, std::vector<double>& out) {
    const std::size_t L = x.dim(0), d = x.dim(1);
    out.assign(dh * L, 0.0);
    for (std::size_t j = 0; j < L; ++j)
        for (std::size_t c = 0; c < dh; ++c) out[c * L + j] = x[j * d + off + c];
}

Tensor head_probabilities(const Tensor& q, const std::vector<double>& kt, std::size_t off, std::size_t dh,
                          double inv_sqrt, const std::optional<PositionMask>& mask) {
    const std::size_t L = q.dim(0), d = q.dim(1);
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    Tensor P({L, L});
    for (std::size_t i = 0; i < L; ++i) {
        double* row = &P[i * L];
        for (std::size_t c = 0; c < dh; ++c) {
            const double qc = q[i * d + off + c] * inv_sqrt;
            const double* kc = &kt[c * L];
            for (std::size_t j = 0; j < L; ++j) row[j] += qc * kc[j];
        }
        if (mask)
            for (std::size_t j = 0; j < L; ++j)
                if (!(*mask)[j]) row[j] = kNegInf;
        const double mx = *std::max_element(row, row + L);
        double sum = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < L; ++j) row[j] *= inv;
    }
    return P;
}

}  // namespace

std::vector<Tensor> attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads,
                                            const std::optional<PositionMask>& mask) {
    check_attention_inputs(q, k, heads, mask);
    const std::size_t dh = q.dim(1) / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> probs;
    probs.reserve(heads);
    std::vector<double> kt;
    for (std::size_t h = 0; h < heads; ++h) {
        head_transpose(k, h * dh, dh, kt);
        probs.push_back(head_probabilities(q, kt, h * dh, dh, inv_sqrt, mask));
    }
    return probs;
}

Var attention(Var q, Var k, Var v, std::size_t heads, const std::optional<PositionMask>& mask) {
    same_tape(q, k);
    same_tape(q, v);
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const Tensor& V = v.value();
    if (V.shape() != Q.shape()) throw DimensionError("attention: v shape differs from q");
    std::vector<Tensor> probs = attention_probabilities(Q, K, heads, mask);
    const std::size_t L = Q.dim(0), d = Q.dim(1), dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out({L, d});
    std::vector<double> vt;
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor& P = probs[h];
        head_transpose(V, h * dh, dh, vt);
        for (std::size_t i = 0; i < L; ++i) {
            const double* p = &P[i * L];
            for (std::size_t c = 0; c < dh; ++c) {
                const double* vc = &vt[c * L];
                double s = 0.0;
                for (std::size_t j = 0; j < L; ++j) s += p[j] * vc[j];
                out[i * d + h * dh + c] = s;
            }
        }
    }
    const std::size_t qid = q.id, kid = k.id, vid = v.id;
    return tape_of(q).record(
        "attention", std::move(out), {qid, kid, vid},
        [qid, kid, vid, heads, L, d, dh, inv_sqrt, probs = std::move(probs)](Tape& tp, std::span<const double> g) {
            const Tensor& Q = tp.value(qid);
            const Tensor& K = tp.value(kid);
            const Tensor& V = tp.value(vid);
            std::vector<double> dq(L * d, 0.0), dk(L * d, 0.0), dv(L * d, 0.0);
            std::vector<double> kt, vt, dkt, dvt, dp(L), ds(L);
            for (std::size_t h = 0; h < heads; ++h) {
                const Tensor& P = probs[h];
                const std::size_t off = h * dh;
                head_transpose(K, off, dh, kt);
                head_transpose(V, off, dh, vt);
                dkt.assign(dh * L, 0.0);
                dvt.assign(dh * L, 0.0);
                for (std::size_t i = 0; i < L; ++i) {
                    const double* p = &P[i * L];
                    const double* gi = &g[i * d + off];
                    std::fill(dp.begin(), dp.end(), 0.0);
                    for (std::size_t c = 0; c < dh; ++c) {
                        const double gc = gi[c];
                        const double* vc = &vt[c * L];
                        double* dvc = &dvt[c * L];
                        for (std::size_t j = 0; j < L; ++j) {
                            dp[j] += gc * vc[j];
                            dvc[j] += gc * p[j];
                        }
                    }
                    double dot = 0.0;
                    for (std::size_t j = 0; j < L; ++j) dot += dp[j] * p[j];
                    for (std::size_t j = 0; j < L; ++j) ds[j] = p[j] * (dp[j] - dot) * inv_sqrt;
                    for (std::size_t c = 0; c < dh; ++c) {
                        const double qc = Q[i * d + off + c];
                        const double* kc = &kt[c * L];
                        double* dkc = &dkt[c * L];
                        double s = 0.0;
                        for (std::size_t j = 0; j < L; ++j) {
                            s += ds[j] * kc[j];
                            dkc[j] += ds[j] * qc;
                        }
                        dq[i * d + off + c] += s;
                    }
                }
                for (std::size_t j = 0; j < L; ++j)
                    for (std::size_t c = 0; c < dh; ++c) {
                        dk[j * d + off + c] = dkt[c * L + j];
                        dv[j * d + off + c] = dvt[c * L + j];
                    }
            }
            const std::pair<std::size_t, std::vector<double>*> sinks[] = {{qid, &dq}, {kid, &dk}, {vid, &dv}};
            for (const auto& [id, buf] : sinks) {
                if (!tp.needs_grad(id)) continue;
                auto dst = tp.grad_sink(id);
                for (std::size_t i = 0; i < buf->size(); ++i) dst[i] += (*buf)[i];
            }
        });
}

}  // namespace camenn
