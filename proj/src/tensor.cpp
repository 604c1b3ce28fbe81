#include "srne/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace srne {

std::string shape_string(const Shape& s)
{
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) {
            out += ",";
        }
        out += std::to_string(s[i]);
    }
    return out + ")";
}

namespace {

std::size_t product(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void mismatch(const std::string& op, const Shape& a, const Shape& b)
{
    throw TensorError(TensorErrc::ShapeMismatch, op + ": " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank2(const std::string& op, const Tensor& t)
{
    if (t.rank() != 2) {
        throw TensorError(TensorErrc::ShapeMismatch, op + ": expected rank 2, got " + shape_string(t.shape()));
    }
}

// c (m x n) += a (m x k) * b (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += aip * bp[j];
            }
        }
    }
}

// c (m x k) += a (m x n) * b^T, b is (k x n)
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k)
{
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* ai = a + i * n;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                s += ai[j] * bp[j];
            }
            c[i * k + p] += s;
        }
    }
}

// c (k x n) += a^T * b, a is (m x k), b is (m x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                cp[j] += aip * bi[j];
            }
        }
    }
}

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

} // namespace

// ------------------------------------------------------------------ Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (product(shape_) != data_.size()) {
        throw TensorError(TensorErrc::ShapeMismatch,
                          "shape " + shape_string(shape_) + " holds " + std::to_string(product(shape_)) +
                              " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t.at(i, i) = 1.0;
    }
    return t;
}

double Tensor::item() const
{
    if (data_.size() != 1) {
        throw TensorError(TensorErrc::NotScalar, "item() on tensor of shape " + shape_string(shape_));
    }
    return data_[0];
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// -------------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node n)
{
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Tensor value)
{
    Node n;
    n.value = std::move(value);
    n.requires_grad = recording_;
    n.leaf = true;
    return push(std::move(n));
}

Var Tape::constant(Tensor value)
{
    Node n;
    n.value = std::move(value);
    n.leaf = true;
    return push(std::move(n));
}

Var Tape::view(const Tensor& t, bool trainable)
{
    Node n;
    n.external = &t;
    n.requires_grad = trainable && recording_;
    n.leaf = true;
    return push(std::move(n));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward fn)
{
    if (!value.all_finite()) {
        throw TensorError(TensorErrc::NonFinite, "non-finite value produced at tape node " + std::to_string(nodes_.size()));
    }
    Node n;
    n.value = std::move(value);
    if (recording_) {
        for (const Var& v : inputs) {
            if (nodes_[v.id].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
        if (n.requires_grad) {
            n.backward = std::move(fn);
        }
    }
    return push(std::move(n));
}

Tensor& Tape::grad_slot(Var v)
{
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
        n.grad = Tensor(value(v).shape());
        n.has_grad = true;
    }
    return n.grad;
}

Tensor Tape::grad(Var v) const
{
    const Node& n = nodes_[v.id];
    return n.has_grad ? n.grad : Tensor(value(v).shape());
}

void Tape::backward(Var loss)
{
    if (value(loss).size() != 1) {
        throw TensorError(TensorErrc::NotScalar, "backward from non-scalar " + shape_string(value(loss).shape()));
    }
    grad_slot(loss)[0] = 1.0;
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backward) {
            n.backward(*this, i);
        }
    }
    for (const Node& n : nodes_) {
        if (n.leaf && n.has_grad && !n.grad.all_finite()) {
            throw TensorError(TensorErrc::NonFiniteGradient, "non-finite gradient on a leaf");
        }
    }
}

// --------------------------------------------------------------------- ops

Var matmul(Var a, Var b)
{
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_rank2("matmul", A);
    require_rank2("matmul", B);
    if (A.dim(1) != B.dim(0)) {
        mismatch("matmul", A.shape(), B.shape());
    }
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor C({m, n});
    gemm_nn(A.data().data(), B.data().data(), C.data().data(), m, k, n);
    return a.tape->record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        if (t.requires_grad(a)) {
            gemm_nt(G.data().data(), t.value(b).data().data(), t.grad_slot(a).data().data(), m, n, k);
        }
        if (t.requires_grad(b)) {
            gemm_tn(t.value(a).data().data(), G.data().data(), t.grad_slot(b).data().data(), m, k, n);
        }
    });
}

Var add(Var a, Var b)
{
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.shape() != B.shape()) {
        mismatch("add", A.shape(), B.shape());
    }
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) {
        C[i] += B[i];
    }
    return a.tape->record(std::move(C), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        for (Var v : {a, b}) {
            if (t.requires_grad(v)) {
                Tensor& g = t.grad_slot(v);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += G[i];
                }
            }
        }
    });
}

Var add_bias(Var x, Var bias)
{
    const Tensor& X = x.value();
    const Tensor& B = bias.value();
    require_rank2("add_bias", X);
    if (B.size() != X.dim(1)) {
        mismatch("add_bias", X.shape(), B.shape());
    }
    const std::size_t rows = X.dim(0), cols = X.dim(1);
    Tensor C = X;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            C.at(r, c) += B[c];
        }
    }
    return x.tape->record(std::move(C), {x, bias}, [x, bias, rows, cols](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        if (t.requires_grad(x)) {
            Tensor& g = t.grad_slot(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += G[i];
            }
        }
        if (t.requires_grad(bias)) {
            Tensor& g = t.grad_slot(bias);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    g[c] += G[r * cols + c];
                }
            }
        }
    });
}

Var mul(Var a, Var b)
{
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.shape() != B.shape()) {
        mismatch("mul", A.shape(), B.shape());
    }
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) {
        C[i] *= B[i];
    }
    return a.tape->record(std::move(C), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        if (t.requires_grad(a)) {
            Tensor& g = t.grad_slot(a);
            const Tensor& other = t.value(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += G[i] * other[i];
            }
        }
        if (t.requires_grad(b)) {
            Tensor& g = t.grad_slot(b);
            const Tensor& other = t.value(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += G[i] * other[i];
            }
        }
    });
}

Var scale(Var a, double s)
{
    Tensor C = a.value();
    for (auto& v : C.data()) {
        v *= s;
    }
    return a.tape->record(std::move(C), {a}, [a, s](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        Tensor& g = t.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += s * G[i];
        }
    });
}

Var transpose(Var a)
{
    const Tensor& A = a.value();
    require_rank2("transpose", A);
    const std::size_t rows = A.dim(0), cols = A.dim(1);
    Tensor C({cols, rows});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            C.at(c, r) = A.at(r, c);
        }
    }
    return a.tape->record(std::move(C), {a}, [a, rows, cols](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        Tensor& g = t.grad_slot(a);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                g.at(r, c) += G.at(c, r);
            }
        }
    });
}

Var reshape(Var a, Shape shape)
{
    const Tensor& A = a.value();
    if (product(shape) != A.size()) {
        mismatch("reshape", A.shape(), shape);
    }
    Tensor C(std::move(shape), std::vector<double>(A.data().begin(), A.data().end()));
    return a.tape->record(std::move(C), {a}, [a](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        Tensor& g = t.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += G[i];
        }
    });
}

Var concat(std::span<const Var> parts, std::size_t axis)
{
    if (parts.empty() || axis > 1) {
        throw TensorError(TensorErrc::ShapeMismatch, "concat: need parts and axis 0 or 1");
    }
    const Tensor& first = parts[0].value();
    require_rank2("concat", first);
    std::size_t rows = 0, cols = 0;
    for (const Var& p : parts) {
        const Tensor& P = p.value();
        require_rank2("concat", P);
        if (axis == 0) {
            if (P.dim(1) != first.dim(1)) {
                mismatch("concat", first.shape(), P.shape());
            }
            rows += P.dim(0);
            cols = P.dim(1);
        } else {
            if (P.dim(0) != first.dim(0)) {
                mismatch("concat", first.shape(), P.shape());
            }
            cols += P.dim(1);
            rows = P.dim(0);
        }
    }
    Tensor C({rows, cols});
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& P = p.value();
        offsets.push_back(off);
        for (std::size_t r = 0; r < P.dim(0); ++r) {
            for (std::size_t c = 0; c < P.dim(1); ++c) {
                if (axis == 0) {
                    C.at(off + r, c) = P.at(r, c);
                } else {
                    C.at(r, off + c) = P.at(r, c);
                }
            }
        }
        off += axis == 0 ? P.dim(0) : P.dim(1);
    }
    Tape* tape = parts[0].tape;
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape->record(std::move(C), inputs, [inputs, offsets, axis](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            const Var v = inputs[k];
            if (!t.requires_grad(v)) {
                continue;
            }
            Tensor& g = t.grad_slot(v);
            const std::size_t rows = g.dim(0), cols = g.dim(1);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    g.at(r, c) += axis == 0 ? G.at(offsets[k] + r, c) : G.at(r, offsets[k] + c);
                }
            }
        }
    });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end)
{
    const Tensor& A = a.value();
    require_rank2("slice", A);
    if (axis > 1 || begin >= end || end > A.dim(axis)) {
        throw TensorError(TensorErrc::ShapeMismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                                         ") on axis " + std::to_string(axis) + " of " +
                                                         shape_string(A.shape()));
    }
    const std::size_t rows = axis == 0 ? end - begin : A.dim(0);
    const std::size_t cols = axis == 1 ? end - begin : A.dim(1);
    const std::size_t r0 = axis == 0 ? begin : 0;
    const std::size_t c0 = axis == 1 ? begin : 0;
    Tensor C({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            C.at(r, c) = A.at(r0 + r, c0 + c);
        }
    }
    return a.tape->record(std::move(C), {a}, [a, rows, cols, r0, c0](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        Tensor& g = t.grad_slot(a);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                g.at(r0 + r, c0 + c) += G.at(r, c);
            }
        }
    });
}

Var sum(Var a)
{
    const Tensor& A = a.value();
    double s = 0.0;
    for (double v : A.data()) {
        s += v;
    }
    return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, std::uint32_t self) {
        const double G = t.grad_of(self)[0];
        Tensor& g = t.grad_slot(a);
        for (auto& v : g.data()) {
            v += G;
        }
    });
}

Var conv1d(Var x, Var w, Var bias)
{
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    const Tensor& B = bias.value();
    require_rank2("conv1d", X);
    if (W.rank() != 3 || W.dim(1) != X.dim(0) || B.size() != W.dim(0)) {
        mismatch("conv1d", X.shape(), W.shape());
    }
    const std::size_t cin = X.dim(0), n = X.dim(1), cout = W.dim(0), k = W.dim(2);
    if (k % 2 == 0 || k > n) {
        throw TensorError(TensorErrc::ShapeMismatch, "conv1d: kernel " + std::to_string(k) +
                                                         " must be odd and fit " + std::to_string(n) + " points");
    }
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
    auto widx = [cin, k](std::size_t o, std::size_t c, std::size_t j) { return (o * cin + c) * k + j; };

    Tensor Y({cout, n});
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t p = 0; p < n; ++p) {
            double s = B[o];
            for (std::size_t c = 0; c < cin; ++c) {
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(p) + static_cast<std::ptrdiff_t>(j) - half;
                    if (q >= 0 && q < static_cast<std::ptrdiff_t>(n)) {
                        s += W[widx(o, c, j)] * X.at(c, static_cast<std::size_t>(q));
                    }
                }
            }
            Y.at(o, p) = s;
        }
    }
    return x.tape->record(std::move(Y), {x, w, bias},
                          [x, w, bias, cin, n, cout, k, half, widx](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        const Tensor& X = t.value(x);
        const Tensor& W = t.value(w);
        Tensor* gx = t.requires_grad(x) ? &t.grad_slot(x) : nullptr;
        Tensor* gw = t.requires_grad(w) ? &t.grad_slot(w) : nullptr;
        Tensor* gb = t.requires_grad(bias) ? &t.grad_slot(bias) : nullptr;
        for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t p = 0; p < n; ++p) {
                const double g = G.at(o, p);
                if (gb) {
                    (*gb)[o] += g;
                }
                for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(p) + static_cast<std::ptrdiff_t>(j) - half;
                        if (q < 0 || q >= static_cast<std::ptrdiff_t>(n)) {
                            continue;
                        }
                        const auto qi = static_cast<std::size_t>(q);
                        if (gw) {
                            (*gw)[widx(o, c, j)] += g * X.at(c, qi);
                        }
                        if (gx) {
                            gx->at(c, qi) += g * W[widx(o, c, j)];
                        }
                    }
                }
            }
        }
    });
}

Var max_over_set(Var x)
{
    const Tensor& X = x.value();
    require_rank2("max_over_set", X);
    const std::size_t channels = X.dim(0), n = X.dim(1);
    if (n == 0) {
        throw TensorError(TensorErrc::ShapeMismatch, "max_over_set: empty set");
    }
    Tensor Y({channels});
    std::vector<std::size_t> arg(channels, 0);
    for (std::size_t c = 0; c < channels; ++c) {
        double best = X.at(c, 0);
        for (std::size_t p = 1; p < n; ++p) {
            if (X.at(c, p) > best) {
                best = X.at(c, p);
                arg[c] = p;
            }
        }
        Y[c] = best;
    }
    return x.tape->record(std::move(Y), {x}, [x, arg](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        Tensor& g = t.grad_slot(x);
        for (std::size_t c = 0; c < arg.size(); ++c) {
            g.at(c, arg[c]) += G[c];
        }
    });
}

Var gather_rows(Var table, std::span<const int> indices)
{
    const Tensor& T = table.value();
    require_rank2("gather_rows", T);
    const std::size_t vocab = T.dim(0), d = T.dim(1);
    std::vector<std::size_t> idx;
    idx.reserve(indices.size());
    for (int i : indices) {
        if (i < 0 || static_cast<std::size_t>(i) >= vocab) {
            throw TensorError(TensorErrc::IndexOutOfVocab, "row index " + std::to_string(i) + " outside table of " +
                                                               std::to_string(vocab));
        }
        idx.push_back(static_cast<std::size_t>(i));
    }
    if (idx.empty()) {
        throw TensorError(TensorErrc::ShapeMismatch, "gather_rows: no indices");
    }
    Tensor Y({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(T.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                    Y.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    return table.tape->record(std::move(Y), {table}, [table, idx, d](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        Tensor& g = t.grad_slot(table);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                g.at(idx[r], c) += G.at(r, c);
            }
        }
    });
}

Var gelu(Var x)
{
    Tensor Y = x.value();
    for (auto& v : Y.data()) {
        const double u = v;
        v = 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
    }
    return x.tape->record(std::move(Y), {x}, [x](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        const Tensor& X = t.value(x);
        Tensor& g = t.grad_slot(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double u = X[i];
            const double th = std::tanh(kGeluC * (u + kGeluA * u * u * u));
            const double d = 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
            g[i] += G[i] * d;
        }
    });
}

Var softmax(Var x)
{
    const Tensor& X = x.value();
    const std::size_t cols = X.shape().back();
    const std::size_t rows = X.size() / cols;
    Tensor Y(X.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = X.data().data() + r * cols;
        double* out = Y.data().data() + r * cols;
        const double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] = std::exp(in[c] - mx);
            z += out[c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] /= z;
        }
    }
    return x.tape->record(std::move(Y), {x}, [x, rows, cols](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        const Tensor& Y = t.value(t.var(self));
        Tensor& g = t.grad_slot(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                dot += G[r * cols + c] * Y[r * cols + c];
            }
            for (std::size_t c = 0; c < cols; ++c) {
                g[r * cols + c] += Y[r * cols + c] * (G[r * cols + c] - dot);
            }
        }
    });
}

Var causal_mask(Var scores)
{
    const Tensor& S = scores.value();
    require_rank2("causal_mask", S);
    if (S.dim(0) != S.dim(1)) {
        mismatch("causal_mask", S.shape(), S.shape());
    }
    const std::size_t n = S.dim(0);
    Tensor Y = S;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = r + 1; c < n; ++c) {
            Y.at(r, c) = kMaskedScore;
        }
    }
    return scores.tape->record(std::move(Y), {scores}, [scores, n](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        Tensor& g = t.grad_slot(scores);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c <= r; ++c) {
                g.at(r, c) += G.at(r, c);
            }
        }
    });
}

Var dropout(Var x, double p, bool training, Rng& rng)
{
    if (p < 0.0 || p >= 1.0) {
        throw std::invalid_argument("dropout probability must lie in [0, 1)");
    }
    if (!training || p == 0.0) {
        return x;
    }
    const Tensor& X = x.value();
    Tensor mask(X.shape());
    const double keep = 1.0 / (1.0 - p);
    for (auto& m : mask.data()) {
        m = rng.bernoulli(p) ? 0.0 : keep;
    }
    Tensor Y = X;
    for (std::size_t i = 0; i < Y.size(); ++i) {
        Y[i] *= mask[i];
    }
    return x.tape->record(std::move(Y), {x}, [x, mask = std::move(mask)](Tape& t, std::uint32_t self) {
        const Tensor& G = t.grad_of(self);
        Tensor& g = t.grad_slot(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += G[i] * mask[i];
        }
    });
}

namespace {

struct CeParts {
    double loss = 0.0;
    std::size_t counted = 0;
};

CeParts ce_value(const Tensor& L, std::span<const int> targets, int ignore_index)
{
    require_rank2("cross_entropy", L);
    const std::size_t n = L.dim(0), classes = L.dim(1);
    if (targets.size() != n) {
        throw TensorError(TensorErrc::ShapeMismatch, "cross_entropy: " + std::to_string(targets.size()) +
                                                         " targets for " + std::to_string(n) + " rows");
    }
    CeParts out;
    for (std::size_t r = 0; r < n; ++r) {
        const int tgt = targets[r];
        if (tgt == ignore_index) {
            continue;
        }
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= classes) {
            throw TensorError(TensorErrc::IndexOutOfVocab, "target " + std::to_string(tgt) + " outside " +
                                                               std::to_string(classes) + " classes");
        }
        const double* row = L.data().data() + r * classes;
        const double mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            z += std::exp(row[c] - mx);
        }
        out.loss += (mx + std::log(z)) - row[tgt];
        ++out.counted;
    }
    if (out.counted == 0) {
        throw TensorError(TensorErrc::ShapeMismatch, "cross_entropy: every position is padding");
    }
    out.loss /= static_cast<double>(out.counted);
    return out;
}

} // namespace

double cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index)
{
    return ce_value(logits, targets, ignore_index).loss;
}

Var cross_entropy_loss(Var logits, std::span<const int> targets, int ignore_index)
{
    const CeParts parts = ce_value(logits.value(), targets, ignore_index);
    std::vector<int> tg(targets.begin(), targets.end());
    const double inv = 1.0 / static_cast<double>(parts.counted);
    return logits.tape->record(Tensor::scalar(parts.loss), {logits},
                               [logits, tg, inv, ignore_index](Tape& t, std::uint32_t self) {
        const double G = t.grad_of(self)[0];
        const Tensor& L = t.value(logits);
        Tensor& g = t.grad_slot(logits);
        const std::size_t classes = L.dim(1);
        for (std::size_t r = 0; r < tg.size(); ++r) {
            if (tg[r] == ignore_index) {
                continue;
            }
            const double* row = L.data().data() + r * classes;
            const double mx = *std::max_element(row, row + classes);
            double z = 0.0;
            for (std::size_t c = 0; c < classes; ++c) {
                z += std::exp(row[c] - mx);
            }
            for (std::size_t c = 0; c < classes; ++c) {
                const double p = std::exp(row[c] - mx) / z;
                const double onehot = static_cast<int>(c) == tg[r] ? 1.0 : 0.0;
                g.at(r, c) += G * inv * (p - onehot);
            }
        }
    });
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm)
{
    double sq = 0.0;
    for (const Tensor& g : grads) {
        for (double v : g.data()) {
            sq += v * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
        throw TensorError(TensorErrc::NonFiniteGradient, "gradient norm is not finite");
    }
    if (norm > max_norm && norm > 0.0) {
        const double f = max_norm / norm;
        for (Tensor& g : grads) {
            for (double& v : g.data()) {
                v *= f;
            }
        }
    }
    return norm;
}

void sgd_step(Tensor& param, const Tensor& grad, double lr)
{
    if (param.shape() != grad.shape()) {
        mismatch("sgd_step", param.shape(), grad.shape());
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        param[i] -= lr * grad[i];
    }
}

} // namespace srne
