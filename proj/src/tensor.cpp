#include "hynea/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <malloc.h>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace hynea {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::size_t g_recomputes = 0;

// Keep freed tensor buffers in the heap instead of handing them back to the OS.
[[maybe_unused]] const bool g_allocator_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
}();

void check_shape(const Shape& shape) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
    }
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
#ifndef NDEBUG
    bool finite_in = true;
    for (const Tensor* t : inputs) {
        if (t == nullptr || !t->defined()) continue;
        for (double v : t->data()) finite_in = finite_in && std::isfinite(v);
    }
    if (finite_in) {
        for (double v : node->value) {
            if (!std::isfinite(v)) throw DomainError("non-finite value produced from finite inputs");
        }
    }
#endif
    if (tracking(inputs)) {
        node->requires_grad = true;
        node->backward = std::move(backward);
        Tape::active()->record(node);
    }
    return Tensor(node);
}

// For every index of `out`, the matching index of `in` under trailing-dimension broadcasting.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> in_stride(r, 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t ia = in.size() - 1 - k;
        const std::size_t oa = r - 1 - k;
        in_stride[oa] = (in[ia] == 1) ? 0 : stride;
        stride *= in[ia];
    }
    const std::size_t n = numel(out);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        map[i] = off;
        for (std::size_t a = r; a-- > 0;) {
            ++idx[a];
            off += in_stride[a];
            if (idx[a] < out[a]) break;
            off -= in_stride[a] * idx[a];
            idx[a] = 0;
        }
    }
    return map;
}

struct AxisSplit {
    std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
    AxisSplit r{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA da, DB db) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const std::size_t n = numel(out_shape);
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(n);
    const bool same_a = a.shape() == out_shape;
    const bool same_b = b.shape() == out_shape;
    std::vector<std::size_t> ma, mb;
    if (!same_a) ma = broadcast_map(a.shape(), out_shape);
    if (!same_b) mb = broadcast_map(b.shape(), out_shape);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(av[same_a ? i : ma[i]], bv[same_b ? i : mb[i]]);
    }
    NodePtr pa = a.node_ptr(), pb = b.node_ptr();
    return make_result(out_shape, std::move(out), {&a, &b},
                       [pa, pb, ma = std::move(ma), mb = std::move(mb), da, db](Node& o) {
                           const auto& g = o.grad;
                           const auto& x = pa->value;
                           const auto& y = pb->value;
                           const bool sa = ma.empty(), sb = mb.empty();
                           const std::size_t n = g.size();
                           if (pa->requires_grad) {
                               std::vector<double> ga(x.size(), 0.0);
                               for (std::size_t i = 0; i < n; ++i) {
                                   const std::size_t ia = sa ? i : ma[i];
                                   const std::size_t ib = sb ? i : mb[i];
                                   ga[ia] += g[i] * da(x[ia], y[ib], o.value[i]);
                               }
                               pa->accumulate(ga);
                           }
                           if (pb->requires_grad) {
                               std::vector<double> gb(y.size(), 0.0);
                               for (std::size_t i = 0; i < n; ++i) {
                                   const std::size_t ia = sa ? i : ma[i];
                                   const std::size_t ib = sb ? i : mb[i];
                                   gb[ib] += g[i] * db(x[ia], y[ib], o.value[i]);
                               }
                               pb->accumulate(gb);
                           }
                       });
}

// `df(x, y)` is the derivative expressed through the input x and output y.
template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    NodePtr px = x.node_ptr();
    return make_result(x.shape(), std::move(out), {&x}, [px, df](Node& o) {
        std::vector<double> gx(o.grad.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = o.grad[i] * df(px->value[i], o.value[i]);
        px->accumulate(gx);
    });
}

double sigmoid_scalar(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

void Node::accumulate(std::span<const double> g) {
    if (grad.empty()) {
        grad.assign(g.begin(), g.end());
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

void Node::accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    grad[i] += g;
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<Node>()) {
    check_shape(shape);
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : node_(std::make_shared<Node>()) {
    check_shape(shape);
    if (numel(shape) != data.size()) {
        throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw ShapeError("axis out of range for " + to_string(shape()));
    return node_->shape[axis];
}

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
    if (node_->tape != nullptr) throw std::logic_error("values recorded on a tape are immutable");
    return node_->value;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (node_->frozen && on) throw std::logic_error("frozen tensor cannot require gradients");
    if (node_->tape != nullptr) throw std::logic_error("requires_grad is fixed for recorded tensors");
    node_->requires_grad = on;
    return *this;
}

bool Tensor::is_leaf() const { return node_->tape == nullptr; }
bool Tensor::on_tape() const { return node_->tape != nullptr; }

void Tensor::freeze() {
    node_->requires_grad = false;
    node_->frozen = true;
    node_->grad.clear();
}

bool Tensor::frozen() const { return node_->frozen; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

Tensor Tensor::clone() const {
    Tensor t(shape(), node_->value);
    t.node_->requires_grad = node_->requires_grad && node_->tape == nullptr;
    return t;
}

// ---------------------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
    clear();
    g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<Node> node) {
    node->tape = this;
    nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) throw ShapeError("backward requires a scalar loss");
    const double one = 1.0;
    backward(loss, std::span<const double>(&one, 1));
}

void Tape::backward(const Tensor& output, std::span<const double> seed) {
    if (!output.defined() || output.node()->tape != this) {
        throw std::logic_error("backward on a tensor that is not recorded on this tape");
    }
    if (seed.size() != output.size()) throw ShapeError("backward seed size mismatch");
    for (auto& n : nodes_) n->grad.clear();
    output.node()->accumulate(seed);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = *nodes_[i];
        if (n.grad.empty() || !n.backward) continue;
        n.backward(n);
    }
    for (auto& n : nodes_) {
        n->grad.clear();
        n->grad.shrink_to_fit();
    }
}

void Tape::clear() {
    for (auto& n : nodes_) {
        n->backward = nullptr;
        n->tape = nullptr;
        n->requires_grad = false;
        n->grad.clear();
    }
    nodes_.clear();
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

// ---------------------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
        const std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcast-compatible");
        }
        out[r - 1 - k] = std::max(ea, eb);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : b.data()) {
        if (v == 0.0) throw DomainError("division by zero");
    }
    return binary_op(
        a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double o) { return -o / y; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& x) {
    return unary_op(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
    return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw DomainError("log of non-positive value");
    }
    return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.data()) {
        if (v < 0.0) throw DomainError("sqrt of negative value");
    }
    // Subgradient 0 at the origin, where the derivative is unbounded.
    return unary_op(
        x, [](double v) { return std::sqrt(v); }, [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& x) {
    return unary_op(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor silu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v * sigmoid_scalar(v); },
        [](double v, double) {
            const double s = sigmoid_scalar(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor softplus(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) { return sigmoid_scalar(v); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary_op(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    NodePtr pa = a.node_ptr(), pb = b.node_ptr();
    return make_result({m, n}, std::move(out), {&a, &b}, [pa, pb, m, k, n](Node& o) {
        ConstMap g(o.grad.data(), m, n);
        if (pa->requires_grad) {
            std::vector<double> ga(m * k);
            MutMap(ga.data(), m, k).noalias() = g * ConstMap(pb->value.data(), k, n).transpose();
            pa->accumulate(ga);
        }
        if (pb->requires_grad) {
            std::vector<double> gb(k * n);
            MutMap(gb.data(), k, n).noalias() = ConstMap(pa->value.data(), m, k).transpose() * g;
            pb->accumulate(gb);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2) throw ShapeError("linear expects x[N,in] and w[out,in]");
    const std::size_t n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
    if (w.dim(1) != in) {
        throw ShapeError("linear input width " + std::to_string(in) + " does not match weight " + to_string(w.shape()));
    }
    const bool has_bias = b.defined();
    if (has_bias && (b.rank() != 1 || b.dim(0) != out_f)) throw ShapeError("linear bias shape mismatch");
    std::vector<double> out(n * out_f);
    MutMap y(out.data(), n, out_f);
    y.noalias() = ConstMap(x.data().data(), n, in) * ConstMap(w.data().data(), out_f, in).transpose();
    if (has_bias) {
        const auto bv = b.data();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < out_f; ++c) out[r * out_f + c] += bv[c];
    }
    NodePtr px = x.node_ptr(), pw = w.node_ptr(), pb = has_bias ? b.node_ptr() : nullptr;
    return make_result({n, out_f}, std::move(out), {&x, &w, &b}, [px, pw, pb, n, in, out_f](Node& o) {
        ConstMap g(o.grad.data(), n, out_f);
        if (px->requires_grad) {
            std::vector<double> gx(n * in);
            MutMap(gx.data(), n, in).noalias() = g * ConstMap(pw->value.data(), out_f, in);
            px->accumulate(gx);
        }
        if (pw->requires_grad) {
            std::vector<double> gw(out_f * in);
            MutMap(gw.data(), out_f, in).noalias() = g.transpose() * ConstMap(px->value.data(), n, in);
            pw->accumulate(gw);
        }
        if (pb && pb->requires_grad) {
            std::vector<double> gb(out_f, 0.0);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < out_f; ++c) gb[c] += o.grad[r * out_f + c];
            pb->accumulate(gb);
        }
    });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2");
    Shape s = x.shape();
    const std::size_t r = s.size();
    const std::size_t rows = s[r - 2], cols = s[r - 1];
    const std::size_t batch = x.size() / (rows * cols);
    std::swap(s[r - 2], s[r - 1]);
    const auto xv = x.data();
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out[b * rows * cols + j * rows + i] = xv[b * rows * cols + i * cols + j];
    NodePtr px = x.node_ptr();
    return make_result(s, std::move(out), {&x}, [px, batch, rows, cols](Node& o) {
        std::vector<double> gx(o.grad.size());
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    gx[b * rows * cols + i * cols + j] = o.grad[b * rows * cols + j * rows + i];
        px->accumulate(gx);
    });
}

namespace {

struct ConvGeom {
    std::size_t n, c, h, w, o, kh, kw, ph, pw, ho, wo;
    std::size_t col_rows() const { return c * kh * kw; }
    std::size_t col_cols() const { return ho * wo; }
};

void im2col(const ConvGeom& g, const double* x, double* col) {
    const std::size_t hw_out = g.ho * g.wo;
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((ci * g.kh + ki) * g.kw + kj) * hw_out;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy + ki) - static_cast<long>(g.ph);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(row + oy * g.wo, row + (oy + 1) * g.wo, 0.0);
                        continue;
                    }
                    const double* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox + kj) - static_cast<long>(g.pw);
                        row[oy * g.wo + ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeom& g, const double* col, double* x) {
    const std::size_t hw_out = g.ho * g.wo;
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const double* row = col + ((ci * g.kh + ki) * g.kw + kj) * hw_out;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy + ki) - static_cast<long>(g.ph);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox + kj) - static_cast<long>(g.pw);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

// x is [N,C,H,W]; w is [O,C,kh,kw].
Tensor conv_general(const Tensor& x, const Tensor& w, std::size_t ph, std::size_t pw, const Shape& out_shape) {
    ConvGeom g{};
    g.n = x.dim(0);
    g.c = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.o = w.dim(0);
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    g.ph = ph;
    g.pw = pw;
    if (g.h + 2 * ph < g.kh || g.w + 2 * pw < g.kw) {
        throw ShapeError("kernel " + to_string(w.shape()) + " larger than padded input " + to_string(x.shape()));
    }
    g.ho = g.h + 2 * ph - g.kh + 1;
    g.wo = g.w + 2 * pw - g.kw + 1;
    const std::size_t kr = g.col_rows(), kc = g.col_cols();
    const std::size_t in_sz = g.c * g.h * g.w, out_sz = g.o * kc;
    std::vector<double> out(g.n * out_sz);
    std::vector<double> col(kr * kc);
    ConstMap wm(w.data().data(), g.o, kr);
    for (std::size_t s = 0; s < g.n; ++s) {
        im2col(g, x.data().data() + s * in_sz, col.data());
        MutMap(out.data() + s * out_sz, g.o, kc).noalias() = wm * ConstMap(col.data(), kr, kc);
    }
    NodePtr px = x.node_ptr(), pwn = w.node_ptr();
    return make_result(out_shape, std::move(out), {&x, &w}, [px, pwn, g, in_sz, out_sz](Node& o) {
        const std::size_t kr = g.col_rows(), kc = g.col_cols();
        ConstMap wm(pwn->value.data(), g.o, kr);
        std::vector<double> col(kr * kc);
        std::vector<double> gw;
        std::vector<double> gx;
        if (pwn->requires_grad) gw.assign(g.o * kr, 0.0);
        if (px->requires_grad) gx.assign(g.n * in_sz, 0.0);
        for (std::size_t s = 0; s < g.n; ++s) {
            ConstMap gy(o.grad.data() + s * out_sz, g.o, kc);
            if (pwn->requires_grad) {
                im2col(g, px->value.data() + s * in_sz, col.data());
                MutMap(gw.data(), g.o, kr).noalias() += gy * ConstMap(col.data(), kr, kc).transpose();
            }
            if (px->requires_grad) {
                MutMap(col.data(), kr, kc).noalias() = wm.transpose() * gy;
                col2im(g, col.data(), gx.data() + s * in_sz);
            }
        }
        if (pwn->requires_grad) pwn->accumulate(gw);
        if (px->requires_grad) px->accumulate(gx);
    });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, Padding padding) {
    if (w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0) {
        throw ShapeError("conv2d weight must be [O,C,k,k] with odd k, got " + to_string(w.shape()));
    }
    const bool batched = x.rank() == 4;
    if (!batched && x.rank() != 3) throw ShapeError("conv2d input must be [C,H,W] or [N,C,H,W]");
    Tensor xb = batched ? x : reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    if (xb.dim(1) != w.dim(1)) {
        throw ShapeError("conv2d channel mismatch: input " + to_string(x.shape()) + ", weight " + to_string(w.shape()));
    }
    const std::size_t k = w.dim(2);
    const std::size_t p = padding == Padding::same ? k / 2 : 0;
    if (xb.dim(2) + 2 * p < k || xb.dim(3) + 2 * p < k) {
        throw ShapeError("kernel " + to_string(w.shape()) + " larger than padded input " + to_string(x.shape()));
    }
    const std::size_t ho = xb.dim(2) + 2 * p - k + 1, wo = xb.dim(3) + 2 * p - k + 1;
    Tensor y = conv_general(xb, w, p, p, {xb.dim(0), w.dim(0), ho, wo});
    return batched ? y : reshape(y, {w.dim(0), ho, wo});
}

Tensor conv1d(const Tensor& x, const Tensor& w, Padding padding) {
    if (w.rank() != 3 || w.dim(2) % 2 == 0) {
        throw ShapeError("conv1d weight must be [O,C,k] with odd k, got " + to_string(w.shape()));
    }
    const bool batched = x.rank() == 3;
    if (!batched && x.rank() != 2) throw ShapeError("conv1d input must be [C,L] or [N,C,L]");
    const std::size_t n = batched ? x.dim(0) : 1;
    const std::size_t c = batched ? x.dim(1) : x.dim(0);
    const std::size_t len = batched ? x.dim(2) : x.dim(1);
    if (c != w.dim(1)) {
        throw ShapeError("conv1d channel mismatch: input " + to_string(x.shape()) + ", weight " + to_string(w.shape()));
    }
    const std::size_t k = w.dim(2);
    const std::size_t p = padding == Padding::same ? k / 2 : 0;
    if (len + 2 * p < k) {
        throw ShapeError("kernel " + to_string(w.shape()) + " larger than padded input " + to_string(x.shape()));
    }
    const std::size_t lo = len + 2 * p - k + 1;
    Tensor y = conv_general(reshape(x, {n, c, 1, len}), reshape(w, {w.dim(0), c, 1, k}), 0, p, {n, w.dim(0), 1, lo});
    return batched ? reshape(y, {n, w.dim(0), lo}) : reshape(y, {w.dim(0), lo});
}

Tensor avg_pool2(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("avg_pool2 needs rank >= 2");
    Shape s = x.shape();
    const std::size_t r = s.size();
    const std::size_t h = s[r - 2], w = s[r - 1];
    if (h % 2 || w % 2) throw ShapeError("avg_pool2 needs even spatial extents, got " + to_string(s));
    const std::size_t planes = x.size() / (h * w), ho = h / 2, wo = w / 2;
    s[r - 2] = ho;
    s[r - 1] = wo;
    const auto xv = x.data();
    std::vector<double> out(planes * ho * wo);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const double* b = xv.data() + p * h * w + 2 * i * w + 2 * j;
                out[(p * ho + i) * wo + j] = 0.25 * (b[0] + b[1] + b[w] + b[w + 1]);
            }
    NodePtr px = x.node_ptr();
    return make_result(s, std::move(out), {&x}, [px, planes, h, w, ho, wo](Node& o) {
        std::vector<double> gx(planes * h * w);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const double g = 0.25 * o.grad[(p * ho + i) * wo + j];
                    double* b = gx.data() + p * h * w + 2 * i * w + 2 * j;
                    b[0] = g;
                    b[1] = g;
                    b[w] = g;
                    b[w + 1] = g;
                }
        px->accumulate(gx);
    });
}

Tensor upsample2(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("upsample2 needs rank >= 2");
    Shape s = x.shape();
    const std::size_t r = s.size();
    const std::size_t h = s[r - 2], w = s[r - 1];
    const std::size_t planes = x.size() / (h * w), ho = 2 * h, wo = 2 * w;
    s[r - 2] = ho;
    s[r - 1] = wo;
    const auto xv = x.data();
    std::vector<double> out(planes * ho * wo);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) out[(p * ho + i) * wo + j] = xv[(p * h + i / 2) * w + j / 2];
    NodePtr px = x.node_ptr();
    return make_result(s, std::move(out), {&x}, [px, planes, h, w, ho, wo](Node& o) {
        std::vector<double> gx(planes * h * w, 0.0);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) gx[(p * h + i / 2) * w + j / 2] += o.grad[(p * ho + i) * wo + j];
        px->accumulate(gx);
    });
}

Tensor pad2d(const Tensor& x, std::size_t top, std::size_t left, std::size_t bottom, std::size_t right) {
    if (x.rank() < 2) throw ShapeError("pad2d needs rank >= 2");
    Shape s = x.shape();
    const std::size_t r = s.size();
    const std::size_t h = s[r - 2], w = s[r - 1];
    const std::size_t planes = x.size() / (h * w), ho = h + top + bottom, wo = w + left + right;
    s[r - 2] = ho;
    s[r - 1] = wo;
    const auto xv = x.data();
    std::vector<double> out(planes * ho * wo, 0.0);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
            std::copy_n(xv.data() + (p * h + i) * w, w, out.data() + (p * ho + i + top) * wo + left);
    NodePtr px = x.node_ptr();
    return make_result(s, std::move(out), {&x}, [px, planes, h, w, ho, wo, top, left](Node& o) {
        std::vector<double> gx(planes * h * w);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < h; ++i)
                std::copy_n(o.grad.data() + (p * ho + i + top) * wo + left, w, gx.data() + (p * h + i) * w);
        px->accumulate(gx);
    });
}

// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    check_shape(shape);
    if (numel(shape) != x.size()) {
        throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    NodePtr px = x.node_ptr();
    return make_result(std::move(shape), std::move(out), {&x}, [px](Node& o) { px->accumulate(o.grad); });
}

Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices) {
    const AxisSplit sp = split_axis(x.shape(), axis);
    if (indices.empty()) throw ShapeError("index_select with no indices");
    for (auto i : indices) {
        if (i >= sp.n) throw ShapeError("index " + std::to_string(i) + " out of range on axis of extent " + std::to_string(sp.n));
    }
    Shape s = x.shape();
    s[axis] = indices.size();
    const std::size_t m = indices.size();
    const auto xv = x.data();
    std::vector<double> out(sp.outer * m * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < m; ++k)
            std::copy_n(xv.data() + (o * sp.n + indices[k]) * sp.inner, sp.inner, out.data() + (o * m + k) * sp.inner);
    NodePtr px = x.node_ptr();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_result(s, std::move(out), {&x}, [px, sp, idx = std::move(idx)](Node& o) {
        const std::size_t m = idx.size();
        std::vector<double> gx(px->value.size(), 0.0);
        for (std::size_t ou = 0; ou < sp.outer; ++ou)
            for (std::size_t k = 0; k < m; ++k)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    gx[(ou * sp.n + idx[k]) * sp.inner + i] += o.grad[(ou * m + k) * sp.inner + i];
        px->accumulate(gx);
    });
}

Tensor element(const Tensor& x, std::size_t flat_index) {
    if (flat_index >= x.size()) throw ShapeError("element index out of range");
    NodePtr px = x.node_ptr();
    return make_result({}, {x[flat_index]}, {&x}, [px, flat_index](Node& o) { px->accumulate(flat_index, o.grad[0]); });
}

Tensor reduce(const Tensor& x, Reduce kind, std::vector<std::size_t> axes, bool keepdims) {
    if (axes.empty()) throw ShapeError("reduce needs at least one axis");
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    Shape keep = x.shape();
    for (auto a : axes) {
        if (a >= keep.size()) throw ShapeError("reduce axis out of range for " + to_string(x.shape()));
        keep[a] = 1;
    }
    const std::size_t count = x.size() / numel(keep);
    if (count == 0) throw ShapeError("empty reduction extent");
    const auto map = broadcast_map(keep, x.shape());
    const auto xv = x.data();
    const std::size_t m = numel(keep);
    std::vector<double> acc(m, 0.0);
    for (std::size_t i = 0; i < xv.size(); ++i) acc[map[i]] += xv[i];
    std::vector<double> mu;
    if (kind != Reduce::sum) {
        for (auto& v : acc) v /= static_cast<double>(count);
    }
    if (kind == Reduce::var) {
        mu = acc;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double d = xv[i] - mu[map[i]];
            acc[map[i]] += d * d;
        }
        for (auto& v : acc) v /= static_cast<double>(count);
    }
    Shape out_shape;
    if (keepdims) {
        out_shape = keep;
    } else {
        for (std::size_t a = 0; a < keep.size(); ++a) {
            if (!std::binary_search(axes.begin(), axes.end(), a)) out_shape.push_back(keep[a]);
        }
    }
    NodePtr px = x.node_ptr();
    return make_result(out_shape, std::move(acc), {&x}, [px, kind, map, mu = std::move(mu), count](Node& o) {
        const auto& xv = px->value;
        std::vector<double> gx(xv.size());
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double g = o.grad[map[i]];
            switch (kind) {
                case Reduce::sum: gx[i] = g; break;
                case Reduce::mean: gx[i] = g * inv; break;
                case Reduce::var: gx[i] = g * 2.0 * (xv[i] - mu[map[i]]) * inv; break;
            }
        }
        px->accumulate(gx);
    });
}

Tensor sum(const Tensor& x) {
    if (x.rank() == 0) return reshape(x, {});
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(x, Reduce::sum, axes);
}

Tensor mean(const Tensor& x) {
    if (x.rank() == 0) return reshape(x, {});
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(x, Reduce::mean, axes);
}

namespace {

Shape drop_axis(Shape s, std::size_t axis) {
    s.erase(s.begin() + static_cast<long>(axis));
    return s;
}

// Row-wise softmax along the split axis; writes max-shifted probabilities and per-row log-sum-exp.
void softmax_rows(const AxisSplit& sp, std::span<const double> x, std::vector<double>& p, std::vector<double>& lse) {
    p.resize(x.size());
    lse.resize(sp.outer * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            double mx = -INFINITY;
            for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, x[base + k * sp.inner]);
            double s = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) {
                const double e = std::exp(x[base + k * sp.inner] - mx);
                p[base + k * sp.inner] = e;
                s += e;
            }
            for (std::size_t k = 0; k < sp.n; ++k) p[base + k * sp.inner] /= s;
            lse[o * sp.inner + i] = mx + std::log(s);
        }
}

}  // namespace

Tensor logsumexp(const Tensor& x, std::size_t axis) {
    const AxisSplit sp = split_axis(x.shape(), axis);
    std::vector<double> p, lse;
    softmax_rows(sp, x.data(), p, lse);
    NodePtr px = x.node_ptr();
    return make_result(drop_axis(x.shape(), axis), std::move(lse), {&x}, [px, sp, p = std::move(p)](Node& o) {
        std::vector<double> gx(p.size());
        for (std::size_t ou = 0; ou < sp.outer; ++ou)
            for (std::size_t k = 0; k < sp.n; ++k)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t idx = (ou * sp.n + k) * sp.inner + i;
                    gx[idx] = o.grad[ou * sp.inner + i] * p[idx];
                }
        px->accumulate(gx);
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisSplit sp = split_axis(x.shape(), axis);
    std::vector<double> p, lse;
    softmax_rows(sp, x.data(), p, lse);
    NodePtr px = x.node_ptr();
    return make_result(x.shape(), std::move(p), {&x}, [px, sp](Node& o) {
        const auto& y = o.value;
        std::vector<double> gx(y.size());
        for (std::size_t ou = 0; ou < sp.outer; ++ou)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = ou * sp.n * sp.inner + i;
                double dot = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) dot += o.grad[base + k * sp.inner] * y[base + k * sp.inner];
                for (std::size_t k = 0; k < sp.n; ++k) {
                    const std::size_t idx = base + k * sp.inner;
                    gx[idx] = y[idx] * (o.grad[idx] - dot);
                }
            }
        px->accumulate(gx);
    });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const AxisSplit sp = split_axis(x.shape(), axis);
    std::vector<double> p, lse;
    softmax_rows(sp, x.data(), p, lse);
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t ou = 0; ou < sp.outer; ++ou)
        for (std::size_t k = 0; k < sp.n; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t idx = (ou * sp.n + k) * sp.inner + i;
                out[idx] = xv[idx] - lse[ou * sp.inner + i];
            }
    NodePtr px = x.node_ptr();
    return make_result(x.shape(), std::move(out), {&x}, [px, sp, p = std::move(p)](Node& o) {
        std::vector<double> gx(p.size());
        for (std::size_t ou = 0; ou < sp.outer; ++ou)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = ou * sp.n * sp.inner + i;
                double s = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) s += o.grad[base + k * sp.inner];
                for (std::size_t k = 0; k < sp.n; ++k) {
                    const std::size_t idx = base + k * sp.inner;
                    gx[idx] = o.grad[idx] - p[idx] * s;
                }
            }
        px->accumulate(gx);
    });
}

// ---------------------------------------------------------------------------

Tensor checkpoint(const SegmentFn& fn, std::vector<Tensor> inputs) {
    Tape* tape = Tape::active();
    if (tape == nullptr) return fn(inputs);
    Tensor out;
    {
        NoGradGuard guard;
        out = fn(inputs);
    }
    auto node = std::make_shared<Node>();
    node->shape = out.shape();
    node->value.assign(out.data().begin(), out.data().end());
    node->requires_grad = true;
    node->backward = [fn, inputs = std::move(inputs)](Node& o) {
        Tape nested;
        Tensor recomputed = fn(inputs);
        ++g_recomputes;
        if (!recomputed.on_tape()) return;
        nested.backward(recomputed, o.grad);
    };
    tape->record(node);
    return Tensor(node);
}

std::size_t checkpoint_recompute_count() { return g_recomputes; }

// ---------------------------------------------------------------------------

double grad_check(const ScalarFn& f, Tensor x, double h) { return grad_check(f, std::vector<Tensor>{std::move(x)}, h, 0); }

double grad_check(const ScalarFn& f, std::vector<Tensor> xs, double h, std::size_t max_coords) {
    for (auto& x : xs) {
        if (!x.is_leaf() || !x.requires_grad()) throw std::invalid_argument("grad_check needs leaves that require grad");
        x.zero_grad();
    }
    {
        Tape tape;
        Tensor y = f();
        if (y.size() != 1) throw ShapeError("grad_check needs a scalar-valued function, got " + to_string(y.shape()));
        tape.backward(y);
    }
    std::vector<std::vector<double>> analytic;
    for (auto& x : xs) {
        analytic.emplace_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                           : std::vector<double>(x.size(), 0.0));
    }
    NoGradGuard guard;
    double worst = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        auto v = xs[t].mutable_data();
        const std::size_t n = v.size();
        const std::size_t probes = (max_coords == 0 || max_coords >= n) ? n : max_coords;
        for (std::size_t p = 0; p < probes; ++p) {
            const std::size_t i = probes == n ? p : (p * n) / probes;
            const double orig = v[i];
            v[i] = orig + h;
            const double fp = f().item();
            v[i] = orig - h;
            const double fm = f().item();
            v[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[t][i];
            worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

std::uint64_t get_le(std::istream& in, int bytes) {
    unsigned char b[8] = {};
    in.read(reinterpret_cast<char*>(b), bytes);
    if (!in) throw std::runtime_error("truncated HYNT stream");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_hynt(std::ostream& out, const Tensor& t) {
    out.write("HYNT", 4);
    put_u32(out, kHyntVersion);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u64(out, e);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

Tensor read_hynt(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "HYNT", 4) != 0) throw std::runtime_error("bad HYNT magic");
    const auto version = static_cast<std::uint32_t>(get_le(in, 4));
    if (version != kHyntVersion) throw std::runtime_error("unsupported HYNT version " + std::to_string(version));
    const auto rank = static_cast<std::uint32_t>(get_le(in, 4));
    Shape shape(rank);
    for (auto& e : shape) e = get_le(in, 8);
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(get_le(in, 8));
    return Tensor(std::move(shape), std::move(data));
}

void save_hynt(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    write_hynt(f, t);
}

Tensor load_hynt(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return read_hynt(f);
}

std::uint64_t hash_tensors(std::span<const Tensor> tensors) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xFF;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& t : tensors) {
        mix(t.rank());
        for (auto e : t.shape()) mix(e);
        for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
    }
    return h;
}

}  // namespace hynea
