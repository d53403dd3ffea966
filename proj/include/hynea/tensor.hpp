#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hynea {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class Tape;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
    bool frozen = false;
    const Tape* tape = nullptr;
    // Reads this node's grad and accumulates into the inputs it captured.
    std::function<void(Node&)> backward;

    void accumulate(std::span<const double> g);
    void accumulate(std::size_t i, double g);
};

}  // namespace detail

/// Dense row-major array of doubles with an optional place in the active
/// differentiation tape. Copies are shallow handles onto the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t dim(std::size_t axis) const;

    std::span<const double> data() const;
    // Mutable access is only for leaves; values owned by the tape are immutable.
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;
    bool on_tape() const;

    /// Marks the tensor as an immutable model weight: no gradient, no updates.
    void freeze();
    bool frozen() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    Tensor detach() const;
    Tensor clone() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Wengert list of executed operations. Constructing a tape makes it the
/// active tape of the calling thread until it is destroyed.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::shared_ptr<detail::Node> node);
    void backward(const Tensor& loss);
    void backward(const Tensor& output, std::span<const double> seed);
    std::size_t size() const { return nodes_.size(); }
    void clear();

    static Tape* active();

private:
    friend class NoGradGuard;
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    Tape* previous_ = nullptr;
};

/// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* saved_;
};

// ---------------------------------------------------------------------------
// Elementwise and broadcasting arithmetic

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);   // DomainError on non-positive input
Tensor sqrt(const Tensor& x);  // DomainError on negative input
Tensor square(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---------------------------------------------------------------------------
// Linear algebra and convolution

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[N, in] . w[out, in]^T + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& x);  // swaps the last two axes

enum class Padding { same, valid };

/// Stride-1 cross-correlation. x is [C,H,W] or [N,C,H,W]; w is [O,C,k,k], k odd.
Tensor conv2d(const Tensor& x, const Tensor& w, Padding padding = Padding::same);
/// x is [C,L] or [N,C,L]; w is [O,C,k].
Tensor conv1d(const Tensor& x, const Tensor& w, Padding padding = Padding::valid);

Tensor avg_pool2(const Tensor& x);
Tensor upsample2(const Tensor& x);
Tensor pad2d(const Tensor& x, std::size_t top, std::size_t left, std::size_t bottom, std::size_t right);

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

Tensor reshape(const Tensor& x, Shape shape);
Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices);
Tensor element(const Tensor& x, std::size_t flat_index);

enum class Reduce { sum, mean, var };

Tensor reduce(const Tensor& x, Reduce kind, std::vector<std::size_t> axes, bool keepdims = false);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor logsumexp(const Tensor& x, std::size_t axis);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// ---------------------------------------------------------------------------
// Gradient checkpointing

using SegmentFn = std::function<Tensor(std::span<const Tensor>)>;

/// Runs `fn` without recording its intermediates. During the backward sweep
/// the segment is recomputed once on a nested tape and differentiated there;
/// gradients flow to `inputs` and to any tensors `fn` captures.
Tensor checkpoint(const SegmentFn& fn, std::vector<Tensor> inputs);

/// Number of checkpoint recomputations performed on this thread.
std::size_t checkpoint_recompute_count();

// ---------------------------------------------------------------------------
// Finite-difference gradient verification

using ScalarFn = std::function<Tensor()>;

/// max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// `f` must read `x` (a leaf) and return a scalar.
double grad_check(const ScalarFn& f, Tensor x, double h = 1e-3);
/// Same over several leaves; when max_coords > 0 only that many coordinates
/// (evenly spaced) of each leaf are probed.
double grad_check(const ScalarFn& f, std::vector<Tensor> xs, double h, std::size_t max_coords);

// ---------------------------------------------------------------------------
// HYNT binary tensor format

inline constexpr std::uint32_t kHyntVersion = 1;

void write_hynt(std::ostream& out, const Tensor& t);
Tensor read_hynt(std::istream& in);
void save_hynt(const std::string& path, const Tensor& t);
Tensor load_hynt(const std::string& path);

/// FNV-1a over the raw bytes of every tensor's values (shape included).
std::uint64_t hash_tensors(std::span<const Tensor> tensors);

}  // namespace hynea
