#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace paq {

using Shape = std::vector<int>;

inline long long numel(const Shape& s) {
    long long n = 1;
    for (int e : s) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
    return r + "]";
}

// Dense row-major tensor, rank <= 3. Shared-handle semantics so tape ops can
// accumulate gradients into the same storage the caller holds.
class Tensor {
    struct Node {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;  // lazily allocated, same length as data
        bool requires_grad = false;
    };
    std::shared_ptr<Node> n_;

public:
    Tensor() : n_(std::make_shared<Node>()) { n_->shape = {1}; n_->data = {0.0}; }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.n_->shape = std::move(shape);
        t.n_->data.assign(static_cast<size_t>(numel(t.n_->shape)), 0.0);
        t.n_->requires_grad = requires_grad;
        return t;
    }
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        Tensor t;
        if (static_cast<long long>(data.size()) != numel(shape))
            throw std::invalid_argument("data length does not match shape " + shape_str(shape));
        t.n_->shape = std::move(shape);
        t.n_->data = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    const Shape& shape() const { return n_->shape; }
    int extent(int i) const { return n_->shape.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    size_t size() const { return n_->data.size(); }

    std::vector<double>& data() { return n_->data; }
    const std::vector<double>& data() const { return n_->data; }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }

    bool has_grad() const { return !n_->grad.empty(); }
    std::vector<double>& grad() {
        if (n_->grad.empty()) n_->grad.assign(n_->data.size(), 0.0);
        return n_->grad;
    }
    const std::vector<double>& grad() const {
        const_cast<Tensor*>(this)->grad();
        return n_->grad;
    }
    void zero_grad() { n_->grad.assign(n_->data.size(), 0.0); }

    double item() const {
        if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
        return n_->data[0];
    }
    double at(int i) const { return n_->data[static_cast<size_t>(i)]; }
    double at(int i, int j) const {
        return n_->data[static_cast<size_t>(i) * extent(1) + j];
    }
    double& at(int i, int j) {
        return n_->data[static_cast<size_t>(i) * extent(1) + j];
    }

    bool same_node(const Tensor& o) const { return n_ == o.n_; }

    bool all_finite() const {
        for (double v : n_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Per-forward-pass record of operations. Constructing a Tape makes it the
// active tape for the current thread; destruction restores the previous one.
// Backward replays the op list in reverse, so topological order holds by
// construction and each node's rule fires exactly once.
class Tape {
    struct Op {
        Tensor out;
        std::function<void()> backward;
    };
    std::vector<Op> ops_;
    Tape* prev_;

    static Tape*& active_slot() {
        thread_local Tape* active = nullptr;
        return active;
    }

public:
    Tape() : prev_(active_slot()) { active_slot() = this; }
    ~Tape() { active_slot() = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_slot(); }

    void record(Tensor out, std::function<void()> backward) {
        ops_.push_back({std::move(out), std::move(backward)});
    }
    size_t num_ops() const { return ops_.size(); }

    void backward(const Tensor& loss) {
        if (loss.size() != 1)
            throw std::invalid_argument("backward requires a scalar loss");
        loss.grad();  // materialize
        const_cast<Tensor&>(loss).grad()[0] += 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it)
            it->backward();
    }
};

namespace detail {

// Output participates in the graph if a tape is active and any input needs grad.
inline bool tracked(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

inline void record(Tensor& out, std::initializer_list<const Tensor*> inputs,
                   std::function<void()> backward) {
    if (tracked(inputs)) {
        out.set_requires_grad(true);
        Tape::active()->record(out, std::move(backward));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- matrix ops ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " * " + shape_str(b.shape()));
    const int r = a.extent(0), k = a.extent(1), c = b.extent(1);
    Tensor y = Tensor::zeros({r, c});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* py = y.data().data();
    for (int i = 0; i < r; ++i)
        for (int t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            if (av == 0.0) continue;
            for (int j = 0; j < c; ++j) py[i * c + j] += av * pb[t * c + j];
        }
    detail::record(y, {&a, &b}, [a = a, b = b, y = y, r, k, c]() mutable {
        const auto& g = y.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (int i = 0; i < r; ++i)
                for (int t = 0; t < k; ++t) {
                    double s = 0;
                    for (int j = 0; j < c; ++j) s += g[i * c + j] * b.data()[t * c + j];
                    ga[i * k + t] += s;
                }
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < c; ++j) {
                    double s = 0;
                    for (int i = 0; i < r; ++i) s += a.data()[i * k + t] * g[i * c + j];
                    gb[t * c + j] += s;
                }
        }
    });
    return y;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
    const int r = a.extent(0), c = a.extent(1);
    Tensor y = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y.at(j, i) = a.at(i, j);
    detail::record(y, {&a}, [a = a, y = y, r, c]() mutable {
        auto& ga = a.grad();
        const auto& g = y.grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
    return y;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != static_cast<long long>(a.size()))
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor y = Tensor::from(std::move(shape), a.data());
    detail::record(y, {&a}, [a = a, y = y]() mutable {
        auto& ga = a.grad();
        const auto& g = y.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return y;
}

inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 only");
    const int r = x.extent(0), c = x.extent(1);
    Tensor y = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i) {
        double mx = x.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, x.at(i, j));
        double z = 0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(x.at(i, j) - mx);
            y.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < c; ++j) y.at(i, j) /= z;
    }
    detail::record(y, {&x}, [x = x, y = y, r, c]() mutable {
        auto& gx = x.grad();
        const auto& g = y.grad();
        for (int i = 0; i < r; ++i) {
            double dot = 0;
            for (int j = 0; j < c; ++j) dot += g[i * c + j] * y.at(i, j);
            for (int j = 0; j < c; ++j)
                gx[i * c + j] += y.at(i, j) * (g[i * c + j] - dot);
        }
    });
    return y;
}

// ---- elementwise binary ----

namespace detail {

template <class Fwd, class Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, name);
    Tensor y = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) y.data()[i] = fwd(a.data()[i], b.data()[i]);
    record(y, {&a, &b}, [a = a, b = b, y = y, bwd]() mutable {
        const auto& g = y.grad();
        for (size_t i = 0; i < g.size(); ++i) {
            auto [da, db] = bwd(a.data()[i], b.data()[i], y.data()[i]);
            if (a.requires_grad()) a.grad()[i] += da * g[i];
            if (b.requires_grad()) b.grad()[i] += db * g[i];
        }
    });
    return y;
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
    Tensor y = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) y.data()[i] = fwd(a.data()[i]);
    record(y, {&a}, [a = a, y = y, bwd]() mutable {
        auto& ga = a.grad();
        const auto& g = y.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += bwd(a.data()[i], y.data()[i]) * g[i];
    });
    return y;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op("add", a, b, [](double x, double y) { return x + y; },
                             [](double, double, double) { return std::pair{1.0, 1.0}; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op("sub", a, b, [](double x, double y) { return x - y; },
                             [](double, double, double) { return std::pair{1.0, -1.0}; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op("mul", a, b, [](double x, double y) { return x * y; },
                             [](double x, double y, double) { return std::pair{y, x}; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op("div", a, b, [](double x, double y) { return x / y; },
                             [](double x, double y, double) {
                                 return std::pair{1.0 / y, -x / (y * y)};
                             });
}
// min/max route the gradient to the winning operand; ties go to `a`.
inline Tensor vmin(const Tensor& a, const Tensor& b) {
    return detail::binary_op("vmin", a, b,
                             [](double x, double y) { return x <= y ? x : y; },
                             [](double x, double y, double) {
                                 return x <= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
                             });
}
inline Tensor vmax(const Tensor& a, const Tensor& b) {
    return detail::binary_op("vmax", a, b,
                             [](double x, double y) { return x >= y ? x : y; },
                             [](double x, double y, double) {
                                 return x >= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
                             });
}

// ---- elementwise unary ----

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary_op(a, [c](double x) { return c * x; },
                            [c](double, double) { return c; });
}
inline Tensor add_const(const Tensor& a, double c) {
    return detail::unary_op(a, [c](double x) { return x + c; },
                            [](double, double) { return 1.0; });
}
inline Tensor relu(const Tensor& a) {
    // subgradient 0 at the origin
    return detail::unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                            [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(a,
                            [](double x) {
                                return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                              : std::exp(x) / (1.0 + std::exp(x));
                            },
                            [](double, double y) { return y * (1.0 - y); });
}
inline Tensor abs_t(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::abs(x); },
                            [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
inline Tensor pow_t(const Tensor& a, double e) {
    return detail::unary_op(a, [e](double x) { return std::pow(x, e); },
                            [e](double x, double) { return x == 0.0 ? 0.0 : e * std::pow(x, e - 1.0); });
}
// Clamped below at 1e-12 so cross-entropy terms stay finite under underflow.
inline Tensor log_t(const Tensor& a) {
    static constexpr double kFloor = 1e-12;
    return detail::unary_op(a, [](double x) { return std::log(std::max(x, kFloor)); },
                            [](double x, double) { return 1.0 / std::max(x, kFloor); });
}

// ---- reductions / picks ----

inline Tensor sum_all(const Tensor& a) {
    Tensor y = Tensor::scalar(std::accumulate(a.data().begin(), a.data().end(), 0.0));
    detail::record(y, {&a}, [a = a, y = y]() mutable {
        auto& ga = a.grad();
        const double g = y.grad()[0];
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
    return y;
}
inline Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    Tensor y = Tensor::scalar(std::accumulate(a.data().begin(), a.data().end(), 0.0) * inv);
    detail::record(y, {&a}, [a = a, y = y, inv]() mutable {
        auto& ga = a.grad();
        const double g = y.grad()[0] * inv;
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
    return y;
}
// Column means of an r x c matrix, returned as 1 x c.
inline Tensor mean_rows(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("mean_rows: rank-2 only");
    const int r = a.extent(0), c = a.extent(1);
    Tensor y = Tensor::zeros({1, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y.data()[static_cast<size_t>(j)] += a.at(i, j);
    for (int j = 0; j < c; ++j) y.data()[static_cast<size_t>(j)] /= r;
    detail::record(y, {&a}, [a = a, y = y, r, c]() mutable {
        auto& ga = a.grad();
        const auto& g = y.grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(j)] / r;
    });
    return y;
}

inline Tensor pick(const Tensor& a, int flat_index) {
    if (flat_index < 0 || static_cast<size_t>(flat_index) >= a.size())
        throw std::invalid_argument("pick: index out of range");
    Tensor y = Tensor::scalar(a.data()[static_cast<size_t>(flat_index)]);
    detail::record(y, {&a}, [a = a, y = y, flat_index]() mutable {
        a.grad()[static_cast<size_t>(flat_index)] += y.grad()[0];
    });
    return y;
}
inline Tensor pick(const Tensor& a, int i, int j) { return pick(a, i * a.extent(1) + j); }

// ---- row/column broadcasts ----

// Broadcast-add a scalar tensor (size 1) to every element.
inline Tensor add_scalar_t(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw std::invalid_argument("add_scalar_t: s must be scalar");
    Tensor y = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) y.data()[i] = a.data()[i] + s.data()[0];
    detail::record(y, {&a, &s}, [a = a, s = s, y = y]() mutable {
        const auto& g = y.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (s.requires_grad()) {
            double sum = 0;
            for (double v : g) sum += v;
            s.grad()[0] += sum;
        }
    });
    return y;
}

inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || v.rank() != 2 || v.extent(0) != 1 || v.extent(1) != a.extent(1))
        throw std::invalid_argument("add_rowvec: expects r x c and 1 x c");
    const int r = a.extent(0), c = a.extent(1);
    Tensor y = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y.at(i, j) = a.at(i, j) + v.at(0, j);
    detail::record(y, {&a, &v}, [a = a, v = v, y = y, r, c]() mutable {
        const auto& g = y.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        }
        if (v.requires_grad()) {
            auto& gv = v.grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * c + j];
        }
    });
    return y;
}

inline Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || v.rank() != 2 || v.extent(0) != 1 || v.extent(1) != a.extent(1))
        throw std::invalid_argument("mul_rowvec: expects r x c and 1 x c");
    const int r = a.extent(0), c = a.extent(1);
    Tensor y = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y.at(i, j) = a.at(i, j) * v.at(0, j);
    detail::record(y, {&a, &v}, [a = a, v = v, y = y, r, c]() mutable {
        const auto& g = y.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(i) * c + j] * v.at(0, j);
        }
        if (v.requires_grad()) {
            auto& gv = v.grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * c + j] * a.at(i, j);
        }
    });
    return y;
}

inline Tensor mul_colvec(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || v.rank() != 2 || v.extent(1) != 1 || v.extent(0) != a.extent(0))
        throw std::invalid_argument("mul_colvec: expects r x c and r x 1");
    const int r = a.extent(0), c = a.extent(1);
    Tensor y = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y.at(i, j) = a.at(i, j) * v.at(i, 0);
    detail::record(y, {&a, &v}, [a = a, v = v, y = y, r, c]() mutable {
        const auto& g = y.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(i) * c + j] * v.at(i, 0);
        }
        if (v.requires_grad()) {
            auto& gv = v.grad();
            for (int i = 0; i < r; ++i) {
                double s = 0;
                for (int j = 0; j < c; ++j) s += g[static_cast<size_t>(i) * c + j] * a.at(i, j);
                gv[static_cast<size_t>(i)] += s;
            }
        }
    });
    return y;
}

// ---- row normalization / similarity ----

inline Tensor l2_normalize_rows(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("l2_normalize_rows: rank-2 only");
    constexpr double kEps = 1e-12;
    const int r = a.extent(0), c = a.extent(1);
    Tensor y = Tensor::zeros({r, c});
    std::vector<double> norms(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        double s = 0;
        for (int j = 0; j < c; ++j) s += a.at(i, j) * a.at(i, j);
        norms[static_cast<size_t>(i)] = std::max(std::sqrt(s), kEps);
        for (int j = 0; j < c; ++j) y.at(i, j) = a.at(i, j) / norms[static_cast<size_t>(i)];
    }
    detail::record(y, {&a}, [a = a, y = y, r, c, norms]() mutable {
        auto& ga = a.grad();
        const auto& g = y.grad();
        for (int i = 0; i < r; ++i) {
            double dot = 0;
            for (int j = 0; j < c; ++j) dot += g[static_cast<size_t>(i) * c + j] * y.at(i, j);
            const double inv = 1.0 / norms[static_cast<size_t>(i)];
            for (int j = 0; j < c; ++j)
                ga[static_cast<size_t>(i) * c + j] += inv * (g[static_cast<size_t>(i) * c + j] - dot * y.at(i, j));
        }
    });
    return y;
}

// Cosine similarity between rows i and j of a matrix, as a scalar tensor.
inline Tensor cosine_rows(const Tensor& a, int i, int j) {
    if (a.rank() != 2) throw std::invalid_argument("cosine_rows: rank-2 only");
    const int c = a.extent(1);
    Tensor n = l2_normalize_rows(a);
    Tensor y = Tensor::scalar(0.0);
    double s = 0;
    for (int t = 0; t < c; ++t) s += n.at(i, t) * n.at(j, t);
    y.data()[0] = s;
    detail::record(y, {&n}, [n = n, y = y, i, j, c]() mutable {
        auto& gn = n.grad();
        const double g = y.grad()[0];
        for (int t = 0; t < c; ++t) {
            gn[static_cast<size_t>(i) * c + t] += g * n.at(j, t);
            gn[static_cast<size_t>(j) * c + t] += g * n.at(i, t);
        }
    });
    return y;
}

// ---- feature-map ops (rank-3, h x w x d) ----

inline Tensor nearest_upsample2x(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("nearest_upsample2x: rank-3 only");
    const int h = x.extent(0), w = x.extent(1), d = x.extent(2);
    Tensor y = Tensor::zeros({2 * h, 2 * w, d});
    auto idx = [](int H, int W, int D, int i, int j, int k) {
        return (static_cast<size_t>(i) * W + j) * D + k;
    };
    for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j)
            for (int k = 0; k < d; ++k)
                y.data()[idx(2 * h, 2 * w, d, i, j, k)] = x.data()[idx(h, w, d, i / 2, j / 2, k)];
    detail::record(y, {&x}, [x = x, y = y, h, w, d, idx]() mutable {
        auto& gx = x.grad();
        const auto& g = y.grad();
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j)
                for (int k = 0; k < d; ++k)
                    gx[idx(h, w, d, i / 2, j / 2, k)] += g[idx(2 * h, 2 * w, d, i, j, k)];
    });
    return y;
}

// 3x3 dilation-2 stencil with per-tap, per-channel weights (9 x d), zero padding.
inline Tensor dilated_stencil(const Tensor& x, const Tensor& w) {
    if (x.rank() != 3) throw std::invalid_argument("dilated_stencil: rank-3 input");
    if (w.rank() != 2 || w.extent(0) != 9 || w.extent(1) != x.extent(2))
        throw std::invalid_argument("dilated_stencil: weights must be 9 x d");
    const int h = x.extent(0), ww = x.extent(1), d = x.extent(2);
    static constexpr int off[9][2] = {{-2, -2}, {-2, 0}, {-2, 2}, {0, -2}, {0, 0},
                                      {0, 2},  {2, -2}, {2, 0},  {2, 2}};
    Tensor y = Tensor::zeros({h, ww, d});
    auto idx = [ww, d](int i, int j, int k) { return (static_cast<size_t>(i) * ww + j) * d + k; };
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < ww; ++j)
            for (int t = 0; t < 9; ++t) {
                const int ii = i + off[t][0], jj = j + off[t][1];
                if (ii < 0 || ii >= h || jj < 0 || jj >= ww) continue;
                for (int k = 0; k < d; ++k)
                    y.data()[idx(i, j, k)] += w.at(t, k) * x.data()[idx(ii, jj, k)];
            }
    detail::record(y, {&x, &w}, [x = x, w = w, y = y, h, ww, d, idx]() mutable {
        const auto& g = y.grad();
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < ww; ++j)
                for (int t = 0; t < 9; ++t) {
                    const int ii = i + off[t][0], jj = j + off[t][1];
                    if (ii < 0 || ii >= h || jj < 0 || jj >= ww) continue;
                    for (int k = 0; k < d; ++k) {
                        if (x.requires_grad())
                            x.grad()[idx(ii, jj, k)] += w.at(t, k) * g[idx(i, j, k)];
                        if (w.requires_grad())
                            w.grad()[static_cast<size_t>(t) * d + k] += x.data()[idx(ii, jj, k)] * g[idx(i, j, k)];
                    }
                }
    });
    return y;
}

// Per-row layer normalization with learnable gain/bias (1 x c each).
inline Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                             double eps = 1e-5) {
    if (x.rank() != 2) throw std::invalid_argument("layernorm_rows: rank-2 only");
    if (gain.shape() != Shape{1, x.extent(1)} || bias.shape() != Shape{1, x.extent(1)})
        throw std::invalid_argument("layernorm_rows: gain/bias must be 1 x c");
    const int r = x.extent(0), c = x.extent(1);
    Tensor y = Tensor::zeros({r, c});
    std::vector<double> inv_std(static_cast<size_t>(r)), xhat(x.size());
    for (int i = 0; i < r; ++i) {
        double mu = 0;
        for (int j = 0; j < c; ++j) mu += x.at(i, j);
        mu /= c;
        double var = 0;
        for (int j = 0; j < c; ++j) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
        var /= c;
        inv_std[static_cast<size_t>(i)] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j) {
            xhat[static_cast<size_t>(i) * c + j] = (x.at(i, j) - mu) * inv_std[static_cast<size_t>(i)];
            y.at(i, j) = gain.at(0, j) * xhat[static_cast<size_t>(i) * c + j] + bias.at(0, j);
        }
    }
    detail::record(y, {&x, &gain, &bias}, [x = x, gain = gain, bias = bias, y = y, r, c, inv_std, xhat]() mutable {
        const auto& g = y.grad();
        for (int i = 0; i < r; ++i) {
            double sum_gh = 0, sum_gh_xhat = 0;
            for (int j = 0; j < c; ++j) {
                const double gh = g[static_cast<size_t>(i) * c + j] * gain.at(0, j);
                sum_gh += gh;
                sum_gh_xhat += gh * xhat[static_cast<size_t>(i) * c + j];
            }
            for (int j = 0; j < c; ++j) {
                const size_t p = static_cast<size_t>(i) * c + j;
                if (x.requires_grad()) {
                    const double gh = g[p] * gain.at(0, j);
                    x.grad()[p] += inv_std[static_cast<size_t>(i)] *
                                   (gh - sum_gh / c - xhat[p] * sum_gh_xhat / c);
                }
                if (gain.requires_grad()) gain.grad()[static_cast<size_t>(j)] += g[p] * xhat[p];
                if (bias.requires_grad()) bias.grad()[static_cast<size_t>(j)] += g[p];
            }
        }
    });
    return y;
}

}  // namespace paq
