#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation.
//
// The op set is closed: exactly the kernels needed to express the tokenizer,
// the transformer encoder blocks, the projector/decoder heads and the losses,
// plus two fused loss kernels (softmax cross-entropy, scalar sqrt). Every op
// validates shapes, checks its output for non-finite values, and records its
// parents so backward() can reach them. Graph construction and backward are
// single-threaded; only the large matmul kernels fan out to one helper thread,
// with a fixed row partition so results stay bit-identical run to run.

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "switchtab/error.hpp"

namespace switchtab {

enum class OpKind {
    leaf,
    matmul,
    add,
    subtract,
    multiply,
    scale,
    sigmoid,
    softmax,
    mean,
    square,
    concat,
    slice,
    transpose,
    layer_norm,
    relu,
    cross_entropy,
    sqrt_scalar,
    reshape,
    block_attention,
};

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

namespace detail {

// Recycles op-output buffers across steps. Every op writes its full output,
// so recycled value buffers skip the zero-fill a fresh allocation would pay;
// gradient buffers are still zeroed because gradients accumulate.
inline std::unordered_map<std::size_t, std::vector<std::vector<double>>>& buffer_pool() {
    thread_local std::unordered_map<std::size_t, std::vector<std::vector<double>>> pool;
    return pool;
}

inline std::vector<double> acquire_buffer(std::size_t n) {
    auto& pool = buffer_pool();
    auto it = pool.find(n);
    if (it != pool.end() && !it->second.empty()) {
        std::vector<double> out = std::move(it->second.back());
        it->second.pop_back();
        return out;
    }
    return std::vector<double>(n);
}

inline void release_buffer(std::vector<double>&& v) {
    if (v.empty()) return;
    auto& stack = buffer_pool()[v.size()];
    if (stack.size() < 512) stack.push_back(std::move(v));
}

}  // namespace detail

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use, same length as value
    std::vector<NodePtr> parents;
    void (*backprop)(TensorNode&) = nullptr;
    OpKind op = OpKind::leaf;
    bool requires_grad = false;
    // small per-op payload (broadcast mode, slice offset/width, axis, ...)
    double aux_scalar = 0.0;
    std::size_t aux_a = 0;
    std::size_t aux_b = 0;
    std::vector<int> aux_labels;    // cross-entropy targets
    std::vector<double> aux_cache;  // forward intermediates kept for backward
    std::string name;               // parameter name for leaves

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) {
            grad = detail::acquire_buffer(value.size());
            std::fill(grad.begin(), grad.end(), 0.0);
        }
    }

    ~TensorNode() {
        if (op != OpKind::leaf) {
            detail::release_buffer(std::move(value));
            detail::release_buffer(std::move(grad));
            detail::release_buffer(std::move(aux_cache));
        }
    }
};

namespace detail {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline void validate_shape(const std::vector<std::size_t>& shape) {
    for (std::size_t d : shape)
        if (d == 0) throw DataError("tensor shapes must have positive extents");
}

inline void check_finite(const TensorNode& node, const char* op_name) {
    for (double v : node.value)
        if (!std::isfinite(v))
            throw NumericError(std::string(op_name) + " produced a non-finite value");
}

// One persistent helper thread. run_split() executes fn over [0, n) cut at
// n/2: low half on the helper, high half inline. Each index is processed by
// exactly one thread with the same inner loop as the serial path, so outputs
// are bit-identical to a serial run. The handoff spins briefly before
// falling back to a condition variable; a sleep/wake round trip costs more
// than the kernels being split.
class ParallelWorker {
public:
    static ParallelWorker& instance() {
        static ParallelWorker w;
        return w;
    }

    void run_split(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
        const std::size_t mid = n / 2;
        if (mid == 0) {
            fn(0, n);
            return;
        }
        if (sleeping_.load(std::memory_order_acquire)) {
            // waking a slept worker costs more than the kernel; run this call
            // serially and warm the worker for the calls that follow
            {
                std::lock_guard<std::mutex> lk(m_);
                warm_ = true;
            }
            cv_.notify_one();
            fn(0, n);
            return;
        }
        fn_ = &fn;
        lo_ = 0;
        hi_ = mid;
        const std::uint32_t ticket = seq_.fetch_add(1, std::memory_order_release) + 1;
        if (sleeping_.load(std::memory_order_acquire)) {
            // worker dozed off between our check and the dispatch
            { std::lock_guard<std::mutex> lk(m_); }
            cv_.notify_one();
        }
        fn(mid, n);
        std::uint32_t spins = 0;
        while (done_.load(std::memory_order_acquire) != ticket) {
            cpu_relax();
            if (++spins > 200000) {
                std::this_thread::yield();  // do not starve a preempted worker
                spins = 0;
            }
        }
    }

private:
    ParallelWorker() : th_([this] { loop(); }) {}
    ~ParallelWorker() {
        stop_.store(true, std::memory_order_release);
        {
            std::lock_guard<std::mutex> lk(m_);
            cv_.notify_one();
        }
        th_.join();
    }

    static void cpu_relax() {
#if defined(__x86_64__) || defined(__i386__)
        __builtin_ia32_pause();
#else
        std::this_thread::yield();
#endif
    }

    void loop() {
        std::uint32_t last = 0;
        // roughly a tenth of a second of paused spinning; during a training
        // run the gap between dispatches never comes close
        constexpr std::uint64_t kSpinBudget = 5000000;
        for (;;) {
            std::uint64_t spins = 0;
            while (seq_.load(std::memory_order_acquire) == last &&
                   !stop_.load(std::memory_order_acquire)) {
                if (++spins > kSpinBudget) {
                    std::unique_lock<std::mutex> lk(m_);
                    sleeping_.store(true, std::memory_order_release);
                    cv_.wait(lk, [&] {
                        return warm_ || seq_.load(std::memory_order_acquire) != last ||
                               stop_.load(std::memory_order_acquire);
                    });
                    warm_ = false;
                    sleeping_.store(false, std::memory_order_release);
                    spins = 0;
                }
                cpu_relax();
            }
            if (stop_.load(std::memory_order_acquire)) return;
            last = seq_.load(std::memory_order_acquire);
            (*fn_)(lo_, hi_);
            done_.store(last, std::memory_order_release);
        }
    }

    const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
    std::size_t lo_ = 0, hi_ = 0;
    std::atomic<std::uint32_t> seq_{0};
    std::atomic<std::uint32_t> done_{0};
    std::atomic<bool> sleeping_{false};
    std::atomic<bool> stop_{false};
    bool warm_ = false;  // guarded by m_
    std::mutex m_;
    std::condition_variable cv_;
    std::thread th_;
};

constexpr std::size_t kParallelMacThreshold = std::size_t(1) << 17;

constexpr std::size_t kJTile = 32;

// acc(+)= row `stripe` of X * g, striped over [j0, j0+jl); constant-width
// fast path so the accumulator strip stays in registers.
template <bool kFull>
inline void axpy_tile(double* acc, const double* x, double g, std::size_t jl) {
    if constexpr (kFull) {
        for (std::size_t j = 0; j < kJTile; ++j) acc[j] += g * x[j];
    } else {
        for (std::size_t j = 0; j < jl; ++j) acc[j] += g * x[j];
    }
}

// C = A(n x k) * B(k x m). Each j-tile of an output row accumulates in
// registers across the whole k loop, so C is written once per tile.
template <bool kFull>
inline void matmul_rows_impl(const double* a, const double* b, double* c, std::size_t lo,
                             std::size_t hi, std::size_t k, std::size_t m, std::size_t j0,
                             std::size_t jl) {
    double acc[kJTile];
    for (std::size_t i = lo; i < hi; ++i) {
        double* ci = c + i * m + j0;
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < jl; ++j) acc[j] = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk)
            axpy_tile<kFull>(acc, b + kk * m + j0, ai[kk], jl);
        for (std::size_t j = 0; j < jl; ++j) ci[j] = acc[j];
    }
}

inline void matmul_rows(const double* a, const double* b, double* c, std::size_t lo,
                        std::size_t hi, std::size_t k, std::size_t m) {
    for (std::size_t j0 = 0; j0 < m; j0 += kJTile) {
        const std::size_t jl = std::min(kJTile, m - j0);
        if (jl == kJTile) matmul_rows_impl<true>(a, b, c, lo, hi, k, m, j0, kJTile);
        else matmul_rows_impl<false>(a, b, c, lo, hi, k, m, j0, jl);
    }
}

inline void matmul_kernel(const double* a, const double* b, double* c, std::size_t n,
                          std::size_t k, std::size_t m) {
    if (n * k * m >= kParallelMacThreshold && n >= 2) {
        ParallelWorker::instance().run_split(
            n, [=](std::size_t lo, std::size_t hi) { matmul_rows(a, b, c, lo, hi, k, m); });
    } else {
        matmul_rows(a, b, c, 0, n, k, m);
    }
}

// dA(n x k) += dC(n x m) * B(k x m)^T, partitioned over rows of dA. B is
// transposed into a scratch buffer so each kk-tile of a dA row accumulates
// in registers while the j loop streams over contiguous bt rows.
template <bool kFull>
inline void acc_a_bt_impl(const double* dc, const double* bt, double* da, std::size_t lo,
                          std::size_t hi, std::size_t k, std::size_t m, std::size_t k0,
                          std::size_t kl) {
    double acc[kJTile];
    for (std::size_t i = lo; i < hi; ++i) {
        const double* dci = dc + i * m;
        double* dai = da + i * k + k0;
        for (std::size_t kk = 0; kk < kl; ++kk) acc[kk] = dai[kk];
        for (std::size_t j = 0; j < m; ++j)
            axpy_tile<kFull>(acc, bt + j * k + k0, dci[j], kl);
        for (std::size_t kk = 0; kk < kl; ++kk) dai[kk] = acc[kk];
    }
}

inline void acc_a_bt_rows(const double* dc, const double* bt, double* da, std::size_t lo,
                          std::size_t hi, std::size_t k, std::size_t m) {
    for (std::size_t k0 = 0; k0 < k; k0 += kJTile) {
        const std::size_t kl = std::min(kJTile, k - k0);
        if (kl == kJTile) acc_a_bt_impl<true>(dc, bt, da, lo, hi, k, m, k0, kJTile);
        else acc_a_bt_impl<false>(dc, bt, da, lo, hi, k, m, k0, kl);
    }
}

// out(c x r) = transpose of src(r x c), tiled so writes stay cache-resident
inline void blocked_transpose(const double* src, double* out, std::size_t r, std::size_t c) {
    constexpr std::size_t kBlk = 32;
    for (std::size_t i0 = 0; i0 < r; i0 += kBlk) {
        const std::size_t i1 = std::min(r, i0 + kBlk);
        for (std::size_t j = 0; j < c; ++j) {
            double* oj = out + j * r;
            for (std::size_t i = i0; i < i1; ++i) oj[i] = src[i * c + j];
        }
    }
}

inline void acc_a_bt(const double* dc, const double* b, double* da, std::size_t n,
                     std::size_t k, std::size_t m) {
    std::vector<double> bt = acquire_buffer(k * m);
    blocked_transpose(b, bt.data(), k, m);
    if (n * k * m >= kParallelMacThreshold && n >= 2) {
        const double* btp = bt.data();
        ParallelWorker::instance().run_split(n, [=](std::size_t lo, std::size_t hi) {
            acc_a_bt_rows(dc, btp, da, lo, hi, k, m);
        });
    } else {
        acc_a_bt_rows(dc, bt.data(), da, 0, n, k, m);
    }
    release_buffer(std::move(bt));
}

// dB(k x m) += A(n x k)^T * dC(n x m), partitioned over rows of dB. A is
// transposed once so each dB row accumulates register tiles while streaming
// the whole of dC.
template <bool kFull>
inline void acc_at_b_impl(const double* at, const double* dc, double* db, std::size_t klo,
                          std::size_t khi, std::size_t n, std::size_t m, std::size_t j0,
                          std::size_t jl) {
    double acc[kJTile];
    for (std::size_t kk = klo; kk < khi; ++kk) {
        const double* atk = at + kk * n;
        double* dbk = db + kk * m + j0;
        for (std::size_t j = 0; j < jl; ++j) acc[j] = dbk[j];
        for (std::size_t i = 0; i < n; ++i)
            axpy_tile<kFull>(acc, dc + i * m + j0, atk[i], jl);
        for (std::size_t j = 0; j < jl; ++j) dbk[j] = acc[j];
    }
}

inline void acc_at_b_rows(const double* at, const double* dc, double* db, std::size_t klo,
                          std::size_t khi, std::size_t n, std::size_t k, std::size_t m) {
    (void)k;
    for (std::size_t j0 = 0; j0 < m; j0 += kJTile) {
        const std::size_t jl = std::min(kJTile, m - j0);
        if (jl == kJTile) acc_at_b_impl<true>(at, dc, db, klo, khi, n, m, j0, kJTile);
        else acc_at_b_impl<false>(at, dc, db, klo, khi, n, m, j0, jl);
    }
}

inline void acc_at_b(const double* a, const double* dc, double* db, std::size_t n,
                     std::size_t k, std::size_t m) {
    std::vector<double> at = acquire_buffer(k * n);
    blocked_transpose(a, at.data(), n, k);
    if (n * k * m >= kParallelMacThreshold && k >= 2) {
        const double* atp = at.data();
        ParallelWorker::instance().run_split(k, [=](std::size_t lo, std::size_t hi) {
            acc_at_b_rows(atp, dc, db, lo, hi, n, k, m);
        });
    } else {
        acc_at_b_rows(at.data(), dc, db, 0, k, n, k, m);
    }
    release_buffer(std::move(at));
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor constant(std::vector<std::size_t> shape, std::vector<double> values) {
        return make_leaf(std::move(shape), std::move(values), false, "");
    }

    static Tensor parameter(std::vector<std::size_t> shape, std::vector<double> values,
                            std::string name = "") {
        Tensor t = make_leaf(std::move(shape), std::move(values), true, std::move(name));
        t.node_->ensure_grad();
        return t;
    }

    static Tensor scalar(double v) { return constant({}, {v}); }

    bool valid() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return node_->shape.at(1); }

    const std::vector<double>& values() const { return node_->value; }
    // Leaf mutation only: optimizers and finite-difference probes. Graphs
    // built before the mutation keep their old forward values.
    std::vector<double>& mutable_values() { return node_->value; }

    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    bool requires_grad() const { return node_->requires_grad; }
    OpKind op() const { return node_->op; }
    const std::string& name() const { return node_->name; }
    void set_name(std::string n) { node_->name = std::move(n); }

    double item() const {
        if (numel() != 1) throw DataError("item() requires a single-element tensor");
        return node_->value[0];
    }

    double at(std::size_t r, std::size_t c) const {
        return node_->value[r * node_->shape.at(1) + c];
    }

    NodePtr node() const { return node_; }

    static Tensor from_node(NodePtr n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    static Tensor make_leaf(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad, std::string name) {
        detail::validate_shape(shape);
        if (detail::shape_numel(shape) != values.size())
            throw DataError("tensor value count does not match shape");
        for (double v : values)
            if (!std::isfinite(v)) throw NumericError("tensor created with a non-finite value");
        auto node = std::make_shared<TensorNode>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        node->name = std::move(name);
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    NodePtr node_;
};

namespace detail {

inline NodePtr make_op_node(OpKind op, std::vector<std::size_t> shape,
                            const std::vector<Tensor>& parents) {
    auto node = std::make_shared<TensorNode>();
    node->op = op;
    node->shape = std::move(shape);
    node->value = acquire_buffer(shape_numel(node->shape));
    bool needs_grad = false;
    for (const Tensor& p : parents)
        if (p.requires_grad()) needs_grad = true;
    node->requires_grad = needs_grad;
    if (needs_grad) {
        node->parents.reserve(parents.size());
        for (const Tensor& p : parents) node->parents.push_back(p.node());
    }
    return node;
}

// Rows-of-last-axis view: length of the last axis and how many such rows.
inline std::pair<std::size_t, std::size_t> last_axis_rows(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return {1, 1};
    const std::size_t d = shape.back();
    return {shape_numel(shape) / d, d};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// op: matmul (2D)

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw DataError("matmul requires 2D operands");
    const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    if (b.shape()[0] != k) throw DataError("matmul: inner dimensions disagree");
    auto node = detail::make_op_node(OpKind::matmul, {n, m}, {a, b});
    detail::matmul_kernel(a.values().data(), b.values().data(), node->value.data(), n, k, m);
    detail::check_finite(*node, "matmul");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            TensorNode& pb = *self.parents[1];
            const std::size_t n = pa.shape[0], k = pa.shape[1], m = pb.shape[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                detail::acc_a_bt(self.grad.data(), pb.value.data(), pa.grad.data(), n, k, m);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                detail::acc_at_b(pa.value.data(), self.grad.data(), pb.grad.data(), n, k, m);
            }
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: add — same shape, row-broadcast bias ({m} or {1,m} over the last axis),
// or single-element broadcast.

namespace detail {
enum AddMode : std::size_t { kAddSame = 0, kAddRow = 1, kAddScalar = 2 };
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::AddMode mode;
    if (a.shape() == b.shape()) {
        mode = detail::kAddSame;
    } else if (b.numel() == 1) {
        mode = detail::kAddScalar;
    } else {
        const auto [nrows, width] = detail::last_axis_rows(a.shape());
        (void)nrows;
        const bool row_vec = b.shape().size() == 1 && b.shape()[0] == width;
        const bool row_mat =
            b.shape().size() == 2 && b.shape()[0] == 1 && b.shape()[1] == width;
        if (!row_vec && !row_mat) throw DataError("add: shapes are not broadcast-compatible");
        mode = detail::kAddRow;
    }
    auto node = detail::make_op_node(OpKind::add, a.shape(), {a, b});
    node->aux_a = mode;
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& out = node->value;
    if (mode == detail::kAddSame) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    } else if (mode == detail::kAddScalar) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[0];
    } else {
        const std::size_t width = bv.size();
        for (std::size_t r0 = 0; r0 < out.size(); r0 += width)
            for (std::size_t j = 0; j < width; ++j) out[r0 + j] = av[r0 + j] + bv[j];
    }
    detail::check_finite(*node, "add");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            TensorNode& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                if (self.aux_a == detail::kAddSame) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
                } else if (self.aux_a == detail::kAddScalar) {
                    for (double g : self.grad) pb.grad[0] += g;
                } else {
                    const std::size_t width = pb.value.size();
                    for (std::size_t r0 = 0; r0 < self.grad.size(); r0 += width)
                        for (std::size_t j = 0; j < width; ++j)
                            pb.grad[j] += self.grad[r0 + j];
                }
            }
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// ops: subtract, multiply (elementwise, same shape), scale (by a constant)

inline Tensor subtract(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DataError("subtract: shape mismatch");
    auto node = detail::make_op_node(OpKind::subtract, a.shape(), {a, b});
    for (std::size_t i = 0; i < node->value.size(); ++i)
        node->value[i] = a.values()[i] - b.values()[i];
    detail::check_finite(*node, "subtract");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            TensorNode& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
            }
        };
    }
    return Tensor::from_node(node);
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DataError("multiply: shape mismatch");
    auto node = detail::make_op_node(OpKind::multiply, a.shape(), {a, b});
    for (std::size_t i = 0; i < node->value.size(); ++i)
        node->value[i] = a.values()[i] * b.values()[i];
    detail::check_finite(*node, "multiply");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            TensorNode& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa.grad[i] += self.grad[i] * pb.value[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[i] += self.grad[i] * pa.value[i];
            }
        };
    }
    return Tensor::from_node(node);
}

inline Tensor scale(const Tensor& a, double factor) {
    auto node = detail::make_op_node(OpKind::scale, a.shape(), {a});
    node->aux_scalar = factor;
    for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = a.values()[i] * factor;
    detail::check_finite(*node, "scale");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * self.aux_scalar;
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: sigmoid — two-branch form, never exponentiates a positive argument

inline Tensor sigmoid(const Tensor& a) {
    auto node = detail::make_op_node(OpKind::sigmoid, a.shape(), {a});
    for (std::size_t i = 0; i < node->value.size(); ++i) {
        const double x = a.values()[i];
        if (x >= 0.0) {
            node->value[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            node->value[i] = e / (1.0 + e);
        }
    }
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.value[i];
                pa.grad[i] += self.grad[i] * y * (1.0 - y);
            }
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: softmax over the last axis, max-subtracted

inline Tensor softmax(const Tensor& a) {
    if (a.shape().empty()) throw DataError("softmax requires at least one axis");
    auto node = detail::make_op_node(OpKind::softmax, a.shape(), {a});
    const auto [nrows, d] = detail::last_axis_rows(a.shape());
    for (std::size_t r = 0; r < nrows; ++r) {
        const double* x = a.values().data() + r * d;
        double* y = node->value.data() + r * d;
        double mx = x[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (std::size_t j = 0; j < d; ++j) y[j] /= sum;
    }
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            const auto [nrows, d] = detail::last_axis_rows(self.shape);
            for (std::size_t r = 0; r < nrows; ++r) {
                const double* y = self.value.data() + r * d;
                const double* g = self.grad.data() + r * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                double* out = pa.grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) out[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: mean — over all entries (scalar result) or along one axis of a 2D tensor

inline Tensor mean_all(const Tensor& a) {
    auto node = detail::make_op_node(OpKind::mean, {}, {a});
    double sum = 0.0;
    for (double v : a.values()) sum += v;
    node->value[0] = sum / static_cast<double>(a.numel());
    node->aux_a = 2;  // marker: all-axes reduction
    detail::check_finite(*node, "mean");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            const double g = self.grad[0] / static_cast<double>(pa.value.size());
            for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += g;
        };
    }
    return Tensor::from_node(node);
}

inline Tensor mean_axis(const Tensor& a, std::size_t axis) {
    if (a.shape().size() != 2) throw DataError("mean_axis requires a 2D tensor");
    if (axis > 1) throw DataError("mean_axis: axis out of range");
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    const std::vector<std::size_t> out_shape = axis == 0 ? std::vector<std::size_t>{m}
                                                         : std::vector<std::size_t>{n};
    auto node = detail::make_op_node(OpKind::mean, out_shape, {a});
    node->aux_a = axis;
    if (axis == 0) {
        for (std::size_t j = 0; j < m; ++j) {
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) sum += a.values()[i * m + j];
            node->value[j] = sum / static_cast<double>(n);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < m; ++j) sum += a.values()[i * m + j];
            node->value[i] = sum / static_cast<double>(m);
        }
    }
    detail::check_finite(*node, "mean");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            const std::size_t n = pa.shape[0], m = pa.shape[1];
            if (self.aux_a == 0) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                        pa.grad[i * m + j] += self.grad[j] / static_cast<double>(n);
            } else {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                        pa.grad[i * m + j] += self.grad[i] / static_cast<double>(m);
            }
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: square

inline Tensor square(const Tensor& a) {
    auto node = detail::make_op_node(OpKind::square, a.shape(), {a});
    for (std::size_t i = 0; i < node->value.size(); ++i) {
        const double v = a.values()[i];
        node->value[i] = v * v;
    }
    detail::check_finite(*node, "square");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * 2.0 * pa.value[i];
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: concat along the last axis

inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DataError("concat needs at least one operand");
    const auto& first = parts.front().shape();
    if (first.empty()) throw DataError("concat requires ranked operands");
    std::size_t total_last = 0;
    for (const Tensor& p : parts) {
        const auto& s = p.shape();
        if (s.size() != first.size()) throw DataError("concat: rank mismatch");
        for (std::size_t d = 0; d + 1 < s.size(); ++d)
            if (s[d] != first[d]) throw DataError("concat: leading dimensions disagree");
        total_last += s.back();
    }
    std::vector<std::size_t> out_shape = first;
    out_shape.back() = total_last;
    auto node = detail::make_op_node(OpKind::concat, out_shape, parts);
    const std::size_t nrows = detail::shape_numel(out_shape) / total_last;
    std::size_t col_off = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.shape().back();
        for (std::size_t r = 0; r < nrows; ++r) {
            const double* src = p.values().data() + r * w;
            double* dst = node->value.data() + r * total_last + col_off;
            for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
        }
        col_off += w;
    }
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            const std::size_t total_last = self.shape.back();
            const std::size_t nrows = self.value.size() / total_last;
            std::size_t col_off = 0;
            for (auto& parent : self.parents) {
                const std::size_t w = parent->shape.back();
                if (parent->requires_grad) {
                    parent->ensure_grad();
                    for (std::size_t r = 0; r < nrows; ++r) {
                        const double* g = self.grad.data() + r * total_last + col_off;
                        double* dst = parent->grad.data() + r * w;
                        for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
                    }
                }
                col_off += w;
            }
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: slice along the last axis

inline Tensor slice(const Tensor& a, std::size_t offset, std::size_t width) {
    if (a.shape().empty()) throw DataError("slice requires a ranked operand");
    const std::size_t last = a.shape().back();
    if (width == 0 || offset + width > last) throw DataError("slice: range out of bounds");
    std::vector<std::size_t> out_shape = a.shape();
    out_shape.back() = width;
    auto node = detail::make_op_node(OpKind::slice, out_shape, {a});
    node->aux_a = offset;
    node->aux_b = width;
    const std::size_t nrows = a.numel() / last;
    for (std::size_t r = 0; r < nrows; ++r) {
        const double* src = a.values().data() + r * last + offset;
        double* dst = node->value.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] = src[j];
    }
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            const std::size_t last = pa.shape.back();
            const std::size_t nrows = pa.value.size() / last;
            const std::size_t offset = self.aux_a, width = self.aux_b;
            for (std::size_t r = 0; r < nrows; ++r) {
                const double* g = self.grad.data() + r * width;
                double* dst = pa.grad.data() + r * last + offset;
                for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
            }
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: transpose (2D)

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) throw DataError("transpose requires a 2D tensor");
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    auto node = detail::make_op_node(OpKind::transpose, {m, n}, {a});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) node->value[j * n + i] = a.values()[i * m + j];
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            const std::size_t n = pa.shape[0], m = pa.shape[1];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) pa.grad[i * m + j] += self.grad[j * n + i];
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: layer normalization over the last axis with learned gain/offset

inline constexpr double kLayerNormEpsilon = 1e-5;

inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& offset) {
    if (a.shape().empty()) throw DataError("layer_norm requires at least one axis");
    const auto [nrows, d] = detail::last_axis_rows(a.shape());
    if (gain.numel() != d || offset.numel() != d)
        throw DataError("layer_norm: gain/offset width must match the last axis");
    auto node = detail::make_op_node(OpKind::layer_norm, a.shape(), {a, gain, offset});
    for (std::size_t r = 0; r < nrows; ++r) {
        const double* x = a.values().data() + r * d;
        double* y = node->value.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        for (std::size_t j = 0; j < d; ++j)
            y[j] = (x[j] - mu) * rstd * gain.values()[j] + offset.values()[j];
    }
    detail::check_finite(*node, "layer_norm");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& px = *self.parents[0];
            TensorNode& pg = *self.parents[1];
            TensorNode& po = *self.parents[2];
            const auto [nrows, d] = detail::last_axis_rows(self.shape);
            const double dn = static_cast<double>(d);
            if (px.requires_grad) px.ensure_grad();
            if (pg.requires_grad) pg.ensure_grad();
            if (po.requires_grad) po.ensure_grad();
            for (std::size_t r = 0; r < nrows; ++r) {
                const double* x = px.value.data() + r * d;
                const double* g = self.grad.data() + r * d;
                double mu = 0.0;
                for (std::size_t j = 0; j < d; ++j) mu += x[j];
                mu /= dn;
                double var = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double c = x[j] - mu;
                    var += c * c;
                }
                var /= dn;
                const double rstd = 1.0 / std::sqrt(var + kLayerNormEpsilon);
                if (pg.requires_grad || po.requires_grad) {
                    for (std::size_t j = 0; j < d; ++j) {
                        const double xhat = (x[j] - mu) * rstd;
                        if (pg.requires_grad) pg.grad[j] += g[j] * xhat;
                        if (po.requires_grad) po.grad[j] += g[j];
                    }
                }
                if (px.requires_grad) {
                    // dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double xhat = (x[j] - mu) * rstd;
                        const double dxhat = g[j] * pg.value[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= dn;
                    mean_dxhat_xhat /= dn;
                    double* out = px.grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double xhat = (x[j] - mu) * rstd;
                        const double dxhat = g[j] * pg.value[j];
                        out[j] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            }
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// op: relu

inline Tensor relu(const Tensor& a) {
    auto node = detail::make_op_node(OpKind::relu, a.shape(), {a});
    for (std::size_t i = 0; i < node->value.size(); ++i)
        node->value[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (pa.value[i] > 0.0) pa.grad[i] += self.grad[i];
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// fused loss kernels

// Mean over rows of -log softmax(logits)[label]. Stable log-sum-exp forward;
// backward is (softmax - onehot) / nrows.
inline Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2) throw DataError("cross_entropy: logits must be 2D");
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    if (labels.size() != n) throw DataError("cross_entropy: one label per row required");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw DataError("cross_entropy: label out of range");
    auto node = detail::make_op_node(OpKind::cross_entropy, {}, {logits});
    node->aux_labels = labels;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = logits.values().data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(x[j] - mx);
        total += mx + std::log(sum) - x[labels[i]];
    }
    node->value[0] = total / static_cast<double>(n);
    detail::check_finite(*node, "cross_entropy");
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            const std::size_t n = pa.shape[0], c = pa.shape[1];
            const double g = self.grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* x = pa.value.data() + i * c;
                double mx = x[0];
                for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < c; ++j) sum += std::exp(x[j] - mx);
                double* out = pa.grad.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) {
                    const double p = std::exp(x[j] - mx) / sum;
                    const double target = static_cast<std::size_t>(self.aux_labels[i]) == j;
                    out[j] += g * (p - target);
                }
            }
        };
    }
    return Tensor::from_node(node);
}

// Same values, different shape. Row-major layout makes this a plain copy.
inline Tensor reshape(const Tensor& a, std::vector<std::size_t> new_shape) {
    detail::validate_shape(new_shape);
    if (detail::shape_numel(new_shape) != a.numel())
        throw DataError("reshape: element count must be preserved");
    auto node = detail::make_op_node(OpKind::reshape, std::move(new_shape), {a});
    node->value = a.values();
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        };
    }
    return Tensor::from_node(node);
}

// Scaled-dot-product attention applied independently to consecutive row
// blocks of length block_len: for each block, softmax(Q K^T * factor) V.
// One kernel per head per layer keeps the graph size independent of the
// batch; the math is identical to composing slice/matmul/scale/softmax.
inline Tensor block_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                              std::size_t block_len, double factor) {
    if (q.shape().size() != 2 || k.shape() != q.shape() || v.shape() != q.shape())
        throw DataError("block_attention: q, k, v must share one 2D shape");
    const std::size_t rows = q.shape()[0], width = q.shape()[1];
    if (block_len == 0 || rows % block_len != 0)
        throw DataError("block_attention: rows must divide into blocks");
    const std::size_t blocks = rows / block_len;
    auto node = detail::make_op_node(OpKind::block_attention, q.shape(), {q, k, v});
    node->aux_a = block_len;
    node->aux_scalar = factor;
    node->aux_cache = detail::acquire_buffer(blocks * block_len * block_len);  // softmax probs
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    const double* vv = v.values().data();
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t r0 = b * block_len;
        double* probs = node->aux_cache.data() + b * block_len * block_len;
        for (std::size_t i = 0; i < block_len; ++i) {
            double* row = probs + i * block_len;
            for (std::size_t j = 0; j < block_len; ++j) {
                double dot = 0.0;
                for (std::size_t e = 0; e < width; ++e)
                    dot += qv[(r0 + i) * width + e] * kv[(r0 + j) * width + e];
                row[j] = dot * factor;
            }
            double mx = row[0];
            for (std::size_t j = 1; j < block_len; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < block_len; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (std::size_t j = 0; j < block_len; ++j) row[j] /= sum;
            double* out = node->value.data() + (r0 + i) * width;
            for (std::size_t e = 0; e < width; ++e) out[e] = 0.0;
            for (std::size_t j = 0; j < block_len; ++j) {
                const double p = row[j];
                const double* vr = vv + (r0 + j) * width;
                for (std::size_t e = 0; e < width; ++e) out[e] += p * vr[e];
            }
        }
    }
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pq = *self.parents[0];
            TensorNode& pk = *self.parents[1];
            TensorNode& pv = *self.parents[2];
            const std::size_t block_len = self.aux_a;
            const std::size_t width = self.shape[1];
            const std::size_t blocks = self.shape[0] / block_len;
            const double factor = self.aux_scalar;
            if (pq.requires_grad) pq.ensure_grad();
            if (pk.requires_grad) pk.ensure_grad();
            if (pv.requires_grad) pv.ensure_grad();
            std::vector<double> dp(block_len), ds(block_len);
            for (std::size_t b = 0; b < blocks; ++b) {
                const std::size_t r0 = b * block_len;
                const double* probs = self.aux_cache.data() + b * block_len * block_len;
                for (std::size_t i = 0; i < block_len; ++i) {
                    const double* go = self.grad.data() + (r0 + i) * width;
                    const double* prow = probs + i * block_len;
                    if (pv.requires_grad) {
                        for (std::size_t j = 0; j < block_len; ++j) {
                            double* dvr = pv.grad.data() + (r0 + j) * width;
                            const double p = prow[j];
                            for (std::size_t e = 0; e < width; ++e) dvr[e] += p * go[e];
                        }
                    }
                    if (!pq.requires_grad && !pk.requires_grad) continue;
                    // dP = dO V^T, then the softmax jacobian gives dS
                    double dot = 0.0;
                    for (std::size_t j = 0; j < block_len; ++j) {
                        const double* vr = pv.value.data() + (r0 + j) * width;
                        double acc = 0.0;
                        for (std::size_t e = 0; e < width; ++e) acc += go[e] * vr[e];
                        dp[j] = acc;
                        dot += acc * prow[j];
                    }
                    for (std::size_t j = 0; j < block_len; ++j)
                        ds[j] = prow[j] * (dp[j] - dot) * factor;
                    if (pq.requires_grad) {
                        double* dq = pq.grad.data() + (r0 + i) * width;
                        for (std::size_t j = 0; j < block_len; ++j) {
                            const double* kr = pk.value.data() + (r0 + j) * width;
                            for (std::size_t e = 0; e < width; ++e) dq[e] += ds[j] * kr[e];
                        }
                    }
                    if (pk.requires_grad) {
                        const double* qr = pq.value.data() + (r0 + i) * width;
                        for (std::size_t j = 0; j < block_len; ++j) {
                            double* dk = pk.grad.data() + (r0 + j) * width;
                            for (std::size_t e = 0; e < width; ++e) dk[e] += ds[j] * qr[e];
                        }
                    }
                }
            }
        };
    }
    return Tensor::from_node(node);
}

// Square root of a nonnegative scalar; derivative taken as 0 at exactly 0.
inline Tensor sqrt_scalar(const Tensor& a) {
    if (a.numel() != 1) throw DataError("sqrt_scalar requires a single-element tensor");
    if (a.values()[0] < 0.0) throw NumericError("sqrt_scalar of a negative value");
    auto node = detail::make_op_node(OpKind::sqrt_scalar, {}, {a});
    node->value[0] = std::sqrt(a.values()[0]);
    if (node->requires_grad) {
        node->backprop = [](TensorNode& self) {
            TensorNode& pa = *self.parents[0];
            pa.ensure_grad();
            if (self.value[0] > 0.0) pa.grad[0] += self.grad[0] / (2.0 * self.value[0]);
        };
    }
    return Tensor::from_node(node);
}

// ---------------------------------------------------------------------------
// backward

// Reverse-mode sweep from a scalar root. Gradients accumulate additively into
// every reachable tensor that requires them; callers zero parameter gradients
// between optimizer steps.
inline void backward(const Tensor& root) {
    if (root.numel() != 1) throw DataError("backward: root must be a scalar");
    if (!root.requires_grad()) return;

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        TensorNode* node;
        std::size_t next;
    };
    std::vector<Frame> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next < top.node->parents.size()) {
            TensorNode* p = top.node->parents[top.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
}

}  // namespace switchtab
