#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroaps/rng.hpp"

// Minimal reverse-mode tape supplying exactly the primitives the model needs.
// Scalar type is a template parameter: training runs at float, gradient
// verification at double. The tape also keeps a high-water mark of live
// buffer bytes, which is the artifact's workspace-memory metric.

namespace neuroaps::ad {

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }

    T& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    T* row(std::size_t i) { return data.data() + i * cols; }
    const T* row(std::size_t i) const { return data.data() + i * cols; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

// ---------------------------------------------------------------------------
// Dense kernels
// ---------------------------------------------------------------------------

namespace detail {

// C += A * B. Each output row is accumulated by exactly one thread in a fixed
// order, so results are bit-identical regardless of thread count.
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * n * k > (std::size_t{1} << 16))
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const T av = arow[l];
            const T* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T with A [m x k], B [n x k].
template <typename T>
void matmul_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * n * k > (std::size_t{1} << 16))
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{};
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            c[i * n + j] += acc;
        }
    }
}

// C += A^T * B with A [k x m], B [k x n].
template <typename T>
void matmul_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t l = 0; l < k; ++l) {
        const T* arow = a + l * m;
        const T* brow = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

enum class OpKind : std::uint8_t {
    Leaf,
    Matmul,
    MatmulNT,
    AddBias,
    Relu,
    MaskedMaxPool,
    ReplaceEmptyRows,
    RowSoftmax,
    Scale,
    Add,
    ConcatCols,
    SliceRows,
    StackRows,
    CrossEntropy,
    CeMean,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Matmul: return "matmul";
        case OpKind::MatmulNT: return "matmul_nt";
        case OpKind::AddBias: return "add_bias";
        case OpKind::Relu: return "relu";
        case OpKind::MaskedMaxPool: return "masked_max_pool";
        case OpKind::ReplaceEmptyRows: return "replace_empty_rows";
        case OpKind::RowSoftmax: return "row_softmax";
        case OpKind::Scale: return "scale";
        case OpKind::Add: return "add";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::SliceRows: return "slice_rows";
        case OpKind::StackRows: return "stack_rows";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::CeMean: return "ce_mean";
    }
    return "?";
}

template <typename T>
class Tape {
public:
    struct PoolResult {
        int node;
        std::vector<std::int32_t> argmax;   // G*D entries, -1 for empty groups
        std::vector<std::uint8_t> empty;    // per-group flag
    };

    // ---- recording -------------------------------------------------------

    int leaf(Tensor<T> value, bool requires_grad) {
        return push(OpKind::Leaf, std::move(value), {}, requires_grad);
    }

    int matmul(int a, int b) {
        const Tensor<T>&A = value(a), &B = value(b);
        if (A.cols != B.rows)
            throw std::invalid_argument("matmul: inner dimensions disagree (" + dims(A) + " x " +
                                        dims(B) + ")");
        Tensor<T> out(A.rows, B.cols);
        detail::matmul_acc(A.data.data(), B.data.data(), out.data.data(), A.rows, A.cols, B.cols);
        return push(OpKind::Matmul, std::move(out), {a, b});
    }

    /// A * B^T; B is [n x k] with k matching A's columns.
    int matmul_nt(int a, int b) {
        const Tensor<T>&A = value(a), &B = value(b);
        if (A.cols != B.cols)
            throw std::invalid_argument("matmul_nt: inner dimensions disagree (" + dims(A) +
                                        " x " + dims(B) + "^T)");
        Tensor<T> out(A.rows, B.rows);
        detail::matmul_nt_acc(A.data.data(), B.data.data(), out.data.data(), A.rows, A.cols,
                              B.rows);
        return push(OpKind::MatmulNT, std::move(out), {a, b});
    }

    /// Broadcasts a [1 x n] bias over every row of a.
    int add_bias(int a, int bias) {
        const Tensor<T>&A = value(a), &B = value(bias);
        if (B.rows != 1 || B.cols != A.cols)
            throw std::invalid_argument("add_bias: bias must be [1 x " + std::to_string(A.cols) +
                                        "]");
        Tensor<T> out = A;
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t j = 0; j < A.cols; ++j) out.at(i, j) += B.at(0, j);
        return push(OpKind::AddBias, std::move(out), {a, bias});
    }

    int relu(int a) {
        const Tensor<T>& A = value(a);
        Tensor<T> out(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) {
            const T x = A.data[i];
            out.data[i] = x > T{} ? x : T{};
            const double ax = std::abs(static_cast<double>(x));
            if (ax < relu_min_abs_) relu_min_abs_ = ax;
            relu_pattern_ = (relu_pattern_ ^ static_cast<std::uint64_t>(x > T{})) *
                            0x100000001b3ULL;
        }
        return push(OpKind::Relu, std::move(out), {a});
    }

    /// Per-group column-wise max over rows of `features`. Empty groups yield a
    /// zero row plus a flag; gradients route only to recorded argmax rows;
    /// ties break toward the lowest row index.
    PoolResult masked_max_pool(int features, std::span<const int> group_ids, int n_groups) {
        const Tensor<T>& F = value(features);
        if (group_ids.size() != F.rows)
            throw std::invalid_argument("masked_max_pool: one group id per row required");
        if (n_groups < 1) throw std::invalid_argument("masked_max_pool: n_groups must be >= 1");
        for (int g : group_ids)
            if (g < 0 || g >= n_groups)
                throw std::invalid_argument("masked_max_pool: group id out of range");

        const std::size_t G = static_cast<std::size_t>(n_groups), D = F.cols;
        Tensor<T> out(G, D);
        std::vector<std::int32_t> argmax(G * D, -1);
        std::vector<std::uint8_t> empty(G, 1);
        for (std::size_t i = 0; i < F.rows; ++i) {
            const std::size_t g = static_cast<std::size_t>(group_ids[i]);
            const T* frow = F.row(i);
            if (empty[g]) {
                empty[g] = 0;
                for (std::size_t d = 0; d < D; ++d) {
                    out.at(g, d) = frow[d];
                    argmax[g * D + d] = static_cast<std::int32_t>(i);
                }
            } else {
                for (std::size_t d = 0; d < D; ++d)
                    if (frow[d] > out.at(g, d)) {
                        out.at(g, d) = frow[d];
                        argmax[g * D + d] = static_cast<std::int32_t>(i);
                    }
            }
        }
        const int node = push(OpKind::MaskedMaxPool, std::move(out), {features});
        nodes_[node].aux_i.assign(argmax.begin(), argmax.end());
        return {node, std::move(argmax), std::move(empty)};
    }

    /// Rows flagged empty are replaced by the [1 x D] `token`; gradients for
    /// replaced rows flow into the token instead of the pooled input.
    int replace_empty_rows(int pooled, const std::vector<std::uint8_t>& empty, int token) {
        const Tensor<T>&P = value(pooled), &Tok = value(token);
        if (empty.size() != P.rows)
            throw std::invalid_argument("replace_empty_rows: one flag per row required");
        if (Tok.rows != 1 || Tok.cols != P.cols)
            throw std::invalid_argument("replace_empty_rows: token must be [1 x D]");
        Tensor<T> out = P;
        for (std::size_t g = 0; g < P.rows; ++g)
            if (empty[g])
                for (std::size_t d = 0; d < P.cols; ++d) out.at(g, d) = Tok.at(0, d);
        const int node = push(OpKind::ReplaceEmptyRows, std::move(out), {pooled, token});
        nodes_[node].aux_i.assign(empty.begin(), empty.end());
        return node;
    }

    /// Max-subtracted softmax along each row.
    int row_softmax(int a) {
        const Tensor<T>& A = value(a);
        Tensor<T> out(A.rows, A.cols);
        for (std::size_t i = 0; i < A.rows; ++i) {
            const T* in = A.row(i);
            T* o = out.row(i);
            T mx = in[0];
            for (std::size_t j = 1; j < A.cols; ++j) mx = std::max(mx, in[j]);
            T sum{};
            for (std::size_t j = 0; j < A.cols; ++j) {
                o[j] = std::exp(in[j] - mx);
                sum += o[j];
            }
            for (std::size_t j = 0; j < A.cols; ++j) o[j] /= sum;
        }
        return push(OpKind::RowSoftmax, std::move(out), {a});
    }

    int scale(int a, T c) {
        Tensor<T> out = value(a);
        for (T& v : out.data) v *= c;
        const int node = push(OpKind::Scale, std::move(out), {a});
        nodes_[node].aux_scalar = c;
        return node;
    }

    int add(int a, int b) {
        const Tensor<T>&A = value(a), &B = value(b);
        if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
        Tensor<T> out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
        return push(OpKind::Add, std::move(out), {a, b});
    }

    int concat_cols(int a, int b) {
        const Tensor<T>&A = value(a), &B = value(b);
        if (A.rows != B.rows) throw std::invalid_argument("concat_cols: row count mismatch");
        Tensor<T> out(A.rows, A.cols + B.cols);
        for (std::size_t i = 0; i < A.rows; ++i) {
            std::copy(A.row(i), A.row(i) + A.cols, out.row(i));
            std::copy(B.row(i), B.row(i) + B.cols, out.row(i) + A.cols);
        }
        return push(OpKind::ConcatCols, std::move(out), {a, b});
    }

    int slice_rows(int a, std::size_t start, std::size_t count) {
        const Tensor<T>& A = value(a);
        if (start + count > A.rows) throw std::invalid_argument("slice_rows: range out of bounds");
        Tensor<T> out(count, A.cols);
        std::copy(A.row(start), A.row(start) + count * A.cols, out.data.begin());
        const int node = push(OpKind::SliceRows, std::move(out), {a});
        nodes_[node].aux_i = {static_cast<std::int64_t>(start), static_cast<std::int64_t>(count)};
        return node;
    }

    int stack_rows(std::span<const int> parts) {
        if (parts.empty()) throw std::invalid_argument("stack_rows: no inputs");
        const std::size_t cols = value(parts[0]).cols;
        std::size_t rows = 0;
        for (int p : parts) {
            if (value(p).cols != cols)
                throw std::invalid_argument("stack_rows: column count mismatch");
            rows += value(p).rows;
        }
        Tensor<T> out(rows, cols);
        std::size_t r = 0;
        for (int p : parts) {
            const Tensor<T>& P = value(p);
            std::copy(P.data.begin(), P.data.end(), out.row(r));
            r += P.rows;
        }
        return push(OpKind::StackRows, std::move(out), std::vector<int>(parts.begin(), parts.end()));
    }

    /// -log softmax(logits)[true_class] for a single [1 x C] logits row,
    /// computed in log space.
    int cross_entropy(int logits, int true_class) {
        const Tensor<T>& L = value(logits);
        if (L.rows != 1) throw std::invalid_argument("cross_entropy: logits must be [1 x C]");
        if (true_class < 0 || static_cast<std::size_t>(true_class) >= L.cols)
            throw std::invalid_argument("cross_entropy: class index out of range");
        Tensor<T> out(1, 1);
        std::vector<T> probs(L.cols);
        out.at(0, 0) = ce_row(L.row(0), L.cols, static_cast<std::size_t>(true_class), probs.data());
        const int node = push(OpKind::CrossEntropy, std::move(out), {logits});
        nodes_[node].aux_i = {true_class};
        save_aux(node, std::move(probs));
        return node;
    }

    /// Mean cross-entropy over a [B x C] logits batch.
    int ce_mean(int logits, std::span<const int> labels) {
        const Tensor<T>& L = value(logits);
        if (labels.size() != L.rows)
            throw std::invalid_argument("ce_mean: one label per logits row required");
        Tensor<T> out(1, 1);
        std::vector<T> probs(L.size());
        T sum{};
        for (std::size_t i = 0; i < L.rows; ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= L.cols)
                throw std::invalid_argument("ce_mean: class index out of range");
            sum += ce_row(L.row(i), L.cols, static_cast<std::size_t>(labels[i]),
                          probs.data() + i * L.cols);
        }
        out.at(0, 0) = sum / static_cast<T>(L.rows);
        const int node = push(OpKind::CeMean, std::move(out), {logits});
        nodes_[node].aux_i.assign(labels.begin(), labels.end());
        save_aux(node, std::move(probs));
        return node;
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar root, visiting nodes in exact reverse
    /// recording order and accumulating into input gradients.
    void backward(int root) {
        if (value(root).size() != 1)
            throw std::invalid_argument("backward: root must be a scalar");
        grad_ref(root).data[0] = T{1};
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            backward_one(id, n);
        }
    }

    const Tensor<T>& value(int id) const { return nodes_.at(id).value; }

    /// Gradient of a node, or nullptr if backward never reached it.
    const Tensor<T>* grad(int id) const {
        const Node& n = nodes_.at(id);
        return n.grad.size() ? &n.grad : nullptr;
    }

    // ---- workspace accounting and instrumentation -------------------------

    std::size_t peak_live_bytes() const { return peak_bytes_; }
    std::size_t current_live_bytes() const { return cur_bytes_; }
    std::size_t node_count() const { return nodes_.size(); }

    /// Smallest |x| seen by any relu in this pass; feeds the kink exclusion.
    double min_abs_preactivation() const { return relu_min_abs_; }
    /// Hash of the relu activation-sign pattern of this pass.
    std::uint64_t activation_pattern() const { return relu_pattern_; }

    void reset() {
        nodes_.clear();
        cur_bytes_ = 0;
        peak_bytes_ = 0;
        relu_min_abs_ = std::numeric_limits<double>::infinity();
        relu_pattern_ = 0xcbf29ce484222325ULL;
    }

private:
    struct Node {
        OpKind op = OpKind::Leaf;
        Tensor<T> value;
        Tensor<T> grad;                 // allocated on first backward touch
        std::vector<int> inputs;
        std::vector<std::int64_t> aux_i;
        std::vector<T> aux_t;           // saved activations (softmax probabilities)
        T aux_scalar{};
        bool needs_grad = false;
    };

    static std::string dims(const Tensor<T>& t) {
        return std::to_string(t.rows) + "x" + std::to_string(t.cols);
    }

    int push(OpKind op, Tensor<T> out, std::vector<int> inputs, bool leaf_requires_grad = false) {
        bool needs = leaf_requires_grad;
        for (int i : inputs) needs = needs || nodes_[i].needs_grad;
        for (const T& v : out.data)
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericalError(std::string("non-finite value produced by ") + op_name(op));
        Node n;
        n.op = op;
        n.value = std::move(out);
        n.inputs = std::move(inputs);
        n.needs_grad = needs;
        account(n.value.size() * sizeof(T));
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void save_aux(int id, std::vector<T> aux) {
        account(aux.size() * sizeof(T));
        nodes_[id].aux_t = std::move(aux);
    }

    void account(std::size_t bytes) {
        cur_bytes_ += bytes;
        peak_bytes_ = std::max(peak_bytes_, cur_bytes_);
    }

    Tensor<T>& grad_ref(int id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) {
            n.grad = Tensor<T>(n.value.rows, n.value.cols);
            account(n.grad.size() * sizeof(T));
        }
        return n.grad;
    }

    // Accumulate into an input's gradient only when that input wants one.
    Tensor<T>* input_grad(int id) {
        return nodes_[id].needs_grad ? &grad_ref(id) : nullptr;
    }

    static T ce_row(const T* logits, std::size_t c, std::size_t label, T* probs) {
        T mx = logits[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits[j]);
        T sum{};
        for (std::size_t j = 0; j < c; ++j) {
            probs[j] = std::exp(logits[j] - mx);
            sum += probs[j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[j] /= sum;
        const T logsumexp = mx + std::log(sum);
        return logsumexp - logits[label];
    }

    void backward_one(int id, Node& n) {
        const Tensor<T>& g = n.grad;
        switch (n.op) {
            case OpKind::Leaf:
                break;
            case OpKind::Matmul: {
                const Tensor<T>&A = value(n.inputs[0]), &B = value(n.inputs[1]);
                if (Tensor<T>* da = input_grad(n.inputs[0]))
                    detail::matmul_nt_acc(g.data.data(), B.data.data(), da->data.data(), g.rows,
                                          g.cols, B.rows);
                if (Tensor<T>* db = input_grad(n.inputs[1]))
                    detail::matmul_tn_acc(A.data.data(), g.data.data(), db->data.data(), A.cols,
                                          A.rows, g.cols);
                break;
            }
            case OpKind::MatmulNT: {
                // out = A * B^T: dA += g * B ; dB += g^T * A
                const Tensor<T>&A = value(n.inputs[0]), &B = value(n.inputs[1]);
                if (Tensor<T>* da = input_grad(n.inputs[0]))
                    detail::matmul_acc(g.data.data(), B.data.data(), da->data.data(), g.rows,
                                       g.cols, B.cols);
                if (Tensor<T>* db = input_grad(n.inputs[1]))
                    detail::matmul_tn_acc(g.data.data(), A.data.data(), db->data.data(), g.cols,
                                          g.rows, A.cols);
                break;
            }
            case OpKind::AddBias: {
                if (Tensor<T>* da = input_grad(n.inputs[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) da->data[i] += g.data[i];
                if (Tensor<T>* db = input_grad(n.inputs[1]))
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < g.cols; ++j) db->at(0, j) += g.at(i, j);
                break;
            }
            case OpKind::Relu: {
                const Tensor<T>& A = value(n.inputs[0]);
                if (Tensor<T>* da = input_grad(n.inputs[0]))
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (A.data[i] > T{}) da->data[i] += g.data[i];  // subgradient 0 at 0
                break;
            }
            case OpKind::MaskedMaxPool: {
                Tensor<T>* da = input_grad(n.inputs[0]);
                if (!da) break;
                const std::size_t D = g.cols;
                for (std::size_t gi = 0; gi < g.rows; ++gi)
                    for (std::size_t d = 0; d < D; ++d) {
                        const std::int64_t src = n.aux_i[gi * D + d];
                        if (src >= 0) da->at(static_cast<std::size_t>(src), d) += g.at(gi, d);
                    }
                break;
            }
            case OpKind::ReplaceEmptyRows: {
                Tensor<T>* dp = input_grad(n.inputs[0]);
                Tensor<T>* dt = input_grad(n.inputs[1]);
                for (std::size_t gi = 0; gi < g.rows; ++gi) {
                    const bool empty = n.aux_i[gi] != 0;
                    for (std::size_t d = 0; d < g.cols; ++d) {
                        if (empty) {
                            if (dt) dt->at(0, d) += g.at(gi, d);
                        } else if (dp) {
                            dp->at(gi, d) += g.at(gi, d);
                        }
                    }
                }
                break;
            }
            case OpKind::RowSoftmax: {
                Tensor<T>* da = input_grad(n.inputs[0]);
                if (!da) break;
                const Tensor<T>& y = n.value;
                for (std::size_t i = 0; i < y.rows; ++i) {
                    T dot{};
                    for (std::size_t j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
                    for (std::size_t j = 0; j < y.cols; ++j)
                        da->at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                }
                break;
            }
            case OpKind::Scale: {
                if (Tensor<T>* da = input_grad(n.inputs[0]))
                    for (std::size_t i = 0; i < g.size(); ++i)
                        da->data[i] += n.aux_scalar * g.data[i];
                break;
            }
            case OpKind::Add: {
                for (int in : n.inputs)
                    if (Tensor<T>* d = input_grad(in))
                        for (std::size_t i = 0; i < g.size(); ++i) d->data[i] += g.data[i];
                break;
            }
            case OpKind::ConcatCols: {
                const std::size_t ca = value(n.inputs[0]).cols;
                if (Tensor<T>* da = input_grad(n.inputs[0]))
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < ca; ++j) da->at(i, j) += g.at(i, j);
                if (Tensor<T>* db = input_grad(n.inputs[1]))
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = ca; j < g.cols; ++j)
                            db->at(i, j - ca) += g.at(i, j);
                break;
            }
            case OpKind::SliceRows: {
                if (Tensor<T>* da = input_grad(n.inputs[0])) {
                    const std::size_t start = static_cast<std::size_t>(n.aux_i[0]);
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < g.cols; ++j)
                            da->at(start + i, j) += g.at(i, j);
                }
                break;
            }
            case OpKind::StackRows: {
                std::size_t r = 0;
                for (int in : n.inputs) {
                    const std::size_t rows = value(in).rows;
                    if (Tensor<T>* d = input_grad(in))
                        for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < g.cols; ++j)
                                d->at(i, j) += g.at(r + i, j);
                    r += rows;
                }
                break;
            }
            case OpKind::CrossEntropy: {
                if (Tensor<T>* da = input_grad(n.inputs[0])) {
                    const T go = g.at(0, 0);
                    const std::size_t label = static_cast<std::size_t>(n.aux_i[0]);
                    for (std::size_t j = 0; j < da->cols; ++j)
                        da->at(0, j) += go * (n.aux_t[j] - (j == label ? T{1} : T{}));
                }
                break;
            }
            case OpKind::CeMean: {
                if (Tensor<T>* da = input_grad(n.inputs[0])) {
                    const T go = g.at(0, 0) / static_cast<T>(da->rows);
                    for (std::size_t i = 0; i < da->rows; ++i) {
                        const std::size_t label = static_cast<std::size_t>(n.aux_i[i]);
                        for (std::size_t j = 0; j < da->cols; ++j)
                            da->at(i, j) +=
                                go * (n.aux_t[i * da->cols + j] - (j == label ? T{1} : T{}));
                    }
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::size_t cur_bytes_ = 0;
    std::size_t peak_bytes_ = 0;
    double relu_min_abs_ = std::numeric_limits<double>::infinity();
    std::uint64_t relu_pattern_ = 0xcbf29ce484222325ULL;
};

// ---------------------------------------------------------------------------
// Attention composite
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionResult {
    int output;   // [1 x D]
    int weights;  // [1 x G], rows sum to 1
};

/// Single-query scaled dot-product attention over G key/value rows:
/// weights = softmax(q K^T / sqrt(D)), output = weights V.
template <typename T>
AttentionResult<T> scaled_dot_attention(Tape<T>& tape, int query, int keys, int values) {
    const auto& Q = tape.value(query);
    const auto& K = tape.value(keys);
    const auto& V = tape.value(values);
    if (Q.rows != 1 || Q.cols == 0) throw std::invalid_argument("attention: query must be [1 x D]");
    if (K.cols != Q.cols || V.cols != Q.cols || K.rows != V.rows || K.rows == 0)
        throw std::invalid_argument("attention: keys/values must be [G x D] matching the query");
    const int scores = tape.scale(tape.matmul_nt(query, keys),
                                  static_cast<T>(1.0 / std::sqrt(static_cast<double>(Q.cols))));
    const int weights = tape.row_softmax(scores);
    return {tape.matmul(weights, values), weights};
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::vector<T> m, v;
    std::int64_t step = 0;
    T learning_rate;
    T beta1, beta2, epsilon;

    explicit AdamState(std::size_t n, T lr = static_cast<T>(1e-3), T b1 = static_cast<T>(0.9),
                       T b2 = static_cast<T>(0.999), T eps = static_cast<T>(1e-8))
        : m(n, T{}), v(n, T{}), learning_rate(lr), beta1(b1), beta2(b2), epsilon(eps) {}

    std::size_t bytes() const { return (m.size() + v.size()) * sizeof(T); }
};

/// One bias-corrected Adam update, in place.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state sizes disagree");
    ++state.step;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double gi = grads[i];
        const double mi = b1 * state.m[i] + (1.0 - b1) * gi;
        const double vi = b2 * state.v[i] + (1.0 - b2) * gi * gi;
        state.m[i] = static_cast<T>(mi);
        state.v[i] = static_cast<T>(vi);
        const double mhat = mi / c1;
        const double vhat = vi / c2;
        params[i] -= static_cast<T>(state.learning_rate * mhat /
                                    (std::sqrt(vhat) + state.epsilon));
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification
// ---------------------------------------------------------------------------

/// One loss evaluation plus the relu instrumentation needed for kink handling.
struct LossEval {
    double loss = 0.0;
    std::uint64_t activation_pattern = 0;
    double min_abs_preactivation = std::numeric_limits<double>::infinity();
};

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t n_checked = 0;
    std::size_t n_excluded = 0;
    int worst_coord = -1;
    double tolerance = 0.0;
    bool passed = true;
};

inline constexpr double kKinkEps = 1e-6;

/// Central-difference check of `analytic_grad` on a random subsample of
/// coordinates. A coordinate is excluded when the nominal pass has a relu
/// pre-activation below kKinkEps or when the theta+h / theta-h activation
/// patterns differ (the step crossed a kink, invalidating the central
/// difference). Coordinates where both gradients are below 1e-10 count as
/// agreeing.
template <typename LossFn>
FdReport finite_difference_check(LossFn&& loss_fn, std::span<double> params,
                                 std::span<const double> analytic_grad, double h,
                                 double tolerance, std::size_t n_coords, std::uint64_t seed) {
    if (analytic_grad.size() != params.size())
        throw std::invalid_argument("finite_difference_check: gradient size mismatch");
    FdReport report;
    report.tolerance = tolerance;
    if (n_coords == 0 || params.empty()) return report;

    std::vector<std::size_t> coords(params.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (n_coords < coords.size()) {
        Rng rng(derive_seed(seed, tag_hash("fd-coords")));
        rng.shuffle(coords);
        coords.resize(n_coords);
    }

    for (std::size_t ci : coords) {
        const double saved = params[ci];
        params[ci] = saved + h;
        const LossEval up = loss_fn(std::span<const double>(params.data(), params.size()));
        params[ci] = saved - h;
        const LossEval down = loss_fn(std::span<const double>(params.data(), params.size()));
        params[ci] = saved;
        if (!std::isfinite(up.loss) || !std::isfinite(down.loss))
            throw NumericalError("finite_difference_check: non-finite loss");

        if (up.activation_pattern != down.activation_pattern ||
            std::min(up.min_abs_preactivation, down.min_abs_preactivation) < kKinkEps) {
            ++report.n_excluded;
            continue;
        }
        const double fd = (up.loss - down.loss) / (2.0 * h);
        const double an = analytic_grad[ci];
        ++report.n_checked;
        const double denom = std::max(std::abs(fd), std::abs(an));
        if (denom < 1e-10) continue;
        const double rel = std::abs(fd - an) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_coord = static_cast<int>(ci);
        }
    }
    report.passed = report.max_rel_err < tolerance;
    return report;
}

}  // namespace neuroaps::ad
