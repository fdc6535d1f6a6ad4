#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrnn/errors.hpp"

namespace mrnn {

// ---------------------------------------------------------------------------
// Shapes and plain tensors
// ---------------------------------------------------------------------------

// Rank 0 (scalar), 1 (column vector) or 2 (row-major matrix).
struct Shape {
    int rank = 0;
    long rows = 1;
    long cols = 1;

    static Shape scalar() { return {0, 1, 1}; }
    static Shape vec(long n) { return {1, n, 1}; }
    static Shape mat(long r, long c) { return {2, r, c}; }

    long numel() const { return rows * cols; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        if (rank == 0) {
            os << "()";
        } else if (rank == 1) {
            os << "(" << rows << ")";
        } else {
            os << "(" << rows << "x" << cols << ")";
        }
        return os.str();
    }
};

// A value with no tape affiliation: parameters, data, and test points.
struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> values) : shape(s), v(std::move(values)) {
        if (shape.rows < 0 || shape.cols < 0) {
            throw ShapeError("tensor extents must be nonnegative, got " + shape.str());
        }
        if (shape.numel() != static_cast<long>(v.size())) {
            throw ShapeError("tensor value count " + std::to_string(v.size()) +
                             " does not match shape " + shape.str());
        }
    }

    static Tensor scalar(double x) { return Tensor(Shape::scalar(), {x}); }
    static Tensor vec(std::vector<double> values) {
        long n = static_cast<long>(values.size());
        return Tensor(Shape::vec(n), std::move(values));
    }
    static Tensor mat(long r, long c, std::vector<double> values) {
        return Tensor(Shape::mat(r, c), std::move(values));
    }
    static Tensor zeros(Shape s) { return Tensor(s, std::vector<double>(s.numel(), 0.0)); }

    double& at(long i) { return v[i]; }
    double at(long i) const { return v[i]; }
    double& at(long i, long j) { return v[i * shape.cols + j]; }
    double at(long i, long j) const { return v[i * shape.cols + j]; }
};

// ---------------------------------------------------------------------------
// Recorded operations
// ---------------------------------------------------------------------------

enum class Op : std::uint8_t {
    Leaf,
    Matmul,
    Add,
    AddCols,  // matrix + column-vector broadcast
    Sub,
    Mul,      // elementwise
    Concat,   // stack along rows
    ConcatCols,
    Col,      // extract one column
    Sigmoid,
    Tanh,
    Softmax,  // per column for matrices
    Sum,
    Mean,
    Abs,
    Square,
    L2Norm,
    Scale,          // multiply by a fixed constant
    QuadraticForm,  // -1/2 v^T (LL^T) v, lower triangle of L
    CosineScores,   // eps-guarded cosine of h against each column of U
    Embed,          // gather rows of E as columns
    CrossEntropyLogits,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Matmul: return "matmul";
        case Op::Add: return "add";
        case Op::AddCols: return "add-cols";
        case Op::Sub: return "sub";
        case Op::Mul: return "elementwise-mul";
        case Op::Concat: return "concat";
        case Op::ConcatCols: return "concat-cols";
        case Op::Col: return "col";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Softmax: return "softmax";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Abs: return "abs";
        case Op::Square: return "square";
        case Op::L2Norm: return "l2-norm";
        case Op::Scale: return "scale";
        case Op::QuadraticForm: return "quadratic-form";
        case Op::CosineScores: return "cosine-scores";
        case Op::Embed: return "embed";
        case Op::CrossEntropyLogits: return "cross-entropy-logits";
    }
    return "?";
}

class Tape;

// Handle to one node of a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

// ---------------------------------------------------------------------------
// Tape: define-by-run graph with eager forward and reverse-mode backward.
//
// Values live in one arena per tape; leaves may reference external storage
// (parameters) without copying. A tape is confined to one thread. reset()
// keeps the allocated capacity so a tape can be reused across minibatches.
// ---------------------------------------------------------------------------

class Tape {
public:
    static constexpr double kCosineEps = 1e-8;

    // Leaf whose values are copied into the tape arena.
    Var leaf(const Tensor& t) { return push_leaf(t.shape, nullptr, t.v.data()); }

    // Leaf that views caller-owned storage; it must outlive tape use.
    Var leaf_view(Shape s, const double* p) { return push_leaf(s, p, nullptr); }

    Var constant(Shape s, const double* p) { return push_leaf(s, nullptr, p); }
    Var constant(const Tensor& t) { return constant(t.shape, t.v.data()); }
    Var zeros(Shape s) {
        scratch_.assign(s.numel(), 0.0);
        return constant(s, scratch_.data());
    }

    // Generic entry point; named wrappers below forward to this.
    Var apply(Op op, std::span<const Var> inputs, double c = 0.0, long j = 0,
              std::span<const long> ids = {});
    Var apply(Op op, std::initializer_list<Var> inputs, double c = 0.0, long j = 0,
              std::span<const long> ids = {}) {
        return apply(op, std::span<const Var>(inputs.begin(), inputs.size()), c, j, ids);
    }

    Var matmul(Var a, Var b) { return apply(Op::Matmul, {a, b}); }
    Var add(Var a, Var b) { return apply(Op::Add, {a, b}); }
    Var add_cols(Var m, Var v) { return apply(Op::AddCols, {m, v}); }
    Var sub(Var a, Var b) { return apply(Op::Sub, {a, b}); }
    Var mul(Var a, Var b) { return apply(Op::Mul, {a, b}); }
    Var concat(std::span<const Var> xs) { return apply(Op::Concat, xs); }
    Var concat(std::initializer_list<Var> xs) { return apply(Op::Concat, xs); }
    Var concat_cols(std::span<const Var> xs) { return apply(Op::ConcatCols, xs); }
    Var concat_cols(std::initializer_list<Var> xs) { return apply(Op::ConcatCols, xs); }
    Var col(Var m, long j) { return apply(Op::Col, {m}, 0.0, j); }
    Var sigmoid(Var x) { return apply(Op::Sigmoid, {x}); }
    Var tanh(Var x) { return apply(Op::Tanh, {x}); }
    Var softmax(Var x) { return apply(Op::Softmax, {x}); }
    Var sum(Var x) { return apply(Op::Sum, {x}); }
    Var mean(Var x) { return apply(Op::Mean, {x}); }
    Var abs(Var x) { return apply(Op::Abs, {x}); }
    Var square(Var x) { return apply(Op::Square, {x}); }
    Var l2norm(Var x) { return apply(Op::L2Norm, {x}); }
    Var scale(Var x, double c) { return apply(Op::Scale, {x}, c); }
    Var quadratic_form(Var v, Var L) { return apply(Op::QuadraticForm, {v, L}); }
    Var cosine_scores(Var h, Var u) { return apply(Op::CosineScores, {h, u}); }
    Var embed(Var e, std::span<const long> ids) { return apply(Op::Embed, {e}, 0.0, 0, ids); }
    Var cross_entropy_logits(Var z, std::span<const long> targets) {
        return apply(Op::CrossEntropyLogits, {z}, 0.0, 0, targets);
    }

    Shape shape(Var x) const { return node_at(x).shape; }
    std::span<const double> value(Var x) const {
        const Node& n = node_at(x);
        return {value_ptr(n), static_cast<std::size_t>(n.shape.numel())};
    }
    Tensor value_tensor(Var x) const {
        auto sp = value(x);
        return Tensor(shape(x), std::vector<double>(sp.begin(), sp.end()));
    }

    // Reverse sweep from a scalar loss. Every node reachable from the loss
    // receives a gradient of its own shape; others stay zero.
    void backward(Var loss);

    bool has_gradients() const { return has_grads_; }
    std::span<const double> grad(Var x) const {
        if (!has_grads_) {
            throw std::logic_error("gradient requested before backward was run");
        }
        const Node& n = node_at(x);
        return {gbuf_.data() + n.goff, static_cast<std::size_t>(n.shape.numel())};
    }
    Tensor grad_tensor(Var x) const {
        auto sp = grad(x);
        return Tensor(shape(x), std::vector<double>(sp.begin(), sp.end()));
    }

    std::size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        buf_.clear();
        gbuf_.clear();
        vtotal_ = 0;
        gtotal_ = 0;
        has_grads_ = false;
    }

private:
    struct Node {
        Op op = Op::Leaf;
        Shape shape;
        int in[3] = {-1, -1, -1};
        int nin = 0;
        std::vector<int> more;    // inputs beyond the first three
        const double* ext = nullptr;  // external leaf storage
        long off = -1;            // value offset in buf_ (arena-backed nodes)
        long goff = 0;            // gradient offset in gbuf_
        double c = 0.0;           // Scale constant
        long j = 0;               // Col index
        std::vector<long> ids;    // Embed / CrossEntropyLogits targets

        int input(int k) const { return k < 3 ? in[k] : more[k - 3]; }
    };

    const Node& node_at(Var x) const {
        if (x.tape != this || x.id < 0 || x.id >= static_cast<int>(nodes_.size())) {
            throw std::logic_error("variable does not belong to this tape");
        }
        return nodes_[x.id];
    }

    const double* value_ptr(const Node& n) const {
        return n.ext != nullptr ? n.ext : buf_.data() + n.off;
    }

    Var push_leaf(Shape s, const double* external, const double* copied) {
        if (s.rows < 0 || s.cols < 0) {
            throw ShapeError("leaf extents must be nonnegative, got " + s.str());
        }
        Node n;
        n.op = Op::Leaf;
        n.shape = s;
        n.goff = gtotal_;
        gtotal_ += s.numel();
        if (external != nullptr) {
            n.ext = external;
        } else {
            n.off = vtotal_;
            vtotal_ += s.numel();
            buf_.resize(vtotal_);
            std::memcpy(buf_.data() + n.off, copied, sizeof(double) * s.numel());
        }
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    // Shape checking + forward evaluation; returns the output shape.
    Shape infer_and_check(Op op, const std::vector<Shape>& in, double c, long j,
                          std::span<const long> ids) const;
    void forward(Node& n);
    void backward_node(int k);

    double* gptr(int id) { return gbuf_.data() + nodes_[id].goff; }

    [[noreturn]] void fail(Op op, const std::string& msg) const {
        throw ShapeError(std::string(op_name(op)) + ": " + msg);
    }

    std::vector<Node> nodes_;
    std::vector<double> buf_;
    std::vector<double> gbuf_;
    std::vector<double> scratch_;
    std::vector<std::uint8_t> touched_;
    long vtotal_ = 0;
    long gtotal_ = 0;
    bool has_grads_ = false;
};

// ---------------------------------------------------------------------------
// Shape rules
// ---------------------------------------------------------------------------

inline Shape Tape::infer_and_check(Op op, const std::vector<Shape>& in, double /*c*/, long j,
                                   std::span<const long> ids) const {
    auto want_arity = [&](std::size_t k) {
        if (in.size() != k) {
            fail(op, "expected " + std::to_string(k) + " inputs, got " + std::to_string(in.size()));
        }
    };
    switch (op) {
        case Op::Leaf:
            fail(op, "leaves are created via leaf()/constant(), not apply()");
        case Op::Matmul: {
            want_arity(2);
            const Shape &a = in[0], &b = in[1];
            if (a.rank != 2 || (b.rank != 1 && b.rank != 2) || a.cols != b.rows) {
                fail(op, "cannot multiply " + a.str() + " by " + b.str());
            }
            return b.rank == 1 ? Shape::vec(a.rows) : Shape::mat(a.rows, b.cols);
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            want_arity(2);
            if (!(in[0] == in[1])) {
                fail(op, "shape mismatch " + in[0].str() + " vs " + in[1].str());
            }
            return in[0];
        }
        case Op::AddCols: {
            want_arity(2);
            if (in[0].rank != 2 || in[1].rank != 1 || in[0].rows != in[1].rows) {
                fail(op, "need matrix + column vector, got " + in[0].str() + " and " + in[1].str());
            }
            return in[0];
        }
        case Op::Concat: {
            if (in.empty()) fail(op, "needs at least one input");
            long rows = 0;
            for (const Shape& s : in) {
                if (s.rank != in[0].rank || s.rank == 0 || s.cols != in[0].cols) {
                    fail(op, "inputs must share rank and column count, got " + s.str() +
                                 " after " + in[0].str());
                }
                rows += s.rows;
            }
            return in[0].rank == 1 ? Shape::vec(rows) : Shape::mat(rows, in[0].cols);
        }
        case Op::ConcatCols: {
            if (in.empty()) fail(op, "needs at least one input");
            long cols = 0;
            for (const Shape& s : in) {
                if (s.rank == 0 || s.rows != in[0].rows) {
                    fail(op, "inputs must share row count, got " + s.str() + " after " +
                                 in[0].str());
                }
                cols += s.rank == 1 ? 1 : s.cols;
            }
            return Shape::mat(in[0].rows, cols);
        }
        case Op::Col: {
            want_arity(1);
            if (in[0].rank != 2 || j < 0 || j >= in[0].cols) {
                fail(op, "column " + std::to_string(j) + " out of range for " + in[0].str());
            }
            return Shape::vec(in[0].rows);
        }
        case Op::Sigmoid:
        case Op::Tanh:
        case Op::Abs:
        case Op::Square:
        case Op::Scale:
            want_arity(1);
            return in[0];
        case Op::Softmax: {
            want_arity(1);
            if (in[0].rank == 0 || in[0].numel() == 0) {
                fail(op, "needs a nonempty vector or matrix, got " + in[0].str());
            }
            return in[0];
        }
        case Op::Sum:
            want_arity(1);
            return Shape::scalar();
        case Op::Mean:
        case Op::L2Norm: {
            want_arity(1);
            if (in[0].numel() == 0) fail(op, "input is empty");
            return Shape::scalar();
        }
        case Op::QuadraticForm: {
            want_arity(2);
            if ((in[0].rank != 1 && in[0].rank != 2) || in[1].rank != 2 ||
                in[1].rows != in[1].cols || in[1].rows != in[0].rows) {
                fail(op, "need column(s) and a square matrix, got " + in[0].str() + " and " +
                             in[1].str());
            }
            return in[0].rank == 1 ? Shape::scalar() : Shape::vec(in[0].cols);
        }
        case Op::CosineScores: {
            want_arity(2);
            const Shape &h = in[0], &u = in[1];
            if ((h.rank != 1 && h.rank != 2) || u.rank != 2 || h.rows != u.rows) {
                fail(op, "need state " + h.str() + " to match prototype rows of " + u.str());
            }
            return h.rank == 1 ? Shape::vec(u.cols) : Shape::mat(u.cols, h.cols);
        }
        case Op::Embed: {
            want_arity(1);
            if (in[0].rank != 2) fail(op, "embedding table must be a matrix, got " + in[0].str());
            if (ids.empty()) fail(op, "needs at least one token id");
            for (long t : ids) {
                if (t < 0 || t >= in[0].rows) {
                    fail(op, "token id " + std::to_string(t) + " out of range for " + in[0].str());
                }
            }
            return Shape::mat(in[0].cols, static_cast<long>(ids.size()));
        }
        case Op::CrossEntropyLogits: {
            want_arity(1);
            const Shape& z = in[0];
            long t = z.rank == 1 ? 1 : z.cols;
            if (z.rank == 0 || static_cast<long>(ids.size()) != t) {
                fail(op, "logits " + z.str() + " need exactly " + std::to_string(t) +
                             " target ids, got " + std::to_string(ids.size()));
            }
            for (long id : ids) {
                if (id < 0 || id >= z.rows) {
                    fail(op, "target id " + std::to_string(id) + " out of range for " + z.str());
                }
            }
            return Shape::scalar();
        }
    }
    fail(op, "unhandled op");
}

inline Var Tape::apply(Op op, std::span<const Var> inputs, double c, long j,
                       std::span<const long> ids) {
    std::vector<Shape> shapes;
    shapes.reserve(inputs.size());
    for (const Var& x : inputs) {
        shapes.push_back(node_at(x).shape);
    }
    Node n;
    n.op = op;
    n.shape = infer_and_check(op, shapes, c, j, ids);
    n.nin = static_cast<int>(inputs.size());
    for (int k = 0; k < n.nin; ++k) {
        if (k < 3) {
            n.in[k] = inputs[k].id;
        } else {
            n.more.push_back(inputs[k].id);
        }
    }
    n.c = c;
    n.j = j;
    n.ids.assign(ids.begin(), ids.end());
    n.goff = gtotal_;
    gtotal_ += n.shape.numel();
    n.off = vtotal_;
    vtotal_ += n.shape.numel();
    buf_.resize(vtotal_);
    forward(n);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

// ---------------------------------------------------------------------------
// Forward evaluation
// ---------------------------------------------------------------------------

inline void Tape::forward(Node& n) {
    double* out = buf_.data() + n.off;
    auto inv = [&](int k) -> const double* { return value_ptr(nodes_[n.input(k)]); };
    auto insh = [&](int k) -> const Shape& { return nodes_[n.input(k)].shape; };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Matmul: {
            const Shape &sa = insh(0), &sb = insh(1);
            const double *a = inv(0), *b = inv(1);
            const long r = sa.rows, k = sa.cols, cc = sb.cols;
            std::fill(out, out + r * cc, 0.0);
            for (long i = 0; i < r; ++i) {
                for (long kk = 0; kk < k; ++kk) {
                    const double av = a[i * k + kk];
                    const double* brow = b + kk * cc;
                    double* orow = out + i * cc;
                    for (long jj = 0; jj < cc; ++jj) {
                        orow[jj] += av * brow[jj];
                    }
                }
            }
            break;
        }
        case Op::Add: {
            const double *a = inv(0), *b = inv(1);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) out[i] = a[i] + b[i];
            break;
        }
        case Op::AddCols: {
            const double *a = inv(0), *b = inv(1);
            const long r = n.shape.rows, cc = n.shape.cols;
            for (long i = 0; i < r; ++i) {
                for (long jj = 0; jj < cc; ++jj) out[i * cc + jj] = a[i * cc + jj] + b[i];
            }
            break;
        }
        case Op::Sub: {
            const double *a = inv(0), *b = inv(1);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) out[i] = a[i] - b[i];
            break;
        }
        case Op::Mul: {
            const double *a = inv(0), *b = inv(1);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) out[i] = a[i] * b[i];
            break;
        }
        case Op::Concat: {
            long row0 = 0;
            const long cc = n.shape.cols;
            for (int k = 0; k < n.nin; ++k) {
                const Shape& s = insh(k);
                std::memcpy(out + row0 * cc, inv(k), sizeof(double) * s.rows * cc);
                row0 += s.rows;
            }
            break;
        }
        case Op::ConcatCols: {
            const long r = n.shape.rows, cc = n.shape.cols;
            long col0 = 0;
            for (int k = 0; k < n.nin; ++k) {
                const Shape& s = insh(k);
                const long w = s.rank == 1 ? 1 : s.cols;
                const double* src = inv(k);
                for (long i = 0; i < r; ++i) {
                    for (long jj = 0; jj < w; ++jj) out[i * cc + col0 + jj] = src[i * w + jj];
                }
                col0 += w;
            }
            break;
        }
        case Op::Col: {
            const Shape& s = insh(0);
            const double* a = inv(0);
            for (long i = 0; i < s.rows; ++i) out[i] = a[i * s.cols + n.j];
            break;
        }
        case Op::Sigmoid: {
            const double* a = inv(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
            break;
        }
        case Op::Tanh: {
            const double* a = inv(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) out[i] = std::tanh(a[i]);
            break;
        }
        case Op::Softmax: {
            // exp(s - max(s)) / sum, one column at a time.
            const Shape& s = insh(0);
            const double* a = inv(0);
            const long r = s.rows, cc = s.cols;
            for (long jj = 0; jj < cc; ++jj) {
                double m = a[jj];
                for (long i = 1; i < r; ++i) m = std::max(m, a[i * cc + jj]);
                double z = 0.0;
                for (long i = 0; i < r; ++i) {
                    const double e = std::exp(a[i * cc + jj] - m);
                    out[i * cc + jj] = e;
                    z += e;
                }
                for (long i = 0; i < r; ++i) out[i * cc + jj] /= z;
            }
            break;
        }
        case Op::Sum: {
            const double* a = inv(0);
            double acc = 0.0;
            for (long i = 0, e = insh(0).numel(); i < e; ++i) acc += a[i];
            out[0] = acc;
            break;
        }
        case Op::Mean: {
            const double* a = inv(0);
            const long e = insh(0).numel();
            double acc = 0.0;
            for (long i = 0; i < e; ++i) acc += a[i];
            out[0] = acc / static_cast<double>(e);
            break;
        }
        case Op::Abs: {
            const double* a = inv(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) out[i] = std::fabs(a[i]);
            break;
        }
        case Op::Square: {
            const double* a = inv(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) out[i] = a[i] * a[i];
            break;
        }
        case Op::L2Norm: {
            const double* a = inv(0);
            double acc = 0.0;
            for (long i = 0, e = insh(0).numel(); i < e; ++i) acc += a[i] * a[i];
            out[0] = std::sqrt(acc);
            break;
        }
        case Op::Scale: {
            const double* a = inv(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) out[i] = n.c * a[i];
            break;
        }
        case Op::QuadraticForm: {
            // per column: s_j = -1/2 ||tril(L)^T v_j||^2
            const double *v = inv(0), *L = inv(1);
            const long h = insh(0).rows, b = insh(0).cols;
            for (long col = 0; col < b; ++col) {
                double acc = 0.0;
                for (long jj = 0; jj < h; ++jj) {
                    double w = 0.0;
                    for (long i = jj; i < h; ++i) w += L[i * h + jj] * v[i * b + col];
                    acc += w * w;
                }
                out[col] = -0.5 * acc;
            }
            break;
        }
        case Op::CosineScores: {
            const Shape &sh = insh(0), &su = insh(1);
            const double *hv = inv(0), *u = inv(1);
            const long d = su.rows, nproto = su.cols, b = sh.cols;
            for (long jj = 0; jj < b; ++jj) {
                double hn = 0.0;
                for (long i = 0; i < d; ++i) {
                    const double x = hv[i * b + jj];
                    hn += x * x;
                }
                hn = std::max(std::sqrt(hn), kCosineEps);
                for (long p = 0; p < nproto; ++p) {
                    double dot = 0.0, un = 0.0;
                    for (long i = 0; i < d; ++i) {
                        const double uv = u[i * nproto + p];
                        dot += hv[i * b + jj] * uv;
                        un += uv * uv;
                    }
                    un = std::max(std::sqrt(un), kCosineEps);
                    out[p * b + jj] = dot / (hn * un);
                }
            }
            break;
        }
        case Op::Embed: {
            const Shape& se = insh(0);
            const double* e = inv(0);
            const long dim = se.cols, t = static_cast<long>(n.ids.size());
            for (long k = 0; k < t; ++k) {
                const double* row = e + n.ids[k] * dim;
                for (long i = 0; i < dim; ++i) out[i * t + k] = row[i];
            }
            break;
        }
        case Op::CrossEntropyLogits: {
            const Shape& sz = insh(0);
            const double* z = inv(0);
            const long v = sz.rows, t = sz.cols;
            double acc = 0.0;
            for (long jj = 0; jj < t; ++jj) {
                double m = z[jj];
                for (long i = 1; i < v; ++i) m = std::max(m, z[i * t + jj]);
                double s = 0.0;
                for (long i = 0; i < v; ++i) s += std::exp(z[i * t + jj] - m);
                acc += m + std::log(s) - z[n.ids[jj] * t + jj];
            }
            out[0] = acc / static_cast<double>(t);
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

inline void Tape::backward(Var loss) {
    const Node& ln = node_at(loss);
    if (ln.shape.numel() != 1) {
        throw ShapeError("backward needs a scalar loss, got " + ln.shape.str());
    }
    if (nodes_.empty()) {
        throw std::logic_error("backward called on an empty tape");
    }
    gbuf_.assign(gtotal_, 0.0);
    touched_.assign(nodes_.size(), 0);
    gbuf_[ln.goff] = 1.0;
    touched_[loss.id] = 1;
    for (int k = loss.id; k >= 0; --k) {
        if (!touched_[k] || nodes_[k].op == Op::Leaf) continue;
        backward_node(k);
    }
    has_grads_ = true;
}

inline void Tape::backward_node(int k) {
    Node& n = nodes_[k];
    const double* g = gbuf_.data() + n.goff;
    const double* y = value_ptr(n);
    auto inv = [&](int i) -> const double* { return value_ptr(nodes_[n.input(i)]); };
    auto insh = [&](int i) -> const Shape& { return nodes_[n.input(i)].shape; };
    auto ing = [&](int i) -> double* {
        touched_[n.input(i)] = 1;
        return gbuf_.data() + nodes_[n.input(i)].goff;
    };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Matmul: {
            const Shape &sa = insh(0), &sb = insh(1);
            const double *a = inv(0), *b = inv(1);
            double *ga = ing(0), *gb = ing(1);
            const long r = sa.rows, kk = sa.cols, cc = sb.cols;
            for (long i = 0; i < r; ++i) {
                const double* grow = g + i * cc;
                for (long q = 0; q < kk; ++q) {
                    const double* brow = b + q * cc;
                    double s = 0.0;
                    for (long jj = 0; jj < cc; ++jj) s += grow[jj] * brow[jj];
                    ga[i * kk + q] += s;
                    const double av = a[i * kk + q];
                    double* gbrow = gb + q * cc;
                    for (long jj = 0; jj < cc; ++jj) gbrow[jj] += av * grow[jj];
                }
            }
            break;
        }
        case Op::Add: {
            double *ga = ing(0), *gb = ing(1);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
            break;
        }
        case Op::AddCols: {
            double *ga = ing(0), *gb = ing(1);
            const long r = n.shape.rows, cc = n.shape.cols;
            for (long i = 0; i < r; ++i) {
                double s = 0.0;
                for (long jj = 0; jj < cc; ++jj) {
                    ga[i * cc + jj] += g[i * cc + jj];
                    s += g[i * cc + jj];
                }
                gb[i] += s;
            }
            break;
        }
        case Op::Sub: {
            double *ga = ing(0), *gb = ing(1);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
            break;
        }
        case Op::Mul: {
            const double *a = inv(0), *b = inv(1);
            double *ga = ing(0), *gb = ing(1);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) {
                ga[i] += g[i] * b[i];
                gb[i] += g[i] * a[i];
            }
            break;
        }
        case Op::Concat: {
            long row0 = 0;
            const long cc = n.shape.cols;
            for (int k2 = 0; k2 < n.nin; ++k2) {
                const Shape& s = insh(k2);
                double* gi = ing(k2);
                const double* gsrc = g + row0 * cc;
                for (long i = 0, e = s.rows * cc; i < e; ++i) gi[i] += gsrc[i];
                row0 += s.rows;
            }
            break;
        }
        case Op::ConcatCols: {
            const long r = n.shape.rows, cc = n.shape.cols;
            long col0 = 0;
            for (int k2 = 0; k2 < n.nin; ++k2) {
                const Shape& s = insh(k2);
                const long w = s.rank == 1 ? 1 : s.cols;
                double* gi = ing(k2);
                for (long i = 0; i < r; ++i) {
                    for (long jj = 0; jj < w; ++jj) gi[i * w + jj] += g[i * cc + col0 + jj];
                }
                col0 += w;
            }
            break;
        }
        case Op::Col: {
            const Shape& s = insh(0);
            double* ga = ing(0);
            for (long i = 0; i < s.rows; ++i) ga[i * s.cols + n.j] += g[i];
            break;
        }
        case Op::Sigmoid: {
            double* ga = ing(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
            break;
        }
        case Op::Tanh: {
            double* ga = ing(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
            break;
        }
        case Op::Softmax: {
            double* ga = ing(0);
            const long r = n.shape.rows, cc = n.shape.cols;
            for (long jj = 0; jj < cc; ++jj) {
                double dot = 0.0;
                for (long i = 0; i < r; ++i) dot += g[i * cc + jj] * y[i * cc + jj];
                for (long i = 0; i < r; ++i) {
                    ga[i * cc + jj] += y[i * cc + jj] * (g[i * cc + jj] - dot);
                }
            }
            break;
        }
        case Op::Sum: {
            double* ga = ing(0);
            for (long i = 0, e = insh(0).numel(); i < e; ++i) ga[i] += g[0];
            break;
        }
        case Op::Mean: {
            double* ga = ing(0);
            const long e = insh(0).numel();
            const double gv = g[0] / static_cast<double>(e);
            for (long i = 0; i < e; ++i) ga[i] += gv;
            break;
        }
        case Op::Abs: {
            const double* a = inv(0);
            double* ga = ing(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) {
                ga[i] += a[i] > 0.0 ? g[i] : (a[i] < 0.0 ? -g[i] : 0.0);
            }
            break;
        }
        case Op::Square: {
            const double* a = inv(0);
            double* ga = ing(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) ga[i] += 2.0 * a[i] * g[i];
            break;
        }
        case Op::L2Norm: {
            const double* a = inv(0);
            double* ga = ing(0);
            if (y[0] > 0.0) {
                const double gv = g[0] / y[0];
                for (long i = 0, e = insh(0).numel(); i < e; ++i) ga[i] += gv * a[i];
            }
            break;
        }
        case Op::Scale: {
            double* ga = ing(0);
            for (long i = 0, e = n.shape.numel(); i < e; ++i) ga[i] += n.c * g[i];
            break;
        }
        case Op::QuadraticForm: {
            const double *v = inv(0), *L = inv(1);
            double *gv = ing(0), *gl = ing(1);
            const long h = insh(0).rows, b = insh(0).cols;
            // per column: w = tril(L)^T v; ds/dv = -tril(L) w; ds/dL = -tril(v w^T)
            for (long col = 0; col < b; ++col) {
                const double gs = g[col];
                for (long jj = 0; jj < h; ++jj) {
                    double w = 0.0;
                    for (long i = jj; i < h; ++i) w += L[i * h + jj] * v[i * b + col];
                    const double gw = gs * w;
                    for (long i = jj; i < h; ++i) {
                        gv[i * b + col] -= gw * L[i * h + jj];
                        gl[i * h + jj] -= gs * v[i * b + col] * w;
                    }
                }
            }
            break;
        }
        case Op::CosineScores: {
            const Shape &sh = insh(0), &su = insh(1);
            const double *hv = inv(0), *u = inv(1);
            double *gh = ing(0), *gu = ing(1);
            const long d = su.rows, nproto = su.cols, b = sh.cols;
            for (long jj = 0; jj < b; ++jj) {
                double hn2 = 0.0;
                for (long i = 0; i < d; ++i) {
                    const double x = hv[i * b + jj];
                    hn2 += x * x;
                }
                const double hnorm = std::sqrt(hn2);
                const double ha = std::max(hnorm, kCosineEps);
                for (long p = 0; p < nproto; ++p) {
                    const double gs = g[p * b + jj];
                    if (gs == 0.0) continue;
                    double un2 = 0.0;
                    for (long i = 0; i < d; ++i) {
                        const double uv = u[i * nproto + p];
                        un2 += uv * uv;
                    }
                    const double unorm = std::sqrt(un2);
                    const double ua = std::max(unorm, kCosineEps);
                    const double s = y[p * b + jj];
                    const double inv_den = 1.0 / (ha * ua);
                    const double hterm = hnorm > kCosineEps ? s / hn2 : 0.0;
                    const double uterm = unorm > kCosineEps ? s / un2 : 0.0;
                    for (long i = 0; i < d; ++i) {
                        const double xv = hv[i * b + jj];
                        const double uv = u[i * nproto + p];
                        gh[i * b + jj] += gs * (uv * inv_den - hterm * xv);
                        gu[i * nproto + p] += gs * (xv * inv_den - uterm * uv);
                    }
                }
            }
            break;
        }
        case Op::Embed: {
            const Shape& se = insh(0);
            double* ge = ing(0);
            const long dim = se.cols, t = static_cast<long>(n.ids.size());
            for (long k2 = 0; k2 < t; ++k2) {
                double* grow = ge + n.ids[k2] * dim;
                for (long i = 0; i < dim; ++i) grow[i] += g[i * t + k2];
            }
            break;
        }
        case Op::CrossEntropyLogits: {
            const Shape& sz = insh(0);
            const double* z = inv(0);
            double* gz = ing(0);
            const long v = sz.rows, t = sz.cols;
            const double gv = g[0] / static_cast<double>(t);
            for (long jj = 0; jj < t; ++jj) {
                double m = z[jj];
                for (long i = 1; i < v; ++i) m = std::max(m, z[i * t + jj]);
                double s = 0.0;
                for (long i = 0; i < v; ++i) s += std::exp(z[i * t + jj] - m);
                const double inv_s = 1.0 / s;
                for (long i = 0; i < v; ++i) {
                    gz[i * t + jj] += gv * std::exp(z[i * t + jj] - m) * inv_s;
                }
                gz[n.ids[jj] * t + jj] -= gv;
            }
            break;
        }
    }
}

}  // namespace mrnn
