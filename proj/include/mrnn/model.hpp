#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mrnn/autodiff.hpp"
#include "mrnn/cells.hpp"
#include "mrnn/errors.hpp"
#include "mrnn/mixture.hpp"
#include "mrnn/rng.hpp"

namespace mrnn {

enum class HeadKind {
    Scalar,   // single regression output, weights + bias
    Softmax,  // vocab-way classification, bias-free projection
};

// Everything needed to size a model; the factory below turns one of these
// into concrete parameter tensors.
struct ModelSpec {
    CellKind cell = CellKind::Lstm;
    MixtureSource mixture = MixtureSource::None;
    Similarity similarity = Similarity::Cosine;
    HeadKind head = HeadKind::Scalar;
    long hidden = 8;
    long input = 1;       // per-step input width (the embedding width when embedded)
    long proto_dim = 0;   // prototype rows of M
    long components = 0;  // prototype columns of M
    long buckets = 1;     // prototype banks (bucketed mixtures only)
    long vocab = 0;       // classes of a softmax head / rows of the embedding
    bool embedded = false;  // inputs are token ids fed through a trainable table

    bool has_mixture() const { return mixture != MixtureSource::None; }

    void validate() const {
        if (hidden < 1 || input < 1) {
            throw ConfigError("hidden and input widths must be positive");
        }
        if (has_mixture()) {
            if (proto_dim < 1 || components < 1) {
                throw ConfigError("mixture dimensions m and n must be positive");
            }
            if (mixture == MixtureSource::Bucketed && buckets < 1) {
                throw ConfigError("bucketed mixture needs at least one bucket");
            }
        }
        if (head == HeadKind::Softmax && vocab < 2) {
            throw ConfigError("softmax head needs a vocabulary of at least two classes");
        }
        if (embedded && (vocab < 2 || head != HeadKind::Softmax)) {
            throw ConfigError("embedded inputs require a softmax head over the same vocabulary");
        }
    }

    std::string name() const {
        std::string prefix;
        if (mixture == MixtureSource::Single) prefix = "m-";
        if (mixture == MixtureSource::Bucketed) prefix = "pm-";
        return prefix + cell_name(cell);
    }
};

// Trainable scalars by category. Embeddings are reported apart from the
// rest of the network, matching how model sizes are usually quoted.
struct ParameterCount {
    long cell = 0;
    long mixture = 0;
    long output = 0;
    long embedding = 0;

    long network() const { return cell + mixture + output; }
    long total() const { return network() + embedding; }
};

inline ParameterCount parameter_count(const ModelSpec& spec) {
    spec.validate();
    ParameterCount c;
    const long pd = spec.has_mixture() ? spec.proto_dim : 0;
    const long cols = spec.hidden + spec.input + pd;
    c.cell = gate_count(spec.cell) * (spec.hidden * cols + spec.hidden);
    if (spec.has_mixture()) {
        const long banks = spec.mixture == MixtureSource::Bucketed ? spec.buckets : 1;
        c.mixture = banks * spec.proto_dim * spec.components + spec.hidden * spec.proto_dim;
        if (spec.similarity == Similarity::Mahalanobis) {
            // the precision factor's structural zeros above the diagonal
            // are not trainable
            c.mixture += spec.hidden * (spec.hidden + 1) / 2;
        }
    }
    c.output = spec.head == HeadKind::Scalar ? spec.hidden + 1 : spec.vocab * spec.hidden;
    if (spec.embedded) c.embedding = spec.vocab * spec.input;
    return c;
}

// ---------------------------------------------------------------------------
// Concrete parameters. Tensor storage is stable after construction so the
// training loop can bind zero-copy views onto a tape, step the optimizer in
// place, and rebuild the graph each batch.
// ---------------------------------------------------------------------------

struct ParamSet {
    ModelSpec spec;
    CellParameters cell;
    std::vector<Tensor> M;  // one bank, or one per bucket
    Tensor D;
    Tensor L;
    Tensor head_w;     // Scalar: 1 x hidden; Softmax: vocab x hidden
    Tensor head_b;     // Scalar head only
    Tensor embedding;  // vocab x input when embedded

    // Mutable views over every trainable tensor, in a fixed documented
    // order: gates' W, gates' b, M banks, D, L (Mahalanobis only), head,
    // embedding. The optimizer walks this list.
    std::vector<Tensor*> trainables() {
        std::vector<Tensor*> out;
        for (Tensor& w : cell.W) out.push_back(&w);
        for (Tensor& b : cell.b) out.push_back(&b);
        for (Tensor& m : M) out.push_back(&m);
        if (spec.has_mixture()) {
            out.push_back(&D);
            if (spec.similarity == Similarity::Mahalanobis) out.push_back(&L);
        }
        out.push_back(&head_w);
        if (spec.head == HeadKind::Scalar) out.push_back(&head_b);
        if (spec.embedded) out.push_back(&embedding);
        return out;
    }

    LatentMixture mixture_view(long bucket_id = 1) const {
        if (!spec.has_mixture()) throw ConfigError("model has no mixture");
        LatentMixture mix;
        mix.M = M.at(bucket_id - 1);
        mix.D = D;
        mix.L = L;
        mix.kind = spec.similarity;
        return mix;
    }

    // Mean pairwise prototype distance; bucketed models average the
    // per-bank dispersions.
    double dispersion() const {
        if (!spec.has_mixture()) throw ConfigError("model has no mixture");
        double total = 0.0;
        for (std::size_t k = 0; k < M.size(); ++k) {
            total += center_dispersion(mixture_view(static_cast<long>(k) + 1));
        }
        return total / static_cast<double>(M.size());
    }
};

// All weights i.i.d. uniform on [lo, hi] from the seeded generator; the
// precision factor starts at the identity instead so the Mahalanobis
// measure begins as plain squared distance.
inline ParamSet init_params(const ModelSpec& spec, std::uint64_t seed, double lo = -0.05,
                            double hi = 0.05) {
    spec.validate();
    if (!(lo < hi)) {
        throw ConfigError("initialization range is empty");
    }
    Rng rng(seed);
    auto fill = [&](Shape s) {
        Tensor t = Tensor::zeros(s);
        for (double& x : t.v) x = rng.uniform(lo, hi);
        return t;
    };

    ParamSet p;
    p.spec = spec;
    p.cell.kind = spec.cell;
    const long pd = spec.has_mixture() ? spec.proto_dim : 0;
    for (int g = 0; g < gate_count(spec.cell); ++g) {
        p.cell.W.push_back(fill(Shape::mat(spec.hidden, spec.hidden + spec.input + pd)));
        p.cell.b.push_back(fill(Shape::vec(spec.hidden)));
    }
    if (spec.has_mixture()) {
        const long banks = spec.mixture == MixtureSource::Bucketed ? spec.buckets : 1;
        for (long k = 0; k < banks; ++k) {
            p.M.push_back(fill(Shape::mat(spec.proto_dim, spec.components)));
        }
        p.D = fill(Shape::mat(spec.hidden, spec.proto_dim));
        p.L = Tensor::zeros(Shape::mat(spec.hidden, spec.hidden));
        for (long i = 0; i < spec.hidden; ++i) p.L.at(i, i) = 1.0;
    }
    if (spec.head == HeadKind::Scalar) {
        p.head_w = fill(Shape::mat(1, spec.hidden));
        p.head_b = fill(Shape::vec(1));
    } else {
        p.head_w = fill(Shape::mat(spec.vocab, spec.hidden));
    }
    if (spec.embedded) {
        p.embedding = fill(Shape::mat(spec.vocab, spec.input));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Graph bindings and forward passes
// ---------------------------------------------------------------------------

struct ModelVars {
    CellVars cell;
    std::vector<Var> M;
    Var D, L;
    Var head_w, head_b;
    Var embedding;
    const ModelSpec* spec = nullptr;

    MixtureVars mixture_vars(long bucket_id = 1) const {
        return MixtureVars{M.at(bucket_id - 1), D, L, spec->similarity};
    }
};

// Zero-copy binding: the tape views the ParamSet's storage, which must stay
// alive and unmodified until the tape is dropped or reset.
inline ModelVars bind(Tape& t, ParamSet& p) {
    ModelVars mv;
    mv.spec = &p.spec;
    mv.cell.kind = p.cell.kind;
    for (Tensor& w : p.cell.W) mv.cell.W.push_back(t.leaf_view(w.shape, w.v.data()));
    for (Tensor& b : p.cell.b) mv.cell.b.push_back(t.leaf_view(b.shape, b.v.data()));
    for (Tensor& m : p.M) mv.M.push_back(t.leaf_view(m.shape, m.v.data()));
    if (p.spec.has_mixture()) {
        mv.D = t.leaf_view(p.D.shape, p.D.v.data());
        mv.L = t.leaf_view(p.L.shape, p.L.v.data());
    }
    mv.head_w = t.leaf_view(p.head_w.shape, p.head_w.v.data());
    if (p.spec.head == HeadKind::Scalar) {
        mv.head_b = t.leaf_view(p.head_b.shape, p.head_b.v.data());
    }
    if (p.spec.embedded) {
        mv.embedding = t.leaf_view(p.embedding.shape, p.embedding.v.data());
    }
    return mv;
}

// Gradient tensors for the same trainables() walk, in the same order.
inline std::vector<Tensor> collect_grads(const Tape& t, const ModelVars& mv) {
    std::vector<Tensor> out;
    for (Var w : mv.cell.W) out.push_back(t.grad_tensor(w));
    for (Var b : mv.cell.b) out.push_back(t.grad_tensor(b));
    for (Var m : mv.M) out.push_back(t.grad_tensor(m));
    if (mv.spec->has_mixture()) {
        out.push_back(t.grad_tensor(mv.D));
        if (mv.spec->similarity == Similarity::Mahalanobis) out.push_back(t.grad_tensor(mv.L));
    }
    out.push_back(t.grad_tensor(mv.head_w));
    if (mv.spec->head == HeadKind::Scalar) out.push_back(t.grad_tensor(mv.head_b));
    if (mv.spec->embedded) out.push_back(t.grad_tensor(mv.embedding));
    return out;
}

// Runs the recurrence over a column batch of same-length sequences and
// returns the scalar predictions (one per column). steps[t] is the
// input x batch matrix for time t. All sequences in the batch must share
// a bucket when the mixture is bucketed.
inline Var predict_scalar_batch(Tape& t, const ModelVars& mv, const std::vector<Var>& steps,
                                std::optional<long> bucket_id = std::nullopt) {
    if (steps.empty()) throw DataError("cannot run an empty sequence batch");
    const ModelSpec& spec = *mv.spec;
    const long batch = t.shape(steps[0]).cols;
    CellStateVars state;
    state.h = t.zeros(Shape::mat(spec.hidden, batch));
    if (spec.cell == CellKind::Lstm) {
        state.c = t.zeros(Shape::mat(spec.hidden, batch));
        state.has_c = true;
    }
    for (Var x : steps) {
        std::optional<Var> p;
        if (spec.has_mixture()) {
            const long bank = spec.mixture == MixtureSource::Bucketed ? bucket_id.value() : 1;
            p = mixture_lookup(t, state.h, mv.mixture_vars(bank)).retrieval;
        }
        state = cell_step(t, mv.cell, state, x, p);
    }
    Var y = t.matmul(mv.head_w, state.h);  // 1 x batch
    return t.add_cols(y, mv.head_b);
}

// Mean absolute error between a 1 x batch prediction row and targets.
inline Var l1_loss(Tape& t, Var pred, const Tensor& targets) {
    Tensor y = targets;
    const Shape ps = t.shape(pred);
    if (ps.rank == 2 && ps.rows == 1 && y.shape.rank == 1 && y.shape.rows == ps.cols) {
        y.shape = ps;  // a plain target vector matches a one-row prediction batch
    }
    if (!(ps == y.shape)) {
        throw ShapeError("predictions " + ps.str() + " vs targets " + targets.shape.str());
    }
    return t.mean(t.abs(t.sub(pred, t.constant(y))));
}

// Next-token negative log-likelihood of one document: runs the recurrence
// over ids[0..T-2] and scores logits against ids[1..T-1]. Returns the mean
// NLL; the per-token count is T-1.
inline Var document_nll(Tape& t, const ModelVars& mv, const std::vector<long>& ids,
                        std::optional<long> bucket_id = std::nullopt) {
    const ModelSpec& spec = *mv.spec;
    if (!spec.embedded) throw ConfigError("language modeling needs an embedded model");
    if (ids.size() < 2) throw DataError("document too short to score (needs >= 2 tokens)");
    std::vector<long> context(ids.begin(), ids.end() - 1);
    std::vector<long> targets(ids.begin() + 1, ids.end());

    Var x_all = t.embed(mv.embedding, context);  // input x (T-1)
    CellStateVars state;
    state.h = t.zeros(Shape::vec(spec.hidden));
    if (spec.cell == CellKind::Lstm) {
        state.c = t.zeros(Shape::vec(spec.hidden));
        state.has_c = true;
    }
    std::vector<Var> hs;
    hs.reserve(context.size());
    for (long step = 0; step < static_cast<long>(context.size()); ++step) {
        Var x = t.col(x_all, step);
        std::optional<Var> p;
        if (spec.has_mixture()) {
            const long bank = spec.mixture == MixtureSource::Bucketed ? bucket_id.value() : 1;
            p = mixture_lookup(t, state.h, mv.mixture_vars(bank)).retrieval;
        }
        state = cell_step(t, mv.cell, state, x, p);
        hs.push_back(state.h);
    }
    Var h_all = hs.size() == 1 ? hs[0] : t.concat_cols(hs);
    Var logits = t.matmul(mv.head_w, h_all);  // vocab x (T-1)
    return t.cross_entropy_logits(logits, targets);
}

}  // namespace mrnn
