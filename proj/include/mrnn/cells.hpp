#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mrnn/autodiff.hpp"
#include "mrnn/errors.hpp"
#include "mrnn/mixture.hpp"

namespace mrnn {

enum class CellKind { Vanilla, Lstm, Gru };

inline const char* cell_name(CellKind k) {
    switch (k) {
        case CellKind::Vanilla: return "rnn";
        case CellKind::Lstm: return "lstm";
        case CellKind::Gru: return "gru";
    }
    return "?";
}

inline CellKind parse_cell(const std::string& s) {
    if (s == "rnn" || s == "vanilla") return CellKind::Vanilla;
    if (s == "lstm") return CellKind::Lstm;
    if (s == "gru") return CellKind::Gru;
    throw ConfigError("unknown cell kind \"" + s + "\" (expected rnn, lstm or gru)");
}

// Number of weight/bias pairs a cell kind carries.
inline int gate_count(CellKind k) {
    switch (k) {
        case CellKind::Vanilla: return 1;
        case CellKind::Lstm: return 4;  // forget, input, candidate, output
        case CellKind::Gru: return 3;   // update, reset, candidate
    }
    return 0;
}

// Gate weights and biases. Order of the gates:
//   lstm: forget, input, candidate, output
//   gru:  update, reset, candidate
//   rnn:  the single transition
// Every W is hidden x (hidden + input [+ proto_dim when mixture-augmented]);
// every b is a hidden-vector.
struct CellParameters {
    CellKind kind = CellKind::Lstm;
    std::vector<Tensor> W;
    std::vector<Tensor> b;

    void validate(long hidden, long input, long proto_dim) const {
        const int gates = gate_count(kind);
        if (static_cast<int>(W.size()) != gates || static_cast<int>(b.size()) != gates) {
            throw ShapeError(std::string(cell_name(kind)) + " cell needs " +
                             std::to_string(gates) + " weight/bias pairs, got " +
                             std::to_string(W.size()) + "/" + std::to_string(b.size()));
        }
        const long cols = hidden + input + proto_dim;
        for (int g = 0; g < gates; ++g) {
            if (!(W[g].shape == Shape::mat(hidden, cols))) {
                throw ShapeError("gate " + std::to_string(g) + " weights are " + W[g].shape.str() +
                                 ", expected " + Shape::mat(hidden, cols).str());
            }
            if (!(b[g].shape == Shape::vec(hidden))) {
                throw ShapeError("gate " + std::to_string(g) + " bias is " + b[g].shape.str() +
                                 ", expected " + Shape::vec(hidden).str());
            }
        }
    }
};

// Recurrent state; c is only meaningful for LSTM cells.
struct CellState {
    Tensor h;
    Tensor c;
};

inline CellState zero_state(CellKind kind, long hidden) {
    CellState s;
    s.h = Tensor::zeros(Shape::vec(hidden));
    if (kind == CellKind::Lstm) s.c = Tensor::zeros(Shape::vec(hidden));
    return s;
}

// What a mixture-augmented cell looks its state up against.
enum class MixtureSource { None, Single, Bucketed };

struct MixtureCellBinding {
    MixtureSource source = MixtureSource::None;
    LatentMixture single;
    BucketedMixture bucketed;

    static MixtureCellBinding none() { return {}; }
    static MixtureCellBinding with(LatentMixture mix) {
        MixtureCellBinding b;
        b.source = MixtureSource::Single;
        b.single = std::move(mix);
        return b;
    }
    static MixtureCellBinding with(BucketedMixture mix) {
        MixtureCellBinding b;
        b.source = MixtureSource::Bucketed;
        b.bucketed = std::move(mix);
        return b;
    }

    long proto_dim() const {
        switch (source) {
            case MixtureSource::None: return 0;
            case MixtureSource::Single: return single.proto_dim();
            case MixtureSource::Bucketed: return bucketed.proto_dim();
        }
        return 0;
    }
};

// ---------------------------------------------------------------------------
// Graph-level steps. State and inputs may be single columns (rank 1) or
// column batches (rank 2 with one column per sequence); the bias add
// broadcasts accordingly.
// ---------------------------------------------------------------------------

struct CellVars {
    CellKind kind = CellKind::Lstm;
    std::vector<Var> W;
    std::vector<Var> b;
};

struct CellStateVars {
    Var h;
    Var c;  // LSTM only; unset otherwise
    bool has_c = false;
};

namespace detail {

inline Var affine(Tape& t, Var W, Var z, Var b) {
    Var y = t.matmul(W, z);
    return t.shape(y).rank == 2 ? t.add_cols(y, b) : t.add(y, b);
}

inline Var stack_inputs(Tape& t, Var h, Var x, const std::optional<Var>& p) {
    if (p.has_value()) return t.concat({h, x, *p});
    return t.concat({h, x});
}

}  // namespace detail

// One LSTM transition; p, when present, is appended to the gate inputs so
// every gate and the candidate see [h, x, p].
inline CellStateVars lstm_step(Tape& t, const CellVars& cell, CellStateVars s, Var x,
                               std::optional<Var> p = std::nullopt) {
    Var z = detail::stack_inputs(t, s.h, x, p);
    Var f = t.sigmoid(detail::affine(t, cell.W[0], z, cell.b[0]));
    Var i = t.sigmoid(detail::affine(t, cell.W[1], z, cell.b[1]));
    Var cand = t.tanh(detail::affine(t, cell.W[2], z, cell.b[2]));
    Var o = t.sigmoid(detail::affine(t, cell.W[3], z, cell.b[3]));
    CellStateVars out;
    out.c = t.add(t.mul(f, s.c), t.mul(i, cand));
    out.h = t.mul(o, t.tanh(out.c));
    out.has_c = true;
    return out;
}

// One GRU transition: update gate z, reset gate r, candidate from the
// reset-scaled state; p rides along in every gate input.
inline CellStateVars gru_step(Tape& t, const CellVars& cell, CellStateVars s, Var x,
                              std::optional<Var> p = std::nullopt) {
    Var zin = detail::stack_inputs(t, s.h, x, p);
    Var zg = t.sigmoid(detail::affine(t, cell.W[0], zin, cell.b[0]));
    Var r = t.sigmoid(detail::affine(t, cell.W[1], zin, cell.b[1]));
    Var cin = detail::stack_inputs(t, t.mul(r, s.h), x, p);
    Var cand = t.tanh(detail::affine(t, cell.W[2], cin, cell.b[2]));
    CellStateVars out;
    // h' = (1 - z) h + z * candidate, written as h + z (candidate - h)
    out.h = t.add(s.h, t.mul(zg, t.sub(cand, s.h)));
    out.has_c = false;
    return out;
}

// One vanilla transition: h' = tanh(W [h, x, p] + b).
inline CellStateVars vanilla_step(Tape& t, const CellVars& cell, CellStateVars s, Var x,
                                  std::optional<Var> p = std::nullopt) {
    Var z = detail::stack_inputs(t, s.h, x, p);
    CellStateVars out;
    out.h = t.tanh(detail::affine(t, cell.W[0], z, cell.b[0]));
    out.has_c = false;
    return out;
}

inline CellStateVars cell_step(Tape& t, const CellVars& cell, CellStateVars s, Var x,
                               std::optional<Var> p = std::nullopt) {
    switch (cell.kind) {
        case CellKind::Vanilla: return vanilla_step(t, cell, s, x, p);
        case CellKind::Lstm: return lstm_step(t, cell, s, x, p);
        case CellKind::Gru: return gru_step(t, cell, s, x, p);
    }
    throw ConfigError("unhandled cell kind");
}

// ---------------------------------------------------------------------------
// Value-level wrappers: convenience single steps and unrolls over plain
// tensors, used by tests and small-scale evaluation.
// ---------------------------------------------------------------------------

namespace detail {

inline CellVars bind_cell(Tape& t, const CellParameters& params) {
    CellVars cv;
    cv.kind = params.kind;
    for (const Tensor& w : params.W) cv.W.push_back(t.leaf(w));
    for (const Tensor& b : params.b) cv.b.push_back(t.leaf(b));
    return cv;
}

inline CellStateVars bind_state(Tape& t, const CellParameters& params, const CellState& s) {
    CellStateVars sv;
    sv.h = t.leaf(s.h);
    if (params.kind == CellKind::Lstm) {
        if (s.c.shape.numel() == 0) {
            throw ShapeError("lstm state is missing its cell vector");
        }
        sv.c = t.leaf(s.c);
        sv.has_c = true;
    }
    return sv;
}

inline std::optional<Var> bind_retrieval(Tape& t, Var h, const MixtureCellBinding& binding,
                                         std::optional<long> bucket_id) {
    switch (binding.source) {
        case MixtureSource::None:
            if (bucket_id.has_value()) {
                throw ConfigError("bucket id supplied but the cell has no mixture");
            }
            return std::nullopt;
        case MixtureSource::Single: {
            MixtureVars mv = bind(t, binding.single);
            return mixture_lookup(t, h, mv).retrieval;
        }
        case MixtureSource::Bucketed: {
            if (!bucket_id.has_value()) {
                throw ConfigError("bucketed mixture requires a bucket id at every step");
            }
            binding.bucketed.check_bucket(*bucket_id);
            MixtureVars mv = bind(t, binding.bucketed.bucket(*bucket_id));
            return mixture_lookup(t, h, mv).retrieval;
        }
    }
    return std::nullopt;
}

inline CellState extract_state(const Tape& t, const CellStateVars& sv) {
    CellState out;
    out.h = t.value_tensor(sv.h);
    if (sv.has_c) out.c = t.value_tensor(sv.c);
    return out;
}

}  // namespace detail

// Single plain step over tensors.
inline CellState cell_step(const CellParameters& params, const CellState& state, const Tensor& x) {
    Tape t;
    CellVars cv = detail::bind_cell(t, params);
    CellStateVars sv = detail::bind_state(t, params, state);
    return detail::extract_state(t, cell_step(t, cv, sv, t.leaf(x)));
}

inline CellState lstm_step(const CellParameters& params, const CellState& state, const Tensor& x) {
    if (params.kind != CellKind::Lstm) throw ConfigError("parameters are not an lstm cell");
    return cell_step(params, state, x);
}

inline CellState gru_step(const CellParameters& params, const CellState& state, const Tensor& x) {
    if (params.kind != CellKind::Gru) throw ConfigError("parameters are not a gru cell");
    return cell_step(params, state, x);
}

// Single mixture-augmented step: the retrieval for the incoming state is
// concatenated onto [h, x] before the gates fire.
inline CellState mixture_cell_step(const CellParameters& params, const CellState& state,
                                   const Tensor& x, const MixtureCellBinding& binding,
                                   std::optional<long> bucket_id = std::nullopt) {
    if (binding.source == MixtureSource::None) {
        throw ConfigError("mixture step called without a mixture source");
    }
    Tape t;
    CellVars cv = detail::bind_cell(t, params);
    CellStateVars sv = detail::bind_state(t, params, state);
    std::optional<Var> p = detail::bind_retrieval(t, sv.h, binding, bucket_id);
    return detail::extract_state(t, cell_step(t, cv, sv, t.leaf(x), p));
}

inline CellState mixture_lstm_step(const CellParameters& params, const CellState& state,
                                   const Tensor& x, const MixtureCellBinding& binding,
                                   std::optional<long> bucket_id = std::nullopt) {
    if (params.kind != CellKind::Lstm) throw ConfigError("parameters are not an lstm cell");
    return mixture_cell_step(params, state, x, binding, bucket_id);
}

inline CellState mixture_gru_step(const CellParameters& params, const CellState& state,
                                  const Tensor& x, const MixtureCellBinding& binding,
                                  std::optional<long> bucket_id = std::nullopt) {
    if (params.kind != CellKind::Gru) throw ConfigError("parameters are not a gru cell");
    return mixture_cell_step(params, state, x, binding, bucket_id);
}

// Left-to-right unroll threading state; returns every intermediate state.
inline std::vector<CellState> unroll(const MixtureCellBinding& binding,
                                     const CellParameters& params,
                                     const std::vector<Tensor>& sequence,
                                     std::optional<long> bucket_id, const CellState& initial) {
    if (sequence.empty()) {
        throw DataError("cannot unroll an empty sequence");
    }
    if (binding.source == MixtureSource::None && bucket_id.has_value()) {
        throw ConfigError("bucket id supplied but the cell has no mixture");
    }
    std::vector<CellState> states;
    states.reserve(sequence.size());
    CellState s = initial;
    for (const Tensor& x : sequence) {
        s = binding.source == MixtureSource::None
                ? cell_step(params, s, x)
                : mixture_cell_step(params, s, x, binding, bucket_id);
        states.push_back(s);
    }
    return states;
}

}  // namespace mrnn
