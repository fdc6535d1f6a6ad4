#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mrnn/autodiff.hpp"
#include "mrnn/errors.hpp"

namespace mrnn {

enum class Similarity { Cosine, Mahalanobis };

inline const char* similarity_name(Similarity s) {
    return s == Similarity::Cosine ? "cosine" : "mahalanobis";
}

inline Similarity parse_similarity(const std::string& s) {
    if (s == "cosine") return Similarity::Cosine;
    if (s == "mahalanobis") return Similarity::Mahalanobis;
    throw ConfigError("unknown similarity kind \"" + s + "\" (expected cosine or mahalanobis)");
}

// ---------------------------------------------------------------------------
// A bank of prototype vectors the recurrent state is matched against.
//
//   M : proto_dim x components   (column i is prototype M_i)
//   D : hidden x proto_dim       (projects prototypes into state space)
//   L : hidden x hidden          (lower-triangular factor; the Mahalanobis
//                                 measure uses precision P = L L^T, which is
//                                 positive semidefinite for any such L)
// ---------------------------------------------------------------------------
struct LatentMixture {
    Tensor M;
    Tensor D;
    Tensor L;
    Similarity kind = Similarity::Cosine;

    LatentMixture() = default;
    LatentMixture(Tensor m, Tensor d, Tensor l, Similarity k)
        : M(std::move(m)), D(std::move(d)), L(std::move(l)), kind(k) {
        validate();
    }

    long proto_dim() const { return M.shape.rows; }
    long components() const { return M.shape.cols; }
    long hidden() const { return D.shape.rows; }

    void validate() const {
        if (M.shape.rank != 2 || M.shape.rows < 1 || M.shape.cols < 1) {
            throw ShapeError("latent matrix must have at least one row and column, got " +
                             M.shape.str());
        }
        if (D.shape.rank != 2 || D.shape.cols != M.shape.rows) {
            throw ShapeError("projection " + D.shape.str() + " does not map prototypes of " +
                             M.shape.str() + " into state space");
        }
        if (L.shape.rank != 2 || L.shape.rows != L.shape.cols || L.shape.rows != D.shape.rows) {
            throw ShapeError("precision factor must be square over the state dimension, got " +
                             L.shape.str() + " for projection " + D.shape.str());
        }
        for (double x : M.v) check_finite(x, "M");
        for (double x : D.v) check_finite(x, "D");
        for (double x : L.v) check_finite(x, "L");
        for (long i = 0; i < L.shape.rows; ++i) {
            for (long j = i + 1; j < L.shape.cols; ++j) {
                if (L.at(i, j) != 0.0) {
                    throw NumericError("precision factor has a nonzero entry above the diagonal "
                                       "at (" + std::to_string(i) + "," + std::to_string(j) + ")");
                }
            }
        }
    }

private:
    static void check_finite(double x, const char* which) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite entry in mixture parameter ") + which);
        }
    }
};

// One lookup against the prototype bank.
struct MixtureReadout {
    Tensor scores;     // similarity of the state to each prototype
    Tensor weights;    // softmax of scores (probability simplex)
    Tensor retrieval;  // weighted prototype combination, proto_dim entries
};

// Per-bucket prototype banks with one shared projection and precision
// factor; only the prototypes themselves differ between buckets. Bucket ids
// are 1-based.
struct BucketedMixture {
    std::vector<Tensor> M;  // M[k-1] is bucket k's prototype bank
    Tensor D;
    Tensor L;
    Similarity kind = Similarity::Cosine;

    BucketedMixture() = default;
    BucketedMixture(std::vector<Tensor> ms, Tensor d, Tensor l, Similarity k)
        : M(std::move(ms)), D(std::move(d)), L(std::move(l)), kind(k) {
        validate();
    }

    long buckets() const { return static_cast<long>(M.size()); }
    long proto_dim() const { return M.front().shape.rows; }
    long components() const { return M.front().shape.cols; }
    long hidden() const { return D.shape.rows; }

    void validate() const {
        if (M.empty()) {
            throw ShapeError("bucketed mixture needs at least one bucket");
        }
        for (const Tensor& mk : M) {
            if (!(mk.shape == M.front().shape)) {
                throw ShapeError("all buckets must hold identically shaped prototype banks, got " +
                                 mk.shape.str() + " next to " + M.front().shape.str());
            }
        }
        bucket(1).validate();
    }

    // Materializes one bucket's view as a standalone mixture.
    LatentMixture bucket(long id) const {
        check_bucket(id);
        LatentMixture mix;
        mix.M = M[id - 1];
        mix.D = D;
        mix.L = L;
        mix.kind = kind;
        return mix;
    }

    void check_bucket(long id) const {
        if (id < 1 || id > buckets()) {
            throw ConfigError("unknown bucket " + std::to_string(id) + " (have 1.." +
                              std::to_string(buckets()) + ")");
        }
    }
};

// ---------------------------------------------------------------------------
// Graph builders. These record the lookup onto a tape so gradients reach
// the state and every mixture parameter. The state H may be a single
// column (rank 1) or a column batch (hidden x b).
// ---------------------------------------------------------------------------

struct MixtureVars {
    Var M;
    Var D;
    Var L;  // only consulted by the Mahalanobis measure
    Similarity kind = Similarity::Cosine;
};

struct MixtureReadoutVars {
    Var scores;
    Var weights;
    Var retrieval;
};

// Similarity of each state column to each projected prototype D*M_i:
// cosine per the guarded normalized dot, or -1/2 (h - D M_i)^T LL^T (h - D M_i).
inline Var mixture_scores(Tape& tape, Var h, const MixtureVars& mix) {
    Shape sh = tape.shape(h);
    Shape sd = tape.shape(mix.D);
    if (sh.rows != sd.rows) {
        throw ShapeError("state " + sh.str() + " does not match projection " + sd.str());
    }
    Var u = tape.matmul(mix.D, mix.M);  // hidden x components
    if (mix.kind == Similarity::Cosine) {
        return tape.cosine_scores(h, u);
    }
    Var neg_u = tape.scale(u, -1.0);
    if (sh.rank == 1) {
        // residual columns h - D M_i, scored through the precision factor
        return tape.quadratic_form(tape.add_cols(neg_u, h), mix.L);
    }
    std::vector<Var> per_column;
    per_column.reserve(sh.cols);
    for (long j = 0; j < sh.cols; ++j) {
        per_column.push_back(tape.quadratic_form(tape.add_cols(neg_u, tape.col(h, j)), mix.L));
    }
    return tape.concat_cols(per_column);
}

inline MixtureReadoutVars mixture_lookup(Tape& tape, Var h, const MixtureVars& mix) {
    MixtureReadoutVars out;
    out.scores = mixture_scores(tape, h, mix);
    out.weights = tape.softmax(out.scores);
    out.retrieval = tape.matmul(mix.M, out.weights);
    return out;
}

// Plain-value wrappers -------------------------------------------------------

inline MixtureVars bind(Tape& tape, const LatentMixture& mix) {
    mix.validate();
    MixtureVars v;
    v.M = tape.leaf(mix.M);
    v.D = tape.leaf(mix.D);
    v.L = tape.leaf(mix.L);
    v.kind = mix.kind;
    return v;
}

inline Tensor similarity_cosine(const Tensor& h, const LatentMixture& mix) {
    if (mix.kind != Similarity::Cosine) {
        throw ConfigError("mixture is not configured for cosine similarity");
    }
    Tape tape;
    MixtureVars mv = bind(tape, mix);
    return tape.value_tensor(mixture_scores(tape, tape.leaf(h), mv));
}

inline Tensor similarity_mahalanobis(const Tensor& h, const LatentMixture& mix) {
    if (mix.kind != Similarity::Mahalanobis) {
        throw ConfigError("mixture is not configured for Mahalanobis similarity");
    }
    Tape tape;
    MixtureVars mv = bind(tape, mix);
    return tape.value_tensor(mixture_scores(tape, tape.leaf(h), mv));
}

inline MixtureReadout mixture_lookup(const Tensor& h, const LatentMixture& mix) {
    Tape tape;
    MixtureVars mv = bind(tape, mix);
    MixtureReadoutVars rv = mixture_lookup(tape, tape.leaf(h), mv);
    MixtureReadout out;
    out.scores = tape.value_tensor(rv.scores);
    out.weights = tape.value_tensor(rv.weights);
    out.retrieval = tape.value_tensor(rv.retrieval);
    return out;
}

inline MixtureReadout bucketed_lookup(const Tensor& h, long bucket_id, const BucketedMixture& bm) {
    bm.check_bucket(bucket_id);
    return mixture_lookup(h, bm.bucket(bucket_id));
}

// Mean pairwise Euclidean distance between prototype columns; the spread
// of the bank, tracked across training epochs.
inline double center_dispersion(const LatentMixture& mix) {
    const long n = mix.components(), m = mix.proto_dim();
    if (n < 2) {
        throw ConfigError("dispersion needs at least two prototypes, have " + std::to_string(n));
    }
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
        for (long j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (long r = 0; r < m; ++r) {
                const double diff = mix.M.at(r, i) - mix.M.at(r, j);
                d2 += diff * diff;
            }
            total += std::sqrt(d2);
        }
    }
    return total * 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
}

// Bucketed form: mean of the per-bucket dispersions.
inline double center_dispersion(const BucketedMixture& bm) {
    double total = 0.0;
    for (long k = 1; k <= bm.buckets(); ++k) {
        total += center_dispersion(bm.bucket(k));
    }
    return total / static_cast<double>(bm.buckets());
}

}  // namespace mrnn
