// Tests for the prototype-bank lookup: similarity measures, softmax
// weighting, retrieval, bucketing, dispersion, and differentiability.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mrnn/grad_check.hpp"
#include "mrnn/mixture.hpp"
#include "mrnn/rng.hpp"

using namespace mrnn;

namespace {

Tensor identity(long n) {
    Tensor t = Tensor::zeros(Shape::mat(n, n));
    for (long i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor random_mat(Rng& rng, long r, long c, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::mat(r, c, std::move(v));
}

Tensor random_lower(Rng& rng, long n) {
    Tensor t = Tensor::zeros(Shape::mat(n, n));
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j <= i; ++j) t.at(i, j) = rng.uniform(-1.0, 1.0);
        t.at(i, i) = rng.uniform(0.2, 1.5);
    }
    return t;
}

LatentMixture make_mixture(Rng& rng, long hidden, long proto_dim, long components,
                           Similarity kind) {
    return LatentMixture(random_mat(rng, proto_dim, components), random_mat(rng, hidden, proto_dim),
                         kind == Similarity::Mahalanobis ? random_lower(rng, hidden)
                                                         : identity(hidden),
                         kind);
}

}  // namespace

TEST_CASE("construction rejects malformed parameter shapes") {
    Tensor M = Tensor::mat(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor D = Tensor::mat(4, 2, std::vector<double>(8, 0.1));
    Tensor L = identity(4);
    REQUIRE_NOTHROW(LatentMixture(M, D, L, Similarity::Cosine));
    // projection inner dimension wrong
    REQUIRE_THROWS_AS(LatentMixture(M, Tensor::mat(4, 3, std::vector<double>(12, 0.1)), L,
                                    Similarity::Cosine),
                      ShapeError);
    // precision factor on the wrong side
    REQUIRE_THROWS_AS(LatentMixture(M, D, identity(2), Similarity::Cosine), ShapeError);
    // upper-triangular garbage in L
    Tensor bad = identity(4);
    bad.at(0, 3) = 0.5;
    REQUIRE_THROWS_AS(LatentMixture(M, D, bad, Similarity::Mahalanobis), NumericError);
}

TEST_CASE("cosine scores: axis-aligned prototypes under an identity projection") {
    // D = I2, h = [1,0], prototypes [1,0] and [0,1] -> scores [1, 0]
    LatentMixture mix(Tensor::mat(2, 2, {1, 0, 0, 1}), identity(2), identity(2),
                      Similarity::Cosine);
    Tensor s = similarity_cosine(Tensor::vec({1.0, 0.0}), mix);
    REQUIRE(s.v[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(s.v[1] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("mahalanobis score is zero exactly at a projected prototype") {
    Rng rng(11);
    LatentMixture mix = make_mixture(rng, 3, 2, 4, Similarity::Mahalanobis);
    // place the state on prototype 2's projection
    Tensor h = Tensor::zeros(Shape::vec(3));
    for (long i = 0; i < 3; ++i) {
        for (long k = 0; k < 2; ++k) h.at(i) += mix.D.at(i, k) * mix.M.at(k, 2);
    }
    Tensor s = similarity_mahalanobis(h, mix);
    REQUIRE(s.v[2] == Catch::Approx(0.0).margin(1e-12));
    for (int i = 0; i < 4; ++i) {
        REQUIRE(s.v[i] <= 1e-12);       // scores are nonpositive
        if (i != 2) REQUIRE(s.v[i] <= s.v[2]);  // the match is maximal
    }
}

TEST_CASE("mahalanobis with identity precision charges half the squared residual") {
    // h - D M_1 = [1,1] -> score -1
    LatentMixture mix(Tensor::mat(2, 1, {1.0, 1.0}), identity(2), identity(2),
                      Similarity::Mahalanobis);
    Tensor s = similarity_mahalanobis(Tensor::vec({2.0, 2.0}), mix);
    REQUIRE(s.v[0] == Catch::Approx(-1.0).margin(1e-14));
}

TEST_CASE("zero precision factor collapses to uniform weights") {
    Rng rng(12);
    LatentMixture mix = make_mixture(rng, 3, 2, 5, Similarity::Mahalanobis);
    mix.L = Tensor::zeros(Shape::mat(3, 3));
    MixtureReadout r = mixture_lookup(Tensor::vec({0.3, -0.7, 1.1}), mix);
    for (double s : r.scores.v) REQUIRE(s == 0.0);
    for (double w : r.weights.v) REQUIRE(w == Catch::Approx(0.2).margin(1e-14));
}

TEST_CASE("lookup with scores ln2 and 0 weighs prototypes 2:1") {
    // Engineer cosine scores [ln 2, 0]: h = [ln2, 0] against projected
    // prototypes e1, e2 gives cos = [ln2/|h| ... ] -- simpler to check the
    // weights by feeding the score vector through the documented formula:
    // w = softmax([ln2, 0]) = [2/3, 1/3] and p = (2 M_1 + M_2) / 3.
    Tape tape;
    Var s = tape.leaf(Tensor::vec({std::log(2.0), 0.0}));
    Var w = tape.softmax(s);
    REQUIRE(tape.value(w)[0] == Catch::Approx(2.0 / 3.0).margin(1e-14));
    REQUIRE(tape.value(w)[1] == Catch::Approx(1.0 / 3.0).margin(1e-14));
    Var M = tape.leaf(Tensor::mat(2, 2, {1.0, 4.0, -2.0, 5.0}));
    Var p = tape.matmul(M, w);
    REQUIRE(tape.value(p)[0] == Catch::Approx((2.0 * 1.0 + 4.0) / 3.0).margin(1e-14));
    REQUIRE(tape.value(p)[1] == Catch::Approx((2.0 * -2.0 + 5.0) / 3.0).margin(1e-14));
}

TEST_CASE("equal scores give uniform weights and the column-mean retrieval") {
    // all prototypes identical => identical scores regardless of h
    Tensor M = Tensor::mat(2, 3, {1.0, 1.0, 1.0, -2.0, -2.0, -2.0});
    LatentMixture mix(M, identity(2), identity(2), Similarity::Cosine);
    MixtureReadout r = mixture_lookup(Tensor::vec({0.4, 0.9}), mix);
    for (double w : r.weights.v) REQUIRE(w == Catch::Approx(1.0 / 3.0).margin(1e-12));
    REQUIRE(r.retrieval.v[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(r.retrieval.v[1] == Catch::Approx(-2.0).margin(1e-12));
}

TEST_CASE("single-component lookup returns that prototype with weight one") {
    LatentMixture mix(Tensor::mat(2, 1, {0.7, -0.3}), identity(2), identity(2),
                      Similarity::Cosine);
    MixtureReadout r = mixture_lookup(Tensor::vec({1.0, 2.0}), mix);
    REQUIRE(r.weights.v[0] == 1.0);
    REQUIRE(r.retrieval.v[0] == 0.7);
    REQUIRE(r.retrieval.v[1] == -0.3);
}

TEST_CASE("weights stay on the simplex and retrievals inside the prototype hull") {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        const long hidden = 2 + static_cast<long>(rng.below(4));
        const long pd = 1 + static_cast<long>(rng.below(4));
        const long nc = 2 + static_cast<long>(rng.below(6));
        const Similarity kind =
            rng.uniform01() < 0.5 ? Similarity::Cosine : Similarity::Mahalanobis;
        LatentMixture mix = make_mixture(rng, hidden, pd, nc, kind);
        Tensor h = random_mat(rng, hidden, 1, -3.0, 3.0);
        h.shape = Shape::vec(hidden);
        MixtureReadout r = mixture_lookup(h, mix);

        double sum = 0.0;
        for (double w : r.weights.v) {
            REQUIRE(w > 0.0);
            REQUIRE(w <= 1.0);
            sum += w;
        }
        REQUIRE(std::fabs(sum - 1.0) <= 1e-12);

        for (long row = 0; row < pd; ++row) {
            double lo = mix.M.at(row, 0), hi = lo;
            for (long i = 1; i < nc; ++i) {
                lo = std::min(lo, mix.M.at(row, i));
                hi = std::max(hi, mix.M.at(row, i));
            }
            REQUIRE(r.retrieval.at(row) >= lo - 1e-12);
            REQUIRE(r.retrieval.at(row) <= hi + 1e-12);
        }
    }
}

TEST_CASE("shifting every score by a constant leaves the weights unchanged") {
    Rng rng(14);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor s = random_mat(rng, 6, 1, -4.0, 4.0);
        s.shape = Shape::vec(6);
        Tensor shifted = s;
        const double c = rng.uniform(-50.0, 50.0);
        for (double& x : shifted.v) x += c;
        Tape t1, t2;
        auto w1 = t1.value(t1.softmax(t1.leaf(s)));
        auto w2 = t2.value(t2.softmax(t2.leaf(shifted)));
        for (long i = 0; i < 6; ++i) REQUIRE(std::fabs(w1[i] - w2[i]) <= 1e-12);
    }
}

TEST_CASE("zero state takes the epsilon-guarded path to near-uniform weights") {
    Rng rng(15);
    LatentMixture mix = make_mixture(rng, 4, 3, 5, Similarity::Cosine);
    MixtureReadout r = mixture_lookup(Tensor::zeros(Shape::vec(4)), mix);
    for (double w : r.weights.v) REQUIRE(w == Catch::Approx(0.2).margin(1e-6));
}

TEST_CASE("bucketed lookup with one bucket matches the plain lookup") {
    Rng rng(16);
    LatentMixture mix = make_mixture(rng, 3, 2, 4, Similarity::Cosine);
    BucketedMixture bm({mix.M}, mix.D, mix.L, mix.kind);
    Tensor h = Tensor::vec({0.5, -1.0, 0.25});
    MixtureReadout a = mixture_lookup(h, mix);
    MixtureReadout b = bucketed_lookup(h, 1, bm);
    for (long i = 0; i < 4; ++i) REQUIRE(a.weights.v[i] == b.weights.v[i]);
    for (long i = 0; i < 2; ++i) REQUIRE(a.retrieval.v[i] == b.retrieval.v[i]);
}

TEST_CASE("distinct buckets answer the same state differently") {
    Rng rng(17);
    BucketedMixture bm({random_mat(rng, 2, 3), random_mat(rng, 2, 3)}, random_mat(rng, 3, 2),
                       identity(3), Similarity::Cosine);
    Tensor h = Tensor::vec({1.0, 0.5, -0.5});
    MixtureReadout r1 = bucketed_lookup(h, 1, bm);
    MixtureReadout r2 = bucketed_lookup(h, 2, bm);
    bool same = true;
    for (long i = 0; i < 3; ++i) same = same && r1.weights.v[i] == r2.weights.v[i];
    REQUIRE_FALSE(same);
}

TEST_CASE("out-of-range bucket ids are rejected") {
    Rng rng(18);
    BucketedMixture bm({random_mat(rng, 2, 3), random_mat(rng, 2, 3)}, random_mat(rng, 3, 2),
                       identity(3), Similarity::Cosine);
    Tensor h = Tensor::vec({1.0, 0.5, -0.5});
    REQUIRE_THROWS_AS(bucketed_lookup(h, 3, bm), ConfigError);
    REQUIRE_THROWS_AS(bucketed_lookup(h, 0, bm), ConfigError);
    try {
        bucketed_lookup(h, 3, bm);
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("unknown bucket") != std::string::npos);
    }
}

TEST_CASE("a lookup through one bucket leaves the other bucket's gradient at zero") {
    Rng rng(19);
    Tensor M1 = random_mat(rng, 2, 3), M2 = random_mat(rng, 2, 3);
    Tensor D = random_mat(rng, 3, 2);
    Tape tape;
    Var m1 = tape.leaf(M1);
    Var m2 = tape.leaf(M2);  // on the tape, never used by the lookup
    MixtureVars mv{m1, tape.leaf(D), tape.leaf(identity(3)), Similarity::Cosine};
    Var h = tape.leaf(Tensor::vec({0.4, -0.2, 0.9}));
    MixtureReadoutVars r = mixture_lookup(tape, h, mv);
    tape.backward(tape.mean(tape.square(r.retrieval)));
    bool m1_touched = false;
    for (double g : tape.grad(m1)) m1_touched = m1_touched || g != 0.0;
    REQUIRE(m1_touched);
    for (double g : tape.grad(m2)) REQUIRE(g == 0.0);
}

TEST_CASE("dispersion of coincident, basis and scalar prototype banks") {
    LatentMixture same(Tensor::mat(2, 2, {1.0, 1.0, 2.0, 2.0}), identity(2), identity(2),
                       Similarity::Cosine);
    REQUIRE(center_dispersion(same) == 0.0);

    LatentMixture basis(Tensor::mat(2, 2, {1.0, 0.0, 0.0, 1.0}), identity(2), identity(2),
                        Similarity::Cosine);
    REQUIRE(center_dispersion(basis) == Catch::Approx(std::sqrt(2.0)).margin(1e-15));

    // columns [0], [1], [3]: pairwise distances 1, 3, 2 -> mean 2
    LatentMixture scalars(Tensor::mat(1, 3, {0.0, 1.0, 3.0}), Tensor::mat(2, 1, {1.0, 0.0}),
                          identity(2), Similarity::Cosine);
    REQUIRE(center_dispersion(scalars) == Catch::Approx(2.0).margin(1e-15));
}

TEST_CASE("dispersion needs two prototypes") {
    LatentMixture single(Tensor::mat(2, 1, {1.0, 2.0}), identity(2), identity(2),
                         Similarity::Cosine);
    REQUIRE_THROWS_AS(center_dispersion(single), ConfigError);
}

TEST_CASE("bucketed dispersion averages the per-bucket spreads") {
    // bucket 1: columns [0],[1],[3] -> 2; bucket 2: identical columns -> 0
    BucketedMixture bm({Tensor::mat(1, 3, {0.0, 1.0, 3.0}), Tensor::mat(1, 3, {5.0, 5.0, 5.0})},
                       Tensor::mat(2, 1, {1.0, 0.0}), identity(2), Similarity::Cosine);
    REQUIRE(center_dispersion(bm) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("lookup gradients pass central differences for both measures") {
    Rng rng(20);
    const long hidden = 3, pd = 2, nc = 4;
    for (Similarity kind : {Similarity::Cosine, Similarity::Mahalanobis}) {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<Tensor> inputs;
            Tensor h = random_mat(rng, hidden, 1, 0.3, 1.5);
            h.shape = Shape::vec(hidden);
            for (double& x : h.v) {
                if (rng.uniform01() < 0.5) x = -x;
            }
            inputs.push_back(h);                                 // 0: state
            inputs.push_back(random_mat(rng, pd, nc));           // 1: M
            inputs.push_back(random_mat(rng, hidden, pd));       // 2: D
            inputs.push_back(kind == Similarity::Mahalanobis     // 3: L
                                 ? random_lower(rng, hidden)
                                 : identity(hidden));
            auto rep = grad_check_graph(
                [kind](Tape& t, const std::vector<Var>& in) {
                    MixtureVars mv{in[1], in[2], in[3], kind};
                    MixtureReadoutVars r = mixture_lookup(t, in[0], mv);
                    Var probe = t.constant(Tensor::vec({0.8, -0.4, 0.3, -0.9}));
                    return t.add(t.mean(t.square(r.retrieval)),
                                 t.sum(t.mul(r.weights, probe)));
                },
                inputs, 1e-5);
            INFO(similarity_name(kind) << " trial " << trial << ": " << rep.str());
            REQUIRE(rep.max_rel_err < 1e-5);
        }
    }
}

TEST_CASE("batched lookup agrees with per-column lookups") {
    Rng rng(21);
    for (Similarity kind : {Similarity::Cosine, Similarity::Mahalanobis}) {
        LatentMixture mix = make_mixture(rng, 4, 3, 5, kind);
        Tensor batch = random_mat(rng, 4, 6, -2.0, 2.0);

        Tape tape;
        MixtureVars mv = bind(tape, mix);
        MixtureReadoutVars r = mixture_lookup(tape, tape.leaf(batch), mv);
        REQUIRE(tape.shape(r.weights) == Shape::mat(5, 6));
        REQUIRE(tape.shape(r.retrieval) == Shape::mat(3, 6));
        auto wv = tape.value(r.weights);
        auto pv = tape.value(r.retrieval);

        for (long j = 0; j < 6; ++j) {
            Tensor col = Tensor::zeros(Shape::vec(4));
            for (long i = 0; i < 4; ++i) col.at(i) = batch.at(i, j);
            MixtureReadout one = mixture_lookup(col, mix);
            for (long i = 0; i < 5; ++i) {
                REQUIRE(wv[i * 6 + j] == Catch::Approx(one.weights.v[i]).margin(1e-14));
            }
            for (long i = 0; i < 3; ++i) {
                REQUIRE(pv[i * 6 + j] == Catch::Approx(one.retrieval.v[i]).margin(1e-14));
            }
        }
    }
}
