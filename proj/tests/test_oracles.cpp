// The posterior oracles are independent derivations of the lookup weights
// straight from Gaussian / von Mises-Fisher densities. These tests pin
// their own behavior and then confirm the softmax-over-similarity weights
// coincide with the density-ratio posteriors.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mrnn/mixture.hpp"
#include "mrnn/oracles.hpp"
#include "mrnn/rng.hpp"

using namespace mrnn;

namespace {

Tensor identity(long n) {
    Tensor t = Tensor::zeros(Shape::mat(n, n));
    for (long i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor random_vec(Rng& rng, long n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::vec(std::move(v));
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

// Plain-loop products, kept separate from the tape on purpose.
Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros(Shape::mat(a.shape.rows, b.shape.cols));
    for (long i = 0; i < a.shape.rows; ++i) {
        for (long k = 0; k < a.shape.cols; ++k) {
            for (long j = 0; j < b.shape.cols; ++j) {
                out.at(i, j) += a.at(i, k) * b.at(k, j);
            }
        }
    }
    return out;
}

Tensor column(const Tensor& m, long j) {
    Tensor out = Tensor::zeros(Shape::vec(m.shape.rows));
    for (long i = 0; i < m.shape.rows; ++i) out.at(i) = m.at(i, j);
    return out;
}

void normalize(Tensor& v) {
    double n = 0.0;
    for (double x : v.v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v.v) x /= n;
}

}  // namespace

TEST_CASE("gaussian posterior is uniform when the state is equidistant from all means") {
    // means at +-e1 with identity precision; origin is equidistant
    std::vector<Tensor> means = {Tensor::vec({1.0, 0.0}), Tensor::vec({-1.0, 0.0})};
    auto post = gaussian_posterior_oracle(Tensor::vec({0.0, 0.0}), means, identity(2));
    REQUIRE(post[0] == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(post[1] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("gaussian posterior concentrates on a mean placed at the state") {
    Rng rng(31);
    Tensor h = random_vec(rng, 4);
    std::vector<Tensor> means = {h, Tensor::vec({20.0, 20.0, 20.0, 20.0}),
                                 Tensor::vec({-20.0, 20.0, -20.0, 20.0})};
    auto post = gaussian_posterior_oracle(h, means, identity(4));
    REQUIRE(post[0] >= 1.0 - 1e-10);
}

TEST_CASE("gaussian oracle rejects asymmetric and indefinite precisions") {
    std::vector<Tensor> means = {Tensor::vec({0.0, 0.0})};
    Tensor asym = Tensor::mat(2, 2, {1.0, 0.5, -0.5, 1.0});
    REQUIRE_THROWS_AS(gaussian_posterior_oracle(Tensor::vec({1.0, 0.0}), means, asym),
                      NumericError);
    // eigenvalues 3 and -1: symmetric but indefinite
    Tensor indef = Tensor::mat(2, 2, {1.0, 2.0, 2.0, 1.0});
    REQUIRE_THROWS_AS(gaussian_posterior_oracle(Tensor::vec({1.0, 0.0}), means, indef),
                      NumericError);
}

TEST_CASE("gaussian oracle accepts a semidefinite precision") {
    // rank-1 PSD: [[1,1],[1,1]]
    std::vector<Tensor> means = {Tensor::vec({1.0, 0.0}), Tensor::vec({0.0, 1.0})};
    Tensor psd = Tensor::mat(2, 2, {1.0, 1.0, 1.0, 1.0});
    auto post = gaussian_posterior_oracle(Tensor::vec({0.2, 0.4}), means, psd);
    // both means have the same coordinate sum, so densities tie
    REQUIRE(post[0] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("softmax of mahalanobis similarities reproduces the gaussian posterior") {
    Rng rng(32);
    double worst = 0.0;
    for (int trial = 0; trial < 300; ++trial) {
        const long hidden = 8;
        const long nc = 2 + static_cast<long>(rng.below(9));  // 2..10 components
        const long pd = 1 + static_cast<long>(rng.below(6));
        LatentMixture mix(random_mat(rng, pd, nc), random_mat(rng, hidden, pd),
                          random_lower(rng, hidden), Similarity::Mahalanobis);
        Tensor h = random_vec(rng, hidden, -2.0, 2.0);

        MixtureReadout r = mixture_lookup(h, mix);

        // independent path: means D*M_i and precision LL^T by plain loops
        Tensor u = matmul_plain(mix.D, mix.M);
        std::vector<Tensor> means;
        for (long i = 0; i < nc; ++i) means.push_back(column(u, i));
        Tensor precision = Tensor::zeros(Shape::mat(hidden, hidden));
        for (long i = 0; i < hidden; ++i) {
            for (long j = 0; j < hidden; ++j) {
                for (long k = 0; k < hidden; ++k) {
                    precision.at(i, j) += mix.L.at(i, k) * mix.L.at(j, k);
                }
            }
        }
        auto post = gaussian_posterior_oracle(h, means, precision);
        for (long i = 0; i < nc; ++i) {
            worst = std::max(worst, std::fabs(post[i] - r.weights.v[i]));
        }
    }
    INFO("largest posterior-vs-weights gap: " << worst);
    REQUIRE(worst <= 1e-10);
}

TEST_CASE("vmf posterior of a matching and an orthogonal mean is [e, 1]/(e+1)") {
    Tensor h = Tensor::vec({1.0, 0.0});
    std::vector<Tensor> means = {h, Tensor::vec({0.0, 1.0})};
    auto post = vmf_posterior_oracle(h, means);
    const double e = std::exp(1.0);
    REQUIRE(post[0] == Catch::Approx(e / (e + 1.0)).margin(1e-14));
    REQUIRE(post[1] == Catch::Approx(1.0 / (e + 1.0)).margin(1e-14));
}

TEST_CASE("vmf posterior over identical means is uniform") {
    Tensor mu = Tensor::vec({0.0, 0.0, 1.0});
    std::vector<Tensor> means = {mu, mu, mu, mu};
    auto post = vmf_posterior_oracle(mu, means);
    for (double p : post) REQUIRE(p == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("vmf oracle rejects off-sphere inputs") {
    std::vector<Tensor> means = {Tensor::vec({1.0, 0.0})};
    REQUIRE_THROWS_AS(vmf_posterior_oracle(Tensor::vec({1.0, 1.0}), means), NumericError);
    std::vector<Tensor> bad_means = {Tensor::vec({0.5, 0.0})};
    REQUIRE_THROWS_AS(vmf_posterior_oracle(Tensor::vec({1.0, 0.0}), bad_means), NumericError);
}

TEST_CASE("softmax of cosine similarities reproduces the vmf posterior on the sphere") {
    Rng rng(33);
    double worst = 0.0;
    for (int trial = 0; trial < 300; ++trial) {
        const long hidden = 2 + static_cast<long>(rng.below(7));
        const long pd = 1 + static_cast<long>(rng.below(4));
        const long nc = 2 + static_cast<long>(rng.below(7));

        // draw raw prototypes, then rescale each so its projection D*M_i
        // lands on the unit sphere (cosine ignores scale; the density does not)
        Tensor D = random_mat(rng, hidden, pd);
        Tensor M = random_mat(rng, pd, nc);
        Tensor u = matmul_plain(D, M);
        for (long i = 0; i < nc; ++i) {
            double norm2 = 0.0;
            for (long k = 0; k < hidden; ++k) norm2 += u.at(k, i) * u.at(k, i);
            const double norm = std::sqrt(norm2);
            if (norm < 1e-3) {  // redraw-free guard: nudge a coordinate
                M.at(0, i) += 1.0;
                u = matmul_plain(D, M);
                i = -1;
                continue;
            }
            for (long k = 0; k < pd; ++k) M.at(k, i) /= norm;
        }
        u = matmul_plain(D, M);

        LatentMixture mix(M, D, identity(hidden), Similarity::Cosine);
        Tensor h = random_vec(rng, hidden, -1.0, 1.0);
        if (std::fabs(h.v[0]) < 0.05) h.v[0] = 0.5;
        normalize(h);

        MixtureReadout r = mixture_lookup(h, mix);
        std::vector<Tensor> means;
        for (long i = 0; i < nc; ++i) means.push_back(column(u, i));
        auto post = vmf_posterior_oracle(h, means);
        for (long i = 0; i < nc; ++i) {
            worst = std::max(worst, std::fabs(post[i] - r.weights.v[i]));
        }
    }
    INFO("largest posterior-vs-weights gap: " << worst);
    REQUIRE(worst <= 1e-10);
}
