#pragma once

// Posterior probabilities computed straight from the generative densities,
// with no shared code with the mixture layer. These exist so the layer's
// softmax-over-similarity weights can be checked against an independently
// written derivation of the same quantity.

#include <cmath>
#include <string>
#include <vector>

#include "mrnn/autodiff.hpp"
#include "mrnn/errors.hpp"

namespace mrnn {

namespace detail {

// Cholesky-based positive-semidefiniteness test. Pivots are allowed to hit
// zero (semidefinite case); a pivot below -tol means a negative eigenvalue.
inline bool is_psd(const Tensor& a, double tol) {
    const long n = a.shape.rows;
    std::vector<double> c(a.v);
    for (long j = 0; j < n; ++j) {
        for (long k = 0; k < j; ++k) {
            const double ljk = c[j * n + k];
            for (long i = j; i < n; ++i) {
                c[i * n + j] -= c[i * n + k] * ljk;
            }
        }
        double piv = c[j * n + j];
        if (piv < -tol) return false;
        if (piv <= tol) {
            // semidefinite direction: its column must vanish too
            for (long i = j + 1; i < n; ++i) {
                if (std::fabs(c[i * n + j]) > std::sqrt(tol)) return false;
            }
            for (long i = j; i < n; ++i) c[i * n + j] = 0.0;
            continue;
        }
        const double root = std::sqrt(piv);
        for (long i = j; i < n; ++i) c[i * n + j] /= root;
    }
    return true;
}

}  // namespace detail

// Posterior P(z=i | h) for a Gaussian mixture with the given component
// means, one shared precision, and a uniform prior: the shared normalizer
// and the prior cancel in the density ratio, leaving
//   P(z=i|h) = exp(-1/2 (h-mu_i)^T P (h-mu_i)) / sum_j exp(...).
inline std::vector<double> gaussian_posterior_oracle(const Tensor& h,
                                                     const std::vector<Tensor>& means,
                                                     const Tensor& precision) {
    const long d = h.shape.rows;
    if (h.shape.rank != 1) {
        throw ShapeError("state must be a vector, got " + h.shape.str());
    }
    if (means.empty()) {
        throw ConfigError("need at least one component mean");
    }
    for (const Tensor& mu : means) {
        if (!(mu.shape == h.shape)) {
            throw ShapeError("mean of shape " + mu.shape.str() + " does not match state " +
                             h.shape.str());
        }
    }
    if (precision.shape.rank != 2 || precision.shape.rows != d || precision.shape.cols != d) {
        throw ShapeError("precision must be " + std::to_string(d) + "x" + std::to_string(d) +
                         ", got " + precision.shape.str());
    }
    double maxdiag = 1.0;
    for (long i = 0; i < d; ++i) {
        maxdiag = std::max(maxdiag, std::fabs(precision.at(i, i)));
        for (long j = 0; j < d; ++j) {
            if (std::fabs(precision.at(i, j) - precision.at(j, i)) > 1e-9 * maxdiag) {
                throw NumericError("precision matrix is not symmetric");
            }
        }
    }
    if (!detail::is_psd(precision, 1e-12 * maxdiag)) {
        throw NumericError("precision matrix is not positive semidefinite");
    }

    const std::size_t n = means.size();
    std::vector<double> logdens(n);
    std::vector<double> r(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (long k = 0; k < d; ++k) r[k] = h.at(k) - means[i].at(k);
        double q = 0.0;
        for (long a = 0; a < d; ++a) {
            double pr = 0.0;
            for (long b = 0; b < d; ++b) pr += precision.at(a, b) * r[b];
            q += r[a] * pr;
        }
        logdens[i] = -0.5 * q;
    }
    double top = logdens[0];
    for (double v : logdens) top = std::max(top, v);
    double z = 0.0;
    std::vector<double> post(n);
    for (std::size_t i = 0; i < n; ++i) {
        post[i] = std::exp(logdens[i] - top);
        z += post[i];
    }
    for (double& v : post) v /= z;
    return post;
}

// Posterior P(z=i | h) for a von Mises-Fisher mixture with concentration 1,
// uniform prior and unit-norm means: densities are C * exp(h . mu_i) with C
// shared, so the ratio reduces to exp(h . mu_i) / sum_j exp(h . mu_j).
// Only defined on the unit sphere; non-unit inputs are rejected.
inline std::vector<double> vmf_posterior_oracle(const Tensor& h,
                                                const std::vector<Tensor>& means) {
    if (h.shape.rank != 1) {
        throw ShapeError("state must be a vector, got " + h.shape.str());
    }
    if (means.empty()) {
        throw ConfigError("need at least one component mean");
    }
    auto require_unit = [&](const Tensor& v, const char* which) {
        double n2 = 0.0;
        for (double x : v.v) n2 += x * x;
        if (std::fabs(std::sqrt(n2) - 1.0) > 1e-9) {
            throw NumericError(std::string(which) + " must lie on the unit sphere (norm " +
                               std::to_string(std::sqrt(n2)) + ")");
        }
    };
    require_unit(h, "state");
    const std::size_t n = means.size();
    std::vector<double> logdens(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(means[i].shape == h.shape)) {
            throw ShapeError("mean of shape " + means[i].shape.str() + " does not match state " +
                             h.shape.str());
        }
        require_unit(means[i], "mean");
        double dot = 0.0;
        for (long k = 0; k < h.shape.rows; ++k) dot += h.at(k) * means[i].at(k);
        logdens[i] = dot;
    }
    double top = logdens[0];
    for (double v : logdens) top = std::max(top, v);
    double z = 0.0;
    std::vector<double> post(n);
    for (std::size_t i = 0; i < n; ++i) {
        post[i] = std::exp(logdens[i] - top);
        z += post[i];
    }
    for (double& v : post) v /= z;
    return post;
}

}  // namespace mrnn
