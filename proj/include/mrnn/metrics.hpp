#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "mrnn/errors.hpp"

namespace mrnn {

inline double mean_absolute_error(const std::vector<double>& predictions,
                                  const std::vector<double>& targets) {
    if (predictions.size() != targets.size()) {
        throw ShapeError("mean_absolute_error: " + std::to_string(predictions.size()) +
                         " predictions vs " + std::to_string(targets.size()) + " targets");
    }
    if (predictions.empty()) {
        throw DataError("mean_absolute_error: no samples");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        sum += std::abs(predictions[i] - targets[i]);
    }
    return sum / static_cast<double>(predictions.size());
}

// Sum of absolute errors over sum of absolute targets; the target mass must
// be nonzero for the ratio to mean anything.
inline double relative_mean_absolute_error(const std::vector<double>& predictions,
                                           const std::vector<double>& targets) {
    if (predictions.size() != targets.size()) {
        throw ShapeError("relative_mean_absolute_error: " +
                         std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
    }
    if (predictions.empty()) {
        throw DataError("relative_mean_absolute_error: no samples");
    }
    double err = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        err += std::abs(predictions[i] - targets[i]);
        mass += std::abs(targets[i]);
    }
    if (mass == 0.0) {
        throw DataError("relative_mean_absolute_error: targets sum to zero");
    }
    return err / mass;
}

// exp of the token-weighted mean negative log-likelihood. Each entry is one
// document's (total nll, token count).
struct NllSum {
    double nll = 0.0;
    long tokens = 0;
};

inline double perplexity(const std::vector<NllSum>& documents) {
    double nll = 0.0;
    long tokens = 0;
    for (const NllSum& d : documents) {
        if (d.tokens < 1) {
            throw DataError("perplexity: document with no scored tokens");
        }
        nll += d.nll;
        tokens += d.tokens;
    }
    if (tokens == 0) {
        throw DataError("perplexity: no scored tokens");
    }
    return std::exp(nll / static_cast<double>(tokens));
}

inline double perplexity(const std::vector<double>& token_nlls) {
    if (token_nlls.empty()) {
        throw DataError("perplexity: no scored tokens");
    }
    double nll = 0.0;
    for (double x : token_nlls) nll += x;
    return std::exp(nll / static_cast<double>(token_nlls.size()));
}

}  // namespace mrnn
