#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrnn/data.hpp"
#include "mrnn/metrics.hpp"
#include "mrnn/model.hpp"
#include "mrnn/optim.hpp"
#include "mrnn/rng.hpp"

namespace mrnn {

struct TrainConfig {
    long epochs = 10;
    long batch = 32;
    double lr = 0.001;
    std::uint64_t seed = 1;
    // Used only when no evaluation set is passed explicitly: carves this
    // share off the training data (seeded) to score each epoch.
    double validation_fraction = 0.1;
    // Scalar heads report absolute error by default; this switches the
    // per-epoch metric to error relative to the target mass.
    bool relative_metric = false;

    void validate() const {
        if (epochs < 0) throw ConfigError("epochs must be nonnegative");
        if (batch < 1) throw ConfigError("batch size must be positive");
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate out of range");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
            throw ConfigError("validation fraction must lie in [0, 1)");
        }
    }
};

struct EpochReport {
    long epoch = 0;
    double train_loss = 0.0;
    // Held-out metric (absolute error for scalar heads, perplexity for
    // softmax heads); NaN when nothing was held out.
    double eval_metric = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> dispersion;
};

namespace detail {

// Samples a model can batch together: same step count, and same bucket when
// the mixture is bucket-keyed. Keys are ordered, so batch order is a pure
// function of the shuffle.
struct BatchKey {
    long bucket;
    long steps;
    bool operator<(const BatchKey& o) const {
        return bucket != o.bucket ? bucket < o.bucket : steps < o.steps;
    }
};

inline std::map<BatchKey, std::vector<std::size_t>> group_for_batching(
    const ModelSpec& spec, const std::vector<SequenceSample>& data,
    const std::vector<std::size_t>& order) {
    std::map<BatchKey, std::vector<std::size_t>> groups;
    for (std::size_t idx : order) {
        const SequenceSample& s = data[idx];
        BatchKey key{spec.mixture == MixtureSource::Bucketed ? s.bucket : 0, s.steps()};
        groups[key].push_back(idx);
    }
    return groups;
}

// Stacks batch columns: step k becomes an input-dim x batch matrix.
inline std::vector<Tensor> stack_steps(const std::vector<SequenceSample>& data,
                                       const std::vector<std::size_t>& batch, long from,
                                       long count) {
    const long T = data[batch[from]].steps();
    const long d = data[batch[from]].inputs.shape.cols;
    std::vector<Tensor> steps(T, Tensor::zeros(Shape::mat(d, count)));
    for (long j = 0; j < count; ++j) {
        const Tensor& in = data[batch[from + j]].inputs;
        for (long k = 0; k < T; ++k) {
            for (long c = 0; c < d; ++c) steps[k].at(c, j) = in.at(k, c);
        }
    }
    return steps;
}

inline double regression_batch(Tape& t, ParamSet& params, Adam* opt,
                               const std::vector<SequenceSample>& data,
                               const std::vector<std::size_t>& batch, long from, long count,
                               std::optional<long> bucket, std::vector<double>* preds) {
    t.reset();
    ModelVars mv = bind(t, params);
    std::vector<Tensor> stacked = stack_steps(data, batch, from, count);
    std::vector<Var> xs;
    xs.reserve(stacked.size());
    for (Tensor& s : stacked) xs.push_back(t.leaf(std::move(s)));
    Var pred = predict_scalar_batch(t, mv, xs, bucket);
    if (preds) {
        auto vals = t.value(pred);
        preds->assign(vals.begin(), vals.end());
        return 0.0;
    }
    Tensor targets = Tensor::zeros(Shape::mat(1, count));
    for (long j = 0; j < count; ++j) targets.at(0, j) = data[batch[from + j]].target;
    Var loss = l1_loss(t, pred, targets);
    const double value = t.value(loss)[0];
    if (opt) {
        t.backward(loss);
        opt->step(params.trainables(), collect_grads(t, mv));
    }
    return value;
}

}  // namespace detail

// One optimizer pass over the data per epoch. Scalar-head models train in
// column batches; softmax-head models accumulate per-document gradients
// into equally weighted batch updates. Aborts with the failing position
// when the loss stops being finite.
inline std::vector<EpochReport> train(ParamSet& params, const std::vector<SequenceSample>& data,
                                      const std::vector<SequenceSample>& eval_set,
                                      const TrainConfig& cfg);

// Scores without updating: mean absolute error for scalar heads (or error
// relative to target mass), perplexity for softmax heads.
inline double evaluate(ParamSet& params, const std::vector<SequenceSample>& data,
                       long batch = 256, bool relative = false);

// Per-sample scalar-head predictions, in data order.
inline std::vector<double> predict_all(ParamSet& params,
                                       const std::vector<SequenceSample>& data,
                                       long batch = 256);

inline std::vector<double> predict_all(ParamSet& params,
                                       const std::vector<SequenceSample>& data, long batch) {
    if (data.empty()) throw DataError("evaluation set is empty");
    if (batch < 1) throw ConfigError("batch size must be positive");
    if (params.spec.head != HeadKind::Scalar) {
        throw ConfigError("predict_all needs a scalar-head model");
    }
    Tape t;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto groups = detail::group_for_batching(params.spec, data, order);
    std::vector<double> preds(data.size(), 0.0);
    std::vector<double> chunk;
    for (const auto& [key, members] : groups) {
        std::optional<long> bucket;
        if (params.spec.mixture == MixtureSource::Bucketed) bucket = key.bucket;
        for (long from = 0; from < static_cast<long>(members.size()); from += batch) {
            const long count =
                std::min<long>(batch, static_cast<long>(members.size()) - from);
            detail::regression_batch(t, params, nullptr, data, members, from, count, bucket,
                                     &chunk);
            for (long j = 0; j < count; ++j) preds[members[from + j]] = chunk[j];
        }
    }
    return preds;
}

inline double evaluate(ParamSet& params, const std::vector<SequenceSample>& data, long batch,
                       bool relative) {
    if (data.empty()) throw DataError("evaluation set is empty");
    if (batch < 1) throw ConfigError("batch size must be positive");
    Tape t;
    if (params.spec.head == HeadKind::Softmax) {
        double nll = 0.0;
        long tokens = 0;
        for (const SequenceSample& s : data) {
            t.reset();
            ModelVars mv = bind(t, params);
            std::optional<long> bucket;
            if (params.spec.mixture == MixtureSource::Bucketed) bucket = s.bucket;
            const double mean_nll = t.value(document_nll(t, mv, s.tokens, bucket))[0];
            const long n = static_cast<long>(s.tokens.size()) - 1;
            nll += mean_nll * static_cast<double>(n);
            tokens += n;
        }
        return std::exp(nll / static_cast<double>(tokens));
    }
    std::vector<double> preds = predict_all(params, data, batch);
    std::vector<double> targets(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) targets[i] = data[i].target;
    return relative ? relative_mean_absolute_error(preds, targets)
                    : mean_absolute_error(preds, targets);
}

inline std::vector<EpochReport> train(ParamSet& params, const std::vector<SequenceSample>& data,
                                      const std::vector<SequenceSample>& eval_set,
                                      const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw DataError("training set is empty");
    const bool lm = params.spec.head == HeadKind::Softmax;

    std::vector<SequenceSample> train_data = data;
    std::vector<SequenceSample> held_out = eval_set;
    if (held_out.empty() && cfg.validation_fraction > 0.0) {
        const auto n = static_cast<long>(data.size());
        const long nval = static_cast<long>(cfg.validation_fraction * static_cast<double>(n));
        if (nval > 0) {
            std::vector<std::size_t> order(data.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng split_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
            split_rng.shuffle(order);
            train_data.clear();
            for (long i = 0; i < n; ++i) {
                (i < n - nval ? train_data : held_out).push_back(data[order[i]]);
            }
        }
    }

    Adam opt(AdamConfig{.lr = cfg.lr});
    Rng shuffle_rng(cfg.seed);
    Tape t;
    std::vector<EpochReport> out;
    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<Tensor> grad_sum;  // LM batches: per-document gradient average
    for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        long seen = 0, batch_index = 0;
        auto check_finite = [&](double loss) {
            if (!std::isfinite(loss)) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));
            }
        };
        if (lm) {
            for (long from = 0; from < static_cast<long>(order.size()); from += cfg.batch) {
                ++batch_index;
                const long count =
                    std::min<long>(cfg.batch, static_cast<long>(order.size()) - from);
                grad_sum.clear();
                double batch_loss = 0.0;
                for (long j = 0; j < count; ++j) {
                    const SequenceSample& s = train_data[order[from + j]];
                    t.reset();
                    ModelVars mv = bind(t, params);
                    std::optional<long> bucket;
                    if (params.spec.mixture == MixtureSource::Bucketed) bucket = s.bucket;
                    Var nll = document_nll(t, mv, s.tokens, bucket);
                    batch_loss += t.value(nll)[0];
                    t.backward(nll);
                    std::vector<Tensor> g = collect_grads(t, mv);
                    if (grad_sum.empty()) {
                        grad_sum = std::move(g);
                    } else {
                        for (std::size_t gi = 0; gi < g.size(); ++gi) {
                            for (std::size_t k = 0; k < g[gi].v.size(); ++k) {
                                grad_sum[gi].v[k] += g[gi].v[k];
                            }
                        }
                    }
                }
                batch_loss /= static_cast<double>(count);
                check_finite(batch_loss);
                for (Tensor& g : grad_sum) {
                    for (double& x : g.v) x /= static_cast<double>(count);
                }
                opt.step(params.trainables(), grad_sum);
                loss_sum += batch_loss * static_cast<double>(count);
                seen += count;
            }
        } else {
            auto groups = detail::group_for_batching(params.spec, train_data, order);
            // Flatten the per-group batches and shuffle their order so that
            // bucketed models interleave buckets within an epoch instead of
            // visiting each bucket as one long contiguous block.
            struct BatchRef {
                const std::vector<std::size_t>* members;
                std::optional<long> bucket;
                long from;
                long count;
            };
            std::vector<BatchRef> batches;
            for (const auto& [key, members] : groups) {
                std::optional<long> bucket;
                if (params.spec.mixture == MixtureSource::Bucketed) bucket = key.bucket;
                for (long from = 0; from < static_cast<long>(members.size());
                     from += cfg.batch) {
                    const long count =
                        std::min<long>(cfg.batch, static_cast<long>(members.size()) - from);
                    batches.push_back({&members, bucket, from, count});
                }
            }
            shuffle_rng.shuffle(batches);
            for (const BatchRef& b : batches) {
                ++batch_index;
                const double loss = detail::regression_batch(
                    t, params, &opt, train_data, *b.members, b.from, b.count, b.bucket,
                    nullptr);
                check_finite(loss);
                loss_sum += loss * static_cast<double>(b.count);
                seen += b.count;
            }
        }
        EpochReport r;
        r.epoch = epoch;
        r.train_loss = loss_sum / static_cast<double>(seen);
        if (!held_out.empty()) {
            r.eval_metric = evaluate(params, held_out, 256, cfg.relative_metric);
        }
        if (params.spec.has_mixture()) r.dispersion = params.dispersion();
        out.push_back(r);
    }
    return out;
}

}  // namespace mrnn
