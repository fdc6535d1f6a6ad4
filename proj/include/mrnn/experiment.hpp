#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrnn/checkpoint.hpp"
#include "mrnn/data.hpp"
#include "mrnn/train.hpp"

namespace mrnn {

enum class TaskKind { Synthetic, TimeseriesCsv, LanguageModel };

inline const char* task_name(TaskKind t) {
    switch (t) {
        case TaskKind::Synthetic: return "synthetic";
        case TaskKind::TimeseriesCsv: return "timeseries-csv";
        case TaskKind::LanguageModel: return "language-model";
    }
    throw ConfigError("unknown task");
}

inline TaskKind parse_task(const std::string& name) {
    if (name == "synthetic") return TaskKind::Synthetic;
    if (name == "timeseries-csv") return TaskKind::TimeseriesCsv;
    if (name == "language-model") return TaskKind::LanguageModel;
    throw ConfigError("unknown task \"" + name +
                      "\" (expected synthetic, timeseries-csv or language-model)");
}

// A cell plus the mixture flavor bolted onto it, e.g. "pm-gru".
struct ModelVariant {
    CellKind cell = CellKind::Lstm;
    MixtureSource mixture = MixtureSource::None;

    std::string name() const {
        std::string prefix = mixture == MixtureSource::None     ? ""
                             : mixture == MixtureSource::Single ? "m-"
                                                                : "pm-";
        return prefix + cell_name(cell);
    }
};

inline ModelVariant parse_variant(const std::string& name) {
    ModelVariant v;
    std::string rest = name;
    if (rest.rfind("pm-", 0) == 0) {
        v.mixture = MixtureSource::Bucketed;
        rest = rest.substr(3);
    } else if (rest.rfind("m-", 0) == 0) {
        v.mixture = MixtureSource::Single;
        rest = rest.substr(2);
    }
    v.cell = parse_cell(rest);
    return v;
}

struct ExperimentConfig {
    TaskKind task = TaskKind::Synthetic;
    std::vector<ModelVariant> models = {{CellKind::Lstm, MixtureSource::None}};
    Similarity similarity = Similarity::Cosine;
    long hidden = 8;
    long embed = 32;
    long proto_dim = 4;
    long components = 3;
    long epochs = 10;
    long batch = 32;
    double lr = 0.001;
    std::uint64_t seed = 1;
    double validation_fraction = 0.0;
    long repeats = 5;
    // task data
    long synth_n = 25600;
    long synth_m = 128;
    long vocab = 800;
    long history_days = 56;
    std::string data_path;  // timeseries CSV or corpus TSV
    std::string out_dir;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (repeats < 1) throw ConfigError("repeats must be at least 1");
        if (batch < 1) throw ConfigError("batch size must be positive");
        if (hidden < 1) throw ConfigError("hidden size must be positive");
        if (models.empty()) throw ConfigError("no models selected");
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate out of range");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
            throw ConfigError("validation fraction must lie in [0, 1)");
        }
        bool mixture = false;
        for (const ModelVariant& v : models) mixture |= v.mixture != MixtureSource::None;
        if (mixture && (proto_dim < 1 || components < 1)) {
            throw ConfigError("mixture models need positive m and n dimensions");
        }
        if (task == TaskKind::Synthetic) {
            if (synth_n < 1 || synth_m < 2) {
                throw ConfigError("synthetic task needs n >= 1 and m >= 2");
            }
        } else if (data_path.empty()) {
            throw ConfigError(std::string(task_name(task)) + " task needs a data path");
        }
        if (task == TaskKind::LanguageModel) {
            if (vocab < 2) throw ConfigError("vocab must be at least 2");
            if (embed < 1) throw ConfigError("embed size must be positive");
        }
        if (task == TaskKind::TimeseriesCsv && history_days < 1) {
            throw ConfigError("history must cover at least one day");
        }
    }

    const char* metric() const {
        switch (task) {
            case TaskKind::Synthetic: return "mae";
            case TaskKind::TimeseriesCsv: return "rmae";
            case TaskKind::LanguageModel: return "perplexity";
        }
        throw ConfigError("unknown task");
    }
};

// Reads the JSON config document; unknown keys are rejected so typos fail
// loudly rather than silently falling back to defaults.
inline ExperimentConfig parse_config_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "task") {
                cfg.task = parse_task(value.get<std::string>());
            } else if (key == "models" || key == "model") {
                cfg.models.clear();
                if (value.is_string()) {
                    cfg.models.push_back(parse_variant(value.get<std::string>()));
                } else {
                    for (const auto& m : value) {
                        cfg.models.push_back(parse_variant(m.get<std::string>()));
                    }
                }
            } else if (key == "similarity") {
                cfg.similarity = parse_similarity(value.get<std::string>());
            } else if (key == "hidden") {
                cfg.hidden = value.get<long>();
            } else if (key == "embed") {
                cfg.embed = value.get<long>();
            } else if (key == "m") {
                cfg.proto_dim = value.get<long>();
            } else if (key == "n") {
                cfg.components = value.get<long>();
            } else if (key == "epochs") {
                cfg.epochs = value.get<long>();
            } else if (key == "batch") {
                cfg.batch = value.get<long>();
            } else if (key == "lr") {
                cfg.lr = value.get<double>();
            } else if (key == "seed") {
                cfg.seed = value.get<std::uint64_t>();
            } else if (key == "validation_fraction") {
                cfg.validation_fraction = value.get<double>();
            } else if (key == "repeats") {
                cfg.repeats = value.get<long>();
            } else if (key == "synth_n" || key == "count") {
                cfg.synth_n = value.get<long>();
            } else if (key == "synth_m" || key == "length") {
                cfg.synth_m = value.get<long>();
            } else if (key == "vocab") {
                cfg.vocab = value.get<long>();
            } else if (key == "history_days") {
                cfg.history_days = value.get<long>();
            } else if (key == "data") {
                cfg.data_path = value.get<std::string>();
            } else if (key == "out") {
                cfg.out_dir = value.get<std::string>();
            } else {
                throw ConfigError("unknown config key \"" + key + "\"");
            }
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config key \"" + key + "\" has the wrong type");
        }
    }
    return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("cannot open config file " + path);
    }
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) {
        throw ConfigError("config file " + path + " is not valid JSON");
    }
    if (!j.is_object()) {
        throw ConfigError("config file " + path + " must hold a JSON object");
    }
    return parse_config_json(j);
}

struct RepeatResult {
    std::uint64_t seed = 0;
    std::vector<EpochReport> epochs;
    double final_metric = std::numeric_limits<double>::quiet_NaN();
    std::string aborted;  // non-empty when the run died on a non-finite loss
};

struct VariantReport {
    std::string model;
    std::vector<RepeatResult> repeats;
    double mean_final = std::numeric_limits<double>::quiet_NaN();
    std::vector<ParamSet> final_params;  // one per completed repeat
};

struct RunReport {
    ExperimentConfig config;
    std::string metric;
    std::vector<std::uint64_t> seeds;
    std::vector<VariantReport> variants;
    double wall_seconds = 0.0;
};

struct TaskData {
    std::vector<SequenceSample> train, test;
    long input = 0;
    long buckets = 0;
    long vocab = 0;  // resolved vocabulary size (language model only)
};

// Materializes the configured task: generates or loads the data and fixes
// the train/test split (a pure function of the config and seed).
inline TaskData build_task_data(const ExperimentConfig& cfg) {
    TaskData d;
    switch (cfg.task) {
        case TaskKind::Synthetic: {
            auto samples = generate_synthetic(cfg.synth_n, cfg.synth_m);
            std::tie(d.train, d.test) = split_half(samples, cfg.seed);
            d.input = 1;
            d.buckets = 3;
            break;
        }
        case TaskKind::TimeseriesCsv: {
            WindowedSeries w = window_timeseries_file(cfg.data_path, cfg.history_days);
            if (w.samples.size() < 10) {
                throw DataError("time series yields too few windows (" +
                                std::to_string(w.samples.size()) + ")");
            }
            // chronological split: the most recent fifth is held out
            const std::size_t cut = w.samples.size() - w.samples.size() / 5;
            d.train.assign(w.samples.begin(), w.samples.begin() + cut);
            d.test.assign(w.samples.begin() + cut, w.samples.end());
            d.input = 3;
            d.buckets = 2;
            break;
        }
        case TaskKind::LanguageModel: {
            Corpus corpus = tokenize_corpus(load_corpus_file(cfg.data_path), cfg.vocab);
            std::tie(d.train, d.test) = split_half(corpus.samples, cfg.seed);
            d.input = cfg.embed;
            d.buckets = static_cast<long>(corpus.groups.size());
            d.vocab = corpus.vocab.size();
            break;
        }
    }
    if (d.train.empty() || d.test.empty()) {
        throw DataError("task split left an empty train or test set");
    }
    return d;
}

namespace detail {

inline ModelSpec variant_spec(const ExperimentConfig& cfg, const ModelVariant& v,
                              const TaskData& d) {
    ModelSpec s;
    s.cell = v.cell;
    s.mixture = v.mixture;
    s.similarity = cfg.similarity;
    s.hidden = cfg.hidden;
    s.input = d.input;
    if (v.mixture != MixtureSource::None) {
        s.proto_dim = cfg.proto_dim;
        s.components = cfg.components;
        if (v.mixture == MixtureSource::Bucketed) s.buckets = d.buckets;
    }
    if (cfg.task == TaskKind::LanguageModel) {
        s.head = HeadKind::Softmax;
        s.vocab = d.vocab;
        s.embedded = true;
    } else {
        s.head = HeadKind::Scalar;
    }
    s.validate();
    return s;
}

}  // namespace detail

// Trains every configured model variant for the configured repeats and
// scores each on the held-out split. Fully deterministic given the seed:
// repeat r uses seed + r for initialization and shuffling, and the data
// split depends only on the seed.
inline RunReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    TaskData data = build_task_data(cfg);

    RunReport report;
    report.config = cfg;
    report.metric = cfg.metric();
    for (long r = 0; r < cfg.repeats; ++r) {
        report.seeds.push_back(cfg.seed + static_cast<std::uint64_t>(r));
    }
    const bool relative = cfg.task == TaskKind::TimeseriesCsv;

    for (const ModelVariant& v : cfg.models) {
        VariantReport vr;
        vr.model = v.name();
        ModelSpec spec = detail::variant_spec(cfg, v, data);
        double sum = 0.0;
        long done = 0;
        for (std::uint64_t seed : report.seeds) {
            RepeatResult rr;
            rr.seed = seed;
            ParamSet params = init_params(spec, seed);
            TrainConfig tc;
            tc.epochs = cfg.epochs;
            tc.batch = cfg.batch;
            tc.lr = cfg.lr;
            tc.seed = seed;
            tc.validation_fraction = cfg.validation_fraction;
            tc.relative_metric = relative;
            try {
                rr.epochs = train(params, data.train, data.test, tc);
                rr.final_metric = evaluate(params, data.test, 256, relative);
                sum += rr.final_metric;
                ++done;
                vr.final_params.push_back(params);
            } catch (const NumericError& e) {
                rr.aborted = e.what();
            }
            vr.repeats.push_back(std::move(rr));
        }
        if (done > 0) vr.mean_final = sum / static_cast<double>(done);
        report.variants.push_back(std::move(vr));
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// ---------------------------------------------------------------------------
// Comparison table and artifact files
// ---------------------------------------------------------------------------

struct CompareTable {
    std::string csv;
    std::string text;
};

namespace detail {

inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string fmt4(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

}  // namespace detail

// Merges variant results into one model-by-metric table (CSV plus aligned
// text), flagging the best (lowest) mean. All reports must share a task.
inline CompareTable compare(const std::vector<RunReport>& reports) {
    if (reports.empty()) {
        throw ConfigError("nothing to compare");
    }
    for (const RunReport& r : reports) {
        if (r.metric != reports[0].metric || r.config.task != reports[0].config.task) {
            throw ConfigError("cannot compare runs of different tasks (" +
                              std::string(task_name(r.config.task)) + " vs " +
                              std::string(task_name(reports[0].config.task)) + ")");
        }
    }
    struct Row {
        std::string model;
        double mean;
        long repeats;
    };
    std::vector<Row> rows;
    for (const RunReport& r : reports) {
        for (const VariantReport& v : r.variants) {
            long done = 0;
            for (const RepeatResult& rr : v.repeats) done += rr.aborted.empty();
            rows.push_back({v.model, v.mean_final, done});
        }
    }
    double best = std::numeric_limits<double>::infinity();
    for (const Row& row : rows) {
        if (!std::isnan(row.mean)) best = std::min(best, row.mean);
    }
    const std::string metric = reports[0].metric;
    std::ostringstream csv, text;
    csv << "model,mean_" << metric << ",repeats,best\n";
    std::size_t width = 5;
    for (const Row& row : rows) width = std::max(width, row.model.size());
    text << std::string(width - 5, ' ') << "model  mean_" << metric << "  repeats  best\n";
    for (const Row& row : rows) {
        const bool is_best = !std::isnan(row.mean) && row.mean == best;
        csv << row.model << ',' << detail::fmt17(row.mean) << ',' << row.repeats << ','
            << (is_best ? "yes" : "no") << '\n';
        text << std::string(width - row.model.size(), ' ') << row.model << "  "
             << detail::fmt4(row.mean) << std::string(5 + metric.size() - 6, ' ') << "  "
             << row.repeats << "        " << (is_best ? "*" : "") << '\n';
    }
    return {csv.str(), text.str()};
}

// Writes report.csv + checkpoints per variant, summary.csv, a manifest
// echoing the resolved config, and timing.txt. Everything except timing.txt
// is byte-identical across reruns with the same config and seed.
inline void write_artifacts(const RunReport& report, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    for (const VariantReport& v : report.variants) {
        const fs::path dir = fs::path(out_dir) / v.model;
        fs::create_directories(dir);
        std::ofstream csv(dir / "report.csv");
        csv << "repeat,epoch,train_loss,eval_metric,dispersion\n";
        for (std::size_t r = 0; r < v.repeats.size(); ++r) {
            for (const EpochReport& e : v.repeats[r].epochs) {
                csv << (r + 1) << ',' << e.epoch << ',' << detail::fmt17(e.train_loss) << ','
                    << detail::fmt17(e.eval_metric) << ',';
                if (e.dispersion) csv << detail::fmt17(*e.dispersion);
                csv << '\n';
            }
            if (!v.repeats[r].aborted.empty()) {
                csv << (r + 1) << ",aborted,,,\n";
            }
        }
        for (std::size_t r = 0; r < v.final_params.size(); ++r) {
            save_checkpoint(v.final_params[r],
                            (dir / ("checkpoint-" + std::to_string(r + 1) + ".ckpt")).string());
        }
    }
    std::ofstream summary(fs::path(out_dir) / "summary.csv");
    summary << compare({report}).csv;

    const ExperimentConfig& c = report.config;
    std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
    manifest << "task: " << task_name(c.task) << '\n';
    manifest << "models:";
    for (const ModelVariant& v : c.models) manifest << ' ' << v.name();
    manifest << '\n';
    manifest << "metric: " << report.metric << '\n';
    manifest << "similarity: " << similarity_name(c.similarity) << '\n';
    manifest << "hidden: " << c.hidden << '\n';
    if (c.task == TaskKind::LanguageModel) {
        manifest << "embed: " << c.embed << '\n';
        manifest << "vocab: " << c.vocab << '\n';
    }
    manifest << "m: " << c.proto_dim << '\n';
    manifest << "n: " << c.components << '\n';
    manifest << "epochs: " << c.epochs << '\n';
    manifest << "batch: " << c.batch << '\n';
    manifest << "lr: " << detail::fmt17(c.lr) << '\n';
    manifest << "validation_fraction: " << detail::fmt17(c.validation_fraction) << '\n';
    manifest << "repeats: " << c.repeats << '\n';
    manifest << "seed: " << c.seed << '\n';
    manifest << "seeds:";
    for (std::uint64_t s : report.seeds) manifest << ' ' << s;
    manifest << '\n';
    if (c.task == TaskKind::Synthetic) {
        manifest << "synth_n: " << c.synth_n << '\n';
        manifest << "synth_m: " << c.synth_m << '\n';
    }
    if (c.task == TaskKind::TimeseriesCsv) {
        manifest << "history_days: " << c.history_days << '\n';
    }
    if (!c.data_path.empty()) {
        manifest << "data: " << c.data_path << '\n';
    }

    std::ofstream timing(fs::path(out_dir) / "timing.txt");
    timing << detail::fmt4(report.wall_seconds) << " s\n";
}

}  // namespace mrnn
