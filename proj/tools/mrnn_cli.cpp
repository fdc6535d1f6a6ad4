// Command-line front end: data generation, training, evaluation, and model
// comparison for mixture-augmented recurrent sequence models.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mrnn/mrnn.hpp"

namespace fs = std::filesystem;
using namespace mrnn;

namespace {

// Every option a subcommand may take; each subcommand applies only the
// flags the user actually passed on top of the config file.
struct Flags {
    std::string config, task, model, mixture, similarity, out, data;
    long hidden = 0, embed = 0, m = 0, n = 0, epochs = 0, batch = 0, repeats = 0;
    long count = 0, length = 0, vocab = 0, history_days = 0;
    double lr = 0.0, validation_fraction = 0.0;
    std::uint64_t seed = 0;
};

void add_options(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON config file; flags override its fields");
    cmd->add_option("--task", f.task, "synthetic | timeseries-csv | language-model");
    cmd->add_option("--model", f.model,
                    "comma-separated variants, e.g. lstm,m-lstm,pm-lstm (cells: rnn, lstm, gru)");
    cmd->add_option("--mixture", f.mixture,
                    "none | single | bucketed; applied to every selected model");
    cmd->add_option("--similarity", f.similarity, "cosine | mahalanobis");
    cmd->add_option("--hidden", f.hidden, "hidden state size");
    cmd->add_option("--embed", f.embed, "token embedding size (language model)");
    cmd->add_option("--m", f.m, "mixture pattern dimension");
    cmd->add_option("--n", f.n, "mixture component count");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch", f.batch, "batch size");
    cmd->add_option("--lr", f.lr, "learning rate");
    cmd->add_option("--seed", f.seed, "base seed; repeat r uses seed+r");
    cmd->add_option("--repeats", f.repeats, "independent repeats to average");
    cmd->add_option("--validation-fraction", f.validation_fraction,
                    "training share held out per epoch when no test split exists");
    cmd->add_option("--count", f.count, "synthetic sequence count");
    cmd->add_option("--length", f.length, "synthetic sequence length");
    cmd->add_option("--vocab", f.vocab, "vocabulary cap (language model)");
    cmd->add_option("--history-days", f.history_days, "window length (timeseries-csv)");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--data", f.data, "input data file (corpus TSV or hourly CSV)");
}

std::vector<ModelVariant> parse_model_list(const std::string& list) {
    std::vector<ModelVariant> out;
    std::istringstream is(list);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (!item.empty()) out.push_back(parse_variant(item));
    }
    if (out.empty()) {
        throw ConfigError("--model lists no variants");
    }
    return out;
}

ExperimentConfig resolve(const CLI::App* cmd, const Flags& f) {
    ExperimentConfig cfg;
    if (cmd->count("--config")) cfg = load_config_file(f.config);
    if (cmd->count("--task")) cfg.task = parse_task(f.task);
    if (cmd->count("--model")) cfg.models = parse_model_list(f.model);
    if (cmd->count("--mixture")) {
        MixtureSource ms;
        if (f.mixture == "none") {
            ms = MixtureSource::None;
        } else if (f.mixture == "single") {
            ms = MixtureSource::Single;
        } else if (f.mixture == "bucketed") {
            ms = MixtureSource::Bucketed;
        } else {
            throw ConfigError("unknown mixture \"" + f.mixture +
                              "\" (expected none, single or bucketed)");
        }
        for (ModelVariant& v : cfg.models) v.mixture = ms;
    }
    if (cmd->count("--similarity")) cfg.similarity = parse_similarity(f.similarity);
    if (cmd->count("--hidden")) cfg.hidden = f.hidden;
    if (cmd->count("--embed")) cfg.embed = f.embed;
    if (cmd->count("--m")) cfg.proto_dim = f.m;
    if (cmd->count("--n")) cfg.components = f.n;
    if (cmd->count("--epochs")) cfg.epochs = f.epochs;
    if (cmd->count("--batch")) cfg.batch = f.batch;
    if (cmd->count("--lr")) cfg.lr = f.lr;
    if (cmd->count("--seed")) cfg.seed = f.seed;
    if (cmd->count("--repeats")) cfg.repeats = f.repeats;
    if (cmd->count("--validation-fraction")) cfg.validation_fraction = f.validation_fraction;
    if (cmd->count("--count")) cfg.synth_n = f.count;
    if (cmd->count("--length")) cfg.synth_m = f.length;
    if (cmd->count("--vocab")) cfg.vocab = f.vocab;
    if (cmd->count("--history-days")) cfg.history_days = f.history_days;
    if (cmd->count("--out")) cfg.out_dir = f.out;
    if (cmd->count("--data")) cfg.data_path = f.data;
    return cfg;
}

void print_report_lines(const RunReport& report) {
    for (const VariantReport& v : report.variants) {
        for (std::size_t r = 0; r < v.repeats.size(); ++r) {
            const RepeatResult& rr = v.repeats[r];
            if (!rr.aborted.empty()) {
                std::cout << v.model << " repeat " << (r + 1) << ": aborted (" << rr.aborted
                          << ")\n";
                continue;
            }
            const EpochReport& last = rr.epochs.back();
            std::cout << v.model << " repeat " << (r + 1) << " (seed " << rr.seed
                      << "): train_loss " << last.train_loss << ", " << report.metric << ' '
                      << rr.final_metric;
            if (last.dispersion) std::cout << ", dispersion " << *last.dispersion;
            std::cout << '\n';
        }
    }
}

int cmd_generate_data(const CLI::App* cmd, const Flags& f) {
    ExperimentConfig cfg = resolve(cmd, f);
    if (cfg.task != TaskKind::Synthetic) {
        throw ConfigError("generate-data supports the synthetic task only");
    }
    if (cfg.synth_n < 1 || cfg.synth_m < 2) {
        throw ConfigError("synthetic task needs n >= 1 and m >= 2");
    }
    auto samples = generate_synthetic(cfg.synth_n, cfg.synth_m);
    if (cfg.out_dir.empty()) {
        dump_synthetic_csv(samples, std::cout);
        return 0;
    }
    fs::create_directories(cfg.out_dir);
    const fs::path path = fs::path(cfg.out_dir) / "synthetic.csv";
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    dump_synthetic_csv(samples, out);
    std::cout << "wrote " << samples.size() << " sequences of length " << cfg.synth_m << " to "
              << path.string() << '\n';
    return 0;
}

int cmd_train(const CLI::App* cmd, const Flags& f) {
    ExperimentConfig cfg = resolve(cmd, f);
    if (cfg.models.size() != 1) {
        throw ConfigError("train runs one model; use compare for several");
    }
    cfg.validate();
    RunReport report = run_experiment(cfg);
    print_report_lines(report);
    const VariantReport& v = report.variants[0];
    std::cout << "mean " << report.metric << " over " << v.final_params.size() << " repeats: "
              << v.mean_final << '\n';
    if (!cfg.out_dir.empty()) {
        write_artifacts(report, cfg.out_dir);
        std::cout << "artifacts in " << cfg.out_dir << '\n';
    }
    bool any_aborted = false;
    for (const RepeatResult& r : v.repeats) any_aborted |= !r.aborted.empty();
    return any_aborted ? 3 : 0;
}

int cmd_evaluate(const CLI::App* cmd, const Flags& f, const std::string& checkpoint_path) {
    ExperimentConfig cfg = resolve(cmd, f);
    ParamSet params = load_checkpoint(checkpoint_path);
    TaskData data = build_task_data(cfg);
    const bool relative = cfg.task == TaskKind::TimeseriesCsv;
    std::cout << "train " << cfg.metric() << ": "
              << evaluate(params, data.train, 256, relative) << '\n';
    std::cout << "test " << cfg.metric() << ": " << evaluate(params, data.test, 256, relative)
              << '\n';
    return 0;
}

int cmd_compare(const CLI::App* cmd, const Flags& f) {
    ExperimentConfig cfg = resolve(cmd, f);
    cfg.validate();
    RunReport report = run_experiment(cfg);
    print_report_lines(report);
    std::cout << compare({report}).text;
    if (!cfg.out_dir.empty()) {
        write_artifacts(report, cfg.out_dir);
        std::cout << "artifacts in " << cfg.out_dir << '\n';
    }
    return 0;
}

// Re-reads a run directory written by train/compare and prints the summary
// plus each model's dispersion trend.
int cmd_report(const std::string& out_dir) {
    const fs::path summary = fs::path(out_dir) / "summary.csv";
    std::ifstream f(summary);
    if (!f) {
        throw DataError("no summary.csv under " + out_dir);
    }
    std::string line;
    std::getline(f, line);  // header
    std::cout << "model  mean  repeats  best\n";
    std::vector<std::string> models;
    while (std::getline(f, line)) {
        std::istringstream row(line);
        std::string model, mean, repeats, best;
        std::getline(row, model, ',');
        std::getline(row, mean, ',');
        std::getline(row, repeats, ',');
        std::getline(row, best, ',');
        models.push_back(model);
        std::cout << model << "  " << mean << "  " << repeats << "  "
                  << (best == "yes" ? "*" : "") << '\n';
    }
    for (const std::string& model : models) {
        std::ifstream csv(fs::path(out_dir) / model / "report.csv");
        if (!csv) continue;
        std::getline(csv, line);
        double first = 0.0, last = 0.0;
        bool have_first = false, have_any = false;
        while (std::getline(csv, line)) {
            const std::size_t comma = line.rfind(',');
            const std::string cell = line.substr(comma + 1);
            if (cell.empty()) continue;
            last = std::stod(cell);
            if (!have_first) {
                first = last;
                have_first = true;
            }
            have_any = true;
        }
        if (have_any) {
            std::cout << model << " dispersion: " << first << " -> " << last << '\n';
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixture-augmented recurrent sequence models"};
    app.require_subcommand(1);

    Flags flags;
    std::string checkpoint_path, report_dir;

    CLI::App* gen = app.add_subcommand("generate-data", "write a synthetic dataset as CSV");
    add_options(gen, flags);
    CLI::App* train_cmd = app.add_subcommand("train", "train one model and report metrics");
    add_options(train_cmd, flags);
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a task's splits");
    eval_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
    add_options(eval_cmd, flags);
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "train several variants and tabulate them");
    add_options(compare_cmd, flags);
    CLI::App* report_cmd = app.add_subcommand("report", "summarize a finished run directory");
    report_cmd->add_option("--out", report_dir, "run directory to summarize")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_generate_data(gen, flags);
        if (train_cmd->parsed()) return cmd_train(train_cmd, flags);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_cmd, flags, checkpoint_path);
        if (compare_cmd->parsed()) return cmd_compare(compare_cmd, flags);
        if (report_cmd->parsed()) return cmd_report(report_dir);
        throw ConfigError("no subcommand selected");
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
