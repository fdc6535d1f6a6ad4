#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mrnn/autodiff.hpp"
#include "mrnn/errors.hpp"
#include "mrnn/rng.hpp"

namespace mrnn {

// One training example. Regression tasks fill inputs (row t is the step-t
// input vector) and target; language-model tasks fill tokens (the model
// shifts them into context/target pairs itself). bucket is the 1-based
// prior-knowledge label.
struct SequenceSample {
    Tensor inputs;
    double target = 0.0;
    std::vector<long> tokens;
    long bucket = 1;

    long steps() const { return inputs.shape.rows; }
};

// ---------------------------------------------------------------------------
// Synthetic multi-pattern sequences
// ---------------------------------------------------------------------------

// Value at (i, j), both 1-based:
//   s_ij = ((i+j) mod 3) * sin((i+j) / ((i mod 3) + 1))
inline double synthetic_value(long i, long j) {
    return static_cast<double>((i + j) % 3) *
           std::sin(static_cast<double>(i + j) / static_cast<double>(i % 3 + 1));
}

// N sequences of length M; sample i predicts its last element from the
// first M-1. The cycle type (i mod 3) + 1 doubles as the bucket label.
inline std::vector<SequenceSample> generate_synthetic(long n, long m) {
    if (n < 1 || m < 2) {
        throw ConfigError("synthetic generation needs n >= 1 sequences of length m >= 2");
    }
    std::vector<SequenceSample> out;
    out.reserve(n);
    for (long i = 1; i <= n; ++i) {
        SequenceSample s;
        s.inputs = Tensor::zeros(Shape::mat(m - 1, 1));
        for (long j = 1; j < m; ++j) s.inputs.at(j - 1, 0) = synthetic_value(i, j);
        s.target = synthetic_value(i, m);
        s.bucket = i % 3 + 1;
        out.push_back(std::move(s));
    }
    return out;
}

// Seeded random half/half partition; the first half of the shuffled order
// becomes the training set (it takes the extra sample when the count is
// odd).
inline std::pair<std::vector<SequenceSample>, std::vector<SequenceSample>> split_half(
    const std::vector<SequenceSample>& samples, std::uint64_t seed) {
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t ntrain = (samples.size() + 1) / 2;
    std::pair<std::vector<SequenceSample>, std::vector<SequenceSample>> out;
    for (std::size_t k = 0; k < order.size(); ++k) {
        (k < ntrain ? out.first : out.second).push_back(samples[order[k]]);
    }
    return out;
}

// CSV dump, one row per (sequence, step): seq-id, bucket-id, step-index,
// value. The target appears as the final step index.
inline void dump_synthetic_csv(const std::vector<SequenceSample>& samples, std::ostream& os) {
    os << "seq_id,bucket_id,step_index,value\n";
    char buf[40];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SequenceSample& s = samples[i];
        for (long j = 0; j < s.steps(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", s.inputs.at(j, 0));
            os << (i + 1) << ',' << s.bucket << ',' << (j + 1) << ',' << buf << '\n';
        }
        std::snprintf(buf, sizeof buf, "%.17g", s.target);
        os << (i + 1) << ',' << s.bucket << ',' << (s.steps() + 1) << ',' << buf << '\n';
    }
}

// ---------------------------------------------------------------------------
// Hourly time-series ingestion (sliding windows over a consumption-style
// CSV: header row, then one "timestamp,value" record per hour).
// ---------------------------------------------------------------------------

struct HourlyPoint {
    long long epoch_hours = 0;  // hours since 1970-01-01 00:00 (local, no zone math)
    int hour_of_day = 0;
    double value = 0.0;
};

struct HourlySeries {
    std::vector<HourlyPoint> points;  // contiguous, one per hour
    long filled = 0;                  // gap entries created by forward fill
};

namespace detail {

inline long long days_from_civil(int y, int m, int d) {
    // Howard Hinnant's civil-days algorithm
    y -= m <= 2;
    const long long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long long>(doe) - 719468;
}

inline bool parse_timestamp(const std::string& s, long long* epoch_hours, int* hour) {
    int y, mo, d, h, mi;
    char sep;
    if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d", &y, &mo, &d, &sep, &h, &mi) != 6) return false;
    if ((sep != 'T' && sep != ' ') || mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 ||
        mi < 0 || mi > 59) {
        return false;
    }
    *epoch_hours = days_from_civil(y, mo, d) * 24 + h;
    *hour = h;
    return true;
}

}  // namespace detail

// Parses the hourly CSV, forward-filling gaps (counted) and rejecting
// malformed or non-advancing rows with their line number.
inline HourlySeries parse_hourly_csv(std::istream& is) {
    HourlySeries series;
    std::string line;
    long lineno = 0;
    if (!std::getline(is, line)) {
        throw DataError("time-series file is empty");
    }
    ++lineno;  // header consumed
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw DataError("line " + std::to_string(lineno) + ": expected timestamp,value");
        }
        const std::string ts = line.substr(0, comma);
        const std::string vs = line.substr(comma + 1);
        long long eh;
        int hour;
        if (!detail::parse_timestamp(ts, &eh, &hour)) {
            throw DataError("line " + std::to_string(lineno) + ": bad timestamp \"" + ts + "\"");
        }
        double value;
        bool missing = vs.empty() || vs == "?" || vs == "NA";
        if (!missing) {
            try {
                std::size_t used = 0;
                value = std::stod(vs, &used);
                if (used != vs.size()) {
                    throw std::invalid_argument("trailing junk");
                }
            } catch (const std::exception&) {
                throw DataError("line " + std::to_string(lineno) + ": bad value \"" + vs + "\"");
            }
        }
        if (!series.points.empty()) {
            const long long prev = series.points.back().epoch_hours;
            if (eh <= prev) {
                throw DataError("line " + std::to_string(lineno) +
                                ": timestamp does not advance");
            }
            for (long long fill = prev + 1; fill < eh; ++fill) {
                HourlyPoint p;
                p.epoch_hours = fill;
                p.hour_of_day = static_cast<int>(((fill % 24) + 24) % 24);
                p.value = series.points.back().value;
                series.points.push_back(p);
                ++series.filled;
            }
        }
        if (missing) {
            if (series.points.empty()) {
                throw DataError("line " + std::to_string(lineno) +
                                ": first record has no value to fill from");
            }
            value = series.points.back().value;
            ++series.filled;
        }
        HourlyPoint p;
        p.epoch_hours = eh;
        p.hour_of_day = hour;
        p.value = value;
        series.points.push_back(p);
    }
    if (series.points.empty()) {
        throw DataError("time-series file has no data rows");
    }
    return series;
}

// Windowing result: samples plus the count of targets skipped for lack of
// history.
struct WindowedSeries {
    std::vector<SequenceSample> samples;
    long skipped = 0;
};

inline bool high_consumption_hour(int hour) {
    return (hour >= 7 && hour <= 13) || (hour >= 18 && hour <= 22);
}

// One sample per target hour with enough history: history_days steps, each
// the 3 adjacent hourly values centered on the target hour, one step per
// prior day; the bucket encodes the high/low consumption period of the
// target hour (1 = high, 2 = low).
inline WindowedSeries window_timeseries(const HourlySeries& series, long history_days = 56) {
    if (history_days < 1) {
        throw ConfigError("history must cover at least one day");
    }
    WindowedSeries out;
    const long n = static_cast<long>(series.points.size());
    const long need = history_days * 24 + 1;  // earliest step also reads one hour back
    for (long i = 0; i < n; ++i) {
        if (i < need) {
            ++out.skipped;
            continue;
        }
        SequenceSample s;
        s.inputs = Tensor::zeros(Shape::mat(history_days, 3));
        for (long k = 0; k < history_days; ++k) {
            const long j = i - 24 * (history_days - k);
            s.inputs.at(k, 0) = series.points[j - 1].value;
            s.inputs.at(k, 1) = series.points[j].value;
            s.inputs.at(k, 2) = series.points[j + 1].value;
        }
        s.target = series.points[i].value;
        s.bucket = high_consumption_hour(series.points[i].hour_of_day) ? 1 : 2;
        out.samples.push_back(std::move(s));
    }
    return out;
}

inline WindowedSeries window_timeseries_file(const std::string& path, long history_days = 56) {
    std::ifstream f(path);
    if (!f) {
        throw DataError("cannot open time-series file " + path);
    }
    HourlySeries series = parse_hourly_csv(f);
    return window_timeseries(series, history_days);
}

// ---------------------------------------------------------------------------
// Corpus tokenization for language modeling
// ---------------------------------------------------------------------------

struct Vocabulary {
    std::unordered_map<std::string, long> ids;
    std::vector<std::string> tokens;  // ids are indices here, most frequent first
    long unknown = -1;                // id of the catch-all token, or size() when absent

    long size() const { return static_cast<long>(tokens.size()); }
    bool has_unknown() const { return unknown < size(); }

    long encode(const std::string& token) const {
        auto it = ids.find(token);
        if (it != ids.end()) return it->second;
        if (!has_unknown()) {
            throw DataError("token \"" + token + "\" is not in the vocabulary");
        }
        return unknown;
    }

    const std::string& decode(long id) const {
        if (id < 0 || id >= size()) {
            throw DataError("token id " + std::to_string(id) + " out of range");
        }
        return tokens[id];
    }
};

struct Corpus {
    Vocabulary vocab;
    std::vector<SequenceSample> samples;     // tokens + bucket per document
    std::vector<std::string> groups;         // bucket b is groups[b-1]
};

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

// Top-V-by-frequency vocabulary (ties broken lexicographically) over
// whitespace tokens. When the corpus has more distinct tokens than V, the
// last id is reserved for the catch-all token and everything rarer maps to
// it. Documents become next-token samples with their group as the bucket.
inline Corpus tokenize_corpus(const std::vector<std::pair<std::string, std::string>>& docs,
                              long vocab_size) {
    if (docs.empty()) {
        throw DataError("corpus is empty");
    }
    if (vocab_size < 2) {
        throw ConfigError("vocabulary needs at least two entries");
    }
    std::map<std::string, long> freq;  // ordered: lexicographic tie-break for free
    for (const auto& [text, group] : docs) {
        for (const std::string& tok : whitespace_tokens(text)) ++freq[tok];
    }
    std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Corpus out;
    const bool truncated = static_cast<long>(ranked.size()) > vocab_size;
    const long keep = truncated ? vocab_size - 1 : static_cast<long>(ranked.size());
    for (long i = 0; i < keep; ++i) {
        out.vocab.ids.emplace(ranked[i].first, i);
        out.vocab.tokens.push_back(ranked[i].first);
    }
    if (truncated) {
        out.vocab.unknown = keep;
        out.vocab.tokens.push_back("<unk>");
        out.vocab.ids.emplace("<unk>", keep);
    } else {
        out.vocab.unknown = out.vocab.size();  // sentinel: nothing maps to it
    }

    std::map<std::string, long> group_ids;
    for (const auto& [text, group] : docs) group_ids.emplace(group, 0);
    long next = 1;
    for (auto& [group, id] : group_ids) id = next++;
    out.groups.resize(group_ids.size());
    for (const auto& [group, id] : group_ids) out.groups[id - 1] = group;

    for (const auto& [text, group] : docs) {
        SequenceSample s;
        for (const std::string& tok : whitespace_tokens(text)) {
            s.tokens.push_back(out.vocab.encode(tok));
        }
        s.bucket = group_ids.at(group);
        if (s.tokens.size() >= 2) out.samples.push_back(std::move(s));
    }
    if (out.samples.empty()) {
        throw DataError("corpus has no document with at least two tokens");
    }
    return out;
}

// Loads "group-label<TAB>text" lines.
inline std::vector<std::pair<std::string, std::string>> load_corpus_file(
    const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw DataError("cannot open corpus file " + path);
    }
    std::vector<std::pair<std::string, std::string>> docs;
    std::string line;
    long lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError("line " + std::to_string(lineno) +
                            ": expected group-label<TAB>text");
        }
        docs.emplace_back(line.substr(tab + 1), line.substr(0, tab));
    }
    if (docs.empty()) {
        throw DataError("corpus file " + path + " has no documents");
    }
    return docs;
}

}  // namespace mrnn
