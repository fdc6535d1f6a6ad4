#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mrnn/data.hpp"

using namespace mrnn;

TEST_CASE("synthetic values match the closed form") {
    CHECK(synthetic_value(1, 1) == 2.0 * std::sin(1.0));
    CHECK(synthetic_value(3, 3) == 0.0);  // (3+3) mod 3 kills the amplitude
    CHECK(synthetic_value(2, 1) == 0.0);
    CHECK(synthetic_value(1, 2) == 0.0);
    CHECK(synthetic_value(4, 3) == Catch::Approx(std::sin(3.5)));
    for (long i = 1; i <= 40; ++i) {
        for (long j = 1; j <= 40; ++j) {
            CHECK(std::abs(synthetic_value(i, j)) <= 2.0);
        }
    }
}

TEST_CASE("synthetic sequences carry their cycle as the bucket") {
    auto samples = generate_synthetic(9, 5);
    REQUIRE(samples.size() == 9);
    long counts[4] = {0, 0, 0, 0};
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const long i = static_cast<long>(k) + 1;
        const SequenceSample& s = samples[k];
        CHECK(s.bucket == i % 3 + 1);
        ++counts[s.bucket];
        REQUIRE(s.inputs.shape == Shape::mat(4, 1));
        for (long j = 1; j <= 4; ++j) CHECK(s.inputs.at(j - 1, 0) == synthetic_value(i, j));
        CHECK(s.target == synthetic_value(i, 5));
    }
    CHECK(counts[1] == 3);
    CHECK(counts[2] == 3);
    CHECK(counts[3] == 3);
    CHECK_THROWS_AS(generate_synthetic(0, 5), ConfigError);
    CHECK_THROWS_AS(generate_synthetic(5, 1), ConfigError);
}

TEST_CASE("half split is seeded, disjoint and exhaustive") {
    auto samples = generate_synthetic(100, 4);
    auto [train, test] = split_half(samples, 7);
    CHECK(train.size() == 50);
    CHECK(test.size() == 50);
    std::multiset<double> all, got;
    for (const auto& s : samples) all.insert(s.target);
    for (const auto& s : train) got.insert(s.target);
    for (const auto& s : test) got.insert(s.target);
    CHECK(all == got);

    auto [train2, test2] = split_half(samples, 7);
    bool same = train.size() == train2.size();
    for (std::size_t i = 0; same && i < train.size(); ++i) {
        same = train[i].target == train2[i].target && train[i].bucket == train2[i].bucket;
    }
    CHECK(same);

    auto [train3, test3] = split_half(samples, 8);
    bool moved = false;
    for (std::size_t i = 0; i < train.size() && !moved; ++i) {
        moved = train[i].target != train3[i].target;
    }
    CHECK(moved);

    auto [odd_train, odd_test] = split_half(generate_synthetic(7, 4), 1);
    CHECK(odd_train.size() == 4);
    CHECK(odd_test.size() == 3);
}

TEST_CASE("synthetic dump emits one row per element") {
    auto samples = generate_synthetic(3, 4);
    std::ostringstream os;
    dump_synthetic_csv(samples, os);
    std::istringstream is(os.str());
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "seq_id,bucket_id,step_index,value");
    long rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 3 * 4);
    CHECK(os.str().find("1,2,1,") != std::string::npos);  // seq 1 is bucket 2
}

namespace {

std::string hourly_csv(long hours) {
    // Starts 2024-01-01 00:00; value = contiguous index for easy checks.
    static const int days_in[12] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int mo = 1, d = 1, h = 0;
    std::ostringstream os;
    os << "timestamp,value\n";
    for (long i = 0; i < hours; ++i) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "2024-%02d-%02dT%02d:00", mo, d, h);
        os << buf << ',' << i << '\n';
        if (++h == 24) {
            h = 0;
            if (++d > days_in[mo - 1]) {
                d = 1;
                ++mo;
            }
        }
    }
    return os.str();
}

}  // namespace

TEST_CASE("hourly parsing fills gaps and counts them") {
    std::istringstream is(
        "timestamp,value\n"
        "2024-01-01T00:00,1.5\n"
        "2024-01-01T01:00,2.5\n"
        "2024-01-01T04:00,9.0\n"   // two missing hours
        "2024-01-01T05:00,\n");    // missing value
    HourlySeries s = parse_hourly_csv(is);
    REQUIRE(s.points.size() == 6);
    CHECK(s.filled == 3);
    CHECK(s.points[2].value == 2.5);  // forward fill
    CHECK(s.points[3].value == 2.5);
    CHECK(s.points[4].value == 9.0);
    CHECK(s.points[5].value == 9.0);  // filled from previous
    CHECK(s.points[5].hour_of_day == 5);
}

TEST_CASE("hourly parsing names the offending line") {
    std::istringstream bad_ts(
        "timestamp,value\n"
        "2024-01-01T00:00,1.0\n"
        "not-a-time,2.0\n");
    CHECK_THROWS_WITH(parse_hourly_csv(bad_ts), Catch::Matchers::ContainsSubstring("line 3"));

    std::istringstream bad_val(
        "timestamp,value\n"
        "2024-01-01T00:00,banana\n");
    CHECK_THROWS_WITH(parse_hourly_csv(bad_val), Catch::Matchers::ContainsSubstring("line 2"));

    std::istringstream no_comma(
        "timestamp,value\n"
        "2024-01-01T00:00\n");
    CHECK_THROWS_WITH(parse_hourly_csv(no_comma), Catch::Matchers::ContainsSubstring("line 2"));

    std::istringstream backwards(
        "timestamp,value\n"
        "2024-01-01T05:00,1.0\n"
        "2024-01-01T04:00,2.0\n");
    CHECK_THROWS_AS(parse_hourly_csv(backwards), DataError);

    std::istringstream empty("");
    CHECK_THROWS_AS(parse_hourly_csv(empty), DataError);
}

TEST_CASE("windowing assembles adjacent-hour steps over prior days") {
    const long hours = 56 * 24 + 40;
    std::istringstream is(hourly_csv(hours));
    HourlySeries series = parse_hourly_csv(is);
    REQUIRE(series.filled == 0);
    WindowedSeries w = window_timeseries(series, 56);
    const long need = 56 * 24 + 1;
    CHECK(w.skipped == need);
    REQUIRE(static_cast<long>(w.samples.size()) == hours - need);

    const SequenceSample& s = w.samples[10];
    const long target_index = need + 10;
    CHECK(s.target == static_cast<double>(target_index));
    REQUIRE(s.inputs.shape == Shape::mat(56, 3));
    for (long k = 0; k < 56; ++k) {
        const long j = target_index - 24 * (56 - k);
        CHECK(s.inputs.at(k, 0) == static_cast<double>(j - 1));
        CHECK(s.inputs.at(k, 1) == static_cast<double>(j));
        CHECK(s.inputs.at(k, 2) == static_cast<double>(j + 1));
    }
}

TEST_CASE("windowing buckets by consumption period of the target hour") {
    CHECK(high_consumption_hour(7));
    CHECK(high_consumption_hour(13));
    CHECK(high_consumption_hour(18));
    CHECK(high_consumption_hour(22));
    CHECK_FALSE(high_consumption_hour(6));
    CHECK_FALSE(high_consumption_hour(14));
    CHECK_FALSE(high_consumption_hour(17));
    CHECK_FALSE(high_consumption_hour(23));
    CHECK_FALSE(high_consumption_hour(0));

    std::istringstream is(hourly_csv(56 * 24 + 48));
    HourlySeries series = parse_hourly_csv(is);
    WindowedSeries w = window_timeseries(series, 56);
    for (const SequenceSample& s : w.samples) {
        const int hour = static_cast<int>(static_cast<long>(s.target)) % 24;
        CHECK(s.bucket == (high_consumption_hour(hour) ? 1 : 2));
    }
    CHECK_THROWS_AS(window_timeseries(series, 0), ConfigError);
}

TEST_CASE("vocabulary keeps every token when it fits") {
    Corpus c = tokenize_corpus({{"a b a", "g"}}, 2);
    CHECK(c.vocab.size() == 2);
    CHECK(c.vocab.encode("a") == 0);  // more frequent
    CHECK(c.vocab.encode("b") == 1);
    CHECK_FALSE(c.vocab.has_unknown());
    CHECK_THROWS_AS(c.vocab.encode("z"), DataError);
    REQUIRE(c.samples.size() == 1);
    CHECK(c.samples[0].tokens == std::vector<long>{0, 1, 0});
}

TEST_CASE("frequency ties break lexicographically") {
    Corpus c = tokenize_corpus({{"d c b a", "g"}}, 10);
    CHECK(c.vocab.encode("a") == 0);
    CHECK(c.vocab.encode("b") == 1);
    CHECK(c.vocab.encode("c") == 2);
    CHECK(c.vocab.encode("d") == 3);
}

TEST_CASE("rare tokens collapse onto the catch-all id") {
    Corpus c = tokenize_corpus({{"a a a b b c", "g"}}, 2);
    CHECK(c.vocab.size() == 2);
    CHECK(c.vocab.has_unknown());
    CHECK(c.vocab.unknown == 1);
    CHECK(c.vocab.encode("a") == 0);
    CHECK(c.vocab.encode("b") == 1);
    CHECK(c.vocab.encode("c") == 1);
    CHECK(c.vocab.encode("never-seen") == 1);
    CHECK(c.vocab.decode(1) == "<unk>");
    CHECK(c.samples[0].tokens == std::vector<long>{0, 0, 0, 1, 1, 1});
}

TEST_CASE("group labels become sorted bucket ids") {
    Corpus c = tokenize_corpus(
        {{"x y", "zebra"}, {"y x", "apple"}, {"x x", "zebra"}, {"y y", "mango"}}, 4);
    REQUIRE(c.groups.size() == 3);
    CHECK(c.groups[0] == "apple");
    CHECK(c.groups[1] == "mango");
    CHECK(c.groups[2] == "zebra");
    CHECK(c.samples[0].bucket == 3);
    CHECK(c.samples[1].bucket == 1);
    CHECK(c.samples[2].bucket == 3);
    CHECK(c.samples[3].bucket == 2);
}

TEST_CASE("documents shorter than two tokens are dropped") {
    Corpus c = tokenize_corpus({{"only", "g"}, {"two tokens", "g"}}, 5);
    CHECK(c.samples.size() == 1);
    CHECK_THROWS_AS(tokenize_corpus({{"one", "g"}}, 5), DataError);
    CHECK_THROWS_AS(tokenize_corpus({}, 5), DataError);
    CHECK_THROWS_AS(tokenize_corpus({{"a b", "g"}}, 1), ConfigError);
}

TEST_CASE("corpus files are tab-separated label and text") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "mrnn_test_corpus.tsv";
    {
        std::ofstream f(path);
        f << "sports\tthe match was long\n";
        f << "\n";
        f << "cooking\tstir the pot\n";
    }
    auto docs = load_corpus_file(path.string());
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].second == "sports");
    CHECK(docs[0].first == "the match was long");
    CHECK(docs[1].second == "cooking");

    {
        std::ofstream f(path);
        f << "sports no tab here\n";
    }
    CHECK_THROWS_WITH(load_corpus_file(path.string()),
                      Catch::Matchers::ContainsSubstring("line 1"));
    fs::remove(path);
    CHECK_THROWS_AS(load_corpus_file(path.string()), DataError);
}
