#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "dscope/data.hpp"
#include "helpers.hpp"

using namespace dscope;
namespace fs = std::filesystem;

namespace {

fs::path write_temp_csv(const std::string& name, const std::string& body) {
    fs::path path = fs::temp_directory_path() / name;
    std::ofstream out(path);
    out << body;
    return path;
}

}  // namespace

TEST_CASE("csv load reads values back verbatim") {
    auto path = write_temp_csv("dscope_basic.csv", "a,b\n1,2\n3,4\n5,6\n");
    auto ds = load_csv(path, false);
    REQUIRE(ds.values.shape() == Shape{3, 2});
    CHECK(ds.values.at({0, 0}) == 1.0);
    CHECK(ds.values.at({2, 1}) == 6.0);
    CHECK(ds.name == "dscope_basic");
}

TEST_CASE("csv header detection and time column") {
    auto no_header = write_temp_csv("dscope_nohdr.csv", "1,2\n3,4\n");
    CHECK(load_csv(no_header, false).values.shape() == Shape{2, 2});

    auto timed = write_temp_csv("dscope_time.csv",
                                "date,x,y\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6\n");
    auto ds = load_csv(timed, true);
    REQUIRE(ds.values.shape() == Shape{3, 2});
    CHECK(ds.values.at({1, 0}) == 3.0);
}

TEST_CASE("csv error paths: header only, non-numeric cell, ragged row") {
    auto header_only = write_temp_csv("dscope_hdr.csv", "a,b\n");
    CHECK_THROWS_AS(load_csv(header_only, false), FormatError);

    auto bad_cell = write_temp_csv("dscope_bad.csv", "1,2\n3,oops\n5,6\n");
    CHECK_THROWS_MATCHES(load_csv(bad_cell, false), ParseError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("row 2") &&
                             Catch::Matchers::ContainsSubstring("column 2")));

    auto ragged = write_temp_csv("dscope_ragged.csv", "1,2\n3\n5,6\n");
    CHECK_THROWS_AS(load_csv(ragged, false), FormatError);

    CHECK_THROWS_AS(load_csv("/nonexistent/nowhere.csv", false), ConfigError);
}

TEST_CASE("ratio split boundaries and custom split validation") {
    TimeSeriesDataset ds;
    ds.values = Tensor(Shape{100, 1}, [] {
        std::vector<double> v(100);
        for (int i = 0; i < 100; ++i) v[i] = i;
        return v;
    }());
    auto split = split_chronological(ds, SplitSpec::ratio_7_1_2());
    CHECK(split.train_end == 70);
    CHECK(split.val_end == 80);

    TimeSeriesDataset tiny;
    tiny.values = Tensor(Shape{10, 1}, std::vector<double>(10, 1.0));
    CHECK_THROWS_AS(split_chronological(tiny, SplitSpec::custom(0.9, 0.09)), ConfigError);
}

TEST_CASE("ETT month split reproduces the published split sizes") {
    // Reference ETT convention: 30-day months at the dataset's sampling rate.
    TimeSeriesDataset hourly;
    hourly.values = Tensor(Shape{17420, 7}, std::vector<double>(17420 * 7, 0.5));
    // make channels non-constant so stats are well-defined
    {
        std::vector<double> v(17420 * 7);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i % 97);
        hourly.values = Tensor(Shape{17420, 7}, std::move(v));
    }
    auto split = split_chronological(hourly, SplitSpec::ett_months(kEttRowsPerMonthHourly));
    CHECK(split.train_end == 8 * 30 * 24);   // 5760
    CHECK(split.val_end == 12 * 30 * 24);    // 8640
    CHECK(split.rows() == 16 * 30 * 24);     // truncated to the 16 months in use
    const auto [test_lo, test_hi] = split.split_range(Split::test);
    CHECK(test_hi - test_lo == 4 * 30 * 24);

    CHECK_THROWS_AS(split_chronological(split, SplitSpec::ett_months(0)), ConfigError);
}

TEST_CASE("normalization statistics come from the train split only") {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[i] = i < 70 ? (i % 7) : 1000.0;
    TimeSeriesDataset ds;
    ds.values = Tensor(Shape{100, 1}, std::move(v));
    auto a = split_chronological(ds, SplitSpec::ratio_7_1_2());

    // mutate val/test rows: stats must not change
    std::vector<double> v2(a.values.data(), a.values.data() + 100);
    for (int i = 70; i < 100; ++i) v2[i] = -999.0;
    TimeSeriesDataset ds2;
    ds2.values = Tensor(Shape{100, 1}, std::move(v2));
    auto b = split_chronological(ds2, SplitSpec::ratio_7_1_2());
    CHECK(a.norm.mean[0] == b.norm.mean[0]);
    CHECK(a.norm.stdev[0] == b.norm.stdev[0]);
}

TEST_CASE("degenerate channels clamp std to 1 with a warning") {
    std::vector<double> v(200);
    for (int i = 0; i < 100; ++i) {
        v[2 * i] = 42.0;               // constant channel
        v[2 * i + 1] = i % 13;         // varying channel
    }
    TimeSeriesDataset ds;
    ds.values = Tensor(Shape{100, 2}, std::move(v));
    auto split = split_chronological(ds, SplitSpec::ratio_7_1_2());
    CHECK(split.norm.stdev[0] == 1.0);
    REQUIRE(split.norm.clamped_channels.size() == 1);
    CHECK(split.norm.clamped_channels[0] == 0);
    CHECK_FALSE(split.warnings.empty());
    CHECK(split.standardize_value(split.destandardize_value(0.37, 0), 0) ==
          Catch::Approx(0.37).margin(1e-9));
}

TEST_CASE("window counts and containment") {
    std::vector<double> v(40);
    for (int i = 0; i < 40; ++i) v[i] = i;
    TimeSeriesDataset ds;
    ds.values = Tensor(Shape{40, 1}, std::move(v));
    ds.train_end = 10;
    ds.val_end = 20;
    ds.norm.mean = {0.0};
    ds.norm.stdev = {1.0};

    auto w = make_windows(ds, Split::train, 4, 2, 1);
    CHECK(w.count() == 5);  // (10 - 6) / 1 + 1
    for (std::size_t i = 0; i < w.count(); ++i) {
        CHECK(w.origins[i] + 4 + 2 <= 10);  // never crosses the train/val boundary
    }

    // stride == split length: exactly one window fits
    auto one = make_windows(ds, Split::train, 4, 6, 10);
    CHECK(one.count() == 1);

    CHECK_THROWS_MATCHES(make_windows(ds, Split::train, 336, 96, 1), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("432")));
}

TEST_CASE("windows round-trip to raw values through destandardization") {
    SynthSpec ss;
    ss.channels = 2;
    ss.length = 600;
    ss.seed = 17;
    ss.noise_sigma = 0.1;
    auto ds = split_chronological(synth_generate(ss), SplitSpec::ratio_7_1_2());
    auto w = make_windows(ds, Split::val, 16, 4, 3);
    for (std::size_t i = 0; i < w.count(); ++i)
        for (std::size_t s = 0; s < 16; ++s)
            for (std::size_t v = 0; v < 2; ++v) {
                const double raw = ds.values.at({w.origins[i] + s, v});
                const double z = w.inputs.at({i, s, v});
                CHECK(ds.destandardize_value(z, v) == Catch::Approx(raw).margin(1e-9));
            }
}

TEST_CASE("synthetic generation is deterministic and respects the spec") {
    SynthSpec ss;
    ss.channels = 3;
    ss.length = 512;
    ss.seed = 99;
    ss.noise_sigma = 0.2;
    auto a = synth_generate(ss);
    auto b = synth_generate(ss);
    CHECK(a.values.shape() == Shape{512, 3});
    CHECK(testing_helpers::max_abs_diff(a.values, b.values) == 0.0);

    ss.seed = 100;
    auto c = synth_generate(ss);
    CHECK(testing_helpers::max_abs_diff(a.values, c.values) > 0.0);

    SynthSpec bad = ss;
    bad.length = 100;
    CHECK_THROWS_AS(synth_generate(bad), ConfigError);
    bad = ss;
    bad.channels = 0;
    CHECK_THROWS_AS(synth_generate(bad), ConfigError);

    for (auto kind : {SynthSpec::Kind::trend_plus_season, SynthSpec::Kind::ar_noise}) {
        SynthSpec s2 = ss;
        s2.kind = kind;
        auto d = synth_generate(s2);
        CHECK(d.values.all_finite());
    }
}
