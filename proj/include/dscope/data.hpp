#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dscope/tensor.hpp"

namespace dscope {

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stdev;
    std::vector<std::size_t> clamped_channels;  // degenerate channels with std forced to 1
};

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

// Multivariate series with chronological split boundaries and per-channel
// standardization statistics computed on the train split only.
struct TimeSeriesDataset {
    std::string name;
    Tensor values;  // [T x V], raw scale
    std::size_t train_end = 0;
    std::size_t val_end = 0;
    NormStats norm;
    std::vector<std::string> warnings;

    std::size_t rows() const { return values.extent(0); }
    std::size_t channels() const { return values.extent(1); }

    std::pair<std::size_t, std::size_t> split_range(Split s) const {
        switch (s) {
            case Split::train: return {0, train_end};
            case Split::val: return {train_end, val_end};
            default: return {val_end, rows()};
        }
    }

    double standardize_value(double x, std::size_t v) const {
        return (x - norm.mean[v]) / norm.stdev[v];
    }
    double destandardize_value(double z, std::size_t v) const {
        return z * norm.stdev[v] + norm.mean[v];
    }
};

struct SplitSpec {
    enum class Scheme { ratio_7_1_2, ett_8_4_4_months, custom };
    Scheme scheme = Scheme::ratio_7_1_2;
    double train_frac = 0.7;
    double val_frac = 0.1;
    // Sampling interval for the month-wise ETT scheme, expressed as rows per
    // 30-day month (720 hourly, 2880 quarter-hourly), matching the published
    // ETT loader convention.
    std::size_t rows_per_month = 0;

    static SplitSpec ratio_7_1_2() { return {Scheme::ratio_7_1_2, 0.7, 0.1, 0}; }
    static SplitSpec ett_months(std::size_t rows_per_month) {
        return {Scheme::ett_8_4_4_months, 0, 0, rows_per_month};
    }
    static SplitSpec custom(double train_frac, double val_frac) {
        return {Scheme::custom, train_frac, val_frac, 0};
    }
};

inline constexpr std::size_t kEttRowsPerMonthHourly = 30 * 24;
inline constexpr std::size_t kEttRowsPerMonthQuarterHourly = 30 * 24 * 4;

namespace detail {

inline bool parse_double(std::string_view field, double& out) {
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end != begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
    if (begin == end) return false;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

}  // namespace detail

// CSV ingestion: UTF-8, comma-separated, header row auto-detected (first row
// non-numeric), optional leading timestamp column ignored for modeling.
inline TimeSeriesDataset load_csv(const std::filesystem::path& path, bool has_time_column) {
    std::ifstream in(path);
    if (!in) throw ConfigError("dataset not found: " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) lines.push_back(std::move(line));
    }
    if (lines.empty()) throw FormatError("empty CSV file: " + path.string());

    const std::size_t first_col = has_time_column ? 1 : 0;
    auto first_fields = detail::split_fields(lines[0]);
    bool header = false;
    for (std::size_t c = first_col; c < first_fields.size(); ++c) {
        double v;
        if (!detail::parse_double(first_fields[c], v)) {
            header = true;
            break;
        }
    }
    const std::size_t data_start = header ? 1 : 0;
    if (lines.size() - data_start < 2)
        throw FormatError("CSV has fewer than 2 data rows: " + path.string());

    const std::size_t ncols = detail::split_fields(lines[data_start]).size();
    if (ncols <= first_col) throw FormatError("CSV has no value columns: " + path.string());
    const std::size_t channels = ncols - first_col;
    const std::size_t rows = lines.size() - data_start;

    std::vector<double> buf(rows * channels);
    for (std::size_t r = 0; r < rows; ++r) {
        auto fields = detail::split_fields(lines[data_start + r]);
        if (fields.size() != ncols)
            throw FormatError("ragged CSV row " + std::to_string(data_start + r + 1) + ": got " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(ncols));
        for (std::size_t c = first_col; c < ncols; ++c) {
            double v;
            if (!detail::parse_double(fields[c], v))
                throw ParseError("non-numeric cell at row " + std::to_string(data_start + r + 1) +
                                 ", column " + std::to_string(c + 1));
            buf[r * channels + (c - first_col)] = v;
        }
    }

    TimeSeriesDataset ds;
    ds.name = path.stem().string();
    ds.values = Tensor(Shape{rows, channels}, std::move(buf));
    return ds;
}

namespace detail {

inline NormStats compute_norm_stats(const Tensor& values, std::size_t train_end,
                                    std::vector<std::string>& warnings) {
    const std::size_t V = values.extent(1);
    NormStats stats;
    stats.mean.assign(V, 0.0);
    stats.stdev.assign(V, 0.0);
    const double* p = values.data();
    for (std::size_t r = 0; r < train_end; ++r)
        for (std::size_t v = 0; v < V; ++v) stats.mean[v] += p[r * V + v];
    for (std::size_t v = 0; v < V; ++v) stats.mean[v] /= static_cast<double>(train_end);
    for (std::size_t r = 0; r < train_end; ++r)
        for (std::size_t v = 0; v < V; ++v) {
            double d = p[r * V + v] - stats.mean[v];
            stats.stdev[v] += d * d;
        }
    for (std::size_t v = 0; v < V; ++v) {
        stats.stdev[v] = std::sqrt(stats.stdev[v] / static_cast<double>(train_end));
        if (stats.stdev[v] < 1e-12) {
            stats.stdev[v] = 1.0;
            stats.clamped_channels.push_back(v);
            warnings.push_back("channel " + std::to_string(v) +
                               " is constant on the train split; std clamped to 1");
        }
    }
    return stats;
}

}  // namespace detail

// Sets chronological split boundaries and computes train-only normalization
// statistics. The ETT month scheme truncates the series to the 16 months it
// uses (8 train / 4 val / 4 test) so split sizes match the published loaders.
inline TimeSeriesDataset split_chronological(TimeSeriesDataset ds, const SplitSpec& spec) {
    const std::size_t T = ds.rows();
    switch (spec.scheme) {
        case SplitSpec::Scheme::ratio_7_1_2:
            ds.train_end = static_cast<std::size_t>(0.7 * static_cast<double>(T));
            ds.val_end = static_cast<std::size_t>(0.8 * static_cast<double>(T));
            break;
        case SplitSpec::Scheme::custom: {
            if (spec.train_frac <= 0 || spec.val_frac <= 0 ||
                spec.train_frac + spec.val_frac >= 1.0)
                throw ConfigError("custom split fractions must be positive and sum below 1");
            ds.train_end = static_cast<std::size_t>(spec.train_frac * static_cast<double>(T));
            ds.val_end = static_cast<std::size_t>((spec.train_frac + spec.val_frac) *
                                                  static_cast<double>(T));
            break;
        }
        case SplitSpec::Scheme::ett_8_4_4_months: {
            if (spec.rows_per_month == 0)
                throw ConfigError("ETT month split requires a declared sampling interval "
                                  "(rows per month)");
            const std::size_t need = 16 * spec.rows_per_month;
            if (T < need)
                throw ConfigError("ETT month split needs " + std::to_string(need) +
                                  " rows, dataset has " + std::to_string(T));
            if (T > need) {
                // Keep only the 16 months the 8:4:4 protocol addresses.
                std::vector<double> buf(ds.values.data(),
                                        ds.values.data() + need * ds.channels());
                ds.values = Tensor(Shape{need, ds.channels()}, std::move(buf));
            }
            ds.train_end = 8 * spec.rows_per_month;
            ds.val_end = 12 * spec.rows_per_month;
            break;
        }
    }
    if (ds.train_end == 0 || ds.val_end <= ds.train_end || ds.val_end >= ds.rows())
        throw ConfigError("split leaves an empty train/val/test segment (T=" + std::to_string(T) +
                          ", train_end=" + std::to_string(ds.train_end) +
                          ", val_end=" + std::to_string(ds.val_end) + ")");
    ds.norm = detail::compute_norm_stats(ds.values, ds.train_end, ds.warnings);
    return ds;
}

// Sliding windows over one split, standardized with train-split statistics.
struct WindowSet {
    Tensor inputs;   // [N x T_in x V]
    Tensor targets;  // [N x T_out x V]
    std::vector<std::size_t> origins;
    std::size_t t_in = 0, t_out = 0;

    std::size_t count() const { return origins.size(); }
    std::size_t channels() const { return inputs.extent(2); }
};

inline WindowSet make_windows(const TimeSeriesDataset& ds, Split split, std::size_t t_in,
                              std::size_t t_out, std::size_t stride = 1) {
    if (ds.norm.mean.empty())
        throw ConfigError("make_windows: dataset has no split/normalization statistics");
    if (stride == 0) throw ConfigError("make_windows: stride must be >= 1");
    auto [lo, hi] = ds.split_range(split);
    const std::size_t len = hi - lo;
    const std::size_t need = t_in + t_out;
    if (len < need)
        throw ConfigError(std::string("make_windows: ") + split_name(split) + " split has " +
                          std::to_string(len) + " rows, needs at least " + std::to_string(need));
    const std::size_t V = ds.channels();
    const std::size_t N = (len - need) / stride + 1;

    std::vector<double> in_buf(N * t_in * V);
    std::vector<double> out_buf(N * t_out * V);
    std::vector<std::size_t> origins(N);
    const double* p = ds.values.data();
    for (std::size_t w = 0; w < N; ++w) {
        const std::size_t base = lo + w * stride;
        origins[w] = base;
        for (std::size_t s = 0; s < t_in; ++s)
            for (std::size_t v = 0; v < V; ++v)
                in_buf[(w * t_in + s) * V + v] = ds.standardize_value(p[(base + s) * V + v], v);
        for (std::size_t s = 0; s < t_out; ++s)
            for (std::size_t v = 0; v < V; ++v)
                out_buf[(w * t_out + s) * V + v] =
                    ds.standardize_value(p[(base + t_in + s) * V + v], v);
    }
    WindowSet ws;
    ws.inputs = Tensor(Shape{N, t_in, V}, std::move(in_buf));
    ws.targets = Tensor(Shape{N, t_out, V}, std::move(out_buf));
    ws.origins = std::move(origins);
    ws.t_in = t_in;
    ws.t_out = t_out;
    return ws;
}

// ---------------------------------------------------------------------------
// Synthetic series
// ---------------------------------------------------------------------------

struct SynthSpec {
    enum class Kind { sine_mixture, trend_plus_season, ar_noise };
    Kind kind = Kind::sine_mixture;
    std::size_t channels = 1;
    std::size_t length = 2048;
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;

    static Kind kind_from_string(const std::string& s) {
        if (s == "sine_mixture") return Kind::sine_mixture;
        if (s == "trend_plus_season") return Kind::trend_plus_season;
        if (s == "ar_noise") return Kind::ar_noise;
        throw ConfigError("unknown synthetic kind: " + s);
    }
    static const char* kind_name(Kind k) {
        switch (k) {
            case Kind::sine_mixture: return "sine_mixture";
            case Kind::trend_plus_season: return "trend_plus_season";
            default: return "ar_noise";
        }
    }
};

inline TimeSeriesDataset synth_generate(const SynthSpec& spec) {
    if (spec.length < 512) throw ConfigError("synthetic series length must be >= 512");
    if (spec.channels < 1) throw ConfigError("synthetic series needs at least one channel");
    const std::size_t T = spec.length, V = spec.channels;
    std::vector<double> buf(T * V, 0.0);
    for (std::size_t v = 0; v < V; ++v) {
        auto rng = make_engine(derive_seed(spec.seed, "synth", v));
        std::normal_distribution<double> noise(0.0, 1.0);
        switch (spec.kind) {
            case SynthSpec::Kind::sine_mixture: {
                const std::size_t n_comp = 2 + static_cast<std::size_t>(rng() % 3);
                std::uniform_real_distribution<double> period(16.0, 160.0);
                std::uniform_real_distribution<double> amp(0.5, 1.5);
                std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
                std::vector<double> ps, as, phs;
                for (std::size_t j = 0; j < n_comp; ++j) {
                    ps.push_back(period(rng));
                    as.push_back(amp(rng));
                    phs.push_back(phase(rng));
                }
                for (std::size_t t = 0; t < T; ++t) {
                    double x = 0;
                    for (std::size_t j = 0; j < n_comp; ++j)
                        x += as[j] * std::sin(2.0 * M_PI * static_cast<double>(t) / ps[j] + phs[j]);
                    if (spec.noise_sigma > 0) x += spec.noise_sigma * noise(rng);
                    buf[t * V + v] = x;
                }
                break;
            }
            case SynthSpec::Kind::trend_plus_season: {
                std::uniform_real_distribution<double> slope_d(-0.002, 0.002);
                std::uniform_real_distribution<double> period(24.0, 128.0);
                std::uniform_real_distribution<double> amp(0.5, 1.5);
                const double slope = slope_d(rng), per = period(rng), a = amp(rng);
                for (std::size_t t = 0; t < T; ++t) {
                    double x = slope * static_cast<double>(t) +
                               a * std::sin(2.0 * M_PI * static_cast<double>(t) / per);
                    if (spec.noise_sigma > 0) x += spec.noise_sigma * noise(rng);
                    buf[t * V + v] = x;
                }
                break;
            }
            case SynthSpec::Kind::ar_noise: {
                const double phi = 0.8;
                const double sigma = spec.noise_sigma > 0 ? spec.noise_sigma : 1.0;
                double x = 0;
                for (std::size_t t = 0; t < T; ++t) {
                    x = phi * x + sigma * noise(rng);
                    buf[t * V + v] = x;
                }
                break;
            }
        }
    }
    TimeSeriesDataset ds;
    ds.name = std::string("synth_") + SynthSpec::kind_name(spec.kind);
    ds.values = Tensor(Shape{T, V}, std::move(buf));
    return ds;
}

}  // namespace dscope
