#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mocap {

struct PercentileRow {
  double percent = 0.0;
  double value = 0.0;
};

/// Type-7 percentiles; the default rows are 95 / 99 / 99.9 / 99.99.
std::vector<PercentileRow> percentile_table(const std::vector<double>& values,
                                            const std::vector<double>& percents = {95.0, 99.0, 99.9, 99.99});

/// Log-spaced bins over [lo, hi); values below lo (zeros included) land in
/// underflow, values at or above hi in overflow, so counts always sum to
/// the number of samples.
struct LogHistogram {
  std::vector<double> edges;  // bins + 1
  std::vector<long long> counts;
  long long underflow = 0;
  long long overflow = 0;

  long long total() const;
};

LogHistogram log_histogram(const std::vector<double>& values, double lo, double hi, int bins_per_decade);

struct SummaryStats {
  long long count = 0;
  double mean = 0.0;
  double rms = 0.0;
  double max = 0.0;
};

SummaryStats summarize(const std::vector<double>& values);

using HistogramSeries = std::vector<std::pair<std::string, LogHistogram>>;

/// bin_lo,bin_hi,<series...>; first row is underflow, last is overflow.
/// All series must share edges.
std::string histogram_csv(const HistogramSeries& series);

/// Self-contained SVG bar chart on a log x axis.
std::string histogram_svg(const HistogramSeries& series, const std::string& title, const std::string& x_label);

/// %.17g, which round-trips and prints identically on every run.
std::string format_double(double v);

}  // namespace mocap
