#include "core/metrics.hpp"

#include "core/error.hpp"
#include "core/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace mocap {

std::vector<PercentileRow> percentile_table(const std::vector<double>& values, const std::vector<double>& percents) {
  std::vector<PercentileRow> rows;
  for (double p : percents) {
    rows.push_back({p, values.empty() ? 0.0 : quantile_type7(values, p / 100.0)});
  }
  return rows;
}

long long LogHistogram::total() const {
  long long t = underflow + overflow;
  for (long long c : counts) t += c;
  return t;
}

LogHistogram log_histogram(const std::vector<double>& values, double lo, double hi, int bins_per_decade) {
  if (!(lo > 0.0) || !(hi > lo) || bins_per_decade < 1) {
    throw Error(ErrorCode::InvalidArgument, "histogram needs 0 < lo < hi and >= 1 bin per decade");
  }
  LogHistogram h;
  const double l0 = std::log10(lo);
  const auto bins = static_cast<int>(std::ceil((std::log10(hi) - l0) * bins_per_decade - 1e-9));
  for (int b = 0; b <= bins; ++b) h.edges.push_back(std::pow(10.0, l0 + static_cast<double>(b) / bins_per_decade));
  h.edges.back() = std::max(h.edges.back(), hi);
  h.counts.assign(static_cast<size_t>(bins), 0);
  for (double v : values) {
    if (!(v >= h.edges.front())) {
      ++h.underflow;  // NaN lands here too
    } else if (v >= h.edges.back()) {
      ++h.overflow;
    } else {
      auto it = std::upper_bound(h.edges.begin(), h.edges.end(), v);
      ++h.counts[static_cast<size_t>(it - h.edges.begin() - 1)];
    }
  }
  return h;
}

SummaryStats summarize(const std::vector<double>& values) {
  SummaryStats s;
  s.count = static_cast<long long>(values.size());
  if (values.empty()) return s;
  double sum = 0.0, sq = 0.0;
  for (double v : values) {
    sum += v;
    sq += v * v;
    s.max = std::max(s.max, v);
  }
  s.mean = sum / static_cast<double>(values.size());
  s.rms = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string histogram_csv(const HistogramSeries& series) {
  if (series.empty()) return "bin_lo,bin_hi\n";
  const auto& edges = series.front().second.edges;
  for (const auto& s : series) {
    if (s.second.edges != edges) throw Error(ErrorCode::InvalidArgument, "histogram series with different bins");
  }
  std::ostringstream out;
  out << "bin_lo,bin_hi";
  for (const auto& s : series) out << ',' << s.first;
  out << '\n';
  out << "0," << format_double(edges.front());
  for (const auto& s : series) out << ',' << s.second.underflow;
  out << '\n';
  for (size_t b = 0; b + 1 < edges.size(); ++b) {
    out << format_double(edges[b]) << ',' << format_double(edges[b + 1]);
    for (const auto& s : series) out << ',' << s.second.counts[b];
    out << '\n';
  }
  out << format_double(edges.back()) << ",inf";
  for (const auto& s : series) out << ',' << s.second.overflow;
  out << '\n';
  return out.str();
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string histogram_svg(const HistogramSeries& series, const std::string& title, const std::string& x_label) {
  static const char* kColors[] = {"#3b6ea5", "#d1603d", "#5a9e4b", "#8c5fa8"};
  const double W = 640, H = 360, left = 60, right = 20, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  char buf[256];
  std::ostringstream out;
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n", W, H);
  out << buf;
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">", W / 2);
  out << buf << xml_escape(title) << "</text>\n";
  if (series.empty() || series.front().second.counts.empty()) {
    out << "</svg>\n";
    return out.str();
  }
  const auto& edges = series.front().second.edges;
  const double l0 = std::log10(edges.front()), l1 = std::log10(edges.back());
  long long peak = 1;
  for (const auto& s : series) {
    for (long long c : s.second.counts) peak = std::max(peak, c);
  }
  auto x_of = [&](double v) { return left + pw * (std::log10(v) - l0) / (l1 - l0); };
  const double n = static_cast<double>(series.size());
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& h = series[si].second;
    for (size_t b = 0; b < h.counts.size(); ++b) {
      if (h.counts[b] == 0) continue;
      const double x0 = x_of(edges[b]), x1 = x_of(edges[b + 1]);
      const double bw = (x1 - x0) / n;
      const double bh = ph * static_cast<double>(h.counts[b]) / static_cast<double>(peak);
      std::snprintf(buf, sizeof buf, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>\n",
                    x0 + bw * static_cast<double>(si), top + ph - bh, bw, bh, kColors[si % 4]);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" fill=\"%s\">", W - right - 150,
                  top + 14.0 * static_cast<double>(si + 1), kColors[si % 4]);
    out << buf << xml_escape(series[si].first) << " (n=" << h.total() << ")</text>\n";
  }
  std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", left,
                top + ph, left + pw, top + ph);
  out << buf;
  for (int d = static_cast<int>(std::ceil(l0 - 1e-9)); d <= static_cast<int>(std::floor(l1 + 1e-9)); ++d) {
    const double x = x_of(std::pow(10.0, d));
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.1f\" x2=\"%.2f\" y2=\"%.1f\" stroke=\"black\"/>"
                  "<text x=\"%.2f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"middle\">1e%d</text>\n",
                  x, top + ph, x, top + ph + 5, x, top + ph + 17, d);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">", left + pw / 2,
                H - 12);
  out << buf << xml_escape(x_label) << "</text>\n</svg>\n";
  return out.str();
}

}  // namespace mocap
