#include "ssps/metrics.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>
#include <type_traits>

#include "ssps/errors.hpp"

namespace ssps {

MetricsLog::MetricsLog(std::ostream* sink) : sink_(sink) {
  if (sink_) *sink_ << kMetricsHeader << '\n';
}

void MetricsLog::append(MetricsRow row) {
  if (sink_) *sink_ << format_row(row) << '\n' << std::flush;
  rows_.push_back(std::move(row));
}

std::string MetricsLog::to_csv() const {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows_) out += format_row(r) + "\n";
  return out;
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

template <class T>
std::string opt(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) {
    return format_number(*v);
  } else {
    return std::to_string(*v);
  }
}

std::vector<std::string> fields_of(const std::string& line) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back().push_back(c);
    }
  }
  return out;
}

std::optional<double> parse_opt_double(const std::string& f, std::size_t offset) {
  if (f.empty()) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(f.data(), f.data() + f.size(), v);
  if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
    throw ParseError("metrics: bad number '" + f + "'", offset);
  }
  return v;
}

long parse_long(const std::string& f, std::size_t offset) {
  long v = 0;
  auto res = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size()) {
    throw ParseError("metrics: bad integer '" + f + "'", offset);
  }
  return v;
}

}  // namespace

std::string format_row(const MetricsRow& r) {
  std::string s;
  s += std::to_string(r.epoch) + "," + r.phase + "," + std::to_string(r.iter) + ",";
  s += opt(r.task_loss) + "," + opt(r.l_j) + "," + opt(r.e_wb) + "," + opt(r.e_ab) + "," + opt(r.tau) + ",";
  s += r.event + "," + opt(r.cell_id) + "," + opt(r.entropy) + "," + opt(r.space_log10);
  return s;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::vector<MetricsRow> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    const std::size_t start = pos;
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      if (line != kMetricsHeader) throw ParseError("metrics: unexpected header", start);
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto f = fields_of(line);
    if (f.size() != 12) throw ParseError("metrics: expected 12 fields", start);
    MetricsRow r;
    r.epoch = static_cast<int>(parse_long(f[0], start));
    r.phase = f[1];
    r.iter = parse_long(f[2], start);
    r.task_loss = parse_opt_double(f[3], start);
    r.l_j = parse_opt_double(f[4], start);
    r.e_wb = parse_opt_double(f[5], start);
    r.e_ab = parse_opt_double(f[6], start);
    r.tau = parse_opt_double(f[7], start);
    r.event = f[8];
    if (!f[9].empty()) r.cell_id = parse_long(f[9], start);
    r.entropy = parse_opt_double(f[10], start);
    r.space_log10 = parse_opt_double(f[11], start);
    rows.push_back(std::move(r));
  }
  if (header) throw ParseError("metrics: missing header", 0);
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

}  // namespace ssps
