#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ssps {

// One logged event. Optional columns are written empty when unset.
struct MetricsRow {
  int epoch = 0;
  std::string phase;  // pretrain | warmup | weight | arch | decision | entropy | finetune
  long iter = 0;
  std::optional<double> task_loss;
  std::optional<double> l_j;
  std::optional<double> e_wb;
  std::optional<double> e_ab;
  std::optional<double> tau;
  std::string event;
  std::optional<long> cell_id;
  std::optional<double> entropy;
  std::optional<double> space_log10;
};

inline constexpr const char* kMetricsHeader =
    "epoch,phase,iter,task_loss,l_j,e_wb,e_ab,tau,event,cell_id,entropy,space_log10";

// Append-only event log. Rows are kept in memory and, when a stream is
// attached, written through as they arrive.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::ostream* sink);

  void append(MetricsRow row);
  const std::vector<MetricsRow>& rows() const { return rows_; }

  // Whole log as CSV text, header included.
  std::string to_csv() const;

 private:
  std::vector<MetricsRow> rows_;
  std::ostream* sink_ = nullptr;
};

// Shortest text that parses back to the same double.
std::string format_number(double v);
std::string format_row(const MetricsRow& row);

// Reads a metrics CSV; throws ParseError on malformed content.
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

}  // namespace ssps
