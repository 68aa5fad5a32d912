#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "d2r/evaluate.hpp"
#include "d2r/train.hpp"

namespace d2r {

inline constexpr const char* kMetricsHeader = "run_id,epoch,role,metric,value,attack_eps,attack_iters";

/// One row of the metrics CSV. epoch is −1 for evaluations outside training.
struct MetricsRow {
  std::string run_id;
  long epoch = 0;
  std::string role;
  std::string metric;
  double value = 0.0;
  std::optional<double> attack_eps;
  std::optional<int> attack_iters;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

class MetricsError : public Error {
 public:
  using Error::Error;
};

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_row(const MetricsRow& r) {
  std::string out = r.run_id + ',' + std::to_string(r.epoch) + ',' + r.role + ',' + r.metric + ',' +
                    format_double(r.value) + ',';
  if (r.attack_eps) out += format_double(*r.attack_eps);
  out += ',';
  if (r.attack_iters) out += std::to_string(*r.attack_iters);
  return out;
}

inline std::string robust_metric_name(const EvalAttack& attack) { return "robust_acc@" + attack.name(); }

/// Rows for one epoch: clean and robust accuracy for guide and target, then
/// the joint loss components and the positive-gap fraction.
inline std::vector<MetricsRow> epoch_rows(const std::string& run_id, const EpochRecord& rec,
                                          const EvalAttack& robust_attack) {
  const long e = static_cast<long>(rec.epoch);
  const std::string robust = robust_metric_name(robust_attack);
  const double eps = robust_attack.config.epsilon;
  const int iters = robust_attack.config.iterations;
  return {
      {run_id, e, "guide", "clean_acc", rec.guide.clean, {}, {}},
      {run_id, e, "guide", robust, rec.guide.robust, eps, iters},
      {run_id, e, "target", "clean_acc", rec.target.clean, {}, {}},
      {run_id, e, "target", robust, rec.target.robust, eps, iters},
      {run_id, e, "joint", "loss_ce", rec.mean_loss.ce, {}, {}},
      {run_id, e, "joint", "loss_mse", rec.mean_loss.mse, {}, {}},
      {run_id, e, "joint", "loss_kl_adv", rec.mean_loss.kl_adv, {}, {}},
      {run_id, e, "joint", "loss_skl_gap", rec.mean_loss.skl_gap, {}, {}},
      {run_id, e, "joint", "loss_total", rec.mean_loss.total, {}, {}},
      {run_id, e, "joint", "gap_sign_fraction", rec.gap_sign_positive_fraction, {}, {}},
  };
}

/// Serialised writer for a metrics CSV. A fresh file starts with the header.
class MetricsWriter {
 public:
  enum class Mode { truncate, append };

  MetricsWriter(const std::filesystem::path& path, Mode mode) {
    const bool fresh = mode == Mode::truncate || !std::filesystem::exists(path) ||
                       std::filesystem::file_size(path) == 0;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, mode == Mode::truncate ? std::ios::trunc : std::ios::app);
    if (!out_) throw MetricsError("cannot open metrics file " + path.string());
    if (fresh) out_ << kMetricsHeader << '\n';
  }

  void write(const MetricsRow& row) {
    if (!std::isfinite(row.value)) throw MetricsError("non-finite metric value for " + row.metric);
    out_ << format_row(row) << '\n';
    out_.flush();
    if (!out_) throw MetricsError("metrics write failed");
  }

  void write(const std::vector<MetricsRow>& rows) {
    for (const auto& r : rows) write(r);
  }

 private:
  std::ofstream out_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line_no) {
  T value{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw MetricsError("metrics line " + std::to_string(line_no) + ": cannot parse '" + s + "'");
  }
  return value;
}

}  // namespace detail

inline std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MetricsError("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw MetricsError("metrics file lacks the expected header");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 7) throw MetricsError("metrics line " + std::to_string(line_no) + " has " +
                                          std::to_string(f.size()) + " fields, expected 7");
    MetricsRow r;
    r.run_id = f[0];
    r.epoch = detail::parse_number<long>(f[1], line_no);
    r.role = f[2];
    r.metric = f[3];
    r.value = detail::parse_number<double>(f[4], line_no);
    if (!f[5].empty()) r.attack_eps = detail::parse_number<double>(f[5], line_no);
    if (!f[6].empty()) r.attack_iters = detail::parse_number<int>(f[6], line_no);
    if (r.run_id.empty() || r.role.empty() || r.metric.empty()) {
      throw MetricsError("metrics line " + std::to_string(line_no) + " has an empty key field");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace d2r
