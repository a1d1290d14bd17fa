#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pillsort/eval.hpp"

namespace pillsort {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  friend bool operator==(const Table&, const Table&) = default;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
  friend bool operator==(const RocCurve&, const RocCurve&) = default;
};

// Undefined metrics are stored as nullopt and serialized as JSON null.
struct EvalReport {
  static constexpr int kSchema = 1;
  std::map<std::string, std::string> metadata;
  std::map<std::string, std::optional<double>> metrics;
  std::map<std::string, long long> counts;
  std::map<std::string, PRCurve> pr_curves;
  std::map<std::string, RocCurve> roc_curves;
  std::map<std::string, BinaryConfusion> confusions;
  std::map<std::string, Table> tables;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(std::string_view text);

std::string table_to_csv(const Table& t);
std::string pr_curve_svg(const PRCurve& c, std::string_view title);
std::string roc_curve_svg(const RocCurve& c, std::string_view title);

// report.json, <table>.csv, pr_<name>.svg and roc_<name>.svg under out_dir.
// Returns the written paths in order.
std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& out_dir);

// Fixed-precision cell text; nullopt becomes "undefined".
std::string format_cell(std::optional<double> v, int decimals = 4);

}  // namespace pillsort
