#include "pillsort/report.hpp"

#include <cctype>
#include <cstdio>

#include <json.hpp>

#include "pillsort/csv.hpp"
#include "pillsort/error.hpp"

namespace pillsort {

using nlohmann::json;

namespace {

json opt(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

// Square unit-range plot; `pts` are already in [0, 1] x [0, 1].
std::string svg_plot(const std::vector<std::pair<double, double>>& pts, std::string_view title, std::string_view xlabel,
                     std::string_view ylabel) {
  constexpr double kLeft = 60, kTop = 40, kSize = 320;
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"420\" viewBox=\"0 0 420 420\">\n";
  s += "<rect width=\"420\" height=\"420\" fill=\"white\"/>\n";
  s += "<text x=\"210\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + xml_escape(title) +
       "</text>\n";
  s += "<rect x=\"60\" y=\"40\" width=\"320\" height=\"320\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double f = t / 4.0;
    const std::string x = fixed(kLeft + f * kSize, 2), y = fixed(kTop + kSize - f * kSize, 2);
    s += "<text x=\"" + x + "\" y=\"376\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
         fixed(f, 2) + "</text>\n";
    s += "<text x=\"54\" y=\"" + y + "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fixed(f, 2) +
         "</text>\n";
  }
  s += "<text x=\"220\" y=\"400\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
       xml_escape(xlabel) + "</text>\n";
  s += "<text x=\"18\" y=\"200\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
       "transform=\"rotate(-90 18 200)\">" + xml_escape(ylabel) + "</text>\n";
  s += "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) s += ' ';
    s += fixed(kLeft + pts[i].first * kSize, 2) + ',' + fixed(kTop + kSize - pts[i].second * kSize, 2);
  }
  s += "\"/>\n</svg>\n";
  return s;
}

std::string safe_name(std::string_view name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

}  // namespace

std::string format_cell(std::optional<double> v, int decimals) { return v ? fixed(*v, decimals) : "undefined"; }

std::string report_to_json(const EvalReport& r) {
  json j;
  j["schema"] = EvalReport::kSchema;
  j["metadata"] = r.metadata;
  json metrics = json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = opt(v);
  j["metrics"] = metrics;
  j["counts"] = r.counts;
  json pr = json::object();
  for (const auto& [k, c] : r.pr_curves) {
    json pts = json::array();
    for (const auto& p : c.points) pts.push_back({p.recall, p.precision});
    pr[k] = {{"average_precision", c.average_precision}, {"points", pts}};
  }
  j["pr_curves"] = pr;
  json roc = json::object();
  for (const auto& [k, c] : r.roc_curves) {
    json pts = json::array();
    for (const auto& p : c.points) pts.push_back({p.fpr, p.tpr});
    roc[k] = {{"auc", c.auc}, {"points", pts}};
  }
  j["roc_curves"] = roc;
  json conf = json::object();
  for (const auto& [k, c] : r.confusions) conf[k] = {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
  j["confusions"] = conf;
  json tables = json::object();
  for (const auto& [k, t] : r.tables) tables[k] = {{"header", t.header}, {"rows", t.rows}};
  j["tables"] = tables;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("report JSON: ") + e.what());
  }
  try {
    if (j.at("schema").get<int>() != EvalReport::kSchema)
      throw Error(Errc::ParseError, "unsupported report schema " + j.at("schema").dump());
    EvalReport r;
    r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    for (const auto& [k, v] : j.at("metrics").items()) r.metrics[k] = opt_from(v);
    r.counts = j.at("counts").get<std::map<std::string, long long>>();
    for (const auto& [k, v] : j.at("pr_curves").items()) {
      PRCurve c;
      c.average_precision = v.at("average_precision").get<double>();
      for (const auto& p : v.at("points")) c.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      r.pr_curves[k] = std::move(c);
    }
    for (const auto& [k, v] : j.at("roc_curves").items()) {
      RocCurve c;
      c.auc = v.at("auc").get<double>();
      for (const auto& p : v.at("points")) c.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      r.roc_curves[k] = std::move(c);
    }
    for (const auto& [k, v] : j.at("confusions").items())
      r.confusions[k] = {v.at("tp").get<long long>(), v.at("tn").get<long long>(), v.at("fp").get<long long>(),
                         v.at("fn").get<long long>()};
    for (const auto& [k, v] : j.at("tables").items())
      r.tables[k] = {v.at("header").get<std::vector<std::string>>(),
                     v.at("rows").get<std::vector<std::vector<std::string>>>()};
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("report JSON: ") + e.what());
  }
}

std::string table_to_csv(const Table& t) {
  std::string out = csv::join(t.header) + '\n';
  for (const auto& row : t.rows) out += csv::join(row) + '\n';
  return out;
}

std::string pr_curve_svg(const PRCurve& c, std::string_view title) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(c.points.size());
  for (const auto& p : c.points) pts.emplace_back(p.recall, p.precision);
  return svg_plot(pts, std::string(title) + " (AP " + fixed(c.average_precision, 4) + ")", "recall", "precision");
}

std::string roc_curve_svg(const RocCurve& c, std::string_view title) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(c.points.size());
  for (const auto& p : c.points) pts.emplace_back(p.fpr, p.tpr);
  return svg_plot(pts, std::string(title) + " (AUC " + fixed(c.auc, 4) + ")", "false positive rate",
                  "true positive rate");
}

std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::Io, out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::filesystem::path& p, const std::string& text) {
    csv::write_text(p, text);
    written.push_back(p);
  };
  put(out_dir / "report.json", report_to_json(r));
  for (const auto& [k, t] : r.tables) put(out_dir / (safe_name(k) + ".csv"), table_to_csv(t));
  for (const auto& [k, c] : r.pr_curves) put(out_dir / ("pr_" + safe_name(k) + ".svg"), pr_curve_svg(c, "PR " + k));
  for (const auto& [k, c] : r.roc_curves) put(out_dir / ("roc_" + safe_name(k) + ".svg"), roc_curve_svg(c, "ROC " + k));
  return written;
}

}  // namespace pillsort
