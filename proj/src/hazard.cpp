#include "pillsort/hazard.hpp"

#include <algorithm>
#include <optional>

#include "pillsort/csv.hpp"
#include "pillsort/error.hpp"

namespace pillsort {

int HazardCatalog::hazardous_count() const {
  int n = 0;
  for (bool h : hazardous) n += h ? 1 : 0;
  return n;
}

bool HazardCatalog::is_hazardous(int class_id) const {
  if (class_id < 0 || class_id >= class_count())
    throw Error(Errc::UnknownClass, "class " + std::to_string(class_id) + " not in hazard catalog");
  return hazardous[static_cast<std::size_t>(class_id)];
}

HazardCatalog parse_catalog(std::string_view text, const Manifest& manifest) {
  const int n = static_cast<int>(manifest.class_count());
  std::vector<std::optional<bool>> flags(static_cast<std::size_t>(n));
  const auto rows = csv::parse(text);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = " at line " + std::to_string(row.line);
    if (r == 0 && !row.fields.empty() && row.fields[0] == "ndc_or_class_id") continue;
    if (row.fields.size() != 2) throw Error(Errc::ParseError, "expected 2 fields" + where);
    const std::string& key = row.fields[0];
    int class_id = -1;
    if (is_valid_ndc(key)) {
      const auto c = manifest.class_for_ndc(key);
      if (!c) throw Error(Errc::UnknownClass, "unknown NDC '" + key + "'" + where);
      class_id = *c;
    } else {
      const auto c = csv::parse_int(key);
      if (!c) throw Error(Errc::ParseError, "'" + key + "' is neither an NDC nor a class id" + where);
      if (*c < 0 || *c >= n) throw Error(Errc::UnknownClass, "class id " + key + " out of range" + where);
      class_id = static_cast<int>(*c);
    }
    bool h;
    if (row.fields[1] == "H") h = true;
    else if (row.fields[1] == "N") h = false;
    else throw Error(Errc::ParseError, "flag must be H or N, got '" + row.fields[1] + "'" + where);
    auto& slot = flags[static_cast<std::size_t>(class_id)];
    if (slot && *slot != h) throw Error(Errc::ConflictingFlag, "conflicting flags for class " + std::to_string(class_id) + where);
    slot = h;
  }
  HazardCatalog cat;
  cat.hazardous.resize(flags.size());
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) ++cat.unlisted;
    cat.hazardous[i] = flags[i].value_or(false);
  }
  return cat;
}

HazardCatalog load_catalog(const std::filesystem::path& path, const Manifest& manifest) {
  try {
    return parse_catalog(csv::read_text(path), manifest);
  } catch (const Error& e) {
    if (e.code() == Errc::Io) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string catalog_to_csv(const HazardCatalog& catalog) {
  std::string out = "ndc_or_class_id,flag\n";
  for (int c = 0; c < catalog.class_count(); ++c)
    out += std::to_string(c) + (catalog.hazardous[static_cast<std::size_t>(c)] ? ",H\n" : ",N\n");
  return out;
}

double hazard_score(const ProbVector& p, const HazardCatalog& catalog) {
  if (static_cast<int>(p.size()) != catalog.class_count())
    throw Error(Errc::ShapeMismatch, "probability vector and hazard catalog differ in length");
  double s = 0;
  for (std::size_t c = 0; c < p.size(); ++c)
    if (catalog.hazardous[c]) s += p[c];
  return std::clamp(s, 0.0, 1.0);
}

std::string_view to_string(HazardMode m) { return m == HazardMode::Top1 ? "top1" : "mass"; }

HazardMode parse_hazard_mode(std::string_view s) {
  if (s == "top1") return HazardMode::Top1;
  if (s == "mass") return HazardMode::Mass;
  throw Error(Errc::ParseError, "hazard mode must be top1 or mass, got '" + std::string(s) + "'");
}

HazardResult decide(const ProbVector& p, const HazardCatalog& catalog, HazardMode mode, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw Error(Errc::InvalidThreshold, "threshold " + csv::format_double(threshold) + " outside [0, 1]");
  HazardResult r;
  r.score = hazard_score(p, catalog);
  r.mode = mode;
  r.threshold = threshold;
  r.hazardous = mode == HazardMode::Top1 ? catalog.is_hazardous(top_k(p, 1).front()) : r.score >= threshold;
  return r;
}

}  // namespace pillsort
