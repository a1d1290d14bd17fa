#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "pillsort/classify.hpp"
#include "pillsort/dataset.hpp"

namespace pillsort {

struct HazardCatalog {
  std::vector<bool> hazardous;  // indexed by class_id
  int unlisted = 0;             // classes that defaulted to non-hazardous

  int class_count() const { return static_cast<int>(hazardous.size()); }
  int hazardous_count() const;
  bool is_hazardous(int class_id) const;
};

// CSV rows `ndc_or_class_id,flag` with flag H or N; a header row with those
// names is optional.
HazardCatalog parse_catalog(std::string_view text, const Manifest& manifest);
HazardCatalog load_catalog(const std::filesystem::path& path, const Manifest& manifest);
std::string catalog_to_csv(const HazardCatalog& catalog);

double hazard_score(const ProbVector& p, const HazardCatalog& catalog);

enum class HazardMode { Top1, Mass };
std::string_view to_string(HazardMode m);
HazardMode parse_hazard_mode(std::string_view s);

struct HazardResult {
  double score = 0.0;
  bool hazardous = false;
  HazardMode mode = HazardMode::Top1;
  double threshold = 0.5;
};

HazardResult decide(const ProbVector& p, const HazardCatalog& catalog, HazardMode mode, double threshold = 0.5);

}  // namespace pillsort
