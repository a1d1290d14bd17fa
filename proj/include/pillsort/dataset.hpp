#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pillsort/imaging.hpp"

namespace pillsort {

enum class ImageKind { Reference, Consumer, Synthetic };
enum class Side { Front, Back, Both, Unknown };
enum class Split { Train, Test, Unassigned };

std::string_view to_string(ImageKind k);
std::string_view to_string(Side s);
std::string_view to_string(Split s);
ImageKind parse_kind(std::string_view s);
Side parse_side(std::string_view s);
Split parse_split(std::string_view s);

struct PillClass {
  int class_id = 0;
  std::string ndc;
  std::string display_name;
};

// One pill placed into a generated scene.
struct Placement {
  int class_id = 0;
  BBox bbox;
  double rotation = 0.0;
  double scale = 1.0;
};

struct ImageRecord {
  std::string image_id;
  std::string path;
  int class_id = 0;
  ImageKind kind = ImageKind::Consumer;
  Side side = Side::Unknown;
  Split split = Split::Unassigned;
  std::optional<int> fold;
  std::string pair_id;
  std::vector<Placement> placements;
};

struct Manifest {
  std::vector<PillClass> classes;
  std::vector<ImageRecord> records;
  std::optional<std::uint64_t> seed;

  // Throws on a dangling class_id, duplicate image_id, a test record with a
  // fold, or side=both on a non-consumer record.
  void validate() const;
  const ImageRecord* find(std::string_view image_id) const;
  const PillClass& class_of(const ImageRecord& r) const;
  std::size_t class_count() const { return classes.size(); }
  std::optional<int> class_for_ndc(std::string_view ndc) const;
};

struct FoldPlan {
  int k = 0;
  std::map<std::string, int> assignment;

  std::vector<std::string> validation_slice(int fold) const;
};

struct RawLabel {
  std::string image_id;
  std::string ndc;
  std::string path;
  ImageKind kind = ImageKind::Consumer;
  Side side = Side::Unknown;
  std::string display_name;
};

// NNNNN-NNNN-NN
bool is_valid_ndc(std::string_view ndc);

// One class per distinct NDC, class_id by ascending NDC.
std::vector<PillClass> group_by_ndc(const std::vector<RawLabel>& labels);

// group_by_ndc plus one record per label, all unassigned.
Manifest build_manifest(const std::vector<RawLabel>& labels);

// Class-stratified holdout over consumer records. The total test count is
// round(fraction * consumers), apportioned across classes by largest remainder.
Manifest split_holdout(const Manifest& m, double fraction, std::uint64_t seed);
Manifest split_by_list(const Manifest& m, const std::vector<std::string>& test_ids);
std::vector<std::string> read_test_list(const std::filesystem::path& path);

// Per class the consumer training records are shuffled and dealt round-robin,
// continuing the deal position from one class to the next.
FoldPlan make_folds(const Manifest& m, int k, std::uint64_t seed);
Manifest apply_folds(const Manifest& m, const FoldPlan& plan);

std::string manifest_to_csv(const Manifest& m);
Manifest manifest_from_csv(std::string_view text);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

// Raw ingestion file: header image_id,path,ndc,kind,side[,display_name].
std::vector<RawLabel> read_raw_labels(const std::filesystem::path& path);

// Paths in a manifest are resolved against the manifest's directory when relative.
std::filesystem::path resolve(const std::filesystem::path& manifest_dir, const std::string& path);

}  // namespace pillsort
