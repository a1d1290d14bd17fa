#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pillsort/dataset.hpp"
#include "pillsort/imaging.hpp"

namespace pillsort {

// Procedural stand-ins for studio reference photographs: flat-colored pill
// silhouettes on the fixed reference gray, with an imprint bar on the front.

enum class PillShape { Disk, Oval, RoundedSquare, Stadium, Octagon };

struct FixturePill {
  PillShape shape = PillShape::Disk;
  int width = 100;
  int height = 100;
  Rgb color;
  std::string ndc;
  std::string name;
};

// n pills with pairwise distinct colors; shapes vary across the catalog.
std::vector<FixturePill> fixture_catalog(int n);

RasterImage render_reference(const FixturePill& pill, Side side);

// Writes ref_<class>_{front,back}.png into dir and returns a manifest of
// reference records (split train) for them.
Manifest write_fixture_references(const std::vector<FixturePill>& catalog, const std::filesystem::path& dir);

// The same references in memory, in class order, front then back.
struct FixtureReference {
  int class_id;
  Side side;
  RasterImage image;
};
std::vector<FixtureReference> render_fixture_references(const std::vector<FixturePill>& catalog);

}  // namespace pillsort
