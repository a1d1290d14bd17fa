#include "pillsort/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "pillsort/csv.hpp"
#include "pillsort/error.hpp"
#include "pillsort/random.hpp"

namespace pillsort {

std::string_view to_string(ImageKind k) {
  switch (k) {
    case ImageKind::Reference: return "reference";
    case ImageKind::Consumer: return "consumer";
    case ImageKind::Synthetic: return "synthetic";
  }
  return "consumer";
}

std::string_view to_string(Side s) {
  switch (s) {
    case Side::Front: return "front";
    case Side::Back: return "back";
    case Side::Both: return "both";
    case Side::Unknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

ImageKind parse_kind(std::string_view s) {
  if (s == "reference") return ImageKind::Reference;
  if (s == "consumer") return ImageKind::Consumer;
  if (s == "synthetic") return ImageKind::Synthetic;
  throw Error(Errc::ParseError, "unknown image kind '" + std::string(s) + "'");
}

Side parse_side(std::string_view s) {
  if (s == "front") return Side::Front;
  if (s == "back") return Side::Back;
  if (s == "both") return Side::Both;
  if (s == "unknown" || s.empty()) return Side::Unknown;
  throw Error(Errc::ParseError, "unknown side '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "unassigned" || s.empty()) return Split::Unassigned;
  throw Error(Errc::ParseError, "unknown split '" + std::string(s) + "'");
}

void Manifest::validate() const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i].class_id != static_cast<int>(i))
      throw Error(Errc::ParseError, "class ids must be contiguous from 0");
  std::unordered_set<std::string> ndcs;
  for (const auto& c : classes)
    if (!ndcs.insert(c.ndc).second) throw Error(Errc::InvalidNdc, "duplicate class ndc " + c.ndc);
  std::unordered_set<std::string> ids;
  for (const auto& r : records) {
    if (r.class_id < 0 || r.class_id >= static_cast<int>(classes.size()))
      throw Error(Errc::UnknownClass, "record " + r.image_id + " references class " + std::to_string(r.class_id));
    for (const auto& p : r.placements)
      if (p.class_id < 0 || p.class_id >= static_cast<int>(classes.size()))
        throw Error(Errc::UnknownClass, "placement in " + r.image_id + " references class " + std::to_string(p.class_id));
    if (!ids.insert(r.image_id).second) throw Error(Errc::ParseError, "duplicate image_id " + r.image_id);
    if (r.split == Split::Test && r.fold) throw Error(Errc::ParseError, "test record " + r.image_id + " carries a fold");
    if (r.side == Side::Both && r.kind != ImageKind::Consumer)
      throw Error(Errc::ParseError, "side=both is only valid for consumer images (" + r.image_id + ")");
  }
}

const ImageRecord* Manifest::find(std::string_view image_id) const {
  for (const auto& r : records)
    if (r.image_id == image_id) return &r;
  return nullptr;
}

const PillClass& Manifest::class_of(const ImageRecord& r) const { return classes.at(static_cast<std::size_t>(r.class_id)); }

std::optional<int> Manifest::class_for_ndc(std::string_view ndc) const {
  for (const auto& c : classes)
    if (c.ndc == ndc) return c.class_id;
  return std::nullopt;
}

std::vector<std::string> FoldPlan::validation_slice(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f == fold) out.push_back(id);
  return out;
}

bool is_valid_ndc(std::string_view ndc) {
  if (ndc.size() != 13 || ndc[5] != '-' || ndc[10] != '-') return false;
  for (std::size_t i = 0; i < ndc.size(); ++i) {
    if (i == 5 || i == 10) continue;
    if (ndc[i] < '0' || ndc[i] > '9') return false;
  }
  return true;
}

std::vector<PillClass> group_by_ndc(const std::vector<RawLabel>& labels) {
  std::map<std::string, std::string> names;
  for (const auto& l : labels) {
    if (!is_valid_ndc(l.ndc)) throw Error(Errc::InvalidNdc, "malformed ndc '" + l.ndc + "' for image " + l.image_id);
    auto& n = names[l.ndc];
    if (n.empty()) n = l.display_name;
  }
  std::vector<PillClass> out;
  for (const auto& [ndc, name] : names) out.push_back({static_cast<int>(out.size()), ndc, name});
  return out;
}

Manifest build_manifest(const std::vector<RawLabel>& labels) {
  Manifest m;
  m.classes = group_by_ndc(labels);
  std::map<std::string, int> by_ndc;
  for (const auto& c : m.classes) by_ndc[c.ndc] = c.class_id;
  for (const auto& l : labels) {
    ImageRecord r;
    r.image_id = l.image_id;
    r.path = l.path;
    r.class_id = by_ndc.at(l.ndc);
    r.kind = l.kind;
    r.side = l.side;
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

namespace {

// Every record starts as train (usable for training) except the chosen tests.
Manifest reset_split(const Manifest& m) {
  Manifest out = m;
  for (auto& r : out.records) {
    r.split = Split::Train;
    r.fold.reset();
  }
  return out;
}

}  // namespace

Manifest split_holdout(const Manifest& m, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw Error(Errc::InvalidFraction, "holdout fraction must be in [0, 1)");
  Manifest out = reset_split(m);
  out.seed = seed;

  std::map<int, std::vector<std::size_t>> by_class;
  std::size_t eligible = 0;
  for (std::size_t i = 0; i < out.records.size(); ++i)
    if (out.records[i].kind == ImageKind::Consumer) {
      by_class[out.records[i].class_id].push_back(i);
      ++eligible;
    }
  const auto total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(eligible)));

  // Largest-remainder apportionment; ties broken by ascending class_id.
  struct Quota {
    int class_id;
    std::size_t base;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [cls, idx] : by_class) {
    const double exact = fraction * static_cast<double>(idx.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({cls, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a].remainder > quotas[b].remainder;
  });
  for (std::size_t i = 0; assigned < total && i < order.size(); ++i, ++assigned) ++quotas[order[i]].base;

  Rng rng(seed);
  for (const auto& q : quotas) {
    auto idx = by_class[q.class_id];
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return out.records[a].image_id < out.records[b].image_id;
    });
    rng.shuffle(idx);
    for (std::size_t i = 0; i < q.base && i < idx.size(); ++i) out.records[idx[i]].split = Split::Test;
  }
  out.validate();
  return out;
}

Manifest split_by_list(const Manifest& m, const std::vector<std::string>& test_ids) {
  Manifest out = reset_split(m);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < out.records.size(); ++i) index[out.records[i].image_id] = i;
  for (const auto& id : test_ids) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(Errc::UnknownImage, "test list names unknown image '" + id + "'");
    auto& r = out.records[it->second];
    if (r.kind != ImageKind::Consumer)
      throw Error(Errc::UnknownImage, "test list names non-consumer image '" + id + "'");
    r.split = Split::Test;
  }
  out.validate();
  return out;
}

std::vector<std::string> read_test_list(const std::filesystem::path& path) {
  std::istringstream in(csv::read_text(path));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

FoldPlan make_folds(const Manifest& m, int k, std::uint64_t seed) {
  if (k < 2) throw Error(Errc::InvalidFoldCount, "fold count must be >= 2, got " + std::to_string(k));
  std::map<int, std::vector<const ImageRecord*>> by_class;
  for (const auto& r : m.records)
    if (r.kind == ImageKind::Consumer && r.split != Split::Test) by_class[r.class_id].push_back(&r);

  FoldPlan plan;
  plan.k = k;
  Rng rng(seed);
  int deal = 0;
  for (auto& [cls, recs] : by_class) {
    std::sort(recs.begin(), recs.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });
    rng.shuffle(recs);
    for (const auto* r : recs) {
      plan.assignment[r->image_id] = deal;
      deal = (deal + 1) % k;
    }
  }
  return plan;
}

Manifest apply_folds(const Manifest& m, const FoldPlan& plan) {
  Manifest out = m;
  for (auto& r : out.records) {
    auto it = plan.assignment.find(r.image_id);
    if (it != plan.assignment.end()) r.fold = it->second;
    else r.fold.reset();
  }
  out.validate();
  return out;
}

namespace {

const std::vector<std::string> kBaseColumns = {"image_id", "path", "class_id", "ndc", "kind", "side", "split", "fold"};
const std::vector<std::string> kExtraColumns = {"pair_id", "classes", "rotation", "scale", "bbox"};

template <typename T, typename F>
std::string join_semicolon(const std::vector<T>& items, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back(';');
    out += f(items[i]);
  }
  return out;
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string manifest_to_csv(const Manifest& m) {
  const bool extended = std::any_of(m.records.begin(), m.records.end(),
                                    [](const auto& r) { return !r.pair_id.empty() || !r.placements.empty(); });
  std::string out;
  if (m.seed) out += "# seed=" + std::to_string(*m.seed) + "\n";
  auto header = kBaseColumns;
  if (extended) header.insert(header.end(), kExtraColumns.begin(), kExtraColumns.end());
  out += csv::join(header) + "\n";
  for (const auto& r : m.records) {
    std::vector<std::string> f = {r.image_id,
                                  r.path,
                                  std::to_string(r.class_id),
                                  m.class_of(r).ndc,
                                  std::string(to_string(r.kind)),
                                  std::string(to_string(r.side)),
                                  std::string(to_string(r.split)),
                                  r.fold ? std::to_string(*r.fold) : std::string()};
    if (extended) {
      f.push_back(r.pair_id);
      f.push_back(join_semicolon(r.placements, [](const Placement& p) { return std::to_string(p.class_id); }));
      f.push_back(join_semicolon(r.placements, [](const Placement& p) { return csv::format_double(p.rotation); }));
      f.push_back(join_semicolon(r.placements, [](const Placement& p) { return csv::format_double(p.scale); }));
      f.push_back(join_semicolon(r.placements, [](const Placement& p) {
        return std::to_string(p.bbox.x0) + " " + std::to_string(p.bbox.y0) + " " + std::to_string(p.bbox.x1) + " " +
               std::to_string(p.bbox.y1);
      }));
    }
    out += csv::join(f) + "\n";
  }
  return out;
}

Manifest manifest_from_csv(std::string_view text) {
  Manifest m;
  // Seed comment, if present, precedes the header.
  if (text.starts_with("# seed=")) {
    const auto eol = text.find('\n');
    const std::string_view digits = text.substr(7, eol == std::string_view::npos ? std::string_view::npos : eol - 7);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec != std::errc() || end != digits.data() + digits.size()) throw Error(Errc::ParseError, "malformed seed line");
    m.seed = v;
  }
  const auto rows = csv::parse(text);
  if (rows.empty()) throw Error(Errc::ParseError, "manifest has no header");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) col[rows[0].fields[i]] = i;
  for (const auto& c : kBaseColumns)
    if (!col.count(c)) throw Error(Errc::ParseError, "manifest header lacks column '" + c + "'");
  const bool extended = col.count("classes") && col.count("rotation") && col.count("scale") && col.count("bbox");

  std::map<int, std::string> class_ndc;
  for (std::size_t ri = 1; ri < rows.size(); ++ri) {
    const auto& row = rows[ri];
    const std::string where = " at line " + std::to_string(row.line);
    auto get = [&](const std::string& name) -> const std::string& {
      const auto i = col.at(name);
      if (i >= row.fields.size()) throw Error(Errc::ParseError, "missing column '" + name + "'" + where);
      return row.fields[i];
    };
    ImageRecord r;
    r.image_id = get("image_id");
    r.path = get("path");
    const auto cid = csv::parse_int(get("class_id"));
    if (!cid) throw Error(Errc::ParseError, "malformed class_id" + where);
    r.class_id = static_cast<int>(*cid);
    const std::string& ndc = get("ndc");
    if (!is_valid_ndc(ndc)) throw Error(Errc::InvalidNdc, "malformed ndc '" + ndc + "'" + where);
    auto [it, inserted] = class_ndc.emplace(r.class_id, ndc);
    if (!inserted && it->second != ndc) throw Error(Errc::InvalidNdc, "class " + std::to_string(r.class_id) + " has two ndcs" + where);
    r.kind = parse_kind(get("kind"));
    r.side = parse_side(get("side"));
    r.split = parse_split(get("split"));
    if (const auto& f = get("fold"); !f.empty()) {
      const auto fv = csv::parse_int(f);
      if (!fv) throw Error(Errc::ParseError, "malformed fold" + where);
      r.fold = static_cast<int>(*fv);
    }
    if (col.count("pair_id")) r.pair_id = get("pair_id");
    if (extended) {
      const auto cls = split_on(get("classes"), ';');
      const auto rot = split_on(get("rotation"), ';');
      const auto scl = split_on(get("scale"), ';');
      const auto box = split_on(get("bbox"), ';');
      if (rot.size() != cls.size() || scl.size() != cls.size() || box.size() != cls.size())
        throw Error(Errc::ParseError, "placement columns disagree in length" + where);
      for (std::size_t i = 0; i < cls.size(); ++i) {
        Placement p;
        const auto c = csv::parse_int(cls[i]);
        const auto a = csv::parse_double(rot[i]);
        const auto s = csv::parse_double(scl[i]);
        std::istringstream bs(box[i]);
        if (!c || !a || !s || !(bs >> p.bbox.x0 >> p.bbox.y0 >> p.bbox.x1 >> p.bbox.y1))
          throw Error(Errc::ParseError, "malformed placement" + where);
        p.class_id = static_cast<int>(*c);
        p.rotation = *a;
        p.scale = *s;
        r.placements.push_back(p);
      }
    }
    m.records.push_back(std::move(r));
  }
  const int n = class_ndc.empty() ? 0 : class_ndc.rbegin()->first + 1;
  for (int c = 0; c < n; ++c) {
    auto it = class_ndc.find(c);
    if (it == class_ndc.end()) throw Error(Errc::ParseError, "class ids are not contiguous (missing " + std::to_string(c) + ")");
    m.classes.push_back({c, it->second, ""});
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) { csv::write_text(path, manifest_to_csv(m)); }

Manifest read_manifest(const std::filesystem::path& path) { return manifest_from_csv(csv::read_text(path)); }

std::vector<RawLabel> read_raw_labels(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty()) throw Error(Errc::ParseError, "label file has no header");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) col[rows[0].fields[i]] = i;
  for (const char* c : {"image_id", "path", "ndc", "kind", "side"})
    if (!col.count(c)) throw Error(Errc::ParseError, std::string("label file header lacks column '") + c + "'");
  std::vector<RawLabel> out;
  for (std::size_t ri = 1; ri < rows.size(); ++ri) {
    const auto& row = rows[ri];
    const std::string where = " at line " + std::to_string(row.line);
    auto get = [&](const std::string& name) -> std::string {
      auto it = col.find(name);
      if (it == col.end()) return {};
      if (it->second >= row.fields.size()) throw Error(Errc::ParseError, "missing column '" + name + "'" + where);
      return row.fields[it->second];
    };
    RawLabel l;
    l.image_id = get("image_id");
    l.path = get("path");
    l.ndc = get("ndc");
    if (!is_valid_ndc(l.ndc)) throw Error(Errc::InvalidNdc, "malformed ndc '" + l.ndc + "'" + where);
    try {
      l.kind = parse_kind(get("kind"));
      l.side = parse_side(get("side"));
    } catch (const Error& e) {
      throw Error(e.code(), std::string(e.what()) + where);
    }
    l.display_name = get("display_name");
    out.push_back(std::move(l));
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& manifest_dir, const std::string& path) {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : manifest_dir / p;
}

}  // namespace pillsort
