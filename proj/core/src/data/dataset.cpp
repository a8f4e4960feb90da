#include "gsm/data/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "gsm/error.hpp"

namespace gsm::data {
namespace {

using nlohmann::json;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

void require_finite(const std::vector<Vec3>& v, const char* what) {
  for (const Vec3& p : v) {
    if (!p.allFinite()) throw ContractViolation(std::string("non-finite value in ") + what);
  }
}

std::vector<float> flatten(const std::vector<Vec3>& v) {
  std::vector<float> out;
  out.reserve(3 * v.size());
  for (const Vec3& p : v) {
    for (int k = 0; k < 3; ++k) out.push_back(static_cast<float>(p[k]));
  }
  return out;
}

std::vector<float> flatten(const cut::SdfSampleSet& s) {
  std::vector<float> out;
  out.reserve(4 * s.records.size());
  for (const auto& r : s.records) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<float>(r[k]));
  }
  return out;
}

std::vector<Vec3> unflatten3(const std::vector<float>& f, const fs::path& file) {
  if (f.size() % 3 != 0) throw IoError("array in " + file.string() + " is not n x 3");
  std::vector<Vec3> out(f.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(f[3 * i], f[3 * i + 1], f[3 * i + 2]);
  return out;
}

cut::SdfSampleSet unflatten4(const std::vector<float>& f, const fs::path& file) {
  if (f.size() % 4 != 0) throw IoError("array in " + file.string() + " is not n x 4");
  cut::SdfSampleSet s;
  s.records.resize(f.size() / 4);
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    s.records[i] = Eigen::Vector4d(f[4 * i], f[4 * i + 1], f[4 * i + 2], f[4 * i + 3]);
  }
  return s;
}

json pose_json(const Pose& p) {
  return {{"quaternion", {p.quaternion[0], p.quaternion[1], p.quaternion[2], p.quaternion[3]}},
          {"translation", {p.translation[0], p.translation[1], p.translation[2]}}};
}

Pose pose_from_json(const json& j, const std::string& where) {
  const auto q = j.at("quaternion").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (q.size() != 4 || t.size() != 3) throw IoError("malformed pose in " + where);
  Pose p;
  p.quaternion = Eigen::Vector4d(q[0], q[1], q[2], q[3]);
  p.translation = Vec3(t[0], t[1], t[2]);
  if (!p.quaternion.allFinite() || !p.translation.allFinite()) throw IoError("non-finite pose in " + where);
  if (std::abs(p.quaternion.norm() - 1.0) > 1e-9) throw IoError("pose quaternion is not unit in " + where);
  return p;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out.empty() ? "unknown" : out;
}

json entry_json(const PairEntry& e) {
  return {{"id", e.id},
          {"category", e.category},
          {"cut_family", std::string(cut::to_string(e.family))},
          {"shape", std::string(cut::to_string(e.shape))},
          {"path", e.path},
          {"seed", e.seed},
          {"split", std::string(to_string(e.split))}};
}

PairEntry entry_from_json(const json& j) {
  PairEntry e;
  e.id = j.at("id").get<std::string>();
  e.category = j.at("category").get<std::string>();
  e.family = cut::parse_cut_family(j.at("cut_family").get<std::string>());
  e.shape = cut::parse_shape_type(j.at("shape").get<std::string>());
  e.path = j.at("path").get<std::string>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.split = parse_split(j.value("split", std::string("unassigned")));
  return e;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: break;
  }
  return "unassigned";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::Unassigned, Split::Train, Split::Val, Split::Test}) {
    if (to_string(s) == name) return s;
  }
  throw ContractViolation("unknown split '" + std::string(name) + "'");
}

std::string_view to_string(SplitMode mode) {
  switch (mode) {
    case SplitMode::UnseenCategory: return "unseen-category";
    case SplitMode::UnseenCut: return "unseen-cut";
    case SplitMode::Standard: break;
  }
  return "standard";
}

SplitMode parse_split_mode(std::string_view name) {
  for (SplitMode m : {SplitMode::Standard, SplitMode::UnseenCategory, SplitMode::UnseenCut}) {
    if (to_string(m) == name) return m;
  }
  throw ContractViolation("unknown split mode '" + std::string(name) + "'");
}

const PairEntry& DatasetManifest::find(const std::string& id) const {
  for (const PairEntry& e : entries) {
    if (e.id == id) return e;
  }
  throw ContractViolation("no pair with id '" + id + "'");
}

std::vector<const PairEntry*> DatasetManifest::in_split(Split split) const {
  std::vector<const PairEntry*> out;
  for (const PairEntry& e : entries) {
    if (e.split == split) out.push_back(&e);
  }
  return out;
}

void write_f32le(const fs::path& file, const std::vector<float>& values) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(values[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(4 * words.size()));
  if (!out) throw IoError("write failed for " + file.string());
}

std::vector<float> read_f32le(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % 4 != 0) throw IoError(file.string() + " size is not a multiple of 4");
  std::vector<std::uint32_t> words(bytes / 4);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed for " + file.string());
  std::vector<float> values(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    values[i] = std::bit_cast<float>(to_little(words[i]));
    if (!std::isfinite(values[i])) throw IoError("non-finite value in " + file.string());
  }
  return values;
}

PairEntry entry_for(const cut::ShapePairRecord& record, const std::string& id) {
  PairEntry e;
  e.id = id;
  e.category = record.meta.category;
  e.family = record.meta.spec.family;
  e.shape = record.meta.shape;
  e.path = "pairs/" + id;
  e.seed = record.meta.seed;
  return e;
}

std::string write_pair(const cut::ShapePairRecord& record, const fs::path& root, std::string id) {
  require_finite(record.part_a.points, "points_a");
  require_finite(record.part_b.points, "points_b");
  require_finite(record.part_a.normals, "normals_a");
  require_finite(record.part_b.normals, "normals_b");
  for (const auto* s : {&record.sdf_a, &record.sdf_b}) {
    for (const auto& r : s->records) {
      if (!r.allFinite()) throw ContractViolation("non-finite value in sdf samples");
    }
  }
  for (const Pose* p : {&record.pose_a, &record.pose_b}) {
    if (!p->quaternion.allFinite() || !p->translation.allFinite()) {
      throw ContractViolation("non-finite pose");
    }
  }
  for (const auto& [name, value] : record.meta.spec.coefficients) {
    if (!std::isfinite(value)) throw ContractViolation("non-finite cut coefficient " + name);
  }
  if (!std::isfinite(record.meta.volume_ratio)) throw ContractViolation("non-finite volume ratio");

  const fs::path pairs = root / "pairs";
  std::error_code ec;
  fs::create_directories(pairs, ec);
  if (ec) throw IoError("cannot create " + pairs.string() + ": " + ec.message());
  if (id.empty()) {
    const std::string base = lower(sanitize(record.meta.category) + "-" +
                                   std::string(cut::to_string(record.meta.spec.family)) + "-" +
                                   std::string(cut::to_string(record.meta.shape)) + "-" +
                                   std::to_string(record.meta.seed));
    id = base;
    for (int n = 1; fs::exists(pairs / id); ++n) id = base + "-" + std::to_string(n);
  } else if (fs::exists(pairs / id)) {
    throw IoError("pair directory already exists: " + (pairs / id).string());
  }
  const fs::path dir = pairs / id;
  if (!fs::create_directory(dir, ec) || ec) throw IoError("cannot create " + dir.string());

  write_f32le(dir / "points_a.f32le", flatten(record.part_a.points));
  write_f32le(dir / "points_b.f32le", flatten(record.part_b.points));
  write_f32le(dir / "normals_a.f32le", flatten(record.part_a.normals));
  write_f32le(dir / "normals_b.f32le", flatten(record.part_b.normals));
  write_f32le(dir / "sdf_a.f32le", flatten(record.sdf_a));
  write_f32le(dir / "sdf_b.f32le", flatten(record.sdf_b));

  json coeffs = json::object();
  for (const auto& [name, value] : record.meta.spec.coefficients) coeffs[name] = value;
  const json meta = {
      {"format", kFormatVersion},
      {"id", id},
      {"category", record.meta.category},
      {"source_mesh_id", record.meta.source_mesh_id},
      {"cut", {{"family", std::string(cut::to_string(record.meta.spec.family))}, {"coefficients", coeffs}}},
      {"shape", std::string(cut::to_string(record.meta.shape))},
      {"seed", record.meta.seed},
      {"volume_ratio", record.meta.volume_ratio},
      {"attempts", record.meta.attempts},
      {"pose_a", pose_json(record.pose_a)},
      {"pose_b", pose_json(record.pose_b)},
      {"counts",
       {{"points_a", record.part_a.points.size()},
        {"points_b", record.part_b.points.size()},
        {"sdf_a", record.sdf_a.records.size()},
        {"sdf_b", record.sdf_b.records.size()}}}};
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write meta.json in " + dir.string());
  out << meta.dump(2) << '\n';
  if (!out) throw IoError("write failed for meta.json in " + dir.string());
  return id;
}

cut::ShapePairRecord read_pair(const fs::path& root, const std::string& id) {
  const fs::path dir = root / "pairs" / id;
  const fs::path meta_file = dir / "meta.json";
  std::ifstream in(meta_file);
  if (!in) throw IoError("cannot open " + meta_file.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed " + meta_file.string() + ": " + e.what());
  }

  cut::ShapePairRecord r;
  try {
    if (meta.at("format").get<std::string>() != kFormatVersion) {
      throw IoError("unsupported format in " + meta_file.string());
    }
    r.meta.category = meta.at("category").get<std::string>();
    r.meta.source_mesh_id = meta.value("source_mesh_id", std::string());
    r.meta.spec.family = cut::parse_cut_family(meta.at("cut").at("family").get<std::string>());
    for (const auto& [name, value] : meta.at("cut").at("coefficients").items()) {
      r.meta.spec.coefficients[name] = value.get<double>();
    }
    r.meta.shape = cut::parse_shape_type(meta.at("shape").get<std::string>());
    r.meta.seed = meta.at("seed").get<std::uint64_t>();
    r.meta.volume_ratio = meta.at("volume_ratio").get<double>();
    r.meta.attempts = meta.value("attempts", 0);
    r.pose_a = pose_from_json(meta.at("pose_a"), meta_file.string());
    r.pose_b = pose_from_json(meta.at("pose_b"), meta_file.string());
  } catch (const json::exception& e) {
    throw IoError("malformed " + meta_file.string() + ": " + e.what());
  }

  r.part_a.side = cut::Side::A;
  r.part_b.side = cut::Side::B;
  r.part_a.points = unflatten3(read_f32le(dir / "points_a.f32le"), dir / "points_a.f32le");
  r.part_b.points = unflatten3(read_f32le(dir / "points_b.f32le"), dir / "points_b.f32le");
  r.part_a.normals = unflatten3(read_f32le(dir / "normals_a.f32le"), dir / "normals_a.f32le");
  r.part_b.normals = unflatten3(read_f32le(dir / "normals_b.f32le"), dir / "normals_b.f32le");
  r.sdf_a = unflatten4(read_f32le(dir / "sdf_a.f32le"), dir / "sdf_a.f32le");
  r.sdf_b = unflatten4(read_f32le(dir / "sdf_b.f32le"), dir / "sdf_b.f32le");

  const json& counts = meta.at("counts");
  if (counts.at("points_a").get<std::size_t>() != r.part_a.points.size() ||
      counts.at("points_b").get<std::size_t>() != r.part_b.points.size() ||
      counts.at("sdf_a").get<std::size_t>() != r.sdf_a.records.size() ||
      counts.at("sdf_b").get<std::size_t>() != r.sdf_b.records.size() ||
      r.part_a.normals.size() != r.part_a.points.size() ||
      r.part_b.normals.size() != r.part_b.points.size()) {
    throw IoError("array sizes disagree with meta.json in " + dir.string());
  }
  return r;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& root) {
  json entries = json::array();
  for (const PairEntry& e : manifest.entries) entries.push_back(entry_json(e));
  const json j = {{"version", manifest.version}, {"pairs", entries}};
  fs::create_directories(root);
  const fs::path tmp = root / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, root / "manifest.json");
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path file = root / "manifest.json";
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  DatasetManifest m;
  try {
    const json j = json::parse(in);
    m.version = j.at("version").get<std::string>();
    for (const json& e : j.at("pairs")) m.entries.push_back(entry_from_json(e));
  } catch (const json::exception& e) {
    throw IoError("malformed " + file.string() + ": " + e.what());
  }
  if (m.version != kFormatVersion) throw IoError("unsupported dataset version '" + m.version + "'");
  std::unordered_set<std::string> ids;
  for (const PairEntry& e : m.entries) {
    if (!ids.insert(e.id).second) throw IoError("duplicate pair id '" + e.id + "'");
    if (!fs::exists(root / e.path)) throw IoError("missing pair directory " + (root / e.path).string());
  }
  return m;
}

DatasetManifest make_splits(DatasetManifest manifest, const SplitSpec& spec, std::vector<std::string>* warnings) {
  auto warn = [&](std::string w) {
    if (warnings) warnings->push_back(std::move(w));
  };
  const double fractions[3] = {spec.train, spec.val, spec.test};
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ContractViolation("split fractions must be non-negative");
  }
  if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw ContractViolation("split fractions must sum to 1");
  }
  const std::size_t n = manifest.entries.size();
  if (n < 10) throw ContractViolation("at least 10 pairs are needed to split");

  // Canonical order: by id. Everything below depends only on this order and the seed.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return manifest.entries[a].id < manifest.entries[b].id; });
  for (std::size_t i = 1; i < n; ++i) {
    if (manifest.entries[order[i]].id == manifest.entries[order[i - 1]].id) {
      throw ContractViolation("duplicate pair id '" + manifest.entries[order[i]].id + "'");
    }
  }

  std::vector<std::size_t> held, pool;
  for (std::size_t i : order) {
    const PairEntry& e = manifest.entries[i];
    bool out = false;
    if (spec.mode == SplitMode::UnseenCategory) out = spec.holdout_categories.count(e.category) > 0;
    if (spec.mode == SplitMode::UnseenCut) out = spec.holdout_families.count(e.family) > 0;
    (out ? held : pool).push_back(i);
  }
  if (spec.mode != SplitMode::Standard) {
    if (held.empty()) warn("holdout set is empty for mode " + std::string(to_string(spec.mode)));
    if (pool.empty()) warn("no pairs remain for training in mode " + std::string(to_string(spec.mode)));
  }

  // Stratified ranking: inside each (category, family) stratum the members are shuffled
  // and given evenly spaced keys in (0, 1); sorting all keys and cutting at the global
  // counts spreads every stratum across the splits in proportion.
  std::mt19937_64 rng(spec.seed);
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> strata;
  for (std::size_t i : pool) {
    const PairEntry& e = manifest.entries[i];
    strata[{e.category, static_cast<int>(e.family)}].push_back(i);
  }
  struct Ranked {
    double key;
    double tiebreak;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& [key, members] : strata) {
    if (members.size() < 10) {
      warn("stratum (" + key.first + ", " + std::string(cut::to_string(static_cast<cut::CutFamily>(key.second))) +
           ") has " + std::to_string(members.size()) + " pairs; too few to stratify exactly");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const double offset = unit(rng);
    for (std::size_t r = 0; r < members.size(); ++r) {
      ranked.push_back({(static_cast<double>(r) + offset) / members.size(), unit(rng), members[r]});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    return a.key != b.key ? a.key < b.key : a.tiebreak < b.tiebreak;
  });

  const std::size_t m = ranked.size();
  std::size_t n_train = 0, n_val = 0;
  if (spec.mode == SplitMode::Standard) {
    n_train = static_cast<std::size_t>(std::llround(spec.train * m));
    n_val = std::min(m - n_train, static_cast<std::size_t>(std::llround(spec.val * m)));
  } else {
    const double denom = spec.train + spec.val;
    n_train = denom > 0 ? static_cast<std::size_t>(std::llround(spec.train / denom * m)) : 0;
    n_val = m - n_train;
  }
  for (std::size_t r = 0; r < m; ++r) {
    const Split s = r < n_train ? Split::Train : (r < n_train + n_val ? Split::Val : Split::Test);
    manifest.entries[ranked[r].index].split = s;
  }
  for (std::size_t i : held) manifest.entries[i].split = Split::Test;
  return manifest;
}

std::vector<Vec3> add_noise(const std::vector<Vec3>& cloud, double sigma, cut::Rng& rng) {
  if (!(sigma >= 0.0)) throw ContractViolation("noise sigma must be non-negative");
  if (sigma == 0.0) return cloud;
  std::normal_distribution<double> gauss(0.0, sigma);
  std::vector<Vec3> out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double dx = gauss(rng), dy = gauss(rng), dz = gauss(rng);
    out[i] = cloud[i] + Vec3(dx, dy, dz);
  }
  return out;
}

DatasetStats summarize(const DatasetManifest& manifest) {
  DatasetStats s;
  s.pairs = manifest.entries.size();
  for (const PairEntry& e : manifest.entries) {
    ++s.by_category[e.category];
    ++s.by_family[std::string(cut::to_string(e.family))];
    ++s.by_shape[std::string(cut::to_string(e.shape))];
    ++s.by_split[std::string(to_string(e.split))];
  }
  return s;
}

}  // namespace gsm::data
