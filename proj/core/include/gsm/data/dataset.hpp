#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gsm/cut/generator.hpp"

namespace gsm::data {

namespace fs = std::filesystem;

inline constexpr const char* kFormatVersion = "gsm-v1";

enum class Split { Unassigned, Train, Val, Test };
std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct PairEntry {
  std::string id;
  std::string category;
  cut::CutFamily family = cut::CutFamily::Planar;
  cut::ShapeType shape = cut::ShapeType::Solid;
  std::string path;  // relative to the dataset root
  std::uint64_t seed = 0;
  Split split = Split::Unassigned;
};

struct DatasetManifest {
  std::string version = kFormatVersion;
  std::vector<PairEntry> entries;

  const PairEntry& find(const std::string& id) const;
  std::vector<const PairEntry*> in_split(Split split) const;
};

/// Writes `pairs/<id>/` under `root` and returns the id. The id is derived from the
/// metadata when `id` is empty; an existing directory is never overwritten.
std::string write_pair(const cut::ShapePairRecord& record, const fs::path& root, std::string id = {});

/// Reads a pair written by write_pair. Only the persisted fields are populated.
cut::ShapePairRecord read_pair(const fs::path& root, const std::string& id);

void write_manifest(const DatasetManifest& manifest, const fs::path& root);
/// Reads `manifest.json` and checks version, unique ids and that every pair path exists.
DatasetManifest read_manifest(const fs::path& root);
PairEntry entry_for(const cut::ShapePairRecord& record, const std::string& id);

/// Raw little-endian float32 array files.
void write_f32le(const fs::path& file, const std::vector<float>& values);
std::vector<float> read_f32le(const fs::path& file);

enum class SplitMode { Standard, UnseenCategory, UnseenCut };
std::string_view to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view name);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::Standard;
  std::set<std::string> holdout_categories{"box", "bag"};
  std::set<cut::CutFamily> holdout_families{cut::CutFamily::Parabolic};
};

/// Assigns every entry to exactly one split. The result depends only on the entry ids,
/// their attributes and the seed, not on manifest order. Strata are (category, family);
/// the global counts are exact (train and val rounded, test takes the rest). In the
/// holdout modes the held-out pairs form the test set and the remainder is divided
/// between train and val in proportion. Problems that do not prevent an assignment
/// (tiny or empty strata) are appended to `warnings`.
DatasetManifest make_splits(DatasetManifest manifest, const SplitSpec& spec,
                            std::vector<std::string>* warnings = nullptr);

/// Adds independent isotropic Gaussian noise to every point; order and count preserved.
std::vector<Vec3> add_noise(const std::vector<Vec3>& cloud, double sigma, cut::Rng& rng);

struct DatasetStats {
  std::size_t pairs = 0;
  std::map<std::string, std::size_t> by_category;
  std::map<std::string, std::size_t> by_family;
  std::map<std::string, std::size_t> by_shape;
  std::map<std::string, std::size_t> by_split;
};
DatasetStats summarize(const DatasetManifest& manifest);

}  // namespace gsm::data
