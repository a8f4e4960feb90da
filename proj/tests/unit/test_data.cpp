#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include <gtest/gtest.h>

#include "gsm/data/dataset.hpp"
#include "gsm/error.hpp"
#include "gsm/mesh/primitives.hpp"

namespace gsm::data {
namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("gsm_test_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const cut::ShapePairRecord& sample_record() {
  static const cut::ShapePairRecord record = [] {
    const mesh::TriMesh cube = mesh::make_cube();
    const mesh::Bvh bvh(cube);
    cut::Rng rng(5);
    cut::GeneratorOptions opt;
    opt.dense_points = 20000;
    auto r = cut::generate_solid_pair(cube, bvh, cut::sample_cut_spec(cut::CutFamily::Sine, rng), rng, opt);
    r.meta.category = "cube";
    r.meta.seed = 5;
    return r;
  }();
  return record;
}

std::vector<float> as_floats(const std::vector<Vec3>& v) {
  std::vector<float> out;
  for (const Vec3& p : v) {
    for (int k = 0; k < 3; ++k) out.push_back(static_cast<float>(p[k]));
  }
  return out;
}

TEST(PairIo, RoundTripIsBitExact) {
  TempDir dir;
  const auto& rec = sample_record();
  const std::string id = write_pair(rec, dir.path());
  const fs::path pair_dir = dir.path() / "pairs" / id;
  EXPECT_EQ(fs::file_size(pair_dir / "points_a.f32le"), 12288u);
  EXPECT_EQ(fs::file_size(pair_dir / "points_b.f32le"), 12288u);
  EXPECT_EQ(fs::file_size(pair_dir / "normals_a.f32le"), 12288u);
  EXPECT_EQ(fs::file_size(pair_dir / "sdf_a.f32le"), 40000u * 4u * 4u);

  const auto back = read_pair(dir.path(), id);
  EXPECT_EQ(as_floats(back.part_a.points), as_floats(rec.part_a.points));
  EXPECT_EQ(as_floats(back.part_b.normals), as_floats(rec.part_b.normals));
  ASSERT_EQ(back.sdf_b.records.size(), rec.sdf_b.records.size());
  for (std::size_t i = 0; i < rec.sdf_b.records.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      ASSERT_EQ(static_cast<float>(back.sdf_b.records[i][k]), static_cast<float>(rec.sdf_b.records[i][k]));
    }
  }
  EXPECT_EQ(back.pose_a.quaternion, rec.pose_a.quaternion);
  EXPECT_EQ(back.pose_b.translation, rec.pose_b.translation);
  EXPECT_EQ(back.meta.spec.coefficients, rec.meta.spec.coefficients);
  EXPECT_EQ(back.meta.spec.family, cut::CutFamily::Sine);
  EXPECT_EQ(back.meta.volume_ratio, rec.meta.volume_ratio);
  EXPECT_NEAR(back.pose_a.quaternion.norm(), 1.0, 1e-9);

  // A second write of what was read produces identical bytes.
  TempDir again;
  const std::string id2 = write_pair(back, again.path(), id);
  for (const char* name : {"points_a.f32le", "points_b.f32le", "normals_a.f32le", "normals_b.f32le",
                           "sdf_a.f32le", "sdf_b.f32le", "meta.json"}) {
    EXPECT_EQ(file_bytes(pair_dir / name), file_bytes(again.path() / "pairs" / id2 / name)) << name;
  }
}

TEST(PairIo, IdsNeverCollide) {
  TempDir dir;
  const std::string a = write_pair(sample_record(), dir.path());
  const std::string b = write_pair(sample_record(), dir.path());
  EXPECT_NE(a, b);
  EXPECT_THROW(write_pair(sample_record(), dir.path(), a), IoError);
}

TEST(PairIo, RejectsNonFiniteValues) {
  TempDir dir;
  auto rec = sample_record();
  rec.part_b.points[17].y() = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(write_pair(rec, dir.path(), "bad"), ContractViolation);
  EXPECT_FALSE(fs::exists(dir.path() / "pairs" / "bad"));
  rec = sample_record();
  rec.sdf_a.records[3][3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(write_pair(rec, dir.path(), "bad"), ContractViolation);
}

TEST(PairIo, ReadValidation) {
  TempDir dir;
  const std::string id = write_pair(sample_record(), dir.path());
  const fs::path meta = dir.path() / "pairs" / id / "meta.json";
  std::string text = file_bytes(meta);
  const auto pos = text.find("\"quaternion\"");
  ASSERT_NE(pos, std::string::npos);
  const auto open = text.find('[', pos);
  const auto close = text.find(']', open);
  text.replace(open, close - open + 1, "[1.0, 0.1, 0.0, 0.0]");
  std::ofstream(meta) << text;
  EXPECT_THROW(read_pair(dir.path(), id), IoError);
  EXPECT_THROW(read_pair(dir.path(), "missing"), IoError);

  TempDir other;
  const std::string id2 = write_pair(sample_record(), other.path());
  fs::resize_file(other.path() / "pairs" / id2 / "points_a.f32le", 12284);
  EXPECT_THROW(read_pair(other.path(), id2), IoError);
}

TEST(Manifest, RoundTripAndValidation) {
  TempDir dir;
  DatasetManifest m;
  const std::string id = write_pair(sample_record(), dir.path());
  m.entries.push_back(entry_for(sample_record(), id));
  m.entries.back().split = Split::Val;
  write_manifest(m, dir.path());
  const DatasetManifest back = read_manifest(dir.path());
  EXPECT_EQ(back.version, "gsm-v1");
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(back.entries[0].id, id);
  EXPECT_EQ(back.entries[0].category, "cube");
  EXPECT_EQ(back.entries[0].family, cut::CutFamily::Sine);
  EXPECT_EQ(back.entries[0].split, Split::Val);
  EXPECT_EQ(back.entries[0].seed, 5u);

  m.entries.push_back(m.entries[0]);
  write_manifest(m, dir.path());
  EXPECT_THROW(read_manifest(dir.path()), IoError);
  m.entries.pop_back();
  m.entries[0].path = "pairs/nowhere";
  write_manifest(m, dir.path());
  EXPECT_THROW(read_manifest(dir.path()), IoError);
}

DatasetManifest synthetic_manifest(const std::vector<std::string>& categories, int per_stratum) {
  DatasetManifest m;
  for (const auto& c : categories) {
    for (cut::CutFamily f : cut::all_cut_families()) {
      for (int i = 0; i < per_stratum; ++i) {
        PairEntry e;
        e.category = c;
        e.family = f;
        e.id = c + "-" + std::string(cut::to_string(f)) + "-" + std::to_string(i);
        e.path = "pairs/" + e.id;
        m.entries.push_back(e);
      }
    }
  }
  return m;
}

TEST(Splits, HundredPairsGiveExactCountsPerStratum) {
  const DatasetManifest m = make_splits(synthetic_manifest({"mug", "vase"}, 10), SplitSpec{});
  EXPECT_EQ(m.in_split(Split::Train).size(), 80u);
  EXPECT_EQ(m.in_split(Split::Val).size(), 10u);
  EXPECT_EQ(m.in_split(Split::Test).size(), 10u);
  EXPECT_TRUE(m.in_split(Split::Unassigned).empty());
  std::map<std::pair<std::string, int>, std::array<int, 4>> per;
  for (const auto& e : m.entries) per[{e.category, static_cast<int>(e.family)}][static_cast<int>(e.split)]++;
  for (const auto& [key, counts] : per) {
    EXPECT_EQ(counts[1], 8);
    EXPECT_EQ(counts[2], 1);
    EXPECT_EQ(counts[3], 1);
  }
}

TEST(Splits, PureFunctionOfIdsAndSeed) {
  const DatasetManifest base = synthetic_manifest({"mug", "vase", "box"}, 7);
  SplitSpec spec;
  spec.seed = 99;
  const DatasetManifest a = make_splits(base, spec);
  DatasetManifest shuffled = base;
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.entries.begin(), shuffled.entries.end(), rng);
  const DatasetManifest b = make_splits(shuffled, spec);
  std::map<std::string, Split> sa, sb;
  for (const auto& e : a.entries) sa[e.id] = e.split;
  for (const auto& e : b.entries) sb[e.id] = e.split;
  EXPECT_EQ(sa, sb);
  spec.seed = 100;
  std::map<std::string, Split> sc;
  for (const auto& e : make_splits(base, spec).entries) sc[e.id] = e.split;
  EXPECT_NE(sa, sc);
}

TEST(Splits, UnseenCutHoldsOutParabolic) {
  SplitSpec spec;
  spec.mode = SplitMode::UnseenCut;
  const DatasetManifest m = make_splits(synthetic_manifest({"mug", "vase"}, 10), spec);
  for (const auto& e : m.entries) EXPECT_EQ(e.split == Split::Test, e.family == cut::CutFamily::Parabolic);
  EXPECT_EQ(m.in_split(Split::Test).size(), 20u);
  EXPECT_EQ(m.in_split(Split::Train).size(), 71u);
  EXPECT_EQ(m.in_split(Split::Val).size(), 9u);
}

TEST(Splits, UnseenCategoryHoldsOutBoxAndBag) {
  SplitSpec spec;
  spec.mode = SplitMode::UnseenCategory;
  const DatasetManifest m = make_splits(synthetic_manifest({"mug", "box", "bag", "vase"}, 3), spec);
  for (const auto& e : m.entries) {
    EXPECT_EQ(e.split == Split::Test, e.category == "box" || e.category == "bag");
  }
}

TEST(Splits, WarnsOnSmallStrataAndRejectsTinyDatasets) {
  std::vector<std::string> warnings;
  const DatasetManifest m = make_splits(synthetic_manifest({"mug"}, 3), SplitSpec{}, &warnings);
  EXPECT_EQ(warnings.size(), 5u);
  EXPECT_EQ(m.in_split(Split::Train).size(), 12u);
  SplitSpec spec;
  spec.mode = SplitMode::UnseenCategory;
  warnings.clear();
  make_splits(synthetic_manifest({"mug"}, 3), spec, &warnings);
  EXPECT_FALSE(warnings.empty());
  DatasetManifest tiny = synthetic_manifest({"mug"}, 1);
  EXPECT_THROW(make_splits(tiny, SplitSpec{}), ContractViolation);
  SplitSpec bad;
  bad.train = 0.9;
  EXPECT_THROW(make_splits(synthetic_manifest({"mug"}, 3), bad), ContractViolation);
}

TEST(Noise, ZeroSigmaIsIdentity) {
  cut::Rng rng(1);
  const std::vector<Vec3> cloud = {Vec3(1, 2, 3), Vec3(-1, 0.5, 0)};
  EXPECT_EQ(add_noise(cloud, 0.0, rng), cloud);
  EXPECT_THROW(add_noise(cloud, -0.1, rng), ContractViolation);
}

TEST(Noise, EstimatedStdAndMean) {
  cut::Rng rng(12);
  const std::size_t n = 1000000;
  std::vector<Vec3> cloud(n, Vec3(0.3, -0.2, 0.1));
  const auto noisy = add_noise(cloud, 0.05, rng);
  ASSERT_EQ(noisy.size(), n);
  Vec3 mean = Vec3::Zero(), sq = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = noisy[i] - cloud[i];
    mean += d;
    sq += d.cwiseProduct(d);
  }
  mean /= static_cast<double>(n);
  const Vec3 var = sq / static_cast<double>(n) - mean.cwiseProduct(mean);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(std::sqrt(var[k]), 0.05, 0.001);
    EXPECT_LT(std::abs(mean[k]), 3 * 0.05 / std::sqrt(static_cast<double>(n)));
  }
}

TEST(Stats, CountsByAttribute) {
  const DatasetManifest m = make_splits(synthetic_manifest({"mug", "vase"}, 10), SplitSpec{});
  const DatasetStats s = summarize(m);
  EXPECT_EQ(s.pairs, 100u);
  EXPECT_EQ(s.by_category.at("mug"), 50u);
  EXPECT_EQ(s.by_family.at("parabolic"), 20u);
  EXPECT_EQ(s.by_split.at("train"), 80u);
}

}  // namespace
}  // namespace gsm::data
