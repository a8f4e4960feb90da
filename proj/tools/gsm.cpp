#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gsm/cut/generator.hpp"
#include "gsm/data/dataset.hpp"
#include "gsm/error.hpp"
#include "gsm/eval/experiment.hpp"
#include "gsm/mesh/bvh.hpp"
#include "gsm/mesh/io.hpp"
#include "gsm/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace gsm;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct MeshFile {
  fs::path path;
  std::string category;
};

// Files directly given use their stem as category; files found under a directory use the
// name of their parent directory when nested, else the stem.
std::vector<MeshFile> collect_meshes(const std::vector<std::string>& inputs) {
  auto is_mesh = [](const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".off" || ext == ".stl";
  };
  std::vector<MeshFile> out;
  for (const auto& in : inputs) {
    const fs::path root(in);
    if (fs::is_directory(root)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && is_mesh(e.path())) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      for (const auto& p : found) {
        const bool nested = p.parent_path() != root;
        out.push_back({p, nested ? p.parent_path().filename().string() : p.stem().string()});
      }
    } else if (fs::is_regular_file(root) && is_mesh(root)) {
      out.push_back({root, root.stem().string()});
    } else {
      throw IoError("not a mesh file or directory: " + in);
    }
  }
  if (out.empty()) throw ContractViolation("no .off or .stl meshes found");
  return out;
}

std::uint64_t pair_seed(std::uint64_t seed, std::uint64_t mesh, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(mesh), static_cast<std::uint32_t>(index)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

void print_rows(const std::vector<eval::MetricsRecord>& rows) {
  std::cout << eval::csv_header() << '\n';
  for (const auto& r : rows) std::cout << eval::csv_row(r) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric shape mating: dataset generation, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed")->capture_default_str();

  // generate
  auto* gen = app.add_subcommand("generate", "Cut meshes into mating pairs and write a dataset");
  std::vector<std::string> mesh_inputs;
  std::string families_arg = "planar,sine,parabolic,square,pulse";
  std::string shape_arg = "solid";
  std::string gen_out;
  int pairs_per_mesh = 10;
  cut::GeneratorOptions gen_opt;
  gen->add_option("--meshes", mesh_inputs, "Mesh files or directories (.off, .stl)")->required();
  gen->add_option("--families", families_arg, "Comma-separated cut families")->capture_default_str();
  gen->add_option("--shape-type", shape_arg, "solid or shell")
      ->check(CLI::IsMember({"solid", "shell"}))
      ->capture_default_str();
  gen->add_option("--pairs-per-mesh", pairs_per_mesh, "Pairs drawn from each mesh")->capture_default_str();
  gen->add_option("--points-per-part", gen_opt.points_per_part)->capture_default_str();
  gen->add_option("--sdf-samples", gen_opt.sdf_samples, "SDF samples per part")->capture_default_str();
  gen->add_option("--dense-points", gen_opt.dense_points)->capture_default_str();
  gen->add_option("--volume-samples", gen_opt.volume_samples)->capture_default_str();
  gen->add_option("--out", gen_out, "Dataset directory")->required();

  // split
  auto* split = app.add_subcommand("split", "Assign train/val/test splits in a dataset manifest");
  std::string split_data, split_mode = "standard";
  std::string holdout_categories = "box,bag";
  split->add_option("--data", split_data, "Dataset directory")->required();
  split->add_option("--mode", split_mode, "standard, unseen-category or unseen-cut")
      ->check(CLI::IsMember({"standard", "unseen-category", "unseen-cut"}))
      ->capture_default_str();
  split->add_option("--holdout-categories", holdout_categories)->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "Train the shape-mating model");
  std::string train_data, train_config, train_out;
  double train_noise = -1.0;
  long train_steps = 0;
  int toy = 0;
  trn->add_option("--data", train_data, "Split dataset directory");
  trn->add_option("--toy", toy, "Train on this many generated toy pairs instead of --data");
  trn->add_option("--config", train_config, "Training config JSON");
  trn->add_option("--out", train_out, "Output directory (resumed when it holds a checkpoint)")->required();
  trn->add_option("--noise-sigma", train_noise, "Gaussian noise on training inputs");
  trn->add_option("--steps", train_steps, "Override the number of generator steps");

  // eval and baseline share their options
  struct EvalArgs {
    std::string data, out, experiment = "standard", methods;
    std::string model;
    double noise = 0.05;
    int points = 1024;
    double sparse_p = 0.4;
    int icp_iters = 200;
  };
  EvalArgs ev, bl;
  ev.methods = "nsm";
  bl.methods = "identity,icp-point,icp-plane,sparse-icp";
  auto add_eval_options = [](CLI::App* cmd, EvalArgs& a) {
    cmd->add_option("--data", a.data, "Dataset directory")->required();
    cmd->add_option("--experiment", a.experiment, "standard, unseen-category, unseen-cut or noisy")
        ->check(CLI::IsMember({"standard", "unseen-category", "unseen-cut", "noisy"}))
        ->capture_default_str();
    cmd->add_option("--methods", a.methods, "Comma-separated methods")->capture_default_str();
    cmd->add_option("--noise-sigma", a.noise, "Noise for the noisy experiment")->capture_default_str();
    cmd->add_option("--points-per-part", a.points)->capture_default_str();
    cmd->add_option("--sparse-p", a.sparse_p)->capture_default_str();
    cmd->add_option("--icp-iters", a.icp_iters)->capture_default_str();
    cmd->add_option("--out", a.out, "CSV file (stdout when omitted)");
  };
  auto* evl = app.add_subcommand("eval", "Evaluate a trained model (and optionally baselines)");
  add_eval_options(evl, ev);
  evl->add_option("--model", ev.model, "Model checkpoint prefix (e.g. run/best)");
  auto* base = app.add_subcommand("baseline", "Evaluate registration baselines");
  add_eval_options(base, bl);

  // stats
  auto* stats = app.add_subcommand("stats", "Summarize a dataset manifest");
  std::string stats_data;
  stats->add_option("--data", stats_data, "Dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      std::vector<cut::CutFamily> families;
      for (const auto& f : split_list(families_arg)) families.push_back(cut::parse_cut_family(f));
      if (families.empty()) throw ContractViolation("--families is empty");
      if (pairs_per_mesh < 1) throw ContractViolation("--pairs-per-mesh must be positive");
      const cut::ShapeType shape = cut::parse_shape_type(shape_arg);
      const auto meshes = collect_meshes(mesh_inputs);
      const fs::path root(gen_out);
      data::DatasetManifest manifest;
      if (fs::exists(root / "manifest.json")) manifest = data::read_manifest(root);
      std::set<std::string> ids;
      for (const auto& e : manifest.entries) ids.insert(e.id);
      int written = 0, failed = 0;
      for (std::size_t m = 0; m < meshes.size(); ++m) {
        const mesh::TriMesh tri = mesh::read_mesh(meshes[m].path);
        const mesh::Bvh bvh(tri);
        for (int i = 0; i < pairs_per_mesh; ++i) {
          const cut::CutFamily family = families[static_cast<std::size_t>(i) % families.size()];
          const std::uint64_t s = pair_seed(seed, m, static_cast<std::uint64_t>(i));
          cut::Rng rng(s);
          try {
            auto record = cut::generate_pair(tri, bvh, cut::sample_cut_spec(family, rng), shape, rng, gen_opt);
            record.meta.category = meshes[m].category;
            record.meta.source_mesh_id = meshes[m].path.stem().string();
            record.meta.seed = s;
            const std::string id = data::write_pair(record, root);
            if (!ids.insert(id).second) throw IoError("duplicate pair id " + id);
            manifest.entries.push_back(data::entry_for(record, id));
            ++written;
          } catch (const NoValidCut& e) {
            std::cerr << "skipped " << meshes[m].path.string() << " #" << i << ": " << e.what() << '\n';
            ++failed;
          }
        }
      }
      data::write_manifest(manifest, root);
      std::cerr << "wrote " << written << " pairs (" << failed << " skipped) to " << root.string() << '\n';
    } else if (split->parsed()) {
      data::SplitSpec spec;
      spec.seed = seed;
      spec.mode = data::parse_split_mode(split_mode);
      const auto cats = split_list(holdout_categories);
      spec.holdout_categories = std::set<std::string>(cats.begin(), cats.end());
      std::vector<std::string> warnings;
      const auto manifest = data::make_splits(data::read_manifest(split_data), spec, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      data::write_manifest(manifest, split_data);
      const auto s = data::summarize(manifest);
      for (const auto& [name, n] : s.by_split) std::cerr << name << ": " << n << '\n';
    } else if (trn->parsed()) {
      train::TrainConfig config = train_config.empty() ? train::TrainConfig{} : train::load_train_config(train_config);
      if (app.count("--seed")) config.seed = seed;
      if (train_noise >= 0.0) config.noise_sigma = train_noise;
      if (train_steps > 0) {
        config.steps = train_steps;
        config.epochs = 0;
      }
      std::vector<train::TrainPair> train_set, val_set;
      if (toy > 0) {
        train_set = train::toy_pairs(toy, config.points_per_part, config.seed);
        val_set = train::randomly_posed(train_set, config.seed);
      } else {
        if (train_data.empty()) throw ContractViolation("train needs --data or --toy");
        const auto manifest = data::read_manifest(train_data);
        train_set = train::load_split(train_data, manifest, data::Split::Train, config.points_per_part, config.seed);
        val_set = train::load_split(train_data, manifest, data::Split::Val, config.points_per_part, config.seed);
        if (train_set.empty()) throw ContractViolation("dataset has no train split; run `gsm split` first");
        val_set = train::randomly_posed(val_set, config.seed);
      }
      train::Trainer trainer(config, std::move(train_set), std::move(val_set));
      const auto result = trainer.fit(train_out);
      std::cerr << "trained to step " << result.steps;
      if (result.best_val) std::cerr << ", best val MAE(R) " << result.best_val->mae_r << " at step " << result.best_step;
      std::cerr << '\n';
    } else if (evl->parsed() || base->parsed()) {
      const EvalArgs& a = evl->parsed() ? ev : bl;
      eval::ExperimentOptions o;
      o.kind = eval::parse_experiment_kind(a.experiment);
      o.split.seed = seed;
      o.pose_seed = seed;
      o.points_per_part = a.points;
      o.noise_sigma = a.noise;
      o.baseline.sparse_p = a.sparse_p;
      o.baseline.icp.max_iters = a.icp_iters;
      const auto methods = split_list(a.methods);
      std::optional<nsm::NsmModel> model;
      if (std::find(methods.begin(), methods.end(), "nsm") != methods.end()) {
        if (!evl->parsed()) throw ContractViolation("baseline does not evaluate nsm; use eval --model");
        if (a.model.empty()) throw ContractViolation("method nsm needs --model");
        model.emplace(train::load_model(a.model));
      }
      const auto rows = eval::run_experiment(a.data, methods, o, model ? &*model : nullptr);
      if (a.out.empty()) {
        print_rows(rows);
      } else {
        eval::write_csv(a.out, rows);
      }
    } else if (stats->parsed()) {
      const auto s = data::summarize(data::read_manifest(stats_data));
      const nlohmann::json j = {{"pairs", s.pairs},
                                {"by_category", s.by_category},
                                {"by_family", s.by_family},
                                {"by_shape", s.by_shape},
                                {"by_split", s.by_split}};
      std::cout << j.dump(2) << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
