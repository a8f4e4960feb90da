#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gsm/ad/tensor.hpp"

namespace gsm::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Added to the gradient as weight_decay * param before the moment update.
  double weight_decay = 1e-6;
  /// Optional per-step schedule lr_t = lr / (1 + lr_decay * t); 0 disables it.
  double lr_decay = 0.0;
};

/// Adam with bias correction over a fixed list of parameters.
class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, AdamOptions options = {});

  /// Applies one update from the accumulated parameter gradients. Throws
  /// TrainingDivergence (before touching anything) if any gradient is non-finite.
  void step();
  void zero_grad();

  long steps() const { return t_; }
  double current_lr() const;
  const AdamOptions& options() const { return options_; }
  const std::vector<Parameter*>& params() const { return params_; }

  /// Moment buffers and step counter keyed as `<prefix>m/<name>`, `<prefix>v/<name>`, `<prefix>t`.
  std::map<std::string, Tensor> state(const std::string& prefix) const;
  void load_state(const std::map<std::string, Tensor>& tensors, const std::string& prefix);

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

/// Writes `<prefix>.bin` (concatenated little-endian f64 arrays) and `<prefix>.json`
/// (name -> shape, offset, count, plus free-form metadata).
void save_checkpoint(const std::filesystem::path& prefix, const std::map<std::string, Tensor>& tensors,
                     const std::string& metadata_json = "{}");
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& prefix,
                                              std::string* metadata_json = nullptr);

/// Values of every parameter, keyed by name.
std::map<std::string, Tensor> snapshot(const ParameterSet& params, const std::string& prefix = "");
/// Copies stored values back; every parameter must be present with a matching shape.
void restore(ParameterSet& params, const std::map<std::string, Tensor>& tensors, const std::string& prefix = "");

}  // namespace gsm::ad
