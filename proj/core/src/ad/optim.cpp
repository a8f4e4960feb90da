#include "gsm/ad/optim.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "gsm/error.hpp"

namespace gsm::ad {

Adam::Adam(std::vector<Parameter*> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (Parameter* p : params_) {
    if (p == nullptr) throw ContractViolation("null parameter given to Adam");
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

double Adam::current_lr() const { return options_.lr / (1.0 + options_.lr_decay * static_cast<double>(t_)); }

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  for (Parameter* p : params_) {
    if (p->grad.shape != p->value.shape) p->zero_grad();
    if (!p->grad.all_finite()) throw TrainingDivergence("non-finite gradient in parameter '" + p->name + "'");
  }
  const double lr = current_lr();
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    auto& m = m_[k].data;
    auto& v = v_[k].data;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i] + options_.weight_decay * p.value.data[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
    if (!p.value.all_finite()) throw TrainingDivergence("non-finite value in parameter '" + p.name + "' after step");
  }
}

std::map<std::string, Tensor> Adam::state(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out[prefix + "m/" + params_[k]->name] = m_[k];
    out[prefix + "v/" + params_[k]->name] = v_[k];
  }
  out[prefix + "t"] = Tensor::scalar(static_cast<double>(t_));
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  auto fetch = [&](const std::string& key, const std::vector<int>& shape) -> const Tensor& {
    const auto it = tensors.find(key);
    if (it == tensors.end()) throw IoError("optimizer state is missing '" + key + "'");
    if (it->second.shape != shape) throw IoError("optimizer state '" + key + "' has the wrong shape");
    return it->second;
  };
  for (std::size_t k = 0; k < params_.size(); ++k) {
    m_[k] = fetch(prefix + "m/" + params_[k]->name, params_[k]->value.shape);
    v_[k] = fetch(prefix + "v/" + params_[k]->name, params_[k]->value.shape);
  }
  t_ = static_cast<long>(fetch(prefix + "t", {}).item());
}

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& prefix, const std::map<std::string, Tensor>& tensors,
                     const std::string& metadata_json) {
  nlohmann::json index;
  index["format"] = "gsm-ckpt-v1";
  try {
    index["metadata"] = nlohmann::json::parse(metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  nlohmann::json entries = nlohmann::json::array();
  std::vector<std::uint64_t> words;
  for (const auto& [name, t] : tensors) {
    if (t.data.size() != shape_size(t.shape)) throw ContractViolation("inconsistent tensor '" + name + "'");
    entries.push_back({{"name", name}, {"shape", t.shape}, {"offset", words.size()}, {"count", t.data.size()}});
    for (double v : t.data) words.push_back(to_little(std::bit_cast<std::uint64_t>(v)));
  }
  index["tensors"] = entries;

  std::filesystem::path bin = prefix, json_file = prefix;
  bin += ".bin";
  json_file += ".json";
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  {
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + bin.string());
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(8 * words.size()));
    if (!out) throw IoError("write failed for " + bin.string());
  }
  std::ofstream out(json_file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + json_file.string());
  out << index.dump(1) << '\n';
  if (!out) throw IoError("write failed for " + json_file.string());
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& prefix, std::string* metadata_json) {
  std::filesystem::path bin = prefix, json_file = prefix;
  bin += ".bin";
  json_file += ".json";
  std::ifstream jin(json_file);
  if (!jin) throw IoError("cannot open " + json_file.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(jin);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + json_file.string() + ": " + e.what());
  }
  if (index.value("format", std::string()) != "gsm-ckpt-v1") throw IoError("unknown checkpoint format");

  std::ifstream bin_in(bin, std::ios::binary);
  if (!bin_in) throw IoError("cannot open " + bin.string());
  bin_in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(bin_in.tellg());
  bin_in.seekg(0);
  if (bytes % 8 != 0) throw IoError(bin.string() + " is truncated");
  std::vector<std::uint64_t> words(bytes / 8);
  bin_in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));

  std::map<std::string, Tensor> out;
  try {
    for (const auto& e : index.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<int>>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != shape_size(shape) || offset + count > words.size()) {
        throw IoError("checkpoint entry '" + e.at("name").get<std::string>() + "' is out of bounds");
      }
      std::vector<double> data(count);
      for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<double>(to_little(words[offset + i]));
      out.emplace(e.at("name").get<std::string>(), Tensor(shape, std::move(data)));
    }
    if (metadata_json) *metadata_json = index.at("metadata").dump();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + json_file.string() + ": " + e.what());
  }
  return out;
}

std::map<std::string, Tensor> snapshot(const ParameterSet& params, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const Parameter* p : params.all()) out[prefix + p->name] = p->value;
  return out;
}

void restore(ParameterSet& params, const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  for (Parameter* p : params.all()) {
    const auto it = tensors.find(prefix + p->name);
    if (it == tensors.end()) throw IoError("checkpoint is missing parameter '" + p->name + "'");
    if (it->second.shape != p->value.shape) {
      throw IoError("checkpoint parameter '" + p->name + "' has shape " + shape_string(it->second.shape) +
                    ", expected " + shape_string(p->value.shape));
    }
    p->value = it->second;
  }
}

}  // namespace gsm::ad
