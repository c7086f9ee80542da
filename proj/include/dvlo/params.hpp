#pragma once

#include "dvlo/autodiff.hpp"
#include "dvlo/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace dvlo {

/// Every learned tensor of the model, in a stable declaration order.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    ad::Var var;
  };

  void add(const std::string& name, int rows, int cols, std::vector<double> values);
  const ad::Var& get(const std::string& name) const;
  ad::Var& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t total_count() const;

  /// Deep copy with fresh leaf nodes.
  ModelParams clone() const;
  /// True when names, shapes and values match bitwise.
  bool identical(const ModelParams& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Seeded generator for parameter initialization; portable across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Helper the modules use to declare their weights.
class ParamBuilder {
 public:
  ParamBuilder(ModelParams& out, Rng& rng) : out_(out), rng_(rng) {}

  /// Glorot-uniform weight, scaled by `gain`.
  void xavier(const std::string& name, int in, int out, double gain = 1.0);
  void zeros(const std::string& name, int rows, int cols);
  void values(const std::string& name, int rows, int cols, std::vector<double> v);
  /// Weight `name.w` (in x out, Glorot) plus zero bias `name.b` (1 x out).
  void linear(const std::string& name, int in, int out, double gain = 1.0);

 private:
  ModelParams& out_;
  Rng& rng_;
};

/// Declares and initializes every weight of the model for `cfg`.
ModelParams init_params(const Config& cfg, std::uint64_t seed);

// Tensor files: `<path>` holds raw little-endian tensors back to back and
// `<path>.json` the manifest {format, version, dtype, tensors:[{name, shape,
// offset}], meta}. Model checkpoints use dtype f32; optimizer state uses f64.
struct NamedTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
};

enum class TensorDtype { kF32, kF64 };

void write_tensor_file(const std::filesystem::path& path, TensorDtype dtype,
                       const std::vector<NamedTensor>& tensors, const nlohmann::json& meta = {});
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
/// Loads a checkpoint whose names and shapes must match init_params(cfg).
ModelParams load_checkpoint(const std::filesystem::path& path, const Config& cfg);
/// Overwrites values of `params` from tensors with matching names and shapes.
void assign_tensors(ModelParams& params, const std::vector<NamedTensor>& tensors, const std::string& prefix = "");

}  // namespace dvlo
