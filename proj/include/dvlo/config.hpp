#pragma once

#include "dvlo/geom.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvlo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncoderConfig {
  int channels = 16;  // D (point) and C (image)
  int levels = 4;
  /// Queries per level, coarsest level first (the order the cascade runs).
  std::vector<int> query_counts = {8, 16, 32, 64};
};

struct PseudoImageConfig {
  int h = 16;
  int w = 256;
  double delta_theta = 0.02454369260617026;  // 2 pi / 256
  double delta_phi = 0.02617993877991494;    // 1.5 deg

  CylindricalParams params() const { return {delta_theta, delta_phi, h, w}; }
};

struct FusionConfig {
  int samples_per_query = 4;  // M
  int heads = 4;
  int cameras = 1;  // N_c
  bool enable_global = true;
};

struct PoseConfig {
  int knn = 8;
  int levels = 4;
};

struct TemporalConfig {
  int t_h = 30;
  int ego_dim = 64;
  int heads = 4;
  bool enabled = true;
};

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 1;
  int t_c = 60;
  int t_s = 3;
  std::vector<double> alpha = {1.6, 0.8, 0.4, 0.8};  // layer l = 0 (finest) first
  double beta = 0.8;
  double k_t0 = 0.0;
  double k_q0 = -2.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_decay = 0.8;
  int decay_every = 13;  // epochs
  double lr_floor = 1e-5;
};

struct DataConfig {
  std::string camera = "P2";
};

/// Flat `key = value` configuration. Unknown keys are rejected.
struct Config {
  EncoderConfig encoder;
  PseudoImageConfig pseudo_image;
  FusionConfig fusion;
  PoseConfig pose;
  TemporalConfig temporal;
  TrainConfig train;
  DataConfig data;

  void set(const std::string& key, const std::string& value);
  /// Applies every `key = value` line of a file ('#' starts a comment).
  void load_file(const std::filesystem::path& path);
  /// Parses a `key=value` override.
  void apply_override(const std::string& assignment);
  void validate() const;
  /// Canonical text form, one `key = value` line per key.
  std::string dump() const;

  static std::vector<std::string> keys();
};

}  // namespace dvlo
