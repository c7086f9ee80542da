#pragma once

#include "dvlo/autodiff.hpp"
#include "dvlo/config.hpp"
#include "dvlo/geom.hpp"
#include "dvlo/params.hpp"
#include "dvlo/pose.hpp"

#include <deque>
#include <vector>

namespace dvlo {

/// FIFO of ego features, oldest first. Starts with one zero sentinel.
struct MemoryFeatureBank {
  int capacity = 30;
  int dim = 0;
  std::deque<std::vector<double>> entries;
  std::deque<long> tags;  // frame index per entry, -1 for the sentinel

  static MemoryFeatureBank fresh(int capacity, int dim);
  int size() const { return static_cast<int>(entries.size()); }
};

struct PoseEntry {
  Quaternion q;
  Vec3 t = Vec3::Zero();
};

/// FIFO of refined poses, oldest first. Starts with one all-zero sentinel
/// (zero quaternion, zero translation).
struct MemoryPoseBank {
  int capacity = 30;
  std::deque<PoseEntry> entries;
  std::deque<long> tags;

  static MemoryPoseBank fresh(int capacity);
  int size() const { return static_cast<int>(entries.size()); }
};

void bank_push(MemoryFeatureBank& bank, std::vector<double> entry, long tag = -1);
void bank_push(MemoryPoseBank& bank, const PoseEntry& entry, long tag = -1);

struct TemporalState {
  MemoryFeatureBank mfb;
  MemoryPoseBank mpb;

  static TemporalState fresh(const Config& cfg);
};

struct TemporalEncoding {
  ad::Var q_enc;  // 1 x De
  ad::Var t_enc;  // 1 x De
};

/// Mean of valid cost-volume embeddings, projected to De.
ad::Var ego_feature_init(const CostVolume& cv, const ModelParams& params);

/// Sinusoidal encoding of history index, rows x dim.
ad::Var sinusoidal_encoding(int rows, int dim);

/// One-layer LSTM over the rows of `inputs` from a zero state; returns the
/// final hidden state (1 x hidden). Parameters `<prefix>.{wx,wh,b}` with
/// gate order (input, forget, candidate, output).
ad::Var lstm_final_hidden(const ad::Var& inputs, const ModelParams& params, const std::string& prefix);

TemporalEncoding temporal_encode(const MemoryPoseBank& mpb, const ModelParams& params, const Config& cfg);

/// current + MHCA(current, bank, bank).
ad::Var ego_refine(const ad::Var& current, const MemoryFeatureBank& mfb, const ModelParams& params,
                   const Config& cfg);

/// Initial prior of the coarsest layer.
PoseVar predict_initial_pose(const ad::Var& ego, const TemporalEncoding& enc, const ModelParams& params,
                             const Config& cfg);

/// Final refined pose from the finest layer's estimate.
PoseVar update_refine(const PoseVar& last, const TemporalEncoding& enc, const ModelParams& params);

/// Pushes the refined ego feature and refined pose into both banks.
void step_sequence_state(TemporalState& state, std::vector<double> ego, const RigidMotion& refined, long tag);

void declare_temporal_params(ParamBuilder& b, const Config& cfg);

}  // namespace dvlo
