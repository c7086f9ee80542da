#pragma once

#include "dvlo/autodiff.hpp"
#include "dvlo/config.hpp"
#include "dvlo/dataio.hpp"
#include "dvlo/model.hpp"
#include "dvlo/params.hpp"
#include "dvlo/pose.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvlo {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// ||t_gt - t||_1 exp(-k_t) + k_t + min_s ||q_gt - s q||_2 exp(-k_q) + k_q.
ad::Var layer_loss(const PoseVar& pred, const RigidMotion& gt, const ad::Var& k_t, const ad::Var& k_q);
double layer_loss(const RigidMotion& pred, const RigidMotion& gt, double k_t, double k_q);

/// Same form on the temporally refined output.
ad::Var refined_loss(const PoseVar& pred, const RigidMotion& gt, const ad::Var& k_t, const ad::Var& k_q);
double refined_loss(const RigidMotion& pred, const RigidMotion& gt, double k_t, double k_q);

struct LossBreakdown {
  std::vector<double> layers;  // index = level, 0 finest
  double refined = 0.0;
  double k_t = 0.0;
  double k_q = 0.0;
  double total = 0.0;  // sum_l alpha_l L_l + beta L_re
};

/// Weighted total of one frame.
double weighted_total(const std::vector<double>& layers, double refined, const std::vector<double>& alpha,
                      double beta);

struct FrameLoss {
  ad::Var total;
  LossBreakdown values;
};

/// Loss of one pair output against its ground-truth relative motion. k_t and
/// k_q are read from `loss.k_t` / `loss.k_q`.
FrameLoss frame_loss(const PairOutput& out, const RigidMotion& gt, const ModelParams& params, const Config& cfg);

/// Mean of per-frame totals. Throws on an empty list.
ad::Var collective_average_loss(const std::vector<ad::Var>& frame_totals);
double collective_average_loss(const std::vector<double>& frame_totals);

struct SubClip {
  int sequence = 0;
  int clip = 0;   // index of the clip within the sequence
  int start = 0;  // first frame (pair sample) index in the sequence
};

struct ClipSchedule {
  int t_c = 0;
  int t_s = 0;
  std::vector<SubClip> subclips;

  /// Number of distinct (sequence, clip) pairs.
  int clip_count() const;
};

/// Splits each sequence (given as frame counts) into clips of t_c frames
/// and clips into sub-clips of t_s frames. Trailing partial clips shorter
/// than t_s and sub-clip remainders are dropped.
ClipSchedule make_clips(const std::vector<int>& sequence_lengths, int t_c, int t_s);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<leaf>[<index>]"
  std::vector<std::string> failures;
  int checked = 0;
  bool passed = true;
};

/// Compares reverse-mode gradients of sum(r * f()) for a fixed random r
/// against central differences over the values of `leaves`, in place.
/// Relative error is |a - n| / max(|a|, |n|, 1e-3). When `max_entries` > 0,
/// at most that many seeded entries per leaf are checked.
GradCheckReport grad_check(const std::function<ad::Var()>& f,
                           const std::vector<std::pair<std::string, ad::Var>>& leaves, double h, double tol,
                           std::uint64_t seed = 0, int max_entries = 0);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;

  static AdamState fresh(const ModelParams& params);
};

/// One Adam update of every parameter from its current gradient.
void adam_step(ModelParams& params, AdamState& state, double lr, const TrainConfig& tc);

/// Learning rate of epoch `epoch` (0-based).
double learning_rate(const TrainConfig& tc, int epoch);

/// Ground-truth relative motions: element i maps frame i into frame i+1.
std::vector<RigidMotion> relative_ground_truth(const std::vector<RigidMotion>& poses);

struct StepResult {
  double cal = 0.0;
  std::vector<LossBreakdown> frames;
  std::vector<RigidMotion> refined;  // per frame
};

/// Forward over `count` consecutive pair samples starting at `start` with
/// the banks in `state`, averages their losses, and (if lr is given) applies
/// one optimizer update. `prepared` caches per-frame preprocessing.
StepResult train_step(const SequenceBundle& seq, const std::vector<PreparedFrame>& prepared,
                      const std::vector<RigidMotion>& gt_rel, int start, int count, TemporalState& state,
                      ModelParams& params, AdamState& adam, double lr, const Config& cfg, bool update = true);

struct TrainState {
  ModelParams params;
  AdamState adam;
  int epoch = 0;  // completed epochs
};

TrainState fresh_train_state(const Config& cfg, std::uint64_t seed);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  int sequence = 0;
  int start = 0;
  double lr = 0.0;
  double cal = 0.0;
};

/// Runs `epochs` further epochs over every sub-clip of `seqs` in order.
/// Banks reset at each clip start and persist across its sub-clips.
void train(const std::vector<SequenceBundle>& seqs, TrainState& st, const Config& cfg, int epochs,
           const std::function<void(const StepRecord&)>& on_step = {});

/// Full-precision parameters plus optimizer moments, for exact resumption.
void save_train_state(const TrainState& st, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path, const Config& cfg);

}  // namespace dvlo
