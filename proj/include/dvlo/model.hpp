#pragma once

// Full per-pair forward pass: encoders, fusion, temporal prior, cascade and
// temporal update.

#include "dvlo/config.hpp"
#include "dvlo/dataio.hpp"
#include "dvlo/encoders.hpp"
#include "dvlo/params.hpp"
#include "dvlo/pose.hpp"
#include "dvlo/temporal.hpp"

#include <vector>

namespace dvlo {

/// Parameter-free preprocessing of one frame (cacheable across epochs).
struct PreparedFrame {
  PointPyramidLayout layout;
  const ImageRaster* image = nullptr;
};

PreparedFrame prepare_frame(const Frame& frame, const Config& cfg);

/// Fused query sets of one frame, index 0 = finest level.
struct EncodedFrame {
  std::vector<QuerySet> levels;
};

EncodedFrame encode_frame(const PreparedFrame& frame, const std::vector<CameraModel>& cams,
                          const ModelParams& params, const Config& cfg);

struct PairOutput {
  std::vector<PoseVar> layers;  // index 0 = coarsest
  PoseVar refined;
  ad::Var ego;  // refined ego feature (undefined when the temporal path is off)

  /// Layer estimate of level l (0 = finest).
  const PoseVar& level(int l) const { return layers[layers.size() - 1 - static_cast<std::size_t>(l)]; }
};

/// Estimates the motion mapping `src` points into the `tgt` frame. Reads but
/// does not modify `state`.
PairOutput forward_pair(const EncodedFrame& src, const EncodedFrame& tgt, const TemporalState& state,
                        const ModelParams& params, const Config& cfg);

/// Pushes the outputs of one pair into the banks (no-op when disabled).
void push_pair_state(TemporalState& state, const PairOutput& out, long tag, const Config& cfg);

/// Relative pose estimates for every consecutive pair of a sequence, in
/// inference mode. Element i maps points of frame i into frame i+1.
std::vector<RigidMotion> estimate_sequence(const SequenceBundle& seq, const ModelParams& params, const Config& cfg);

}  // namespace dvlo
