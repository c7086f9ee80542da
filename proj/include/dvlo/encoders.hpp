#pragma once

#include "dvlo/autodiff.hpp"
#include "dvlo/config.hpp"
#include "dvlo/dataio.hpp"
#include "dvlo/geom.hpp"
#include "dvlo/params.hpp"

#include <array>
#include <vector>

namespace dvlo {

/// Cylindrical reorganization of a scan. Each occupied cell keeps the
/// original 3D point that landed there (nearest range wins on collision).
struct PseudoImage {
  CylindricalParams params;
  std::vector<int> source_index;  // per cell, index into the cloud or -1
  std::vector<Vec3> points;       // per cell, meaningful where occupied

  bool occupied(int row, int col) const { return source_index[cell(row, col)] >= 0; }
  const Vec3& point(int row, int col) const { return points[cell(row, col)]; }
  int cell(int row, int col) const { return row * params.width + col; }
  int occupied_count() const;
};

/// Integer cell of a continuous cylindrical coordinate: row = floor(v + H/2),
/// col = floor(u + W/2). Returns false when it falls outside the grid.
bool cylindrical_cell(const CylindricalCoord& uv, const CylindricalParams& params, int& row, int& col);

PseudoImage build_pseudo_image(const PointCloud& cloud, const CylindricalParams& params);

/// Sparse LiDAR queries of one pyramid level.
struct QuerySet {
  int level = 0;
  std::vector<Vec3> positions;                     // N_l anchors (meters)
  ad::Var features;                                // N_l x D
  std::vector<std::array<double, 2>> pixel_anchors;  // (row, col) in the pseudo-image
  std::vector<bool> valid;                         // false for padding entries

  int size() const { return static_cast<int>(positions.size()); }
  int valid_count() const;
};

/// Parameter-free part of the point pyramid for one scan: occupied nodes,
/// their anchor points, pooling neighborhoods and the selected queries.
struct PointPyramidLayout {
  struct Level {
    int height = 0;
    int width = 0;
    std::vector<Vec3> anchors;                   // per node
    std::vector<std::array<int, 2>> cells;       // per node (row, col) in this level's grid
    std::vector<std::array<double, 2>> fine_cells;  // per node anchor cell in the pseudo-image
    std::vector<std::vector<int>> pool_groups;   // per node, nodes of the finer level (l >= 1)
    std::vector<int> selected;                   // query -> node, -1 when empty
    std::vector<bool> valid;
  };
  std::vector<Level> levels;  // index 0 is the finest
};

/// Deterministic farthest-point selection seeded at index 0. Returns at most
/// `count` indices; ties resolve to the lowest index.
std::vector<int> farthest_point_selection(const std::vector<Vec3>& points, int count);

PointPyramidLayout build_point_layout(const PseudoImage& img, const Config& cfg);

/// Queries per level (index 0 finest) for `cfg`.
int query_count_for_level(const Config& cfg, int level);

/// Point branch: per-cell lift of (x, y, z, range), then per-level 3x3
/// stride-2 max aggregation and a linear layer; queries sampled per level.
std::vector<QuerySet> point_feature_pyramid(const PointPyramidLayout& layout, const ModelParams& params,
                                            const Config& cfg);
std::vector<QuerySet> point_feature_pyramid(const PseudoImage& img, const ModelParams& params,
                                            const Config& cfg);

/// Dense image features at one pyramid level.
struct FeatureMap {
  int level = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  int stride = 1;  // original-image pixels per cell
  ad::Var data;    // (height*width) x channels, row-major cells
};

/// Image branch: stride-2 3x3 convolutions followed by top-down lateral
/// addition. Level l has size ceil(H / 2^(l+1)) x ceil(W / 2^(l+1)).
std::vector<FeatureMap> image_feature_pyramid(const ImageRaster& img, const ModelParams& params,
                                              const Config& cfg);

/// 3x3 stride-2 zero-padded convolution over an (h*w) x c_in map.
ad::Var conv3x3_stride2(const ad::Var& input, int height, int width, const ad::Var& weight,
                        const ad::Var& bias, int& out_height, int& out_width);

void declare_encoder_params(ParamBuilder& b, const Config& cfg);

constexpr int kImageInputChannels = 3;
constexpr double kLeakySlope = 0.1;

}  // namespace dvlo
