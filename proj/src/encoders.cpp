#include "dvlo/encoders.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace dvlo {

namespace {
// Raw coordinates are fed to the lift layer in units of 10 m.
constexpr double kPointInputScale = 0.1;
}  // namespace

int PseudoImage::occupied_count() const {
  return static_cast<int>(std::count_if(source_index.begin(), source_index.end(), [](int i) { return i >= 0; }));
}

int QuerySet::valid_count() const { return static_cast<int>(std::count(valid.begin(), valid.end(), true)); }

bool cylindrical_cell(const CylindricalCoord& uv, const CylindricalParams& params, int& row, int& col) {
  const double r = std::floor(uv.v + 0.5 * params.height);
  const double c = std::floor(uv.u + 0.5 * params.width);
  if (!(r >= 0.0 && r < params.height && c >= 0.0 && c < params.width)) return false;
  row = static_cast<int>(r);
  col = static_cast<int>(c);
  return true;
}

PseudoImage build_pseudo_image(const PointCloud& cloud, const CylindricalParams& params) {
  params.validate();
  PseudoImage img;
  img.params = params;
  const std::size_t cells = static_cast<std::size_t>(params.height) * params.width;
  img.source_index.assign(cells, -1);
  img.points.assign(cells, Vec3::Zero());
  std::vector<double> best_range(cells, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const double range = p.norm();
    if (range == 0.0) continue;
    int row = 0, col = 0;
    if (!cylindrical_cell(cylindrical_project(p, params), params, row, col)) continue;
    const int cell = img.cell(row, col);
    if (range < best_range[cell]) {
      best_range[cell] = range;
      img.source_index[cell] = static_cast<int>(i);
      img.points[cell] = p;
    }
  }
  return img;
}

std::vector<int> farthest_point_selection(const std::vector<Vec3>& points, int count) {
  std::vector<int> out;
  if (points.empty() || count <= 0) return out;
  const int n = static_cast<int>(points.size());
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  int current = 0;
  for (int k = 0; k < std::min(count, n); ++k) {
    out.push_back(current);
    int next = -1;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (points[i] - points[current]).squaredNorm());
      if (dist[i] > best) {
        best = dist[i];
        next = i;
      }
    }
    current = next;
  }
  return out;
}

int query_count_for_level(const Config& cfg, int level) {
  return cfg.encoder.query_counts[cfg.encoder.levels - 1 - level];
}

PointPyramidLayout build_point_layout(const PseudoImage& img, const Config& cfg) {
  const int L = cfg.encoder.levels;
  PointPyramidLayout layout;
  layout.levels.resize(L);

  auto& base = layout.levels[0];
  base.height = img.params.height;
  base.width = img.params.width;
  for (int r = 0; r < base.height; ++r)
    for (int c = 0; c < base.width; ++c) {
      if (!img.occupied(r, c)) continue;
      base.anchors.push_back(img.point(r, c));
      base.cells.push_back({r, c});
      base.fine_cells.push_back({static_cast<double>(r), static_cast<double>(c)});
    }

  for (int l = 1; l < L; ++l) {
    const auto& fine = layout.levels[l - 1];
    auto& lv = layout.levels[l];
    lv.height = (fine.height + 1) / 2;
    lv.width = (fine.width + 1) / 2;
    std::vector<int> node_at(static_cast<std::size_t>(fine.height) * fine.width, -1);
    for (std::size_t k = 0; k < fine.cells.size(); ++k) {
      node_at[static_cast<std::size_t>(fine.cells[k][0]) * fine.width + fine.cells[k][1]] = static_cast<int>(k);
    }
    auto fine_node = [&](int r, int c) -> int {
      if (r < 0 || r >= fine.height) return -1;
      c = ((c % fine.width) + fine.width) % fine.width;  // azimuth wraps around
      return node_at[static_cast<std::size_t>(r) * fine.width + c];
    };
    for (int i = 0; i < lv.height; ++i)
      for (int j = 0; j < lv.width; ++j) {
        int anchor = -1;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            if (2 * j + dj >= fine.width) continue;
            const int k = fine_node(2 * i + di, 2 * j + dj);
            if (k < 0) continue;
            if (anchor < 0 || fine.anchors[k].norm() < fine.anchors[anchor].norm() ||
                (fine.anchors[k].norm() == fine.anchors[anchor].norm() && k < anchor)) {
              anchor = k;
            }
          }
        if (anchor < 0) continue;
        std::vector<int> group;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const int k = fine_node(2 * i + di, 2 * j + dj);
            if (k >= 0 && std::find(group.begin(), group.end(), k) == group.end()) group.push_back(k);
          }
        lv.anchors.push_back(fine.anchors[anchor]);
        lv.cells.push_back({i, j});
        lv.fine_cells.push_back(fine.fine_cells[anchor]);
        lv.pool_groups.push_back(std::move(group));
      }
  }

  for (int l = 0; l < L; ++l) {
    auto& lv = layout.levels[l];
    const int want = query_count_for_level(cfg, l);
    lv.selected = farthest_point_selection(lv.anchors, want);
    lv.valid.assign(lv.selected.size(), true);
    const int last = lv.selected.empty() ? -1 : lv.selected.back();
    while (static_cast<int>(lv.selected.size()) < want) {
      lv.selected.push_back(last);
      lv.valid.push_back(false);
    }
  }
  return layout;
}

std::vector<QuerySet> point_feature_pyramid(const PointPyramidLayout& layout, const ModelParams& params,
                                            const Config& cfg) {
  const int L = cfg.encoder.levels;
  const int D = cfg.encoder.channels;
  std::vector<QuerySet> out(L);
  ad::Var prev;
  for (int l = 0; l < L; ++l) {
    const auto& lv = layout.levels[l];
    const int n = static_cast<int>(lv.anchors.size());
    ad::Var feats;
    if (n == 0) {
      feats = ad::Var::zeros(1, D);  // placeholder row; every query is padding
    } else if (l == 0) {
      std::vector<double> in(static_cast<std::size_t>(n) * 4);
      for (int k = 0; k < n; ++k) {
        const Vec3& p = lv.anchors[k];
        in[4 * k + 0] = p.x() * kPointInputScale;
        in[4 * k + 1] = p.y() * kPointInputScale;
        in[4 * k + 2] = p.z() * kPointInputScale;
        in[4 * k + 3] = p.norm() * kPointInputScale;
      }
      feats = ad::leaky_relu(ad::matmul(ad::Var::constant(n, 4, std::move(in)), params.get("enc.pt.lift.w")) +
                                 params.get("enc.pt.lift.b"),
                             kLeakySlope);
    } else {
      const std::string p = fmt::format("enc.pt.agg{}", l);
      feats = ad::leaky_relu(
          ad::matmul(ad::max_groups(prev, lv.pool_groups), params.get(p + ".w")) + params.get(p + ".b"),
          kLeakySlope);
    }
    prev = feats;

    QuerySet& qs = out[l];
    qs.level = l;
    qs.valid = lv.valid;
    std::vector<int> rows;
    for (std::size_t q = 0; q < lv.selected.size(); ++q) {
      const int node = lv.selected[q];
      rows.push_back(n == 0 ? -1 : node);
      qs.positions.push_back(node >= 0 ? lv.anchors[node] : Vec3::Zero());
      qs.pixel_anchors.push_back(node >= 0 ? lv.fine_cells[node] : std::array<double, 2>{0.0, 0.0});
    }
    qs.features = ad::gather_rows(feats, rows);
  }
  return out;
}

std::vector<QuerySet> point_feature_pyramid(const PseudoImage& img, const ModelParams& params,
                                            const Config& cfg) {
  return point_feature_pyramid(build_point_layout(img, cfg), params, cfg);
}

ad::Var conv3x3_stride2(const ad::Var& input, int height, int width, const ad::Var& weight,
                        const ad::Var& bias, int& out_height, int& out_width) {
  const int cin = input.cols();
  out_height = (height + 1) / 2;
  out_width = (width + 1) / 2;
  const int patch = 9 * cin;
  std::vector<int> index(static_cast<std::size_t>(out_height) * out_width * patch, -1);
  std::size_t k = 0;
  for (int i = 0; i < out_height; ++i)
    for (int j = 0; j < out_width; ++j)
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int r = 2 * i + di, c = 2 * j + dj;
          const bool inside = r >= 0 && r < height && c >= 0 && c < width;
          for (int ch = 0; ch < cin; ++ch, ++k) {
            if (inside) index[k] = (r * width + c) * cin + ch;
          }
        }
  const ad::Var cols = ad::gather(input, out_height * out_width, patch, std::move(index));
  return ad::matmul(cols, weight) + bias;
}

std::vector<FeatureMap> image_feature_pyramid(const ImageRaster& img, const ModelParams& params,
                                              const Config& cfg) {
  const int L = cfg.encoder.levels;
  const int C = cfg.encoder.channels;
  const int min_side = 1 << (L + 1);
  if (img.height < min_side || img.width < min_side) {
    throw ConfigError(fmt::format("image {}x{} is smaller than {} pixels required by {} levels", img.height,
                                  img.width, min_side, L));
  }
  if (img.channels != 1 && img.channels != 3) throw ConfigError("image must have 1 or 3 channels");

  // Grayscale inputs are replicated to three channels.
  std::vector<double> in(static_cast<std::size_t>(img.height) * img.width * kImageInputChannels);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < kImageInputChannels; ++ch) {
        in[(static_cast<std::size_t>(r) * img.width + c) * kImageInputChannels + ch] =
            img.at(r, c, img.channels == 1 ? 0 : ch);
      }
  ad::Var x = ad::Var::constant(img.height * img.width, kImageInputChannels, std::move(in));

  std::vector<ad::Var> bottom_up(L);
  std::vector<int> hs(L), ws(L);
  int h = img.height, w = img.width;
  for (int l = 0; l < L; ++l) {
    const std::string p = fmt::format("enc.img.conv{}", l);
    x = ad::leaky_relu(conv3x3_stride2(x, h, w, params.get(p + ".w"), params.get(p + ".b"), hs[l], ws[l]),
                       kLeakySlope);
    bottom_up[l] = x;
    h = hs[l];
    w = ws[l];
  }

  std::vector<FeatureMap> out(L);
  ad::Var above;
  for (int l = L - 1; l >= 0; --l) {
    const std::string p = fmt::format("enc.img.lat{}", l);
    ad::Var y = ad::matmul(bottom_up[l], params.get(p + ".w")) + params.get(p + ".b");
    if (l < L - 1) {
      // Nearest-neighbor upsampling of the coarser map.
      std::vector<int> rows(static_cast<std::size_t>(hs[l]) * ws[l]);
      for (int i = 0; i < hs[l]; ++i)
        for (int j = 0; j < ws[l]; ++j) rows[static_cast<std::size_t>(i) * ws[l] + j] = (i / 2) * ws[l + 1] + j / 2;
      y = y + ad::gather_rows(above, rows);
    }
    above = y;
    out[l] = {l, hs[l], ws[l], C, 1 << (l + 1), y};
  }
  return out;
}

void declare_encoder_params(ParamBuilder& b, const Config& cfg) {
  const int D = cfg.encoder.channels;
  const int L = cfg.encoder.levels;
  b.linear("enc.pt.lift", 4, D);
  for (int l = 1; l < L; ++l) b.linear(fmt::format("enc.pt.agg{}", l), D, D);
  for (int l = 0; l < L; ++l) {
    b.linear(fmt::format("enc.img.conv{}", l), 9 * (l == 0 ? kImageInputChannels : D), D);
  }
  for (int l = 0; l < L; ++l) b.linear(fmt::format("enc.img.lat{}", l), D, D);
}

}  // namespace dvlo
