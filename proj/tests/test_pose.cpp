#include "dvlo/layers.hpp"
#include "dvlo/pose.hpp"
#include "dvlo/verify.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

using namespace dvlo;
using ad::Var;

namespace {

using MatX = Eigen::MatrixXd;
using RowX = Eigen::RowVectorXd;

QuerySet random_queries(Rng& rng, int n, int d, int level, double spread = 3.0) {
  QuerySet q;
  q.level = level;
  std::vector<double> f(static_cast<std::size_t>(n) * d);
  for (double& x : f) x = rng.normal();
  for (int i = 0; i < n; ++i) q.positions.push_back(testkit::random_vec(rng, spread));
  q.features = Var::constant(n, d, std::move(f));
  q.valid.assign(static_cast<std::size_t>(n), true);
  q.pixel_anchors.assign(static_cast<std::size_t>(n), {0.0, 0.0});
  return q;
}

MatX to_mat(const Var& v) {
  MatX m(v.rows(), v.cols());
  for (int r = 0; r < v.rows(); ++r)
    for (int c = 0; c < v.cols(); ++c) m(r, c) = v(r, c);
  return m;
}

RowX row(const Var& v, int r) { return to_mat(v).row(r); }

RowX linear(const RowX& x, const ModelParams& p, const std::string& prefix) {
  return x * to_mat(p.get(prefix + ".w")) + to_mat(p.get(prefix + ".b"));
}

RowX lrelu(RowX x) {
  for (auto& v : x) v = v > 0 ? v : 0.1 * v;
  return x;
}

RowX cat(std::initializer_list<RowX> parts) {
  int n = 0;
  for (const auto& p : parts) n += static_cast<int>(p.size());
  RowX out(n);
  int at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += static_cast<int>(p.size());
  }
  return out;
}

RowX as_row(const Vec3& v) { return v.transpose(); }

// Cost-volume embedding of one source query, written with Eigen from the
// layer definition: softmax attention over the k nearest targets.
RowX embedding_oracle(const Vec3& ps, const RowX& fs, const QuerySet& tgt, const ModelParams& p,
                      const std::string& prefix, int knn) {
  const std::string cv = prefix + ".cv";
  std::vector<int> idx;
  for (int j = 0; j < tgt.size(); ++j)
    if (tgt.valid[j]) idx.push_back(j);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return (tgt.positions[a] - ps).squaredNorm() < (tgt.positions[b] - ps).squaredNorm();
  });
  if (static_cast<int>(idx.size()) > knn) idx.resize(knn);
  const int d = static_cast<int>(fs.size());
  const RowX qv = linear(fs, p, cv + ".q");
  std::vector<double> logits;
  std::vector<RowX> feats, rels;
  for (int j : idx) {
    const Vec3 rel = tgt.positions[j] - ps;
    const RowX ft = row(tgt.features, j);
    const RowX key = linear(cat({ft, lrelu(linear(as_row(rel), p, cv + ".pe"))}), p, cv + ".k");
    logits.push_back(qv.dot(key) / std::sqrt(static_cast<double>(d)));
    feats.push_back(ft);
    rels.push_back(as_row(rel));
  }
  RowX att = RowX::Zero(d), prel = RowX::Zero(3);
  if (!logits.empty()) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    for (std::size_t j = 0; j < logits.size(); ++j) {
      const double w = std::exp(logits[j] - mx) / z;
      att += w * feats[j];
      prel += w * rels[j];
    }
  }
  return linear(lrelu(linear(cat({fs, att, prel}), p, cv + ".mlp1")), p, cv + ".mlp2");
}

void set_zero(ModelParams& p, const std::string& name) {
  for (double& v : p.get(name).mutable_value()) v = 0.0;
}

}  // namespace

TEST(NearestTargets, MatchesSortWithIndexTiesAndSkipsInvalid) {
  const std::vector<Vec3> t{{1, 0, 0}, {-1, 0, 0}, {0, 2, 0}, {0, 0.5, 0}, {0, -1, 0}};
  const std::vector<bool> valid{true, true, true, false, true};
  EXPECT_EQ(nearest_targets(Vec3::Zero(), t, valid, 3), (std::vector<int>{0, 1, 4}));
  EXPECT_EQ(nearest_targets(Vec3::Zero(), t, valid, 10), (std::vector<int>{0, 1, 4, 2}));
  EXPECT_TRUE(nearest_targets(Vec3::Zero(), t, std::vector<bool>(5, false), 3).empty());
}

TEST(CostVolume, SingleTargetMatchesHandComputation) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 1);
  randomize_params(p, 2, 0.6);
  Rng rng(3);
  const QuerySet src = random_queries(rng, 2, 4, 0);
  const QuerySet tgt = random_queries(rng, 1, 4, 0);
  const CostVolume cv = attentive_cost_volume(src, tgt, p, cfg);
  for (int i = 0; i < 2; ++i) {
    // One neighbor: attention weight 1, so the attended feature is f_t.
    const Vec3 rel = tgt.positions[0] - src.positions[i];
    const RowX expect = linear(
        lrelu(linear(cat({row(src.features, i), row(tgt.features, 0), as_row(rel)}), p, "pose0.cv.mlp1")), p,
        "pose0.cv.mlp2");
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(cv.embeddings(i, c), expect(c), 1e-12);
  }
}

TEST(CostVolume, MatchesOracleWithSeveralNeighbors) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 4);
  randomize_params(p, 5, 0.6);
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const QuerySet src = random_queries(rng, 5, 4, 1);
    QuerySet tgt = random_queries(rng, 7, 4, 1);
    tgt.valid[2] = false;
    const CostVolume cv = attentive_cost_volume(src, tgt, p, cfg);
    for (int i = 0; i < 5; ++i) {
      const RowX expect = embedding_oracle(src.positions[i], row(src.features, i), tgt, p, "pose1", cfg.pose.knn);
      for (int c = 0; c < 4; ++c) EXPECT_NEAR(cv.embeddings(i, c), expect(c), 1e-12);
    }
  }
}

TEST(CostVolume, InvariantToTargetOrder) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 7);
  randomize_params(p, 8, 0.6);
  Rng rng(9);
  const QuerySet src = random_queries(rng, 6, 4, 0);
  const QuerySet tgt = random_queries(rng, 9, 4, 0);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  QuerySet shuffled = tgt;
  std::vector<int> rows;
  for (int j = 0; j < 9; ++j) {
    shuffled.positions[j] = tgt.positions[perm[j]];
    rows.push_back(perm[j]);
  }
  shuffled.features = ad::gather_rows(tgt.features, rows);
  const auto a = attentive_cost_volume(src, tgt, p, cfg).embeddings;
  const auto b = attentive_cost_volume(src, shuffled, p, cfg).embeddings;
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.value()[k], b.value()[k], 1e-6);
}

TEST(CostVolume, InvariantToCommonTranslation) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 7);
  randomize_params(p, 10, 0.6);
  Rng rng(11);
  QuerySet src = random_queries(rng, 6, 4, 0);
  QuerySet tgt = random_queries(rng, 8, 4, 0);
  const auto a = attentive_cost_volume(src, tgt, p, cfg).embeddings;
  const Vec3 shift(3.0, -2.0, 0.5);
  for (auto& x : src.positions) x += shift;
  for (auto& x : tgt.positions) x += shift;
  const auto b = attentive_cost_volume(src, tgt, p, cfg).embeddings;
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.value()[k], b.value()[k], 1e-12);
}

TEST(CostVolume, NoValidTargetsGivesZeroAttention) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 1);
  randomize_params(p, 12, 0.6);
  Rng rng(13);
  const QuerySet src = random_queries(rng, 3, 4, 0);
  QuerySet tgt = random_queries(rng, 4, 4, 0);
  tgt.valid.assign(4, false);
  const CostVolume cv = attentive_cost_volume(src, tgt, p, cfg);
  for (int i = 0; i < 3; ++i) {
    const RowX expect = linear(
        lrelu(linear(cat({row(src.features, i), RowX::Zero(4), RowX::Zero(3)}), p, "pose0.cv.mlp1")), p,
        "pose0.cv.mlp2");
    for (int c = 0; c < 4; ++c) {
      EXPECT_TRUE(std::isfinite(cv.embeddings(i, c)));
      EXPECT_NEAR(cv.embeddings(i, c), expect(c), 1e-12);
    }
  }
}

TEST(PoseHead, MaskWeightsAreSoftmaxOverValidQueries) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 1);
  randomize_params(p, 14, 1.0);
  Rng rng(15);
  CostVolume cv;
  std::vector<double> e(5 * 4);
  for (double& x : e) x = rng.normal();
  cv.embeddings = Var::constant(5, 4, e);
  cv.valid = {true, false, true, true, false};
  const Var w = pose_mask_weights(cv, p, "pose0");
  const MatX E = to_mat(cv.embeddings);
  const RowX logits = (E * to_mat(p.get("pose0.mask.w"))).transpose().array() + p.get("pose0.mask.b")(0, 0);
  double z = 0.0;
  for (int i = 0; i < 5; ++i)
    if (cv.valid[i]) z += std::exp(logits(i));
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(w(0, i), cv.valid[i] ? std::exp(logits(i)) / z : 0.0, 1e-12);

  cv.valid = {false, false, true, false, false};
  const Var single = pose_mask_weights(cv, p, "pose0");
  EXPECT_EQ(single(0, 2), 1.0);
}

TEST(PoseHead, OutputsUnitQuaternion) {
  Config cfg = toy_config();
  Rng rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams p = init_params(cfg, trial);
    randomize_params(p, 100 + trial, 2.0);
    CostVolume cv;
    std::vector<double> e(6 * 4);
    for (double& x : e) x = rng.normal();
    cv.embeddings = Var::constant(6, 4, e);
    cv.valid.assign(6, true);
    const PoseVar out = coarse_pose_head(cv, p, "pose0");
    double n2 = 0.0;
    for (int k = 0; k < 4; ++k) n2 += out.q(0, k) * out.q(0, k);
    EXPECT_NEAR(n2, 1.0, 1e-12);
  }
}

TEST(PoseHead, ZeroHeadWeightsGiveIdentity) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 1);
  set_zero(p, "pose0.quat.w");
  set_zero(p, "pose0.trans.w");
  Rng rng(17);
  CostVolume cv;
  std::vector<double> e(3 * 4);
  for (double& x : e) x = rng.normal();
  cv.embeddings = Var::constant(3, 4, e);
  cv.valid.assign(3, true);
  const RigidMotion m = coarse_pose_head(cv, p, "pose0").motion();
  EXPECT_EQ(m.rotation, Quaternion::identity());
  EXPECT_EQ(m.translation, Vec3::Zero());
}

TEST(Warp, MatchesMatrixOracle) {
  Rng rng(18);
  const RigidMotion m = testkit::random_motion(rng, 2.0);
  const QuerySet q = random_queries(rng, 6, 2, 0);
  const Var w = warp_positions(position_matrix(q), PoseVar::constant(m, 0));
  const Mat3 r = testkit::quat_matrix_oracle(m.rotation);
  for (int i = 0; i < 6; ++i) {
    const Vec3 e = r * q.positions[i] + m.translation;
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(w(i, a), e[a], 1e-12);
  }
}

TEST(ComposeResidual, MatchesHomogeneousProduct) {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    const RigidMotion d = testkit::random_motion(rng), prior = testkit::random_motion(rng);
    const RigidMotion got = compose_residual(PoseVar::constant(d, 0), PoseVar::constant(prior, 1), 0).motion();
    const Mat4 expect = testkit::homogeneous(testkit::quat_matrix_oracle(d.rotation), d.translation) *
                        testkit::homogeneous(testkit::quat_matrix_oracle(prior.rotation), prior.translation);
    const Mat4 m = testkit::homogeneous(testkit::quat_matrix_oracle(got.rotation), got.translation);
    EXPECT_LT((m - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(RefineLayer, IdentityResidualKeepsPrior) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 3);
  randomize_params(p, 20, 0.5);
  set_zero(p, "pose1.quat.w");
  for (double& v : p.get("pose1.quat.b").mutable_value()) v = 0.0;
  p.get("pose1.quat.b").mutable_value()[0] = 1.0;
  set_zero(p, "pose1.trans.w");
  set_zero(p, "pose1.trans.b");
  Rng rng(21);
  const RigidMotion prior = testkit::random_motion(rng);
  const QuerySet src = random_queries(rng, 6, 4, 1), tgt = random_queries(rng, 6, 4, 1);
  const RigidMotion got = refine_layer(1, src, tgt, PoseVar::constant(prior, 1), p, cfg).motion();
  EXPECT_LT(rotation_distance(got.rotation, prior.rotation), 1e-12);
  EXPECT_LT((got.translation - prior.translation).norm(), 1e-12);
}

TEST(RefineLayer, UsesWarpedSourcePositions) {
  // The residual of a layer only sees the warped source, so warping the
  // source by m and passing prior m^-1 matches an identity prior on the
  // original cloud.
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 3);
  randomize_params(p, 22, 0.5);
  Rng rng(23);
  const RigidMotion m = testkit::random_motion(rng, 0.5);
  QuerySet src = random_queries(rng, 6, 4, 0);
  const QuerySet tgt = random_queries(rng, 8, 4, 0);
  const RigidMotion a = refine_layer(0, src, tgt, PoseVar::constant(RigidMotion::identity(), 0), p, cfg).motion();
  for (auto& x : src.positions) x = m.apply(x);
  const RigidMotion b = refine_layer(0, src, tgt, PoseVar::constant(m.inverse(), 0), p, cfg).motion();
  // a = delta; b = delta ∘ m^-1, so b ∘ m = a.
  const RigidMotion bm = b.compose(m);
  EXPECT_LT(rotation_distance(a.rotation, bm.rotation), 1e-9);
  EXPECT_LT((a.translation - bm.translation).norm(), 1e-9);
}

TEST(RunPyramid, OneEstimatePerLevelCoarsestFirstAndDeterministic) {
  Config cfg = toy_config();
  ModelParams p = init_params(cfg, 5);
  randomize_params(p, 24, 0.5);
  Rng rng(25);
  std::vector<QuerySet> src, tgt;
  for (int l = 0; l < cfg.pose.levels; ++l) {
    src.push_back(random_queries(rng, 6 - 3 * l, 4, l));
    tgt.push_back(random_queries(rng, 6 - 3 * l, 4, l));
  }
  const PoseVar init = PoseVar::constant(RigidMotion::identity(), cfg.pose.levels);
  const auto a = run_pyramid(src, tgt, init, p, cfg);
  const auto b = run_pyramid(src, tgt, init, p, cfg);
  ASSERT_EQ(static_cast<int>(a.size()), cfg.pose.levels);
  for (int k = 0; k < cfg.pose.levels; ++k) {
    EXPECT_EQ(a[k].level, cfg.pose.levels - 1 - k);
    EXPECT_EQ(a[k].motion().rotation, b[k].motion().rotation);
    EXPECT_EQ(a[k].motion().translation, b[k].motion().translation);
  }
  // The finest estimate is the coarse one refined once more.
  const RigidMotion again = refine_layer(0, src[0], tgt[0], a[0], p, cfg).motion();
  EXPECT_EQ(again.rotation, a[1].motion().rotation);
  EXPECT_THROW(run_pyramid({src[0]}, tgt, init, p, cfg), std::invalid_argument);
}
