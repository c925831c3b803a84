#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "meshforge/cameras.hpp"
#include "test_support.hpp"

using namespace meshforge;
using meshforge::testing::ks_critical_001;
using meshforge::testing::ks_statistic;

namespace {

std::vector<ViewSample> draw(std::size_t n, std::uint64_t seed, const ViewConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  std::vector<ViewSample> out(n);
  for (auto& v : out) v = sample_view(rng, cfg);
  return out;
}

double beta15_cdf(double x) { return 1 - std::pow(1 - std::clamp(x, 0.0, 1.0), 5); }

}  // namespace

TEST(SampleView, AzimuthIsUniform) {
  const auto views = draw(100000, 1);
  std::vector<double> az;
  for (const auto& v : views) {
    ASSERT_GE(v.azimuth, 0.0);
    ASSERT_LT(v.azimuth, 360.0);
    az.push_back(v.azimuth);
  }
  const double d = ks_statistic(az, [](double x) { return x / 360.0; });
  EXPECT_LT(d, ks_critical_001(az.size()));
}

TEST(SampleView, ElevationIsScaledBeta15) {
  const auto views = draw(100000, 2);
  std::vector<double> el;
  double sum = 0;
  for (const auto& v : views) {
    ASSERT_GE(v.elevation, 0.0);
    ASSERT_LE(v.elevation, 100.0);
    el.push_back(v.elevation / 100.0);
    sum += v.elevation;
  }
  EXPECT_LT(ks_statistic(el, beta15_cdf), ks_critical_001(el.size()));
  EXPECT_NEAR(sum / double(el.size()), 100.0 / 6.0, 0.3);
  std::nth_element(el.begin(), el.begin() + long(el.size() / 2), el.end());
  EXPECT_NEAR(100 * el[el.size() / 2], 100 * (1 - std::pow(0.5, 0.2)), 0.3);
}

TEST(SampleView, KsRejectsAWrongDistribution) {
  // the test has power: azimuth is not Beta-shaped
  const auto views = draw(100000, 3);
  std::vector<double> az;
  for (const auto& v : views) az.push_back(v.azimuth / 360.0);
  EXPECT_GT(ks_statistic(az, beta15_cdf), ks_critical_001(az.size()));
}

TEST(SampleView, FovStaysInRange) {
  for (const auto& v : draw(100000, 4)) {
    ASSERT_GE(v.fov, 30.0);
    ASSERT_LE(v.fov, 60.0);
  }
}

TEST(SampleView, OffsetAndBackgroundRanges) {
  std::array<int, 3> kinds{};
  for (const auto& v : draw(30000, 5)) {
    ASSERT_LE(std::abs(v.offset.x()), 0.5);
    ASSERT_LE(std::abs(v.offset.y()), 0.5);
    ASSERT_EQ(v.distance, 5.0);
    ASSERT_NE(v.background.kind, BackgroundKind::fixed);
    ++kinds[int(v.background.kind)];
  }
  for (int k : kinds) EXPECT_NEAR(k / 30000.0, 1.0 / 3.0, 0.02);
}

TEST(SampleView, TogglesDisableAugmentations) {
  ViewConfig cfg;
  cfg.offset_augment = false;
  cfg.fov_augment = false;
  cfg.background_augment = false;
  cfg.fixed_background = Vec3(0.1, 0.2, 0.3);
  const auto plain = draw(1000, 6, cfg);
  const auto full = draw(1000, 6);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_EQ(plain[i].offset, Vec2::Zero());
    EXPECT_EQ(plain[i].fov, 45.0);
    EXPECT_EQ(plain[i].background.kind, BackgroundKind::fixed);
    EXPECT_EQ(plain[i].background.color, Vec3(0.1, 0.2, 0.3));
    // the pose stream itself is unaffected by the toggles
    EXPECT_EQ(plain[i].azimuth, full[i].azimuth);
    EXPECT_EQ(plain[i].elevation, full[i].elevation);
  }
}

TEST(SampleView, SeedsReproduceStreams) {
  const auto a = draw(2000, 77), b = draw(2000, 77), c = draw(2000, 78);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].azimuth, b[i].azimuth);
    EXPECT_EQ(a[i].elevation, b[i].elevation);
    EXPECT_EQ(a[i].fov, b[i].fov);
    EXPECT_EQ(a[i].offset, b[i].offset);
    EXPECT_EQ(a[i].background.seed, b[i].background.seed);
    differs |= a[i].azimuth != c[i].azimuth;
  }
  EXPECT_TRUE(differs);
}

TEST(CameraPose, FrontView) {
  ViewSample v;
  const CameraPose p = camera_pose(v);
  EXPECT_LE((p.position - Vec3(0, 0, 5)).norm(), 1e-12);
  const CameraFrame f = CameraFrame::from_pose(p);
  EXPECT_LE((f.forward - Vec3(0, 0, -1)).norm(), 1e-12);
  EXPECT_LE((f.up - Vec3::UnitY()).norm(), 1e-12);
  EXPECT_LE((f.right - Vec3::UnitX()).norm(), 1e-12);
}

TEST(CameraPose, AzimuthNinetyIsOnPlusX) {
  ViewSample v;
  v.azimuth = 90;
  EXPECT_LE((camera_pose(v).position - Vec3(5, 0, 0)).norm(), 1e-12);
}

TEST(CameraPose, ZenithHasValidFrame) {
  ViewSample v;
  v.elevation = 90;
  const CameraPose p = camera_pose(v);
  EXPECT_LE((p.position - Vec3(0, 5, 0)).norm(), 1e-12);
  const CameraFrame f = CameraFrame::from_pose(p);
  EXPECT_LE((f.forward - Vec3(0, -1, 0)).norm(), 1e-12);
  EXPECT_NEAR(f.up.dot(f.forward), 0, 1e-12);
  EXPECT_NEAR(f.right.dot(f.forward), 0, 1e-12);
}

TEST(CameraPose, PastZenithContinuesTheArc) {
  ViewSample v;
  v.elevation = 100;
  const CameraPose p = camera_pose(v);
  EXPECT_LT(p.position.z(), 0.0);  // crossed over to the far side
  EXPECT_NEAR(p.position.norm(), 5, 1e-12);
  const CameraFrame f = CameraFrame::from_pose(p);
  EXPECT_NEAR(f.up.norm(), 1, 1e-12);
  EXPECT_NEAR(f.up.dot(f.forward), 0, 1e-12);
  // image up follows the direction of increasing elevation, as it does below the zenith
  for (double el : {60.0, 84.9, 85.1, 90.0, 100.0}) {
    ViewSample s;
    s.elevation = el;
    const double e = deg2rad(el);
    const Vec3 tangent(0, std::cos(e), -std::sin(e));
    EXPECT_LE((CameraFrame::from_pose(camera_pose(s)).up - tangent).norm(), 1e-9) << el;
  }
}

TEST(CameraPose, DistanceIsFive) {
  for (const auto& v : draw(2000, 9)) {
    const CameraPose p = camera_pose(v);
    EXPECT_NEAR(p.position.norm(), 5.0, 1e-12);
    EXPECT_NO_THROW(CameraFrame::from_pose(p));
  }
}

TEST(CameraPose, OffsetShiftsLookAtInCameraPlane) {
  ViewSample v;
  v.offset = Vec2(0.3, -0.2);
  const CameraPose p = camera_pose(v);
  EXPECT_LE((p.look_at - Vec3(0.3, -0.2, 0)).norm(), 1e-12);
  for (const auto& s : draw(500, 10)) {
    const CameraPose q = camera_pose(s);
    const Vec3 forward = (-q.position).normalized();
    EXPECT_NEAR(q.look_at.dot(forward), 0, 1e-12);
    EXPECT_NEAR(q.look_at.norm(), s.offset.norm(), 1e-12);
  }
}

TEST(Background, SolidIsUniform) {
  const Image img = make_background({BackgroundKind::solid, 4, {}}, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_EQ(img.pixel(x, y), img.pixel(0, 0));
  for (int c = 0; c < 3; ++c) {
    EXPECT_GE(img.at(0, 0, c), 0.0);
    EXPECT_LE(img.at(0, 0, c), 1.0);
  }
}

TEST(Background, CheckerboardHasTwoColoursInCellsOfEight) {
  const Image img = make_background({BackgroundKind::checkerboard, 11, {}}, 64);
  std::set<std::array<double, 3>> colours;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const Vec3 p = img.pixel(x, y);
      colours.insert({p[0], p[1], p[2]});
      EXPECT_EQ(p, img.pixel(x - x % 8, y - y % 8));
    }
  EXPECT_EQ(colours.size(), 2u);
  EXPECT_NE(img.pixel(0, 0), img.pixel(8, 0));
  EXPECT_NE(img.pixel(0, 0), img.pixel(0, 8));
  EXPECT_EQ(img.pixel(0, 0), img.pixel(8, 8));
}

TEST(Background, NoiseVarianceIsReducedByBlur) {
  const Image img = make_background({BackgroundKind::noise, 12, {}}, 64);
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sum2 = 0;
    const double n = 64 * 64;
    for (std::size_t i = 0; i < 64 * 64; ++i) {
      const double x = img.rgb[3 * i + c];
      ASSERT_GE(x, 0.0);
      ASSERT_LE(x, 1.0);
      sum += x;
      sum2 += x * x;
    }
    const double var = (sum2 - sum * sum / n) / (n - 1);
    EXPECT_GT(var, 0.0);
    EXPECT_LT(var, 1.0 / 12.0);
  }
}

TEST(Background, FixedUsesColourAndSeedReproduces) {
  const Image fixed = make_background({BackgroundKind::fixed, 0, Vec3(0.25, 0.5, 0.75)}, 16);
  EXPECT_EQ(fixed.pixel(5, 5), Vec3(0.25, 0.5, 0.75));
  for (auto kind : {BackgroundKind::solid, BackgroundKind::noise, BackgroundKind::checkerboard}) {
    EXPECT_EQ(make_background({kind, 21, {}}, 32).rgb, make_background({kind, 21, {}}, 32).rgb);
    EXPECT_NE(make_background({kind, 21, {}}, 32).rgb, make_background({kind, 22, {}}, 32).rgb);
  }
  for (double a : fixed.alpha) EXPECT_EQ(a, 1.0);
  EXPECT_THROW(make_background({BackgroundKind::solid, 0, {}}, 0), ParameterError);
}
