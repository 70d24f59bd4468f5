#include "facepatch/analyzer.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace facepatch;

namespace {

std::vector<ScaleContribution> synthetic(const std::vector<int>& on_face, double factor = 0.709) {
  std::vector<ScaleContribution> out;
  double s = 12.0 / 21.0;
  for (int n : on_face) {
    out.push_back({s, 2 * n + 3, n, n});
    s *= factor;
  }
  return out;
}

BoundingBox hopper_face() {
  const auto b = test::reference().at("photos").at("grace_hopper")[0].at("box").get<std::vector<double>>();
  return {b[0], b[1], b[2], b[3]};
}

}  // namespace

TEST_CASE("a blank image contributes nothing at any scale") {
  const auto wall = read_image(test::kDataDir / "frames" / "blank_wall.png");
  const auto c = trace_scale_contributions(test::detector(), wall, BoundingBox{40, 40, 120, 120}, PyramidConfig{});
  CHECK(c.size() == build_pyramid(wall.height(), wall.width(), PyramidConfig{}).size());
  for (const auto& r : c) {
    CHECK(r.proposals_after_pnet == 0);
    CHECK(r.proposals_overlapping_face == 0);
    CHECK(r.survivors_to_rnet == 0);
  }
  CHECK(trace_scale_contributions(test::detector(), Image<float>::constant(15, 15, 0.5f), BoundingBox{0, 0, 5, 5},
                                  PyramidConfig{})
            .empty());
}

TEST_CASE("the bundled photo has a unique most-contributing scale") {
  const auto img = read_image(test::kDataDir / "images" / "grace_hopper.png");
  const auto c = trace_scale_contributions(test::detector(), img, hopper_face(), PyramidConfig{});
  int best = 0, ties = 0;
  for (const auto& r : c) best = std::max(best, r.proposals_overlapping_face);
  for (const auto& r : c) ties += r.proposals_overlapping_face == best;
  CHECK(best > 0);
  CHECK(ties == 1);
  for (const auto& r : c) {
    CHECK(r.proposals_overlapping_face <= r.proposals_after_pnet);
    CHECK(r.survivors_to_rnet <= r.proposals_after_pnet);
  }
}

TEST_CASE("raising the P-Net threshold never increases a count") {
  const auto img = read_image(test::kDataDir / "images" / "grace_hopper.png");
  PyramidConfig lo, hi;
  lo.thresholds[0] = 0.6;
  hi.thresholds[0] = 0.9;
  const auto a = trace_scale_contributions(test::detector(), img, hopper_face(), lo);
  const auto b = trace_scale_contributions(test::detector(), img, hopper_face(), hi);
  REQUIRE(a.size() == b.size());
  for (size_t k = 0; k < a.size(); ++k) {
    CHECK(b[k].proposals_after_pnet <= a[k].proposals_after_pnet);
  }
}

TEST_CASE("neighbors strategy takes the argmax and its pyramid neighbours") {
  const PyramidConfig cfg;
  const auto c = synthetic({0, 1, 2, 9, 4, 1, 0});
  const auto s = select_attack_scales(c, ScaleStrategy::neighbors, cfg, 1000);
  CHECK(s.scales[0] == c[2].scale);
  CHECK(s.scales[1] == c[3].scale);
  CHECK(s.scales[2] == c[4].scale);

  const auto first = select_attack_scales(synthetic({9, 1, 2, 3}), ScaleStrategy::neighbors, cfg, 1000);
  CHECK(first.scales[0] == synthetic({9, 1, 2, 3})[0].scale);
  CHECK(first.scales[2] == synthetic({9, 1, 2, 3})[2].scale);
  const auto last = select_attack_scales(synthetic({0, 1, 2, 9}), ScaleStrategy::neighbors, cfg, 1000);
  CHECK(last.scales[2] == synthetic({0, 1, 2, 9})[3].scale);
  CHECK(last.scales[0] == synthetic({0, 1, 2, 9})[1].scale);
}

TEST_CASE("ties go to the larger scale") {
  const auto c = synthetic({0, 5, 1, 5, 0});
  const auto s = select_attack_scales(c, ScaleStrategy::neighbors, PyramidConfig{}, 1000);
  CHECK(s.scales[1] == c[1].scale);
}

TEST_CASE("size augmentation brackets the argmax by the square root of the factor") {
  std::vector<ScaleContribution> c{{0.4, 1, 1, 1}, {0.2, 5, 5, 5}, {0.1, 0, 0, 0}};
  const auto s = select_attack_scales(c, ScaleStrategy::size_augmentation, PyramidConfig{}, 1000);
  const double root = std::sqrt(0.709);  // 0.84202...
  CHECK(s.scales[0] == doctest::Approx(0.2 / root).epsilon(1e-14));
  CHECK(s.scales[1] == 0.2);
  CHECK(s.scales[2] == doctest::Approx(0.2 * root).epsilon(1e-14));
  CHECK(s.scales[0] == doctest::Approx(0.23752).epsilon(1e-4));
}

TEST_CASE("selection is invariant to rescaling counts and keeps pyramid membership") {
  const PyramidConfig cfg;
  const auto base = synthetic({1, 3, 7, 2, 0, 4});
  auto scaled = base;
  for (auto& r : scaled) r.proposals_overlapping_face *= 13;
  for (auto strategy : {ScaleStrategy::neighbors, ScaleStrategy::size_augmentation}) {
    const auto a = select_attack_scales(base, strategy, cfg, 1000);
    const auto b = select_attack_scales(scaled, strategy, cfg, 1000);
    CHECK(a.scales == b.scales);
    int members = 0;
    for (double s : a.scales)
      members += std::any_of(base.begin(), base.end(), [&](const ScaleContribution& r) { return r.scale == s; });
    CHECK(members == (strategy == ScaleStrategy::neighbors ? 3 : 1));
  }
}

TEST_CASE("selection rejects unusable inputs") {
  const PyramidConfig cfg;
  CHECK_THROWS_AS(select_attack_scales({}, ScaleStrategy::neighbors, cfg, 100), std::invalid_argument);
  CHECK_THROWS_AS(select_attack_scales(synthetic({1, 2}), ScaleStrategy::neighbors, cfg, 100), std::invalid_argument);
  // 30 * 0.2873 is below 12.
  CHECK_THROWS_AS(select_attack_scales(synthetic({0, 0, 5}), ScaleStrategy::size_augmentation, cfg, 30),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_scale_strategy("middle"), std::invalid_argument);
}

TEST_CASE("merged contributions sum per pyramid index") {
  const auto a = synthetic({1, 2, 3});
  const auto b = synthetic({4, 5});
  const auto m = merge_contributions({a, b});
  REQUIRE(m.size() == 3);
  CHECK(m[0].proposals_overlapping_face == 5);
  CHECK(m[1].proposals_overlapping_face == 7);
  CHECK(m[2].proposals_overlapping_face == 3);
}
