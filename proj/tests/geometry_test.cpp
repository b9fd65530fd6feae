#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "sizedl1/geometry.hpp"
#include "sizedl1/rng.hpp"

using namespace sizedl1::geometry;

namespace {

BoxCcwh random_box(sizedl1::rng::Rng& rng) {
  BoxCcwh b;
  b.w = rng.uniform(0.01, 0.5);
  b.h = rng.uniform(0.01, 0.5);
  b.cx = rng.uniform(0.25, 0.75);
  b.cy = rng.uniform(0.25, 0.75);
  return b;
}

}  // namespace

TEST_CASE("ccwh/xyxy conversion") {
  const auto unit = ccwh_to_xyxy({0.5, 0.5, 1.0, 1.0});
  CHECK(unit.x1 == 0.0);
  CHECK(unit.y1 == 0.0);
  CHECK(unit.x2 == 1.0);
  CHECK(unit.y2 == 1.0);

  const auto b = ccwh_to_xyxy({0.2, 0.3, 0.2, 0.1});
  CHECK(b.x1 == Catch::Approx(0.1).margin(1e-15));
  CHECK(b.y1 == Catch::Approx(0.25).margin(1e-15));
  CHECK(b.x2 == Catch::Approx(0.3).margin(1e-15));
  CHECK(b.y2 == Catch::Approx(0.35).margin(1e-15));
}

TEST_CASE("conversion round-trip is the identity") {
  sizedl1::rng::Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    BoxXyxy box;
    box.x1 = rng.uniform(0.0, 0.8);
    box.y1 = rng.uniform(0.0, 0.8);
    box.x2 = box.x1 + rng.uniform(0.01, 0.2);
    box.y2 = box.y1 + rng.uniform(0.01, 0.2);
    const auto back = ccwh_to_xyxy(xyxy_to_ccwh(box));
    CHECK(std::abs(back.x1 - box.x1) < 1e-12);
    CHECK(std::abs(back.y1 - box.y1) < 1e-12);
    CHECK(std::abs(back.x2 - box.x2) < 1e-12);
    CHECK(std::abs(back.y2 - box.y2) < 1e-12);
  }
}

TEST_CASE("iou basic cases") {
  const BoxXyxy a{0.0, 0.0, 1.0, 1.0};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BoxXyxy{2.0, 0.0, 3.0, 1.0}) == 0.0);

  const BoxXyxy c{0.0, 0.0, 2.0, 2.0};
  const BoxXyxy d{1.0, 1.0, 3.0, 3.0};
  CHECK(iou(c, d) == Catch::Approx(1.0 / 7.0).epsilon(1e-12));
  // Cross-check against the grid-rasterization area oracle.
  CHECK(iou(c, d) == Catch::Approx(oracles::grid_iou(c, d)).margin(2e-3));
}

TEST_CASE("giou basic cases") {
  const BoxXyxy a{0.0, 0.0, 1.0, 1.0};
  CHECK(giou(a, a) == 1.0);

  const BoxXyxy far{2.0, 0.0, 3.0, 1.0};
  CHECK(giou(a, far) == Catch::Approx(-1.0 / 3.0).epsilon(1e-12));
  CHECK(giou(a, far) == Catch::Approx(oracles::grid_giou(a, far)).margin(2e-3));

  const BoxXyxy c{0.0, 0.0, 2.0, 2.0};
  const BoxXyxy d{1.0, 1.0, 3.0, 3.0};
  CHECK(giou(c, d) == Catch::Approx(1.0 / 7.0 - 2.0 / 9.0).epsilon(1e-12));
  CHECK(giou(c, d) == Catch::Approx(oracles::grid_giou(c, d)).margin(2e-3));
}

TEST_CASE("iou and giou symmetry, ordering, and invariances") {
  sizedl1::rng::Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const auto a = ccwh_to_xyxy(random_box(rng));
    const auto b = ccwh_to_xyxy(random_box(rng));

    CHECK(iou(a, b) == iou(b, a));
    CHECK(giou(a, b) == giou(b, a));
    CHECK(giou(a, b) <= iou(a, b) + 1e-15);
    CHECK(iou(a, b) >= 0.0);
    CHECK(iou(a, b) <= 1.0);
    CHECK(giou(a, b) >= -1.0);

    for (const double s : {0.5, 2.0, 10.0}) {
      const BoxXyxy sa{s * a.x1, s * a.y1, s * a.x2, s * a.y2};
      const BoxXyxy sb{s * b.x1, s * b.y1, s * b.x2, s * b.y2};
      CHECK(std::abs(iou(sa, sb) - iou(a, b)) <= 1e-9);
      CHECK(std::abs(giou(sa, sb) - giou(a, b)) <= 1e-9);
    }

    const double tx = rng.uniform(-2.0, 2.0);
    const double ty = rng.uniform(-2.0, 2.0);
    const BoxXyxy ta{a.x1 + tx, a.y1 + ty, a.x2 + tx, a.y2 + ty};
    const BoxXyxy tb{b.x1 + tx, b.y1 + ty, b.x2 + tx, b.y2 + ty};
    CHECK(std::abs(iou(ta, tb) - iou(a, b)) <= 1e-9);
    CHECK(std::abs(giou(ta, tb) - giou(a, b)) <= 1e-9);
  }
}

TEST_CASE("giou equals iou exactly when the enclosing box is the union") {
  // Identical boxes and nested boxes sharing the enclosing rectangle.
  const BoxXyxy outer{0.0, 0.0, 1.0, 1.0};
  CHECK(giou(outer, outer) == iou(outer, outer));
  const BoxXyxy inner{0.0, 0.0, 1.0, 0.5};
  CHECK(giou(outer, inner) == iou(outer, inner));
}

TEST_CASE("validity predicates") {
  CHECK(valid(BoxCcwh{0.5, 0.5, 0.1, 0.1}));
  CHECK_FALSE(valid(BoxCcwh{0.5, 0.5, 0.0, 0.1}));
  CHECK_FALSE(valid(BoxCcwh{0.5, 0.5, -0.1, 0.1}));
  CHECK(valid(BoxXyxy{0.0, 0.0, 1.0, 1.0}));
  CHECK_FALSE(valid(BoxXyxy{1.0, 0.0, 1.0, 1.0}));
}
