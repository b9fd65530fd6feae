#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sizedl1/coco_eval.hpp"
#include "sizedl1/rng.hpp"

using namespace sizedl1::cocoeval;

namespace {

const std::string kFixtureGt = std::string(FIXTURE_DIR) + "/coco_fixture_gt.json";
const std::string kFixtureDets =
    std::string(FIXTURE_DIR) + "/coco_fixture_dets.json";

std::string write_temp(const std::string& name, const std::string& content) {
  const auto dir = std::filesystem::temp_directory_path() / "sizedl1_tests";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

GtAnnotation make_gt(std::int64_t id, std::int64_t image, std::int64_t cat,
                     std::array<double, 4> bbox, bool crowd = false) {
  GtAnnotation g;
  g.id = id;
  g.image_id = image;
  g.category_id = cat;
  g.bbox = bbox;
  g.area = bbox[2] * bbox[3];
  g.iscrowd = crowd;
  return g;
}

DetectionRecord make_det(std::int64_t image, std::int64_t cat,
                         std::array<double, 4> bbox, double score) {
  DetectionRecord d;
  d.image_id = image;
  d.category_id = cat;
  d.bbox = bbox;
  d.score = score;
  return d;
}

}  // namespace

TEST_CASE("bucket thresholds") {
  CHECK(bucket_of(1023.0) == SizeBucket::small);
  CHECK(bucket_of(5000.0) == SizeBucket::medium);
  CHECK(bucket_of(10000.0) == SizeBucket::large);
  // Boundary areas go to the lower bucket.
  CHECK(bucket_of(1024.0) == SizeBucket::small);
  CHECK(bucket_of(9216.0) == SizeBucket::medium);

  // Every area lands in exactly one of the three size buckets.
  sizedl1::rng::Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double area = rng.uniform(1.0, 2e4);
    int hits = 0;
    for (const auto b : {SizeBucket::small, SizeBucket::medium, SizeBucket::large}) {
      hits += in_bucket(b, area);
    }
    CHECK(hits == 1);
    CHECK(in_bucket(SizeBucket::all, area));
  }
}

TEST_CASE("load_gt accepts the minimal file") {
  const auto path = write_temp("minimal_gt.json", R"({
    "images": [{"id": 1}],
    "annotations": [{"id": 1, "image_id": 1, "category_id": 3,
                     "bbox": [0, 0, 10, 10], "area": 100, "iscrowd": 0}],
    "categories": [{"id": 3}]
  })");
  const auto gt = load_gt(path);
  CHECK(gt.annotations.size() == 1);
  CHECK(gt.image_ids == std::vector<std::int64_t>{1});
  CHECK(gt.category_ids == std::vector<std::int64_t>{3});
}

TEST_CASE("load_gt rejects malformed input with context") {
  CHECK_THROWS_AS(load_gt(write_temp("bad.json", "{ not json")), ParseError);

  CHECK_THROWS_WITH(
      load_gt(write_temp("no_images.json",
                         R"({"annotations": [], "categories": []})")),
      Catch::Matchers::ContainsSubstring("images"));

  CHECK_THROWS_WITH(
      load_gt(write_temp("no_bbox.json", R"({
        "images": [{"id": 1}],
        "annotations": [{"id": 1, "image_id": 1, "category_id": 1,
                         "area": 4, "iscrowd": 0}],
        "categories": [{"id": 1}]
      })")),
      Catch::Matchers::ContainsSubstring("bbox"));

  // Dangling ids name the offending id.
  CHECK_THROWS_WITH(
      load_gt(write_temp("dangling.json", R"({
        "images": [{"id": 1}],
        "annotations": [{"id": 7, "image_id": 99, "category_id": 1,
                         "bbox": [0, 0, 2, 2], "area": 4, "iscrowd": 0}],
        "categories": [{"id": 1}]
      })")),
      Catch::Matchers::ContainsSubstring("99"));
}

TEST_CASE("load_dets validates against the ground truth") {
  const auto gt = load_gt(kFixtureGt);

  const auto empty = load_dets(write_temp("empty_dets.json", "[]"), gt);
  CHECK(empty.empty());

  CHECK_THROWS_WITH(
      load_dets(write_temp("unknown_image.json", R"([
        {"image_id": 42, "category_id": 1, "bbox": [0, 0, 5, 5], "score": 0.5}
      ])"),
                gt),
      Catch::Matchers::ContainsSubstring("42"));

  CHECK_THROWS_AS(
      load_dets(write_temp("bad_score.json", R"([
        {"image_id": 1, "category_id": 1, "bbox": [0, 0, 5, 5], "score": 1.5}
      ])"),
                gt),
      ParseError);
}

TEST_CASE("ap on hand-built cases") {
  const std::vector<GtAnnotation> one_gt = {make_gt(1, 1, 1, {0, 0, 100, 100})};

  // Perfect single detection.
  const std::vector<DetectionRecord> perfect = {
      make_det(1, 1, {0, 0, 100, 100}, 0.9)};
  auto value = ap(perfect, one_gt, 0.5, SizeBucket::all);
  REQUIRE(value.has_value());
  CHECK(*value == 1.0);

  // High-scoring miss followed by a perfect hit: precision 1/2 at full
  // recall, so every interpolation point reads 0.5.
  const std::vector<DetectionRecord> two = {
      make_det(1, 1, {300, 300, 50, 50}, 0.9),
      make_det(1, 1, {0, 0, 100, 100}, 0.8)};
  value = ap(two, one_gt, 0.5, SizeBucket::all);
  REQUIRE(value.has_value());
  CHECK(*value == Catch::Approx(0.5).margin(1e-9));

  // No detections at all.
  value = ap({}, one_gt, 0.5, SizeBucket::all);
  REQUIRE(value.has_value());
  CHECK(*value == 0.0);

  // No countable ground truth: undefined, not zero.
  CHECK_FALSE(ap(perfect, one_gt, 0.5, SizeBucket::medium).has_value());
  const std::vector<GtAnnotation> crowd_only = {
      make_gt(1, 1, 1, {0, 0, 100, 100}, true)};
  CHECK_FALSE(ap(perfect, crowd_only, 0.5, SizeBucket::all).has_value());
}

TEST_CASE("crowd regions absorb detections without penalty") {
  const std::vector<GtAnnotation> gts = {
      make_gt(1, 1, 1, {0, 0, 100, 100}),
      make_gt(2, 1, 1, {300, 300, 200, 200}, true)};
  const std::vector<DetectionRecord> dets = {
      make_det(1, 1, {0, 0, 100, 100}, 0.9),
      make_det(1, 1, {310, 310, 80, 80}, 0.8)};  // inside the crowd region
  const auto value = ap(dets, gts, 0.5, SizeBucket::all);
  REQUIRE(value.has_value());
  CHECK(*value == 1.0);  // the crowd hit is ignored, not a false positive
}

TEST_CASE("ap depends on scores only through their ranking") {
  const auto gt = load_gt(kFixtureGt);
  auto dets = load_dets(kFixtureDets, gt);
  const auto base = map_by_size(dets, gt);
  for (auto& d : dets) d.score = 0.25 + d.score / 2.0;  // strictly monotone
  const auto transformed = map_by_size(dets, gt);
  CHECK(base.map_s == transformed.map_s);
  CHECK(base.map_m == transformed.map_m);
  CHECK(base.map_l == transformed.map_l);
  CHECK(base.map == transformed.map);
}

TEST_CASE("a top-scoring false positive cannot raise ap") {
  const auto gt = load_gt(kFixtureGt);
  auto dets = load_dets(kFixtureDets, gt);
  const auto base = map_by_size(dets, gt);
  dets.push_back(make_det(1, 1, {600, 10, 30, 30}, 1.0));
  const auto worse = map_by_size(dets, gt);
  CHECK(*worse.map <= *base.map);
  CHECK(*worse.map_s <= *base.map_s);
}

TEST_CASE("duplicating an image leaves ap unchanged") {
  std::vector<GtAnnotation> gts = {make_gt(1, 1, 1, {0, 0, 40, 40}),
                                   make_gt(2, 1, 1, {200, 200, 50, 50})};
  std::vector<DetectionRecord> dets = {
      make_det(1, 1, {2, 2, 40, 40}, 0.9),
      make_det(1, 1, {400, 0, 40, 40}, 0.8),
      make_det(1, 1, {201, 203, 50, 49}, 0.7)};
  const auto base = ap(dets, gts, 0.5, SizeBucket::all);

  for (const auto& g : gts) {
    auto copy = g;
    copy.image_id = 1000;
    copy.id += 1000;
    gts.push_back(copy);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    auto copy = dets[i];
    copy.image_id = 1000;
    dets.push_back(copy);
  }
  const auto doubled = ap(dets, gts, 0.5, SizeBucket::all);
  REQUIRE(base.has_value());
  REQUIRE(doubled.has_value());
  CHECK(*base == *doubled);
}

TEST_CASE("single-bucket datasets collapse the table") {
  const std::vector<GtAnnotation> gts = {make_gt(1, 1, 1, {0, 0, 20, 20}),
                                         make_gt(2, 1, 1, {100, 100, 25, 25})};
  const std::vector<DetectionRecord> dets = {
      make_det(1, 1, {1, 1, 20, 20}, 0.9),
      make_det(1, 1, {101, 99, 25, 26}, 0.8)};
  GtCollection gt;
  gt.image_ids = {1};
  gt.category_ids = {1};
  gt.annotations = gts;
  const auto table = map_by_size(dets, gt);
  CHECK_FALSE(table.map_m.has_value());
  CHECK_FALSE(table.map_l.has_value());
  REQUIRE(table.map_s.has_value());
  REQUIRE(table.map.has_value());
  CHECK(*table.map_s == *table.map);
}

TEST_CASE("fixture table matches the exhaustive oracle exactly") {
  const auto gt = load_gt(kFixtureGt);
  const auto dets = load_dets(kFixtureDets, gt);

  const auto impl = map_by_size(dets, gt);
  const auto oracle = oracles::oracle_map_by_size(dets, gt);
  REQUIRE(impl.map_s.has_value());
  REQUIRE(impl.map_m.has_value());
  REQUIRE(impl.map_l.has_value());
  REQUIRE(impl.map.has_value());
  CHECK(*impl.map_s == *oracle.map_s);
  CHECK(*impl.map_m == *oracle.map_m);
  CHECK(*impl.map_l == *oracle.map_l);
  CHECK(*impl.map == *oracle.map);

  // Frozen oracle values for this fixture.
  CHECK(*impl.map_s == Catch::Approx(0.43935643564356436).epsilon(1e-14));
  CHECK(*impl.map_m == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(*impl.map_l == Catch::Approx(0.85).epsilon(1e-14));
  CHECK(*impl.map == Catch::Approx(0.62079207920792068).epsilon(1e-14));

  // Every per-category, per-bucket, per-threshold cell agrees as well.
  for (const auto cat : gt.category_ids) {
    std::vector<GtAnnotation> cat_gts;
    std::vector<DetectionRecord> cat_dets;
    for (const auto& g : gt.annotations) {
      if (g.category_id == cat) cat_gts.push_back(g);
    }
    for (const auto& d : dets) {
      if (d.category_id == cat) cat_dets.push_back(d);
    }
    for (int b = 0; b < 4; ++b) {
      for (const double thr : default_iou_thresholds()) {
        const auto bucket = static_cast<SizeBucket>(b);
        const auto a = ap(cat_dets, cat_gts, thr, bucket);
        const auto o = oracles::oracle_ap(cat_dets, cat_gts, thr, bucket);
        REQUIRE(a.has_value() == o.has_value());
        if (a) CHECK(*a == *o);
      }
    }
  }
}

TEST_CASE("randomized one-to-one scenes agree with the oracle") {
  // Ground truths on a sparse grid with jittered detections, so every
  // detection overlaps at most one ground truth and the greedy matching is
  // unambiguous.
  sizedl1::rng::Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GtAnnotation> gts;
    std::vector<DetectionRecord> dets;
    const int n = 2 + static_cast<int>(rng.uniform() * 3.0);
    for (int i = 0; i < n; ++i) {
      const double x = 300.0 * i;
      const double y = 300.0 * (i % 2);
      const double w = rng.uniform(20.0, 120.0);
      const double h = rng.uniform(20.0, 120.0);
      gts.push_back(make_gt(i + 1, 1, 1, {x, y, w, h}, rng.uniform() < 0.15));
      if (rng.uniform() < 0.85) {
        dets.push_back(make_det(1, 1,
                                {x + rng.uniform(-8.0, 8.0),
                                 y + rng.uniform(-8.0, 8.0),
                                 w * rng.uniform(0.8, 1.2),
                                 h * rng.uniform(0.8, 1.2)},
                                rng.uniform(0.05, 0.95)));
      }
      if (rng.uniform() < 0.3) {  // stray detection far from everything
        dets.push_back(make_det(1, 1,
                                {x + 150.0, y + 150.0, rng.uniform(10.0, 60.0),
                                 rng.uniform(10.0, 60.0)},
                                rng.uniform(0.05, 0.95)));
      }
    }
    for (const double thr : {0.5, 0.75, 0.9}) {
      for (const auto bucket :
           {SizeBucket::small, SizeBucket::medium, SizeBucket::all}) {
        const auto a = ap(dets, gts, thr, bucket);
        const auto o = oracles::oracle_ap(dets, gts, thr, bucket);
        REQUIRE(a.has_value() == o.has_value());
        if (a) CHECK(*a == *o);
      }
    }
  }
}

TEST_CASE("only the top 100 detections per image are scored") {
  // A perfect detection ranked 101st within its image is truncated away.
  std::vector<GtAnnotation> gts = {make_gt(1, 1, 1, {0, 0, 100, 100})};
  std::vector<DetectionRecord> dets;
  for (int i = 0; i < 150; ++i) {
    dets.push_back(make_det(1, 1, {500.0, 500.0 , 10, 10}, 0.9 - i * 1e-4));
  }
  dets.push_back(make_det(1, 1, {0, 0, 100, 100}, 0.5));  // below the cut
  auto value = ap(dets, gts, 0.5, SizeBucket::all);
  REQUIRE(value.has_value());
  CHECK(*value == 0.0);

  // With only a handful of junk detections the perfect one survives.
  dets.resize(10);
  dets.push_back(make_det(1, 1, {0, 0, 100, 100}, 0.5));
  value = ap(dets, gts, 0.5, SizeBucket::all);
  REQUIRE(value.has_value());
  CHECK(*value > 0.0);
}

TEST_CASE("detections on images without ground truth count as misses") {
  const std::vector<GtAnnotation> gts = {make_gt(1, 1, 1, {0, 0, 50, 50})};
  const std::vector<DetectionRecord> dets = {
      make_det(1, 1, {0, 0, 50, 50}, 0.6),
      make_det(2, 1, {0, 0, 50, 50}, 0.9)};  // image 2 has no gt
  const auto value = ap(dets, gts, 0.5, SizeBucket::all);
  REQUIRE(value.has_value());
  CHECK(*value == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("table and csv formatting") {
  MapTable t;
  t.map_s = 0.5;
  t.map = 0.25;
  const auto table = format_table(t);
  CHECK(table.find("mAP_s") != std::string::npos);
  CHECK(table.find("0.5000") != std::string::npos);
  CHECK(table.find("-") != std::string::npos);

  std::ostringstream csv;
  write_csv(csv, t);
  CHECK(csv.str() == "mAP_s,mAP_m,mAP_l,mAP\n0.500000,,,0.250000\n");
}
