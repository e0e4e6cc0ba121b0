#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "nms_oracle.hpp"
#include "pestdet/builders.hpp"
#include "pestdet/vision.hpp"

using namespace pestdet;

namespace {

Image random_image(int w, int h, int c, std::mt19937& rng, int lo = 0, int hi = 255) {
  Image img(w, h, c);
  std::uniform_int_distribution<int> d(lo, hi);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(d(rng));
  return img;
}

double channel_mean(const Image& img, int c) {
  double s = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) s += img.at(x, y, c);
  return s / (static_cast<double>(img.width) * img.height);
}

int count_nonzero(const Image& img) {
  return static_cast<int>(std::count_if(img.pixels.begin(), img.pixels.end(), [](auto p) { return p != 0; }));
}

/// Light paper with dark ellipses centered on the given points.
Image blob_scene(int w, int h, const std::vector<std::pair<int, int>>& centers) {
  Image img(w, h, 1, 200);
  for (const auto& [cx, cy] : centers) {
    for (int y = cy - 10; y <= cy + 10; ++y) {
      for (int x = cx - 16; x <= cx + 16; ++x) {
        const double u = (x - cx) / 15.0, v = (y - cy) / 7.0;
        if (u * u + v * v <= 1.0) img.at(x, y) = 50;
      }
    }
  }
  return img;
}

/// Says "moth" only for a tile whose dark pixels are centered in it.
double centered_blob_stub(const Tensor<float>& tile) {
  const int n = tile.dim(1);
  double count = 0, sx = 0, sy = 0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (tile.at(0, y, x) < 0.5f) {
        ++count;
        sx += x;
        sy += y;
      }
    }
  }
  if (count < 100) return 0.0;
  const double c = (n - 1) / 2.0;
  return std::hypot(sx / count - c, sy / count - c) < 6.0 ? 1.0 : 0.0;
}

/// Continuous score: fraction of dark pixels.
double darkness_stub(const Tensor<float>& tile) {
  return (tile.values().array() < 0.5f).cast<double>().mean();
}

}  // namespace

TEST_CASE("PNM round trip and errors") {
  std::mt19937 rng(1);
  for (int c : {1, 3}) {
    const Image img = random_image(7, 5, c, rng);
    CHECK(decode_pnm(encode_pnm(img)) == img);
  }
  const std::string text = "P5\n# comment\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(10);
  bytes.push_back(20);
  const Image g = decode_pnm(bytes);
  CHECK(g.width == 2);
  CHECK(g.at(1, 0) == 20);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_pnm(bytes), FormatError);
  const std::string wide = "P5 1 1 65535\n";
  CHECK_THROWS_AS(decode_pnm(std::vector<std::uint8_t>(wide.begin(), wide.end())), FormatError);
  CHECK_THROWS_AS(read_pnm("/nonexistent/x.pgm"), IoError);

  const auto path = std::filesystem::temp_directory_path() / "pestdet_vision_rt.ppm";
  const Image rgb = random_image(4, 3, 3, rng);
  write_pnm(rgb, path);
  CHECK(read_pnm(path) == rgb);
  std::filesystem::remove(path);
}

TEST_CASE("color_correct") {
  SUBCASE("uniform gray is a fixed point") {
    const Image gray(9, 4, 1, 128);
    CHECK(color_correct(gray) == gray);
    const Image rgb(9, 4, 3, 77);
    CHECK(color_correct(rgb) == rgb);
  }
  SUBCASE("contrast stretch") {
    std::mt19937 rng(2);
    Image img = random_image(16, 16, 1, rng, 50, 150);
    img.at(0, 0) = 50;
    img.at(1, 0) = 150;
    const Image out = color_correct(img);
    CHECK(*std::min_element(out.pixels.begin(), out.pixels.end()) == 0);
    CHECK(*std::max_element(out.pixels.begin(), out.pixels.end()) == 255);
    // linear: v -> (v - 50) * 255 / 100
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      CHECK(out.pixels[i] == std::lround((img.pixels[i] - 50) * 2.55));
    }
  }
  SUBCASE("red cast is balanced") {
    std::mt19937 rng(3);
    Image img(20, 20, 3);
    std::uniform_int_distribution<int> d(-30, 30);
    for (int y = 0; y < 20; ++y) {
      for (int x = 0; x < 20; ++x) {
        const int base = 100 + d(rng);
        img.at(x, y, 0) = static_cast<std::uint8_t>(base + 60);
        img.at(x, y, 1) = static_cast<std::uint8_t>(base);
        img.at(x, y, 2) = static_cast<std::uint8_t>(base - 10);
      }
    }
    const Image out = color_correct(img);
    const double r = channel_mean(out, 0), g = channel_mean(out, 1), b = channel_mean(out, 2);
    CHECK(std::abs(r - g) <= 1.0);
    CHECK(std::abs(r - b) <= 1.0);
    CHECK(std::abs(g - b) <= 1.0);
  }
}

TEST_CASE("to_grayscale uses luminance weights") {
  Image img(3, 1, 3);
  img.at(0, 0, 0) = 255;
  img.at(1, 0, 1) = 255;
  img.at(2, 0, 2) = 255;
  const Image g = to_grayscale(img);
  CHECK(g.channels == 1);
  CHECK(g.at(0, 0) == 76);   // 0.299 * 255
  CHECK(g.at(1, 0) == 150);  // 0.587 * 255
  CHECK(g.at(2, 0) == 29);   // 0.114 * 255
}

TEST_CASE("gaussian_blur") {
  const auto k = gaussian_kernel(1.4, 5);
  const std::vector<double> expected = {0.1102095, 0.236912, 0.3057571, 0.236912, 0.1102095};
  for (std::size_t i = 0; i < 5; ++i) CHECK(k[i] == doctest::Approx(expected[i]).epsilon(1e-6));
  CHECK_THROWS_AS(gaussian_kernel(0.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_kernel(1.0, 4), std::invalid_argument);

  SUBCASE("constant image unchanged") {
    const Image c(8, 6, 3, 93);
    CHECK(gaussian_blur(c) == c);
  }
  SUBCASE("impulse response is the kernel") {
    Image img(11, 11, 1);
    img.at(5, 5) = 255;
    const Image out = gaussian_blur(img);
    for (int y = 0; y < 11; ++y) {
      for (int x = 0; x < 11; ++x) {
        const int dx = x - 5, dy = y - 5;
        const double v = std::abs(dx) <= 2 && std::abs(dy) <= 2
                             ? 255.0 * expected[static_cast<std::size_t>(dx + 2)] * expected[static_cast<std::size_t>(dy + 2)]
                             : 0.0;
        CHECK(out.at(x, y) == std::lround(v));
      }
    }
  }
  SUBCASE("total intensity preserved") {
    std::mt19937 rng(4);
    Image img(40, 40, 1);
    for (int y = 10; y < 30; ++y)
      for (int x = 10; x < 30; ++x) img.at(x, y) = static_cast<std::uint8_t>(rng() % 256);
    const Image out = gaussian_blur(img);
    const double before = std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0);
    const double after = std::accumulate(out.pixels.begin(), out.pixels.end(), 0.0);
    CHECK(std::abs(after - before) / before < 0.005);
  }
}

TEST_CASE("canny") {
  CHECK(count_nonzero(canny(Image(20, 20, 1, 90))) == 0);
  CHECK_THROWS_AS(canny(Image(4, 4, 3)), DimensionError);
  CHECK_THROWS_AS(canny(Image(4, 4, 1), 0, 10), std::invalid_argument);
  CHECK_THROWS_AS(canny(Image(4, 4, 1), 60, 50), std::invalid_argument);
  CHECK_THROWS_AS(canny(Image(4, 4, 1), 50, 256), std::invalid_argument);

  SUBCASE("vertical step gives a one-pixel line") {
    Image img(20, 16, 1);
    for (int y = 0; y < 16; ++y)
      for (int x = 10; x < 20; ++x) img.at(x, y) = 200;
    const Image e = canny(img);
    for (int y = 0; y < 16; ++y) {
      int on = 0;
      for (int x = 0; x < 20; ++x) {
        CHECK((e.at(x, y) == 0 || e.at(x, y) == 255));
        on += e.at(x, y) != 0;
      }
      CHECK(on == 1);
      CHECK(e.at(9, y) == 255);
    }
  }
  SUBCASE("gentle ramp stays below the low threshold") {
    Image img(30, 10, 1);
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 30; ++x) img.at(x, y) = static_cast<std::uint8_t>(4 * x);  // Sobel 32 < 50
    CHECK(count_nonzero(canny(img)) == 0);
  }
  SUBCASE("hysteresis keeps weak edges only when connected to strong ones") {
    // Step at x = 9|10 whose contrast fades down the image: 45 levels at the
    // top (Sobel 180, strong), below 37.5 from row 7 (weak), below 12.5 from
    // row 28. A separate 20-level step at x = 29|30 is weak everywhere.
    Image img(40, 30, 1);
    for (int y = 0; y < 30; ++y) {
      for (int x = 0; x < 40; ++x) {
        int v = 100;
        if (x < 10) v = static_cast<int>(std::lround(105 + 1.2 * y));
        if (x >= 10 && x < 20) v = 150;
        if (x >= 30) v = 120;
        img.at(x, y) = static_cast<std::uint8_t>(v);
      }
    }
    const Image e = canny(img);
    for (int y = 1; y <= 25; ++y) CHECK(e.at(9, y) == 255);
    for (int y = 0; y < 30; ++y) {
      CHECK(e.at(29, y) == 0);
      CHECK(e.at(30, y) == 0);
    }
  }
}

TEST_CASE("extract_rois") {
  const Image img(520, 520, 1);
  CHECK(extract_rois(img, Image(520, 520, 1)).empty());
  const auto all = extract_rois(img, Image(520, 520, 1), 52, 26, 0.0);
  CHECK(all.size() == 361);
  for (const auto& c : all) {
    CHECK(c.probability == -1.0);
    CHECK(c.x + c.size <= 520);
    CHECK(c.y + c.size <= 520);
  }
  CHECK_THROWS_AS(extract_rois(Image(40, 60, 1), Image(40, 60, 1)), DimensionError);
  CHECK_THROWS_AS(extract_rois(img, Image(10, 10, 1)), DimensionError);

  Image edges(200, 200, 1);
  for (int y = 120; y < 130; ++y)
    for (int x = 80; x < 90; ++x) edges.at(x, y) = 255;
  const auto gated = extract_rois(Image(200, 200, 1), edges);
  REQUIRE_FALSE(gated.empty());
  bool contains = false;
  for (const auto& c : gated) {
    CHECK(edge_density(edges, c) >= 0.02);
    contains |= c.x <= 80 && c.x + c.size >= 90 && c.y <= 120 && c.y + c.size >= 130;
  }
  CHECK(contains);
}

TEST_CASE("classify_rois") {
  std::mt19937 rng(5);
  const Image img = random_image(120, 100, 3, rng);
  const auto cands = extract_rois(img, Image(120, 100, 1), 20, 10, 0.0);
  CHECK(classify_rois({}, img, TileClassifier([](const Tensor<float>&) { return 0.7; })).empty());

  const auto constant = classify_rois(cands, img, TileClassifier([](const Tensor<float>&) { return 0.7; }));
  REQUIRE(constant.size() == cands.size());
  for (const auto& c : constant) CHECK(c.probability == 0.7);

  const auto serial = classify_rois(cands, img, TileClassifier(darkness_stub), 1);
  const auto parallel = classify_rois(cands, img, TileClassifier(darkness_stub), 3);
  CHECK(serial == parallel);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    CHECK(serial[i].x == cands[i].x);
    CHECK(serial[i].y == cands[i].y);
  }

  const ModelGraph lenet = build_lenet5();
  CHECK_THROWS_AS(classify_rois(cands, img, lenet), ModelError);
  const auto big = extract_rois(img, Image(120, 100, 1), 52, 26, 0.0);
  const auto scored = classify_rois(big, img, lenet, 2);
  for (const auto& c : scored) CHECK((c.probability >= 0.0 && c.probability <= 1.0));
}

TEST_CASE("nms examples") {
  CHECK(nms({{0, 0, 10, 0.4}}).size() == 1);
  const auto two = nms({{0, 0, 10, 0.8}, {0, 0, 10, 0.9}});
  REQUIRE(two.size() == 1);
  CHECK(two[0].probability == 0.9);
  const std::vector<RoiCandidate> apart = {{0, 0, 10, 0.1}, {20, 0, 10, 0.9}, {0, 20, 10, 0.5}};
  CHECK(nms(apart) == apart);
  CHECK_THROWS_AS(nms({{0, 0, 10, -1.0}}), std::invalid_argument);

  // equal scores: the raster-first window wins
  const auto tie = nms({{10, 0, 10, 0.5}, {5, 0, 10, 0.5}});
  REQUIRE(tie.size() == 1);
  CHECK(tie[0].x == 5);

  // IoU of windows offset by half a side is 1/3
  CHECK(iou({0, 0, 52, 0}, {26, 0, 52, 0}) == doctest::Approx(1.0 / 3.0));
  CHECK(iou({0, 0, 52, 0}, {26, 26, 52, 0}) == doctest::Approx(676.0 / 4732.0));
}

TEST_CASE("nms properties on random candidate sets") {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const auto c = oracle::random_candidates(rng);
    const double threshold = (trial % 5) * 0.2;
    const auto kept = nms(c, threshold);
    const std::string violation = oracle::nms_violation(c, kept, threshold);
    INFO("trial ", trial, ": ", violation);
    CHECK(violation.empty());

    const auto local = nms(c, threshold, NmsMode::grid_neighbor);
    CHECK(nms(local, threshold, NmsMode::grid_neighbor) == local);
    for (std::size_t i = 0; i < local.size(); ++i)
      for (std::size_t j = i + 1; j < local.size(); ++j) CHECK(iou(local[i], local[j]) == 0.0);
  }
}

TEST_CASE("detect on blank and planted scenes") {
  const TileClassifier stub(centered_blob_stub);
  SUBCASE("blank image") {
    const Image blank(520, 520, 1, 180);
    const auto r = detect(blank, stub);
    CHECK(r.detections.empty());
    CHECK(r.annotated == to_rgb(blank));
    const auto paper = synthesize_scene(520, 520, 0, 0, 77);
    CHECK(detect(paper.image, stub).detections.empty());
  }
  SUBCASE("five planted blobs and a perfect stub") {
    const std::vector<std::pair<int, int>> centers = {{52, 52}, {208, 78}, {390, 156}, {130, 338}, {416, 442}};
    const Image scene = blob_scene(520, 520, centers);
    const auto r = detect(scene, stub);
    CHECK(count_label(r.detections, TileClass::codling_moth) == 5);
    for (const auto& d : r.detections) {
      CHECK(d.roi.x >= 0);
      CHECK(d.roi.y >= 0);
      CHECK(d.roi.x + d.roi.size <= 520);
      CHECK(d.roi.y + d.roi.size <= 520);
      CHECK((d.label == TileClass::codling_moth) == (d.roi.probability >= 0.5));
      if (d.label != TileClass::codling_moth) continue;
      const bool near = std::any_of(centers.begin(), centers.end(), [&](const auto& c) {
        return std::abs(d.roi.x + 26 - c.first) <= 26 && std::abs(d.roi.y + 26 - c.second) <= 26;
      });
      CHECK(near);
    }

    // Red outline on the moth boxes, the rest of the image untouched.
    const auto& moth = *std::find_if(r.detections.begin(), r.detections.end(),
                                     [](const Detection& d) { return d.label == TileClass::codling_moth; });
    CHECK(r.annotated.at(moth.roi.x, moth.roi.y, 0) == 255);
    CHECK(r.annotated.at(moth.roi.x + 1, moth.roi.y + 1, 1) == 0);

    // Masking the boxes back out reproduces the detections.
    Image masked = r.annotated;
    const Image original = to_rgb(scene);
    for (std::size_t i = 0; i < masked.pixels.size(); ++i) {
      if (masked.pixels[i] != original.pixels[i]) masked.pixels[i] = original.pixels[i];
    }
    CHECK(detect(masked, stub).detections.size() == r.detections.size());

    DetectOptions late;
    late.gate_before_classify = false;
    const auto r2 = detect(scene, stub, late);
    CHECK(r2.windows_classified == 361);
    CHECK(r2.windows_classified > r.windows_classified);
    REQUIRE(r2.detections.size() == r.detections.size());
    for (std::size_t i = 0; i < r.detections.size(); ++i) CHECK(r2.detections[i].roi == r.detections[i].roi);
  }
}

TEST_CASE("detect is deterministic and monotone in the threshold") {
  const auto scene = synthesize_scene(312, 260, 3, 3, 12);
  const TileClassifier stub(darkness_stub);
  const auto a = detect(scene.image, stub);
  const auto b = detect(scene.image, stub);
  REQUIRE(a.detections.size() == b.detections.size());
  CHECK(a.annotated == b.annotated);
  int previous = 1 << 30;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    DetectOptions o;
    o.threshold = t;
    const int moths = count_label(detect(scene.image, stub, o).detections, TileClass::codling_moth);
    CHECK(moths <= previous);
    previous = moths;
  }
}

TEST_CASE("detections CSV") {
  const std::vector<Detection> d = {{{26, 52, 52, 0.875}, TileClass::codling_moth},
                                    {{0, 0, 52, 0.125}, TileClass::general_insect}};
  CHECK(detections_csv(d) ==
        "x,y,size,probability,class\n26,52,52,0.875000,codling_moth\n0,0,52,0.125000,general_insect\n");
  CHECK(detections_csv({}) == "x,y,size,probability,class\n");
}
