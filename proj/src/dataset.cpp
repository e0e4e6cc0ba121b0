#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "pestdet/trainer.hpp"

namespace pestdet {

const char* to_string(TileClass c) {
  return c == TileClass::codling_moth ? "codling_moth" : "general_insect";
}

Tensor<float> tile_tensor(const Image& gray) {
  if (gray.channels != 1) throw DimensionError("tiles must be grayscale");
  Tensor<float> t({1, gray.height, gray.width});
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    t[static_cast<Eigen::Index>(i)] = static_cast<float>(gray.pixels[i]) / 255.0f;
  }
  return t;
}

Image tile_image(const Tensor<float>& tile) {
  require_rank(tile, 3, "tile_image");
  Image img(tile.dim(2), tile.dim(1), 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = std::clamp(tile[static_cast<Eigen::Index>(i)], 0.0f, 1.0f);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return img;
}

ClassCounts count_classes(const std::vector<LabeledTile>& tiles) {
  ClassCounts c;
  for (const auto& t : tiles) {
    (t.label == TileClass::codling_moth ? c.codling_moth : c.general_insect) += 1;
  }
  return c;
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Coverage in [0,1] for a soft-edged shape given a signed distance-like
/// value in pixels (positive inside).
double coverage(double inside_px) { return std::clamp(inside_px + 0.5, 0.0, 1.0); }

struct Canvas {
  int width, height;
  std::vector<double> value;

  Canvas(int w, int h) : width(w), height(h), value(static_cast<std::size_t>(w) * h) {}

  void blend(int x, int y, double v, double alpha) {
    double& p = value[static_cast<std::size_t>(y) * width + x];
    p = p * (1.0 - alpha) + v * alpha;
  }
};

/// Pixel range of a square of half-side `r` around (cx, cy), clipped.
struct Box {
  int x0, y0, x1, y1;
};
Box around(const Canvas& c, double cx, double cy, double r) {
  return {std::max(0, static_cast<int>(cx - r)), std::max(0, static_cast<int>(cy - r)),
          std::min(c.width - 1, static_cast<int>(cx + r) + 1),
          std::min(c.height - 1, static_cast<int>(cy + r) + 1)};
}

void draw_moth(Canvas& c, double cx, double cy, std::mt19937_64& rng) {
  const double theta = uniform(rng, 0, std::numbers::pi);
  const double a = uniform(rng, 13, 17), b = uniform(rng, 6.5, 8.5);
  const double tone = uniform(rng, 0.15, 0.35);
  const double band_period = uniform(rng, 3.5, 5.5), band_phase = uniform(rng, 0, 6.28);
  const double ct = std::cos(theta), st = std::sin(theta);
  const Box box = around(c, cx, cy, a + 2);
  for (int y = box.y0; y <= box.y1; ++y) {
    for (int x = box.x0; x <= box.x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
      const double r = std::sqrt(u * u / (a * a) + v * v / (b * b));
      const double alpha = coverage((1.0 - r) * b);
      if (alpha <= 0.0) continue;
      double shade = tone + 0.08 * std::sin(2.0 * std::numbers::pi * u / band_period + band_phase);
      if (u > 0.55 * a) shade -= 0.1;              // dark wing-tip patch
      if (std::abs(v) < 1.0) shade += 0.07;         // wing fold
      c.blend(x, y, std::clamp(shade, 0.0, 1.0), alpha);
    }
  }
}

void draw_insect(Canvas& c, double cx, double cy, std::mt19937_64& rng) {
  const double tone = uniform(rng, 0.2, 0.55);
  const double heading = uniform(rng, 0, 2 * std::numbers::pi);
  const bool elongated = uniform(rng, 0, 1) < 0.4;

  struct Lobe { double x, y, r; };
  std::vector<Lobe> lobes;
  const int n = uniform_int(rng, 3, 5);
  for (int i = 0; i < n; ++i) {
    double lx, ly;
    if (elongated) {
      const double t = (i - (n - 1) / 2.0) * uniform(rng, 3.5, 5.0);
      lx = cx + t * std::cos(heading);
      ly = cy + t * std::sin(heading);
    } else {
      lx = cx + uniform(rng, -7, 7);
      ly = cy + uniform(rng, -7, 7);
    }
    lobes.push_back({lx, ly, uniform(rng, 3, 6.5)});
  }
  struct Leg { double x0, y0, x1, y1; };
  std::vector<Leg> legs;
  const int m = uniform_int(rng, 4, 6);
  for (int i = 0; i < m; ++i) {
    const double ang = uniform(rng, 0, 2 * std::numbers::pi), len = uniform(rng, 8, 14);
    legs.push_back({cx, cy, cx + len * std::cos(ang), cy + len * std::sin(ang)});
  }
  const Box box = around(c, cx, cy, 24);
  for (int y = box.y0; y <= box.y1; ++y) {
    for (int x = box.x0; x <= box.x1; ++x) {
      double inside = -1e9;
      for (const auto& l : lobes) inside = std::max(inside, l.r - std::hypot(x - l.x, y - l.y));
      for (const auto& g : legs) {
        const double vx = g.x1 - g.x0, vy = g.y1 - g.y0;
        const double t = std::clamp(((x - g.x0) * vx + (y - g.y0) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
        inside = std::max(inside, 0.6 - std::hypot(x - g.x0 - t * vx, y - g.y0 - t * vy));
      }
      const double alpha = coverage(inside);
      if (alpha > 0.0) c.blend(x, y, tone, alpha);
    }
  }
}

}  // namespace

namespace {

Canvas trap_paper(int width, int height, std::mt19937_64& rng) {
  Canvas c(width, height);
  const double base = uniform(rng, 0.72, 0.92);
  const double gx = uniform(rng, -0.05, 0.05), gy = uniform(rng, -0.05, 0.05);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      c.value[static_cast<std::size_t>(y) * width + x] =
          base + gx * (x - width / 2.0) / width + gy * (y - height / 2.0) / height;
    }
  }
  return c;
}

void draw(TileClass label, Canvas& c, double cx, double cy, std::mt19937_64& rng) {
  if (label == TileClass::codling_moth) {
    draw_moth(c, cx, cy, rng);
  } else {
    draw_insect(c, cx, cy, rng);
  }
}

Image quantize_with_noise(const Canvas& c, std::mt19937_64& rng) {
  const double sigma = uniform(rng, 0.02, 0.05);
  std::normal_distribution<double> noise(0.0, sigma);
  Image img(c.width, c.height, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = std::clamp(c.value[i] + noise(rng), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

}  // namespace

Image synthesize_tile(TileClass label, std::mt19937_64& rng, int size) {
  Canvas c = trap_paper(size, size, rng);
  const double cx = size / 2.0 + uniform(rng, -kTileJitter, kTileJitter);
  const double cy = size / 2.0 + uniform(rng, -kTileJitter, kTileJitter);
  draw(label, c, cx, cy, rng);
  return quantize_with_noise(c, rng);
}

TrapScene synthesize_scene(int width, int height, int moths, int insects, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Canvas c = trap_paper(width, height, rng);
  TrapScene scene;
  const double margin = 30.0, spacing = 64.0;
  for (int i = 0; i < moths + insects; ++i) {
    const TileClass label = i < moths ? TileClass::codling_moth : TileClass::general_insect;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double cx = uniform(rng, margin, width - margin);
      const double cy = uniform(rng, margin, height - margin);
      const bool clear = std::none_of(scene.planted.begin(), scene.planted.end(), [&](const auto& p) {
        return std::hypot(p.x - cx, p.y - cy) < spacing;
      });
      if (clear) {
        draw(label, c, cx, cy, rng);
        scene.planted.push_back({cx, cy, label});
        break;
      }
    }
  }
  scene.image = quantize_with_noise(c, rng);
  return scene;
}

std::vector<LabeledTile> synthetic_tiles(int moths, int insects, std::uint64_t seed, int size) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledTile> tiles;
  tiles.reserve(static_cast<std::size_t>(moths + insects));
  for (int i = 0; i < std::max(moths, insects); ++i) {
    if (i < moths) {
      tiles.push_back({tile_tensor(synthesize_tile(TileClass::codling_moth, rng, size)),
                       TileClass::codling_moth});
    }
    if (i < insects) {
      tiles.push_back({tile_tensor(synthesize_tile(TileClass::general_insect, rng, size)),
                       TileClass::general_insect});
    }
  }
  return tiles;
}

DatasetSplit synthetic_benchmark(int train, int test, std::uint64_t seed) {
  DatasetSplit split;
  split.train = synthetic_tiles(train / 2, train - train / 2, seed);
  split.test = synthetic_tiles(test / 2, test - test / 2, seed ^ 0x9E3779B97F4A7C15ULL);
  split.test_fraction = static_cast<double>(test) / (train + test);
  return split;
}

DatasetSplit split_dataset(std::vector<LabeledTile> tiles, double test_fraction,
                           std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw std::invalid_argument("test fraction must be in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  DatasetSplit split;
  split.test_fraction = test_fraction;
  for (TileClass cls : {TileClass::codling_moth, TileClass::general_insect}) {
    std::vector<LabeledTile> group;
    for (auto& t : tiles) {
      if (t.label == cls) group.push_back(std::move(t));
    }
    std::shuffle(group.begin(), group.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * group.size()));
    for (std::size_t i = 0; i < group.size(); ++i) {
      (i < n_test ? split.test : split.train).push_back(std::move(group[i]));
    }
  }
  std::shuffle(split.train.begin(), split.train.end(), rng);
  std::shuffle(split.test.begin(), split.test.end(), rng);
  return split;
}

std::vector<LabeledTile> load_tile_directory(const std::filesystem::path& root) {
  std::vector<LabeledTile> tiles;
  for (TileClass cls : {TileClass::codling_moth, TileClass::general_insect}) {
    const auto dir = root / to_string(cls);
    if (!std::filesystem::is_directory(dir)) {
      throw IoError("dataset directory '" + dir.string() + "' does not exist");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const Image img = read_pnm(f);
      if (img.channels != 1) throw FormatError(f.string() + ": tiles must be grayscale PGM");
      if (!tiles.empty() && tiles.front().image.shape() != Shape{1, img.height, img.width}) {
        throw FormatError(f.string() + ": tile size differs from the rest of the dataset");
      }
      tiles.push_back({tile_tensor(img), cls});
    }
  }
  return tiles;
}

void save_tile_directory(const std::vector<LabeledTile>& tiles, const std::filesystem::path& root) {
  int counters[2] = {0, 0};
  for (TileClass cls : {TileClass::codling_moth, TileClass::general_insect}) {
    std::error_code ec;
    std::filesystem::create_directories(root / to_string(cls), ec);
    if (ec) throw IoError("cannot create '" + (root / to_string(cls)).string() + "': " + ec.message());
  }
  for (const auto& t : tiles) {
    int& n = counters[static_cast<int>(t.label)];
    char name[32];
    std::snprintf(name, sizeof name, "%05d.pgm", n++);
    write_pnm(tile_image(t.image), root / to_string(t.label) / name);
  }
}

bool TileTransform::is_identity() const {
  return shift_x == 0 && shift_y == 0 && !flip_h && !flip_v && quarter_turns % 4 == 0 &&
         angle_deg == 0.0 && zoom == 1.0;
}

TileTransform random_transform(std::mt19937_64& rng) {
  TileTransform t;
  t.shift_x = uniform_int(rng, -4, 4);
  t.shift_y = uniform_int(rng, -4, 4);
  t.flip_h = uniform_int(rng, 0, 1) == 1;
  t.flip_v = uniform_int(rng, 0, 1) == 1;
  t.quarter_turns = uniform_int(rng, 0, 3);
  t.angle_deg = uniform(rng, -15.0, 15.0);
  t.zoom = uniform(rng, 0.9, 1.1);
  return t;
}

Tensor<float> apply_transform(const Tensor<float>& tile, const TileTransform& t) {
  require_rank(tile, 3, "apply_transform");
  if (t.is_identity()) return tile;
  const int channels = tile.dim(0), h = tile.dim(1), w = tile.dim(2);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double rad = t.angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  Tensor<float> out(tile.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Undo, in reverse order: shift, zoom, small rotation, quarter turns, flips.
      double px = x - t.shift_x - cx, py = y - t.shift_y - cy;
      px /= t.zoom;
      py /= t.zoom;
      if (t.angle_deg != 0.0) {
        const double rx = ca * px + sa * py, ry = -sa * px + ca * py;
        px = rx;
        py = ry;
      }
      for (int q = 0; q < ((t.quarter_turns % 4) + 4) % 4; ++q) {
        const double rx = -py, ry = px;
        px = rx;
        py = ry;
      }
      if (t.flip_h) px = -px;
      if (t.flip_v) py = -py;
      const double sx = std::clamp(px + cx, 0.0, w - 1.0), sy = std::clamp(py + cy, 0.0, h - 1.0);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < channels; ++c) {
        const double v00 = tile.at(c, y0, x0), v01 = tile.at(c, y0, x1);
        const double v10 = tile.at(c, y1, x0), v11 = tile.at(c, y1, x1);
        const double top = fx == 0.0 ? v00 : v00 + (v01 - v00) * fx;
        const double bottom = fx == 0.0 ? v10 : v10 + (v11 - v10) * fx;
        out.at(c, y, x) = static_cast<float>(fy == 0.0 ? top : top + (bottom - top) * fy);
      }
    }
  }
  return out;
}

std::vector<LabeledTile> augment(const std::vector<LabeledTile>& tiles, int factor,
                                 std::uint64_t seed) {
  if (factor < 1) throw std::invalid_argument("augmentation factor must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<LabeledTile> out;
  out.reserve(tiles.size() * static_cast<std::size_t>(factor));
  for (const auto& tile : tiles) {
    out.push_back(tile);
    for (int k = 1; k < factor; ++k) {
      out.push_back({apply_transform(tile.image, random_transform(rng)), tile.label});
    }
  }
  return out;
}

}  // namespace pestdet
