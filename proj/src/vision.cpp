#include "pestdet/vision.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <memory>
#include <numeric>
#include <thread>

namespace pestdet {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

void require_gray(const Image& img, const char* what) {
  if (img.channels != 1) {
    throw DimensionError(std::string(what) + " needs a grayscale image, got " +
                         std::to_string(img.channels) + " channels");
  }
}

}  // namespace

Image color_correct(const Image& img) {
  const int c = img.channels;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (n == 0) return img;

  std::vector<double> v(img.pixels.begin(), img.pixels.end());
  if (c == 3) {
    std::array<double, 3> mean{};
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) mean[k] += v[i * 3 + k];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    const double gray = (mean[0] + mean[1] + mean[2]) / 3.0;
    for (int k = 0; k < 3; ++k) {
      if (mean[k] <= 0.0) continue;
      const double scale = gray / mean[k];
      for (std::size_t i = 0; i < n; ++i) v[i * 3 + k] *= scale;
    }
  }

  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  Image out = img;
  if (hi - lo < 1e-9) {
    for (std::size_t i = 0; i < v.size(); ++i) out.pixels[i] = to_byte(v[i]);
    return out;
  }
  const double gain = 255.0 / (hi - lo);
  for (std::size_t i = 0; i < v.size(); ++i) out.pixels[i] = to_byte((v[i] - lo) * gain);
  return out;
}

Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw DimensionError("expected 1 or 3 channels");
  Image out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      out.at(x, y) = to_byte(0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2));
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma, int size) {
  if (!(sigma > 0.0)) throw std::invalid_argument("Gaussian sigma must be positive");
  if (size < 1 || size % 2 == 0) throw std::invalid_argument("Gaussian kernel size must be odd and positive");
  const int r = size / 2;
  std::vector<double> k(static_cast<std::size_t>(size));
  for (int i = -r; i <= r; ++i) k[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (auto& w : k) w /= sum;
  return k;
}

Image gaussian_blur(const Image& img, double sigma, int size) {
  const auto k = gaussian_kernel(sigma, size);
  const int r = size / 2, w = img.width, h = img.height, c = img.channels;
  std::vector<double> tmp(img.pixels.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * img.at(clamp_index(x + i, w), y, ch);
        tmp[img.index(x, y, ch)] = s;
      }
    }
  }
  Image out(w, h, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) {
          s += k[static_cast<std::size_t>(i + r)] * tmp[img.index(x, clamp_index(y + i, h), ch)];
        }
        out.at(x, y, ch) = to_byte(s);
      }
    }
  }
  return out;
}

Image canny(const Image& gray, int low, int high) {
  require_gray(gray, "canny");
  if (!(0 < low && low < high && high <= 255)) {
    throw std::invalid_argument("canny thresholds must satisfy 0 < low < high <= 255");
  }
  const int w = gray.width, h = gray.height;
  auto px = [&](int x, int y) -> double { return gray.at(clamp_index(x, w), clamp_index(y, h)); };
  auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };

  std::vector<double> mag(static_cast<std::size_t>(w) * h);
  std::vector<std::uint8_t> dir(mag.size());  // 0: E-W, 1: NE-SW diagonal, 2: N-S, 3: other diagonal
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      mag[idx(x, y)] = std::hypot(gx, gy);
      double angle = std::atan2(gy, gx) * 180.0 / 3.14159265358979323846;
      if (angle < 0) angle += 180.0;
      dir[idx(x, y)] = static_cast<std::uint8_t>(static_cast<int>(std::floor((angle + 22.5) / 45.0)) % 4);
    }
  }

  // Neighbor offsets along the gradient for each direction bin (y grows down).
  constexpr std::array<std::array<int, 2>, 4> step = {{{1, 0}, {1, 1}, {0, 1}, {-1, 1}}};
  auto mag_at = [&](int x, int y) { return gray.contains(x, y) ? mag[idx(x, y)] : 0.0; };
  std::vector<double> thin(mag.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double m = mag[idx(x, y)];
      if (m <= 0.0) continue;
      const auto [dx, dy] = step[dir[idx(x, y)]];
      // Strict on one side so a plateau two pixels wide keeps one pixel.
      if (m > mag_at(x - dx, y - dy) && m >= mag_at(x + dx, y + dy)) thin[idx(x, y)] = m;
    }
  }

  Image edges(w, h, 1);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < thin.size(); ++i) {
    if (thin[i] >= high) {
      edges.pixels[i] = 255;
      stack.push_back(i);
    }
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (!edges.contains(nx, ny)) continue;
        const std::size_t j = idx(nx, ny);
        if (edges.pixels[j] == 0 && thin[j] >= low) {
          edges.pixels[j] = 255;
          stack.push_back(j);
        }
      }
    }
  }
  return edges;
}

double iou(const RoiCandidate& a, const RoiCandidate& b) {
  const double ix = std::max(0, std::min(a.x + a.size, b.x + b.size) - std::max(a.x, b.x));
  const double iy = std::max(0, std::min(a.y + a.size, b.y + b.size) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = static_cast<double>(a.size) * a.size + static_cast<double>(b.size) * b.size - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double edge_density(const Image& edges, const RoiCandidate& c) {
  std::int64_t count = 0;
  for (int y = c.y; y < c.y + c.size; ++y) {
    for (int x = c.x; x < c.x + c.size; ++x) count += edges.at(x, y) != 0;
  }
  return static_cast<double>(count) / (static_cast<double>(c.size) * c.size);
}

std::vector<RoiCandidate> extract_rois(const Image& img, const Image& edges, int window, int stride,
                                       double min_edge_density) {
  if (window < 1 || stride < 1) throw std::invalid_argument("window and stride must be positive");
  if (window > std::min(img.width, img.height)) {
    throw DimensionError("window " + std::to_string(window) + " does not fit a " + std::to_string(img.width) +
                         "x" + std::to_string(img.height) + " image");
  }
  require_gray(edges, "extract_rois");
  if (edges.width != img.width || edges.height != img.height) {
    throw DimensionError("edge map size differs from the image");
  }

  // Summed-area table of edge pixels, (w+1) x (h+1).
  const int w = img.width, h = img.height;
  std::vector<std::int64_t> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  auto s = [&](int x, int y) -> std::int64_t& { return sat[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      s(x + 1, y + 1) = (edges.at(x, y) != 0) + s(x, y + 1) + s(x + 1, y) - s(x, y);
    }
  }

  std::vector<RoiCandidate> out;
  const double area = static_cast<double>(window) * window;
  for (int y = 0; y + window <= h; y += stride) {
    for (int x = 0; x + window <= w; x += stride) {
      const auto count = s(x + window, y + window) - s(x, y + window) - s(x + window, y) + s(x, y);
      if (min_edge_density <= 0.0 || static_cast<double>(count) / area >= min_edge_density) {
        out.push_back({x, y, window, -1.0});
      }
    }
  }
  return out;
}

TileClassifier model_classifier(const ModelGraph& model) {
  auto shared = std::make_shared<const ModelGraph>(model);
  return [shared](const Tensor<float>& tile) -> double { return positive_probability(*shared, tile); };
}

std::vector<RoiCandidate> classify_rois(std::vector<RoiCandidate> candidates, const Image& img,
                                        const TileClassifier& classifier, int threads) {
  const Image gray = to_grayscale(img);
  for (const auto& c : candidates) {
    if (c.size < 1 || c.x < 0 || c.y < 0 || c.x + c.size > gray.width || c.y + c.size > gray.height) {
      throw DimensionError("candidate window lies outside the image");
    }
  }

  auto score = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto& c = candidates[i];
      Tensor<float> tile({1, c.size, c.size});
      for (int y = 0; y < c.size; ++y) {
        for (int x = 0; x < c.size; ++x) {
          tile[static_cast<Eigen::Index>(y) * c.size + x] = static_cast<float>(gray.at(c.x + x, c.y + y)) / 255.0f;
        }
      }
      c.probability = classifier(tile);
    }
  };

  const std::size_t n = candidates.size();
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    score(0, n);
    return candidates;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        score(n * t / workers, n * (t + 1) / workers);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return candidates;
}

std::vector<RoiCandidate> classify_rois(std::vector<RoiCandidate> candidates, const Image& img,
                                        const ModelGraph& model, int threads) {
  for (const auto& c : candidates) {
    if (model.input_shape != Shape{1, c.size, c.size}) {
      throw ModelError("model input " + shape_string(model.input_shape) + " does not match " +
                       std::to_string(c.size) + "x" + std::to_string(c.size) + " grayscale windows");
    }
  }
  return classify_rois(std::move(candidates), img, model_classifier(model), threads);
}

namespace {

/// Strict total order: higher probability first, then raster order.
bool outranks(const RoiCandidate& a, std::size_t ia, const RoiCandidate& b, std::size_t ib) {
  if (a.probability != b.probability) return a.probability > b.probability;
  if (a.y != b.y) return a.y < b.y;
  if (a.x != b.x) return a.x < b.x;
  return ia < ib;
}

}  // namespace

std::vector<RoiCandidate> nms(const std::vector<RoiCandidate>& candidates, double overlap_threshold,
                              NmsMode mode) {
  for (const auto& c : candidates) {
    if (!(c.probability >= 0.0 && c.probability <= 1.0)) {
      throw std::invalid_argument("nms needs classified candidates (probability in [0, 1])");
    }
  }
  const std::size_t n = candidates.size();
  std::vector<bool> keep(n, false);

  if (mode == NmsMode::iou) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return outranks(candidates[a], a, candidates[b], b);
    });
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
      const bool clear = std::none_of(kept.begin(), kept.end(), [&](std::size_t k) {
        return iou(candidates[i], candidates[k]) > overlap_threshold;
      });
      if (clear) {
        keep[i] = true;
        kept.push_back(i);
      }
    }
  } else {
    // Neighbors are all overlapping windows: the 8-neighborhood on a grid
    // with stride >= window / 2.
    for (std::size_t i = 0; i < n; ++i) {
      keep[i] = true;
      for (std::size_t j = 0; j < n && keep[i]; ++j) {
        if (j != i && iou(candidates[i], candidates[j]) > 0.0 && outranks(candidates[j], j, candidates[i], i)) {
          keep[i] = false;
        }
      }
    }
  }

  std::vector<RoiCandidate> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) out.push_back(candidates[i]);
  }
  return out;
}

DetectResult detect(const Image& img, const TileClassifier& classifier, const DetectOptions& o) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  const Image gray = to_grayscale(color_correct(img));
  const Image edges = canny(gaussian_blur(gray, o.blur_sigma), o.canny_low, o.canny_high);
  const auto preprocessed = Clock::now();

  DetectResult result;
  std::vector<RoiCandidate> candidates;
  if (o.gate_before_classify) {
    candidates = classify_rois(extract_rois(gray, edges, o.window, o.stride, o.min_edge_density), gray,
                               classifier, o.threads);
    result.windows_classified = static_cast<int>(candidates.size());
  } else {
    auto all = classify_rois(extract_rois(gray, edges, o.window, o.stride, 0.0), gray, classifier, o.threads);
    result.windows_classified = static_cast<int>(all.size());
    for (const auto& c : all) {
      if (o.min_edge_density <= 0.0 || edge_density(edges, c) >= o.min_edge_density) candidates.push_back(c);
    }
  }

  for (const auto& c : nms(candidates, o.nms_overlap, o.nms_mode)) {
    result.detections.push_back(
        {c, c.probability >= o.threshold ? TileClass::codling_moth : TileClass::general_insect});
  }
  result.preprocess_seconds = std::chrono::duration<double>(preprocessed - start).count();
  result.classify_seconds = std::chrono::duration<double>(Clock::now() - preprocessed).count();
  result.annotated = annotate(img, result.detections);
  return result;
}

DetectResult detect(const Image& img, const ModelGraph& model, const DetectOptions& options) {
  if (model.input_shape != Shape{1, options.window, options.window}) {
    throw ModelError("model input " + shape_string(model.input_shape) + " does not match the " +
                     std::to_string(options.window) + " px detection window");
  }
  return detect(img, model_classifier(model), options);
}

int count_label(const std::vector<Detection>& detections, TileClass label) {
  return static_cast<int>(std::count_if(detections.begin(), detections.end(),
                                        [label](const Detection& d) { return d.label == label; }));
}

Image annotate(const Image& img, const std::vector<Detection>& detections) {
  Image out = to_rgb(img);
  auto paint = [&](int x, int y, const std::array<std::uint8_t, 3>& rgb) {
    if (!out.contains(x, y)) return;
    for (int k = 0; k < 3; ++k) out.at(x, y, k) = rgb[static_cast<std::size_t>(k)];
  };
  // Moth boxes last so they stay visible where boxes overlap.
  for (const TileClass pass : {TileClass::general_insect, TileClass::codling_moth}) {
    const std::array<std::uint8_t, 3> color =
        pass == TileClass::codling_moth ? std::array<std::uint8_t, 3>{255, 0, 0} : std::array<std::uint8_t, 3>{0, 0, 255};
    for (const auto& d : detections) {
      if (d.label != pass) continue;
      const auto& r = d.roi;
      for (int t = 0; t < 2; ++t) {
        for (int i = 0; i < r.size; ++i) {
          paint(r.x + i, r.y + t, color);
          paint(r.x + i, r.y + r.size - 1 - t, color);
          paint(r.x + t, r.y + i, color);
          paint(r.x + r.size - 1 - t, r.y + i, color);
        }
      }
    }
  }
  return out;
}

std::string detections_csv(const std::vector<Detection>& detections) {
  std::string out = "x,y,size,probability,class\n";
  char line[128];
  for (const auto& d : detections) {
    std::snprintf(line, sizeof line, "%d,%d,%d,%.6f,%s\n", d.roi.x, d.roi.y, d.roi.size, d.roi.probability,
                  to_string(d.label));
    out += line;
  }
  return out;
}

void write_detections_csv(const std::vector<Detection>& detections, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << detections_csv(detections);
}

}  // namespace pestdet
