#ifndef PESTDET_VISION_HPP
#define PESTDET_VISION_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pestdet/image.hpp"
#include "pestdet/model.hpp"
#include "pestdet/trainer.hpp"

namespace pestdet {

// --- preprocessing ---------------------------------------------------------

/// Gray-world white balance (RGB only), then one linear stretch of all
/// channels to [0, 255]. Images with a single intensity are returned as is.
Image color_correct(const Image& img);

/// Luminance 0.299 R + 0.587 G + 0.114 B, rounded. Gray input is copied.
Image to_grayscale(const Image& img);

/// Normalized 1-D Gaussian of odd length `size`.
std::vector<double> gaussian_kernel(double sigma, int size);

/// Separable blur of every channel with clamp-to-edge borders.
Image gaussian_blur(const Image& img, double sigma = 1.4, int size = 5);

/// Sobel gradients, non-maximum suppression along the quantized gradient
/// direction and hysteresis. Thresholds apply to the L2 magnitude of the raw
/// 3x3 Sobel responses. Output pixels are 0 or 255.
Image canny(const Image& gray, int low = 50, int high = 150);

// --- proposals and classification ------------------------------------------

struct RoiCandidate {
  int x = 0;  // top-left
  int y = 0;
  int size = 0;
  double probability = -1.0;  // -1 until classified

  bool operator==(const RoiCandidate&) const = default;
};

double iou(const RoiCandidate& a, const RoiCandidate& b);

/// Sliding-window grid over the image. Windows whose fraction of edge pixels
/// is below `min_edge_density` are dropped; a density of 0 keeps every window.
std::vector<RoiCandidate> extract_rois(const Image& img, const Image& edges, int window = 52,
                                       int stride = 26, double min_edge_density = 0.02);

/// Fraction of nonzero pixels of `edges` inside the candidate window.
double edge_density(const Image& edges, const RoiCandidate& c);

/// Maps a [1, size, size] tile in [0, 1] to the codling_moth probability.
using TileClassifier = std::function<double(const Tensor<float>&)>;

TileClassifier model_classifier(const ModelGraph& model);

/// Crops each window from the grayscale of `img` and scores it. With
/// threads > 1 the candidates are split across workers; results keep the
/// candidate order either way.
std::vector<RoiCandidate> classify_rois(std::vector<RoiCandidate> candidates, const Image& img,
                                        const TileClassifier& classifier, int threads = 1);

/// Throws ModelError unless the model takes a [1, size, size] tile.
std::vector<RoiCandidate> classify_rois(std::vector<RoiCandidate> candidates, const Image& img,
                                        const ModelGraph& model, int threads = 1);

enum class NmsMode {
  iou,           // greedy, highest probability first
  grid_neighbor  // keep local maxima among overlapping windows
};

/// Survivors are returned in input order. Equal probabilities are resolved in
/// favor of the window that comes first in raster order (y, then x).
std::vector<RoiCandidate> nms(const std::vector<RoiCandidate>& candidates,
                              double overlap_threshold = 0.3, NmsMode mode = NmsMode::iou);

// --- full pipeline ---------------------------------------------------------

struct Detection {
  RoiCandidate roi;
  TileClass label = TileClass::general_insect;
};

struct DetectOptions {
  double threshold = 0.5;
  int window = 52;
  int stride = 26;
  double min_edge_density = 0.02;
  bool gate_before_classify = true;
  double blur_sigma = 1.4;
  int canny_low = 50;
  int canny_high = 150;
  double nms_overlap = 0.3;
  NmsMode nms_mode = NmsMode::iou;
  int threads = 1;
};

struct DetectResult {
  std::vector<Detection> detections;
  Image annotated;  // RGB
  int windows_classified = 0;
  double preprocess_seconds = 0.0;  // correction, blur and edges
  double classify_seconds = 0.0;    // proposals, classification and NMS
};

DetectResult detect(const Image& img, const TileClassifier& classifier, const DetectOptions& options = {});
DetectResult detect(const Image& img, const ModelGraph& model, const DetectOptions& options = {});

int count_label(const std::vector<Detection>& detections, TileClass label);

/// RGB copy of `img` with 2-px outlines: red for codling_moth, blue otherwise.
Image annotate(const Image& img, const std::vector<Detection>& detections);

/// Header `x,y,size,probability,class`, one row per detection.
std::string detections_csv(const std::vector<Detection>& detections);
void write_detections_csv(const std::vector<Detection>& detections, const std::filesystem::path& path);

}  // namespace pestdet

#endif  // PESTDET_VISION_HPP
