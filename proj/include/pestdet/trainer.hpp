#ifndef PESTDET_TRAINER_HPP
#define PESTDET_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pestdet/graph_opt.hpp"
#include "pestdet/image.hpp"
#include "pestdet/model.hpp"

namespace pestdet {

/// Output index 0 of every classifier is codling_moth, the positive class.
enum class TileClass { codling_moth = 0, general_insect = 1 };

const char* to_string(TileClass c);

inline constexpr int kTileSize = 52;
/// Maximum offset of a synthetic object from the tile center, in pixels.
/// Matches half the default detection stride so every object is seen this
/// far off-center at worst.
inline constexpr double kTileJitter = 13.0;

struct LabeledTile {
  Tensor<float> image;  // [1, size, size], values in [0, 1]
  TileClass label = TileClass::codling_moth;
};

Tensor<float> tile_tensor(const Image& gray);
Image tile_image(const Tensor<float>& tile);

struct ClassCounts {
  int codling_moth = 0;
  int general_insect = 0;
};

ClassCounts count_classes(const std::vector<LabeledTile>& tiles);

struct DatasetSplit {
  std::vector<LabeledTile> train;
  std::vector<LabeledTile> test;
  double test_fraction = 0.0;
};

// --- synthetic data --------------------------------------------------------

/// One synthetic trap tile: a dark elliptical moth with banded wings and a
/// wing-tip patch, or an irregular multi-lobed insect with legs, on noisy
/// trap paper. Quantized to 8 bits so saved and in-memory tiles agree.
Image synthesize_tile(TileClass label, std::mt19937_64& rng, int size = kTileSize);

struct PlantedObject {
  double x = 0.0, y = 0.0;  // center, pixels
  TileClass label = TileClass::codling_moth;
};

struct TrapScene {
  Image image;
  std::vector<PlantedObject> planted;
};

/// A whole trap image with objects at random positions at least 64 px apart
/// (fewer are planted if they do not fit).
TrapScene synthesize_scene(int width, int height, int moths, int insects, std::uint64_t seed);

std::vector<LabeledTile> synthetic_tiles(int moths, int insects, std::uint64_t seed,
                                         int size = kTileSize);

/// Balanced benchmark: `train` and `test` tiles, half of each per class,
/// generated from independent streams of `seed`.
DatasetSplit synthetic_benchmark(int train = 2000, int test = 500, std::uint64_t seed = 2024);

/// Stratified split: each class contributes round(test_fraction * n) tiles
/// to the test set after a seeded shuffle.
DatasetSplit split_dataset(std::vector<LabeledTile> tiles, double test_fraction,
                           std::uint64_t seed);

/// Reads `<root>/codling_moth/*.pgm` and `<root>/general_insect/*.pgm` in
/// file-name order.
std::vector<LabeledTile> load_tile_directory(const std::filesystem::path& root);
void save_tile_directory(const std::vector<LabeledTile>& tiles, const std::filesystem::path& root);

// --- augmentation ----------------------------------------------------------

struct TileTransform {
  int shift_x = 0;  // pixels, |shift| <= 4
  int shift_y = 0;
  bool flip_h = false;
  bool flip_v = false;
  int quarter_turns = 0;    // 0..3, counter-clockwise
  double angle_deg = 0.0;   // small extra rotation, |angle| <= 15
  double zoom = 1.0;        // 0.9 .. 1.1

  bool is_identity() const;
};

TileTransform random_transform(std::mt19937_64& rng);

/// Resamples with bilinear interpolation; pixels mapped from outside the tile
/// take the nearest edge value.
Tensor<float> apply_transform(const Tensor<float>& tile, const TileTransform& t);

/// Returns every input tile followed by factor - 1 randomly transformed
/// copies of it.
std::vector<LabeledTile> augment(const std::vector<LabeledTile>& tiles, int factor,
                                 std::uint64_t seed);

// --- training --------------------------------------------------------------

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  int epoch = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double loss = 0.0;
  double sparsity = 0.0;
};

struct TrainOptions {
  int epochs = 100;
  double early_stop_acc = 0.995;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch = 32;
  std::uint64_t seed = 1;
  std::optional<PruneSchedule> prune;
  std::function<void(const EpochRecord&)> on_epoch;  // progress callback
};

struct TrainResult {
  ModelGraph model;
  std::vector<EpochRecord> history;
  bool stopped_early = false;
};

inline bool should_stop(double val_acc, double early_stop_acc) { return val_acc >= early_stop_acc; }

/// 1-based epoch at which training halts for the given validation accuracy
/// sequence.
int stopping_epoch(const std::vector<double>& val_accs, double early_stop_acc);

/// Minibatch SGD with momentum on softmax cross-entropy. The model's last
/// layer must be a softmax activation. Deterministic for a fixed seed.
///
/// Batchnorm layers normalize with the statistics of each minibatch while
/// training; after every epoch their stored mean and variance are
/// re-estimated on the first 256 training tiles.
TrainResult train_sgd(ModelGraph model, const DatasetSplit& data, const TrainOptions& options = {});

struct MinibatchGradient {
  double loss = 0.0;  // cross-entropy summed over the batch
  Gradients<float> params;
};

/// Loss and parameter gradients of one minibatch, evaluated as during
/// training: batchnorm uses the batch statistics and dropout draws its masks
/// from `seed`.
MinibatchGradient minibatch_gradient(const ModelGraph& model, const std::vector<LabeledTile>& batch,
                                     std::uint64_t seed = 1);

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

/// Sets each batchnorm's mean and variance to the statistics of its input
/// over `tiles` (in graph order, so later layers see normalized inputs).
ModelGraph calibrate_batchnorm(ModelGraph model, const std::vector<LabeledTile>& tiles);

// --- evaluation ------------------------------------------------------------

/// Probability of codling_moth for one tile.
template <typename Scalar>
Scalar positive_probability(const Model<Scalar>& model, const Tensor<Scalar>& tile) {
  return forward(model, tile)[0];
}

struct Metrics {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;   // percentages
  double recall = 0.0;
  double precision = 0.0;  // 0 and flagged when nothing is predicted positive
  double f_score = 0.0;
  bool precision_defined = true;
};

double f_score(double precision, double recall);
Metrics metrics_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn);

/// A tile is predicted codling_moth when its probability is >= threshold.
Metrics evaluate_metrics(const ModelGraph& model, const std::vector<LabeledTile>& test,
                         double threshold = 0.5);

double accuracy(const ModelGraph& model, const std::vector<LabeledTile>& tiles);

struct GradCheckResult {
  double max_relative_error = 0.0;
  int checked = 0;
  int skipped_at_kinks = 0;  // perturbation flipped a ReLU or max-pool decision
};

/// Compares backprop against central differences of the cross-entropy loss
/// on `samples` randomly chosen trainable parameters, in double. Parameters
/// whose +-h perturbation changes a ReLU or max-pool decision are not
/// differentiable at that step size; they are skipped and counted.
GradCheckResult grad_check(const ModelGraph& model, const LabeledTile& sample, double h = 1e-3,
                           int samples = 200, std::uint64_t seed = 7);

}  // namespace pestdet

#endif  // PESTDET_TRAINER_HPP
