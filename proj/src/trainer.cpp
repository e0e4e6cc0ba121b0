#include "pestdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace pestdet {

namespace {

constexpr std::size_t kCalibrationTiles = 256;

/// Index of the layer feeding the final softmax; the cross-entropy gradient
/// with respect to its output is p - onehot(label).
template <typename Scalar>
int logits_layer(const Model<Scalar>& model) {
  if (model.layers.empty() || model.layers.back().kind != LayerKind::activation ||
      model.layers.back().act != ActivationKind::softmax) {
    throw ModelError("training needs a model ending in a softmax activation");
  }
  const std::string& in = model.layers.back().inputs.at(0);
  const int index = model.index_of(in);
  if (index < 0) throw ModelError("softmax reads the graph input directly");
  return index;
}

template <typename Scalar>
Tensor<Scalar> cross_entropy_seed(const Tensor<Scalar>& probs, int label) {
  Tensor<Scalar> seed = probs;
  seed[label] -= Scalar(1);
  return seed;
}

template <typename Scalar>
double cross_entropy(const Tensor<Scalar>& probs, int label) {
  return -std::log(std::max(static_cast<double>(probs[label]), 1e-300));
}

int argmax(const Tensor<float>& v) {
  Eigen::Index best = 0;
  v.values().maxCoeff(&best);
  return static_cast<int>(best);
}

void check_inputs(const ModelGraph& model, const std::vector<LabeledTile>& tiles, const char* what) {
  if (tiles.empty()) throw std::invalid_argument(std::string(what) + " set is empty");
  if (tiles.front().image.shape() != model.input_shape) {
    throw ModelError(std::string(what) + " tiles have shape " +
                     shape_string(tiles.front().image.shape()) + " but the model expects " +
                     shape_string(model.input_shape));
  }
}

using ZeroMask = std::map<std::string, Eigen::Array<bool, Eigen::Dynamic, 1>>;

ZeroMask zero_mask(const ModelGraph& model) {
  ZeroMask mask;
  for (const auto& layer : model.layers) {
    if (!is_linear_weighted(layer.kind)) continue;
    mask[layer.name] = model.weights.at(layer.name)[0].values().array() == 0.0f;
  }
  return mask;
}

using Sources = std::vector<std::vector<int>>;

/// Per-channel normalization of one batchnorm layer over a whole minibatch.
struct BatchNormState {
  Eigen::ArrayXf mean, var, inv_std;
  std::vector<Tensor<float>> normalized;  // x-hat per sample
};

/// Activations of a minibatch evaluated layer by layer, so that batchnorm
/// layers can normalize with the statistics of the batch itself.
struct MinibatchPass {
  std::vector<Trace<float>> traces;
  std::map<std::size_t, BatchNormState> batchnorm;
};

BatchNormState batch_normalize(const ModelGraph& model, std::size_t i, const Sources& sources,
                               std::vector<Trace<float>>& traces, bool keep_normalized) {
  const LayerSpec& layer = model.layers[i];
  const auto& params = model.weights.at(layer.name);
  const Eigen::Index channels = params[0].size();
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(channels), sq = Eigen::ArrayXd::Zero(channels);
  double count = 0.0;
  for (auto& t : traces) {
    const auto& x = detail::layer_input(model, t, sources[i], 0);
    ConstRowMatMap<float> m(x.data(), channels, x.size() / channels);
    sum += m.cast<double>().rowwise().sum().array();
    sq += m.cast<double>().array().square().rowwise().sum();
    count += static_cast<double>(m.cols());
  }
  const Eigen::ArrayXd mean = sum / count;
  const Eigen::ArrayXd var = (sq / count - mean.square()).max(0.0);

  BatchNormState state;
  state.mean = mean.cast<float>();
  state.var = var.cast<float>();
  state.inv_std = (var + layer.eps).rsqrt().cast<float>();
  const Eigen::ArrayXf gamma = params[0].values().array(), beta = params[1].values().array();
  for (auto& t : traces) {
    const auto& x = detail::layer_input(model, t, sources[i], 0);
    Tensor<float> xhat(x.shape());
    ConstRowMatMap<float> in(x.data(), channels, x.size() / channels);
    RowMatMap<float> out(xhat.data(), channels, x.size() / channels);
    out = ((in.array().colwise() - state.mean).colwise() * state.inv_std).matrix();
    Tensor<float> y(x.shape());
    RowMatMap<float> ym(y.data(), channels, x.size() / channels);
    ym = ((out.array().colwise() * gamma).colwise() + beta).matrix();
    t.outputs[i] = std::move(y);
    if (keep_normalized) state.normalized.push_back(std::move(xhat));
  }
  return state;
}

MinibatchPass minibatch_forward(const ModelGraph& model, const Sources& sources,
                                const std::vector<const Tensor<float>*>& inputs, std::mt19937& rng) {
  MinibatchPass pass;
  pass.traces.resize(inputs.size());
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    auto& t = pass.traces[b];
    t.input = *inputs[b];
    t.outputs.resize(model.layers.size());
    t.dropout_masks.resize(model.layers.size());
    t.recorded = true;
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].kind == LayerKind::batchnorm) {
      pass.batchnorm[i] = batch_normalize(model, i, sources, pass.traces, true);
    } else {
      for (auto& t : pass.traces) detail::forward_layer(model, i, sources[i], t, Mode::training, &rng);
    }
  }
  return pass;
}

/// Adds the minibatch's parameter gradients into `grads`. `seeds[b]` is the
/// gradient at layer `seed_layer` for sample b.
void minibatch_backward(const ModelGraph& model, const Sources& sources, const MinibatchPass& pass,
                        std::vector<Tensor<float>> seeds, int seed_layer, Gradients<float>& grads) {
  const std::size_t batch = pass.traces.size();
  std::vector<std::vector<Tensor<float>>> dy(batch, std::vector<Tensor<float>>(model.layers.size()));
  std::vector<Tensor<float>> input_grad(batch);
  for (std::size_t b = 0; b < batch; ++b) dy[b][static_cast<std::size_t>(seed_layer)] = std::move(seeds[b]);

  for (int li = seed_layer; li >= 0; --li) {
    const auto i = static_cast<std::size_t>(li);
    if (dy[0][i].empty()) continue;
    const LayerSpec& layer = model.layers[i];
    if (layer.kind != LayerKind::batchnorm) {
      for (std::size_t b = 0; b < batch; ++b) {
        detail::backward_layer(model, i, sources[i], pass.traces[b], dy[b][i], grads, dy[b], input_grad[b]);
        dy[b][i] = Tensor<float>();
      }
      continue;
    }
    // y = gamma * xhat + beta with batch statistics:
    // dx = gamma * inv_std / N * (N dy - sum(dy) - xhat * sum(dy xhat)).
    const BatchNormState& st = pass.batchnorm.at(i);
    const auto& params = model.weights.at(layer.name);
    const Eigen::Index channels = params[0].size();
    Eigen::ArrayXf sum_dy = Eigen::ArrayXf::Zero(channels), sum_dy_xhat = Eigen::ArrayXf::Zero(channels);
    double count = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      ConstRowMatMap<float> g(dy[b][i].data(), channels, dy[b][i].size() / channels);
      ConstRowMatMap<float> xh(st.normalized[b].data(), channels, g.cols());
      sum_dy += g.array().rowwise().sum();
      sum_dy_xhat += (g.array() * xh.array()).rowwise().sum();
      count += static_cast<double>(g.cols());
    }
    if (layer.trainable) {
      grads.at(layer.name)[0].values().array() += sum_dy_xhat;
      grads.at(layer.name)[1].values().array() += sum_dy;
    }
    const float n = static_cast<float>(count);
    const Eigen::ArrayXf scale = params[0].values().array() * st.inv_std / n;
    const int src = sources[i].at(0);
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor<float> dx(dy[b][i].shape());
      ConstRowMatMap<float> g(dy[b][i].data(), channels, dy[b][i].size() / channels);
      ConstRowMatMap<float> xh(st.normalized[b].data(), channels, g.cols());
      RowMatMap<float> out(dx.data(), channels, g.cols());
      out = (((n * g.array()).colwise() - sum_dy - xh.array().colwise() * sum_dy_xhat).colwise() * scale)
                .matrix();
      detail::add_to(src < 0 ? input_grad[b] : dy[b][static_cast<std::size_t>(src)], dx);
      dy[b][i] = Tensor<float>();
    }
  }
}

}  // namespace

int stopping_epoch(const std::vector<double>& val_accs, double early_stop_acc) {
  for (std::size_t i = 0; i < val_accs.size(); ++i) {
    if (should_stop(val_accs[i], early_stop_acc)) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(val_accs.size());
}

double accuracy(const ModelGraph& model, const std::vector<LabeledTile>& tiles) {
  if (tiles.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& t : tiles) correct += argmax(forward(model, t.image)) == static_cast<int>(t.label);
  return static_cast<double>(correct) / static_cast<double>(tiles.size());
}

TrainResult train_sgd(ModelGraph model, const DatasetSplit& data, const TrainOptions& options) {
  check_inputs(model, data.train, "training");
  check_inputs(model, data.test, "validation");
  if (options.batch < 1 || options.epochs < 0) {
    throw std::invalid_argument("batch must be >= 1 and epochs >= 0");
  }
  const int logits = logits_layer(model);
  const Sources sources = detail::resolve_inputs(model.layers);
  const bool has_batchnorm = std::any_of(model.layers.begin(), model.layers.end(),
                                         [](const LayerSpec& l) { return l.kind == LayerKind::batchnorm; });
  const std::vector<LabeledTile> calibration(
      data.train.begin(), data.train.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(
                                                   data.train.size(), kCalibrationTiles)));

  std::mt19937_64 shuffle_rng(options.seed);
  std::mt19937 dropout_rng(static_cast<std::uint32_t>(options.seed * 2654435761u + 1));
  Gradients<float> velocity, batch_grad;
  for (const auto& layer : model.layers) {
    if (!has_weights(layer.kind)) continue;
    for (const auto& t : model.weights.at(layer.name)) {
      velocity[layer.name].emplace_back(t.shape());
      batch_grad[layer.name].emplace_back(t.shape());
    }
  }
  std::optional<ZeroMask> pruned;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    EpochRecord record;
    try {
      for (std::size_t start = 0; start < order.size(); start += options.batch) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch));
        for (auto& [name, tensors] : batch_grad)
          for (auto& t : tensors) t.values().setZero();

        std::vector<const Tensor<float>*> inputs;
        for (std::size_t k = start; k < end; ++k) inputs.push_back(&data.train[order[k]].image);
        const MinibatchPass pass = minibatch_forward(model, sources, inputs, dropout_rng);
        std::vector<Tensor<float>> seeds;
        for (std::size_t k = start; k < end; ++k) {
          const int label = static_cast<int>(data.train[order[k]].label);
          const Tensor<float>& probs = pass.traces[k - start].outputs.back();
          loss_sum += cross_entropy(probs, label);
          correct += argmax(probs) == label;
          seeds.push_back(cross_entropy_seed(probs, label));
        }
        minibatch_backward(model, sources, pass, std::move(seeds), logits, batch_grad);
        if (!std::isfinite(loss_sum)) throw NonFiniteError("loss is not finite");
        if (options.learning_rate == 0.0) continue;

        const float step = static_cast<float>(options.learning_rate / static_cast<double>(end - start));
        const float mu = static_cast<float>(options.momentum);
        for (const auto& layer : model.layers) {
          if (!has_weights(layer.kind) || !layer.trainable) continue;
          auto& weights = model.weights.at(layer.name);
          auto& vel = velocity.at(layer.name);
          const auto& g = batch_grad.at(layer.name);
          for (std::size_t t = 0; t < weights.size(); ++t) {
            vel[t].values() = mu * vel[t].values() - step * g[t].values();
            weights[t].values() += vel[t].values();
          }
          if (pruned && pruned->count(layer.name)) {
            const auto& m = pruned->at(layer.name);
            weights[0].values() = m.select(0.0f, weights[0].values());
            vel[0].values() = m.select(0.0f, vel[0].values());
          }
        }
      }

      if (options.prune && options.prune->due(epoch)) {
        model = prune_magnitude(std::move(model), options.prune->sparsity_at(epoch),
                                options.prune->scope)
                    .model;
        pruned = zero_mask(model);
      }
      // Inference uses population statistics; re-estimate them for the
      // weights this epoch ended with.
      if (has_batchnorm && options.learning_rate != 0.0) model = calibrate_batchnorm(std::move(model), calibration);

      record.epoch = epoch;
      record.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
      record.loss = loss_sum / static_cast<double>(order.size());
      record.val_acc = accuracy(model, data.test);
      record.sparsity = weight_sparsity(model);
    } catch (const NonFiniteError& e) {
      throw TrainingError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.history.push_back(record);
    if (options.on_epoch) options.on_epoch(record);
    if (should_stop(record.val_acc, options.early_stop_acc)) {
      result.stopped_early = true;
      break;
    }
  }
  result.model = std::move(model);
  return result;
}

MinibatchGradient minibatch_gradient(const ModelGraph& model, const std::vector<LabeledTile>& batch,
                                     std::uint64_t seed) {
  check_inputs(model, batch, "minibatch");
  const int logits = logits_layer(model);
  const Sources sources = detail::resolve_inputs(model.layers);
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::vector<const Tensor<float>*> inputs;
  for (const auto& t : batch) inputs.push_back(&t.image);
  const MinibatchPass pass = minibatch_forward(model, sources, inputs, rng);

  MinibatchGradient result;
  for (const auto& layer : model.layers) {
    if (!has_weights(layer.kind)) continue;
    for (const auto& t : model.weights.at(layer.name)) result.params[layer.name].emplace_back(t.shape());
  }
  std::vector<Tensor<float>> seeds;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const int label = static_cast<int>(batch[b].label);
    result.loss += cross_entropy(pass.traces[b].outputs.back(), label);
    seeds.push_back(cross_entropy_seed(pass.traces[b].outputs.back(), label));
  }
  minibatch_backward(model, sources, pass, std::move(seeds), logits, result.params);
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "epoch,train_acc,val_acc,loss\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_acc << ',' << r.val_acc << ',' << r.loss << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ModelGraph calibrate_batchnorm(ModelGraph model, const std::vector<LabeledTile>& tiles) {
  if (tiles.empty()) return model;
  check_inputs(model, tiles, "calibration");
  const Sources sources = detail::resolve_inputs(model.layers);
  // Last layer reading each output, so activations can be dropped early.
  std::vector<std::size_t> last_use(model.layers.size(), 0);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (int src : sources[i]) {
      if (src >= 0) last_use[static_cast<std::size_t>(src)] = i;
    }
  }
  std::vector<Trace<float>> traces(tiles.size());
  for (std::size_t b = 0; b < tiles.size(); ++b) {
    traces[b].input = tiles[b].image;
    traces[b].outputs.resize(model.layers.size());
    traces[b].dropout_masks.resize(model.layers.size());
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].kind == LayerKind::batchnorm) {
      const BatchNormState st = batch_normalize(model, i, sources, traces, false);
      auto& params = model.weights.at(model.layers[i].name);
      params[2].values() = st.mean.matrix();
      params[3].values() = st.var.matrix();
    } else {
      for (auto& t : traces) detail::forward_layer(model, i, sources[i], t, Mode::inference, nullptr);
    }
    for (int src : sources[i]) {
      if (src >= 0 && last_use[static_cast<std::size_t>(src)] == i) {
        for (auto& t : traces) t.outputs[static_cast<std::size_t>(src)] = Tensor<float>();
      }
    }
  }
  return model;
}

double f_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

Metrics metrics_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  const auto pct = [](std::int64_t num, std::int64_t den) {
    return den > 0 ? 100.0 * static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };
  m.accuracy = pct(tp + tn, tp + fp + fn + tn);
  m.recall = pct(tp, tp + fn);
  m.precision_defined = tp + fp > 0;
  m.precision = pct(tp, tp + fp);
  m.f_score = f_score(m.precision, m.recall);
  return m;
}

Metrics evaluate_metrics(const ModelGraph& model, const std::vector<LabeledTile>& test,
                         double threshold) {
  check_inputs(model, test, "test");
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& t : test) {
    const bool predicted = positive_probability(model, t.image) >= threshold;
    const bool actual = t.label == TileClass::codling_moth;
    tp += predicted && actual;
    fp += predicted && !actual;
    fn += !predicted && actual;
    tn += !predicted && !actual;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

namespace {

/// True when `a` and `b` take the same branch at every ReLU/ReLU6 and pick
/// the same element in every max-pool window.
template <typename Scalar>
bool same_branches(const Model<Scalar>& model, const std::vector<std::vector<int>>& sources,
                   const Trace<Scalar>& a, const Trace<Scalar>& b) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& layer = model.layers[i];
    const auto& xa = detail::layer_input(model, a, sources[i], 0).values().array();
    const auto& xb = detail::layer_input(model, b, sources[i], 0).values().array();
    if (layer.kind == LayerKind::activation && layer.act != ActivationKind::softmax) {
      if (((xa > Scalar(0)) != (xb > Scalar(0))).any()) return false;
      if (layer.act == ActivationKind::relu6 && ((xa < Scalar(6)) != (xb < Scalar(6))).any()) {
        return false;
      }
    } else if (layer.kind == LayerKind::pool && layer.pool.mode == PoolMode::max) {
      const auto& in = detail::layer_input(model, a, sources[i], 0);
      const auto& ib = detail::layer_input(model, b, sources[i], 0);
      const int c = in.dim(0), h = in.dim(1), w = in.dim(2), k = layer.pool.window;
      const int stride = layer.pool.stride;
      for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy + k <= h; oy += stride) {
          for (int ox = 0; ox + k <= w; ox += stride) {
            int best_a = 0, best_b = 0;
            for (int j = 1; j < k * k; ++j) {
              const int y = oy + j / k, x = ox + j % k;
              if (in.at(ch, y, x) > in.at(ch, oy + best_a / k, ox + best_a % k)) best_a = j;
              if (ib.at(ch, y, x) > ib.at(ch, oy + best_b / k, ox + best_b % k)) best_b = j;
            }
            if (best_a != best_b) return false;
          }
        }
      }
    }
  }
  return true;
}

}  // namespace

GradCheckResult grad_check(const ModelGraph& model, const LabeledTile& sample, double h,
                           int samples, std::uint64_t seed) {
  const Model<double> md = model.cast<double>();
  const int logits = logits_layer(md);
  const int label = static_cast<int>(sample.label);
  const Tensor<double> x = sample.image.cast<double>();
  const auto sources = detail::resolve_inputs(md.layers);

  const auto trace = forward_trace(md, x);
  const auto analytic =
      backward(md, trace, cross_entropy_seed(trace.outputs.back(), label), logits).params;

  struct Param {
    std::string layer;
    std::size_t tensor;
    Eigen::Index index;
  };
  std::vector<Param> candidates;
  for (const auto& layer : md.layers) {
    if (!has_weights(layer.kind) || !layer.trainable) continue;
    const auto& ts = md.weights.at(layer.name);
    // Batchnorm mean and variance are statistics, not trained parameters.
    const std::size_t n = layer.kind == LayerKind::batchnorm ? 2 : ts.size();
    for (std::size_t t = 0; t < n; ++t) {
      for (Eigen::Index i = 0; i < ts[t].size(); ++i) candidates.push_back({layer.name, t, i});
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);

  Model<double> probe = md;
  GradCheckResult result;
  for (const auto& p : candidates) {
    if (result.checked >= samples) break;
    double& w = probe.weights.at(p.layer)[p.tensor][p.index];
    const double original = w;
    w = original + h;
    const auto up = forward_trace(probe, x);
    w = original - h;
    const auto down = forward_trace(probe, x);
    w = original;
    // A central difference across a kink measures neither one-sided slope.
    if (!same_branches(md, sources, trace, up) || !same_branches(md, sources, trace, down)) {
      ++result.skipped_at_kinks;
      continue;
    }
    const double numeric =
        (cross_entropy(up.outputs.back(), label) - cross_entropy(down.outputs.back(), label)) /
        (2.0 * h);
    const double exact = analytic.at(p.layer)[p.tensor][p.index];
    const double scale = std::max({std::abs(numeric), std::abs(exact), 1e-6});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(numeric - exact) / scale);
    ++result.checked;
  }
  return result;
}

}  // namespace pestdet
