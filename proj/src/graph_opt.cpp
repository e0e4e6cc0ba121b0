#include "pestdet/graph_opt.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace pestdet {

namespace {

std::map<std::string, int> consumer_counts(const std::vector<LayerSpec>& layers) {
  std::map<std::string, int> counts;
  for (const auto& layer : layers) {
    for (const auto& in : layer.inputs) ++counts[in];
  }
  return counts;
}

void redirect(std::vector<LayerSpec>& layers, const std::string& from, const std::string& to) {
  for (auto& layer : layers) {
    for (auto& in : layer.inputs) {
      if (in == from) in = to;
    }
  }
}

/// Drops layer `index`, pointing its consumers at its (single) input.
void remove_passthrough(ModelGraph& model, std::size_t index) {
  const LayerSpec removed = model.layers[index];
  model.layers.erase(model.layers.begin() + static_cast<std::ptrdiff_t>(index));
  model.weights.erase(removed.name);
  redirect(model.layers, removed.name, removed.inputs.at(0));
}

std::string unique_name(const ModelGraph& model, const std::string& base) {
  std::string name = base;
  for (int n = 2; model.index_of(name) >= 0; ++n) name = base + "_" + std::to_string(n);
  return name;
}

bool is_pointwise_conv(const LayerSpec& l) {
  return l.kind == LayerKind::conv && l.conv.kernel_h == 1 && l.conv.kernel_w == 1 &&
         l.conv.stride == 1 && l.conv.groups == 1 && l.connections.empty();
}

bool vertically_fusable(const LayerSpec& a, const LayerSpec& b) {
  if (b.inputs.size() != 1 || b.inputs[0] != a.name) return false;
  if (is_pointwise_conv(a) && is_pointwise_conv(b)) return true;
  return a.kind == LayerKind::dense && b.kind == LayerKind::dense;
}

/// Weight tensor viewed as [rows x cols] with rows = output channels.
RowMat<float> as_matrix(const Tensor<float>& w) {
  const int rows = w.dim(0);
  const auto cols = static_cast<int>(w.size() / rows);
  return ConstRowMatMap<float>(w.data(), rows, cols);
}

bool fuse_vertical_once(ModelGraph& model, PassReport& report) {
  const auto consumers = consumer_counts(model.layers);
  for (std::size_t j = 0; j < model.layers.size(); ++j) {
    const LayerSpec& b = model.layers[j];
    if (b.inputs.size() != 1) continue;
    const int i = model.index_of(b.inputs[0]);
    if (i < 0) continue;
    const LayerSpec& a = model.layers[static_cast<std::size_t>(i)];
    if (!vertically_fusable(a, b) || consumers.at(a.name) != 1) continue;

    const auto& wa = model.weights.at(a.name);
    const auto& wb = model.weights.at(b.name);
    const RowMat<float> ma = as_matrix(wa[0]);
    const RowMat<float> mb = as_matrix(wb[0]);
    const Eigen::Index fused_size = mb.rows() * ma.cols();
    if (fused_size > ma.size() + mb.size()) {
      const std::string note = "kept " + a.name + "->" + b.name + ": composed weights would grow";
      if (std::find(report.notes.begin(), report.notes.end(), note) == report.notes.end()) {
        report.notes.push_back(note);
      }
      continue;
    }
    const RowMat<float> w = mb * ma;
    const Vec<float> bias = mb * wa[1].values() + wb[1].values();

    Shape shape = wa[0].shape();
    shape[0] = static_cast<int>(mb.rows());
    Tensor<float> fused_w(shape, Eigen::Map<const Vec<float>>(w.data(), w.size()));
    Tensor<float> fused_b({static_cast<int>(mb.rows())}, bias);

    LayerSpec merged = b;
    merged.inputs = a.inputs;
    merged.trainable = a.trainable && b.trainable;
    model.weights[b.name] = {std::move(fused_w), std::move(fused_b)};
    model.weights.erase(a.name);
    model.layers[j] = std::move(merged);
    model.layers.erase(model.layers.begin() + i);
    ++report.nodes_merged;
    ++report.nodes_removed;
    return true;
  }
  return false;
}

bool same_conv_spec(const LayerSpec& a, const LayerSpec& b) { return a.conv == b.conv; }

bool fuse_horizontal_once(ModelGraph& model, PassReport& report) {
  auto candidate = [](const LayerSpec& l) {
    return l.kind == LayerKind::conv && l.conv.groups == 1 && l.connections.empty() &&
           l.inputs.size() == 1;
  };
  for (std::size_t first = 0; first < model.layers.size(); ++first) {
    const LayerSpec lead = model.layers[first];
    if (!candidate(lead)) continue;
    std::vector<std::size_t> group{first};
    for (std::size_t k = first + 1; k < model.layers.size(); ++k) {
      const LayerSpec& other = model.layers[k];
      if (candidate(other) && other.inputs == lead.inputs && same_conv_spec(lead, other)) {
        group.push_back(k);
      }
    }
    if (group.size() < 2) continue;

    LayerSpec fused = lead;
    fused.name = unique_name(model, lead.name + "_hfused");
    fused.out_channels = 0;
    std::vector<LayerSpec> slices;
    std::vector<const Tensor<float>*> ws, bs;
    for (std::size_t k : group) {
      const LayerSpec& member = model.layers[k];
      LayerSpec slice;
      slice.name = member.name;
      slice.kind = LayerKind::channel_slice;
      slice.inputs = {fused.name};
      slice.slice_begin = fused.out_channels;
      slice.slice_end = fused.out_channels + member.out_channels;
      slices.push_back(slice);
      fused.out_channels += member.out_channels;
      fused.trainable = fused.trainable && member.trainable;
      ws.push_back(&model.weights.at(member.name)[0]);
      bs.push_back(&model.weights.at(member.name)[1]);
    }
    Shape wshape = ws[0]->shape();
    wshape[0] = fused.out_channels;
    Tensor<float> w(wshape), b({fused.out_channels});
    Eigen::Index wo = 0, bo = 0;
    for (std::size_t m = 0; m < ws.size(); ++m) {
      w.values().segment(wo, ws[m]->size()) = ws[m]->values();
      b.values().segment(bo, bs[m]->size()) = bs[m]->values();
      wo += ws[m]->size();
      bo += bs[m]->size();
    }
    for (std::size_t k : group) model.weights.erase(model.layers[k].name);
    model.weights[fused.name] = {std::move(w), std::move(b)};

    std::vector<LayerSpec> rebuilt;
    rebuilt.reserve(model.layers.size() + 1);
    const std::set<std::size_t> members(group.begin(), group.end());
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
      if (k == first) {
        rebuilt.push_back(fused);
        rebuilt.insert(rebuilt.end(), slices.begin(), slices.end());
      } else if (!members.count(k)) {
        rebuilt.push_back(std::move(model.layers[k]));
      }
    }
    model.layers = std::move(rebuilt);
    report.nodes_merged += static_cast<int>(group.size());
    return true;
  }
  return false;
}

void finish_report(const ModelGraph& model, PassReport& report) {
  report.sparsity_after = weight_sparsity(model);
}

std::vector<std::size_t> magnitude_order(const std::vector<float>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::abs(values[x]) < std::abs(values[y]);
  });
  return order;
}

std::size_t prune_count(double target, std::size_t n) {
  return std::min(n, static_cast<std::size_t>(std::ceil(target * static_cast<double>(n))));
}

}  // namespace

std::string PassReport::to_line() const {
  std::ostringstream out;
  out << "pass=" << pass << " nodes_removed=" << nodes_removed << " nodes_merged=" << nodes_merged
      << " weights_zeroed=" << weights_zeroed << " sparsity_after=" << std::fixed
      << std::setprecision(4) << sparsity_after;
  if (!notes.empty()) {
    out << " notes=\"";
    for (std::size_t i = 0; i < notes.size(); ++i) out << (i ? "; " : "") << notes[i];
    out << '"';
  }
  return out.str();
}

double weight_sparsity(const ModelGraph& model) {
  std::int64_t zeros = 0, total = 0;
  for (const auto& layer : model.layers) {
    if (!is_linear_weighted(layer.kind)) continue;
    const auto& w = model.weights.at(layer.name)[0].values();
    total += w.size();
    zeros += (w.array() == 0.0f).count();
  }
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

PassResult fold_batchnorm(ModelGraph model) {
  PassReport report;
  report.pass = "fold-bn";
  const auto consumers = consumer_counts(model.layers);
  for (std::size_t i = 0; i < model.layers.size();) {
    const LayerSpec bn = model.layers[i];
    if (bn.kind != LayerKind::batchnorm) {
      ++i;
      continue;
    }
    const int p = bn.inputs.at(0) == kGraphInput ? -1 : model.index_of(bn.inputs.at(0));
    if (p < 0 || !is_linear_weighted(model.layers[static_cast<std::size_t>(p)].kind) ||
        consumers.at(bn.inputs.at(0)) != 1) {
      report.notes.push_back("skipped " + bn.name + ": no foldable predecessor");
      ++i;
      continue;
    }
    const auto& stats = model.weights.at(bn.name);
    const auto& gamma = stats[0].values();
    const auto& beta = stats[1].values();
    const auto& mean = stats[2].values();
    const auto& var = stats[3].values();
    auto& target = model.weights.at(bn.inputs[0]);
    Tensor<float>& w = target[0];
    Tensor<float>& b = target[1];
    const Eigen::Index per_channel = w.size() / w.dim(0);
    for (int c = 0; c < w.dim(0); ++c) {
      const double scale = static_cast<double>(gamma[c]) /
                           std::sqrt(static_cast<double>(var[c]) + bn.eps);
      auto row = w.values().segment(c * per_channel, per_channel);
      row = (row.cast<double>() * scale).cast<float>();
      b[c] = static_cast<float>((static_cast<double>(b[c]) - mean[c]) * scale + beta[c]);
    }
    remove_passthrough(model, i);
    ++report.nodes_removed;
    ++report.nodes_merged;
  }
  finish_report(model, report);
  return {std::move(model), std::move(report)};
}

PassResult strip_training_layers(ModelGraph model) {
  PassReport report;
  report.pass = "strip-train";
  for (std::size_t i = 0; i < model.layers.size();) {
    if (model.layers[i].kind == LayerKind::dropout) {
      remove_passthrough(model, i);
      ++report.nodes_removed;
    } else {
      ++i;
    }
  }
  finish_report(model, report);
  return {std::move(model), std::move(report)};
}

PassResult fuse_constants(ModelGraph model) {
  PassReport report;
  report.pass = "fuse-const";
  while (fuse_vertical_once(model, report) || fuse_horizontal_once(model, report)) {
  }
  validate(model);
  finish_report(model, report);
  return {std::move(model), std::move(report)};
}

PassResult prune_magnitude(ModelGraph model, double target, PruneScope scope) {
  if (!(target >= 0.0 && target < 1.0)) {
    throw PassError("prune target sparsity must be in [0, 1), got " + std::to_string(target));
  }
  PassReport report;
  report.pass = scope == PruneScope::global ? "prune-global" : "prune";
  std::vector<Tensor<float>*> tensors;
  for (const auto& layer : model.layers) {
    if (is_linear_weighted(layer.kind)) tensors.push_back(&model.weights.at(layer.name)[0]);
  }
  auto zero = [&](Tensor<float>& t, Eigen::Index i) {
    if (t[i] != 0.0f) ++report.weights_zeroed;
    t[i] = 0.0f;
  };
  if (scope == PruneScope::per_layer) {
    for (Tensor<float>* t : tensors) {
      std::vector<float> values(t->data(), t->data() + t->size());
      const auto order = magnitude_order(values);
      const std::size_t k = prune_count(target, values.size());
      for (std::size_t r = 0; r < k; ++r) zero(*t, static_cast<Eigen::Index>(order[r]));
    }
  } else {
    std::vector<float> values;
    std::vector<std::pair<std::size_t, Eigen::Index>> where;
    for (std::size_t l = 0; l < tensors.size(); ++l) {
      for (Eigen::Index i = 0; i < tensors[l]->size(); ++i) {
        values.push_back((*tensors[l])[i]);
        where.emplace_back(l, i);
      }
    }
    const auto order = magnitude_order(values);
    const std::size_t k = prune_count(target, values.size());
    for (std::size_t r = 0; r < k; ++r) {
      const auto [l, i] = where[order[r]];
      zero(*tensors[l], i);
    }
  }
  finish_report(model, report);
  return {std::move(model), std::move(report)};
}

std::vector<PassStep> parse_pipeline(const std::string& text) {
  std::vector<PassStep> steps;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    PassStep step;
    const auto colon = item.find(':');
    step.name = item.substr(0, colon);
    const bool is_prune = step.name == "prune" || step.name == "prune-global";
    if (is_prune) {
      if (colon == std::string::npos) {
        throw PassError("pass '" + step.name + "' needs a sparsity, e.g. " + step.name + ":0.5");
      }
      const std::string arg = item.substr(colon + 1);
      std::size_t used = 0;
      try {
        step.argument = std::stod(arg, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != arg.size()) {
        throw PassError("invalid sparsity '" + arg + "' for pass '" + step.name + "'");
      }
    } else if (colon != std::string::npos) {
      throw PassError("pass '" + step.name + "' takes no argument");
    }
    if (!is_prune && step.name != "fold-bn" && step.name != "strip-train" &&
        step.name != "fuse-const") {
      throw PassError("unknown pass '" + step.name +
                      "' (expected fold-bn, strip-train, fuse-const, prune:S, prune-global:S)");
    }
    steps.push_back(step);
  }
  return steps;
}

PipelineResult run_pipeline(ModelGraph model, const std::vector<PassStep>& steps) {
  PipelineResult out;
  bool fused = false;
  for (const auto& step : steps) {
    PassResult r;
    if (step.name == "fold-bn") {
      r = fold_batchnorm(std::move(model));
      if (fused) r.report.notes.push_back("ran after fuse-const; fused convs cannot be folded");
    } else if (step.name == "strip-train") {
      r = strip_training_layers(std::move(model));
    } else if (step.name == "fuse-const") {
      r = fuse_constants(std::move(model));
      fused = true;
    } else if (step.name == "prune") {
      r = prune_magnitude(std::move(model), step.argument, PruneScope::per_layer);
    } else if (step.name == "prune-global") {
      r = prune_magnitude(std::move(model), step.argument, PruneScope::global);
    } else {
      throw PassError("unknown pass '" + step.name + "'");
    }
    model = std::move(r.model);
    out.reports.push_back(std::move(r.report));
  }
  out.model = std::move(model);
  return out;
}

double PruneSchedule::sparsity_at(int epoch) const {
  if (ramp_epochs <= 0 || epoch >= ramp_epochs) return target;
  return target * static_cast<double>(std::max(epoch, 0)) / static_cast<double>(ramp_epochs);
}

}  // namespace pestdet
