#ifndef PESTDET_GRAPH_OPT_HPP
#define PESTDET_GRAPH_OPT_HPP

// Graph rewriting passes. Each pass takes a model by value and returns the
// rewritten model with a report; inputs are never mutated.
//
// Order matters: fold-bn must run before fuse-const, because horizontal fusion
// places a channel slice between a conv and its batchnorm, which then no
// longer has a foldable predecessor.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pestdet/model.hpp"

namespace pestdet {

class PassError : public ModelError {
 public:
  using ModelError::ModelError;
};

struct PassReport {
  std::string pass;
  int nodes_removed = 0;
  int nodes_merged = 0;
  std::int64_t weights_zeroed = 0;
  double sparsity_after = 0.0;
  std::vector<std::string> notes;

  /// Single line of `key=value` fields; notes are joined with "; ".
  std::string to_line() const;
};

struct PassResult {
  ModelGraph model;
  PassReport report;
};

/// Fraction of exactly-zero entries among conv, depthwise and dense weight
/// tensors (biases and batchnorm parameters excluded).
double weight_sparsity(const ModelGraph& model);

/// Absorbs each batchnorm into the conv/depthwise/dense layer feeding it.
/// A batchnorm is folded only when that producer has no other consumer;
/// others are left in place and noted in the report.
PassResult fold_batchnorm(ModelGraph model);

/// Removes dropout nodes.
PassResult strip_training_layers(ModelGraph model);

/// Vertical fusion: a 1x1 conv (stride 1, ungrouped, unmasked) or dense layer
/// whose sole consumer is another such layer of the same kind is composed into
/// it, as long as the composed weight matrix is no larger than the pair.
/// Horizontal fusion: ungrouped unmasked convs reading the same single input
/// with identical ConvSpec become one conv followed by channel slices that
/// keep the original layer names. Repeats until nothing changes.
PassResult fuse_constants(ModelGraph model);

enum class PruneScope { per_layer, global };

/// Zeroes the ceil(target * n) smallest-magnitude weights of every conv,
/// depthwise and dense layer (or of all of them pooled, for global scope).
/// Ties go to the lower index. Biases are untouched.
PassResult prune_magnitude(ModelGraph model, double target_sparsity,
                           PruneScope scope = PruneScope::per_layer);

struct PassStep {
  std::string name;  // fold-bn, strip-train, fuse-const, prune, prune-global
  double argument = 0.0;
};

/// Parses e.g. "fold-bn,strip-train,fuse-const,prune:0.5".
std::vector<PassStep> parse_pipeline(const std::string& text);

struct PipelineResult {
  ModelGraph model;
  std::vector<PassReport> reports;
};

PipelineResult run_pipeline(ModelGraph model, const std::vector<PassStep>& steps);

/// Iterative pruning during training: every `every` epochs the trainer prunes
/// to a sparsity that ramps linearly from 0 to `target` at `ramp_epochs`.
struct PruneSchedule {
  double target = 0.5;
  int every = 10;
  int ramp_epochs = 100;
  PruneScope scope = PruneScope::per_layer;

  bool due(int epoch) const { return every > 0 && epoch > 0 && epoch % every == 0; }
  double sparsity_at(int epoch) const;
};

}  // namespace pestdet

#endif  // PESTDET_GRAPH_OPT_HPP
