// Two-phase training: classification pretraining, then triplet fine-tuning
// of the embedding head on P identities x K views batches.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcml/data.hpp"
#include "gcml/metric.hpp"
#include "gcml/model.hpp"
#include "gcml/prng.hpp"

namespace gcml {

enum class Phase { classify, retrieve };

std::string to_string(Phase p);
Phase parse_phase(const std::string& name);

struct TrainConfig {
  Phase phase = Phase::classify;
  int epochs = 30;
  int batch_size = 32;
  double lr = 0.01;
  double momentum = 0.9;
  double margin = 0.2;
  double split_ratio = 0.7;
  std::uint64_t seed = 1;
  bool rotation_augment = false;
  int views_per_identity = 4;
  bool allow_cold_start = false;

  /// Phase defaults: classify lr 0.01 and split 0.7, retrieve lr 0.001 and
  /// split 0.9.
  static TrainConfig defaults(Phase phase);
  void validate() const;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ColdStartError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Stratified split of items 0..strata.size()-1. Each stratum, in ascending
/// stratum order, is shuffled with one shared Prng(seed) and its first
/// round(ratio * n) items (clamped to [1, n - 1]) go to train. Both index
/// lists are returned sorted.
SplitIndices split_indices(std::span<const int> strata, double ratio, std::uint64_t seed);
/// Sample-level split stratified by class.
SplitIndices split_dataset(const Dataset& data, double ratio, std::uint64_t seed);
/// Identity-level split stratified by class: all views of one instance land
/// on the same side. Returned indices are sample indices.
SplitIndices split_identities(const Dataset& data, double ratio, std::uint64_t seed);

/// Rotates sample i of an N x C x H x W batch by turns[i] quarter turns
/// counter-clockwise (an exact index permutation).
template <typename T>
Tensor<T> rotate_batch(const Tensor<T>& batch, std::span<const int> turns);

/// Rotates each sample by a uniform draw from {0, 90, 180, 270} degrees.
template <typename T>
Tensor<T> augment_rotate(const Tensor<T>& batch, Prng& rng, std::vector<int>* draws = nullptr);

struct EpochMetrics {
  int epoch = 0;
  std::string phase;  // e.g. "classify/train", "retrieve/val"
  double loss = 0;
  double score = 0;   // accuracy, or violating-triplet fraction
  double wall_seconds = 0;
};

/// Columns: epoch, phase, loss, score, wall_seconds. Without `wall_time`
/// the last column is "NA" so logs of identical runs are byte-identical.
void write_metrics_tsv(std::ostream& out, const std::vector<EpochMetrics>& rows, bool wall_time);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Cross-entropy on class labels, SGD over trunk and classification head.
/// After every epoch the batch-norm running statistics are re-estimated on
/// the training set. The model is left in eval mode.
std::vector<EpochMetrics> train_classification(Model<float>& model, const Dataset& train,
                                               const Dataset& validation, const TrainConfig& cfg,
                                               const EpochCallback& on_epoch = {});

enum class Initialization { from_classification, cold_start };

/// Triplet loss on densely mined violating triples, SGD over trunk and
/// embedding head. Steps whose batch has no violating triple apply no update.
/// Running statistics are re-estimated after every epoch as above.
std::vector<EpochMetrics> train_retrieval(Model<float>& model, const Dataset& train,
                                          const Dataset& validation, const TrainConfig& cfg,
                                          Initialization init, const EpochCallback& on_epoch = {});

/// P x K batches for one epoch: identities with at least two samples are
/// shuffled and chunked by P = max(2, batch_size / K); each contributes K
/// randomly chosen samples, K = min(views_per_identity, smallest group).
std::vector<std::vector<std::size_t>> sample_pk_batches(std::span<const int> identities,
                                                        int batch_size, int views_per_identity,
                                                        Prng& rng);

}  // namespace gcml
