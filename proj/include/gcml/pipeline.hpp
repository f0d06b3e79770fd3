// Glue shared by the command-line tool and the benchmark: data selection by
// view, one training phase driven by a RunConfig, and evaluation.
#pragma once

#include <span>

#include "gcml/config.hpp"
#include "gcml/retrieval.hpp"
#include "gcml/training.hpp"

namespace gcml {

/// The synthetic set from `synthetic` when data.root is empty, else the
/// manifest-described tree under data.root.
Dataset load_run_data(const RunConfig& cfg);

Dataset filter_views(const Dataset& data, std::span<const int> views);

/// Throws DataError when image shapes disagree with the model input.
void check_compatible(const Dataset& data, const ModelConfig& model);

/// Runs one phase on the configured training views: a stratified
/// class split for classify, an identity split for retrieve.
std::vector<EpochMetrics> run_phase(Model<float>& model, const RunConfig& cfg, Phase phase,
                                    Initialization init, const Dataset& data,
                                    const EpochCallback& on_epoch = {});

/// Rotated protocol on (database_view, query_view) with eval.seed.
ProtocolResult run_evaluation(Model<float>& model, const RunConfig& cfg, const Dataset& data);

}  // namespace gcml
