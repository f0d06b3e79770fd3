#include "gcml/pipeline.hpp"

#include <algorithm>

namespace gcml {

Dataset load_run_data(const RunConfig& cfg) {
  if (cfg.data_root.empty()) return generate_synthetic(cfg.synthetic);
  return load_dataset(cfg.data_root, cfg.data_manifest);
}

Dataset filter_views(const Dataset& data, std::span<const int> views) {
  Dataset out;
  for (const auto& s : data)
    if (std::find(views.begin(), views.end(), s.meta.view_id) != views.end()) out.push_back(s);
  return out;
}

void check_compatible(const Dataset& data, const ModelConfig& model) {
  for (const auto& s : data) {
    if (s.image.channels != model.input_channels || s.image.height != model.input_size ||
        s.image.width != model.input_size) {
      throw DataError("image " + s.meta.relative_path + " is " + std::to_string(s.image.channels) + "x" +
                      std::to_string(s.image.height) + "x" + std::to_string(s.image.width) +
                      ", the model expects " + std::to_string(model.input_channels) + "x" +
                      std::to_string(model.input_size) + "x" + std::to_string(model.input_size));
    }
  }
}

std::vector<EpochMetrics> run_phase(Model<float>& model, const RunConfig& cfg, Phase phase,
                                    Initialization init, const Dataset& data, const EpochCallback& on_epoch) {
  const auto train_views = filter_views(data, cfg.train_views);
  if (train_views.empty()) throw DataError("no samples in the configured training views");
  check_compatible(train_views, model.config());
  const auto& tc = cfg.train(phase);
  if (phase == Phase::classify) {
    const auto split = split_dataset(train_views, tc.split_ratio, tc.seed);
    return train_classification(model, select(train_views, split.train), select(train_views, split.validation),
                                tc, on_epoch);
  }
  const auto split = split_identities(train_views, tc.split_ratio, tc.seed);
  return train_retrieval(model, select(train_views, split.train), select(train_views, split.validation), tc, init,
                         on_epoch);
}

ProtocolResult run_evaluation(Model<float>& model, const RunConfig& cfg, const Dataset& data) {
  const int db_view[] = {cfg.database_view};
  const int query_view[] = {cfg.query_view};
  const auto database = filter_views(data, db_view);
  const auto queries = filter_views(data, query_view);
  if (database.empty()) throw DataError("no database samples (view " + std::to_string(cfg.database_view) + ")");
  if (queries.empty()) throw DataError("no query samples (view " + std::to_string(cfg.query_view) + ")");
  check_compatible(database, model.config());
  check_compatible(queries, model.config());
  return rotated_protocol(model, database, queries, cfg.eval_seed, cfg.eval_n_values,
                          method_label(model.config(), cfg.retrieve.rotation_augment));
}

}  // namespace gcml
