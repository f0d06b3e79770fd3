#include "gcml/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "gcml/metric.hpp"
#include "gcml/optim.hpp"
#include "gcml/retrieval.hpp"

namespace gcml {

std::string to_string(Phase p) { return p == Phase::classify ? "classify" : "retrieve"; }

Phase parse_phase(const std::string& name) {
  if (name == "classify") return Phase::classify;
  if (name == "retrieve") return Phase::retrieve;
  throw std::invalid_argument("unknown phase '" + name + "' (expected classify or retrieve)");
}

TrainConfig TrainConfig::defaults(Phase phase) {
  TrainConfig cfg;
  cfg.phase = phase;
  if (phase == Phase::retrieve) {
    cfg.lr = 0.001;
    cfg.split_ratio = 0.9;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be >= 0");
  if (!(split_ratio > 0 && split_ratio < 1)) throw std::invalid_argument("train: split_ratio must be in (0, 1)");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (!(margin >= 0)) throw std::invalid_argument("train: margin must be >= 0");
  if (views_per_identity < 2) throw std::invalid_argument("train: views_per_identity must be >= 2");
}

SplitIndices split_indices(std::span<const int> strata, double ratio, std::uint64_t seed) {
  if (strata.empty()) throw std::invalid_argument("split: empty dataset");
  if (!(ratio > 0 && ratio < 1)) throw std::invalid_argument("split: ratio must be in (0, 1)");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);
  Prng rng(seed);
  SplitIndices out;
  for (auto& [stratum, items] : groups) {
    const auto n = static_cast<long>(items.size());
    if (n < 2)
      throw std::invalid_argument("split: class " + std::to_string(stratum) +
                                  " has fewer than 2 items and cannot be stratified");
    rng.shuffle(items.begin(), items.end());
    const long k = std::clamp(static_cast<long>(std::floor(ratio * n + 0.5)), 1L, n - 1);
    out.train.insert(out.train.end(), items.begin(), items.begin() + k);
    out.validation.insert(out.validation.end(), items.begin() + k, items.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

SplitIndices split_dataset(const Dataset& data, double ratio, std::uint64_t seed) {
  const auto labels = class_labels(data);
  return split_indices(labels, ratio, seed);
}

SplitIndices split_identities(const Dataset& data, double ratio, std::uint64_t seed) {
  const auto ids = identity_labels(data);
  const int count = ids.empty() ? 0 : *std::max_element(ids.begin(), ids.end()) + 1;
  std::vector<int> identity_class(count, 0);
  for (std::size_t i = 0; i < data.size(); ++i) identity_class[ids[i]] = data[i].meta.class_id;
  const auto split = split_indices(identity_class, ratio, seed);
  std::vector<char> is_train(count, 0);
  for (auto id : split.train) is_train[id] = 1;
  SplitIndices out;
  for (std::size_t i = 0; i < data.size(); ++i) (is_train[ids[i]] ? out.train : out.validation).push_back(i);
  return out;
}

template <typename T>
Tensor<T> rotate_batch(const Tensor<T>& batch, std::span<const int> turns) {
  if (batch.ndim() != 4) throw ShapeError("rotate_batch: expected N x C x H x W");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (h != w) throw ShapeError("rotate_batch: images must be square");
  if (turns.size() != n) throw std::invalid_argument("rotate_batch: one turn count per sample required");
  const auto& in = batch.values();
  std::vector<T> out(in.size());
  const std::size_t plane = h * w;
  for (std::size_t s = 0; s < n; ++s) {
    const int k = ((turns[s] % 4) + 4) % 4;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = in.data() + (s * c + ch) * plane;
      T* dst = out.data() + (s * c + ch) * plane;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          std::size_t si = i, sj = j;
          // new[i][j] = old[j][n-1-i], applied k times.
          for (int t = 0; t < k; ++t) {
            const std::size_t ni = sj, nj = h - 1 - si;
            si = ni;
            sj = nj;
          }
          dst[i * w + j] = src[si * w + sj];
        }
      }
    }
  }
  return Tensor<T>(batch.shape(), std::move(out));
}

template <typename T>
Tensor<T> augment_rotate(const Tensor<T>& batch, Prng& rng, std::vector<int>* draws) {
  if (batch.ndim() != 4) throw ShapeError("augment_rotate: expected N x C x H x W");
  if (batch.dim(2) != batch.dim(3)) throw ShapeError("augment_rotate: images must be square");
  std::vector<int> turns(batch.dim(0));
  for (auto& t : turns) t = static_cast<int>(rng.below(4));
  auto out = rotate_batch(batch, turns);
  if (draws) *draws = std::move(turns);
  return out;
}

template Tensor<float> rotate_batch(const Tensor<float>&, std::span<const int>);
template Tensor<double> rotate_batch(const Tensor<double>&, std::span<const int>);
template Tensor<float> augment_rotate(const Tensor<float>&, Prng&, std::vector<int>*);
template Tensor<double> augment_rotate(const Tensor<double>&, Prng&, std::vector<int>*);

void write_metrics_tsv(std::ostream& out, const std::vector<EpochMetrics>& rows, bool wall_time) {
  out << "epoch\tphase\tloss\tscore\twall_seconds\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.epoch << '\t' << r.phase << '\t';
    std::snprintf(buf, sizeof buf, "%.6f", r.loss);
    out << buf << '\t';
    std::snprintf(buf, sizeof buf, "%.6f", r.score);
    out << buf << '\t';
    if (wall_time) {
      std::snprintf(buf, sizeof buf, "%.3f", r.wall_seconds);
      out << buf;
    } else {
      out << "NA";
    }
    out << '\n';
  }
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

void check_finite(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw DivergenceError(where + ": loss became non-finite");
}

int argmax_row(const std::vector<float>& v, std::size_t row, std::size_t cols) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < cols; ++j)
    if (v[row * cols + j] > v[row * cols + best]) best = j;
  return static_cast<int>(best);
}

std::vector<Tensor<float>> concat(std::vector<Tensor<float>> a, const std::vector<Tensor<float>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

struct EvalSums {
  double loss = 0;
  double correct = 0;
};

EvalSums evaluate_classification(Model<float>& model, const Dataset& data, int batch_size) {
  NoGradGuard guard;
  model.set_mode(Mode::eval);
  EvalSums sums;
  const auto labels = class_labels(data);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const auto logits = model.forward_classify(stack_images(data, idx));
    std::span<const int> batch_labels(labels.data() + start, end - start);
    sums.loss += cross_entropy(logits, batch_labels).item() * static_cast<double>(end - start);
    const auto& v = logits.values();
    for (std::size_t r = 0; r < end - start; ++r)
      if (argmax_row(v, r, logits.dim(1)) == batch_labels[r]) sums.correct += 1;
  }
  return sums;
}

// Running statistics from the current weights, over the training set in
// index order.
void recalibrate(Model<float>& model, const Dataset& data, int batch_size) {
  std::vector<Tensor<float>> batches;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    batches.push_back(stack_images(data, idx));
  }
  model.recalibrate_batchnorm(batches);
}

}  // namespace

std::vector<EpochMetrics> train_classification(Model<float>& model, const Dataset& train,
                                               const Dataset& validation, const TrainConfig& cfg,
                                               const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.phase != Phase::classify) throw std::invalid_argument("train_classification needs phase classify");
  if (train.empty()) throw std::invalid_argument("train_classification: empty training set");
  const auto labels = class_labels(train);
  for (int l : labels)
    if (l >= model.config().num_classes)
      throw std::invalid_argument("train_classification: class id " + std::to_string(l) +
                                  " exceeds the classifier size");

  Sgd<float> sgd(concat(model.trunk_parameters(), model.classifier_parameters()), cfg.lr, cfg.momentum);
  Prng rng(cfg.seed);
  std::vector<EpochMetrics> log;
  const auto start_time = Clock::now();
  auto emit = [&](EpochMetrics m) {
    m.wall_seconds = seconds_since(start_time);
    log.push_back(m);
    if (on_epoch) on_epoch(m);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = iota_indices(train.size());
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      std::vector<int> batch_labels;
      for (auto i : idx) batch_labels.push_back(labels[i]);
      auto images = stack_images(train, idx);
      if (cfg.rotation_augment) images = augment_rotate(images, rng);

      model.set_mode(Mode::train);
      auto logits = model.forward_classify(images);
      auto loss = cross_entropy(logits, std::span<const int>(batch_labels));
      const double value = loss.item();
      check_finite(value, "classification epoch " + std::to_string(epoch));
      loss.backward();
      sgd.step();

      loss_sum += value * static_cast<double>(idx.size());
      const auto& v = logits.values();
      for (std::size_t r = 0; r < idx.size(); ++r)
        if (argmax_row(v, r, logits.dim(1)) == batch_labels[r]) correct += 1;
    }
    recalibrate(model, train, cfg.batch_size);
    const double n = static_cast<double>(train.size());
    emit({epoch, "classify/train", loss_sum / n, correct / n, 0});
    if (!validation.empty()) {
      const auto sums = evaluate_classification(model, validation, cfg.batch_size);
      const double m = static_cast<double>(validation.size());
      check_finite(sums.loss, "classification validation");
      emit({epoch, "classify/val", sums.loss / m, sums.correct / m, 0});
    }
  }
  model.set_mode(Mode::eval);
  return log;
}

std::vector<std::vector<std::size_t>> sample_pk_batches(std::span<const int> identities, int batch_size,
                                                        int views_per_identity, Prng& rng) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < identities.size(); ++i) groups[identities[i]].push_back(i);
  std::vector<std::vector<std::size_t>> eligible;
  for (auto& [id, members] : groups)
    if (members.size() >= 2) eligible.push_back(members);
  if (eligible.size() < 2)
    throw MiningError("sampler: need at least two identities with two or more samples each");
  std::size_t k = static_cast<std::size_t>(views_per_identity);
  for (const auto& g : eligible) k = std::min(k, g.size());
  const std::size_t p = std::max<std::size_t>(2, static_cast<std::size_t>(batch_size) / k);

  std::vector<std::size_t> order(eligible.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> chunks;
  for (std::size_t s = 0; s < order.size(); s += p)
    chunks.emplace_back(order.begin() + s, order.begin() + std::min(order.size(), s + p));
  if (chunks.size() > 1 && chunks.back().size() < 2) {
    chunks[chunks.size() - 2].push_back(chunks.back()[0]);
    chunks.pop_back();
  }

  std::vector<std::vector<std::size_t>> batches;
  for (const auto& chunk : chunks) {
    std::vector<std::size_t> batch;
    for (auto g : chunk) {
      auto members = eligible[g];
      rng.shuffle(members.begin(), members.end());
      batch.insert(batch.end(), members.begin(), members.begin() + k);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<EpochMetrics> train_retrieval(Model<float>& model, const Dataset& train,
                                          const Dataset& validation, const TrainConfig& cfg,
                                          Initialization init, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.phase != Phase::retrieve) throw std::invalid_argument("train_retrieval needs phase retrieve");
  if (init == Initialization::cold_start && !cfg.allow_cold_start)
    throw ColdStartError(
        "retrieval fine-tuning starts from a classification-pretrained trunk: run the classify phase "
        "first and pass its checkpoint, or explicitly allow a cold start");

  const auto identities = identity_labels(train);
  Sgd<float> sgd(concat(model.trunk_parameters(), model.embedding_parameters()), cfg.lr, cfg.momentum);
  Prng rng(cfg.seed);
  const auto margin = static_cast<float>(cfg.margin);
  std::vector<EpochMetrics> log;
  const auto start_time = Clock::now();
  auto emit = [&](EpochMetrics m) {
    m.wall_seconds = seconds_since(start_time);
    log.push_back(m);
    if (on_epoch) on_epoch(m);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = sample_pk_batches(identities, cfg.batch_size, cfg.views_per_identity, rng);
    double loss_sum = 0, violating = 0, candidates = 0;
    for (const auto& idx : batches) {
      std::vector<int> batch_labels;
      for (auto i : idx) batch_labels.push_back(identities[i]);
      auto images = stack_images(train, idx);
      if (cfg.rotation_augment) images = augment_rotate(images, rng);

      model.set_mode(Mode::train);
      auto emb = model.forward_embed(images);
      const auto mined = dense_triplet_mine(emb.detach(), std::span<const int>(batch_labels), margin);
      candidates += static_cast<double>(mined.candidates);
      violating += static_cast<double>(mined.triples.size());
      if (mined.triples.empty()) continue;
      const auto a = mined.anchors(), p = mined.positives(), n = mined.negatives();
      auto loss = triplet_loss(select_rows(emb, std::span<const std::size_t>(a)),
                               select_rows(emb, std::span<const std::size_t>(p)),
                               select_rows(emb, std::span<const std::size_t>(n)), margin);
      const double value = loss.item();
      check_finite(value, "retrieval epoch " + std::to_string(epoch));
      loss.backward();
      sgd.step();
      loss_sum += value;
    }
    recalibrate(model, train, cfg.batch_size);
    emit({epoch, "retrieve/train", loss_sum / static_cast<double>(batches.size()),
          candidates > 0 ? violating / candidates : 0.0, 0});

    if (!validation.empty()) {
      const auto val_ids = identity_labels(validation);
      const auto emb = embed_dataset(model, validation, cfg.batch_size);
      const auto mined = dense_triplet_mine(emb, std::span<const int>(val_ids), margin);
      double value = 0;
      if (!mined.triples.empty()) {
        NoGradGuard guard;
        const auto a = mined.anchors(), p = mined.positives(), n = mined.negatives();
        value = triplet_loss(select_rows(emb, std::span<const std::size_t>(a)),
                             select_rows(emb, std::span<const std::size_t>(p)),
                             select_rows(emb, std::span<const std::size_t>(n)), margin)
                    .item();
      }
      check_finite(value, "retrieval validation");
      emit({epoch, "retrieve/val", value,
            static_cast<double>(mined.triples.size()) / static_cast<double>(mined.candidates), 0});
    }
  }
  model.set_mode(Mode::eval);
  return log;
}

}  // namespace gcml
