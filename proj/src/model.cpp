#include "gcml/model.hpp"

#include <cmath>
#include <stdexcept>

namespace gcml {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::plain: return "plain";
    case Variant::p4: return "p4";
    case Variant::p4m: return "p4m";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "plain") return Variant::plain;
  if (name == "p4") return Variant::p4;
  if (name == "p4m") return Variant::p4m;
  throw std::invalid_argument("unknown model variant '" + name + "' (expected plain, p4 or p4m)");
}

GroupKind group_kind(Variant v) {
  switch (v) {
    case Variant::plain: return GroupKind::trivial;
    case Variant::p4: return GroupKind::p4;
    case Variant::p4m: return GroupKind::p4m;
  }
  return GroupKind::trivial;
}

std::size_t scaled_width(std::size_t base_width, Variant variant) {
  double w = static_cast<double>(base_width);
  if (variant == Variant::p4) w /= 2.0;
  if (variant == Variant::p4m) w /= std::sqrt(8.0);
  const auto rounded = static_cast<std::size_t>(std::floor(w + 0.5));
  return rounded < 1 ? 1 : rounded;
}

std::size_t effective_reduction(std::size_t channels, std::size_t reduction) {
  for (std::size_t r = std::min(reduction, channels); r > 1; --r)
    if (channels % r == 0) return r;
  return 1;
}

void ModelConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("model: at least one stage is required");
  for (const auto& s : stages) {
    if (s.blocks < 1) throw std::invalid_argument("model: every stage needs >= 1 block");
    if (s.base_width < 2) throw std::invalid_argument("model: base widths must be >= 2");
  }
  if (input_channels < 1) throw std::invalid_argument("model: input_channels must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("model: num_classes must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("model: embed_dim must be >= 1");
  if (attention_reduction < 1) throw std::invalid_argument("model: attention_reduction must be >= 1");
  const int pools = static_cast<int>(stages.size()) - 1;
  if (input_size < 1 || input_size % (1 << pools) != 0) {
    throw std::invalid_argument("model: input_size " + std::to_string(input_size) +
                                " must be divisible by 2^" + std::to_string(pools));
  }
}

// ---------------------------------------------------------------------------

template <typename T>
ResidualBlock<T>::ResidualBlock(const GroupSpec& spec, std::size_t in_channels,
                                std::size_t out_channels)
    : conv1(spec, in_channels, out_channels, 3),
      conv2(spec, out_channels, out_channels, 3),
      bn1(out_channels),
      bn2(out_channels) {
  if (in_channels != out_channels)
    projection = std::make_unique<GroupConv<T>>(spec, in_channels, out_channels, 1);
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  auto y = relu(bn1.forward(conv1.forward(x), mode));
  y = bn2.forward(conv2.forward(y), mode);
  auto skip = projection ? projection->forward(x) : x;
  return relu(add(y, skip));
}

template <typename T>
void ResidualBlock<T>::init(Prng& rng) {
  conv1.init_he_uniform(rng);
  conv2.init_he_uniform(rng);
  if (projection) projection->init_he_uniform(rng);
}

namespace {

template <typename T>
void collect_bn(const std::string& prefix, GroupBatchNorm<T>& bn,
                std::vector<NamedTensor<T>>* params, std::vector<NamedTensor<T>>* buffers,
                std::vector<std::pair<std::string, BatchNormStats<T>*>>* stats) {
  if (params) {
    params->push_back({prefix + ".gamma", bn.gamma()});
    params->push_back({prefix + ".beta", bn.beta()});
  }
  auto& st = bn.stats();
  if (buffers) {
    const std::size_t c = bn.channels();
    std::vector<T> mean = st.running_mean, var = st.running_var;
    mean.resize(c, T(0));
    var.resize(c, T(1));
    buffers->push_back({prefix + ".running_mean", Tensor<T>({c}, std::move(mean))});
    buffers->push_back({prefix + ".running_var", Tensor<T>({c}, std::move(var))});
  }
  if (stats) stats->push_back({prefix, &st});
}

template <typename Conv, typename T>
void collect_conv(const std::string& prefix, Conv& conv, std::vector<NamedTensor<T>>* params) {
  if (!params) return;
  params->push_back({prefix + ".weight", conv.weight()});
  params->push_back({prefix + ".bias", conv.bias()});
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Model<T>::Model(const ModelConfig& config) : config_(config), spec_(group_kind(config.variant)) {
  config_.validate();
  for (const auto& s : config_.stages)
    widths_.push_back(scaled_width(static_cast<std::size_t>(s.base_width), config_.variant));

  stem_ = std::make_unique<LiftingConv<T>>(spec_, static_cast<std::size_t>(config_.input_channels),
                                           widths_[0], 3);
  stem_bn_ = std::make_unique<GroupBatchNorm<T>>(widths_[0]);
  std::size_t in = widths_[0];
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    Stage<T> stage;
    for (int b = 0; b < config_.stages[s].blocks; ++b) {
      stage.blocks.emplace_back(spec_, in, widths_[s]);
      in = widths_[s];
    }
    if (config_.attention) {
      const auto r = effective_reduction(widths_[s], static_cast<std::size_t>(config_.attention_reduction));
      stage.attention = std::make_unique<ChannelAttention<T>>(widths_[s], r);
    }
    stages_.push_back(std::move(stage));
  }
  const std::size_t last = widths_.back();
  const auto classes = static_cast<std::size_t>(config_.num_classes);
  const auto embed = static_cast<std::size_t>(config_.embed_dim);
  cls_w_ = Tensor<T>::zeros({classes, last});
  cls_b_ = Tensor<T>::zeros({classes});
  emb_w_ = Tensor<T>::zeros({embed, last});
  emb_b_ = Tensor<T>::zeros({embed});
  for (auto* t : {&cls_w_, &cls_b_, &emb_w_, &emb_b_}) t->set_requires_grad(true);

  Prng rng(config_.seed);
  stem_->init_he_uniform(rng);
  for (auto& stage : stages_) {
    for (auto& block : stage.blocks) block.init(rng);
    if (stage.attention) stage.attention->init_he_uniform(rng);
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(last));
  for (auto& v : cls_w_.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  for (auto& v : emb_w_.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
Tensor<T> Model<T>::features(const Tensor<T>& images) {
  const auto size = static_cast<std::size_t>(config_.input_size);
  if (images.ndim() != 4 || images.dim(1) != static_cast<std::size_t>(config_.input_channels) ||
      images.dim(2) != size || images.dim(3) != size) {
    throw ShapeError("model: expected N x " + std::to_string(config_.input_channels) + " x " +
                     std::to_string(size) + " x " + std::to_string(size) + " images, got " +
                     shape_to_string(images.shape()));
  }
  auto x = relu(stem_bn_->forward(stem_->forward(images), mode_));
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) x = gspatial_maxpool(x);
    for (auto& block : stages_[s].blocks) x = block.forward(x, mode_);
    if (stages_[s].attention) x = stages_[s].attention->forward(x);
  }
  return x;
}

template <typename T>
Tensor<T> Model<T>::pool(const Tensor<T>& features) const {
  return global_avgpool(group_pool(features));
}

template <typename T>
Tensor<T> Model<T>::classify_head(const Tensor<T>& pooled) const {
  return linear(pooled, cls_w_, cls_b_);
}

template <typename T>
Tensor<T> Model<T>::embed_head(const Tensor<T>& pooled) const {
  return l2_normalize_rows(linear(pooled, emb_w_, emb_b_));
}

template <typename T>
Tensor<T> Model<T>::forward_classify(const Tensor<T>& images) {
  return classify_head(pool(features(images)));
}

template <typename T>
Tensor<T> Model<T>::forward_embed(const Tensor<T>& images) {
  return embed_head(pool(features(images)));
}

template <typename T>
void Model<T>::collect(std::vector<NamedTensor<T>>* params, std::vector<NamedTensor<T>>* buffers,
                       std::vector<std::pair<std::string, BatchNormStats<T>*>>* stats) {
  collect_conv<LiftingConv<T>, T>("stem.conv", *stem_, params);
  collect_bn<T>("stem.bn", *stem_bn_, params, buffers, stats);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string sp = "stage" + std::to_string(s);
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      auto& block = stages_[s].blocks[b];
      const std::string bp = sp + ".block" + std::to_string(b);
      collect_conv<GroupConv<T>, T>(bp + ".conv1", block.conv1, params);
      collect_bn<T>(bp + ".bn1", block.bn1, params, buffers, stats);
      collect_conv<GroupConv<T>, T>(bp + ".conv2", block.conv2, params);
      collect_bn<T>(bp + ".bn2", block.bn2, params, buffers, stats);
      if (block.projection) collect_conv<GroupConv<T>, T>(bp + ".projection", *block.projection, params);
    }
    if (auto& att = stages_[s].attention; att && params) {
      params->push_back({sp + ".attention.w1", att->w1()});
      params->push_back({sp + ".attention.b1", att->b1()});
      params->push_back({sp + ".attention.w2", att->w2()});
      params->push_back({sp + ".attention.b2", att->b2()});
    }
  }
  if (params) {
    params->push_back({"head.classify.weight", cls_w_});
    params->push_back({"head.classify.bias", cls_b_});
    params->push_back({"head.embed.weight", emb_w_});
    params->push_back({"head.embed.bias", emb_b_});
  }
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::named_parameters() {
  std::vector<NamedTensor<T>> out;
  collect(&out, nullptr, nullptr);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::named_buffers() {
  std::vector<NamedTensor<T>> out;
  collect(nullptr, &out, nullptr);
  return out;
}

template <typename T>
void Model<T>::set_buffer(const std::string& name, std::span<const T> values) {
  std::vector<std::pair<std::string, BatchNormStats<T>*>> stats;
  collect(nullptr, nullptr, &stats);
  for (auto& [prefix, st] : stats) {
    std::vector<T>* target = nullptr;
    if (name == prefix + ".running_mean") target = &st->running_mean;
    if (name == prefix + ".running_var") target = &st->running_var;
    if (!target) continue;
    target->assign(values.begin(), values.end());
    if (st->running_mean.size() != values.size()) st->running_mean.resize(values.size(), T(0));
    if (st->running_var.size() != values.size()) st->running_var.resize(values.size(), T(1));
    st->initialized = true;
    return;
  }
  throw std::invalid_argument("model: no buffer named '" + name + "'");
}

template <typename T>
void Model<T>::recalibrate_batchnorm(std::span<const Tensor<T>> batches) {
  if (batches.empty()) throw std::invalid_argument("model: recalibration needs at least one batch");
  std::vector<std::pair<std::string, BatchNormStats<T>*>> stats;
  collect(nullptr, nullptr, &stats);
  std::vector<std::vector<double>> mean(stats.size()), var(stats.size());
  const Mode saved = mode_;
  mode_ = Mode::train;
  NoGradGuard guard;
  double total = 0;
  for (const auto& batch : batches) {
    for (auto& [name, st] : stats) st->initialized = false;
    features(batch);
    const double w = static_cast<double>(batch.dim(0));
    total += w;
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const auto* st = stats[i].second;
      mean[i].resize(st->running_mean.size(), 0.0);
      var[i].resize(st->running_var.size(), 0.0);
      for (std::size_t c = 0; c < mean[i].size(); ++c) {
        mean[i][c] += w * st->running_mean[c];
        var[i][c] += w * st->running_var[c];
      }
    }
  }
  mode_ = saved;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    auto* st = stats[i].second;
    for (std::size_t c = 0; c < mean[i].size(); ++c) {
      st->running_mean[c] = static_cast<T>(mean[i][c] / total);
      st->running_var[c] = static_cast<T>(var[i][c] / total);
    }
    st->initialized = true;
  }
}

template <typename T>
std::vector<Tensor<T>> Model<T>::trunk_parameters() {
  std::vector<Tensor<T>> out;
  for (auto& p : named_parameters())
    if (p.name.rfind("head.", 0) != 0) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::classifier_parameters() {
  return {cls_w_, cls_b_};
}

template <typename T>
std::vector<Tensor<T>> Model<T>::embedding_parameters() {
  return {emb_w_, emb_b_};
}

template <typename T>
std::size_t Model<T>::param_count() {
  std::size_t n = 0;
  for (auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Model<float>;
template class Model<double>;

}  // namespace gcml
