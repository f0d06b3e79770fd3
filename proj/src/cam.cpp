#include "gcml/cam.hpp"

#include <algorithm>
#include <cmath>

#include "gcml/gconv.hpp"

namespace gcml {

std::vector<float> cam_weights(Model<float>& model, const CamTarget& target) {
  if (target.mode == CamMode::classification) {
    const auto& w = model.classifier_weight();
    const std::size_t classes = w.dim(0), channels = w.dim(1);
    if (target.class_index < 0 || static_cast<std::size_t>(target.class_index) >= classes)
      throw std::invalid_argument("cam: class index " + std::to_string(target.class_index) +
                                  " outside the classification head");
    const auto& v = w.values();
    return {v.begin() + static_cast<long>(target.class_index * channels),
            v.begin() + static_cast<long>((target.class_index + 1) * channels)};
  }
  const auto& w = model.embedding_weight();
  const std::size_t dim = w.dim(0), channels = w.dim(1);
  if (target.db_embedding.size() != dim)
    throw std::invalid_argument("cam: database embedding has " + std::to_string(target.db_embedding.size()) +
                                " values, the embedding head produces " + std::to_string(dim));
  std::vector<float> out(channels, 0.0f);
  const auto& v = w.values();
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0;
    for (std::size_t d = 0; d < dim; ++d) acc += static_cast<double>(v[d * channels + c]) * target.db_embedding[d];
    out[c] = static_cast<float>(acc);
  }
  return out;
}

Heatmap weighted_activation_map(std::span<const float> activations, std::size_t channels, int height,
                                int width, std::span<const float> weights) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (activations.size() != channels * plane || weights.size() != channels)
    throw std::invalid_argument("cam: activation and weight sizes disagree");
  Heatmap map;
  map.height = height;
  map.width = width;
  std::vector<double> acc(plane, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) acc[i] += static_cast<double>(weights[c]) * activations[c * plane + i];
  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  const double range = *hi - *lo;
  map.values.resize(plane);
  for (std::size_t i = 0; i < plane; ++i)
    map.values[i] = range > 0 ? static_cast<float>((acc[i] - *lo) / range) : 0.0f;
  return map;
}

Heatmap compute_cam(Model<float>& model, const Image& image, const CamTarget& target) {
  const auto& cfg = model.config();
  if (image.channels != cfg.input_channels || image.height != cfg.input_size || image.width != cfg.input_size)
    throw std::invalid_argument("cam: image shape does not match the model input");
  const auto weights = cam_weights(model, target);
  NoGradGuard guard;
  const Mode previous = model.mode();
  model.set_mode(Mode::eval);
  Tensor<float> x({1, static_cast<std::size_t>(image.channels), static_cast<std::size_t>(image.height),
                   static_cast<std::size_t>(image.width)},
                  image.pixels);
  const auto pooled = group_pool(model.features(x));  // 1 x C x H' x W'
  model.set_mode(previous);
  return weighted_activation_map(pooled.values(), pooled.dim(1), static_cast<int>(pooled.dim(2)),
                                 static_cast<int>(pooled.dim(3)), weights);
}

Image colorize_heatmap(const Heatmap& heatmap) {
  Image out;
  out.channels = 3;
  out.height = heatmap.height;
  out.width = heatmap.width;
  const std::size_t plane = heatmap.values.size();
  out.pixels.resize(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const float x = heatmap.values[i];
    if (!(x >= 0.0f && x <= 1.0f)) throw std::invalid_argument("colorize: heatmap value outside [0, 1]");
    out.pixels[i] = x;
    out.pixels[plane + i] = std::min(x, 1.0f - x);
    out.pixels[2 * plane + i] = 1.0f - x;
  }
  return out;
}

Image overlay_heatmap(const Image& image, const Heatmap& heatmap) {
  if (heatmap.height <= 0 || heatmap.width <= 0) throw std::invalid_argument("overlay: empty heatmap");
  const Image color = colorize_heatmap(heatmap);
  Image out;
  out.channels = 3;
  out.height = image.height;
  out.width = image.width;
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  out.pixels.resize(3 * plane);
  for (int y = 0; y < image.height; ++y) {
    const int hy = y * heatmap.height / image.height;
    for (int x = 0; x < image.width; ++x) {
      const int hx = x * heatmap.width / image.width;
      float gray = 0;
      for (int c = 0; c < image.channels; ++c) gray += image.at(c, y, x);
      gray /= static_cast<float>(image.channels);
      for (int c = 0; c < 3; ++c)
        out.pixels[c * plane + static_cast<std::size_t>(y) * image.width + x] =
            0.5f * color.at(c, hy, hx) + 0.5f * gray;
    }
  }
  return out;
}

Heatmap rotate_heatmap(const Heatmap& heatmap, int quarter_turns) {
  Image img;
  img.channels = 1;
  img.height = heatmap.height;
  img.width = heatmap.width;
  img.pixels = heatmap.values;
  const auto rotated = rotate_image(img, quarter_turns);
  return {rotated.height, rotated.width, rotated.pixels};
}

}  // namespace gcml
