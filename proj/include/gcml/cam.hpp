// Class activation maps over the last stage, for the classification head or
// for a retrieved database embedding.
#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "gcml/data.hpp"
#include "gcml/model.hpp"

namespace gcml {

enum class CamMode { classification, retrieval };

struct CamTarget {
  CamMode mode = CamMode::classification;
  int class_index = 0;
  std::vector<float> db_embedding;  // retrieval mode only
};

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Weighted sum of group-pooled activations (C x H' x W') for one image
/// (1 x C x H x W), min-max normalized; a constant map becomes all zeros.
Heatmap compute_cam(Model<float>& model, const Image& image, const CamTarget& target);

/// Channel weights for the target: a classifier row, or W_emb^T e_db.
std::vector<float> cam_weights(Model<float>& model, const CamTarget& target);

/// Weighted channel sum of C x H x W activations, then min-max normalization.
Heatmap weighted_activation_map(std::span<const float> activations, std::size_t channels,
                                int height, int width, std::span<const float> weights);

/// R = x, G = min(x, 1 - x), B = 1 - x. Values must lie in [0, 1].
Image colorize_heatmap(const Heatmap& heatmap);

/// Heatmap colors upsampled (nearest) to the image size, blended 50/50 with
/// the grayscale image.
Image overlay_heatmap(const Image& image, const Heatmap& heatmap);

Heatmap rotate_heatmap(const Heatmap& heatmap, int quarter_turns);

}  // namespace gcml
