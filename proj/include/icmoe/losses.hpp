#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "icmoe/tensor.hpp"

namespace icmoe {

/// Mean binary cross-entropy with logits (log-sum-exp stabilized).
Tensor ce_loss(const Tensor& logits, const Tensor& target);

/// 1 - (2 * sum(sigmoid(z) * y) + 1) / (sum(sigmoid(z)) + sum(y) + 1).
Tensor dice_loss(const Tensor& logits, const Tensor& target);

/// Weighted sum of the two segmentation losses, defaults 0.5 / 0.5.
Tensor seg_loss(const Tensor& ce, const Tensor& dice, double w_ce = 0.5, double w_dice = 0.5);

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }
};

struct Metrics {
    double dsc = 0, iou = 0, accuracy = 0, recall = 0, precision = 0;
};

ConfusionCounts confusion(const Tensor& pred, const Tensor& target);

/// DSC, IoU, accuracy, recall, precision on binary masks. A 0/0 ratio is
/// 1 when both masks are empty in the relevant sense, else 0.
Metrics metrics(const Tensor& pred, const Tensor& target);

Metrics metrics_from_counts(const ConfusionCounts& c);

struct DistributionReport {
    std::array<double, 21> bin_edges{};
    std::array<std::int64_t, 20> fg_counts{};
    std::array<std::int64_t, 20> bg_counts{};
    bool degenerate = false;  // all-constant features
};

/// First-principal-component histogram: power iteration on the centered
/// covariance (100 iterations, seeded start, largest-magnitude loading made
/// positive), scores min-max normalized to [0,1] and split into 20 bins by
/// the mask value. `features` is pixels x channels, `mask` is binary per pixel.
DistributionReport pca_distribution(const Tensor& features, const Tensor& mask);

}  // namespace icmoe
