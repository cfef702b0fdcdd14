#pragma once

#include <array>

#include "icmoe/rng.hpp"
#include "icmoe/tensor.hpp"

namespace icmoe {

/// Trainable projection maps for the three contrastive terms.
struct SgclProjections {
    Tensor w1, w2, w3;  // embed_dim x proj_dim
    Tensor b1, b2, b3;  // proj_dim, zero-initialized
    double epsilon = 1e-8;

    static SgclProjections init(std::size_t embed_dim, std::size_t proj_dim, Rng& rng);

    std::array<Tensor, 6> parameters() { return {w1, b1, w2, b2, w3, b3}; }
};

/// Which feature sources anchor the consistency and diversity terms.
/// `equations` anchors consistency at source 2 and diversity at source 0;
/// `prose` swaps to the basic/adaptive reading, kept for ablation.
enum class SgclAnchors { equations, prose };

struct SgclTerms {
    Tensor l1, l2, l3, l_sgcl;
};

/// Foreground/background separation term, averaged over sources 0..3.
Tensor loss_semantic(const std::array<Tensor, 4>& y_fg, const std::array<Tensor, 4>& y_bg,
                     const Tensor& w1, const Tensor& b1);

/// Distance of non-anchor image features to the anchor source.
Tensor loss_consistency(const std::array<Tensor, 4>& y_img, const Tensor& w2, const Tensor& b2,
                        SgclAnchors anchors = SgclAnchors::equations);

Tensor loss_diversity(const std::array<Tensor, 4>& y_img, const Tensor& w3, const Tensor& b3,
                      SgclAnchors anchors = SgclAnchors::equations);

/// l2 / (l1 + l3 + epsilon).
Tensor sgcl_ratio(const Tensor& l1, const Tensor& l2, const Tensor& l3, double epsilon);

SgclTerms sgcl_terms(const std::array<Tensor, 4>& y_img, const std::array<Tensor, 4>& y_fg,
                     const std::array<Tensor, 4>& y_bg, SgclProjections& proj,
                     SgclAnchors anchors = SgclAnchors::equations);

/// w_ce * ce + w_dice * dice + w_sgcl * sgcl; weights must be non-negative.
Tensor total_loss(const Tensor& ce, const Tensor& dice, const Tensor& sgcl, double w_ce,
                  double w_dice, double w_sgcl);

}  // namespace icmoe
