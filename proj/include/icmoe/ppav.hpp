#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "icmoe/tensor.hpp"

namespace icmoe {

/// Logits for the four prediction sources: experts 0..2 plus the mean
/// fusion source 3. GT is present in training, PGT is built at inference.
struct PredictionSet {
    std::array<Tensor, 4> logits;  // each B x H x W
    std::optional<Tensor> gt;      // binary, training only
};

/// Candidate slots map to prediction sources {0, 1, 3}; source 2 is the
/// primary expert and never a candidate.
constexpr std::array<int, 3> kCandidateSources = {0, 1, 3};

struct SelectionState {
    std::array<std::int64_t, 3> counts{};  // per candidate slot
    std::int64_t n_threshold = 1;
    double fusion_alpha = 0.5;

    void reset_counts() { counts = {0, 0, 0}; }
};

enum class PpavMode { training, inference };

struct SelectionRecord {
    std::size_t sample = 0;
    std::array<double, 3> scores{};  // candidate order 0, 1, 3
    int chosen_source = 0;           // one of {0, 1, 3}
    std::int64_t count_after = 0;
};

struct PpavResult {
    Tensor p_final;  // B x H x W fused logits
    std::vector<SelectionRecord> log;
};

/// 1 where logit >= 0 (equivalently sigmoid >= 0.5), else 0.
Tensor binarize(const Tensor& logits);

/// Per-pixel majority vote of the three candidate masks.
Tensor pseudo_gt(const Tensor& m0, const Tensor& m1, const Tensor& m3);

/// Pixel agreement fraction 1 - mean |ref - mask|, in [0, 1].
double score(const Tensor& mask, const Tensor& ref);

/// Load-balanced argmax: candidates whose count exceeds the threshold are
/// rejected and the argmax re-taken; if all are saturated the least-used
/// candidate wins. Increments the winner's count. Returns the slot (0..2).
int select_balanced(std::array<double, 3> scores, SelectionState& state);

/// P_final = p_primary + fusion_alpha * p_chosen, in logit space.
Tensor fuse(const Tensor& p_primary, const Tensor& p_chosen, double fusion_alpha);

/// Full per-batch voting pass. Counts are reset at batch start unless
/// `carry_counts` is set (run-wide balancing, for ablation). The default
/// threshold is ceil(B / 3) when state.n_threshold <= 0.
PpavResult ppav_batch(const PredictionSet& preds, SelectionState& state, PpavMode mode,
                      bool carry_counts = false);

}  // namespace icmoe
