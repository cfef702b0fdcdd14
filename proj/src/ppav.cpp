#include "icmoe/ppav.hpp"

#include <cmath>
#include <stdexcept>

namespace icmoe {

namespace {

void check_binary(const Tensor& t, const char* who) {
    for (double v : t.data())
        if (v != 0.0 && v != 1.0)
            throw std::invalid_argument(std::string(who) + ": input is not binary");
}

// Per-sample view of a B x H x W tensor as a plain H x W tensor.
Tensor sample_slice(const Tensor& t, std::size_t sample) {
    const std::size_t hw = t.shape()[1] * t.shape()[2];
    std::vector<double> d(t.data().begin() + static_cast<std::ptrdiff_t>(sample * hw),
                          t.data().begin() + static_cast<std::ptrdiff_t>((sample + 1) * hw));
    return Tensor({t.shape()[1], t.shape()[2]}, std::move(d));
}

}  // namespace

Tensor binarize(const Tensor& logits) {
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits.data()[i] >= 0.0 ? 1.0 : 0.0;
    return Tensor(logits.shape(), std::move(out));
}

Tensor pseudo_gt(const Tensor& m0, const Tensor& m1, const Tensor& m3) {
    if (m0.shape() != m1.shape() || m0.shape() != m3.shape())
        throw std::invalid_argument("pseudo_gt: shape mismatch " + shape_str(m0.shape()) + ", " +
                                    shape_str(m1.shape()) + ", " + shape_str(m3.shape()));
    check_binary(m0, "pseudo_gt");
    check_binary(m1, "pseudo_gt");
    check_binary(m3, "pseudo_gt");
    std::vector<double> out(m0.size());
    for (std::size_t i = 0; i < m0.size(); ++i) {
        const double votes = m0.data()[i] + m1.data()[i] + m3.data()[i];
        out[i] = votes > 1.0 ? 1.0 : 0.0;
    }
    return Tensor(m0.shape(), std::move(out));
}

double score(const Tensor& mask, const Tensor& ref) {
    if (mask.shape() != ref.shape())
        throw std::invalid_argument("score: shape mismatch " + shape_str(mask.shape()) + " vs " +
                                    shape_str(ref.shape()));
    check_binary(mask, "score");
    check_binary(ref, "score");
    double dist = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) dist += std::fabs(ref.data()[i] - mask.data()[i]);
    return 1.0 - dist / static_cast<double>(mask.size());
}

int select_balanced(std::array<double, 3> scores, SelectionState& state) {
    std::array<bool, 3> rejected = {false, false, false};
    int chosen = -1;
    for (;;) {
        int best = -1;
        for (int e = 0; e < 3; ++e) {
            if (rejected[e]) continue;
            if (best < 0 || scores[e] > scores[best]) best = e;  // ties keep lowest slot
        }
        if (best < 0) break;  // every candidate saturated
        if (state.counts[best] > state.n_threshold) {
            rejected[best] = true;  // score zeroed, argmax re-taken
            continue;
        }
        chosen = best;
        break;
    }
    if (chosen < 0) {
        // Fallback: least-used candidate, lowest slot on ties.
        chosen = 0;
        for (int e = 1; e < 3; ++e)
            if (state.counts[e] < state.counts[chosen]) chosen = e;
    }
    ++state.counts[chosen];
    return chosen;
}

Tensor fuse(const Tensor& p_primary, const Tensor& p_chosen, double fusion_alpha) {
    if (p_primary.shape() != p_chosen.shape())
        throw std::invalid_argument("fuse: shape mismatch " + shape_str(p_primary.shape()) +
                                    " vs " + shape_str(p_chosen.shape()));
    return add(p_primary, mul_scalar(p_chosen, fusion_alpha));
}

PpavResult ppav_batch(const PredictionSet& preds, SelectionState& state, PpavMode mode,
                      bool carry_counts) {
    const Tensor& p2 = preds.logits[2];
    if (p2.shape().size() != 3)
        throw std::invalid_argument("ppav_batch: logits must be B x H x W, got " +
                                    shape_str(p2.shape()));
    for (int e = 0; e < 4; ++e)
        if (preds.logits[e].shape() != p2.shape())
            throw std::invalid_argument("ppav_batch: logit shape mismatch across sources");
    if (mode == PpavMode::training && !preds.gt.has_value())
        throw std::invalid_argument("ppav_batch: training mode requires ground truth");

    const std::size_t batch = p2.shape()[0];
    const std::size_t hw = p2.shape()[1] * p2.shape()[2];

    if (!carry_counts) state.reset_counts();
    if (state.n_threshold <= 0)
        state.n_threshold = static_cast<std::int64_t>((batch + 2) / 3);  // ceil(B / 3)

    // Candidate masks are a non-differentiable side channel.
    std::array<Tensor, 3> cand_masks;
    for (int c = 0; c < 3; ++c) cand_masks[c] = binarize(preds.logits[kCandidateSources[c]]);

    // Per-sample 0/1 row selectors; constants on the tape, so gradients
    // flow through the fusion arithmetic only.
    std::array<std::vector<double>, 3> selector;
    for (auto& s : selector) s.assign(batch * hw, 0.0);

    PpavResult result;
    for (std::size_t i = 0; i < batch; ++i) {
        std::array<Tensor, 3> masks;
        for (int c = 0; c < 3; ++c) masks[c] = sample_slice(cand_masks[c], i);

        Tensor ref = mode == PpavMode::training ? sample_slice(*preds.gt, i)
                                                : pseudo_gt(masks[0], masks[1], masks[2]);

        SelectionRecord rec;
        rec.sample = i;
        for (int c = 0; c < 3; ++c) rec.scores[c] = score(masks[c], ref);

        const int slot = select_balanced(rec.scores, state);
        rec.chosen_source = kCandidateSources[slot];
        rec.count_after = state.counts[slot];
        result.log.push_back(rec);

        for (std::size_t k = 0; k < hw; ++k) selector[slot][i * hw + k] = 1.0;
    }

    Tensor chosen = Tensor::zeros(p2.shape());
    for (int c = 0; c < 3; ++c) {
        Tensor sel(p2.shape(), std::move(selector[c]));
        chosen = add(chosen, mul(sel, preds.logits[kCandidateSources[c]]));
    }
    result.p_final = fuse(p2, chosen, state.fusion_alpha);
    return result;
}

}  // namespace icmoe
