#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icmoe/data_synth.hpp"
#include "icmoe/experts.hpp"
#include "icmoe/losses.hpp"
#include "icmoe/ppav.hpp"
#include "icmoe/sgcl.hpp"

namespace icmoe {

struct LrSchedule {
    struct Piece {
        std::size_t until_epoch;  // inclusive, 1-based
        double lr;
    };
    std::vector<Piece> pieces = {{50, 1e-5}, {75, 5e-6}, {100, 1e-6}};

    double lr_for_epoch(std::size_t epoch) const;
    void validate() const;  // positive, non-increasing across boundaries
};

struct TrainConfig {
    EncoderConfig encoder;
    std::size_t epochs = 100;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    LrSchedule schedule;
    double rms_decay = 0.99;
    double rms_eps = 1e-8;
    double w_ce = 0.5;
    double w_dice = 0.5;
    double w_sgcl = 0.1;
    double fusion_alpha = 0.5;
    std::int64_t n_threshold_override = 0;  // <= 0 derives ceil(B / 3)
    bool balance_at_inference = true;
    bool aux_seg_losses = false;
    SgclAnchors anchors = SgclAnchors::equations;

    void validate() const;
};

enum class FinetuneMode { adaptive_only, ecfm, ecfm_sgcl };

std::string to_string(FinetuneMode mode);
FinetuneMode finetune_mode_from_string(const std::string& s);

/// RMSprop accumulator, one v buffer per parameter.
struct RmspropState {
    std::vector<std::vector<double>> v;
};

/// v <- decay * v + (1 - decay) * g^2; p <- p - lr * g / (sqrt(v) + eps).
/// Applied to every listed parameter; callers pass trainable ones only.
void rmsprop_step(std::vector<std::pair<std::string, Tensor>>& params, double lr, double decay,
                  double eps, RmspropState& state);

struct EpochRow {
    std::size_t epoch = 0;
    double lr = 0;
    double ce = 0, dice = 0, l1 = 0, l2 = 0, l3 = 0, sgcl = 0, total = 0;
    Metrics val;  // fused output on the validation split
};

struct RunRecord {
    std::vector<EpochRow> epochs;
    std::filesystem::path checkpoint_dir;
    Metrics final_val_fused;
    Metrics final_val_primary;
};

struct EvalResult {
    std::vector<std::pair<std::size_t, Metrics>> per_sample;          // fused output
    std::vector<std::pair<std::size_t, Metrics>> per_sample_primary;  // expert 2 alone
    Metrics mean_fused;
    Metrics mean_primary;
    std::vector<SelectionRecord> selections;  // sample ids are dataset indices
};

/// Stage 1: trains a single encoder with the segmentation loss on the
/// source domain and writes a pretrained checkpoint under out_dir.
EncoderWeights pretrain(const TrainConfig& config, const Dataset& data,
                        const std::filesystem::path& out_dir);

/// Stage 2: builds the expert trio from the pretrained trunk and
/// fine-tunes on the target domain. Run records (loss, schedule, selection
/// and validation CSVs) and the final checkpoint land under out_dir.
RunRecord finetune(const TrainConfig& config, const EncoderWeights& pretrained,
                   const Dataset& data, FinetuneMode mode, const std::filesystem::path& out_dir);

/// Inference-mode evaluation of the expert trio on the given sample
/// indices. When fuse_output is false the primary expert's logits are the
/// final output (the adaptive-only ablation).
EvalResult evaluate_ensemble(const TrainConfig& config, const std::array<ExpertParams, 3>& experts,
                             const Dataset& data, const std::vector<std::size_t>& indices,
                             bool fuse_output);

/// Evaluation of a single trunk (pretrained baseline).
EvalResult evaluate_single(const TrainConfig& config, const EncoderWeights& weights,
                           const Dataset& data, const std::vector<std::size_t>& indices);

void write_eval_csvs(const EvalResult& result, const std::filesystem::path& out_dir);

}  // namespace icmoe
