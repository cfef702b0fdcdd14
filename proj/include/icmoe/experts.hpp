#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "icmoe/rng.hpp"
#include "icmoe/tensor.hpp"

namespace icmoe {

enum class ExpertKind { basic, semantic, adaptive };

std::string to_string(ExpertKind kind);
ExpertKind expert_kind_from_string(const std::string& s);

struct EncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 16;
    std::size_t num_blocks = 4;   // >= 2: the semantic expert tunes the last two
    std::size_t adapter_dim = 4;  // bottleneck width of the adaptive expert

    void validate() const;
    std::size_t num_patches() const {
        const std::size_t g = image_size / patch_size;
        return g * g;
    }
    std::size_t proj_dim() const { return embed_dim / 2 == 0 ? 1 : embed_dim / 2; }
};

struct Affine {
    Tensor w;  // in x out
    Tensor b;  // out

    Affine clone(bool trainable) const { return {w.clone(trainable), b.clone(trainable)}; }
};

struct Block {
    Affine fc1, fc2;  // residual MLP: x + fc2(relu(fc1(x)))
};

struct Adapter {
    Affine down, up;  // residual bottleneck, up zero-initialized
};

/// Shared encoder trunk: patch embedding, residual blocks, per-patch head.
struct EncoderWeights {
    Affine patch_embed;         // patch_size^2 -> embed_dim
    std::vector<Block> blocks;  // embed_dim -> embed_dim
    Affine head;                // embed_dim -> patch_size^2 logits

    EncoderWeights clone(bool trainable) const;
};

struct ExpertParams {
    ExpertKind kind = ExpertKind::basic;
    EncoderWeights enc;
    std::vector<Adapter> adapters;  // adaptive expert only, one per block

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;
    std::vector<Tensor> parameters() const;
    std::vector<Tensor> trainable_parameters() const;
};

struct ExpertOutputs {
    Tensor y_img;  // (B * patches) x embed_dim
    Tensor y_fg, y_bg;  // same shape, recorded as constants
    Tensor p;      // B x H x W logits
};

struct EnsembleOutputs {
    std::array<ExpertOutputs, 3> experts;
    Tensor y3_img, y3_fg, y3_bg;  // elementwise means of the three feature sets
    Tensor p3;                    // (p0 + p1 + p2) / 3
};

struct Complexity {
    std::size_t total_params = 0;
    std::size_t trainable_params = 0;
    std::size_t mac_per_image = 0;  // one ensemble forward, image pass
};

/// Fresh randomly-initialized trunk (the pretraining stage trains it).
EncoderWeights init_encoder(const EncoderConfig& config, Rng& rng);

/// Clones the pretrained trunk into the basic/semantic/adaptive trio with
/// per-kind trainability. The adaptive expert's adapters start as the
/// identity (zero up-projection), so its initial forward equals the basic
/// expert's.
std::array<ExpertParams, 3> build_experts(const EncoderConfig& config,
                                          const EncoderWeights& pretrained, Rng& rng);

/// Patchify -> embed -> blocks (+ adapter residual) -> features; head +
/// unpatchify -> logits. Foreground/background passes run with gradient
/// recording disabled when provided.
ExpertOutputs forward_expert(const EncoderConfig& config, const ExpertParams& params,
                             const Tensor& x_img, const Tensor* x_fg = nullptr,
                             const Tensor* x_bg = nullptr);

EnsembleOutputs forward_ensemble(const EncoderConfig& config,
                                 const std::array<ExpertParams, 3>& experts, const Tensor& x_img,
                                 const Tensor* x_fg = nullptr, const Tensor* x_bg = nullptr);

Complexity count_complexity(const EncoderConfig& config, const std::array<ExpertParams, 3>& experts);

/// Closed-form multiply-accumulate count for one image pass of one trunk.
std::size_t trunk_macs_per_image(const EncoderConfig& config);

}  // namespace icmoe
