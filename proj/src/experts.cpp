#include "icmoe/experts.hpp"

#include <cmath>
#include <stdexcept>

#include "icmoe/errors.hpp"

namespace icmoe {

std::string to_string(ExpertKind kind) {
    switch (kind) {
        case ExpertKind::basic: return "basic";
        case ExpertKind::semantic: return "semantic";
        case ExpertKind::adaptive: return "adaptive";
    }
    return "?";
}

ExpertKind expert_kind_from_string(const std::string& s) {
    if (s == "basic") return ExpertKind::basic;
    if (s == "semantic") return ExpertKind::semantic;
    if (s == "adaptive") return ExpertKind::adaptive;
    throw ConfigError("unknown expert kind: " + s);
}

void EncoderConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
        throw ConfigError("EncoderConfig: image_size " + std::to_string(image_size) +
                          " not divisible by patch_size " + std::to_string(patch_size));
    if (num_blocks < 2)
        throw ConfigError("EncoderConfig: num_blocks must be >= 2, got " +
                          std::to_string(num_blocks));
    if (embed_dim == 0 || adapter_dim == 0)
        throw ConfigError("EncoderConfig: embed_dim and adapter_dim must be positive");
}

namespace {

// Fan-in uniform init, matching the projection-map convention.
Affine init_affine(std::size_t in, std::size_t out, Rng& rng, bool trainable) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::vector<double> w(in * out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    std::vector<double> b(out);
    for (double& v : b) v = rng.uniform(-bound, bound);
    return {Tensor({in, out}, std::move(w), trainable), Tensor({out}, std::move(b), trainable)};
}

Tensor affine_forward(const Affine& a, const Tensor& x) {
    return add_bias_rows(matmul(x, a.w), a.b);
}

void set_trainable(Affine& a, bool flag) {
    a.w.set_requires_grad(flag);
    a.b.set_requires_grad(flag);
}

}  // namespace

EncoderWeights EncoderWeights::clone(bool trainable) const {
    EncoderWeights c;
    c.patch_embed = patch_embed.clone(trainable);
    for (const Block& blk : blocks) c.blocks.push_back({blk.fc1.clone(trainable), blk.fc2.clone(trainable)});
    c.head = head.clone(trainable);
    return c;
}

std::vector<std::pair<std::string, Tensor>> ExpertParams::named_parameters(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto put = [&](const std::string& name, const Affine& a) {
        out.emplace_back(prefix + name + ".w", a.w);
        out.emplace_back(prefix + name + ".b", a.b);
    };
    put("patch_embed", enc.patch_embed);
    for (std::size_t i = 0; i < enc.blocks.size(); ++i) {
        put("block" + std::to_string(i) + ".fc1", enc.blocks[i].fc1);
        put("block" + std::to_string(i) + ".fc2", enc.blocks[i].fc2);
    }
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        put("adapter" + std::to_string(i) + ".down", adapters[i].down);
        put("adapter" + std::to_string(i) + ".up", adapters[i].up);
    }
    put("head", enc.head);
    return out;
}

std::vector<Tensor> ExpertParams::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters("")) out.push_back(t);
    return out;
}

std::vector<Tensor> ExpertParams::trainable_parameters() const {
    std::vector<Tensor> out;
    for (const Tensor& t : parameters())
        if (t.requires_grad()) out.push_back(t);
    return out;
}

EncoderWeights init_encoder(const EncoderConfig& config, Rng& rng) {
    config.validate();
    const std::size_t p2 = config.patch_size * config.patch_size;
    EncoderWeights w;
    w.patch_embed = init_affine(p2, config.embed_dim, rng, true);
    for (std::size_t i = 0; i < config.num_blocks; ++i)
        w.blocks.push_back({init_affine(config.embed_dim, config.embed_dim, rng, true),
                            init_affine(config.embed_dim, config.embed_dim, rng, true)});
    w.head = init_affine(config.embed_dim, p2, rng, true);
    return w;
}

std::array<ExpertParams, 3> build_experts(const EncoderConfig& config,
                                          const EncoderWeights& pretrained, Rng& rng) {
    config.validate();
    if (pretrained.blocks.size() != config.num_blocks)
        throw ConfigError("build_experts: pretrained has " +
                          std::to_string(pretrained.blocks.size()) + " blocks, config expects " +
                          std::to_string(config.num_blocks));
    const std::size_t p2 = config.patch_size * config.patch_size;
    if (pretrained.patch_embed.w.shape() != Shape{p2, config.embed_dim} ||
        pretrained.head.w.shape() != Shape{config.embed_dim, p2})
        throw ConfigError("build_experts: pretrained weight shapes do not match config");

    std::array<ExpertParams, 3> experts;

    experts[0].kind = ExpertKind::basic;
    experts[0].enc = pretrained.clone(false);

    experts[1].kind = ExpertKind::semantic;
    experts[1].enc = pretrained.clone(false);
    const std::size_t nb = config.num_blocks;
    set_trainable(experts[1].enc.blocks[nb - 2].fc1, true);
    set_trainable(experts[1].enc.blocks[nb - 2].fc2, true);
    set_trainable(experts[1].enc.blocks[nb - 1].fc1, true);
    set_trainable(experts[1].enc.blocks[nb - 1].fc2, true);
    set_trainable(experts[1].enc.head, true);

    experts[2].kind = ExpertKind::adaptive;
    experts[2].enc = pretrained.clone(false);
    set_trainable(experts[2].enc.head, true);
    for (std::size_t i = 0; i < nb; ++i) {
        Adapter a;
        a.down = init_affine(config.embed_dim, config.adapter_dim, rng, true);
        a.up = {Tensor::zeros({config.adapter_dim, config.embed_dim}, true),
                Tensor::zeros({config.embed_dim}, true)};
        experts[2].adapters.push_back(std::move(a));
    }
    return experts;
}

namespace {

Tensor encode_features(const EncoderConfig& config, const ExpertParams& params, const Tensor& x) {
    Tensor h = affine_forward(params.enc.patch_embed, patchify(x, config.patch_size));
    for (std::size_t i = 0; i < params.enc.blocks.size(); ++i) {
        const Block& blk = params.enc.blocks[i];
        h = add(h, affine_forward(blk.fc2, relu(affine_forward(blk.fc1, h))));
        if (i < params.adapters.size()) {
            const Adapter& ad = params.adapters[i];
            h = add(h, affine_forward(ad.up, relu(affine_forward(ad.down, h))));
        }
    }
    return h;
}

}  // namespace

ExpertOutputs forward_expert(const EncoderConfig& config, const ExpertParams& params,
                             const Tensor& x_img, const Tensor* x_fg, const Tensor* x_bg) {
    if (x_img.shape().size() != 3 || x_img.shape()[1] != config.image_size ||
        x_img.shape()[2] != config.image_size)
        throw std::invalid_argument("forward_expert: expected B x " +
                                    std::to_string(config.image_size) + " x " +
                                    std::to_string(config.image_size) + ", got " +
                                    shape_str(x_img.shape()));
    ExpertOutputs out;
    out.y_img = encode_features(config, params, x_img);
    out.p = unpatchify(affine_forward(params.enc.head, out.y_img), x_img.shape()[0],
                       config.image_size, config.image_size, config.patch_size);
    if (x_fg && x_bg) {
        NoGradGuard guard;  // fg/bg features enter the tape as constants
        out.y_fg = encode_features(config, params, *x_fg);
        out.y_bg = encode_features(config, params, *x_bg);
    }
    return out;
}

EnsembleOutputs forward_ensemble(const EncoderConfig& config,
                                 const std::array<ExpertParams, 3>& experts, const Tensor& x_img,
                                 const Tensor* x_fg, const Tensor* x_bg) {
    EnsembleOutputs out;
    for (int e = 0; e < 3; ++e)
        out.experts[e] = forward_expert(config, experts[e], x_img, x_fg, x_bg);

    auto mean3 = [](const Tensor& a, const Tensor& b, const Tensor& c) {
        return mul_scalar(add(add(a, b), c), 1.0 / 3.0);
    };
    out.y3_img = mean3(out.experts[0].y_img, out.experts[1].y_img, out.experts[2].y_img);
    if (x_fg && x_bg) {
        out.y3_fg = mean3(out.experts[0].y_fg, out.experts[1].y_fg, out.experts[2].y_fg);
        out.y3_bg = mean3(out.experts[0].y_bg, out.experts[1].y_bg, out.experts[2].y_bg);
    }
    out.p3 = mean3(out.experts[0].p, out.experts[1].p, out.experts[2].p);
    return out;
}

std::size_t trunk_macs_per_image(const EncoderConfig& config) {
    const std::size_t patches = config.num_patches();
    const std::size_t p2 = config.patch_size * config.patch_size;
    const std::size_t d = config.embed_dim;
    return patches * p2 * d                        // patch embedding
           + config.num_blocks * 2 * patches * d * d  // block MLPs
           + patches * d * p2;                     // head
}

Complexity count_complexity(const EncoderConfig& config,
                            const std::array<ExpertParams, 3>& experts) {
    Complexity c;
    for (const ExpertParams& e : experts) {
        for (const Tensor& t : e.parameters()) {
            c.total_params += t.size();
            if (t.requires_grad()) c.trainable_params += t.size();
        }
    }
    const std::size_t patches = config.num_patches();
    c.mac_per_image = 3 * trunk_macs_per_image(config) +
                      config.num_blocks * 2 * patches * config.embed_dim * config.adapter_dim;
    return c;
}

}  // namespace icmoe
