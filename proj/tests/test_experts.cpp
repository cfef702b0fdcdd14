#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "icmoe/errors.hpp"
#include "icmoe/experts.hpp"
#include "icmoe/rng.hpp"

using namespace icmoe;

namespace {

Tensor random_images(std::size_t batch, std::size_t n, Rng& rng) {
    std::vector<double> d(batch * n * n);
    for (double& v : d) v = rng.uniform();
    return Tensor({batch, n, n}, std::move(d));
}

std::size_t affine_params(std::size_t in, std::size_t out) { return in * out + out; }

}  // namespace

TEST_CASE("config validation rejects bad dimensions") {
    EncoderConfig bad;
    bad.image_size = 30;
    bad.patch_size = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = EncoderConfig{};
    bad.num_blocks = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(EncoderConfig{}.num_patches() == 64);
    CHECK(EncoderConfig{}.proj_dim() == 8);
}

TEST_CASE("forward shapes follow the contract") {
    EncoderConfig config;
    Rng rng(41);
    EncoderWeights trunk = init_encoder(config, rng);
    auto experts = build_experts(config, trunk, rng);
    Tensor x = random_images(3, config.image_size, rng);
    ExpertOutputs out = forward_expert(config, experts[0], x);
    CHECK(out.y_img.shape() == Shape{3 * config.num_patches(), config.embed_dim});
    CHECK(out.p.shape() == Shape{3, config.image_size, config.image_size});

    Tensor wrong = random_images(2, 16, rng);
    CHECK_THROWS_AS(forward_expert(config, experts[0], wrong), std::invalid_argument);
}

TEST_CASE("the adaptive expert is bitwise the basic expert at initialization") {
    EncoderConfig config;
    Rng rng(42);
    EncoderWeights trunk = init_encoder(config, rng);
    auto experts = build_experts(config, trunk, rng);
    Tensor x = random_images(2, config.image_size, rng);
    ExpertOutputs basic = forward_expert(config, experts[0], x);
    ExpertOutputs adaptive = forward_expert(config, experts[2], x);
    CHECK(basic.p.data() == adaptive.p.data());
    CHECK(basic.y_img.data() == adaptive.y_img.data());
}

TEST_CASE("trainability masks per expert kind") {
    EncoderConfig config;  // 32 / 4 / 16 / 4 blocks / adapter 4
    Rng rng(43);
    EncoderWeights trunk = init_encoder(config, rng);
    auto experts = build_experts(config, trunk, rng);

    auto trainable_count = [](const ExpertParams& e) {
        std::size_t n = 0;
        for (const Tensor& t : e.trainable_parameters()) n += t.size();
        return n;
    };
    const std::size_t d = config.embed_dim, p2 = config.patch_size * config.patch_size;
    const std::size_t block = 2 * affine_params(d, d);
    const std::size_t adapter =
        affine_params(d, config.adapter_dim) + affine_params(config.adapter_dim, d);

    CHECK(experts[0].kind == ExpertKind::basic);
    CHECK(trainable_count(experts[0]) == 0);

    CHECK(experts[1].kind == ExpertKind::semantic);
    CHECK(trainable_count(experts[1]) == 2 * block + affine_params(d, p2));

    CHECK(experts[2].kind == ExpertKind::adaptive);
    CHECK(trainable_count(experts[2]) ==
          config.num_blocks * adapter + affine_params(d, p2));

    // The adaptive expert's trunk blocks stay frozen.
    for (const auto& [name, t] : experts[2].named_parameters("e."))
        if (name.find("block") != std::string::npos || name.find("patch_embed") != std::string::npos)
            CHECK_FALSE(t.requires_grad());
}

TEST_CASE("complexity matches the closed form for the 64/8/32/4 config") {
    EncoderConfig config;
    config.image_size = 64;
    config.patch_size = 8;
    config.embed_dim = 32;
    config.num_blocks = 4;
    config.adapter_dim = 4;
    Rng rng(44);
    EncoderWeights trunk = init_encoder(config, rng);
    auto experts = build_experts(config, trunk, rng);

    // patches = 64, p^2 = 64, d = 32:
    //   patch embed 64*64*32 + blocks 4*2*64*32*32 + head 64*32*64
    CHECK(trunk_macs_per_image(config) == 131072 + 524288 + 131072);
    const Complexity c = count_complexity(config, experts);
    CHECK(c.mac_per_image == 3 * 786432 + 4 * 2 * 64 * 32 * 4);

    const std::size_t d = 32, p2 = 64;
    const std::size_t trunk_params =
        affine_params(p2, d) + 4 * 2 * affine_params(d, d) + affine_params(d, p2);
    const std::size_t adapters = 4 * (affine_params(d, 4) + affine_params(4, d));
    CHECK(c.total_params == 3 * trunk_params + adapters);
    CHECK(c.trainable_params == 2 * 2 * affine_params(d, d) + affine_params(d, p2)  // semantic
                                    + adapters + affine_params(d, p2));             // adaptive
}

TEST_CASE("ensemble outputs are the elementwise means") {
    EncoderConfig config;
    config.image_size = 8;
    config.patch_size = 4;
    config.embed_dim = 6;
    config.num_blocks = 2;
    Rng rng(45);
    EncoderWeights trunk = init_encoder(config, rng);
    auto experts = build_experts(config, trunk, rng);
    // Perturb the semantic head so the three outputs differ.
    for (double& v : experts[1].enc.head.w.data_mut()) v += 0.25;
    Tensor x = random_images(2, config.image_size, rng);
    EnsembleOutputs ens = forward_ensemble(config, experts, x);
    for (std::size_t i = 0; i < ens.p3.size(); ++i)
        CHECK(ens.p3.data()[i] ==
              doctest::Approx((ens.experts[0].p.data()[i] + ens.experts[1].p.data()[i] +
                               ens.experts[2].p.data()[i]) /
                              3.0)
                  .epsilon(1e-12));
    for (std::size_t i = 0; i < ens.y3_img.size(); ++i)
        CHECK(ens.y3_img.data()[i] ==
              doctest::Approx((ens.experts[0].y_img.data()[i] + ens.experts[1].y_img.data()[i] +
                               ens.experts[2].y_img.data()[i]) /
                              3.0)
                  .epsilon(1e-12));
}

TEST_CASE("fg/bg passes are recorded as constants, the image pass is not") {
    EncoderConfig config;
    config.image_size = 8;
    config.patch_size = 4;
    config.embed_dim = 6;
    config.num_blocks = 2;
    Rng rng(46);
    EncoderWeights trunk = init_encoder(config, rng);
    auto experts = build_experts(config, trunk, rng);
    Tensor x = random_images(1, config.image_size, rng);
    Tensor fg = random_images(1, config.image_size, rng);
    Tensor bg = random_images(1, config.image_size, rng);
    Tape tape;
    ExpertOutputs out = forward_expert(config, experts[2], x, &fg, &bg);
    CHECK(out.y_img.requires_grad());  // adapters are trainable
    CHECK_FALSE(out.y_fg.requires_grad());
    CHECK_FALSE(out.y_bg.requires_grad());
}

TEST_CASE("build_experts rejects a mismatched pretrained trunk") {
    EncoderConfig config;
    Rng rng(47);
    EncoderWeights trunk = init_encoder(config, rng);
    EncoderConfig other = config;
    other.num_blocks = 3;
    CHECK_THROWS_AS(build_experts(other, trunk, rng), ConfigError);
}
