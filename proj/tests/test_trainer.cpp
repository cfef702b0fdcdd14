#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "icmoe/checkpoint.hpp"
#include "icmoe/data_synth.hpp"
#include "icmoe/errors.hpp"
#include "icmoe/trainer.hpp"

using namespace icmoe;

namespace fs = std::filesystem;

namespace {

// Small shared fixture: a 24-sample 16x16 dataset and a tiny encoder.
struct Fixture {
    fs::path dir;
    Dataset data;
    TrainConfig config;

    Fixture() {
        dir = fs::temp_directory_path() / "icmoe_trainer_test";
        fs::remove_all(dir);
        SceneSpec spec;
        spec.num_samples = 24;
        spec.image_size = 16;
        generate(spec, dir / "data");
        data = load_manifest(dir / "data");
        config.encoder.image_size = 16;
        config.encoder.patch_size = 4;
        config.encoder.embed_dim = 8;
        config.encoder.num_blocks = 2;
        config.encoder.adapter_dim = 2;
        config.epochs = 2;
        config.batch_size = 8;
    }
    ~Fixture() { fs::remove_all(dir); }
};

std::string read_file(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("lr schedule follows the piecewise definition") {
    LrSchedule s;  // 50:1e-5, 75:5e-6, 100:1e-6
    CHECK(s.lr_for_epoch(1) == 1e-5);
    CHECK(s.lr_for_epoch(50) == 1e-5);
    CHECK(s.lr_for_epoch(51) == 5e-6);
    CHECK(s.lr_for_epoch(75) == 5e-6);
    CHECK(s.lr_for_epoch(76) == 1e-6);
    CHECK(s.lr_for_epoch(100) == 1e-6);
    CHECK(s.lr_for_epoch(200) == 1e-6);  // clamps at the last piece

    LrSchedule bad;
    bad.pieces = {{50, 1e-5}, {75, 2e-5}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.pieces.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("rmsprop with zero gradient leaves parameters unchanged") {
    Tensor p({3}, {1.0, 2.0, 3.0}, true);
    p.zero_grad();
    std::vector<std::pair<std::string, Tensor>> params = {{"p", p}};
    RmspropState state;
    rmsprop_step(params, 1e-3, 0.99, 1e-8, state);
    CHECK(p.data() == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("rmsprop step size approaches lr * sign(g) for a constant gradient") {
    // With constant g the accumulator converges to g^2, so the step tends
    // to lr * g / (|g| + eps) ~ lr * sign(g).
    Tensor p({1}, {0.0}, true);
    std::vector<std::pair<std::string, Tensor>> params = {{"p", p}};
    RmspropState state;
    const double g = 0.37, lr = 1e-3;
    double prev = 0.0;
    double step = 0.0;
    for (int i = 0; i < 2000; ++i) {
        p.zero_grad();
        auto node = p.node();
        node->ensure_grad();
        node->grad[0] = g;
        prev = p.data()[0];
        rmsprop_step(params, lr, 0.99, 1e-8, state);
        step = prev - p.data()[0];
    }
    CHECK(step == doctest::Approx(lr).epsilon(1e-6));

    // The closed form of the accumulator after n steps is g^2 (1 - 0.99^n),
    // so the very first step is lr / sqrt(0.01) = 10 * lr (up to eps).
    Tensor q({1}, {0.0}, true);
    std::vector<std::pair<std::string, Tensor>> qparams = {{"q", q}};
    RmspropState qstate;
    q.zero_grad();
    q.node()->grad[0] = g;
    rmsprop_step(qparams, lr, 0.99, 1e-8, qstate);
    CHECK(-q.data()[0] == doctest::Approx(lr * g / (std::sqrt(0.01 * g * g) + 1e-8))
                              .epsilon(1e-12));
}

TEST_CASE("rmsprop aborts on a non-finite gradient naming the parameter") {
    Tensor p({1}, {0.0}, true);
    p.zero_grad();
    p.node()->grad[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::pair<std::string, Tensor>> params = {{"bad_param", p}};
    RmspropState state;
    try {
        rmsprop_step(params, 1e-3, 0.99, 1e-8, state);
        FAIL("expected InvariantBreach");
    } catch (const InvariantBreach& e) {
        CHECK(std::string(e.what()).find("bad_param") != std::string::npos);
    }
}

TEST_CASE("a zero-epoch pretrain checkpoint equals the seeded initialization") {
    Fixture fx;
    TrainConfig config = fx.config;
    config.epochs = 0;
    EncoderWeights w = pretrain(config, fx.data, fx.dir / "pre0");
    Rng rng = Rng::stream(config.seed, 1);
    EncoderWeights fresh = init_encoder(config.encoder, rng);
    CHECK(w.patch_embed.w.data() == fresh.patch_embed.w.data());
    CHECK(w.head.b.data() == fresh.head.b.data());
    for (std::size_t i = 0; i < w.blocks.size(); ++i)
        CHECK(w.blocks[i].fc1.w.data() == fresh.blocks[i].fc1.w.data());
}

TEST_CASE("short fine-tune run: freeze integrity, CSVs, determinism") {
    Fixture fx;
    EncoderWeights pre = pretrain(fx.config, fx.data, fx.dir / "pre");

    RunRecord run1 = finetune(fx.config, pre, fx.data, FinetuneMode::ecfm_sgcl, fx.dir / "ft1");
    RunRecord run2 = finetune(fx.config, pre, fx.data, FinetuneMode::ecfm_sgcl, fx.dir / "ft2");

    // Identical seeds and inputs give byte-identical artifacts.
    CHECK(dir_content_hash(fx.dir / "ft1") == dir_content_hash(fx.dir / "ft2"));
    CHECK(read_file(fx.dir / "ft1" / "losses.csv") == read_file(fx.dir / "ft2" / "losses.csv"));

    // The basic expert in the checkpoint equals the pretrained trunk.
    EncoderConfig cfg_out;
    std::array<ExpertParams, 3> loaded = load_experts(run1.checkpoint_dir, cfg_out);
    CHECK(loaded[0].enc.patch_embed.w.data() == pre.patch_embed.w.data());
    CHECK(loaded[0].enc.head.w.data() == pre.head.w.data());
    // Frozen parts of semantic/adaptive as well; tuned parts moved.
    CHECK(loaded[1].enc.patch_embed.w.data() == pre.patch_embed.w.data());
    CHECK(loaded[2].enc.blocks[1].fc2.w.data() == pre.blocks[1].fc2.w.data());
    CHECK(loaded[2].enc.head.w.data() != pre.head.w.data());

    // Schedule CSV mirrors the piecewise definition.
    const std::string sched = read_file(fx.dir / "ft1" / "schedule.csv");
    CHECK(sched.find("1,1.0000000000000001e-05") != std::string::npos);

    // Epoch rows recorded for every epoch.
    CHECK(run1.epochs.size() == fx.config.epochs);
}

TEST_CASE("adaptive_only trains only the primary expert") {
    Fixture fx;
    EncoderWeights pre = pretrain(fx.config, fx.data, fx.dir / "pre_a");
    RunRecord run = finetune(fx.config, pre, fx.data, FinetuneMode::adaptive_only,
                             fx.dir / "ft_a");
    EncoderConfig cfg_out;
    std::array<ExpertParams, 3> loaded = load_experts(run.checkpoint_dir, cfg_out);
    // Semantic expert untouched in this mode.
    CHECK(loaded[1].enc.head.w.data() == pre.head.w.data());
    CHECK(loaded[1].enc.blocks[1].fc1.w.data() == pre.blocks[1].fc1.w.data());
    // Adaptive head moved.
    CHECK(loaded[2].enc.head.w.data() != pre.head.w.data());
}

TEST_CASE("evaluation aggregates equal the per-sample means") {
    Fixture fx;
    EncoderWeights pre = pretrain(fx.config, fx.data, fx.dir / "pre_e");
    Rng rng = Rng::stream(fx.config.seed, 2);
    auto experts = build_experts(fx.config.encoder, pre, rng);
    EvalResult result =
        evaluate_ensemble(fx.config, experts, fx.data, fx.data.val_idx, true);
    REQUIRE(result.per_sample.size() == fx.data.val_idx.size());
    double mean = 0;
    for (const auto& [id, m] : result.per_sample) mean += m.dsc;
    mean /= static_cast<double>(result.per_sample.size());
    CHECK(std::fabs(result.mean_fused.dsc - mean) < 1e-12);

    CHECK_THROWS_AS(evaluate_ensemble(fx.config, experts, fx.data, {}, true), ConfigError);
}

TEST_CASE("evaluate_single and the unfused ensemble agree on the frozen trio") {
    Fixture fx;
    EncoderWeights pre = pretrain(fx.config, fx.data, fx.dir / "pre_s");
    Rng rng = Rng::stream(fx.config.seed, 2);
    auto experts = build_experts(fx.config.encoder, pre, rng);
    // At initialization the primary (adaptive) expert equals the trunk.
    EvalResult single = evaluate_single(fx.config, pre, fx.data, fx.data.val_idx);
    EvalResult unfused =
        evaluate_ensemble(fx.config, experts, fx.data, fx.data.val_idx, false);
    CHECK(single.mean_fused.dsc == unfused.mean_fused.dsc);
}
