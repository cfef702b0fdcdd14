#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icmoe/checkpoint.hpp"
#include "icmoe/config.hpp"
#include "icmoe/data_synth.hpp"
#include "icmoe/errors.hpp"
#include "icmoe/experts.hpp"
#include "icmoe/gradcheck.hpp"
#include "icmoe/losses.hpp"
#include "icmoe/ppav.hpp"
#include "icmoe/rng.hpp"
#include "icmoe/sgcl.hpp"
#include "icmoe/tensor_io.hpp"
#include "icmoe/trainer.hpp"

namespace fs = std::filesystem;
using namespace icmoe;

namespace {

// Outputs are staged in a temp directory and renamed into place on
// success, so an interrupted run never leaves a partial output behind.
class AtomicDir {
public:
    explicit AtomicDir(fs::path target) : target_(std::move(target)), tmp_(target_) {
        tmp_ += ".tmp";
        if (fs::exists(target_)) throw IoError("output already exists: " + target_.string());
        fs::remove_all(tmp_);
        fs::create_directories(tmp_);
    }
    ~AtomicDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(tmp_, ec);
        }
    }
    const fs::path& path() const { return tmp_; }
    void commit() {
        fs::rename(tmp_, target_);
        committed_ = true;
    }

private:
    fs::path target_, tmp_;
    bool committed_ = false;
};

void write_run_manifest(const fs::path& dir, const std::string& command,
                        const std::map<std::string, std::string>& config,
                        const std::map<std::string, std::uint64_t>& input_hashes) {
    std::ofstream os(dir / "run_manifest.txt");
    if (!os) throw IoError("cannot write run manifest in " + dir.string());
    os << "command=" << command << "\n";
    for (const auto& [k, v] : config) os << "config." << k << "=" << v << "\n";
    for (const auto& [k, h] : input_hashes) {
        char buf[20];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        os << "input." << k << "=" << buf << "\n";
    }
}

std::map<std::string, std::string> effective_config(const KeyValueConfig& kv) {
    return kv.values();
}

KeyValueConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    KeyValueConfig kv = path.empty() ? KeyValueConfig() : KeyValueConfig::load(path);
    kv.apply_overrides(overrides);
    return kv;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::size_t> split_indices(const Dataset& data, const std::string& split) {
    if (split == "train") return data.train_idx;
    if (split == "val") return data.val_idx;
    if (split == "all") {
        std::vector<std::size_t> idx(data.images.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return idx;
    }
    throw ConfigError("unknown split: " + split);
}

void print_summary(const EvalResult& result) {
    std::cout << "output,DSC,IoU,accuracy,recall,precision\n";
    const auto line = [](const char* tag, const Metrics& m) {
        std::printf("%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", tag, m.dsc, m.iou, m.accuracy, m.recall,
                    m.precision);
    };
    line("fused", result.mean_fused);
    line("primary", result.mean_primary);
}

int run_gen_data(const std::string& config_path, const std::vector<std::string>& overrides,
                 const fs::path& out) {
    KeyValueConfig kv = load_config(config_path, overrides);
    SceneSpec spec = scene_spec_from(kv);
    AtomicDir stage(out);
    generate(spec, stage.path());
    write_run_manifest(stage.path(), "gen-data", effective_config(kv), {});
    stage.commit();
    std::cout << "dataset: " << out.string() << " (" << spec.num_samples << " samples, "
              << to_string(spec.domain) << ")\n";
    return 0;
}

int run_pretrain(const std::string& config_path, const std::vector<std::string>& overrides,
                 const fs::path& data_dir, const fs::path& out) {
    KeyValueConfig kv = load_config(config_path, overrides);
    TrainConfig config = train_config_from(kv);
    Dataset data = load_manifest(data_dir);
    AtomicDir stage(out);
    pretrain(config, data, stage.path());
    write_run_manifest(stage.path(), "pretrain", effective_config(kv),
                       {{"data", dir_content_hash(data_dir)}});
    stage.commit();
    std::cout << "pretrained checkpoint: " << (out / "checkpoint").string() << "\n";
    return 0;
}

int run_finetune(const std::string& config_path, const std::vector<std::string>& overrides,
                 const fs::path& pretrained_dir, const fs::path& data_dir, const fs::path& out,
                 const std::string& mode_str) {
    KeyValueConfig kv = load_config(config_path, overrides);
    TrainConfig config = train_config_from(kv);
    const FinetuneMode mode = finetune_mode_from_string(mode_str);

    EncoderConfig ckpt_config;
    EncoderWeights pretrained = load_pretrained(pretrained_dir, ckpt_config);
    config.encoder = ckpt_config;
    Dataset data = load_manifest(data_dir);

    AtomicDir stage(out);
    RunRecord record = finetune(config, pretrained, data, mode, stage.path());
    auto snapshot = effective_config(kv);
    snapshot["mode"] = mode_str;
    write_run_manifest(stage.path(), "finetune", snapshot,
                       {{"data", dir_content_hash(data_dir)},
                        {"pretrained", dir_content_hash(pretrained_dir)}});
    stage.commit();
    std::cout << "mode=" << mode_str << " final val DSC fused=" << fmt(record.final_val_fused.dsc)
              << " primary=" << fmt(record.final_val_primary.dsc) << "\n";
    return 0;
}

std::array<ExpertParams, 3> load_experts_checked(const fs::path& checkpoint, TrainConfig& config) {
    EncoderConfig enc;
    std::optional<SgclProjections> proj;
    std::array<ExpertParams, 3> experts = load_experts(checkpoint, enc, &proj);
    config.encoder = enc;
    return experts;
}

int run_infer(const std::string& config_path, const std::vector<std::string>& overrides,
              const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out,
              const std::string& split) {
    KeyValueConfig kv = load_config(config_path, overrides);
    TrainConfig config = train_config_from(kv);
    std::array<ExpertParams, 3> experts = load_experts_checked(checkpoint, config);
    Dataset data = load_manifest(data_dir);
    const auto indices = split_indices(data, split);

    AtomicDir stage(out);
    fs::create_directories(stage.path() / "pred");
    NoGradGuard guard;
    SelectionState state;
    state.fusion_alpha = config.fusion_alpha;
    state.n_threshold = config.balance_at_inference
                            ? config.n_threshold_override
                            : static_cast<std::int64_t>(indices.size()) + 1;
    const std::size_t n = data.image_size;
    for (std::size_t begin = 0; begin < indices.size(); begin += config.batch_size) {
        const std::size_t end = std::min(indices.size(), begin + config.batch_size);
        const std::size_t count = end - begin;
        std::vector<double> img(count * n * n);
        for (std::size_t k = 0; k < count; ++k) {
            const auto& xi = data.images[indices[begin + k]].data();
            std::copy(xi.begin(), xi.end(), img.begin() + static_cast<std::ptrdiff_t>(k * n * n));
        }
        EnsembleOutputs ens =
            forward_ensemble(config.encoder, experts, Tensor({count, n, n}, std::move(img)));
        PredictionSet preds;
        preds.logits = {ens.experts[0].p, ens.experts[1].p, ens.experts[2].p, ens.p3};
        PpavResult pp = ppav_batch(preds, state, PpavMode::inference, true);
        Tensor masks = binarize(pp.p_final);
        for (std::size_t k = 0; k < count; ++k) {
            std::vector<double> m(masks.data().begin() + static_cast<std::ptrdiff_t>(k * n * n),
                                  masks.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * n * n));
            char name[32];
            std::snprintf(name, sizeof(name), "%04zu.icmt", indices[begin + k]);
            write_icmt(stage.path() / "pred" / name, Tensor({n, n}, std::move(m)));
        }
    }
    auto snapshot = effective_config(kv);
    snapshot["split"] = split;
    write_run_manifest(stage.path(), "infer", snapshot,
                       {{"data", dir_content_hash(data_dir)},
                        {"checkpoint", dir_content_hash(checkpoint)}});
    stage.commit();
    std::cout << "predicted masks: " << (out / "pred").string() << " (" << indices.size()
              << " samples)\n";
    return 0;
}

int run_evaluate(const std::string& config_path, const std::vector<std::string>& overrides,
                 const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out,
                 const std::string& split, bool no_fuse, bool per_sample) {
    KeyValueConfig kv = load_config(config_path, overrides);
    TrainConfig config = train_config_from(kv);
    Dataset data = load_manifest(data_dir);
    const auto indices = split_indices(data, split);

    EvalResult result;
    std::map<std::string, std::uint64_t> hashes = {{"data", dir_content_hash(data_dir)},
                                                   {"checkpoint", dir_content_hash(checkpoint)}};
    // A pretrained trunk and an expert trio are both valid evaluation targets.
    try {
        std::array<ExpertParams, 3> experts = load_experts_checked(checkpoint, config);
        result = evaluate_ensemble(config, experts, data, indices, !no_fuse);
    } catch (const IoError&) {
        EncoderConfig enc;
        EncoderWeights weights = load_pretrained(checkpoint, enc);
        config.encoder = enc;
        result = evaluate_single(config, weights, data, indices);
    }

    if (!out.empty()) {
        AtomicDir stage(out);
        write_eval_csvs(result, stage.path());
        auto snapshot = effective_config(kv);
        snapshot["split"] = split;
        write_run_manifest(stage.path(), "evaluate", snapshot, hashes);
        stage.commit();
    }
    print_summary(result);
    if (per_sample) {
        std::cout << "sample_id,DSC\n";
        for (const auto& [id, m] : result.per_sample) std::cout << id << "," << fmt(m.dsc) << "\n";
    }
    return 0;
}

int run_grad_check(std::size_t trials, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t rows = 6, dim = 8;
    auto random_tensor = [&](Shape shape, double lo, double hi) {
        std::vector<double> d(shape_numel(shape));
        for (double& v : d) v = rng.uniform(lo, hi);
        return Tensor(std::move(shape), std::move(d), true);
    };

    struct Row {
        const char* name;
        double max_rel = 0.0;
    };
    std::vector<Row> table = {{"ce_loss"}, {"dice_loss"}, {"L1"}, {"L2"},
                              {"L3"},      {"L_sgcl"},    {"total_loss"}};

    for (std::size_t t = 0; t < trials; ++t) {
        Tensor target(Shape{rows, dim}, [&] {
            std::vector<double> d(rows * dim);
            for (double& v : d) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
            return d;
        }());
        table[0].max_rel = std::max(
            table[0].max_rel,
            grad_check([&](const Tensor& z) { return ce_loss(z, target); },
                       random_tensor({rows, dim}, -2, 2)));
        table[1].max_rel = std::max(
            table[1].max_rel,
            grad_check([&](const Tensor& z) { return dice_loss(z, target); },
                       random_tensor({rows, dim}, -2, 2)));

        SgclProjections proj = SgclProjections::init(dim, dim / 2, rng);
        std::array<Tensor, 4> y_img, y_fg, y_bg;
        for (auto* set : {&y_img, &y_fg, &y_bg})
            for (auto& y : *set) y = random_tensor({rows, dim}, 0.1, 1.0);

        auto with_source = [&](std::array<Tensor, 4> set, int which, const Tensor& x) {
            set[static_cast<std::size_t>(which)] = x;
            return set;
        };
        table[2].max_rel = std::max(
            table[2].max_rel,
            grad_check(
                [&](const Tensor& x) {
                    return loss_semantic(with_source(y_fg, 1, x), y_bg, proj.w1, proj.b1);
                },
                random_tensor({rows, dim}, 0.1, 1.0)));
        table[3].max_rel = std::max(
            table[3].max_rel,
            grad_check(
                [&](const Tensor& x) {
                    return loss_consistency(with_source(y_img, 0, x), proj.w2, proj.b2);
                },
                random_tensor({rows, dim}, 0.1, 1.0)));
        table[4].max_rel = std::max(
            table[4].max_rel,
            grad_check(
                [&](const Tensor& x) {
                    return loss_diversity(with_source(y_img, 1, x), proj.w3, proj.b3);
                },
                random_tensor({rows, dim}, 0.1, 1.0)));
        table[5].max_rel = std::max(
            table[5].max_rel, grad_check(
                                  [&](const Tensor& x) {
                                      SgclTerms terms = sgcl_terms(with_source(y_img, 1, x), y_fg,
                                                                   y_bg, proj);
                                      return terms.l_sgcl;
                                  },
                                  random_tensor({rows, dim}, 0.1, 1.0)));
        table[6].max_rel = std::max(
            table[6].max_rel,
            grad_check(
                [&](const Tensor& z) {
                    Tensor ce = ce_loss(z, target);
                    Tensor dice = dice_loss(z, target);
                    SgclTerms terms = sgcl_terms(y_img, y_fg, y_bg, proj);
                    return total_loss(ce, dice, terms.l_sgcl, 0.5, 0.5, 0.1);
                },
                random_tensor({rows, dim}, -2, 2)));
    }

    bool ok = true;
    std::cout << "loss,max_rel_error\n";
    for (const Row& row : table) {
        std::cout << row.name << "," << fmt(row.max_rel) << "\n";
        ok = ok && row.max_rel < 1e-6;
    }
    if (!ok) throw InvariantBreach("grad-check: relative error above 1e-6");
    return 0;
}

int run_ppav_sim(std::size_t batch, std::int64_t threshold, std::size_t rounds,
                 std::uint64_t seed, const fs::path& out) {
    if (batch == 0) throw ConfigError("ppav-sim: batch must be positive");
    Rng rng(seed);
    std::ostringstream log;
    log << "round,sample,score_0,score_1,score_3,chosen,count_after\n";
    SelectionState state;
    state.n_threshold = threshold > 0
                            ? threshold
                            : static_cast<std::int64_t>((batch + 2) / 3);
    for (std::size_t r = 0; r < rounds; ++r) {
        state.reset_counts();
        for (std::size_t s = 0; s < batch; ++s) {
            std::array<double, 3> scores = {rng.uniform(), rng.uniform(), rng.uniform()};
            const int slot = select_balanced(scores, state);
            log << r << "," << s << "," << fmt(scores[0]) << "," << fmt(scores[1]) << ","
                << fmt(scores[2]) << "," << kCandidateSources[static_cast<std::size_t>(slot)]
                << "," << state.counts[static_cast<std::size_t>(slot)] << "\n";
        }
    }
    std::cout << log.str();
    std::cout << "threshold=" << state.n_threshold << " counts=" << state.counts[0] << ","
              << state.counts[1] << "," << state.counts[2] << "\n";
    if (!out.empty()) {
        AtomicDir stage(out);
        std::ofstream os(stage.path() / "selection_sim.csv");
        os << log.str();
        write_run_manifest(stage.path(), "ppav-sim",
                           {{"batch", std::to_string(batch)},
                            {"threshold", std::to_string(state.n_threshold)},
                            {"rounds", std::to_string(rounds)},
                            {"seed", std::to_string(seed)}},
                           {});
        stage.commit();
    }
    return 0;
}

struct RunDir {
    fs::path path;
    std::string mode;
};

std::string mode_of_run(const fs::path& run) {
    std::ifstream is(run / "run_manifest.txt");
    std::string line;
    while (std::getline(is, line))
        if (line.rfind("config.mode=", 0) == 0) return line.substr(12);
    return run.filename().string();
}

int run_report(const std::vector<std::string>& runs, const fs::path& data_dir,
               const fs::path& out) {
    if (runs.empty()) throw IoError("report: no run directories given");
    std::vector<RunDir> run_dirs;
    for (const std::string& r : runs) {
        if (!fs::exists(fs::path(r) / "summary.csv"))
            throw IoError("report: missing summary.csv in " + r);
        run_dirs.push_back({fs::path(r), mode_of_run(r)});
    }

    AtomicDir stage(out);

    // Ablation-style table: the fused summary row of each run.
    {
        std::ofstream os(stage.path() / "ablation.csv");
        os << "mode,DSC,IoU,accuracy,recall,precision\n";
        for (const RunDir& run : run_dirs) {
            std::ifstream is(run.path / "summary.csv");
            std::string line;
            while (std::getline(is, line))
                if (line.rfind("fused,", 0) == 0) os << run.mode << line.substr(5) << "\n";
        }
    }

    // Per-sample DSC distribution across runs.
    {
        std::ofstream os(stage.path() / "dsc_distribution.csv");
        os << "mode,sample_id,DSC\n";
        for (const RunDir& run : run_dirs) {
            std::ifstream is(run.path / "per_sample.csv");
            std::string line;
            std::getline(is, line);  // header
            while (std::getline(is, line)) {
                const auto c1 = line.find(',');
                const auto c2 = line.find(',', c1 + 1);
                os << run.mode << "," << line.substr(0, c2) << "\n";
            }
        }
    }

    // Feature-space distribution and complexity need the checkpoint + data.
    const fs::path checkpoint = run_dirs.front().path / "checkpoint";
    TrainConfig config;
    std::array<ExpertParams, 3> experts = load_experts_checked(checkpoint, config);
    Dataset data = load_manifest(data_dir);
    if (data.val_idx.empty()) throw IoError("report: dataset has no validation split");

    const std::size_t n = data.image_size;
    const std::size_t patch = config.encoder.patch_size;
    const std::size_t grid = n / patch;
    const std::size_t patches = config.encoder.num_patches();

    // Assemble the whole validation split as one batch of features.
    std::vector<double> img(data.val_idx.size() * n * n);
    std::vector<double> patch_mask(data.val_idx.size() * patches);
    for (std::size_t k = 0; k < data.val_idx.size(); ++k) {
        const auto& xi = data.images[data.val_idx[k]].data();
        const auto& mi = data.masks[data.val_idx[k]].data();
        std::copy(xi.begin(), xi.end(), img.begin() + static_cast<std::ptrdiff_t>(k * n * n));
        for (std::size_t py = 0; py < grid; ++py)
            for (std::size_t px = 0; px < grid; ++px) {
                double fg = 0;
                for (std::size_t dy = 0; dy < patch; ++dy)
                    for (std::size_t dx = 0; dx < patch; ++dx)
                        fg += mi[(py * patch + dy) * n + px * patch + dx];
                patch_mask[k * patches + py * grid + px] =
                    fg * 2.0 >= static_cast<double>(patch * patch) ? 1.0 : 0.0;
            }
    }
    Tensor x_val({data.val_idx.size(), n, n}, std::move(img));
    Tensor mask_val({data.val_idx.size() * patches}, std::move(patch_mask));

    NoGradGuard guard;
    const auto t0 = std::chrono::steady_clock::now();
    EnsembleOutputs ens = forward_ensemble(config.encoder, experts, x_val);
    const auto t1 = std::chrono::steady_clock::now();

    for (int e = 0; e < 3; ++e) {
        DistributionReport rep =
            pca_distribution(ens.experts[static_cast<std::size_t>(e)].y_img, mask_val);
        std::ofstream os(stage.path() / ("distribution_expert" + std::to_string(e) + ".csv"));
        os << "bin_lo,bin_hi,fg_count,bg_count\n";
        for (std::size_t b = 0; b < 20; ++b)
            os << fmt(rep.bin_edges[b]) << "," << fmt(rep.bin_edges[b + 1]) << ","
               << rep.fg_counts[b] << "," << rep.bg_counts[b] << "\n";
        if (rep.degenerate) os << "# degenerate: constant features\n";
    }

    {
        const Complexity c = count_complexity(config.encoder, experts);
        std::ofstream os(stage.path() / "complexity.csv");
        os << "total_params,trainable_params,mac_per_image\n";
        os << c.total_params << "," << c.trainable_params << "," << c.mac_per_image << "\n";
    }

    // Wall-clock timing is environment-dependent and deliberately kept in
    // its own file so every CSV stays byte-reproducible.
    {
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count() /
                          static_cast<double>(data.val_idx.size());
        std::ofstream os(stage.path() / "timing.txt");
        os << "mean_inference_ms_per_image=" << fmt(ms) << "\n";
    }

    std::map<std::string, std::uint64_t> hashes = {{"data", dir_content_hash(data_dir)}};
    for (std::size_t i = 0; i < run_dirs.size(); ++i)
        hashes["run" + std::to_string(i)] = dir_content_hash(run_dirs[i].path);
    write_run_manifest(stage.path(), "report", {}, hashes);
    stage.commit();
    std::cout << "report: " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interactive-class mixture-of-experts segmentation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out, data_dir, checkpoint, pretrained, mode = "ecfm+sgcl";
    std::string split = "val";
    std::vector<std::string> overrides, runs;
    std::size_t batch = 12, rounds = 1, trials = 20;
    std::int64_t threshold = 0;
    std::uint64_t seed = 0;
    bool seed_given = false, no_fuse = false, per_sample = false;
    double fusion_alpha = 0.0, w_sgcl = 0.0;
    bool alpha_given = false, sgcl_given = false;

    auto add_common = [&](CLI::App* cmd, bool needs_out) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--set", overrides, "config overrides (key=value)");
        auto* s = cmd->add_option("--seed", seed, "seed override");
        s->each([&](const std::string&) { seed_given = true; });
        if (needs_out) cmd->add_option("--out", out, "output directory")->required();
        else cmd->add_option("--out", out, "output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, true);

    auto* pre = app.add_subcommand("pretrain", "train the source-domain trunk");
    add_common(pre, true);
    pre->add_option("--data", data_dir, "dataset directory")->required();

    auto* fin = app.add_subcommand("finetune", "fine-tune the expert trio");
    add_common(fin, true);
    fin->add_option("--data", data_dir, "dataset directory")->required();
    fin->add_option("--pretrained", pretrained, "pretrained checkpoint directory")->required();
    fin->add_option("--mode", mode, "adaptive_only | ecfm | ecfm+sgcl");
    fin->add_option("--fusion-alpha", fusion_alpha, "fusion weight")
        ->each([&](const std::string&) { alpha_given = true; });
    fin->add_option("--w-sgcl", w_sgcl, "contrastive loss weight")
        ->each([&](const std::string&) { sgcl_given = true; });
    fin->add_option("--threshold", threshold, "selection count threshold (0 derives ceil(B/3))");

    auto* inf = app.add_subcommand("infer", "write fused prediction masks");
    add_common(inf, true);
    inf->add_option("--data", data_dir, "dataset directory")->required();
    inf->add_option("--checkpoint", checkpoint, "experts checkpoint directory")->required();
    inf->add_option("--split", split, "train | val | all");

    auto* eva = app.add_subcommand("evaluate", "metrics on a dataset split");
    add_common(eva, false);
    eva->add_option("--data", data_dir, "dataset directory")->required();
    eva->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    eva->add_option("--split", split, "train | val | all");
    eva->add_flag("--no-fuse", no_fuse, "evaluate the primary expert without fusion");
    eva->add_flag("--per-sample", per_sample, "print per-sample DSC rows");

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient suite");
    gc->add_option("--trials", trials, "random instances per loss");
    gc->add_option("--seed", seed, "seed");

    auto* sim = app.add_subcommand("ppav-sim", "load-balanced selection simulation");
    sim->add_option("--batch", batch, "samples per round");
    sim->add_option("--threshold", threshold, "count threshold (0 derives ceil(B/3))");
    sim->add_option("--rounds", rounds, "number of rounds");
    sim->add_option("--seed", seed, "seed");
    sim->add_option("--out", out, "optional output directory");

    auto* rep = app.add_subcommand("report", "summary tables from finetune runs");
    rep->add_option("--run", runs, "finetune run directory (repeatable)")->required();
    rep->add_option("--data", data_dir, "dataset directory")->required();
    rep->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (seed_given) overrides.push_back("seed=" + std::to_string(seed));
        if (alpha_given) overrides.push_back("fusion_alpha=" + fmt(fusion_alpha));
        if (sgcl_given) overrides.push_back("w_sgcl=" + fmt(w_sgcl));
        if (fin->parsed() && threshold != 0)
            overrides.push_back("n_threshold=" + std::to_string(threshold));

        if (gen->parsed()) return run_gen_data(config_path, overrides, out);
        if (pre->parsed()) return run_pretrain(config_path, overrides, data_dir, out);
        if (fin->parsed())
            return run_finetune(config_path, overrides, pretrained, data_dir, out, mode);
        if (inf->parsed())
            return run_infer(config_path, overrides, checkpoint, data_dir, out, split);
        if (eva->parsed())
            return run_evaluate(config_path, overrides, checkpoint, data_dir, out, split, no_fuse,
                                per_sample);
        if (gc->parsed()) return run_grad_check(trials, seed);
        if (sim->parsed()) return run_ppav_sim(batch, threshold, rounds, seed, out);
        if (rep->parsed()) return run_report(runs, data_dir, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const InvariantBreach& e) {
        std::cerr << "invariant breach: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
