#include "icmoe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "icmoe/checkpoint.hpp"
#include "icmoe/errors.hpp"
#include "icmoe/rng.hpp"

namespace icmoe {

double LrSchedule::lr_for_epoch(std::size_t epoch) const {
    for (const Piece& p : pieces)
        if (epoch <= p.until_epoch) return p.lr;
    return pieces.back().lr;
}

void LrSchedule::validate() const {
    if (pieces.empty()) throw ConfigError("LrSchedule: empty schedule");
    double prev = pieces.front().lr;
    std::size_t prev_epoch = 0;
    for (const Piece& p : pieces) {
        if (p.lr <= 0.0) throw ConfigError("LrSchedule: learning rate must be positive");
        if (p.lr > prev) throw ConfigError("LrSchedule: learning rate must be non-increasing");
        if (p.until_epoch <= prev_epoch && prev_epoch != 0)
            throw ConfigError("LrSchedule: epoch boundaries must increase");
        prev = p.lr;
        prev_epoch = p.until_epoch;
    }
}

void TrainConfig::validate() const {
    encoder.validate();
    schedule.validate();
    if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
    if (w_ce < 0 || w_dice < 0 || w_sgcl < 0)
        throw ConfigError("TrainConfig: loss weights must be non-negative");
    if (rms_decay <= 0 || rms_decay >= 1) throw ConfigError("TrainConfig: rms_decay out of (0,1)");
}

std::string to_string(FinetuneMode mode) {
    switch (mode) {
        case FinetuneMode::adaptive_only: return "adaptive_only";
        case FinetuneMode::ecfm: return "ecfm";
        case FinetuneMode::ecfm_sgcl: return "ecfm+sgcl";
    }
    return "?";
}

FinetuneMode finetune_mode_from_string(const std::string& s) {
    if (s == "adaptive_only") return FinetuneMode::adaptive_only;
    if (s == "ecfm") return FinetuneMode::ecfm;
    if (s == "ecfm+sgcl" || s == "ecfm_sgcl") return FinetuneMode::ecfm_sgcl;
    throw ConfigError("unknown finetune mode: " + s);
}

void rmsprop_step(std::vector<std::pair<std::string, Tensor>>& params, double lr, double decay,
                  double eps, RmspropState& state) {
    if (state.v.size() != params.size()) {
        state.v.clear();
        for (const auto& [name, t] : params) state.v.emplace_back(t.size(), 0.0);
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p].second;
        if (!t.has_grad()) continue;  // no gradient this step: parameter unchanged
        const auto& g = t.grad();
        auto& v = state.v[p];
        auto& d = t.data_mut();
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw InvariantBreach("rmsprop_step: non-finite gradient in " + params[p].first);
            v[i] = decay * v[i] + (1.0 - decay) * g[i] * g[i];
            d[i] -= lr * g[i] / (std::sqrt(v[i]) + eps);
        }
    }
}

namespace {

struct Batch {
    Tensor x_img, gt, x_fg, x_bg;
    std::vector<std::size_t> sample_ids;
};

Batch assemble_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                     std::size_t begin, std::size_t end, bool want_fgbg) {
    const std::size_t n = data.image_size;
    const std::size_t count = end - begin;
    std::vector<double> img(count * n * n), gt(count * n * n), fg, bg;
    if (want_fgbg) {
        fg.resize(count * n * n);
        bg.resize(count * n * n);
    }
    Batch batch;
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t idx = indices[begin + k];
        batch.sample_ids.push_back(idx);
        const auto& xi = data.images[idx].data();
        const auto& mi = data.masks[idx].data();
        std::copy(xi.begin(), xi.end(), img.begin() + static_cast<std::ptrdiff_t>(k * n * n));
        std::copy(mi.begin(), mi.end(), gt.begin() + static_cast<std::ptrdiff_t>(k * n * n));
        if (want_fgbg) {
            for (std::size_t i = 0; i < n * n; ++i) {
                fg[k * n * n + i] = mi[i] != 0.0 ? xi[i] : 0.0;
                bg[k * n * n + i] = mi[i] != 0.0 ? 0.0 : xi[i];
            }
        }
    }
    batch.x_img = Tensor({count, n, n}, std::move(img));
    batch.gt = Tensor({count, n, n}, std::move(gt));
    if (want_fgbg) {
        batch.x_fg = Tensor({count, n, n}, std::move(fg));
        batch.x_bg = Tensor({count, n, n}, std::move(bg));
    }
    return batch;
}

void append_csv_line(std::ofstream& os, std::initializer_list<double> values) {
    bool first = true;
    char buf[40];
    for (double v : values) {
        if (!first) os << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
        first = false;
    }
    os << "\n";
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> idx, std::uint64_t seed,
                                  std::uint64_t epoch) {
    Rng rng = Rng::stream(seed, 1000 + epoch);
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

Metrics mean_metrics(const std::vector<std::pair<std::size_t, Metrics>>& rows) {
    Metrics m;
    if (rows.empty()) return m;
    for (const auto& [id, r] : rows) {
        m.dsc += r.dsc;
        m.iou += r.iou;
        m.accuracy += r.accuracy;
        m.recall += r.recall;
        m.precision += r.precision;
    }
    const double n = static_cast<double>(rows.size());
    m.dsc /= n;
    m.iou /= n;
    m.accuracy /= n;
    m.recall /= n;
    m.precision /= n;
    return m;
}

void per_sample_metrics(const Tensor& logits, const Tensor& gt,
                        const std::vector<std::size_t>& sample_ids,
                        std::vector<std::pair<std::size_t, Metrics>>& out) {
    const std::size_t batch = logits.shape()[0];
    const std::size_t hw = logits.shape()[1] * logits.shape()[2];
    const Tensor mask = binarize(logits);
    for (std::size_t k = 0; k < batch; ++k) {
        std::vector<double> p(mask.data().begin() + static_cast<std::ptrdiff_t>(k * hw),
                              mask.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * hw));
        std::vector<double> t(gt.data().begin() + static_cast<std::ptrdiff_t>(k * hw),
                              gt.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * hw));
        Tensor pm({logits.shape()[1], logits.shape()[2]}, std::move(p));
        Tensor tm({logits.shape()[1], logits.shape()[2]}, std::move(t));
        out.emplace_back(sample_ids[k], metrics(pm, tm));
    }
}

void check_finite(double loss, const char* stage) {
    if (!std::isfinite(loss))
        throw InvariantBreach(std::string(stage) + ": loss diverged (non-finite)");
}

}  // namespace

EncoderWeights pretrain(const TrainConfig& config, const Dataset& data,
                        const std::filesystem::path& out_dir) {
    config.validate();
    if (data.train_idx.empty()) throw ConfigError("pretrain: empty training split");
    std::filesystem::create_directories(out_dir);

    Rng init_rng = Rng::stream(config.seed, 1);
    EncoderWeights weights = init_encoder(config.encoder, init_rng);
    ExpertParams model;
    model.enc = weights;

    auto params = model.named_parameters("model.");
    RmspropState opt;

    std::ofstream loss_csv(out_dir / "pretrain_losses.csv");
    loss_csv << "epoch,lr,L_ce,L_dice,L_seg\n";

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const double lr = config.schedule.lr_for_epoch(epoch);
        const auto order = shuffled(data.train_idx, config.seed, epoch);
        double sum_ce = 0, sum_dice = 0, sum_total = 0;
        std::size_t steps = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            Batch batch = assemble_batch(data, order, begin, end, false);

            Tape tape;
            ExpertOutputs out = forward_expert(config.encoder, model, batch.x_img);
            Tensor ce = ce_loss(out.p, batch.gt);
            Tensor dice = dice_loss(out.p, batch.gt);
            Tensor total = seg_loss(ce, dice, config.w_ce, config.w_dice);
            check_finite(total.item(), "pretrain");
            backward(total);
            rmsprop_step(params, lr, config.rms_decay, config.rms_eps, opt);
            for (auto& [name, t] : params) t.zero_grad();

            sum_ce += ce.item();
            sum_dice += dice.item();
            sum_total += total.item();
            ++steps;
        }
        loss_csv << epoch << ",";
        append_csv_line(loss_csv,
                        {lr, sum_ce / static_cast<double>(steps), sum_dice / static_cast<double>(steps),
                         sum_total / static_cast<double>(steps)});
    }

    save_pretrained(out_dir / "checkpoint", config.encoder, model.enc);
    return model.enc;
}

namespace {

std::vector<std::pair<std::string, Tensor>> collect_trainables(
    std::array<ExpertParams, 3>& experts, SgclProjections* proj) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (int e = 0; e < 3; ++e)
        for (auto& [name, t] : experts[static_cast<std::size_t>(e)].named_parameters(
                 "expert" + std::to_string(e) + "."))
            if (t.requires_grad()) out.emplace_back(name, t);
    if (proj) {
        out.emplace_back("sgcl.w1", proj->w1);
        out.emplace_back("sgcl.b1", proj->b1);
        out.emplace_back("sgcl.w2", proj->w2);
        out.emplace_back("sgcl.b2", proj->b2);
        out.emplace_back("sgcl.w3", proj->w3);
        out.emplace_back("sgcl.b3", proj->b3);
    }
    return out;
}

}  // namespace

RunRecord finetune(const TrainConfig& config, const EncoderWeights& pretrained,
                   const Dataset& data, FinetuneMode mode, const std::filesystem::path& out_dir) {
    config.validate();
    if (data.train_idx.empty()) throw ConfigError("finetune: empty training split");
    std::filesystem::create_directories(out_dir);

    Rng build_rng = Rng::stream(config.seed, 2);
    std::array<ExpertParams, 3> experts = build_experts(config.encoder, pretrained, build_rng);

    const bool use_sgcl = mode == FinetuneMode::ecfm_sgcl;
    std::optional<SgclProjections> proj;
    if (use_sgcl) {
        Rng proj_rng = Rng::stream(config.seed, 3);
        proj = SgclProjections::init(config.encoder.embed_dim, config.encoder.proj_dim(), proj_rng);
    }

    // Frozen-parameter snapshot for the integrity check at the end.
    std::vector<std::pair<std::string, std::vector<double>>> frozen;
    for (int e = 0; e < 3; ++e)
        for (auto& [name, t] : experts[static_cast<std::size_t>(e)].named_parameters(
                 "expert" + std::to_string(e) + "."))
            if (!t.requires_grad()) frozen.emplace_back(name, t.data());

    auto params = collect_trainables(experts, proj ? &*proj : nullptr);
    if (mode == FinetuneMode::adaptive_only) {
        // Only the adaptive expert's parameters move in this ablation.
        std::erase_if(params, [](const auto& p) { return p.first.rfind("expert2.", 0) != 0; });
    }
    RmspropState opt;

    std::ofstream loss_csv(out_dir / "losses.csv");
    loss_csv << "epoch,L_ce,L_dice,L1,L2,L3,L_sgcl,total\n";
    std::ofstream sched_csv(out_dir / "schedule.csv");
    sched_csv << "epoch,lr\n";
    std::ofstream sel_csv(out_dir / "train_selection.csv");
    sel_csv << "epoch,sample_id,score_0,score_1,score_3,chosen,count_after\n";
    std::ofstream val_csv(out_dir / "val_metrics.csv");
    val_csv << "epoch,DSC,IoU,accuracy,recall,precision\n";

    RunRecord record;
    const bool want_fgbg = use_sgcl;
    const bool use_ppav = mode != FinetuneMode::adaptive_only;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const double lr = config.schedule.lr_for_epoch(epoch);
        const auto order = shuffled(data.train_idx, config.seed, epoch);
        EpochRow row;
        row.epoch = epoch;
        row.lr = lr;
        std::size_t steps = 0;

        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            Batch batch = assemble_batch(data, order, begin, end, want_fgbg);

            Tape tape;
            Tensor p_final;
            std::array<Tensor, 4> y_img, y_fg, y_bg;
            std::vector<SelectionRecord> selections;
            std::vector<Tensor> aux_logits;

            if (mode == FinetuneMode::adaptive_only) {
                ExpertOutputs out = forward_expert(config.encoder, experts[2], batch.x_img);
                p_final = out.p;
            } else {
                EnsembleOutputs ens =
                    forward_ensemble(config.encoder, experts, batch.x_img,
                                     want_fgbg ? &batch.x_fg : nullptr,
                                     want_fgbg ? &batch.x_bg : nullptr);
                PredictionSet preds;
                preds.logits = {ens.experts[0].p, ens.experts[1].p, ens.experts[2].p, ens.p3};
                preds.gt = batch.gt;
                SelectionState state;
                state.n_threshold = config.n_threshold_override;
                state.fusion_alpha = config.fusion_alpha;
                PpavResult pp = ppav_batch(preds, state, PpavMode::training);
                p_final = pp.p_final;
                selections = std::move(pp.log);
                if (use_sgcl) {
                    y_img = {ens.experts[0].y_img, ens.experts[1].y_img, ens.experts[2].y_img,
                             ens.y3_img};
                    y_fg = {ens.experts[0].y_fg, ens.experts[1].y_fg, ens.experts[2].y_fg,
                            ens.y3_fg};
                    y_bg = {ens.experts[0].y_bg, ens.experts[1].y_bg, ens.experts[2].y_bg,
                            ens.y3_bg};
                }
                if (config.aux_seg_losses)
                    aux_logits = {ens.experts[0].p, ens.experts[1].p, ens.experts[2].p};
            }

            Tensor ce = ce_loss(p_final, batch.gt);
            Tensor dice = dice_loss(p_final, batch.gt);
            Tensor total;
            SgclTerms terms;
            if (use_sgcl) {
                terms = sgcl_terms(y_img, y_fg, y_bg, *proj, config.anchors);
                total = total_loss(ce, dice, terms.l_sgcl, config.w_ce, config.w_dice,
                                   config.w_sgcl);
            } else {
                total = seg_loss(ce, dice, config.w_ce, config.w_dice);
            }
            for (const Tensor& aux : aux_logits) {
                Tensor aux_ce = ce_loss(aux, batch.gt);
                Tensor aux_dice = dice_loss(aux, batch.gt);
                total = add(total, seg_loss(aux_ce, aux_dice, config.w_ce, config.w_dice));
            }
            check_finite(total.item(), "finetune");
            backward(total);
            rmsprop_step(params, lr, config.rms_decay, config.rms_eps, opt);
            for (auto& [name, t] : params) t.zero_grad();

            row.ce += ce.item();
            row.dice += dice.item();
            if (use_sgcl) {
                row.l1 += terms.l1.item();
                row.l2 += terms.l2.item();
                row.l3 += terms.l3.item();
                row.sgcl += terms.l_sgcl.item();
            }
            row.total += total.item();
            ++steps;

            for (const SelectionRecord& rec : selections) {
                sel_csv << epoch << "," << batch.sample_ids[rec.sample] << ",";
                char buf[40];
                for (double s : rec.scores) {
                    std::snprintf(buf, sizeof(buf), "%.17g", s);
                    sel_csv << buf << ",";
                }
                sel_csv << rec.chosen_source << "," << rec.count_after << "\n";
            }
        }

        const double inv_steps = 1.0 / static_cast<double>(steps);
        row.ce *= inv_steps;
        row.dice *= inv_steps;
        row.l1 *= inv_steps;
        row.l2 *= inv_steps;
        row.l3 *= inv_steps;
        row.sgcl *= inv_steps;
        row.total *= inv_steps;

        EvalResult val = evaluate_ensemble(config, experts, data, data.val_idx, use_ppav);
        row.val = val.mean_fused;
        record.epochs.push_back(row);

        loss_csv << epoch << ",";
        append_csv_line(loss_csv, {row.ce, row.dice, row.l1, row.l2, row.l3, row.sgcl, row.total});
        sched_csv << epoch << ",";
        append_csv_line(sched_csv, {lr});
        val_csv << epoch << ",";
        append_csv_line(val_csv,
                        {row.val.dsc, row.val.iou, row.val.accuracy, row.val.recall,
                         row.val.precision});
    }

    // Freeze integrity: non-trainable parameters must be bit-identical.
    std::size_t cursor = 0;
    for (int e = 0; e < 3; ++e)
        for (auto& [name, t] : experts[static_cast<std::size_t>(e)].named_parameters(
                 "expert" + std::to_string(e) + "."))
            if (!t.requires_grad()) {
                if (frozen[cursor].second != t.data())
                    throw InvariantBreach("finetune: frozen parameter " + name + " changed");
                ++cursor;
            }

    EvalResult final_val = evaluate_ensemble(config, experts, data, data.val_idx, use_ppav);
    record.final_val_fused = final_val.mean_fused;
    record.final_val_primary = final_val.mean_primary;
    write_eval_csvs(final_val, out_dir);

    record.checkpoint_dir = out_dir / "checkpoint";
    save_experts(record.checkpoint_dir, config.encoder, experts, proj ? &*proj : nullptr);
    return record;
}

namespace {

EvalResult evaluate_batches(const TrainConfig& config, const Dataset& data,
                            const std::vector<std::size_t>& indices, bool fuse_output,
                            const std::function<std::array<Tensor, 4>(const Tensor&)>& forward) {
    if (indices.empty()) throw ConfigError("evaluate: empty sample set");
    EvalResult result;
    for (std::size_t begin = 0; begin < indices.size(); begin += config.batch_size) {
        const std::size_t end = std::min(indices.size(), begin + config.batch_size);
        Batch batch = assemble_batch(data, indices, begin, end, false);
        NoGradGuard guard;
        std::array<Tensor, 4> logits = forward(batch.x_img);

        Tensor final_logits = logits[2];
        if (fuse_output) {
            PredictionSet preds;
            preds.logits = logits;
            SelectionState state;
            state.fusion_alpha = config.fusion_alpha;
            state.n_threshold = config.balance_at_inference
                                    ? config.n_threshold_override
                                    : static_cast<std::int64_t>(indices.size()) + 1;
            PpavResult pp = ppav_batch(preds, state, PpavMode::inference);
            final_logits = pp.p_final;
            for (SelectionRecord rec : pp.log) {
                rec.sample = batch.sample_ids[rec.sample];
                result.selections.push_back(rec);
            }
        }
        per_sample_metrics(final_logits, batch.gt, batch.sample_ids, result.per_sample);
        per_sample_metrics(logits[2], batch.gt, batch.sample_ids, result.per_sample_primary);
    }
    result.mean_fused = mean_metrics(result.per_sample);
    result.mean_primary = mean_metrics(result.per_sample_primary);
    return result;
}

}  // namespace

EvalResult evaluate_ensemble(const TrainConfig& config, const std::array<ExpertParams, 3>& experts,
                             const Dataset& data, const std::vector<std::size_t>& indices,
                             bool fuse_output) {
    if (!fuse_output) {
        // Only the primary expert's output is needed.
        return evaluate_batches(config, data, indices, false, [&](const Tensor& x) {
            ExpertOutputs out = forward_expert(config.encoder, experts[2], x);
            return std::array<Tensor, 4>{out.p, out.p, out.p, out.p};
        });
    }
    return evaluate_batches(config, data, indices, true, [&](const Tensor& x) {
        EnsembleOutputs ens = forward_ensemble(config.encoder, experts, x);
        return std::array<Tensor, 4>{ens.experts[0].p, ens.experts[1].p, ens.experts[2].p, ens.p3};
    });
}

EvalResult evaluate_single(const TrainConfig& config, const EncoderWeights& weights,
                           const Dataset& data, const std::vector<std::size_t>& indices) {
    ExpertParams model;
    model.enc = weights;
    return evaluate_batches(config, data, indices, false, [&](const Tensor& x) {
        ExpertOutputs out = forward_expert(config.encoder, model, x);
        return std::array<Tensor, 4>{out.p, out.p, out.p, out.p};
    });
}

void write_eval_csvs(const EvalResult& result, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    char buf[40];
    auto write_rows = [&](const std::filesystem::path& path,
                          const std::vector<std::pair<std::size_t, Metrics>>& rows) {
        std::ofstream os(path);
        if (!os) throw IoError("write_eval_csvs: cannot write " + path.string());
        os << "sample_id,DSC,IoU,accuracy,recall,precision\n";
        for (const auto& [id, m] : rows) {
            os << id << ",";
            append_csv_line(os, {m.dsc, m.iou, m.accuracy, m.recall, m.precision});
        }
    };
    write_rows(out_dir / "per_sample.csv", result.per_sample);
    write_rows(out_dir / "per_sample_primary.csv", result.per_sample_primary);

    std::ofstream sel(out_dir / "selection.csv");
    sel << "sample_id,score_0,score_1,score_3,chosen,count_after\n";
    for (const SelectionRecord& rec : result.selections) {
        sel << rec.sample << ",";
        for (double s : rec.scores) {
            std::snprintf(buf, sizeof(buf), "%.17g", s);
            sel << buf << ",";
        }
        sel << rec.chosen_source << "," << rec.count_after << "\n";
    }

    std::ofstream summary(out_dir / "summary.csv");
    summary << "output,DSC,IoU,accuracy,recall,precision\n";
    summary << "fused,";
    append_csv_line(summary, {result.mean_fused.dsc, result.mean_fused.iou,
                              result.mean_fused.accuracy, result.mean_fused.recall,
                              result.mean_fused.precision});
    summary << "primary,";
    append_csv_line(summary, {result.mean_primary.dsc, result.mean_primary.iou,
                              result.mean_primary.accuracy, result.mean_primary.recall,
                              result.mean_primary.precision});
}

}  // namespace icmoe
