#include "icmoe/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "icmoe/errors.hpp"
#include "icmoe/rng.hpp"

namespace icmoe {

Tensor ce_loss(const Tensor& logits, const Tensor& target) {
    return bce_with_logits(logits, target);
}

Tensor dice_loss(const Tensor& logits, const Tensor& target) {
    if (logits.shape() != target.shape())
        throw std::invalid_argument("dice_loss: shape mismatch " + shape_str(logits.shape()) +
                                    " vs " + shape_str(target.shape()));
    constexpr double kSmooth = 1.0;
    Tensor prob = sigmoid(logits);
    Tensor inter = reduce_sum(mul(prob, target));
    Tensor numer = add_scalar(mul_scalar(inter, 2.0), kSmooth);
    Tensor denom = add_scalar(add(reduce_sum(prob), reduce_sum(target)), kSmooth);
    return sub(Tensor::scalar(1.0), div(numer, denom));
}

Tensor seg_loss(const Tensor& ce, const Tensor& dice, double w_ce, double w_dice) {
    return add(mul_scalar(ce, w_ce), mul_scalar(dice, w_dice));
}

ConfusionCounts confusion(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("confusion: shape mismatch " + shape_str(pred.shape()) +
                                    " vs " + shape_str(target.shape()));
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.data()[i] != 0.0;
        const bool t = target.data()[i] != 0.0;
        if (p && t)
            ++c.tp;
        else if (p && !t)
            ++c.fp;
        else if (!p && t)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

namespace {

double safe_ratio(double num, double denom, bool both_empty) {
    if (denom == 0.0) return both_empty ? 1.0 : 0.0;
    return num / denom;
}

}  // namespace

Metrics metrics_from_counts(const ConfusionCounts& c) {
    Metrics m;
    const double tp = static_cast<double>(c.tp);
    const double fp = static_cast<double>(c.fp);
    const double fn = static_cast<double>(c.fn);
    const double tn = static_cast<double>(c.tn);
    m.dsc = safe_ratio(2.0 * tp, 2.0 * tp + fp + fn, fp == 0 && fn == 0);
    m.iou = safe_ratio(tp, tp + fp + fn, fp == 0 && fn == 0);
    m.accuracy = (tp + tn) / (tp + fp + fn + tn);
    m.recall = safe_ratio(tp, tp + fn, fp == 0);
    m.precision = safe_ratio(tp, tp + fp, fn == 0);
    return m;
}

Metrics metrics(const Tensor& pred, const Tensor& target) {
    return metrics_from_counts(confusion(pred, target));
}

DistributionReport pca_distribution(const Tensor& features, const Tensor& mask) {
    if (features.shape().size() != 2)
        throw std::invalid_argument("pca_distribution: features must be pixels x channels, got " +
                                    shape_str(features.shape()));
    const std::size_t n = features.shape()[0];
    const std::size_t dim = features.shape()[1];
    if (mask.size() != n)
        throw std::invalid_argument("pca_distribution: mask size " + std::to_string(mask.size()) +
                                    " does not match " + std::to_string(n) + " pixels");

    const auto& x = features.data();

    std::vector<double> mean(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) mean[j] += x[i * dim + j];
    for (double& v : mean) v /= static_cast<double>(n);

    std::vector<double> cov(dim * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < dim; ++a) {
            const double da = x[i * dim + a] - mean[a];
            for (std::size_t b = a; b < dim; ++b)
                cov[a * dim + b] += da * (x[i * dim + b] - mean[b]);
        }
    }
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < a; ++b) cov[a * dim + b] = cov[b * dim + a];
    for (double& v : cov) v /= static_cast<double>(n);

    // Power iteration, fixed 100 rounds from a seeded start.
    Rng rng(0x9c0a);
    std::vector<double> v(dim);
    for (double& e : v) e = rng.uniform(-1.0, 1.0);
    for (int it = 0; it < 100; ++it) {
        std::vector<double> w(dim, 0.0);
        for (std::size_t a = 0; a < dim; ++a)
            for (std::size_t b = 0; b < dim; ++b) w[a] += cov[a * dim + b] * v[b];
        double norm = 0.0;
        for (double e : w) norm += e * e;
        norm = std::sqrt(norm);
        if (norm < 1e-300) break;  // zero covariance: constant features
        for (std::size_t a = 0; a < dim; ++a) v[a] = w[a] / norm;
    }

    // Fixed orientation: largest-magnitude loading made positive.
    std::size_t arg = 0;
    for (std::size_t a = 1; a < dim; ++a)
        if (std::fabs(v[a]) > std::fabs(v[arg])) arg = a;
    if (v[arg] < 0.0)
        for (double& e : v) e = -e;

    std::vector<double> score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) score[i] += (x[i * dim + j] - mean[j]) * v[j];

    double lo = score[0], hi = score[0];
    for (double s : score) {
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }

    DistributionReport report;
    for (std::size_t b = 0; b <= 20; ++b) report.bin_edges[b] = static_cast<double>(b) / 20.0;

    const double span = hi - lo;
    report.degenerate = span < 1e-12;
    for (std::size_t i = 0; i < n; ++i) {
        double s = report.degenerate ? 0.5 : (score[i] - lo) / span;
        std::size_t bin = std::min<std::size_t>(19, static_cast<std::size_t>(s * 20.0));
        if (mask.data()[i] != 0.0)
            ++report.fg_counts[bin];
        else
            ++report.bg_counts[bin];
    }
    return report;
}

}  // namespace icmoe
