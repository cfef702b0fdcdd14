#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "icmoe/gradcheck.hpp"
#include "icmoe/losses.hpp"
#include "icmoe/rng.hpp"

using namespace icmoe;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape));
    for (double& v : d) v = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor random_mask(Shape shape, Rng& rng) {
    std::vector<double> d(shape_numel(shape));
    for (double& v : d) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return Tensor(std::move(shape), std::move(d));
}

// Naive sigmoid/log reference for the mean cross-entropy.
double ce_oracle(const Tensor& z, const Tensor& y) {
    double sum = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z.data()[i]));
        sum += -(y.data()[i] * std::log(p) + (1.0 - y.data()[i]) * std::log(1.0 - p));
    }
    return sum / static_cast<double>(z.size());
}

// Naive reference for the smoothed dice loss.
double dice_oracle(const Tensor& z, const Tensor& y) {
    double inter = 0, psum = 0, ysum = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z.data()[i]));
        inter += p * y.data()[i];
        psum += p;
        ysum += y.data()[i];
    }
    return 1.0 - (2.0 * inter + 1.0) / (psum + ysum + 1.0);
}

}  // namespace

TEST_CASE("ce_loss matches the naive oracle") {
    Rng rng(11);
    for (int t = 0; t < 50; ++t) {
        Tensor z = random_tensor({4, 7}, rng, -4, 4);
        Tensor y = random_mask({4, 7}, rng);
        CHECK(ce_loss(z, y).item() == doctest::Approx(ce_oracle(z, y)).epsilon(1e-10));
    }
}

TEST_CASE("dice_loss matches the naive oracle") {
    Rng rng(12);
    for (int t = 0; t < 50; ++t) {
        Tensor z = random_tensor({3, 9}, rng, -4, 4);
        Tensor y = random_mask({3, 9}, rng);
        CHECK(dice_loss(z, y).item() == doctest::Approx(dice_oracle(z, y)).epsilon(1e-10));
    }
}

TEST_CASE("loss gradients pass finite differences") {
    Rng rng(13);
    for (int t = 0; t < 10; ++t) {
        Tensor y = random_mask({5, 6}, rng);
        CHECK(grad_check([&](const Tensor& z) { return ce_loss(z, y); },
                         random_tensor({5, 6}, rng, -2, 2, true)) < 1e-6);
        CHECK(grad_check([&](const Tensor& z) { return dice_loss(z, y); },
                         random_tensor({5, 6}, rng, -2, 2, true)) < 1e-6);
        CHECK(grad_check(
                  [&](const Tensor& z) {
                      return seg_loss(ce_loss(z, y), dice_loss(z, y), 0.5, 0.5);
                  },
                  random_tensor({5, 6}, rng, -2, 2, true)) < 1e-6);
    }
}

TEST_CASE("seg_loss is the weighted sum of its terms") {
    Tensor ce = Tensor::scalar(0.75);
    Tensor dice = Tensor::scalar(0.25);
    CHECK(seg_loss(ce, dice).item() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(seg_loss(ce, dice, 1.0, 0.0).item() == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(seg_loss(ce, dice, 0.2, 0.8).item() == doctest::Approx(0.35).epsilon(1e-15));
}

TEST_CASE("hand-counted 4x4 confusion case") {
    // Target has 6 foreground pixels; the prediction hits 4 of them and
    // adds 2 false positives: TP=4 FP=2 FN=2 TN=8.
    Tensor target({4, 4}, {1, 1, 0, 0,  //
                           1, 1, 0, 0,  //
                           1, 1, 0, 0,  //
                           0, 0, 0, 0});
    Tensor pred({4, 4}, {1, 1, 0, 0,  //
                         1, 1, 0, 0,  //
                         0, 0, 1, 1,  //
                         0, 0, 0, 0});
    const ConfusionCounts c = confusion(pred, target);
    CHECK(c.tp == 4);
    CHECK(c.fp == 2);
    CHECK(c.fn == 2);
    CHECK(c.tn == 8);
    const Metrics m = metrics(pred, target);
    CHECK(m.dsc == doctest::Approx(8.0 / 12.0).epsilon(1e-15));
    CHECK(m.iou == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.accuracy == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(m.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(m.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("metric conventions for empty masks") {
    Tensor empty = Tensor::zeros({3, 3});
    Tensor some({3, 3}, {1, 0, 0, 0, 0, 0, 0, 0, 0});
    const Metrics both = metrics(empty, empty);
    CHECK(both.dsc == 1.0);
    CHECK(both.iou == 1.0);
    CHECK(both.recall == 1.0);
    CHECK(both.precision == 1.0);
    CHECK(both.accuracy == 1.0);
    const Metrics miss = metrics(empty, some);
    CHECK(miss.dsc == 0.0);
    CHECK(miss.iou == 0.0);
    CHECK(miss.recall == 0.0);
    CHECK(miss.precision == 0.0);
}

TEST_CASE("DSC equals 2*IoU/(1+IoU) on random masks") {
    Rng rng(14);
    for (int t = 0; t < 200; ++t) {
        const Metrics m = metrics(random_mask({6, 6}, rng), random_mask({6, 6}, rng));
        CHECK(std::fabs(m.dsc - 2.0 * m.iou / (1.0 + m.iou)) < 1e-12);
    }
}

TEST_CASE("pca_distribution separates linearly arranged features") {
    // Features lie on a line in 3-D; the first principal component must
    // recover the line parameter, so fg (high t) and bg (low t) split
    // cleanly into disjoint bin ranges.
    const std::size_t n = 100;
    std::vector<double> feats(n * 3), mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n - 1);
        feats[i * 3 + 0] = 2.0 * t;
        feats[i * 3 + 1] = -1.0 * t;
        feats[i * 3 + 2] = 0.5 * t;
        mask[i] = t >= 0.5 ? 1.0 : 0.0;
    }
    const DistributionReport rep =
        pca_distribution(Tensor({n, 3}, std::move(feats)), Tensor({n}, std::move(mask)));
    CHECK_FALSE(rep.degenerate);
    CHECK(rep.bin_edges.front() == doctest::Approx(0.0));
    CHECK(rep.bin_edges.back() == doctest::Approx(1.0));
    const auto fg_total = std::accumulate(rep.fg_counts.begin(), rep.fg_counts.end(), int64_t{0});
    const auto bg_total = std::accumulate(rep.bg_counts.begin(), rep.bg_counts.end(), int64_t{0});
    CHECK(fg_total + bg_total == static_cast<std::int64_t>(n));
    // No bin mixes the two classes.
    for (std::size_t b = 0; b < 20; ++b) CHECK((rep.fg_counts[b] == 0 || rep.bg_counts[b] == 0));
    // The orientation convention puts the largest loading positive, so fg
    // (larger first coordinate) occupies the upper bins.
    CHECK(rep.fg_counts[19] > 0);
    CHECK(rep.bg_counts[0] > 0);
}

TEST_CASE("pca_distribution flags constant features as degenerate") {
    const DistributionReport rep =
        pca_distribution(Tensor::full({10, 4}, 0.7), Tensor::zeros({10}));
    CHECK(rep.degenerate);
}

TEST_CASE("uniform scores spread evenly across the 20 bins") {
    const std::size_t n = 200;
    std::vector<double> feats(n), mask(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) feats[i] = static_cast<double>(i);
    const DistributionReport rep =
        pca_distribution(Tensor({n, 1}, std::move(feats)), Tensor({n}, std::move(mask)));
    for (std::size_t b = 0; b < 20; ++b) CHECK(rep.bg_counts[b] == 10);
}
