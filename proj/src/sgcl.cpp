#include "icmoe/sgcl.hpp"

#include <cmath>
#include <stdexcept>

#include "icmoe/errors.hpp"

namespace icmoe {

namespace {

// Projected, per-row L2-normalized features: norm(W y + b) along channels.
Tensor project_norm(const Tensor& y, const Tensor& w, const Tensor& b) {
    return l2_normalize(add_bias_rows(matmul(y, w), b), 1);
}

// Mean over patches and channels of the elementwise L1 difference, so all
// terms share one scale regardless of resolution.
Tensor pair_distance(const Tensor& a, const Tensor& b) { return reduce_mean(abs(sub(a, b))); }

}  // namespace

SgclProjections SgclProjections::init(std::size_t embed_dim, std::size_t proj_dim, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(embed_dim));
    auto make_w = [&] {
        std::vector<double> d(embed_dim * proj_dim);
        for (double& v : d) v = rng.uniform(-bound, bound);
        return Tensor({embed_dim, proj_dim}, std::move(d), true);
    };
    SgclProjections p;
    p.w1 = make_w();
    p.w2 = make_w();
    p.w3 = make_w();
    p.b1 = Tensor::zeros({proj_dim}, true);
    p.b2 = Tensor::zeros({proj_dim}, true);
    p.b3 = Tensor::zeros({proj_dim}, true);
    return p;
}

Tensor loss_semantic(const std::array<Tensor, 4>& y_fg, const std::array<Tensor, 4>& y_bg,
                     const Tensor& w1, const Tensor& b1) {
    for (int i = 0; i < 4; ++i)
        if (y_fg[i].size() == 0 || y_bg[i].size() == 0)
            throw std::invalid_argument("loss_semantic: missing features for source " +
                                        std::to_string(i));
    Tensor acc = Tensor::zeros({1});
    for (int i = 0; i < 4; ++i) {
        acc = add(acc,
                  pair_distance(project_norm(y_fg[i], w1, b1), project_norm(y_bg[i], w1, b1)));
    }
    return mul_scalar(acc, 1.0 / 4.0);
}

Tensor loss_consistency(const std::array<Tensor, 4>& y_img, const Tensor& w2, const Tensor& b2,
                        SgclAnchors anchors) {
    const int anchor = anchors == SgclAnchors::equations ? 2 : 0;
    const std::array<int, 3> members =
        anchors == SgclAnchors::equations ? std::array<int, 3>{0, 1, 3} : std::array<int, 3>{1, 2, 3};
    Tensor anchor_n = project_norm(y_img[anchor], w2, b2);
    Tensor acc = Tensor::zeros({1});
    for (int j : members) acc = add(acc, pair_distance(project_norm(y_img[j], w2, b2), anchor_n));
    return mul_scalar(acc, 1.0 / 3.0);
}

Tensor loss_diversity(const std::array<Tensor, 4>& y_img, const Tensor& w3, const Tensor& b3,
                      SgclAnchors anchors) {
    const int anchor = anchors == SgclAnchors::equations ? 0 : 2;
    const std::vector<int> members =
        anchors == SgclAnchors::equations ? std::vector<int>{1, 3} : std::vector<int>{0, 1, 3};
    Tensor anchor_n = project_norm(y_img[anchor], w3, b3);
    Tensor acc = Tensor::zeros({1});
    for (int k : members) acc = add(acc, pair_distance(project_norm(y_img[k], w3, b3), anchor_n));
    return mul_scalar(acc, 1.0 / static_cast<double>(members.size()));
}

Tensor sgcl_ratio(const Tensor& l1, const Tensor& l2, const Tensor& l3, double epsilon) {
    return div(l2, add_scalar(add(l1, l3), epsilon));
}

SgclTerms sgcl_terms(const std::array<Tensor, 4>& y_img, const std::array<Tensor, 4>& y_fg,
                     const std::array<Tensor, 4>& y_bg, SgclProjections& proj,
                     SgclAnchors anchors) {
    SgclTerms t;
    t.l1 = loss_semantic(y_fg, y_bg, proj.w1, proj.b1);
    t.l2 = loss_consistency(y_img, proj.w2, proj.b2, anchors);
    t.l3 = loss_diversity(y_img, proj.w3, proj.b3, anchors);
    t.l_sgcl = sgcl_ratio(t.l1, t.l2, t.l3, proj.epsilon);
    return t;
}

Tensor total_loss(const Tensor& ce, const Tensor& dice, const Tensor& sgcl, double w_ce,
                  double w_dice, double w_sgcl) {
    if (w_ce < 0.0 || w_dice < 0.0 || w_sgcl < 0.0)
        throw ConfigError("total_loss: negative loss weight");
    return add(add(mul_scalar(ce, w_ce), mul_scalar(dice, w_dice)), mul_scalar(sgcl, w_sgcl));
}

}  // namespace icmoe
