#include "icmoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace icmoe {

namespace {

thread_local Tape* t_current_tape = nullptr;
thread_local int t_no_grad_depth = 0;

using detail::Node;

// Creates the result tensor and records it on the active tape when any
// input participates in gradient tracking.
Tensor make_op(Shape shape, std::vector<double> data,
               std::initializer_list<Tensor> inputs,
               std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);

    bool track = grad_recording_enabled() && Tape::current() != nullptr;
    if (track) {
        bool any = false;
        for (const Tensor& t : inputs) any = any || t.requires_grad();
        track = any;
    }
    if (track) {
        node->requires_grad = true;
        for (const Tensor& t : inputs) node->parents.push_back(t.node());
        node->backprop = std::move(backprop);
        Tape::current()->record(node);
    }
    return Tensor(std::move(node));
}

void check_equal_shapes(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

double sigmoid_val(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " expects " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(data.size()));
    }
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> d(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw std::logic_error("Tensor::grad: no gradient present");
    return node_->grad;
}

double Tensor::item() const {
    if (size() != 1) {
        throw std::invalid_argument("Tensor::item: expected a single element, shape is " +
                                    shape_str(shape()));
    }
    return node_->data[0];
}

Tensor Tensor::clone(bool requires_grad) const {
    return Tensor(node_->shape, node_->data, requires_grad);
}

Tape::Tape() : prev_(t_current_tape) { t_current_tape = this; }

Tape::~Tape() { t_current_tape = prev_; }

Tape* Tape::current() { return t_current_tape; }

NoGradGuard::NoGradGuard() { ++t_no_grad_depth; }

NoGradGuard::~NoGradGuard() { --t_no_grad_depth; }

bool grad_recording_enabled() { return t_no_grad_depth == 0; }

// ---- ops --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    const auto& da = a.data();
    const auto& db = b.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = da[i * k + p];
            if (av == 0.0) continue;
            const double* brow = &db[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& o) {
        const auto& g = o.grad;
        if (an->requires_grad) {
            an->ensure_grad();
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = &g[i * n];
                    const double* brow = &bn->data[p * n];
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    an->grad[i * k + p] += s;
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB = A^T * dC
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = &g[i * n];
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = an->data[i * k + p];
                    if (av == 0.0) continue;
                    double* brow = &bn->grad[p * n];
                    for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
            }
        }
    });
}

namespace {

enum class BinOp { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    if (!a_scalar && !b_scalar) check_equal_shapes(a, b, name);
    const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(out_shape);
    const auto& da = a.data();
    const auto& db = b.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = da[a_scalar ? 0 : i];
        const double y = db[b_scalar ? 0 : i];
        switch (op) {
            case BinOp::add: out[i] = x + y; break;
            case BinOp::sub: out[i] = x - y; break;
            case BinOp::mul: out[i] = x * y; break;
            case BinOp::div: out[i] = x / y; break;
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(out_shape, std::move(out), {a, b},
                   [an, bn, op, n, a_scalar, b_scalar](Node& o) {
                       const auto& g = o.grad;
                       if (an->requires_grad) an->ensure_grad();
                       if (bn->requires_grad) bn->ensure_grad();
                       for (std::size_t i = 0; i < n; ++i) {
                           const double x = an->data[a_scalar ? 0 : i];
                           const double y = bn->data[b_scalar ? 0 : i];
                           double ga = 0.0, gb = 0.0;
                           switch (op) {
                               case BinOp::add: ga = g[i]; gb = g[i]; break;
                               case BinOp::sub: ga = g[i]; gb = -g[i]; break;
                               case BinOp::mul: ga = g[i] * y; gb = g[i] * x; break;
                               case BinOp::div:
                                   ga = g[i] / y;
                                   gb = -g[i] * x / (y * y);
                                   break;
                           }
                           if (an->requires_grad) an->grad[a_scalar ? 0 : i] += ga;
                           if (bn->requires_grad) bn->grad[b_scalar ? 0 : i] += gb;
                       }
                   });
}

Tensor unary(const Tensor& x, double (*f)(double), double (*df)(double)) {
    const std::size_t n = x.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x.data()[i]);
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn, df, n](Node& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) xn->grad[i] += o.grad[i] * df(xn->data[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div, "div"); }

Tensor add_scalar(const Tensor& x, double c) { return add(x, Tensor::scalar(c)); }
Tensor mul_scalar(const Tensor& x, double c) { return mul(x, Tensor::scalar(c)); }

Tensor relu(const Tensor& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, [](double v) { return sigmoid_val(v); },
        [](double v) {
            const double s = sigmoid_val(v);
            return s * (1.0 - s);
        });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, [](double v) { return std::fabs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

namespace {

std::vector<std::size_t> normalize_axes(const Tensor& x, std::vector<std::size_t> axes) {
    if (axes.empty()) {
        axes.resize(x.shape().size());
        for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
        return axes;
    }
    std::sort(axes.begin(), axes.end());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= x.shape().size())
            throw std::invalid_argument("reduce: axis " + std::to_string(axes[i]) +
                                        " out of range for shape " + shape_str(x.shape()));
        if (i > 0 && axes[i] == axes[i - 1])
            throw std::invalid_argument("reduce: duplicate axis " + std::to_string(axes[i]));
    }
    return axes;
}

Tensor reduce_impl(const Tensor& x, std::vector<std::size_t> axes, bool mean) {
    axes = normalize_axes(x, std::move(axes));
    const Shape& in_shape = x.shape();
    const std::size_t rank = in_shape.size();

    std::vector<bool> reduced(rank, false);
    for (std::size_t a : axes) reduced[a] = true;

    Shape out_shape;
    for (std::size_t d = 0; d < rank; ++d)
        if (!reduced[d]) out_shape.push_back(in_shape[d]);
    if (out_shape.empty()) out_shape = {1};

    // Flat-index projection: out_index = sum over kept dims of coord * stride.
    const std::size_t n = x.size();
    std::vector<std::size_t> in_stride(rank, 1), proj(rank, 0);
    for (std::size_t d = rank; d-- > 1;) in_stride[d - 1] = in_stride[d] * in_shape[d];
    std::size_t out_stride = 1;
    for (std::size_t d = rank; d-- > 0;) {
        if (!reduced[d]) {
            proj[d] = out_stride;
            out_stride *= in_shape[d];
        }
    }

    std::size_t count = 1;
    for (std::size_t a : axes) count *= in_shape[a];
    const double scale = mean ? 1.0 / static_cast<double>(count) : 1.0;

    std::vector<std::size_t> out_index(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t rem = i, o = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            const std::size_t c = rem / in_stride[d];
            rem %= in_stride[d];
            o += c * proj[d];
        }
        out_index[i] = o;
    }

    std::vector<double> out(shape_numel(out_shape), 0.0);
    const auto& dx = x.data();
    for (std::size_t i = 0; i < n; ++i) out[out_index[i]] += dx[i];
    if (mean)
        for (double& v : out) v *= scale;

    auto xn = x.node();
    return make_op(out_shape, std::move(out), {x},
                   [xn, out_index = std::move(out_index), scale, n](Node& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < n; ++i)
                           xn->grad[i] += o.grad[out_index[i]] * scale;
                   });
}

}  // namespace

Tensor reduce_sum(const Tensor& x, const std::vector<std::size_t>& axes) {
    return reduce_impl(x, axes, false);
}

Tensor reduce_mean(const Tensor& x, const std::vector<std::size_t>& axes) {
    return reduce_impl(x, axes, true);
}

Tensor l2_normalize(const Tensor& x, std::size_t axis) {
    constexpr double kDelta = 1e-12;
    const Shape& shape = x.shape();
    if (axis >= shape.size())
        throw std::invalid_argument("l2_normalize: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(shape));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    const std::size_t len = shape[axis];

    const auto& dx = x.data();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double sq = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const double v = dx[base + j * inner];
                sq += v * v;
            }
            const double denom = std::max(std::sqrt(sq), kDelta);
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] = dx[base + j * inner] / denom;
        }
    }
    auto xn = x.node();
    return make_op(shape, std::move(out), {x}, [xn, outer, inner, len](Node& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const auto& g = o.grad;
        for (std::size_t ou = 0; ou < outer; ++ou) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = ou * len * inner + i;
                double sq = 0.0, dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    const double v = xn->data[base + j * inner];
                    sq += v * v;
                    dot += v * g[base + j * inner];
                }
                const double norm = std::sqrt(sq);
                if (norm > kDelta) {
                    const double inv = 1.0 / norm;
                    const double inv3 = inv * inv * inv;
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        xn->grad[idx] += g[idx] * inv - xn->data[idx] * dot * inv3;
                    }
                } else {
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        xn->grad[idx] += g[idx] / kDelta;
                    }
                }
            }
        }
    });
}

Tensor add_bias_rows(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || x.shape()[1] != b.shape()[0]) {
        throw std::invalid_argument("add_bias_rows: incompatible shapes " + shape_str(x.shape()) +
                                    " and " + shape_str(b.shape()));
    }
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + b.data()[j];
    auto xn = x.node();
    auto bn = b.node();
    return make_op(x.shape(), std::move(out), {x, b}, [xn, bn, m, n](Node& o) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < m * n; ++i) xn->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) bn->grad[j] += o.grad[i * n + j];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(shape));
    }
    auto xn = x.node();
    const std::size_t n = x.size();
    return make_op(std::move(shape), x.data(), {x}, [xn, n](Node& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) xn->grad[i] += o.grad[i];
    });
}

namespace {

// Forward index map for patchify; a bijection, so backward scatters by it.
std::vector<std::size_t> patch_index_map(std::size_t batch, std::size_t height,
                                         std::size_t width, std::size_t patch) {
    const std::size_t ph = height / patch, pw = width / patch;
    std::vector<std::size_t> map(batch * height * width);
    std::size_t row = 0;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t py = 0; py < ph; ++py)
            for (std::size_t px = 0; px < pw; ++px) {
                for (std::size_t dy = 0; dy < patch; ++dy)
                    for (std::size_t dx2 = 0; dx2 < patch; ++dx2) {
                        const std::size_t src =
                            b * height * width + (py * patch + dy) * width + px * patch + dx2;
                        map[row * patch * patch + dy * patch + dx2] = src;
                    }
                ++row;
            }
    return map;
}

}  // namespace

Tensor patchify(const Tensor& x, std::size_t patch) {
    if (x.shape().size() != 3)
        throw std::invalid_argument("patchify: expected B x H x W, got " + shape_str(x.shape()));
    const std::size_t batch = x.shape()[0], height = x.shape()[1], width = x.shape()[2];
    if (patch == 0 || height % patch != 0 || width % patch != 0)
        throw std::invalid_argument("patchify: patch size " + std::to_string(patch) +
                                    " does not divide " + shape_str(x.shape()));
    auto map = patch_index_map(batch, height, width, patch);
    const std::size_t n = x.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[map[i]];
    auto xn = x.node();
    const std::size_t rows = batch * (height / patch) * (width / patch);
    return make_op({rows, patch * patch}, std::move(out), {x},
                   [xn, map = std::move(map), n](Node& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < n; ++i) xn->grad[map[i]] += o.grad[i];
                   });
}

Tensor unpatchify(const Tensor& x, std::size_t batch, std::size_t height, std::size_t width,
                  std::size_t patch) {
    const std::size_t rows = batch * (height / patch) * (width / patch);
    if (x.shape().size() != 2 || x.shape()[0] != rows || x.shape()[1] != patch * patch)
        throw std::invalid_argument("unpatchify: shape " + shape_str(x.shape()) +
                                    " does not match target " + std::to_string(batch) + "x" +
                                    std::to_string(height) + "x" + std::to_string(width));
    auto map = patch_index_map(batch, height, width, patch);
    const std::size_t n = x.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[map[i]] = x.data()[i];
    auto xn = x.node();
    return make_op({batch, height, width}, std::move(out), {x},
                   [xn, map = std::move(map), n](Node& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < n; ++i) xn->grad[i] += o.grad[map[i]];
                   });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
    check_equal_shapes(logits, target, "bce_with_logits");
    const std::size_t n = logits.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits.data()[i];
        const double y = target.data()[i];
        // max(z,0) - z*y + log(1 + exp(-|z|))
        sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    }
    auto zn = logits.node();
    auto yn = target.node();
    return make_op({1}, {sum / static_cast<double>(n)}, {logits}, [zn, yn, n](Node& o) {
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        const double g = o.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            zn->grad[i] += g * (sigmoid_val(zn->data[i]) - yn->data[i]);
    });
}

void backward(const Tensor& root) {
    if (root.size() != 1)
        throw std::invalid_argument("backward: root must be scalar, shape is " +
                                    shape_str(root.shape()));
    Tape* tape = Tape::current();
    if (!tape) throw std::logic_error("backward: no active tape");

    // Nodes that can influence the root.
    std::unordered_set<detail::Node*> reachable;
    std::vector<detail::Node*> stack{root.node().get()};
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        if (!reachable.insert(n).second) continue;
        for (const auto& p : n->parents) stack.push_back(p.get());
    }

    root.node()->ensure_grad();
    root.node()->grad[0] = 1.0;

    const auto& records = tape->records();
    for (auto it = records.rbegin(); it != records.rend(); ++it) {
        detail::Node* n = it->get();
        if (n->backprop && reachable.count(n) && n->grad.size() == n->data.size()) {
            n->backprop(*n);
        }
    }
}

}  // namespace icmoe
