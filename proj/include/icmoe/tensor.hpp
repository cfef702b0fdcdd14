#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace icmoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated lazily by backward
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // scatters this->grad into parents

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major tensor of doubles. Values are immutable once created
/// except for leaf parameters, which optimizers update through data_mut().
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& data_mut() { return node_->data; }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    const std::vector<double>& grad() const;
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

    /// Value of a single-element tensor.
    double item() const;

    /// Deep copy of the values; the copy is a fresh leaf.
    Tensor clone(bool requires_grad) const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Records the operations of one training step in execution order.
/// Exactly one tape may be active per thread; ops performed while no tape
/// is active (or under NoGradGuard) produce constant tensors.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();
    void record(std::shared_ptr<detail::Node> node) { records_.push_back(std::move(node)); }
    std::size_t size() const { return records_.size(); }

    const std::vector<std::shared_ptr<detail::Node>>& records() const { return records_; }

private:
    std::vector<std::shared_ptr<detail::Node>> records_;
    Tape* prev_;
};

/// Disables gradient recording for its scope.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_recording_enabled();

// ---- ops --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Binary elementwise ops require equal shapes; a single-element operand
// broadcasts against any shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);

/// Reduce over the given axes (empty = all axes). Output drops the
/// reduced axes; a full reduction yields shape {1}.
Tensor reduce_sum(const Tensor& x, const std::vector<std::size_t>& axes = {});
Tensor reduce_mean(const Tensor& x, const std::vector<std::size_t>& axes = {});

/// Divide each vector along `axis` by max(L2 norm, 1e-12).
Tensor l2_normalize(const Tensor& x, std::size_t axis);

/// y[i][j] = x[i][j] + b[j] for a 2-D x and 1-D b.
Tensor add_bias_rows(const Tensor& x, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);

/// B x H x W -> (B * patches) x patch^2, patches in row-major patch-grid
/// order, pixels within a patch in row-major order.
Tensor patchify(const Tensor& x, std::size_t patch);
Tensor unpatchify(const Tensor& x, std::size_t batch, std::size_t height,
                  std::size_t width, std::size_t patch);

/// Mean binary cross-entropy with logits, log-sum-exp stabilized.
/// The target is treated as a constant.
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

/// Reverse pass from a scalar root over the active tape. Gradients
/// accumulate additively across fan-out.
void backward(const Tensor& root);

}  // namespace icmoe
