#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "osp/errors.hpp"
#include "osp/rng.hpp"

namespace osp {

// Dense row-major tensor with channels-last indexing (H,W,C) and a dynamic
// reverse-mode tape. Values are 64-bit throughout; desk-scale shapes keep the
// double-precision cost acceptable and make finite-difference checks reliable.
//
// Graph semantics: every op that sees a requires_grad input records its
// parents and a backprop closure on the output node. backward() zeroes the
// gradients of the whole reachable graph before accumulating, so running it
// twice on the same graph yields identical (not doubled) gradients.

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same length as value
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // distributes this->grad into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() : node_(std::make_shared<TensorNode>()) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    // He-style uniform init, range +-sqrt(6 / fan_in)
    static Tensor rand_init(std::vector<int> shape, int fan_in, Rng& rng);

    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Gradient of the last backward() through this leaf; zeros if untouched.
    std::vector<double> grad() const {
        if (node_->grad.size() == node_->value.size()) return node_->grad;
        return std::vector<double>(node_->value.size(), 0.0);
    }

    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor");
        return node_->value[0];
    }

    // (y, x, c) accessor for [H,W,C] tensors
    double& at(int y, int x, int c) {
        return node_->value[static_cast<size_t>((y * dim(1) + x) * dim(2) + c)];
    }
    double at(int y, int x, int c) const {
        return node_->value[static_cast<size_t>((y * dim(1) + x) * dim(2) + c)];
    }

    // Value copy detached from the graph.
    Tensor detached() const { return from_data(node_->shape, node_->value, false); }

    bool all_finite() const;

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

int64_t shape_product(const std::vector<int>& shape);

// ---- graph ops -------------------------------------------------------------

// Cross-correlation over [H,W,Cin] with kernel [kh,kw,Cin,Cout] and bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride = 1,
              int padding = 0);

Tensor relu(const Tensor& x);

// Per-pixel softmax over the channel axis of [H,W,C], max-subtracted.
Tensor softmax_channels(const Tensor& logits);

Tensor concat_channels(const Tensor& a, const Tensor& b);

// First `count` channels starting at `first`.
Tensor slice_channels(const Tensor& x, int first, int count);

// Cosine similarity of every pixel feature against one prototype vector.
// Zero-norm pixels map to similarity 0 with zero gradient.
Tensor cosine_map(const Tensor& features, const Tensor& proto);

// Mean of the pixel feature vectors selected by a binary mask (H*W bytes).
Tensor masked_mean(const Tensor& features, const std::vector<uint8_t>& mask);

// out = features * (1 + map), map broadcast across channels.
Tensor attend(const Tensor& map, const Tensor& features);

// Per-channel multiply of [H,W,C] by a length-C vector.
Tensor scale_channels(const Tensor& x, const Tensor& channel_scale);

// Stack per-class maps [H,W] into [H,W,C] in the given order.
Tensor stack_maps(const std::vector<Tensor>& maps);

// Same data, new shape of equal size; gradient passes through.
Tensor reshape(const Tensor& x, std::vector<int> new_shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar_scale(const Tensor& a, double sa, const Tensor& b, double sb);  // sa*a + sb*b
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Mean over pixels of -log p[target]; probabilities clamped at `clamp` before
// the log. `targets` holds one channel index per pixel; -1 skips the pixel.
Tensor cross_entropy_probs(const Tensor& probs, const std::vector<int>& targets,
                           double clamp = 1e-12);

// ---- value-only ops ----------------------------------------------------------

// Bilinear resize with half-pixel centers; not recorded on the tape.
Tensor resize_bilinear(const Tensor& image, int new_h, int new_w);

// ---- autodiff driver ---------------------------------------------------------

// Reverse pass from a scalar loss. Zeroes all reachable grads first.
void backward(const Tensor& scalar_loss);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                  double step = 1e-5);

}  // namespace osp
