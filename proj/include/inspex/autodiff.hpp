#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace inspex::ad {

/// Dense tensor shape, up to 4-D: (batch, channel, height, width).
struct Shape {
    int n = 1, c = 1, h = 1, w = 1;
    int64_t numel() const { return static_cast<int64_t>(n) * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

template <typename T>
class TapeT;

/// Value handle. Copies share the underlying buffer. A tensor is "tracked"
/// when it carries a tape node id; untracked tensors act as constants.
template <typename T>
struct TensorT {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    int node = -1;
    TapeT<T>* tape = nullptr;

    bool tracked() const { return node >= 0 && tape != nullptr; }
    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T scalar() const { return (*data)[0]; }
    int64_t numel() const { return shape.numel(); }
};

template <typename T>
TensorT<T> make_tensor(Shape shape, T fill = T{0});
template <typename T>
TensorT<T> make_tensor(Shape shape, std::vector<T> values);

/// Reverse-mode tape. Nodes are recorded in execution order (inputs always
/// precede consumers); backward() sweeps once in reverse, accumulating
/// gradients additively for shared nodes.
template <typename T>
class TapeT {
public:
    /// Register a leaf (parameter/input) sharing the tensor's storage.
    TensorT<T> leaf(const TensorT<T>& value);

    /// Record an op. The rule receives the tape and the op's own node id and
    /// must accumulate into its parents' gradient buffers.
    int record(Shape out_shape, std::vector<int> parents,
               std::function<void(TapeT<T>&, int)> backward_rule);

    /// Reverse sweep from a scalar loss. Re-runnable only after reset().
    void backward(const TensorT<T>& loss);

    /// Gradient buffer of a node; zero-filled on first touch.
    std::vector<T>& grad(int node);
    bool has_grad(int node) const;
    const Shape& node_shape(int node) const;

    void reset();
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<int> parents;
        std::function<void(TapeT<T>&, int)> backward_rule;
        std::vector<T> grad_buf;
    };
    std::vector<Node> nodes_;
};

// ---- forward ops (record backward rules when any input is tracked) ----

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride, int pad);

template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride,
                            int pad, int out_pad = 0);

template <typename T>
TensorT<T> instance_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta);

template <typename T>
TensorT<T> relu(const TensorT<T>& x);

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, double slope);

template <typename T>
TensorT<T> tanh_op(const TensorT<T>& x);

template <typename T>
TensorT<T> add(const TensorT<T>& x, const TensorT<T>& y);

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, double c);

template <typename T>
TensorT<T> l1_loss(const TensorT<T>& x, const TensorT<T>& y);

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& x, const TensorT<T>& y);

template <typename T>
TensorT<T> reflection_pad(const TensorT<T>& x, int p);

// ---- optimizer ----

/// Named trainable parameter. The value buffer is shared with tape leaves so
/// no copies are made per step.
template <typename T>
struct ParamT {
    std::string name;
    Shape shape;
    std::shared_ptr<std::vector<T>> value;
    std::vector<T> grad;

    static ParamT zeros(std::string name, Shape shape);
    void zero_grad();
};

template <typename T>
struct AdamStateT {
    double beta1 = 0.5; // GAN-style default; 0.9 is the generic choice
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::vector<std::vector<T>> m, v;
};

/// One Adam update with bias correction over a parameter group. Moment
/// buffers are allocated on first use and must stay aligned with the group.
template <typename T>
void adam_step(std::vector<ParamT<T>*>& params, AdamStateT<T>& state, double lr);

// ---- finite-difference checking ----

/// Evaluates `fn` on tracked copies of `inputs`, backpropagates, and compares
/// analytic input gradients against central finite differences (step h).
/// Returns the maximum relative error across all input elements.
double grad_check(
    const std::function<TensorT<double>(TapeT<double>&, std::vector<TensorT<double>>&)>& fn,
    const std::vector<TensorT<double>>& inputs, double h = 1e-3);

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using Param = ParamT<float>;
using AdamState = AdamStateT<float>;

} // namespace inspex::ad
