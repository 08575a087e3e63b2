#pragma once

#include <functional>
#include <vector>

#include "gatelab/param.hpp"
#include "gatelab/tensor.hpp"

namespace gatelab {

class Tape;

// Lightweight handle into a Tape node.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
};

// Define-by-run computation graph over Tensors. A tape is built fresh for
// every forward pass and consumed by a single backward() call.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // When disabled, ops still compute values but record no backward rules.
    // Used for evaluation passes.
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var constant(double v) { return leaf(Tensor::scalar(v), false); }

    // Registers a parameter as a leaf. Frozen parameters never require grad.
    Var param(Parameter& p);

    // Reverse-mode gradients of a scalar loss for every registered non-frozen
    // parameter (zero tensors for disconnected ones). Consumes the graph;
    // calling backward twice on the same tape is an error.
    GradientMap backward(Var loss);

    const Tensor& value(int id) const { return nodes_[id].value; }
    std::size_t size() const { return nodes_.size(); }

    // ---- primitive ops ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);                    // elementwise, same shape
    Var affine(Var a, double k, double c);    // k*a + c elementwise
    Var scalar_mul(Var s, Var a);             // scalar Var times tensor
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var sigmoid(Var a);
    Var tanh_op(Var a);
    Var exp_op(Var a);
    Var log_op(Var a);
    Var abs_op(Var a);                        // subgradient 0 at 0
    Var clamp(Var a, double lo, double hi);   // subgradient 0 outside [lo, hi]
    Var softmax_rows(Var a);
    Var layer_norm_rows(Var a, double eps = 1e-5);
    Var sum(Var a);
    Var mean(Var a);
    Var dot(Var a, Var b);                    // flat inner product -> scalar
    Var l2_norm_sq(Var a);
    Var l2_norm(Var a);
    Var l2_normalize(Var a);                  // flat vector x / ||x||
    Var concat_rows(Var a, Var b);
    Var slice_rows(Var a, std::size_t start, std::size_t count);
    Var concat_cols(const std::vector<Var>& parts);
    Var slice_cols(Var a, std::size_t start, std::size_t count);
    Var scale_rows(Var a, Var s);             // row i scaled by s[i]
    Var add_rowvec(Var a, Var v);             // v added to every row
    Var select(Var a, std::size_t flat_index);
    Var stack_scalars(const std::vector<Var>& xs);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_alloc = false;
        std::function<void(Tape&)> backprop;
    };

    int push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop);
    void accumulate(int id, const Tensor& g);
    Tensor& grad_of(int id);
    bool wants_grad(Var a) const { return grad_enabled_ && nodes_[a.id].requires_grad; }
    void check_same_tape(Var a, Var b) const;

    std::vector<Node> nodes_;
    std::vector<std::pair<const Parameter*, int>> registered_;
    bool grad_enabled_ = true;
    bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }

// Free-function spellings used throughout the model code.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

} // namespace gatelab
