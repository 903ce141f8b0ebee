#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

// Dense f64 tensors with reverse-mode differentiation on a dynamically built
// tape. Semantics: graph construction and backward are single-threaded;
// individual kernels may run parallel but stay bit-deterministic (see
// kernels.hpp). Every forward op validates that its output is finite and
// throws if not.

namespace stvg {

using Shape = std::vector<int>;

int64_t shape_size(const Shape& s);

// Thread-local switch controlling whether new ops record backward closures.
class GradMode {
public:
    static bool enabled();
    static void set(bool on);
};

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> prev;
    std::function<void(TensorNode&)> backward_fn;  // null on leaves
    const char* op = "leaf";

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad();
};

// Value-semantics handle onto a graph node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int axis) const;
    int64_t size() const;

    double* data();
    const double* data() const;
    std::vector<double>& data_vec();
    const std::vector<double>& data_vec() const;

    bool has_grad() const;
    double* grad();
    const double* grad() const;
    std::vector<double>& grad_vec();

    bool requires_grad() const;
    void set_requires_grad(bool on);

    double item() const;                      // size-1 tensors only
    double at(std::initializer_list<int>) const;

    void zero_grad();
    // Reverse pass from this (must be size 1). Topological traversal, each
    // node visited exactly once, gradients summed into multi-consumer nodes.
    void backward();

    TensorNode* node() const { return node_.get(); }
    std::shared_ptr<TensorNode> handle() const { return node_; }

    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<TensorNode> node_;
};

bool same_shape(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

// --- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div_ew(const Tensor& a, const Tensor& b);
Tensor min_ew(const Tensor& a, const Tensor& b);  // ties differentiate toward a
Tensor max_ew(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor log_ew(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs_ew(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// --- linear algebra ---------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false);
// Batched matmul; operands hold `batches` contiguous row blocks.
Tensor bmm(const Tensor& a, const Tensor& b, int batches, bool ta = false, bool tb = false);

// --- normalizations / reductions --------------------------------------------
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor mean_pool(const Tensor& x, const std::vector<int>& axes);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_cols(const Tensor& x);  // {n,d} -> {n}

// --- broadcast helpers over rows ---------------------------------------------
Tensor add_bias_rows(const Tensor& x, const Tensor& bias);  // {n,d} + {d}
Tensor row_mul(const Tensor& x, const Tensor& s);           // x[i,:] * s[i]
Tensor row_div(const Tensor& x, const Tensor& s);           // x[i,:] / s[i]

// --- structure ---------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int start, int len);
Tensor slice_cols(const Tensor& x, int start, int len);
// Rows of x at idx (repeats allowed); backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
Tensor repeat_rows(const Tensor& x, int times);  // block tile [x; x; ...]

// --- model-specific structured ops -------------------------------------------
// {T,d} -> {T*T,d}; cell (i,j) = mean of rows i..j for i<=j, exact zeros below
// the diagonal.
Tensor pool_segments(const Tensor& x);
// Mean over consecutive row groups of the given sizes (zero rows for empty
// groups); sizes must sum to the row count.
Tensor segment_mean_rows(const Tensor& x, const std::vector<int>& sizes);
// 2D convolution over an H x W grid stored as {H*W, c_in} rows, same padding,
// odd kernel. w is {c_out, c_in*kh*kw}, bias {c_out}.
Tensor conv2d_grid(const Tensor& x, const Tensor& w, const Tensor& bias,
                   int grid_h, int grid_w, int kh, int kw);

}  // namespace stvg
