#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stvg/rng.hpp"
#include "stvg/tensor.hpp"

namespace stvg {

// Named parameter registry. Registration order is the canonical order for the
// optimizer and for gradient reductions, keeping runs reproducible.
class ParamStore {
public:
    Tensor add(const std::string& name, Tensor t);
    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    void zero_grad();
    int64_t scalar_count() const;

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, size_t> index_;
};

struct Linear {
    Tensor w;  // {in, out}
    Tensor b;  // {out}

    static Linear create(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
    Tensor operator()(const Tensor& x) const { return add_bias_rows(matmul(x, w), b); }
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    static LayerNormParams create(ParamStore& ps, const std::string& prefix, int d, double eps);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
};

// Batched multi-head attention over `batches` contiguous row groups.
// q_in is {B*Tq, d}, kv_in is {B*Tk, d}. Post-softmax per-head attention maps
// ({B*Tq, Tk} each) are appended to *attn when requested.
struct MultiHeadAttention {
    int heads = 1;
    Linear wq, wk, wv, wo;

    static MultiHeadAttention create(ParamStore& ps, const std::string& prefix, int d, int heads,
                                     Rng& rng);
    Tensor forward(const Tensor& q_in, const Tensor& kv_in, int batches,
                   const Tensor& key_bias = {}, std::vector<Tensor>* attn = nullptr) const;
};

// Pre-norm residual FFN: x + fc2(relu(fc1(ln(x)))).
struct FeedForward {
    LayerNormParams ln;
    Linear fc1, fc2;

    static FeedForward create(ParamStore& ps, const std::string& prefix, int d, int hidden,
                              double eps, Rng& rng);
    Tensor operator()(const Tensor& x) const;
};

// Additive attention bias ({B*Tq, Tk} constant): 0 where visible, -1e9 where
// the key column is masked. The same column mask applies to every group.
Tensor key_padding_bias(int batches, int tq, int tk, const std::vector<bool>& key_masked);

// Sinusoidal encodings (constants, never trainable).
Tensor sine_positions(const std::vector<int>& positions, int d);
Tensor sine_grid_2d(int grid_h, int grid_w, int d);

}  // namespace stvg
