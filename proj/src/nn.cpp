#include "stvg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace stvg {

Tensor ParamStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return items_[it->second].second;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

int64_t ParamStore::scalar_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

Linear Linear::create(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
    Linear l;
    l.w = ps.add(prefix + ".w", Tensor::from_data({in, out}, xavier_uniform_data(rng, in, out)));
    l.b = ps.add(prefix + ".b", Tensor::zeros({out}));
    return l;
}

LayerNormParams LayerNormParams::create(ParamStore& ps, const std::string& prefix, int d,
                                        double eps) {
    LayerNormParams ln;
    ln.gamma = ps.add(prefix + ".gamma", Tensor::full({d}, 1.0));
    ln.beta = ps.add(prefix + ".beta", Tensor::zeros({d}));
    ln.eps = eps;
    return ln;
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& ps, const std::string& prefix, int d,
                                              int heads, Rng& rng) {
    if (heads < 1 || d % heads != 0)
        throw std::invalid_argument("attention: heads must divide width");
    MultiHeadAttention a;
    a.heads = heads;
    a.wq = Linear::create(ps, prefix + ".wq", d, d, rng);
    a.wk = Linear::create(ps, prefix + ".wk", d, d, rng);
    a.wv = Linear::create(ps, prefix + ".wv", d, d, rng);
    a.wo = Linear::create(ps, prefix + ".wo", d, d, rng);
    return a;
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in, int batches,
                                   const Tensor& key_bias, std::vector<Tensor>* attn) const {
    const int d = q_in.dim(1);
    if (kv_in.dim(1) != d) throw std::invalid_argument("attention: width mismatch");
    if (q_in.dim(0) % batches != 0 || kv_in.dim(0) % batches != 0)
        throw std::invalid_argument("attention: rows not divisible by batch count");
    const int dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    const Tensor q = wq(q_in);
    const Tensor k = wk(kv_in);
    const Tensor v = wv(kv_in);

    Tensor ctx;
    for (int h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(q, h * dk, dk);
        const Tensor kh = slice_cols(k, h * dk, dk);
        const Tensor vh = slice_cols(v, h * dk, dk);
        Tensor scores = mul_scalar(bmm(qh, kh, batches, false, true), scale);
        if (key_bias.defined()) scores = add(scores, key_bias);
        const Tensor weights = softmax(scores, 1);
        if (attn) attn->push_back(weights);
        const Tensor ctx_h = bmm(weights, vh, batches, false, false);
        ctx = h == 0 ? ctx_h : concat_cols(ctx, ctx_h);
    }
    return wo(ctx);
}

FeedForward FeedForward::create(ParamStore& ps, const std::string& prefix, int d, int hidden,
                                double eps, Rng& rng) {
    FeedForward f;
    f.ln = LayerNormParams::create(ps, prefix + ".ln", d, eps);
    f.fc1 = Linear::create(ps, prefix + ".fc1", d, hidden, rng);
    f.fc2 = Linear::create(ps, prefix + ".fc2", hidden, d, rng);
    return f;
}

Tensor FeedForward::operator()(const Tensor& x) const {
    return add(x, fc2(relu(fc1(ln(x)))));
}

Tensor key_padding_bias(int batches, int tq, int tk, const std::vector<bool>& key_masked) {
    if (static_cast<int>(key_masked.size()) != tk)
        throw std::invalid_argument("key_padding_bias: mask length must equal key count");
    std::vector<double> row(static_cast<size_t>(tk));
    for (int j = 0; j < tk; ++j) row[static_cast<size_t>(j)] = key_masked[static_cast<size_t>(j)] ? -1e9 : 0.0;
    std::vector<double> data;
    data.reserve(static_cast<size_t>(batches) * tq * tk);
    for (int i = 0; i < batches * tq; ++i) data.insert(data.end(), row.begin(), row.end());
    return Tensor::from_data({batches * tq, tk}, std::move(data));
}

Tensor sine_positions(const std::vector<int>& positions, int d) {
    if (d < 2 || d % 2 != 0) throw std::invalid_argument("sine_positions: d must be even");
    const int n = static_cast<int>(positions.size());
    std::vector<double> data(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        const double p = static_cast<double>(positions[static_cast<size_t>(i)]);
        for (int j = 0; j < d / 2; ++j) {
            const double freq = std::pow(10000.0, -2.0 * j / d);
            data[static_cast<size_t>(i) * d + 2 * j] = std::sin(p * freq);
            data[static_cast<size_t>(i) * d + 2 * j + 1] = std::cos(p * freq);
        }
    }
    return Tensor::from_data({n, d}, std::move(data));
}

Tensor sine_grid_2d(int grid_h, int grid_w, int d) {
    if (d < 4 || d % 4 != 0) throw std::invalid_argument("sine_grid_2d: d must be a multiple of 4");
    const int half = d / 2;
    std::vector<int> ys(static_cast<size_t>(grid_h));
    std::vector<int> xs(static_cast<size_t>(grid_w));
    for (int i = 0; i < grid_h; ++i) ys[static_cast<size_t>(i)] = i;
    for (int i = 0; i < grid_w; ++i) xs[static_cast<size_t>(i)] = i;
    const Tensor pe_y = sine_positions(ys, half);
    const Tensor pe_x = sine_positions(xs, half);
    std::vector<double> data(static_cast<size_t>(grid_h) * grid_w * d);
    for (int y = 0; y < grid_h; ++y) {
        for (int x = 0; x < grid_w; ++x) {
            double* row = data.data() + (static_cast<size_t>(y) * grid_w + x) * d;
            for (int j = 0; j < half; ++j) {
                row[j] = pe_y.data()[static_cast<size_t>(y) * half + j];
                row[half + j] = pe_x.data()[static_cast<size_t>(x) * half + j];
            }
        }
    }
    return Tensor::from_data({grid_h * grid_w, d}, std::move(data));
}

}  // namespace stvg
