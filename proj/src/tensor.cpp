#include "stvg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "stvg/kernels.hpp"

namespace stvg {

namespace {

thread_local bool g_grad_enabled = true;

void check_shape_valid(const Shape& s) {
    for (int e : s)
        if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "{";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "}";
    return os.str();
}

void check_finite(const TensorNode& n, const char* op) {
    for (double v : n.data)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
}

std::shared_ptr<TensorNode> make_node(Shape shape, const char* op) {
    auto n = std::make_shared<TensorNode>();
    check_shape_valid(shape);
    n->shape = std::move(shape);
    n->data.resize(static_cast<size_t>(shape_size(n->shape)));
    n->op = op;
    return n;
}

// Wires requires_grad and parent edges; callers attach backward_fn afterwards
// only when grad recording is live.
bool wire(const std::shared_ptr<TensorNode>& out,
          std::initializer_list<const Tensor*> parents) {
    bool rg = false;
    for (const Tensor* p : parents) rg = rg || (p->defined() && p->requires_grad());
    rg = rg && GradMode::enabled();
    out->requires_grad = rg;
    if (rg)
        for (const Tensor* p : parents) out->prev.push_back(p->handle());
    return rg;
}

void accumulate(TensorNode* dst, const std::vector<double>& g) {
    dst->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) dst->grad[i] += g[i];
}

void require_rank(const Tensor& t, int r, const char* op) {
    if (t.rank() != r)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) +
                                    ", got shape " + shape_str(t.shape()));
}

Tensor finish(std::shared_ptr<TensorNode> n) {
    check_finite(*n, n->op);
    return Tensor(std::move(n));
}

}  // namespace

int64_t shape_size(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void TensorNode::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = make_node(std::move(shape), "leaf");
    std::fill(n->data.begin(), n->data.end(), value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape_valid(shape);
    if (static_cast<int64_t>(data.size()) != shape_size(shape))
        throw std::invalid_argument("from_data: data length does not match shape product");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int Tensor::dim(int axis) const { return node_->shape.at(static_cast<size_t>(axis)); }
int64_t Tensor::size() const { return node_->size(); }

double* Tensor::data() { return node_->data.data(); }
const double* Tensor::data() const { return node_->data.data(); }
std::vector<double>& Tensor::data_vec() { return node_->data; }
const std::vector<double>& Tensor::data_vec() const { return node_->data; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
double* Tensor::grad() { return node_->grad.empty() ? nullptr : node_->grad.data(); }
const double* Tensor::grad() const { return node_->grad.empty() ? nullptr : node_->grad.data(); }
std::vector<double>& Tensor::grad_vec() {
    node_->ensure_grad();
    return node_->grad;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor is not size 1");
    return node_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
        throw std::invalid_argument("at(): index rank mismatch");
    int64_t flat = 0;
    int ax = 0;
    for (int i : idx) {
        if (i < 0 || i >= node_->shape[ax]) throw std::out_of_range("at(): index out of range");
        flat = flat * node_->shape[ax] + i;
        ++ax;
    }
    return node_->data[static_cast<size_t>(flat)];
}

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() {
    if (!node_) throw std::invalid_argument("backward(): undefined tensor");
    if (size() != 1) throw std::invalid_argument("backward(): root must be a scalar");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS; each node enters `order` exactly once.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        TensorNode* cur = stack.back().first;
        bool descended = false;
        while (stack.back().second < cur->prev.size()) {
            TensorNode* child = cur->prev[stack.back().second].get();
            ++stack.back().second;
            if (child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
                descended = true;
                break;
            }
        }
        if (!descended) {
            order.push_back(cur);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) return false;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < a.size(); ++i)
        if (pa[i] != pb[i]) return false;
    return true;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

template <class FwdF, class BwdF>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* opname, FwdF fwd, BwdF bwd) {
    if (!same_shape(a, b))
        throw std::invalid_argument(std::string(opname) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto out = make_node(a.shape(), opname);
    kernels::zip(a.data(), b.data(), out->data.data(), out->data.size(), fwd);
    if (wire(out, {&a, &b})) {
        auto an = a.handle();
        auto bn = b.handle();
        out->backward_fn = [an, bn, bwd](TensorNode& self) {
            const size_t n = self.data.size();
            const bool ga = an->requires_grad;
            const bool gb = bn->requires_grad;
            if (ga) an->ensure_grad();
            if (gb) bn->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                bwd(self.grad[i], an->data[i], bn->data[i],
                    ga ? &an->grad[i] : nullptr, gb ? &bn->grad[i] : nullptr);
        };
    }
    return finish(out);
}

template <class FwdF, class BwdF>
Tensor unary_ew(const Tensor& a, const char* opname, FwdF fwd, BwdF bwd) {
    auto out = make_node(a.shape(), opname);
    kernels::map(a.data(), out->data.data(), out->data.size(), fwd);
    if (wire(out, {&a})) {
        auto an = a.handle();
        out->backward_fn = [an, bwd](TensorNode& self) {
            an->ensure_grad();
            const size_t n = self.data.size();
            for (size_t i = 0; i < n; ++i)
                an->grad[i] += bwd(self.grad[i], an->data[i], self.data[i]);
        };
    }
    return finish(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "add", [](double x, double y) { return x + y; },
                     [](double g, double, double, double* da, double* db) {
                         if (da) *da += g;
                         if (db) *db += g;
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double g, double, double, double* da, double* db) {
                         if (da) *da += g;
                         if (db) *db -= g;
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double g, double x, double y, double* da, double* db) {
                         if (da) *da += g * y;
                         if (db) *db += g * x;
                     });
}

Tensor div_ew(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "div", [](double x, double y) { return x / y; },
                     [](double g, double x, double y, double* da, double* db) {
                         if (da) *da += g / y;
                         if (db) *db -= g * x / (y * y);
                     });
}

Tensor min_ew(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "min", [](double x, double y) { return x <= y ? x : y; },
                     [](double g, double x, double y, double* da, double* db) {
                         if (x <= y) {
                             if (da) *da += g;
                         } else if (db) {
                             *db += g;
                         }
                     });
}

Tensor max_ew(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "max", [](double x, double y) { return x >= y ? x : y; },
                     [](double g, double x, double y, double* da, double* db) {
                         if (x >= y) {
                             if (da) *da += g;
                         } else if (db) {
                             *db += g;
                         }
                     });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_ew(a, "add_scalar", [c](double x) { return x + c; },
                    [](double g, double, double) { return g; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_ew(a, "mul_scalar", [c](double x) { return x * c; },
                    [c](double g, double, double) { return g * c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor log_ew(const Tensor& a) {
    return unary_ew(a, "log", [](double x) { return std::log(x); },
                    [](double g, double x, double) { return g / x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_ew(a, "sigmoid",
                    [](double x) {
                        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                      : std::exp(x) / (1.0 + std::exp(x));
                    },
                    [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_ew(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                    [](double g, double x, double) { return x > 0 ? g : 0.0; });
}

Tensor abs_ew(const Tensor& a) {
    return unary_ew(a, "abs", [](double x) { return std::abs(x); },
                    [](double g, double x, double) { return x > 0 ? g : (x < 0 ? -g : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    return unary_ew(a, "clamp", [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](double g, double x, double) { return (x >= lo && x <= hi) ? g : 0.0; });
}

// ---------------------------------------------------------------------------
// matmul / bmm
// ---------------------------------------------------------------------------

namespace {

struct MatDims {
    int m, k, n;
};

MatDims matmul_dims(const Tensor& a, const Tensor& b, bool ta, bool tb, const char* op) {
    require_rank(a, 2, op);
    require_rank(b, 2, op);
    const int m = ta ? a.dim(1) : a.dim(0);
    const int ka = ta ? a.dim(0) : a.dim(1);
    const int kb = tb ? b.dim(1) : b.dim(0);
    const int n = tb ? b.dim(0) : b.dim(1);
    if (ka != kb)
        throw std::invalid_argument(std::string(op) + ": inner dimensions disagree, " +
                                    shape_str(a.shape()) + (ta ? "^T" : "") + " * " +
                                    shape_str(b.shape()) + (tb ? "^T" : ""));
    return {m, ka, n};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    const MatDims d = matmul_dims(a, b, ta, tb, "matmul");
    auto out = make_node({d.m, d.n}, "matmul");
    kernels::matmul(a.data(), b.data(), out->data.data(), d.m, d.k, d.n, ta, tb);
    if (wire(out, {&a, &b})) {
        auto an = a.handle();
        auto bn = b.handle();
        out->backward_fn = [an, bn, d, ta, tb](TensorNode& self) {
            const double* dc = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                double* da = an->grad.data();
                if (!ta && !tb)
                    kernels::matmul_acc(dc, bn->data.data(), da, d.m, d.n, d.k, false, true);
                else if (!ta && tb)
                    kernels::matmul_acc(dc, bn->data.data(), da, d.m, d.n, d.k, false, false);
                else if (ta && !tb)
                    kernels::matmul_acc(bn->data.data(), dc, da, d.k, d.n, d.m, false, true);
                else
                    kernels::matmul_acc(bn->data.data(), dc, da, d.k, d.n, d.m, true, true);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                double* db = bn->grad.data();
                if (!ta && !tb)
                    kernels::matmul_acc(an->data.data(), dc, db, d.k, d.m, d.n, true, false);
                else if (!ta && tb)
                    kernels::matmul_acc(dc, an->data.data(), db, d.n, d.m, d.k, true, false);
                else if (ta && !tb)
                    kernels::matmul_acc(an->data.data(), dc, db, d.k, d.m, d.n, false, false);
                else
                    kernels::matmul_acc(dc, an->data.data(), db, d.n, d.m, d.k, true, true);
            }
        };
    }
    return finish(out);
}

Tensor bmm(const Tensor& a, const Tensor& b, int batches, bool ta, bool tb) {
    require_rank(a, 2, "bmm");
    require_rank(b, 2, "bmm");
    if (batches < 1) throw std::invalid_argument("bmm: batches must be >= 1");
    if (a.dim(0) % batches != 0 || b.dim(0) % batches != 0)
        throw std::invalid_argument("bmm: row counts not divisible by batch count");
    const int ra = a.dim(0) / batches;
    const int rb = b.dim(0) / batches;
    const int m = ta ? a.dim(1) : ra;
    const int ka = ta ? ra : a.dim(1);
    const int kb = tb ? b.dim(1) : rb;
    const int n = tb ? rb : b.dim(1);
    if (ka != kb) throw std::invalid_argument("bmm: inner dimensions disagree");
    auto out = make_node({batches * m, n}, "bmm");
    kernels::bmm(a.data(), b.data(), out->data.data(), batches, m, ka, n, ta, tb);
    if (wire(out, {&a, &b})) {
        auto an = a.handle();
        auto bn = b.handle();
        const MatDims d{m, ka, n};
        out->backward_fn = [an, bn, d, ta, tb, batches](TensorNode& self) {
            const double* dc = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                double* da = an->grad.data();
                if (!ta && !tb)
                    kernels::bmm_acc(dc, bn->data.data(), da, batches, d.m, d.n, d.k, false, true);
                else if (!ta && tb)
                    kernels::bmm_acc(dc, bn->data.data(), da, batches, d.m, d.n, d.k, false, false);
                else if (ta && !tb)
                    kernels::bmm_acc(bn->data.data(), dc, da, batches, d.k, d.n, d.m, false, true);
                else
                    kernels::bmm_acc(bn->data.data(), dc, da, batches, d.k, d.n, d.m, true, true);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                double* db = bn->grad.data();
                if (!ta && !tb)
                    kernels::bmm_acc(an->data.data(), dc, db, batches, d.k, d.m, d.n, true, false);
                else if (!ta && tb)
                    kernels::bmm_acc(dc, an->data.data(), db, batches, d.n, d.m, d.k, true, false);
                else if (ta && !tb)
                    kernels::bmm_acc(an->data.data(), dc, db, batches, d.k, d.m, d.n, false, false);
                else
                    kernels::bmm_acc(dc, an->data.data(), db, batches, d.n, d.m, d.k, true, true);
            }
        };
    }
    return finish(out);
}

// ---------------------------------------------------------------------------
// softmax / layer norm / reductions
// ---------------------------------------------------------------------------

namespace {

// Iteration pattern for ops along one axis: `lines` independent 1-D slices of
// length `len` with stride `stride`.
struct AxisLines {
    int64_t lines;
    int len;
    int64_t stride;
    std::vector<int64_t> offsets;
};

AxisLines axis_lines(const Shape& shape, int axis) {
    const int r = static_cast<int>(shape.size());
    if (axis < 0 || axis >= r) throw std::invalid_argument("axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (int i = axis + 1; i < r; ++i) inner *= shape[i];
    AxisLines al;
    al.len = shape[axis];
    al.stride = inner;
    al.lines = outer * inner;
    al.offsets.reserve(static_cast<size_t>(al.lines));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i)
            al.offsets.push_back(o * al.len * inner + i);
    return al;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    if (x.rank() == 0) throw std::invalid_argument("softmax: rank-0 input");
    auto out = make_node(x.shape(), "softmax");
    const bool contiguous = (axis == x.rank() - 1);
    if (contiguous) {
        const int cols = x.dim(axis);
        const int rows = static_cast<int>(x.size() / cols);
        kernels::softmax_rows(x.data(), out->data.data(), rows, cols);
    } else {
        const AxisLines al = axis_lines(x.shape(), axis);
        const double* in = x.data();
        double* y = out->data.data();
        std::vector<double> line(static_cast<size_t>(al.len));
        for (int64_t off : al.offsets) {
            double mx = in[off];
            for (int j = 1; j < al.len; ++j) mx = std::max(mx, in[off + j * al.stride]);
            double sum = 0.0;
            for (int j = 0; j < al.len; ++j) {
                line[j] = std::exp(in[off + j * al.stride] - mx);
                sum += line[j];
            }
            for (int j = 0; j < al.len; ++j) y[off + j * al.stride] = line[j] / sum;
        }
    }
    if (wire(out, {&x})) {
        auto xn = x.handle();
        out->backward_fn = [xn, axis, contiguous](TensorNode& self) {
            xn->ensure_grad();
            if (contiguous) {
                const int cols = self.shape.back();
                const int rows = static_cast<int>(self.size() / cols);
                std::vector<double> dx(self.data.size());
                kernels::softmax_rows_backward(self.data.data(), self.grad.data(), dx.data(),
                                               rows, cols);
                accumulate(xn.get(), dx);
            } else {
                const AxisLines al = axis_lines(self.shape, axis);
                for (int64_t off : al.offsets) {
                    double dot = 0.0;
                    for (int j = 0; j < al.len; ++j) {
                        const int64_t p = off + j * al.stride;
                        dot += self.data[p] * self.grad[p];
                    }
                    for (int j = 0; j < al.len; ++j) {
                        const int64_t p = off + j * al.stride;
                        xn->grad[p] += (self.grad[p] - dot) * self.data[p];
                    }
                }
            }
        };
    }
    return finish(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
    const int cols = x.shape().back();
    require_rank(gamma, 1, "layer_norm");
    require_rank(beta, 1, "layer_norm");
    if (gamma.dim(0) != cols || beta.dim(0) != cols)
        throw std::invalid_argument("layer_norm: gamma/beta length must equal last extent");
    const int rows = static_cast<int>(x.size() / cols);
    auto out = make_node(x.shape(), "layer_norm");
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto rstd = std::make_shared<std::vector<double>>(rows);
    kernels::layer_norm_rows(x.data(), gamma.data(), beta.data(), out->data.data(),
                             mean->data(), rstd->data(), rows, cols, eps);
    if (wire(out, {&x, &gamma, &beta})) {
        auto xn = x.handle();
        auto gn = gamma.handle();
        auto bn = beta.handle();
        out->backward_fn = [xn, gn, bn, mean, rstd, rows, cols](TensorNode& self) {
            std::vector<double> dx(xn->data.size());
            std::vector<double> dgamma(static_cast<size_t>(cols), 0.0);
            std::vector<double> dbeta(static_cast<size_t>(cols), 0.0);
            kernels::layer_norm_rows_backward(xn->data.data(), gn->data.data(), mean->data(),
                                              rstd->data(), self.grad.data(), dx.data(),
                                              dgamma.data(), dbeta.data(), rows, cols);
            if (xn->requires_grad) accumulate(xn.get(), dx);
            if (gn->requires_grad) accumulate(gn.get(), dgamma);
            if (bn->requires_grad) accumulate(bn.get(), dbeta);
        };
    }
    return finish(out);
}

Tensor mean_pool(const Tensor& x, const std::vector<int>& axes) {
    if (axes.empty()) throw std::invalid_argument("mean_pool: empty axis list");
    const int r = x.rank();
    std::vector<bool> reduced(static_cast<size_t>(r), false);
    for (int a : axes) {
        if (a < 0 || a >= r) throw std::invalid_argument("mean_pool: axis out of range");
        if (reduced[a]) throw std::invalid_argument("mean_pool: duplicate axis");
        reduced[a] = true;
    }
    Shape out_shape;
    int64_t count = 1;
    for (int i = 0; i < r; ++i) {
        if (reduced[i])
            count *= x.dim(i);
        else
            out_shape.push_back(x.dim(i));
    }
    auto out = make_node(out_shape, "mean_pool");
    std::fill(out->data.begin(), out->data.end(), 0.0);

    // Row-major walk of x with a running output index.
    const Shape& xs = x.shape();
    std::vector<int64_t> out_strides(static_cast<size_t>(r), 0);
    {
        int64_t stride = 1;
        for (int i = r - 1; i >= 0; --i) {
            if (!reduced[i]) {
                out_strides[i] = stride;
                stride *= xs[i];
            }
        }
    }
    const double* in = x.data();
    const int64_t n = x.size();
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int64_t out_index = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
        out->data[static_cast<size_t>(out_index)] += in[flat];
        for (int ax = r - 1; ax >= 0; --ax) {
            out_index += out_strides[ax];
            if (++idx[ax] < xs[ax]) break;
            idx[ax] = 0;
            out_index -= out_strides[ax] * xs[ax];
        }
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (double& v : out->data) v *= inv;

    if (wire(out, {&x})) {
        auto xn = x.handle();
        const Shape xshape = x.shape();
        out->backward_fn = [xn, xshape, out_strides, inv, r](TensorNode& self) {
            xn->ensure_grad();
            std::vector<int> idx(static_cast<size_t>(r), 0);
            int64_t out_index = 0;
            const int64_t n = xn->size();
            for (int64_t flat = 0; flat < n; ++flat) {
                xn->grad[static_cast<size_t>(flat)] +=
                    self.grad[static_cast<size_t>(out_index)] * inv;
                for (int ax = r - 1; ax >= 0; --ax) {
                    out_index += out_strides[ax];
                    if (++idx[ax] < xshape[ax]) break;
                    idx[ax] = 0;
                    out_index -= out_strides[ax] * xshape[ax];
                }
            }
        };
    }
    return finish(out);
}

Tensor sum_all(const Tensor& x) {
    auto out = make_node({}, "sum_all");
    double s = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    out->data[0] = s;
    if (wire(out, {&x})) {
        auto xn = x.handle();
        out->backward_fn = [xn](TensorNode& self) {
            xn->ensure_grad();
            const double g = self.grad[0];
            for (double& v : xn->grad) v += g;
        };
    }
    return finish(out);
}

Tensor mean_all(const Tensor& x) {
    return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_cols(const Tensor& x) {
    require_rank(x, 2, "sum_cols");
    const int n = x.dim(0), d = x.dim(1);
    auto out = make_node({n}, "sum_cols");
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        const double* row = x.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) s += row[j];
        out->data[static_cast<size_t>(i)] = s;
    }
    if (wire(out, {&x})) {
        auto xn = x.handle();
        out->backward_fn = [xn, n, d](TensorNode& self) {
            xn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double g = self.grad[static_cast<size_t>(i)];
                double* row = xn->grad.data() + static_cast<int64_t>(i) * d;
                for (int j = 0; j < d; ++j) row[j] += g;
            }
        };
    }
    return finish(out);
}

// ---------------------------------------------------------------------------
// row broadcasts
// ---------------------------------------------------------------------------

Tensor add_bias_rows(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_bias_rows");
    require_rank(bias, 1, "add_bias_rows");
    const int n = x.dim(0), d = x.dim(1);
    if (bias.dim(0) != d) throw std::invalid_argument("add_bias_rows: bias length mismatch");
    auto out = make_node(x.shape(), "add_bias_rows");
    for (int i = 0; i < n; ++i) {
        const double* xr = x.data() + static_cast<int64_t>(i) * d;
        double* yr = out->data.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) yr[j] = xr[j] + bias.data()[j];
    }
    if (wire(out, {&x, &bias})) {
        auto xn = x.handle();
        auto bn = bias.handle();
        out->backward_fn = [xn, bn, n, d](TensorNode& self) {
            if (xn->requires_grad) accumulate(xn.get(), self.grad);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int j = 0; j < d; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i)
                        s += self.grad[static_cast<size_t>(i) * d + j];
                    bn->grad[static_cast<size_t>(j)] += s;
                }
            }
        };
    }
    return finish(out);
}

namespace {

Tensor row_scale_impl(const Tensor& x, const Tensor& s, bool divide) {
    require_rank(x, 2, divide ? "row_div" : "row_mul");
    require_rank(s, 1, divide ? "row_div" : "row_mul");
    const int n = x.dim(0), d = x.dim(1);
    if (s.dim(0) != n) throw std::invalid_argument("row scale: scale length mismatch");
    auto out = make_node(x.shape(), divide ? "row_div" : "row_mul");
    for (int i = 0; i < n; ++i) {
        const double f = divide ? 1.0 / s.data()[i] : s.data()[i];
        const double* xr = x.data() + static_cast<int64_t>(i) * d;
        double* yr = out->data.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) yr[j] = xr[j] * f;
    }
    if (wire(out, {&x, &s})) {
        auto xn = x.handle();
        auto sn = s.handle();
        out->backward_fn = [xn, sn, n, d, divide](TensorNode& self) {
            for (int i = 0; i < n; ++i) {
                const double sv = sn->data[static_cast<size_t>(i)];
                const double f = divide ? 1.0 / sv : sv;
                const double* gy = self.grad.data() + static_cast<int64_t>(i) * d;
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double* gx = xn->grad.data() + static_cast<int64_t>(i) * d;
                    for (int j = 0; j < d; ++j) gx[j] += gy[j] * f;
                }
                if (sn->requires_grad) {
                    sn->ensure_grad();
                    const double* xr = xn->data.data() + static_cast<int64_t>(i) * d;
                    double acc = 0.0;
                    for (int j = 0; j < d; ++j) acc += gy[j] * xr[j];
                    sn->grad[static_cast<size_t>(i)] += divide ? -acc / (sv * sv) : acc;
                }
            }
        };
    }
    return finish(out);
}

}  // namespace

Tensor row_mul(const Tensor& x, const Tensor& s) { return row_scale_impl(x, s, false); }
Tensor row_div(const Tensor& x, const Tensor& s) { return row_scale_impl(x, s, true); }

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size())
        throw std::invalid_argument("reshape: element count mismatch");
    auto out = make_node(std::move(shape), "reshape");
    out->data = x.data_vec();
    if (wire(out, {&x})) {
        auto xn = x.handle();
        out->backward_fn = [xn](TensorNode& self) { accumulate(xn.get(), self.grad); };
    }
    return finish(out);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_rows");
    require_rank(b, 2, "concat_rows");
    if (a.dim(1) != b.dim(1)) throw std::invalid_argument("concat_rows: column mismatch");
    const int na = a.dim(0), nb = b.dim(0), d = a.dim(1);
    auto out = make_node({na + nb, d}, "concat_rows");
    std::copy(a.data(), a.data() + a.size(), out->data.begin());
    std::copy(b.data(), b.data() + b.size(), out->data.begin() + a.size());
    if (wire(out, {&a, &b})) {
        auto an = a.handle();
        auto bn = b.handle();
        out->backward_fn = [an, bn](TensorNode& self) {
            const size_t na_sz = an->data.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < na_sz; ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < bn->data.size(); ++i)
                    bn->grad[i] += self.grad[na_sz + i];
            }
        };
    }
    return finish(out);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_cols");
    require_rank(b, 2, "concat_cols");
    if (a.dim(0) != b.dim(0)) throw std::invalid_argument("concat_cols: row mismatch");
    const int n = a.dim(0), da = a.dim(1), db = b.dim(1);
    auto out = make_node({n, da + db}, "concat_cols");
    for (int i = 0; i < n; ++i) {
        std::copy(a.data() + static_cast<int64_t>(i) * da, a.data() + static_cast<int64_t>(i + 1) * da,
                  out->data.begin() + static_cast<int64_t>(i) * (da + db));
        std::copy(b.data() + static_cast<int64_t>(i) * db, b.data() + static_cast<int64_t>(i + 1) * db,
                  out->data.begin() + static_cast<int64_t>(i) * (da + db) + da);
    }
    if (wire(out, {&a, &b})) {
        auto an = a.handle();
        auto bn = b.handle();
        out->backward_fn = [an, bn, n, da, db](TensorNode& self) {
            for (int i = 0; i < n; ++i) {
                const double* g = self.grad.data() + static_cast<int64_t>(i) * (da + db);
                if (an->requires_grad) {
                    an->ensure_grad();
                    double* ga = an->grad.data() + static_cast<int64_t>(i) * da;
                    for (int j = 0; j < da; ++j) ga[j] += g[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    double* gb = bn->grad.data() + static_cast<int64_t>(i) * db;
                    for (int j = 0; j < db; ++j) gb[j] += g[da + j];
                }
            }
        };
    }
    return finish(out);
}

Tensor slice_rows(const Tensor& x, int start, int len) {
    require_rank(x, 2, "slice_rows");
    if (start < 0 || len < 1 || start + len > x.dim(0))
        throw std::invalid_argument("slice_rows: range out of bounds");
    const int d = x.dim(1);
    auto out = make_node({len, d}, "slice_rows");
    std::copy(x.data() + static_cast<int64_t>(start) * d,
              x.data() + static_cast<int64_t>(start + len) * d, out->data.begin());
    if (wire(out, {&x})) {
        auto xn = x.handle();
        out->backward_fn = [xn, start, d](TensorNode& self) {
            xn->ensure_grad();
            const int64_t off = static_cast<int64_t>(start) * d;
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[off + i] += self.grad[i];
        };
    }
    return finish(out);
}

Tensor slice_cols(const Tensor& x, int start, int len) {
    require_rank(x, 2, "slice_cols");
    if (start < 0 || len < 1 || start + len > x.dim(1))
        throw std::invalid_argument("slice_cols: range out of bounds");
    const int n = x.dim(0), d = x.dim(1);
    auto out = make_node({n, len}, "slice_cols");
    for (int i = 0; i < n; ++i)
        std::copy(x.data() + static_cast<int64_t>(i) * d + start,
                  x.data() + static_cast<int64_t>(i) * d + start + len,
                  out->data.begin() + static_cast<int64_t>(i) * len);
    if (wire(out, {&x})) {
        auto xn = x.handle();
        out->backward_fn = [xn, start, n, d, len](TensorNode& self) {
            xn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                double* gx = xn->grad.data() + static_cast<int64_t>(i) * d + start;
                const double* g = self.grad.data() + static_cast<int64_t>(i) * len;
                for (int j = 0; j < len; ++j) gx[j] += g[j];
            }
        };
    }
    return finish(out);
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    require_rank(x, 2, "gather_rows");
    if (idx.empty()) throw std::invalid_argument("gather_rows: empty index list");
    const int n = x.dim(0), d = x.dim(1);
    for (int i : idx)
        if (i < 0 || i >= n) throw std::invalid_argument("gather_rows: index out of range");
    auto out = make_node({static_cast<int>(idx.size()), d}, "gather_rows");
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(x.data() + static_cast<int64_t>(idx[r]) * d,
                  x.data() + static_cast<int64_t>(idx[r] + 1) * d,
                  out->data.begin() + static_cast<int64_t>(r) * d);
    if (wire(out, {&x})) {
        auto xn = x.handle();
        auto indices = idx;
        out->backward_fn = [xn, indices, d](TensorNode& self) {
            xn->ensure_grad();
            for (size_t r = 0; r < indices.size(); ++r) {
                double* gx = xn->grad.data() + static_cast<int64_t>(indices[r]) * d;
                const double* g = self.grad.data() + static_cast<int64_t>(r) * d;
                for (int j = 0; j < d; ++j) gx[j] += g[j];
            }
        };
    }
    return finish(out);
}

Tensor repeat_rows(const Tensor& x, int times) {
    require_rank(x, 2, "repeat_rows");
    if (times < 1) throw std::invalid_argument("repeat_rows: times must be >= 1");
    const int n = x.dim(0), d = x.dim(1);
    auto out = make_node({n * times, d}, "repeat_rows");
    for (int t = 0; t < times; ++t)
        std::copy(x.data(), x.data() + x.size(),
                  out->data.begin() + static_cast<int64_t>(t) * x.size());
    if (wire(out, {&x})) {
        auto xn = x.handle();
        out->backward_fn = [xn, times](TensorNode& self) {
            xn->ensure_grad();
            const size_t block = xn->data.size();
            for (int t = 0; t < times; ++t)
                for (size_t i = 0; i < block; ++i)
                    xn->grad[i] += self.grad[static_cast<size_t>(t) * block + i];
        };
    }
    return finish(out);
}

// ---------------------------------------------------------------------------
// model-specific structured ops
// ---------------------------------------------------------------------------

Tensor pool_segments(const Tensor& x) {
    require_rank(x, 2, "pool_segments");
    const int t = x.dim(0), d = x.dim(1);
    auto out = make_node({t * t, d}, "pool_segments");
    std::fill(out->data.begin(), out->data.end(), 0.0);
    for (int i = 0; i < t; ++i) {
        for (int j = i; j < t; ++j) {
            double* cell = out->data.data() + (static_cast<int64_t>(i) * t + j) * d;
            for (int r = i; r <= j; ++r) {
                const double* row = x.data() + static_cast<int64_t>(r) * d;
                for (int c = 0; c < d; ++c) cell[c] += row[c];
            }
            const double inv = 1.0 / (j - i + 1);
            for (int c = 0; c < d; ++c) cell[c] *= inv;
        }
    }
    if (wire(out, {&x})) {
        auto xn = x.handle();
        out->backward_fn = [xn, t, d](TensorNode& self) {
            xn->ensure_grad();
            for (int i = 0; i < t; ++i) {
                for (int j = i; j < t; ++j) {
                    const double inv = 1.0 / (j - i + 1);
                    const double* g = self.grad.data() + (static_cast<int64_t>(i) * t + j) * d;
                    for (int r = i; r <= j; ++r) {
                        double* gx = xn->grad.data() + static_cast<int64_t>(r) * d;
                        for (int c = 0; c < d; ++c) gx[c] += g[c] * inv;
                    }
                }
            }
        };
    }
    return finish(out);
}

Tensor segment_mean_rows(const Tensor& x, const std::vector<int>& sizes) {
    require_rank(x, 2, "segment_mean_rows");
    int total = 0;
    for (int s : sizes) {
        if (s < 0) throw std::invalid_argument("segment_mean_rows: negative segment size");
        total += s;
    }
    if (total != x.dim(0))
        throw std::invalid_argument("segment_mean_rows: sizes do not sum to row count");
    const int d = x.dim(1);
    const int k = static_cast<int>(sizes.size());
    auto out = make_node({k, d}, "segment_mean_rows");
    std::fill(out->data.begin(), out->data.end(), 0.0);
    int row = 0;
    for (int g = 0; g < k; ++g) {
        double* og = out->data.data() + static_cast<int64_t>(g) * d;
        for (int r = 0; r < sizes[g]; ++r, ++row) {
            const double* xr = x.data() + static_cast<int64_t>(row) * d;
            for (int c = 0; c < d; ++c) og[c] += xr[c];
        }
        if (sizes[g] > 0) {
            const double inv = 1.0 / sizes[g];
            for (int c = 0; c < d; ++c) og[c] *= inv;
        }
    }
    if (wire(out, {&x})) {
        auto xn = x.handle();
        auto sz = sizes;
        out->backward_fn = [xn, sz, d](TensorNode& self) {
            xn->ensure_grad();
            int row = 0;
            for (size_t g = 0; g < sz.size(); ++g) {
                if (sz[g] == 0) continue;
                const double inv = 1.0 / sz[g];
                const double* gg = self.grad.data() + static_cast<int64_t>(g) * d;
                for (int r = 0; r < sz[g]; ++r, ++row) {
                    double* gx = xn->grad.data() + static_cast<int64_t>(row) * d;
                    for (int c = 0; c < d; ++c) gx[c] += gg[c] * inv;
                }
            }
        };
    }
    return finish(out);
}

Tensor conv2d_grid(const Tensor& x, const Tensor& w, const Tensor& bias,
                   int grid_h, int grid_w, int kh, int kw) {
    require_rank(x, 2, "conv2d_grid");
    require_rank(w, 2, "conv2d_grid");
    require_rank(bias, 1, "conv2d_grid");
    if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d_grid: kernel must be odd");
    if (x.dim(0) != grid_h * grid_w) throw std::invalid_argument("conv2d_grid: grid size mismatch");
    const int cin = x.dim(1);
    const int cout = w.dim(0);
    if (w.dim(1) != cin * kh * kw) throw std::invalid_argument("conv2d_grid: weight shape mismatch");
    if (bias.dim(0) != cout) throw std::invalid_argument("conv2d_grid: bias length mismatch");

    const int ph = kh / 2, pw = kw / 2;
    auto out = make_node({grid_h * grid_w, cout}, "conv2d_grid");
    for (int gy = 0; gy < grid_h; ++gy) {
        for (int gx = 0; gx < grid_w; ++gx) {
            double* orow = out->data.data() + (static_cast<int64_t>(gy) * grid_w + gx) * cout;
            for (int oc = 0; oc < cout; ++oc) {
                double acc = bias.data()[oc];
                const double* wrow = w.data() + static_cast<int64_t>(oc) * cin * kh * kw;
                for (int dy = 0; dy < kh; ++dy) {
                    const int sy = gy + dy - ph;
                    if (sy < 0 || sy >= grid_h) continue;
                    for (int dx = 0; dx < kw; ++dx) {
                        const int sx = gx + dx - pw;
                        if (sx < 0 || sx >= grid_w) continue;
                        const double* xrow = x.data() + (static_cast<int64_t>(sy) * grid_w + sx) * cin;
                        const double* wtap = wrow + (static_cast<int64_t>(dy) * kw + dx) * cin;
                        for (int ic = 0; ic < cin; ++ic) acc += xrow[ic] * wtap[ic];
                    }
                }
                orow[oc] = acc;
            }
        }
    }
    if (wire(out, {&x, &w, &bias})) {
        auto xn = x.handle();
        auto wn = w.handle();
        auto bn = bias.handle();
        out->backward_fn = [xn, wn, bn, grid_h, grid_w, kh, kw, cin, cout, ph, pw](TensorNode& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int gy = 0; gy < grid_h; ++gy) {
                for (int gx = 0; gx < grid_w; ++gx) {
                    const double* grow = self.grad.data() + (static_cast<int64_t>(gy) * grid_w + gx) * cout;
                    for (int oc = 0; oc < cout; ++oc) {
                        const double g = grow[oc];
                        if (g == 0.0) continue;
                        if (bn->requires_grad) bn->grad[static_cast<size_t>(oc)] += g;
                        const double* wrow = wn->data.data() + static_cast<int64_t>(oc) * cin * kh * kw;
                        double* gwrow = wn->requires_grad
                                            ? wn->grad.data() + static_cast<int64_t>(oc) * cin * kh * kw
                                            : nullptr;
                        for (int dy = 0; dy < kh; ++dy) {
                            const int sy = gy + dy - ph;
                            if (sy < 0 || sy >= grid_h) continue;
                            for (int dx = 0; dx < kw; ++dx) {
                                const int sx = gx + dx - pw;
                                if (sx < 0 || sx >= grid_w) continue;
                                const int64_t xoff = (static_cast<int64_t>(sy) * grid_w + sx) * cin;
                                const int64_t woff = (static_cast<int64_t>(dy) * kw + dx) * cin;
                                for (int ic = 0; ic < cin; ++ic) {
                                    if (xn->requires_grad)
                                        xn->grad[xoff + ic] += g * wrow[woff + ic];
                                    if (gwrow) gwrow[woff + ic] += g * xn->data[xoff + ic];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return finish(out);
}

}  // namespace stvg
