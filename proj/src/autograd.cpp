#include "latentflow/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "latentflow/error.hpp"

namespace lf::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Var make(Shape shape, std::vector<double> value, std::initializer_list<Var> parents,
         std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const Var& p : parents) any = any || (p.defined() && p.requires_grad());
        if (any) {
            n->requires_grad = true;
            for (const Var& p : parents)
                if (p.defined() && p.requires_grad()) n->parents.push_back(p.ptr());
            n->backward = std::move(bw);
        }
    }
    return Var(std::move(n));
}

// Gradient buffer of a parent, or nullptr when it does not need one.
double* gbuf(const Var& v) { return v.defined() && v.requires_grad() ? v.node()->ensure_grad().data() : nullptr; }

void check(bool cond, const std::string& what) { require(cond, ErrorCode::shape_mismatch, what); }

void same_shape(const Var& a, const Var& b, const char* op) {
    check(a.shape() == b.shape(), std::string(op) + ": shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

struct ConvDims {
    int batch, cin, h, w, ho, wo;
    ConvGeom g;
    int kk() const { return g.kh * g.kw; }
    int hw_out() const { return ho * wo; }
};

// col[(ci*kh + i)*kw + j, b*ho*wo + p] = x[b, ci, oy*sh - ph + i, ox*sw - pw + j]
void im2col(const double* x, const ConvDims& d, double* col) {
    const int cols = d.batch * d.hw_out();
    for (int ci = 0; ci < d.cin; ++ci) {
        for (int i = 0; i < d.g.kh; ++i) {
            for (int j = 0; j < d.g.kw; ++j) {
                double* row = col + static_cast<std::size_t>((ci * d.g.kh + i) * d.g.kw + j) * cols;
                for (int b = 0; b < d.batch; ++b) {
                    const double* xb = x + (static_cast<std::size_t>(b) * d.cin + ci) * d.h * d.w;
                    double* out = row + static_cast<std::size_t>(b) * d.hw_out();
                    for (int oy = 0; oy < d.ho; ++oy) {
                        const int y = oy * d.g.sh - d.g.ph + i;
                        for (int ox = 0; ox < d.wo; ++ox) {
                            const int xx = ox * d.g.sw - d.g.pw + j;
                            out[oy * d.wo + ox] = (y >= 0 && y < d.h && xx >= 0 && xx < d.w) ? xb[y * d.w + xx] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const ConvDims& d, double* x) {
    const int cols = d.batch * d.hw_out();
    for (int ci = 0; ci < d.cin; ++ci) {
        for (int i = 0; i < d.g.kh; ++i) {
            for (int j = 0; j < d.g.kw; ++j) {
                const double* row = col + static_cast<std::size_t>((ci * d.g.kh + i) * d.g.kw + j) * cols;
                for (int b = 0; b < d.batch; ++b) {
                    double* xb = x + (static_cast<std::size_t>(b) * d.cin + ci) * d.h * d.w;
                    const double* in = row + static_cast<std::size_t>(b) * d.hw_out();
                    for (int oy = 0; oy < d.ho; ++oy) {
                        const int y = oy * d.g.sh - d.g.ph + i;
                        if (y < 0 || y >= d.h) continue;
                        for (int ox = 0; ox < d.wo; ++ox) {
                            const int xx = ox * d.g.sw - d.g.pw + j;
                            if (xx >= 0 && xx < d.w) xb[y * d.w + xx] += in[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

// [B, C, P] <-> [C, B*P]
void to_channel_major(const double* x, int batch, int ch, int p, double* out) {
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c)
            std::copy_n(x + (static_cast<std::size_t>(b) * ch + c) * p, p,
                        out + static_cast<std::size_t>(c) * batch * p + static_cast<std::size_t>(b) * p);
}

void from_channel_major(const double* x, int batch, int ch, int p, double* out, bool accumulate) {
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c) {
            const double* src = x + static_cast<std::size_t>(c) * batch * p + static_cast<std::size_t>(b) * p;
            double* dst = out + (static_cast<std::size_t>(b) * ch + c) * p;
            if (accumulate)
                for (int i = 0; i < p; ++i) dst[i] += src[i];
            else
                std::copy_n(src, p, dst);
        }
}

}  // namespace

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream o;
    o << '[';
    for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
    o << ']';
    return o.str();
}

Var Var::constant(Shape shape, std::vector<double> values) {
    check(numel(shape) == values.size(), "constant: value count does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Var(std::move(n));
}

Var Var::zeros(Shape shape) {
    const std::size_t n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Var Var::parameter(Shape shape, std::vector<double> values) {
    Var v = constant(std::move(shape), std::move(values));
    v.node()->requires_grad = true;
    return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& root) {
    require(root.size() == 1, ErrorCode::invalid_argument, "backward requires a scalar root");
    if (!root.requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, const double* b, double beta,
          double* c) {
    Eigen::Map<RowMat> C(c, m, n);
    if (beta == 0.0)
        C.setZero();
    else if (beta != 1.0)
        C *= beta;
    if (m == 0 || n == 0 || k == 0) return;
    if (!trans_a && !trans_b)
        C.noalias() += alpha * Eigen::Map<const RowMat>(a, m, k) * Eigen::Map<const RowMat>(b, k, n);
    else if (trans_a && !trans_b)
        C.noalias() += alpha * Eigen::Map<const RowMat>(a, k, m).transpose() * Eigen::Map<const RowMat>(b, k, n);
    else if (!trans_a && trans_b)
        C.noalias() += alpha * Eigen::Map<const RowMat>(a, m, k) * Eigen::Map<const RowMat>(b, n, k).transpose();
    else
        C.noalias() +=
            alpha * Eigen::Map<const RowMat>(a, k, m).transpose() * Eigen::Map<const RowMat>(b, n, k).transpose();
}

// --- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
    same_shape(a, b, "add");
    std::vector<double> out(a.value());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
        for (const Var* p : {&a, &b})
            if (double* g = gbuf(*p))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Var sub(const Var& a, const Var& b) {
    same_shape(a, b, "sub");
    std::vector<double> out(a.value());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
        if (double* g = gbuf(a))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = gbuf(b))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    same_shape(a, b, "mul");
    std::vector<double> out(a.value());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
        if (double* g = gbuf(a))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * b.value()[i];
        if (double* g = gbuf(b))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * a.value()[i];
    });
}

Var scale(const Var& a, double s) {
    std::vector<double> out(a.value());
    for (double& v : out) v *= s;
    return make(a.shape(), std::move(out), {a}, [a, s](Node& self) {
        double* g = gbuf(a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var leaky_relu(const Var& x, double slope) {
    std::vector<double> out(x.value());
    for (double& v : out)
        if (v < 0.0) v *= slope;
    return make(x.shape(), std::move(out), {x}, [x, slope](Node& self) {
        double* g = gbuf(x);
        const auto& xv = x.value();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += xv[i] > 0.0 ? self.grad[i] : slope * self.grad[i];
    });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

Var tanh(const Var& x) {
    std::vector<double> out(x.value());
    for (double& v : out) v = std::tanh(v);
    return make(x.shape(), std::move(out), {x}, [x](Node& self) {
        double* g = gbuf(x);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    });
}

Var sigmoid(const Var& x) {
    std::vector<double> out(x.value());
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
    return make(x.shape(), std::move(out), {x}, [x](Node& self) {
        double* g = gbuf(x);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
    });
}

// --- shape ----------------------------------------------------------------

Var reshape(const Var& x, Shape shape) {
    check(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    return make(std::move(shape), x.value(), {x}, [x](Node& self) {
        double* g = gbuf(x);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Var transpose12(const Var& x) {
    check(x.shape().size() == 3, "transpose12 expects a rank-3 tensor");
    const int B = x.dim(0), N = x.dim(1), D = x.dim(2);
    std::vector<double> out(x.size());
    const auto& v = x.value();
    for (int b = 0; b < B; ++b)
        for (int n = 0; n < N; ++n)
            for (int d = 0; d < D; ++d)
                out[(static_cast<std::size_t>(b) * D + d) * N + n] = v[(static_cast<std::size_t>(b) * N + n) * D + d];
    return make({B, D, N}, std::move(out), {x}, [x, B, N, D](Node& self) {
        double* g = gbuf(x);
        for (int b = 0; b < B; ++b)
            for (int n = 0; n < N; ++n)
                for (int d = 0; d < D; ++d)
                    g[(static_cast<std::size_t>(b) * N + n) * D + d] +=
                        self.grad[(static_cast<std::size_t>(b) * D + d) * N + n];
    });
}

Var permute0213(const Var& x) {
    check(x.shape().size() == 4, "permute0213 expects a rank-4 tensor");
    const int B = x.dim(0), A = x.dim(1), C = x.dim(2), D = x.dim(3);
    std::vector<double> out(x.size());
    const auto& v = x.value();
    auto src = [&](int b, int a, int c) { return ((static_cast<std::size_t>(b) * A + a) * C + c) * D; };
    auto dst = [&](int b, int a, int c) { return ((static_cast<std::size_t>(b) * C + c) * A + a) * D; };
    for (int b = 0; b < B; ++b)
        for (int a = 0; a < A; ++a)
            for (int c = 0; c < C; ++c) std::copy_n(v.data() + src(b, a, c), D, out.data() + dst(b, a, c));
    return make({B, C, A, D}, std::move(out), {x}, [x, B, A, C, D](Node& self) {
        double* g = gbuf(x);
        for (int b = 0; b < B; ++b)
            for (int a = 0; a < A; ++a)
                for (int c = 0; c < C; ++c) {
                    const double* s = self.grad.data() + ((static_cast<std::size_t>(b) * C + c) * A + a) * D;
                    double* t = g + ((static_cast<std::size_t>(b) * A + a) * C + c) * D;
                    for (int d = 0; d < D; ++d) t[d] += s[d];
                }
    });
}

Var stack_rows(const std::vector<Var>& rows) {
    check(!rows.empty(), "stack_rows of nothing");
    const int B = rows[0].dim(0), C = rows[0].dim(1);
    const int S = static_cast<int>(rows.size());
    std::vector<double> out(static_cast<std::size_t>(B) * S * C);
    for (int j = 0; j < S; ++j) {
        check(rows[j].shape() == rows[0].shape(), "stack_rows: mismatched rows");
        for (int b = 0; b < B; ++b)
            std::copy_n(rows[j].value().data() + static_cast<std::size_t>(b) * C, C,
                        out.data() + (static_cast<std::size_t>(b) * S + j) * C);
    }
    auto n = std::make_shared<Node>();
    n->shape = {B, S, C};
    n->value = std::move(out);
    if (g_grad_enabled) {
        for (const Var& r : rows)
            if (r.requires_grad()) n->parents.push_back(r.ptr());
        if (!n->parents.empty()) {
            n->requires_grad = true;
            n->backward = [rows, B, S, C](Node& self) {
                for (int j = 0; j < S; ++j) {
                    double* g = gbuf(rows[j]);
                    if (!g) continue;
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c)
                            g[static_cast<std::size_t>(b) * C + c] += self.grad[(static_cast<std::size_t>(b) * S + j) * C + c];
                }
            };
        }
    }
    return Var(std::move(n));
}

Var select_row(const Var& x, int j) {
    check(x.shape().size() == 3 && j >= 0 && j < x.dim(1), "select_row: bad index");
    const int B = x.dim(0), S = x.dim(1), C = x.dim(2);
    std::vector<double> out(static_cast<std::size_t>(B) * C);
    for (int b = 0; b < B; ++b)
        std::copy_n(x.value().data() + (static_cast<std::size_t>(b) * S + j) * C, C, out.data() + static_cast<std::size_t>(b) * C);
    return make({B, C}, std::move(out), {x}, [x, j, B, S, C](Node& self) {
        double* g = gbuf(x);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) g[(static_cast<std::size_t>(b) * S + j) * C + c] += self.grad[static_cast<std::size_t>(b) * C + c];
    });
}

Var slice_last(const Var& x, int start, int len) {
    const int D = x.dim(-1);
    check(start >= 0 && len > 0 && start + len <= D, "slice_last: range out of bounds");
    const std::size_t rows = x.size() / D;
    std::vector<double> out(rows * len);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.value().data() + r * D + start, len, out.data() + r * len);
    Shape shape = x.shape();
    shape.back() = len;
    return make(std::move(shape), std::move(out), {x}, [x, start, len, D, rows](Node& self) {
        double* g = gbuf(x);
        for (std::size_t r = 0; r < rows; ++r)
            for (int i = 0; i < len; ++i) g[r * D + start + i] += self.grad[r * len + i];
    });
}

Var repeat_batch(const Var& x, int n) {
    check(!x.shape().empty() && x.dim(0) == 1, "repeat_batch expects a leading dimension of 1");
    Shape shape = x.shape();
    shape[0] = n;
    std::vector<double> out;
    out.reserve(x.size() * n);
    for (int i = 0; i < n; ++i) out.insert(out.end(), x.value().begin(), x.value().end());
    return make(std::move(shape), std::move(out), {x}, [x, n](Node& self) {
        double* g = gbuf(x);
        const std::size_t m = x.size();
        for (int i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
    });
}

Var add_broadcast(const Var& x, const Var& p) {
    check(x.shape().size() == p.shape().size() + 1 && Shape(x.shape().begin() + 1, x.shape().end()) == p.shape(),
          "add_broadcast: " + shape_str(x.shape()) + " + " + shape_str(p.shape()));
    const std::size_t m = p.size();
    const std::size_t B = x.size() / m;
    std::vector<double> out(x.value());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < m; ++j) out[b * m + j] += p.value()[j];
    return make(x.shape(), std::move(out), {x, p}, [x, p, m, B](Node& self) {
        if (double* g = gbuf(x))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = gbuf(p))
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[b * m + j];
    });
}

Var inject_slots(const Var& x, const std::vector<double>& slots) {
    check(x.shape().size() == 2 && x.dim(1) >= 2, "inject_slots expects [B, C] with C >= 2");
    const int B = x.dim(0), C = x.dim(1);
    check(slots.size() == static_cast<std::size_t>(B) * 2, "inject_slots: need two slot values per row");
    std::vector<double> out(x.value());
    for (int b = 0; b < B; ++b) {
        out[static_cast<std::size_t>(b) * C + C - 2] = slots[2 * b];
        out[static_cast<std::size_t>(b) * C + C - 1] = slots[2 * b + 1];
    }
    return make(x.shape(), std::move(out), {x}, [x, B, C](Node& self) {
        double* g = gbuf(x);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C - 2; ++c) g[static_cast<std::size_t>(b) * C + c] += self.grad[static_cast<std::size_t>(b) * C + c];
    });
}

Var patchify(const Var& x, int patch) {
    check(x.shape().size() == 4 && x.dim(1) == 1 && x.dim(2) == x.dim(3) && x.dim(2) % patch == 0,
          "patchify expects [B, 1, k, k] with k divisible by the patch size");
    const int B = x.dim(0), k = x.dim(2), g = k / patch, P = patch * patch;
    auto index = [=](int b, int pr, int pc, int i, int j) {
        return static_cast<std::size_t>(b) * k * k + static_cast<std::size_t>(pr * patch + i) * k + (pc * patch + j);
    };
    std::vector<double> out(x.size());
    for (int b = 0; b < B; ++b)
        for (int pr = 0; pr < g; ++pr)
            for (int pc = 0; pc < g; ++pc)
                for (int i = 0; i < patch; ++i)
                    for (int j = 0; j < patch; ++j)
                        out[(static_cast<std::size_t>(b) * g * g + pr * g + pc) * P + i * patch + j] =
                            x.value()[index(b, pr, pc, i, j)];
    return make({B, g * g, P}, std::move(out), {x}, [x, B, g, P, patch, index](Node& self) {
        double* gr = gbuf(x);
        for (int b = 0; b < B; ++b)
            for (int pr = 0; pr < g; ++pr)
                for (int pc = 0; pc < g; ++pc)
                    for (int i = 0; i < patch; ++i)
                        for (int j = 0; j < patch; ++j)
                            gr[index(b, pr, pc, i, j)] +=
                                self.grad[(static_cast<std::size_t>(b) * g * g + pr * g + pc) * P + i * patch + j];
    });
}

// --- linear algebra -------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
    check(w.shape().size() == 2, "linear: weight must be rank 2");
    const int out_f = w.dim(0), in_f = w.dim(1);
    check(x.dim(-1) == in_f, "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    check(!b.defined() || b.size() == static_cast<std::size_t>(out_f), "linear: bias size");
    const int rows = static_cast<int>(x.size() / in_f);
    std::vector<double> out(static_cast<std::size_t>(rows) * out_f);
    gemm(false, true, rows, out_f, in_f, 1.0, x.value().data(), w.value().data(), 0.0, out.data());
    if (b.defined())
        for (int r = 0; r < rows; ++r)
            for (int o = 0; o < out_f; ++o) out[static_cast<std::size_t>(r) * out_f + o] += b.value()[o];
    Shape shape = x.shape();
    shape.back() = out_f;
    return make(std::move(shape), std::move(out), {x, w, b}, [x, w, b, rows, in_f, out_f](Node& self) {
        const double* dy = self.grad.data();
        if (double* gx = gbuf(x)) gemm(false, false, rows, in_f, out_f, 1.0, dy, w.value().data(), 1.0, gx);
        if (double* gw = gbuf(w)) gemm(true, false, out_f, in_f, rows, 1.0, dy, x.value().data(), 1.0, gw);
        if (double* gb = gbuf(b))
            for (int r = 0; r < rows; ++r)
                for (int o = 0; o < out_f; ++o) gb[o] += dy[static_cast<std::size_t>(r) * out_f + o];
    });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
    check(a.shape().size() == 3 && b.shape().size() == 3 && a.dim(0) == b.dim(0), "bmm expects rank-3 operands");
    const int B = a.dim(0), M = a.dim(1), K = a.dim(2);
    const int N = transpose_b ? b.dim(1) : b.dim(2);
    check((transpose_b ? b.dim(2) : b.dim(1)) == K, "bmm: inner dimensions differ");
    std::vector<double> out(static_cast<std::size_t>(B) * M * N);
    const std::size_t sa = static_cast<std::size_t>(M) * K, sb = static_cast<std::size_t>(K) * N,
                      sc = static_cast<std::size_t>(M) * N;
    for (int i = 0; i < B; ++i)
        gemm(false, transpose_b, M, N, K, 1.0, a.value().data() + i * sa, b.value().data() + i * sb, 0.0,
             out.data() + i * sc);
    return make({B, M, N}, std::move(out), {a, b}, [a, b, transpose_b, B, M, N, K, sa, sb, sc](Node& self) {
        double* ga = gbuf(a);
        double* gb = gbuf(b);
        for (int i = 0; i < B; ++i) {
            const double* dc = self.grad.data() + i * sc;
            // a: [M,K]; b: [K,N] or [N,K]
            if (ga) gemm(false, !transpose_b, M, K, N, 1.0, dc, b.value().data() + i * sb, 1.0, ga + i * sa);
            if (gb) {
                if (transpose_b)
                    gemm(true, false, N, K, M, 1.0, dc, a.value().data() + i * sa, 1.0, gb + i * sb);
                else
                    gemm(true, false, K, N, M, 1.0, a.value().data() + i * sa, dc, 1.0, gb + i * sb);
            }
        }
    });
}

Var softmax_last(const Var& x) {
    const int D = x.dim(-1);
    const std::size_t rows = x.size() / D;
    std::vector<double> out(x.value());
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data() + r * D;
        const double mx = *std::max_element(row, row + D);
        double s = 0.0;
        for (int i = 0; i < D; ++i) s += row[i] = std::exp(row[i] - mx);
        for (int i = 0; i < D; ++i) row[i] /= s;
    }
    return make(x.shape(), std::move(out), {x}, [x, D, rows](Node& self) {
        double* g = gbuf(x);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * D;
            const double* dy = self.grad.data() + r * D;
            double dot = 0.0;
            for (int i = 0; i < D; ++i) dot += y[i] * dy[i];
            for (int i = 0; i < D; ++i) g[r * D + i] += y[i] * (dy[i] - dot);
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int D = x.dim(-1);
    check(gamma.size() == static_cast<std::size_t>(D) && beta.size() == static_cast<std::size_t>(D), "layer_norm: affine size");
    const std::size_t rows = x.size() / D;
    std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.value().data() + r * D;
        double mu = 0.0;
        for (int i = 0; i < D; ++i) mu += xr[i];
        mu /= D;
        double var = 0.0;
        for (int i = 0; i < D; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= D;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < D; ++i) {
            xhat[r * D + i] = (xr[i] - mu) * inv_std[r];
            out[r * D + i] = gamma.value()[i] * xhat[r * D + i] + beta.value()[i];
        }
    }
    return make(x.shape(), std::move(out), {x, gamma, beta},
                [x, gamma, beta, D, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                    double* gx = gbuf(x);
                    double* gg = gbuf(gamma);
                    double* gbt = gbuf(beta);
                    std::vector<double> dxhat(static_cast<std::size_t>(D));
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double* dy = self.grad.data() + r * D;
                        const double* xh = xhat.data() + r * D;
                        double m1 = 0.0, m2 = 0.0;
                        for (int i = 0; i < D; ++i) {
                            if (gg) gg[i] += dy[i] * xh[i];
                            if (gbt) gbt[i] += dy[i];
                            dxhat[i] = dy[i] * gamma.value()[i];
                            m1 += dxhat[i];
                            m2 += dxhat[i] * xh[i];
                        }
                        m1 /= D;
                        m2 /= D;
                        if (gx)
                            for (int i = 0; i < D; ++i) gx[r * D + i] += inv_std[r] * (dxhat[i] - m1 - xh[i] * m2);
                    }
                });
}

Var conv2d(const Var& x, const Var& w, const Var& b, ConvGeom g) {
    check(x.shape().size() == 4 && w.shape().size() == 4, "conv2d expects rank-4 input and weight");
    check(w.dim(1) == x.dim(1) && w.dim(2) == g.kh && w.dim(3) == g.kw,
          "conv2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0, g};
    d.ho = (d.h + 2 * g.ph - g.kh) / g.sh + 1;
    d.wo = (d.w + 2 * g.pw - g.kw) / g.sw + 1;
    check(d.ho > 0 && d.wo > 0, "conv2d: empty output");
    const int cout = w.dim(0);
    const int rows = d.cin * d.kk();
    const int cols = d.batch * d.hw_out();
    std::vector<double> col(static_cast<std::size_t>(rows) * cols);
    im2col(x.value().data(), d, col.data());
    std::vector<double> tmp(static_cast<std::size_t>(cout) * cols);
    gemm(false, false, cout, cols, rows, 1.0, w.value().data(), col.data(), 0.0, tmp.data());
    if (b.defined())
        for (int c = 0; c < cout; ++c)
            for (int i = 0; i < cols; ++i) tmp[static_cast<std::size_t>(c) * cols + i] += b.value()[c];
    std::vector<double> out(tmp.size());
    from_channel_major(tmp.data(), d.batch, cout, d.hw_out(), out.data(), false);
    if (!g_grad_enabled) col.clear();
    return make({d.batch, cout, d.ho, d.wo}, std::move(out), {x, w, b},
                [x, w, b, d, cout, rows, cols, col = std::move(col)](Node& self) {
                    std::vector<double> dy(self.grad.size());
                    to_channel_major(self.grad.data(), d.batch, cout, d.hw_out(), dy.data());
                    if (double* gw = gbuf(w)) gemm(false, true, cout, rows, cols, 1.0, dy.data(), col.data(), 1.0, gw);
                    if (double* gb = gbuf(b))
                        for (int c = 0; c < cout; ++c)
                            for (int i = 0; i < cols; ++i) gb[c] += dy[static_cast<std::size_t>(c) * cols + i];
                    if (double* gx = gbuf(x)) {
                        std::vector<double> dcol(static_cast<std::size_t>(rows) * cols);
                        gemm(true, false, rows, cols, cout, 1.0, w.value().data(), dy.data(), 0.0, dcol.data());
                        col2im(dcol.data(), d, gx);
                    }
                });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, ConvGeom g, int out_h, int out_w) {
    check(x.shape().size() == 4 && w.shape().size() == 4, "conv_transpose2d expects rank-4 input and weight");
    check(w.dim(0) == x.dim(1) && w.dim(2) == g.kh && w.dim(3) == g.kw,
          "conv_transpose2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(1);
    // Geometry of the forward convolution this operator is the adjoint of.
    ConvDims d{batch, cout, out_h, out_w, 0, 0, g};
    d.ho = (out_h + 2 * g.ph - g.kh) / g.sh + 1;
    d.wo = (out_w + 2 * g.pw - g.kw) / g.sw + 1;
    check(d.ho == h && d.wo == wd, "conv_transpose2d: output size inconsistent with input");
    const int rows = cout * d.kk();
    const int cols = batch * h * wd;
    std::vector<double> xt(static_cast<std::size_t>(cin) * cols);
    to_channel_major(x.value().data(), batch, cin, h * wd, xt.data());
    std::vector<double> col(static_cast<std::size_t>(rows) * cols);
    gemm(true, false, rows, cols, cin, 1.0, w.value().data(), xt.data(), 0.0, col.data());
    std::vector<double> out(static_cast<std::size_t>(batch) * cout * out_h * out_w, 0.0);
    col2im(col.data(), d, out.data());
    if (b.defined())
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < cout; ++c) {
                double* o = out.data() + (static_cast<std::size_t>(n) * cout + c) * out_h * out_w;
                for (int i = 0; i < out_h * out_w; ++i) o[i] += b.value()[c];
            }
    if (!g_grad_enabled) xt.clear();
    return make({batch, cout, out_h, out_w}, std::move(out), {x, w, b},
                [x, w, b, d, cin, cout, rows, cols, h, wd, xt = std::move(xt)](Node& self) {
                    std::vector<double> dcol(static_cast<std::size_t>(rows) * cols);
                    im2col(self.grad.data(), d, dcol.data());
                    if (double* gw = gbuf(w)) gemm(false, true, cin, rows, cols, 1.0, xt.data(), dcol.data(), 1.0, gw);
                    if (double* gb = gbuf(b)) {
                        const int p = d.h * d.w;
                        for (int n = 0; n < d.batch; ++n)
                            for (int c = 0; c < cout; ++c) {
                                const double* gr = self.grad.data() + (static_cast<std::size_t>(n) * cout + c) * p;
                                for (int i = 0; i < p; ++i) gb[c] += gr[i];
                            }
                    }
                    if (double* gx = gbuf(x)) {
                        std::vector<double> dxt(static_cast<std::size_t>(cin) * cols);
                        gemm(false, false, cin, cols, rows, 1.0, w.value().data(), dcol.data(), 0.0, dxt.data());
                        from_channel_major(dxt.data(), d.batch, cin, h * wd, gx, true);
                    }
                });
}

// --- reductions and losses ------------------------------------------------

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value()) s += v;
    return make({1}, {s}, {x}, [x](Node& self) {
        double* g = gbuf(x);
        for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[0];
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var relative_error_loss(const Var& pred, const Var& target) {
    check(pred.size() == target.size() && !pred.shape().empty() && pred.dim(0) == target.dim(0),
          "relative_error_loss: shapes " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const int B = pred.dim(0);
    const std::size_t n = pred.size() / B;
    std::vector<double> num(B), den(B);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = pred.value()[b * n + i] - target.value()[b * n + i];
            s1 += d * d;
            s2 += target.value()[b * n + i] * target.value()[b * n + i];
        }
        require(s2 > 0.0, ErrorCode::invalid_argument, "relative error against a zero-norm target");
        num[b] = std::sqrt(s1);
        den[b] = std::sqrt(s2);
        total += num[b] / den[b];
    }
    return make({1}, {total / B}, {pred}, [pred, target, B, n, num, den](Node& self) {
        double* g = gbuf(pred);
        for (int b = 0; b < B; ++b) {
            if (num[b] == 0.0) continue;
            const double f = self.grad[0] / (B * num[b] * den[b]);
            for (std::size_t i = 0; i < n; ++i) g[b * n + i] += f * (pred.value()[b * n + i] - target.value()[b * n + i]);
        }
    });
}

Var rmse_loss(const Var& pred, const Var& target) {
    check(pred.size() == target.size() && !pred.shape().empty() && pred.dim(0) == target.dim(0),
          "rmse_loss: shapes " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const int B = pred.dim(0);
    const std::size_t n = pred.size() / B;
    std::vector<double> r(B);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = pred.value()[b * n + i] - target.value()[b * n + i];
            s += d * d;
        }
        r[b] = std::sqrt(s / n);
        total += r[b];
    }
    return make({1}, {total / B}, {pred}, [pred, target, B, n, r](Node& self) {
        double* g = gbuf(pred);
        for (int b = 0; b < B; ++b) {
            if (r[b] == 0.0) continue;
            const double f = self.grad[0] / (B * n * r[b]);
            for (std::size_t i = 0; i < n; ++i) g[b * n + i] += f * (pred.value()[b * n + i] - target.value()[b * n + i]);
        }
    });
}

}  // namespace lf::ag
