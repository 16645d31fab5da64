#include "latentflow/nn.hpp"

#include <cmath>
#include <cstring>

#include "latentflow/bytes.hpp"
#include "latentflow/error.hpp"

namespace lf::nn {

ag::Var ParamSet::add(const std::string& name, ag::Shape shape, std::vector<double> values) {
    require(!contains(name), ErrorCode::invalid_argument, "duplicate parameter name " + name);
    ag::Var v = ag::Var::parameter(std::move(shape), std::move(values));
    items_.emplace_back(name, v);
    return v;
}

const ag::Var& ParamSet::get(const std::string& name) const {
    for (const auto& [n, v] : items_)
        if (n == name) return v;
    fail(ErrorCode::not_found, "no parameter named " + name);
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& item : items_)
        if (item.first == name) return true;
    return false;
}

std::size_t ParamSet::count() const {
    std::size_t n = 0;
    for (const auto& item : items_)
        if (item.second.requires_grad()) n += item.second.size();
    return n;
}

ag::Var ParamSet::add_buffer(const std::string& name, ag::Shape shape, std::vector<double> values) {
    require(!contains(name), ErrorCode::invalid_argument, "duplicate tensor name " + name);
    ag::Var v = ag::Var::constant(std::move(shape), std::move(values));
    items_.emplace_back(name, v);
    return v;
}

void ParamSet::zero_grad() {
    for (auto& item : items_) {
        auto& g = item.second.node()->grad;
        std::fill(g.begin(), g.end(), 0.0);
    }
}

std::uint64_t ParamSet::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<unsigned char> buf;
    for (const auto& [name, v] : items_) {
        buf.assign(name.begin(), name.end());
        for (int d : v.shape()) bytes::put_u32(buf, static_cast<std::uint32_t>(d));
        for (double x : v.value()) bytes::put_f64(buf, x);
        h = bytes::fnv1a(buf, h);
    }
    return h;
}

void ParamSet::absorb(const std::string& prefix, const ParamSet& other) {
    for (const auto& [name, v] : other.items_) {
        require(!contains(prefix + name), ErrorCode::invalid_argument, "duplicate parameter name " + prefix + name);
        items_.emplace_back(prefix + name, v);
    }
}

std::vector<double> Init::uniform(std::size_t n, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> out(n);
    for (double& x : out) x = static_cast<float>(dist(rng_));
    return out;
}

std::vector<double> Init::fan_in(std::size_t n, int fan_in) { return uniform(n, 1.0 / std::sqrt(static_cast<double>(fan_in))); }

Dense::Dense(ParamSet& ps, Init& init, const std::string& name, int in_, int out_, bool bias) : in(in_), out(out_) {
    w = ps.add(name + ".w", {out, in}, init.fan_in(static_cast<std::size_t>(out) * in, in));
    if (bias) b = ps.add(name + ".b", {out}, init.fan_in(static_cast<std::size_t>(out), in));
}

Conv2d::Conv2d(ParamSet& ps, Init& init, const std::string& name, int cin, int cout, ag::ConvGeom g_) : g(g_) {
    const int fan = cin * g.kh * g.kw;
    w = ps.add(name + ".w", {cout, cin, g.kh, g.kw}, init.fan_in(static_cast<std::size_t>(cout) * fan, fan));
    b = ps.add(name + ".b", {cout}, init.fan_in(static_cast<std::size_t>(cout), fan));
}

ConvT2d::ConvT2d(ParamSet& ps, Init& init, const std::string& name, int cin, int cout, ag::ConvGeom g_) : g(g_) {
    const int fan = cout * g.kh * g.kw;
    w = ps.add(name + ".w", {cin, cout, g.kh, g.kw}, init.fan_in(static_cast<std::size_t>(cin) * fan, fan));
    b = ps.add(name + ".b", {cout}, init.fan_in(static_cast<std::size_t>(cout), fan));
}

LayerNorm::LayerNorm(ParamSet& ps, const std::string& name, int dim) {
    gamma = ps.add(name + ".gamma", {dim}, std::vector<double>(dim, 1.0));
    beta = ps.add(name + ".beta", {dim}, std::vector<double>(dim, 0.0));
}

MultiHeadAttention::MultiHeadAttention(ParamSet& ps, Init& init, const std::string& name, int dim_, int heads_)
    : heads(heads_), dim(dim_) {
    require(heads > 0 && dim % heads == 0, ErrorCode::invalid_argument,
            "attention width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
    q = Dense(ps, init, name + ".q", dim, dim);
    k = Dense(ps, init, name + ".k", dim, dim);
    v = Dense(ps, init, name + ".v", dim, dim);
    o = Dense(ps, init, name + ".o", dim, dim);
}

namespace {

// [B, N, D] -> [B*H, N, D/H]
ag::Var split_heads(const ag::Var& x, int heads) {
    const int B = x.dim(0), N = x.dim(1), D = x.dim(2), dh = D / heads;
    return ag::reshape(ag::permute0213(ag::reshape(x, {B, N, heads, dh})), {B * heads, N, dh});
}

ag::Var merge_heads(const ag::Var& x, int batch, int heads) {
    const int N = x.dim(1), dh = x.dim(2);
    return ag::reshape(ag::permute0213(ag::reshape(x, {batch, heads, N, dh})), {batch, N, heads * dh});
}

}  // namespace

ag::Var MultiHeadAttention::operator()(const ag::Var& query, const ag::Var& memory) const {
    const int B = query.dim(0);
    const ag::Var qh = split_heads(q(query), heads);
    const ag::Var kh = split_heads(k(memory), heads);
    const ag::Var vh = split_heads(v(memory), heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim / heads));
    const ag::Var attn = ag::softmax_last(ag::scale(ag::bmm(qh, kh, true), scale));
    return o(merge_heads(ag::bmm(attn, vh), B, heads));
}

EncoderLayer::EncoderLayer(ParamSet& ps, Init& init, const std::string& name, int dim, int heads, int ff_dim) {
    attn = MultiHeadAttention(ps, init, name + ".attn", dim, heads);
    ff1 = Dense(ps, init, name + ".ff1", dim, ff_dim);
    ff2 = Dense(ps, init, name + ".ff2", ff_dim, dim);
    ln1 = LayerNorm(ps, name + ".ln1", dim);
    ln2 = LayerNorm(ps, name + ".ln2", dim);
}

ag::Var EncoderLayer::operator()(const ag::Var& x) const {
    const ag::Var h = ln1(ag::add(x, attn(x, x)));
    return ln2(ag::add(h, ff2(ag::relu(ff1(h)))));
}

DecoderLayer::DecoderLayer(ParamSet& ps, Init& init, const std::string& name, int dim, int heads, int ff_dim) {
    self_attn = MultiHeadAttention(ps, init, name + ".self", dim, heads);
    cross_attn = MultiHeadAttention(ps, init, name + ".cross", dim, heads);
    ff1 = Dense(ps, init, name + ".ff1", dim, ff_dim);
    ff2 = Dense(ps, init, name + ".ff2", ff_dim, dim);
    ln1 = LayerNorm(ps, name + ".ln1", dim);
    ln2 = LayerNorm(ps, name + ".ln2", dim);
    ln3 = LayerNorm(ps, name + ".ln3", dim);
}

ag::Var DecoderLayer::operator()(const ag::Var& x, const ag::Var& memory) const {
    const ag::Var h1 = ln1(ag::add(x, self_attn(x, x)));
    const ag::Var h2 = ln2(ag::add(h1, cross_attn(h1, memory)));
    return ln3(ag::add(h2, ff2(ag::relu(ff1(h2)))));
}

LstmLayer::LstmLayer(ParamSet& ps, Init& init, const std::string& name, int in, int hidden_) : hidden(hidden_) {
    ih = Dense(ps, init, name + ".ih", in, 4 * hidden);
    hh = Dense(ps, init, name + ".hh", hidden, 4 * hidden, false);
}

std::vector<ag::Var> LstmLayer::operator()(const std::vector<ag::Var>& rows) const {
    const int B = rows.at(0).dim(0);
    ag::Var h = ag::Var::zeros({B, hidden});
    ag::Var c = ag::Var::zeros({B, hidden});
    std::vector<ag::Var> out;
    out.reserve(rows.size());
    for (const ag::Var& x : rows) {
        const ag::Var gates = ag::add(ih(x), hh(h));
        const ag::Var i = ag::sigmoid(ag::slice_last(gates, 0, hidden));
        const ag::Var f = ag::sigmoid(ag::slice_last(gates, hidden, hidden));
        const ag::Var g = ag::tanh(ag::slice_last(gates, 2 * hidden, hidden));
        const ag::Var o = ag::sigmoid(ag::slice_last(gates, 3 * hidden, hidden));
        c = ag::add(ag::mul(f, c), ag::mul(i, g));
        h = ag::mul(o, ag::tanh(c));
        out.push_back(h);
    }
    return out;
}

Adam::Adam(const ParamSet& ps, double beta1, double beta2, double eps) : ps_(&ps), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& item : ps.items()) {
        m_.emplace_back(item.second.size(), 0.0);
        v_.emplace_back(item.second.size(), 0.0);
    }
}

void Adam::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const auto& items = ps_->items();
    for (std::size_t p = 0; p < items.size(); ++p) {
        ag::Node* n = items[p].second.node();
        if (n->grad.size() != n->value.size()) continue;
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < n->value.size(); ++i) {
            const double g = n->grad[i];
            m[i] = b1_ * m[i] + (1.0 - b1_) * g;
            v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
            double x = n->value[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            if (round_f32) x = static_cast<double>(static_cast<float>(x));
            n->value[i] = x;
        }
    }
}

void round_params_f32(ParamSet& ps) {
    for (auto& item : ps.items())
        for (double& x : item.second.node()->value) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace lf::nn
