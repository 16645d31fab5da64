#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "latentflow/autograd.hpp"

/// Parameter containers, layers and the optimizer used by the neural models.
namespace lf::nn {

/// Named, ordered set of trainable tensors.
class ParamSet {
public:
    ag::Var add(const std::string& name, ag::Shape shape, std::vector<double> values);
    /// Non-trainable tensor stored alongside the parameters.
    ag::Var add_buffer(const std::string& name, ag::Shape shape, std::vector<double> values);
    const ag::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::pair<std::string, ag::Var>>& items() const { return items_; }
    std::size_t count() const;  ///< total scalar count of trainable tensors
    void zero_grad();
    /// FNV-1a over names, shapes and the raw bytes of every value.
    std::uint64_t checksum() const;
    /// Appends every parameter of `other` with a name prefix.
    void absorb(const std::string& prefix, const ParamSet& other);

private:
    std::vector<std::pair<std::string, ag::Var>> items_;
};

/// Seeded fan-in-scaled uniform initializer: U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// drawn values rounded to float32.
class Init {
public:
    explicit Init(std::uint64_t seed) : rng_(seed), seed_(seed) {}
    std::vector<double> uniform(std::size_t n, double bound);
    std::vector<double> fan_in(std::size_t n, int fan_in);
    std::uint64_t seed() const { return seed_; }

private:
    std::mt19937_64 rng_;
    std::uint64_t seed_ = 0;
};

struct Dense {
    ag::Var w, b;
    int in = 0, out = 0;
    Dense() = default;
    Dense(ParamSet& ps, Init& init, const std::string& name, int in, int out, bool bias = true);
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
};

struct Conv2d {
    ag::Var w, b;
    ag::ConvGeom g;
    Conv2d() = default;
    Conv2d(ParamSet& ps, Init& init, const std::string& name, int cin, int cout, ag::ConvGeom g);
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, g); }
};

/// Transposed convolution that doubles (stride 2) or preserves spatial size.
struct ConvT2d {
    ag::Var w, b;
    ag::ConvGeom g;
    ConvT2d() = default;
    ConvT2d(ParamSet& ps, Init& init, const std::string& name, int cin, int cout, ag::ConvGeom g);
    ag::Var operator()(const ag::Var& x, int out_h, int out_w) const {
        return ag::conv_transpose2d(x, w, b, g, out_h, out_w);
    }
};

struct LayerNorm {
    ag::Var gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamSet& ps, const std::string& name, int dim);
    ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

struct MultiHeadAttention {
    Dense q, k, v, o;
    int heads = 1, dim = 0;
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamSet& ps, Init& init, const std::string& name, int dim, int heads);
    /// query [B, Nq, D], memory [B, Nk, D] -> [B, Nq, D]
    ag::Var operator()(const ag::Var& query, const ag::Var& memory) const;
};

/// Post-norm transformer encoder layer with a ReLU feed-forward block.
struct EncoderLayer {
    MultiHeadAttention attn;
    Dense ff1, ff2;
    LayerNorm ln1, ln2;
    EncoderLayer() = default;
    EncoderLayer(ParamSet& ps, Init& init, const std::string& name, int dim, int heads, int ff_dim);
    ag::Var operator()(const ag::Var& x) const;
};

/// Post-norm transformer decoder layer (self attention, cross attention, feed-forward).
struct DecoderLayer {
    MultiHeadAttention self_attn, cross_attn;
    Dense ff1, ff2;
    LayerNorm ln1, ln2, ln3;
    DecoderLayer() = default;
    DecoderLayer(ParamSet& ps, Init& init, const std::string& name, int dim, int heads, int ff_dim);
    ag::Var operator()(const ag::Var& x, const ag::Var& memory) const;
};

/// One LSTM layer; gate order i, f, g, o.
struct LstmLayer {
    Dense ih, hh;
    int hidden = 0;
    LstmLayer() = default;
    LstmLayer(ParamSet& ps, Init& init, const std::string& name, int in, int hidden);
    /// Runs over rows [B, C] in order and returns the hidden state sequence.
    std::vector<ag::Var> operator()(const std::vector<ag::Var>& rows) const;
};

/// Adam with optional rounding of parameters to float32 after each step.
class Adam {
public:
    Adam(const ParamSet& ps, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(double lr);
    bool round_f32 = true;

private:
    const ParamSet* ps_;
    double b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Rounds every parameter value to the nearest float32.
void round_params_f32(ParamSet& ps);

}  // namespace lf::nn
