#pragma once

#include <memory>
#include <string>
#include <vector>

#include "latentflow/autograd.hpp"
#include "latentflow/lvm.hpp"
#include "latentflow/nn.hpp"

namespace lf {

enum class LinFamily { linear, mlp, arc, recurrent, transformer };

std::string to_string(LinFamily f);
LinFamily lin_family_from_string(const std::string& s);

struct LinSpec {
    LinFamily family = LinFamily::mlp;
    int c = 64;
    int s = 1;
    /// Hidden sizes: MLP layers, ARC channels, or LSTM layer widths.
    std::vector<int> hidden{128, 128, 128};
    int layers = 6;   ///< transformer encoder layers
    int heads = 8;
    int ff_dim = 0;   ///< transformer feed-forward width, 0 means 2c
    double leaky_slope = 0.2;
    std::uint64_t seed = 1;
};

/// Latent integration network: maps a history [B, s, c] to a delta [B, c].
class Lin {
public:
    explicit Lin(LinSpec spec) : spec_(std::move(spec)) {}
    virtual ~Lin() = default;

    const LinSpec& spec() const { return spec_; }
    int c() const { return spec_.c; }
    int s() const { return spec_.s; }

    virtual ag::Var forward(const ag::Var& history) const = 0;

    /// Next latent from history rows (oldest first, each [B, c]): the newest
    /// row plus the predicted delta. Config slots are not touched.
    ag::Var step(const std::vector<ag::Var>& rows) const;

    nn::ParamSet& tensors() { return params_; }
    const nn::ParamSet& tensors() const { return params_; }
    std::size_t param_count() const { return params_.count(); }

protected:
    LinSpec spec_;
    nn::ParamSet params_;
};

std::unique_ptr<Lin> build_lin(const LinSpec& spec);

/// Zero-padded window of the s most recent latents, oldest row first.
struct HistoryBuffer {
    int s = 1;
    int c = 0;
    std::vector<double> rows;  ///< s x c, row-major
    int filled = 0;

    HistoryBuffer(int s_, int c_) : s(s_), c(c_), rows(static_cast<std::size_t>(s_) * c_, 0.0) {}
    /// Buffer holding only `first` as its newest row.
    static HistoryBuffer start(int s, const LatentState& first);

    void push(const LatentState& latent);
    LatentState newest() const;
    LatentState row(int j) const;
};

std::vector<double> predict_delta(const Lin& lin, const HistoryBuffer& buffer);

/// next = newest + delta with config slots set to (v_norm, t_norm_next);
/// the buffer shifts by one and receives `next`.
LatentState advance(const Lin& lin, HistoryBuffer& buffer, double v_norm, double t_norm_next);

}  // namespace lf
