#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latentflow/autograd.hpp"
#include "latentflow/field.hpp"
#include "latentflow/nn.hpp"

namespace lf {

/// Length-c latent vector; the last two entries hold normalized (v, t).
struct LatentState {
    std::vector<double> values;
    int c() const { return static_cast<int>(values.size()); }
    friend bool operator==(const LatentState&, const LatentState&) = default;
};

/// Overwrites the two config slots.
LatentState inject_config(LatentState latent, double v_norm, double t_norm);

enum class LvmFamily { svd, conv, patch };

std::string to_string(LvmFamily f);
LvmFamily lvm_family_from_string(const std::string& s);

struct LvmSpec {
    LvmFamily family = LvmFamily::conv;
    int c = 64;
    // conv
    std::vector<int> enc_channels{128, 256, 512, 1024};
    std::vector<int> dec_channels{512, 256, 128, 1};
    int channel_divisor = 16;
    double leaky_slope = 0.2;
    // patch transformer
    int patch_size = 16;
    int layers = 3;
    int heads = 8;
    int ff_dim = 0;  ///< 0 means 2c
    // svd
    bool svd_center = false;
    /// Fit c-2 basis vectors and keep the config slots out of the projection.
    bool svd_reserve_slots = true;
    std::uint64_t seed = 1;

    /// Channel counts after applying the divisor (the final decoder channel stays 1).
    std::vector<int> scaled_enc_channels() const;
    std::vector<int> scaled_dec_channels() const;
};

/// Encoder/decoder pair. The graph-level encode/decode operate on batches
/// and are differentiable; the frame-level overloads run without recording.
class Lvm {
public:
    Lvm(LvmSpec spec, int k) : spec_(std::move(spec)), k_(k) {}
    virtual ~Lvm() = default;

    const LvmSpec& spec() const { return spec_; }
    LvmFamily family() const { return spec_.family; }
    int k() const { return k_; }
    int c() const { return spec_.c; }

    /// [B, 1, k, k] -> [B, c]
    virtual ag::Var encode(const ag::Var& frames) const = 0;
    /// [B, c] -> [B, 1, k, k]
    virtual ag::Var decode(const ag::Var& latents) const = 0;

    LatentState encode(const GridFrame& frame) const;
    GridFrame decode(const LatentState& latent, double cell_size = 1.0) const;

    /// All stored tensors (trainable parameters and fixed buffers).
    nn::ParamSet& tensors() { return params_; }
    const nn::ParamSet& tensors() const { return params_; }
    std::size_t param_count() const { return params_.count(); }

protected:
    LvmSpec spec_;
    int k_;
    nn::ParamSet params_;
};

/// Truncated-SVD LVM. `basis` holds the retained left singular vectors as
/// columns of a k^2 x r row-major matrix.
class SvdLvm : public Lvm {
public:
    SvdLvm(LvmSpec spec, int k, std::vector<double> basis, int rank, std::vector<double> singular_values,
           std::vector<double> mean);

    ag::Var encode(const ag::Var& frames) const override;
    ag::Var decode(const ag::Var& latents) const override;
    using Lvm::decode;
    using Lvm::encode;

    int rank() const { return rank_; }
    const std::vector<double>& basis() const { return basis_.value(); }
    /// Every singular value of the fitted matrix, descending.
    const std::vector<double>& singular_values() const { return sigma_.value(); }
    const std::vector<double>& mean() const { return mean_.value(); }

private:
    int rank_;
    ag::Var basis_;     // [k^2, r]
    ag::Var basis_t_;   // [c, k^2], zero rows for reserved slots
    ag::Var decode_w_;  // [k^2, c]
    ag::Var sigma_;
    ag::Var mean_;      // [k^2]
    ag::Var neg_mean_;
};

/// Strided-convolution autoencoder: 4 stride-2 convolutions and a dense map
/// to R^c; a dense map back and 4 stride-2 transposed convolutions.
class ConvLvm : public Lvm {
public:
    ConvLvm(LvmSpec spec, int k);
    ag::Var encode(const ag::Var& frames) const override;
    ag::Var decode(const ag::Var& latents) const override;
    using Lvm::decode;
    using Lvm::encode;

    /// Spatial side length after each encoder convolution.
    std::vector<int> encoder_sizes() const;

private:
    std::vector<nn::Conv2d> enc_;
    nn::Dense enc_dense_, dec_dense_;
    std::vector<nn::ConvT2d> dec_;
    int code_side_ = 0;
};

/// Patch-transformer autoencoder. The encoder output state of a learnable
/// query token is the latent; the decoder maps it linearly to the frame.
class PatchLvm : public Lvm {
public:
    PatchLvm(LvmSpec spec, int k);
    ag::Var encode(const ag::Var& frames) const override;
    ag::Var decode(const ag::Var& latents) const override;
    using Lvm::decode;
    using Lvm::encode;

    int tokens() const { return tokens_; }

private:
    int tokens_;
    nn::Dense embed_;
    ag::Var pos_;    // [tokens, c]
    ag::Var query_;  // [1, 1, c]
    std::vector<nn::EncoderLayer> encoder_;
    std::vector<nn::DecoderLayer> decoder_;
    nn::Dense out_;
};

struct SvdFitOptions {
    bool center = false;
    bool reserve_slots = false;
};

/// Closed-form fit. With reserve_slots the basis has rank c-2 and the latent
/// keeps two zero config slots. Throws when the rank exceeds min(k^2, n).
std::unique_ptr<SvdLvm> svd_fit(std::span<const GridFrame> frames, int c, SvdFitOptions opts = {});

/// Singular values (descending) and left singular vectors of an m x n
/// row-major matrix via one-sided Jacobi rotations. `u` receives m x min(m,n)
/// row-major with columns ordered like the singular values.
void jacobi_svd(int m, int n, std::span<const double> a, std::vector<double>& sigma, std::vector<double>& u);

std::unique_ptr<ConvLvm> build_conv_lvm(const LvmSpec& spec, int k);
std::unique_ptr<PatchLvm> build_patch_lvm(const LvmSpec& spec, int k);

/// Builds an untrained neural LVM, or an SVD LVM fitted to `frames`.
std::unique_ptr<Lvm> build_lvm(const LvmSpec& spec, int k, std::span<const GridFrame> frames = {});

/// Packs frames [B, 1, k, k].
ag::Var frames_to_var(std::span<const GridFrame* const> frames);

}  // namespace lf
