#include "latentflow/lvm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentflow/error.hpp"

namespace lf {

LatentState inject_config(LatentState latent, double v_norm, double t_norm) {
    require(latent.c() >= 3, ErrorCode::invalid_argument, "latent dimension must be at least 3");
    latent.values[latent.values.size() - 2] = v_norm;
    latent.values[latent.values.size() - 1] = t_norm;
    return latent;
}

std::string to_string(LvmFamily f) {
    switch (f) {
        case LvmFamily::svd: return "svd";
        case LvmFamily::conv: return "conv";
        case LvmFamily::patch: return "patch";
    }
    return "?";
}

LvmFamily lvm_family_from_string(const std::string& s) {
    if (s == "svd") return LvmFamily::svd;
    if (s == "conv") return LvmFamily::conv;
    if (s == "patch" || s == "patch_transformer") return LvmFamily::patch;
    fail(ErrorCode::invalid_argument, "unknown LVM family '" + s + "'");
}

namespace {

std::vector<int> scaled(const std::vector<int>& ch, int divisor, bool keep_last) {
    require(divisor >= 1, ErrorCode::invalid_argument, "channel divisor must be >= 1");
    std::vector<int> out;
    for (std::size_t i = 0; i < ch.size(); ++i) {
        if (keep_last && i + 1 == ch.size())
            out.push_back(ch[i]);
        else
            out.push_back(std::max(1, ch[i] / divisor));
    }
    return out;
}

}  // namespace

std::vector<int> LvmSpec::scaled_enc_channels() const { return scaled(enc_channels, channel_divisor, false); }
std::vector<int> LvmSpec::scaled_dec_channels() const { return scaled(dec_channels, channel_divisor, true); }

ag::Var frames_to_var(std::span<const GridFrame* const> frames) {
    require(!frames.empty(), ErrorCode::invalid_argument, "empty frame batch");
    const int k = frames[0]->k;
    std::vector<double> data;
    data.reserve(frames.size() * static_cast<std::size_t>(k) * k);
    for (const GridFrame* f : frames) {
        require(f->k == k, ErrorCode::shape_mismatch, "frames in a batch must share k");
        data.insert(data.end(), f->values.begin(), f->values.end());
    }
    return ag::Var::constant({static_cast<int>(frames.size()), 1, k, k}, std::move(data));
}

LatentState Lvm::encode(const GridFrame& frame) const {
    require(frame.k == k_, ErrorCode::shape_mismatch,
            "frame has k=" + std::to_string(frame.k) + " but the LVM expects k=" + std::to_string(k_));
    ag::NoGradGuard guard;
    const GridFrame* f = &frame;
    return LatentState{encode(frames_to_var(std::span<const GridFrame* const>(&f, 1))).value()};
}

GridFrame Lvm::decode(const LatentState& latent, double cell_size) const {
    require(latent.c() == c(), ErrorCode::shape_mismatch,
            "latent has length " + std::to_string(latent.c()) + " but the LVM expects c=" + std::to_string(c()));
    ag::NoGradGuard guard;
    const ag::Var out = decode(ag::Var::constant({1, c()}, latent.values));
    GridFrame g(k_, 0.0, cell_size);
    g.values = out.value();
    return g;
}

// --- SVD ------------------------------------------------------------------

namespace {

using Columns = std::vector<std::vector<double>>;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Orthogonalizes the columns in place; applies the same rotations to `v`.
void one_sided_jacobi(Columns& cols, Columns* v) {
    const std::size_t n = cols.size();
    const double tol = 1e-15;
    for (int sweep = 0; sweep < 80; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = dot(cols[p], cols[p]);
                const double beta = dot(cols[q], cols[q]);
                if (alpha == 0.0 || beta == 0.0) continue;
                const double gamma = dot(cols[p], cols[q]);
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                auto rotate = [&](std::vector<double>& a, std::vector<double>& b) {
                    for (std::size_t i = 0; i < a.size(); ++i) {
                        const double x = a[i], y = b[i];
                        a[i] = cs * x - sn * y;
                        b[i] = sn * x + cs * y;
                    }
                };
                rotate(cols[p], cols[q]);
                if (v) rotate((*v)[p], (*v)[q]);
            }
        }
        if (!rotated) return;
    }
}

}  // namespace

void jacobi_svd(int m, int n, std::span<const double> a, std::vector<double>& sigma, std::vector<double>& u) {
    require(m > 0 && n > 0 && a.size() == static_cast<std::size_t>(m) * n, ErrorCode::invalid_argument,
            "jacobi_svd: matrix size mismatch");
    const int r = std::min(m, n);
    Columns left;  // left singular directions, unnormalized or normalized
    std::vector<double> norms;
    if (n <= m) {
        Columns cols(n, std::vector<double>(m));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) cols[j][i] = a[static_cast<std::size_t>(i) * n + j];
        one_sided_jacobi(cols, nullptr);
        for (auto& c : cols) norms.push_back(std::sqrt(dot(c, c)));
        left = std::move(cols);
        for (int j = 0; j < n; ++j)
            if (norms[j] > 0.0)
                for (double& x : left[j]) x /= norms[j];
    } else {
        // Work on A^T (n x m): A^T V = W S, so the accumulated V holds A's left vectors.
        Columns cols(m, std::vector<double>(n));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) cols[i][j] = a[static_cast<std::size_t>(i) * n + j];
        Columns v(m, std::vector<double>(m, 0.0));
        for (int i = 0; i < m; ++i) v[i][i] = 1.0;
        one_sided_jacobi(cols, &v);
        for (auto& c : cols) norms.push_back(std::sqrt(dot(c, c)));
        left = std::move(v);
    }
    std::vector<int> order(norms.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return norms[x] > norms[y]; });
    sigma.assign(r, 0.0);
    Columns basis;
    for (int j = 0; j < r; ++j) {
        sigma[j] = norms[order[j]];
        basis.push_back(left[order[j]]);
    }
    // With n <= m, columns with zero singular value carry no direction; complete
    // them to an orthonormal set with Gram-Schmidt over the standard basis.
    // The accumulated rotations of the n > m branch are orthonormal already.
    if (n <= m) {
        int next_unit = 0;
        for (int j = 0; j < r; ++j) {
            if (sigma[j] > 0.0) continue;
            while (true) {
                std::vector<double> e(m, 0.0);
                e.at(next_unit++) = 1.0;
                for (int i = 0; i < r; ++i) {
                    if (i == j || (i > j && sigma[i] == 0.0)) continue;
                    const double d = dot(e, basis[i]);
                    for (int t = 0; t < m; ++t) e[t] -= d * basis[i][t];
                }
                const double nrm = std::sqrt(dot(e, e));
                if (nrm > 1e-8) {
                    for (double& x : e) x /= nrm;
                    basis[j] = std::move(e);
                    break;
                }
            }
        }
    }
    if (n <= m) {
        // Re-orthogonalize in descending order so columns of tiny singular
        // value do not drift from orthonormality.
        for (int j = 0; j < r; ++j) {
            for (int i = 0; i < j; ++i) {
                const double d = dot(basis[j], basis[i]);
                for (int t = 0; t < m; ++t) basis[j][t] -= d * basis[i][t];
            }
            const double nrm = std::sqrt(dot(basis[j], basis[j]));
            for (double& x : basis[j]) x /= nrm;
        }
    }
    u.assign(static_cast<std::size_t>(m) * r, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < r; ++j) u[static_cast<std::size_t>(i) * r + j] = basis[j][i];
}

SvdLvm::SvdLvm(LvmSpec spec, int k, std::vector<double> basis, int rank, std::vector<double> singular_values,
               std::vector<double> mean)
    : Lvm(std::move(spec), k), rank_(rank) {
    const int n = k * k;
    const int c = spec_.c;
    require(rank >= 1 && (rank == c || (spec_.svd_reserve_slots && rank == c - 2)), ErrorCode::invalid_argument,
            "SVD rank does not match the latent dimension");
    require(basis.size() == static_cast<std::size_t>(n) * rank, ErrorCode::shape_mismatch, "SVD basis size");
    if (mean.empty()) mean.assign(n, 0.0);
    require(mean.size() == static_cast<std::size_t>(n), ErrorCode::shape_mismatch, "SVD mean size");
    std::vector<double> enc(static_cast<std::size_t>(c) * n, 0.0), dec(static_cast<std::size_t>(n) * c, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < rank; ++j) {
            enc[static_cast<std::size_t>(j) * n + i] = basis[static_cast<std::size_t>(i) * rank + j];
            dec[static_cast<std::size_t>(i) * c + j] = basis[static_cast<std::size_t>(i) * rank + j];
        }
    const int nsig = static_cast<int>(singular_values.size());
    basis_ = params_.add_buffer("basis", {n, rank}, std::move(basis));
    sigma_ = params_.add_buffer("singular_values", {nsig}, std::move(singular_values));
    mean_ = params_.add_buffer("mean", {n}, std::move(mean));
    basis_t_ = ag::Var::constant({c, n}, std::move(enc));
    decode_w_ = ag::Var::constant({n, c}, std::move(dec));
    neg_mean_ = ag::scale(mean_, -1.0);
}

ag::Var SvdLvm::encode(const ag::Var& frames) const {
    const int B = frames.dim(0);
    require(frames.size() == static_cast<std::size_t>(B) * k_ * k_, ErrorCode::shape_mismatch, "SVD encode: frame size");
    ag::Var x = ag::reshape(frames, {B, k_ * k_});
    if (spec_.svd_center) x = ag::add_broadcast(x, neg_mean_);
    return ag::linear(x, basis_t_, ag::Var());
}

ag::Var SvdLvm::decode(const ag::Var& latents) const {
    const int B = latents.dim(0);
    require(latents.dim(-1) == c(), ErrorCode::shape_mismatch, "SVD decode: latent length");
    ag::Var x = ag::linear(latents, decode_w_, ag::Var());
    if (spec_.svd_center) x = ag::add_broadcast(x, mean_);
    return ag::reshape(x, {B, 1, k_, k_});
}

std::unique_ptr<SvdLvm> svd_fit(std::span<const GridFrame> frames, int c, SvdFitOptions opts) {
    require(!frames.empty(), ErrorCode::invalid_argument, "svd_fit needs frames");
    const int k = frames[0].k;
    const int m = k * k;
    const int n = static_cast<int>(frames.size());
    const int rank = opts.reserve_slots ? c - 2 : c;
    require(rank >= 1 && rank <= std::min(m, n), ErrorCode::invalid_argument,
            "svd_fit: rank " + std::to_string(rank) + " exceeds min(k^2, frames) = " + std::to_string(std::min(m, n)));
    std::vector<double> mean(m, 0.0);
    if (opts.center) {
        for (const auto& f : frames)
            for (int i = 0; i < m; ++i) mean[i] += f.values[i];
        for (double& x : mean) x /= n;
    }
    std::vector<double> b(static_cast<std::size_t>(m) * n);
    for (int j = 0; j < n; ++j) {
        require(frames[j].k == k, ErrorCode::shape_mismatch, "svd_fit: frames must share k");
        for (int i = 0; i < m; ++i) b[static_cast<std::size_t>(i) * n + j] = frames[j].values[i] - mean[i];
    }
    std::vector<double> sigma, u;
    jacobi_svd(m, n, b, sigma, u);
    const int full = std::min(m, n);
    std::vector<double> basis(static_cast<std::size_t>(m) * rank);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < rank; ++j) basis[static_cast<std::size_t>(i) * rank + j] = u[static_cast<std::size_t>(i) * full + j];
    LvmSpec spec;
    spec.family = LvmFamily::svd;
    spec.c = c;
    spec.svd_center = opts.center;
    spec.svd_reserve_slots = opts.reserve_slots;
    return std::make_unique<SvdLvm>(spec, k, std::move(basis), rank, std::move(sigma),
                                    opts.center ? std::move(mean) : std::vector<double>{});
}

// --- conv -----------------------------------------------------------------

namespace {

constexpr ag::ConvGeom kStride2{3, 3, 2, 2, 1, 1};

}  // namespace

ConvLvm::ConvLvm(LvmSpec spec, int k) : Lvm(std::move(spec), k) {
    const auto enc = spec_.scaled_enc_channels();
    const auto dec = spec_.scaled_dec_channels();
    const int layers = static_cast<int>(enc.size());
    require(layers >= 1 && dec.size() == enc.size(), ErrorCode::invalid_argument,
            "conv LVM needs matching encoder/decoder layer counts");
    require(dec.back() == 1, ErrorCode::invalid_argument, "conv LVM decoder must end in one channel");
    require(k % (1 << layers) == 0, ErrorCode::invalid_argument,
            "k=" + std::to_string(k) + " is not divisible by " + std::to_string(1 << layers));
    require(spec_.c >= 3, ErrorCode::invalid_argument, "latent dimension must be at least 3");
    code_side_ = k >> layers;
    nn::Init init(spec_.seed);
    int cin = 1;
    for (int i = 0; i < layers; ++i) {
        enc_.emplace_back(params_, init, "enc.conv" + std::to_string(i), cin, enc[i], kStride2);
        cin = enc[i];
    }
    const int code = cin * code_side_ * code_side_;
    enc_dense_ = nn::Dense(params_, init, "enc.dense", code, spec_.c);
    dec_dense_ = nn::Dense(params_, init, "dec.dense", spec_.c, code);
    for (int i = 0; i < layers; ++i) {
        dec_.emplace_back(params_, init, "dec.convt" + std::to_string(i), cin, dec[i], kStride2);
        cin = dec[i];
    }
}

std::vector<int> ConvLvm::encoder_sizes() const {
    std::vector<int> out{k_};
    for (std::size_t i = 0; i < enc_.size(); ++i) out.push_back(out.back() / 2);
    return out;
}

ag::Var ConvLvm::encode(const ag::Var& frames) const {
    require(frames.shape().size() == 4 && frames.dim(1) == 1 && frames.dim(2) == k_ && frames.dim(3) == k_,
            ErrorCode::shape_mismatch, "conv LVM expects frames of shape [B, 1, k, k]");
    ag::Var x = frames;
    for (const auto& conv : enc_) x = ag::leaky_relu(conv(x), spec_.leaky_slope);
    x = ag::reshape(x, {x.dim(0), static_cast<int>(x.size() / x.dim(0))});
    return enc_dense_(x);
}

ag::Var ConvLvm::decode(const ag::Var& latents) const {
    require(latents.shape().size() == 2 && latents.dim(1) == c(), ErrorCode::shape_mismatch,
            "conv LVM expects latents of shape [B, c]");
    const int B = latents.dim(0);
    ag::Var x = ag::leaky_relu(dec_dense_(latents), spec_.leaky_slope);
    const int ch = enc_.back().w.dim(0);
    x = ag::reshape(x, {B, ch, code_side_, code_side_});
    int side = code_side_;
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        side *= 2;
        x = dec_[i](x, side, side);
        if (i + 1 < dec_.size()) x = ag::leaky_relu(x, spec_.leaky_slope);
    }
    return x;
}

std::unique_ptr<ConvLvm> build_conv_lvm(const LvmSpec& spec, int k) {
    LvmSpec s = spec;
    s.family = LvmFamily::conv;
    return std::make_unique<ConvLvm>(s, k);
}

// --- patch transformer ----------------------------------------------------

PatchLvm::PatchLvm(LvmSpec spec, int k) : Lvm(std::move(spec), k) {
    const int p = spec_.patch_size;
    require(p >= 1 && k % p == 0, ErrorCode::invalid_argument,
            "k=" + std::to_string(k) + " is not divisible by the patch size " + std::to_string(p));
    require(spec_.c >= 3, ErrorCode::invalid_argument, "latent dimension must be at least 3");
    require(spec_.layers >= 1, ErrorCode::invalid_argument, "patch LVM needs at least one layer");
    tokens_ = (k / p) * (k / p);
    const int d = spec_.c;
    const int ff = spec_.ff_dim > 0 ? spec_.ff_dim : 2 * d;
    nn::Init init(spec_.seed);
    embed_ = nn::Dense(params_, init, "embed", p * p, d);
    pos_ = params_.add("pos", {tokens_, d}, init.uniform(static_cast<std::size_t>(tokens_) * d, 0.1));
    query_ = params_.add("query", {1, 1, d}, init.uniform(static_cast<std::size_t>(d), 0.1));
    for (int i = 0; i < spec_.layers; ++i)
        encoder_.emplace_back(params_, init, "enc" + std::to_string(i), d, spec_.heads, ff);
    for (int i = 0; i < spec_.layers; ++i)
        decoder_.emplace_back(params_, init, "dec" + std::to_string(i), d, spec_.heads, ff);
    out_ = nn::Dense(params_, init, "out", d, k * k);
}

ag::Var PatchLvm::encode(const ag::Var& frames) const {
    require(frames.shape().size() == 4 && frames.dim(1) == 1 && frames.dim(2) == k_ && frames.dim(3) == k_,
            ErrorCode::shape_mismatch, "patch LVM expects frames of shape [B, 1, k, k]");
    const int B = frames.dim(0);
    ag::Var mem = ag::add_broadcast(embed_(ag::patchify(frames, spec_.patch_size)), pos_);
    for (const auto& layer : encoder_) mem = layer(mem);
    ag::Var q = ag::repeat_batch(query_, B);
    for (const auto& layer : decoder_) q = layer(q, mem);
    return ag::reshape(q, {B, c()});
}

ag::Var PatchLvm::decode(const ag::Var& latents) const {
    require(latents.shape().size() == 2 && latents.dim(1) == c(), ErrorCode::shape_mismatch,
            "patch LVM expects latents of shape [B, c]");
    return ag::reshape(out_(latents), {latents.dim(0), 1, k_, k_});
}

std::unique_ptr<PatchLvm> build_patch_lvm(const LvmSpec& spec, int k) {
    LvmSpec s = spec;
    s.family = LvmFamily::patch;
    return std::make_unique<PatchLvm>(s, k);
}

std::unique_ptr<Lvm> build_lvm(const LvmSpec& spec, int k, std::span<const GridFrame> frames) {
    switch (spec.family) {
        case LvmFamily::conv: return build_conv_lvm(spec, k);
        case LvmFamily::patch: return build_patch_lvm(spec, k);
        case LvmFamily::svd: {
            auto lvm = svd_fit(frames, spec.c, SvdFitOptions{spec.svd_center, spec.svd_reserve_slots});
            return lvm;
        }
    }
    fail(ErrorCode::invalid_argument, "unknown LVM family");
}

}  // namespace lf
