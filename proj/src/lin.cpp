#include "latentflow/lin.hpp"

#include <cmath>

#include "latentflow/error.hpp"

namespace lf {

std::string to_string(LinFamily f) {
    switch (f) {
        case LinFamily::linear: return "linear";
        case LinFamily::mlp: return "mlp";
        case LinFamily::arc: return "arc";
        case LinFamily::recurrent: return "recurrent";
        case LinFamily::transformer: return "transformer";
    }
    return "?";
}

LinFamily lin_family_from_string(const std::string& s) {
    if (s == "linear") return LinFamily::linear;
    if (s == "mlp") return LinFamily::mlp;
    if (s == "arc") return LinFamily::arc;
    if (s == "recurrent" || s == "lstm") return LinFamily::recurrent;
    if (s == "transformer") return LinFamily::transformer;
    fail(ErrorCode::invalid_argument, "unknown LIN family '" + s + "'");
}

ag::Var Lin::step(const std::vector<ag::Var>& rows) const {
    require(static_cast<int>(rows.size()) == spec_.s, ErrorCode::shape_mismatch,
            "LIN expects " + std::to_string(spec_.s) + " history rows, got " + std::to_string(rows.size()));
    return ag::add(rows.back(), forward(ag::stack_rows(rows)));
}

namespace {

void check_history(const ag::Var& h, const LinSpec& spec) {
    require(h.shape().size() == 3 && h.dim(1) == spec.s && h.dim(2) == spec.c, ErrorCode::shape_mismatch,
            "LIN history must be [B, " + std::to_string(spec.s) + ", " + std::to_string(spec.c) + "], got " +
                ag::shape_str(h.shape()));
}

class LinearLin : public Lin {
public:
    explicit LinearLin(LinSpec spec) : Lin(std::move(spec)) {
        nn::Init init(spec_.seed);
        dense_ = nn::Dense(params_, init, "dense", spec_.s * spec_.c, spec_.c);
    }
    ag::Var forward(const ag::Var& h) const override {
        check_history(h, spec_);
        return dense_(ag::reshape(h, {h.dim(0), spec_.s * spec_.c}));
    }

private:
    nn::Dense dense_;
};

class MlpLin : public Lin {
public:
    explicit MlpLin(LinSpec spec) : Lin(std::move(spec)) {
        nn::Init init(spec_.seed);
        int in = spec_.s * spec_.c;
        for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
            layers_.emplace_back(params_, init, "dense" + std::to_string(i), in, spec_.hidden[i]);
            in = spec_.hidden[i];
        }
        layers_.emplace_back(params_, init, "out", in, spec_.c);
    }
    ag::Var forward(const ag::Var& h) const override {
        check_history(h, spec_);
        ag::Var x = ag::reshape(h, {h.dim(0), spec_.s * spec_.c});
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i) x = ag::leaky_relu(layers_[i](x), spec_.leaky_slope);
        return layers_.back()(x);
    }

private:
    std::vector<nn::Dense> layers_;
};

// 1-D convolutions along time (kernel 3, padding 1) with the latent
// components as channels, then a learned weighting of the s time rows.
class ArcLin : public Lin {
public:
    explicit ArcLin(LinSpec spec) : Lin(std::move(spec)) {
        nn::Init init(spec_.seed);
        const ag::ConvGeom g{1, 3, 1, 1, 0, 1};
        int in = spec_.c;
        std::vector<int> channels = spec_.hidden;
        channels.push_back(spec_.c);
        for (std::size_t i = 0; i < channels.size(); ++i) {
            convs_.emplace_back(params_, init, "conv" + std::to_string(i), in, channels[i], g);
            in = channels[i];
        }
        mix_ = params_.add("mix", {1, spec_.s}, init.fan_in(static_cast<std::size_t>(spec_.s), spec_.s));
    }
    ag::Var forward(const ag::Var& h) const override {
        check_history(h, spec_);
        const int B = h.dim(0);
        ag::Var x = ag::reshape(ag::transpose12(h), {B, spec_.c, 1, spec_.s});
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            x = convs_[i](x);
            if (i + 1 < convs_.size()) x = ag::leaky_relu(x, spec_.leaky_slope);
        }
        x = ag::linear(ag::reshape(x, {B, spec_.c, spec_.s}), mix_, ag::Var());
        return ag::reshape(x, {B, spec_.c});
    }

private:
    std::vector<nn::Conv2d> convs_;
    ag::Var mix_;
};

class RecurrentLin : public Lin {
public:
    explicit RecurrentLin(LinSpec spec) : Lin(std::move(spec)) {
        require(!spec_.hidden.empty(), ErrorCode::invalid_argument, "recurrent LIN needs at least one layer");
        nn::Init init(spec_.seed);
        int in = spec_.c;
        for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
            lstm_.emplace_back(params_, init, "lstm" + std::to_string(i), in, spec_.hidden[i]);
            in = spec_.hidden[i];
        }
        out_ = nn::Dense(params_, init, "out", in, spec_.c);
    }
    ag::Var forward(const ag::Var& h) const override {
        check_history(h, spec_);
        std::vector<ag::Var> rows;
        for (int j = 0; j < spec_.s; ++j) rows.push_back(ag::select_row(h, j));
        for (const auto& layer : lstm_) rows = layer(rows);
        return out_(rows.back());
    }

private:
    std::vector<nn::LstmLayer> lstm_;
    nn::Dense out_;
};

// Encoder stack over the s rows with fixed sinusoidal positions; the newest
// row's output state feeds the dense head.
class TransformerLin : public Lin {
public:
    explicit TransformerLin(LinSpec spec) : Lin(std::move(spec)) {
        nn::Init init(spec_.seed);
        const int d = spec_.c;
        const int ff = spec_.ff_dim > 0 ? spec_.ff_dim : 2 * d;
        for (int i = 0; i < spec_.layers; ++i)
            layers_.emplace_back(params_, init, "enc" + std::to_string(i), d, spec_.heads, ff);
        out_ = nn::Dense(params_, init, "out", d, d);
        std::vector<double> pe(static_cast<std::size_t>(spec_.s) * d);
        for (int pos = 0; pos < spec_.s; ++pos)
            for (int i = 0; i < d; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
                pe[static_cast<std::size_t>(pos) * d + i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
            }
        pos_ = ag::Var::constant({spec_.s, d}, std::move(pe));
    }
    ag::Var forward(const ag::Var& h) const override {
        check_history(h, spec_);
        ag::Var x = ag::add_broadcast(h, pos_);
        for (const auto& layer : layers_) x = layer(x);
        return out_(ag::select_row(x, spec_.s - 1));
    }

private:
    std::vector<nn::EncoderLayer> layers_;
    nn::Dense out_;
    ag::Var pos_;
};

}  // namespace

std::unique_ptr<Lin> build_lin(const LinSpec& spec) {
    require(spec.s >= 1, ErrorCode::invalid_argument, "sequence length s must be >= 1");
    require(spec.c >= 3, ErrorCode::invalid_argument, "latent dimension must be at least 3");
    for (int h : spec.hidden) require(h >= 1, ErrorCode::invalid_argument, "hidden sizes must be >= 1");
    switch (spec.family) {
        case LinFamily::linear: return std::make_unique<LinearLin>(spec);
        case LinFamily::mlp: return std::make_unique<MlpLin>(spec);
        case LinFamily::arc: return std::make_unique<ArcLin>(spec);
        case LinFamily::recurrent: return std::make_unique<RecurrentLin>(spec);
        case LinFamily::transformer: return std::make_unique<TransformerLin>(spec);
    }
    fail(ErrorCode::invalid_argument, "unknown LIN family");
}

HistoryBuffer HistoryBuffer::start(int s, const LatentState& first) {
    HistoryBuffer b(s, first.c());
    b.push(first);
    return b;
}

void HistoryBuffer::push(const LatentState& latent) {
    require(latent.c() == c, ErrorCode::shape_mismatch, "latent length does not match the history buffer");
    std::copy(rows.begin() + c, rows.end(), rows.begin());
    std::copy(latent.values.begin(), latent.values.end(), rows.end() - c);
    if (filled < s) ++filled;
}

LatentState HistoryBuffer::row(int j) const {
    require(j >= 0 && j < s, ErrorCode::invalid_argument, "history row out of range");
    return LatentState{std::vector<double>(rows.begin() + static_cast<std::ptrdiff_t>(j) * c,
                                           rows.begin() + static_cast<std::ptrdiff_t>(j + 1) * c)};
}

LatentState HistoryBuffer::newest() const { return row(s - 1); }

std::vector<double> predict_delta(const Lin& lin, const HistoryBuffer& buffer) {
    require(buffer.s == lin.s() && buffer.c == lin.c(), ErrorCode::shape_mismatch,
            "history buffer shape does not match the LIN");
    ag::NoGradGuard guard;
    return lin.forward(ag::Var::constant({1, buffer.s, buffer.c}, buffer.rows)).value();
}

LatentState advance(const Lin& lin, HistoryBuffer& buffer, double v_norm, double t_norm_next) {
    const std::vector<double> delta = predict_delta(lin, buffer);
    LatentState next = buffer.newest();
    for (int i = 0; i < buffer.c; ++i) next.values[i] += delta[i];
    next = inject_config(std::move(next), v_norm, t_norm_next);
    buffer.push(next);
    return next;
}

}  // namespace lf
