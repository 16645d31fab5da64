#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "latentflow/error.hpp"
#include "latentflow/lin.hpp"

using namespace lf;

namespace {

/// LIN returning a fixed delta regardless of its input.
class ConstantLin : public Lin {
public:
    ConstantLin(LinSpec spec, std::vector<double> delta) : Lin(std::move(spec)), delta_(std::move(delta)) {}
    ag::Var forward(const ag::Var& h) const override {
        const int B = h.dim(0);
        std::vector<double> v;
        for (int b = 0; b < B; ++b) v.insert(v.end(), delta_.begin(), delta_.end());
        return ag::Var::constant({B, c()}, v);
    }

private:
    std::vector<double> delta_;
};

LatentState random_latent(int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    LatentState l;
    for (int i = 0; i < c; ++i) l.values.push_back(u(rng));
    return l;
}

void zero_all(Lin& lin) {
    for (auto& [name, var] : lin.tensors().items()) {
        ag::Var v = var;
        std::fill(v.mutable_value().begin(), v.mutable_value().end(), 0.0);
    }
}

LinSpec spec_for(LinFamily f, int c, int s) {
    LinSpec spec;
    spec.family = f;
    spec.c = c;
    spec.s = s;
    spec.heads = 4;
    spec.layers = 2;
    spec.hidden = f == LinFamily::mlp ? std::vector<int>{32, 32} : std::vector<int>{16, 16};
    return spec;
}

constexpr LinFamily kAll[] = {LinFamily::linear, LinFamily::mlp, LinFamily::arc, LinFamily::recurrent,
                              LinFamily::transformer};

}  // namespace

TEST_CASE("parameter counts follow dense-layer arithmetic") {
    LinSpec mlp;
    mlp.c = 64;
    mlp.s = 1;
    mlp.hidden = {128, 128, 128};
    CHECK(build_lin(mlp)->param_count() == 64 * 128 + 128 + 128 * 128 + 128 + 128 * 128 + 128 + 128 * 64 + 64);
    CHECK(build_lin(mlp)->param_count() == 49600);
    LinSpec lin;
    lin.family = LinFamily::linear;
    lin.c = 64;
    lin.s = 1;
    CHECK(build_lin(lin)->param_count() == 4160);
}

TEST_CASE("every family: zero weights give zero delta, outputs deterministic and finite") {
    const int c = 16, s = 3;
    HistoryBuffer buf(s, c);
    for (int i = 0; i < s; ++i) buf.push(random_latent(c, 10 + static_cast<std::uint64_t>(i)));
    for (LinFamily f : kAll) {
        CAPTURE(to_string(f));
        auto lin = build_lin(spec_for(f, c, s));
        const auto d1 = predict_delta(*lin, buf);
        CHECK(d1 == predict_delta(*lin, buf));
        REQUIRE(d1.size() == static_cast<std::size_t>(c));
        for (double v : d1) CHECK(std::isfinite(v));
        zero_all(*lin);
        for (double v : predict_delta(*lin, buf)) CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(lin_family_from_string("gru"), Error);
}

TEST_CASE("linear LIN matches a hand matrix multiply") {
    LinSpec spec;
    spec.family = LinFamily::linear;
    spec.c = 5;
    spec.s = 1;
    auto lin = build_lin(spec);
    const auto& w = lin->tensors().get("dense.w").value();
    const auto& b = lin->tensors().get("dense.b").value();
    const auto l = random_latent(5, 3);
    const auto delta = predict_delta(*lin, HistoryBuffer::start(1, l));
    for (int i = 0; i < 5; ++i) {
        double expect = b[static_cast<std::size_t>(i)];
        for (int j = 0; j < 5; ++j) expect += w[static_cast<std::size_t>(i) * 5 + j] * l.values[static_cast<std::size_t>(j)];
        CHECK(delta[static_cast<std::size_t>(i)] == doctest::Approx(expect).epsilon(1e-13));
    }
}

TEST_CASE("history buffer: zero padding, shift and newest row") {
    const auto l1 = random_latent(4, 1);
    auto buf = HistoryBuffer::start(3, l1);
    CHECK(buf.filled == 1);
    CHECK(buf.row(0).values == std::vector<double>(4, 0.0));
    CHECK(buf.row(1).values == std::vector<double>(4, 0.0));
    CHECK(buf.row(2) == l1);
    CHECK(buf.newest() == l1);
    const auto l2 = random_latent(4, 2);
    buf.push(l2);
    CHECK(buf.row(1) == l1);
    CHECK(buf.row(2) == l2);
    CHECK(buf.filled == 2);
    CHECK_THROWS_AS(buf.push(random_latent(5, 1)), Error);
}

TEST_CASE("advance: zero LIN only updates config slots") {
    for (LinFamily f : kAll) {
        auto spec = spec_for(f, 6, 2);
        spec.heads = 2;
        auto lin = build_lin(spec);
        zero_all(*lin);
        const auto l1 = inject_config(random_latent(6, 4), 0.4, 0.01);
        auto buf = HistoryBuffer::start(2, l1);
        const auto next = advance(*lin, buf, 0.4, 0.02);
        for (int i = 0; i < 4; ++i) CHECK(next.values[static_cast<std::size_t>(i)] == l1.values[static_cast<std::size_t>(i)]);
        CHECK(next.values[4] == 0.4);
        CHECK(next.values[5] == 0.02);
        CHECK(buf.newest() == next);
        CHECK(buf.row(0) == l1);
    }
}

TEST_CASE("advance: constant delta gives a closed-form trajectory, slots stay authoritative") {
    const int c = 7, s = 3;
    std::vector<double> delta{0.1, -0.2, 0.05, 0.3, 0.0, 50.0, -50.0};
    LinSpec spec;
    spec.c = c;
    spec.s = s;
    ConstantLin lin(spec, delta);
    const auto l1 = inject_config(random_latent(c, 9), 0.25, 0.0);
    auto buf = HistoryBuffer::start(s, l1);
    for (int n = 1; n <= 20; ++n) {
        const auto before = buf;
        const double t_next = n / 20.0;
        const auto next = advance(lin, buf, 0.25, t_next);
        for (int i = 0; i < c - 2; ++i)
            CHECK(next.values[static_cast<std::size_t>(i)] ==
                  doctest::Approx(l1.values[static_cast<std::size_t>(i)] + n * delta[static_cast<std::size_t>(i)]).epsilon(1e-12));
        CHECK(next.values[c - 2] == 0.25);
        CHECK(next.values[c - 1] == t_next);
        for (int j = 0; j + 1 < s; ++j) CHECK(buf.row(j) == before.row(j + 1));
    }
}

TEST_CASE("families are interchangeable on identical buffers; shape errors are reported") {
    HistoryBuffer buf(4, 8);
    buf.push(random_latent(8, 1));
    for (LinFamily f : kAll) CHECK(predict_delta(*build_lin(spec_for(f, 8, 4)), buf).size() == 8u);
    auto wrong = build_lin(spec_for(LinFamily::mlp, 8, 2));
    CHECK_THROWS_AS(predict_delta(*wrong, buf), Error);
    LinSpec bad;
    bad.s = 0;
    CHECK_THROWS_AS(build_lin(bad), Error);
}
