#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "latentflow/autograd.hpp"
#include "latentflow/nn.hpp"

using namespace lf;
using ag::Var;

namespace {

std::vector<double> randu(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

// Random linear functional of x, so every output entry matters.
Var probe(const Var& x, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ag::sum(ag::mul(x, Var::constant(x.shape(), randu(x.size(), rng))));
}

struct Fixture {
    std::mt19937_64 rng{7};
    nn::ParamSet ps;
    Var p(const std::string& name, ag::Shape s, double lo = -1.0, double hi = 1.0) {
        return ps.add(name, s, randu(ag::numel(s), rng, lo, hi));
    }
    void check(const std::function<Var()>& f, double tol = 1e-6) {
        const auto r = test::gradcheck(ps, f, 200, 11);
        INFO("max rel err " << r.max_rel_err << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
        CHECK(r.max_rel_err < tol);
    }
};

}  // namespace

TEST_CASE("elementwise ops have correct gradients") {
    Fixture f;
    Var a = f.p("a", {3, 4}), b = f.p("b", {3, 4});
    f.check([&] { return probe(ag::add(ag::mul(a, b), ag::sub(a, ag::scale(b, 0.3))), 1); });
    f.check([&] { return probe(ag::tanh(a), 2); });
    f.check([&] { return probe(ag::sigmoid(b), 3); });
    f.check([&] { return probe(ag::leaky_relu(a, 0.2), 4); });
}

TEST_CASE("shape ops have correct gradients") {
    Fixture f;
    Var x = f.p("x", {2, 3, 4});
    Var y = f.p("y", {2, 3, 4, 5});
    Var r = f.p("r", {1, 3, 4});
    Var img = f.p("img", {2, 1, 8, 8});
    f.check([&] { return probe(ag::transpose12(x), 5); });
    f.check([&] { return probe(ag::permute0213(y), 6); });
    f.check([&] { return probe(ag::select_row(x, 1), 7); });
    f.check([&] { return probe(ag::slice_last(x, 1, 2), 8); });
    f.check([&] { return probe(ag::repeat_batch(r, 3), 9); });
    f.check([&] { return probe(ag::add_broadcast(x, ag::reshape(r, {3, 4})), 10); });
    f.check([&] { return probe(ag::stack_rows({ag::select_row(x, 0), ag::select_row(x, 2)}), 11); });
    f.check([&] { return probe(ag::inject_slots(ag::select_row(x, 0), {0.1, 0.2, 0.3, 0.4}), 12); });
    f.check([&] { return probe(ag::patchify(img, 4), 13); });
}

TEST_CASE("inject_slots blocks gradient to the overwritten entries") {
    Var x = Var::parameter({1, 4}, {1, 2, 3, 4});
    ag::backward(ag::sum(ag::inject_slots(x, {9, 9})));
    CHECK(x.grad() == std::vector<double>{1, 1, 0, 0});
}

TEST_CASE("linear algebra ops have correct gradients") {
    Fixture f;
    Var x = f.p("x", {2, 3, 5}), w = f.p("w", {4, 5}), b = f.p("b", {4});
    Var q = f.p("q", {2, 3, 6}), k = f.p("k", {2, 4, 6}), kt = f.p("kt", {2, 6, 4});
    Var g = f.p("g", {5}, 0.5, 1.5), be = f.p("be", {5});
    f.check([&] { return probe(ag::linear(x, w, b), 14); });
    f.check([&] { return probe(ag::linear(x, w, Var()), 15); });
    f.check([&] { return probe(ag::bmm(q, k, true), 16); });
    f.check([&] { return probe(ag::bmm(q, kt), 17); });
    f.check([&] { return probe(ag::softmax_last(x), 18); });
    f.check([&] { return probe(ag::layer_norm(x, g, be), 19); }, 1e-5);
}

TEST_CASE("convolutions have correct gradients") {
    Fixture f;
    Var x = f.p("x", {2, 3, 8, 8}), w = f.p("w", {4, 3, 3, 3}), b = f.p("b", {4});
    Var xt = f.p("xt", {2, 4, 4, 4}), wt = f.p("wt", {4, 2, 3, 3}), bt = f.p("bt", {2});
    const ag::ConvGeom s2{3, 3, 2, 2, 1, 1};
    const ag::ConvGeom s1{1, 3, 1, 1, 0, 1};
    Var w1 = f.p("w1", {4, 3, 1, 3});
    f.check([&] { return probe(ag::conv2d(x, w, b, s2), 20); });
    f.check([&] { return probe(ag::conv2d(x, w1, b, s1), 21); });
    f.check([&] { return probe(ag::conv_transpose2d(xt, wt, bt, s2, 8, 8), 22); });
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    std::mt19937_64 rng(3);
    const ag::ConvGeom g{3, 3, 2, 2, 1, 1};
    Var w = Var::constant({5, 2, 3, 3}, randu(90, rng));
    Var x = Var::constant({1, 2, 8, 8}, randu(128, rng));
    Var y = Var::constant({1, 5, 4, 4}, randu(80, rng));
    // <conv(x), y> == <x, convT(y)> with the same weight tensor.
    const double lhs = ag::sum(ag::mul(ag::conv2d(x, w, Var(), g), y)).item();
    const double rhs = ag::sum(ag::mul(x, ag::conv_transpose2d(y, w, Var(), g, 8, 8))).item();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv2d matches a direct loop") {
    std::mt19937_64 rng(4);
    const ag::ConvGeom g{3, 3, 2, 2, 1, 1};
    Var x = Var::constant({1, 2, 6, 6}, randu(72, rng));
    Var w = Var::constant({3, 2, 3, 3}, randu(54, rng));
    Var b = Var::constant({3}, randu(3, rng));
    const Var y = ag::conv2d(x, w, b, g);
    REQUIRE(y.shape() == ag::Shape{1, 3, 3, 3});
    for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < 3; ++oy)
            for (int ox = 0; ox < 3; ++ox) {
                double s = b.value()[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            const int yy = oy * 2 - 1 + i, xx = ox * 2 - 1 + j;
                            if (yy < 0 || yy >= 6 || xx < 0 || xx >= 6) continue;
                            s += w.value()[((co * 2 + ci) * 3 + i) * 3 + j] * x.value()[(ci * 6 + yy) * 6 + xx];
                        }
                CHECK(y.value()[(co * 3 + oy) * 3 + ox] == doctest::Approx(s).epsilon(1e-13));
            }
}

TEST_CASE("losses have correct values and gradients") {
    Var p = Var::constant({1, 2}, {3, 4});
    Var t = Var::constant({1, 2}, {0, 4});
    CHECK(ag::relative_error_loss(p, t).item() == doctest::Approx(0.75));
    CHECK(ag::rmse_loss(Var::constant({1, 2}, {2, 0}), Var::constant({1, 2}, {0, 0})).item() ==
          doctest::Approx(std::sqrt(2.0)));
    Fixture f;
    Var x = f.p("x", {3, 7});
    std::mt19937_64 rng(5);
    Var target = Var::constant({3, 7}, randu(21, rng));
    f.check([&] { return ag::relative_error_loss(x, target); });
    f.check([&] { return ag::rmse_loss(x, target); });
}

TEST_CASE("layers compose with correct gradients") {
    Fixture f;
    nn::Init init(1);
    nn::EncoderLayer enc(f.ps, init, "enc", 8, 2, 16);
    nn::DecoderLayer dec(f.ps, init, "dec", 8, 2, 16);
    nn::LstmLayer lstm(f.ps, init, "lstm", 8, 5);
    std::mt19937_64 rng(9);
    Var x = Var::constant({2, 3, 8}, randu(48, rng));
    Var q = Var::constant({2, 1, 8}, randu(16, rng));
    f.check([&] { return probe(dec(q, enc(x)), 30); }, 1e-5);
    f.check([&] {
        std::vector<Var> rows{ag::select_row(x, 0), ag::select_row(x, 1), ag::select_row(x, 2)};
        return probe(lstm(rows).back(), 31);
    });
}

TEST_CASE("no-grad mode records nothing") {
    Var a = Var::parameter({2}, {1, 2});
    ag::NoGradGuard guard;
    Var y = ag::mul(a, a);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("Adam moves parameters against the gradient and rounds to float32") {
    nn::ParamSet ps;
    Var w = ps.add("w", {2}, {0.1, -0.1});
    nn::Adam opt(ps);
    ag::backward(ag::sum(ag::mul(w, w)));
    opt.step(0.01);
    CHECK(w.value()[0] < 0.1);
    CHECK(w.value()[1] > -0.1);
    CHECK(w.value()[0] == static_cast<double>(static_cast<float>(w.value()[0])));
}
