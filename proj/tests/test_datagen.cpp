#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "latentflow/datagen.hpp"
#include "latentflow/error.hpp"
#include "latentflow/metrics.hpp"

using namespace lf;

namespace {

double total(const GridFrame& f) { return std::accumulate(f.values.begin(), f.values.end(), 0.0); }

GridFrame random_frame(int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GridFrame f(k);
    for (double& v : f.values) v = u(rng);
    return f;
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace

TEST_CASE("velocity field: zero at v=0, linear in v, discretely divergence free") {
    GenConfig cfg;
    cfg.k = 32;
    cfg.v = 0.0;
    const auto zero = make_velocity_field(cfg);
    CHECK(max_abs(zero.ux) == 0.0);
    CHECK(max_abs(zero.face_y) == 0.0);

    for (std::uint64_t seed : {1u, 2u, 9u}) {
        for (int k : {8, 32, 64}) {
            cfg.k = k;
            cfg.seed = seed;
            cfg.v = 0.01;
            const auto f = make_velocity_field(cfg);
            const double umax = std::max(max_abs(f.ux), max_abs(f.uy));
            REQUIRE(umax > 0.0);
            CHECK(max_interior_divergence(f) <= 1e-6 * umax);
            GenConfig c2 = cfg;
            c2.v = 0.02;
            const auto g = make_velocity_field(c2);
            for (std::size_t i = 0; i < f.ux.size(); ++i) {
                if (f.ux[i] != 0.0) CHECK(g.ux[i] / f.ux[i] == doctest::Approx(2.0).epsilon(1e-12));
                if (f.uy[i] != 0.0) CHECK(g.uy[i] / f.uy[i] == doctest::Approx(2.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("velocity field: face fluxes telescope to zero in every cell") {
    GenConfig cfg;
    cfg.k = 16;
    cfg.v = 0.013;
    const auto f = make_velocity_field(cfg);
    const int k = f.k;
    double worst = 0.0, scale = std::max(max_abs(f.face_x), max_abs(f.face_y));
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) {
            const double div = f.face_x[r * (k + 1) + c + 1] - f.face_x[r * (k + 1) + c] + f.face_y[(r + 1) * k + c] -
                               f.face_y[r * k + c];
            worst = std::max(worst, std::abs(div));
        }
    CHECK(worst <= 1e-12 * scale);
    CHECK_THROWS_AS(make_velocity_field(GenConfig{.k = 4}), Error);
}

TEST_CASE("transport: zero field leaves the frame unchanged") {
    const auto f = random_frame(8, 3);
    const auto field = uniform_velocity_field(8, 0.0, 0.0);
    for (Boundary b : {Boundary::open, Boundary::closed, Boundary::periodic})
        CHECK(step_transport(f, field, 0.1, b) == f);
}

TEST_CASE("transport: closed box conserves mass to 1e-9 per step over 1000 steps") {
    GenConfig cfg;
    cfg.k = 32;
    cfg.v = 0.01;
    const auto field = make_velocity_field(cfg);
    const double dt = 0.9 * field.h / field.max_outflow_rate();
    GridFrame g = random_frame(32, 17);
    const double start = total(g);
    double prev = start, worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        g = step_transport(g, field, dt, Boundary::closed);
        const double now = total(g);
        worst = std::max(worst, std::abs(now - prev));
        prev = now;
    }
    CHECK(worst <= 1e-9);
    CHECK(std::abs(prev - start) <= 1e-9 * 1000);
}

TEST_CASE("transport: open domain mass change equals the integrated boundary flux") {
    GenConfig cfg;
    cfg.k = 32;
    cfg.v = 0.012;
    const auto field = make_velocity_field(cfg);
    const double dt = 0.5 * field.h / field.max_outflow_rate();
    GridFrame g(32);
    double inflow = 0.0, outflow = 0.0;
    const double start = total(g);
    for (int i = 0; i < 1000; ++i) {
        StepFlux flux;
        const double before = total(g);
        g = step_transport(g, field, dt, Boundary::open, &flux);
        CHECK(std::abs((total(g) - before) - (flux.inflow - flux.outflow)) <= 1e-9);
        inflow += flux.inflow;
        outflow += flux.outflow;
    }
    CHECK(inflow > 0.0);
    CHECK(std::abs((total(g) - start) - (inflow - outflow)) <= 1e-9);
    for (double v : g.values) {
        CHECK(v >= -1e-12);
        CHECK(v <= 1.0 + 1e-12);
    }
}

TEST_CASE("transport: periodic upwind step moves the fraction u*dt/h downwind") {
    const int k = 8;
    const auto field = uniform_velocity_field(k, 0.5, 0.0);
    GridFrame g(k);
    g.at(3, 7) = 1.0;  // wraps to column 0
    const double dt = 0.1 * field.h;
    const auto next = step_transport(g, field, dt, Boundary::periodic);
    const double frac = 0.5 * dt / field.h;
    CHECK(next.at(3, 7) == doctest::Approx(1.0 - frac).epsilon(1e-15));
    CHECK(next.at(3, 0) == doctest::Approx(frac).epsilon(1e-15));
    CHECK(total(next) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("transport: CFL violation is an error, never a clamp") {
    const auto field = uniform_velocity_field(8, 1.0, 0.0);
    const GridFrame g = random_frame(8, 1);
    try {
        step_transport(g, field, 2.0 * field.h, Boundary::periodic);
        FAIL("expected a CFL error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::cfl_violation);
    }
}

TEST_CASE("generate_series: v=0 stays at the initial frame") {
    GenConfig cfg;
    cfg.k = 16;
    cfg.steps = 5;
    cfg.v = 0.0;
    const auto s = generate_series(cfg).series;
    REQUIRE(s.steps() == 5);
    for (const auto& f : s.frames) CHECK(f == s.frame(1));
}

TEST_CASE("generate_series: deterministic, bounded, nonzero final IA") {
    GenConfig cfg;
    cfg.k = 32;
    cfg.steps = 100;
    cfg.substeps = 10;
    cfg.v = 0.01;
    const auto a = generate_series(cfg).series;
    const auto b = generate_series(cfg).series;
    CHECK(a.frames == b.frames);
    CHECK(a.steps() == 100);
    CHECK(total(a.frame(1)) == 0.0);
    for (const auto& f : a.frames)
        for (double v : f.values) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0 + 1e-12);
        }
    CHECK(interfacial_area(a.frames.back()) > 0.0);
}

TEST_CASE("generate_dataset: split sizes, duplicates, workers and monotone liquid mass") {
    GenConfig tmpl;
    tmpl.k = 8;
    tmpl.steps = 3;
    tmpl.substeps = 2;
    const auto vs = velocity_range(50, 0.005, 0.015);
    const Dataset ds = generate_dataset(vs, tmpl, 40, 1);
    CHECK(ds.series.size() == 50);
    CHECK(ds.train_ids.size() == 40);
    CHECK(ds.test_ids.size() == 10);

    const std::vector<double> two{0.01, 0.02};
    const Dataset small = generate_dataset(two, tmpl, 1, 1);
    CHECK(small.train_ids.size() == 1);
    CHECK(small.test_ids.size() == 1);

    const std::vector<double> dup{0.01, 0.02, 0.01};
    CHECK_THROWS_AS(generate_dataset(dup, tmpl, 1, 1), Error);

    GenConfig desk;
    desk.k = 32;
    desk.steps = 40;
    desk.substeps = 10;
    desk.refine = 2;
    const auto v12 = velocity_range(6, 0.005, 0.015);
    std::vector<double> secs;
    const Dataset serial = generate_dataset(v12, desk, 4, 3, &secs, 1);
    const Dataset parallel = generate_dataset(v12, desk, 4, 3, nullptr, 3);
    REQUIRE(secs.size() == 6);
    for (std::size_t i = 0; i < serial.series.size(); ++i) CHECK(serial.series[i].frames == parallel.series[i].frames);
    CHECK(serial.train_ids == parallel.train_ids);
    // Steady liquid mass grows with inlet velocity.
    for (std::size_t i = 1; i < serial.series.size(); ++i)
        CHECK(total(serial.series[i].frames.back()) >= total(serial.series[i - 1].frames.back()));
}

TEST_CASE("manifest and dataset round trip through disk") {
    GenConfig tmpl;
    tmpl.k = 8;
    tmpl.steps = 4;
    const std::vector<double> vs{0.004, 0.008, 0.012};
    std::vector<double> secs;
    const Dataset ds = generate_dataset(vs, tmpl, 2, 5, &secs);
    const auto dir = std::filesystem::temp_directory_path() / "lf_test_datagen";
    std::filesystem::remove_all(dir);
    const Manifest m = write_dataset(ds, dir, secs);
    CHECK(m.entries.size() == 3);
    const Manifest back = read_manifest(dir / "manifest.csv");
    REQUIRE(back.entries.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.entries[i].v == m.entries[i].v);
        CHECK(back.entries[i].split == m.entries[i].split);
        CHECK(back.entries[i].path == m.entries[i].path);
    }
    const Dataset loaded = load_dataset(dir / "manifest.csv");
    CHECK(loaded.train_ids == ds.train_ids);
    CHECK(loaded.test_ids == ds.test_ids);
    CHECK(loaded.v_min == ds.v_min);
    for (std::size_t i = 0; i < 3; ++i) CHECK(loaded.series[i].frames == ds.series[i].frames);
    std::filesystem::remove_all(dir);
}
