#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "latentflow/bytes.hpp"
#include "latentflow/error.hpp"
#include "latentflow/field.hpp"

using namespace lf;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::internal;
}

SimulationSeries ramp_series(int k, int steps, double v) {
    SimulationSeries s;
    s.inlet_velocity = v;
    for (int t = 1; t <= steps; ++t) {
        GridFrame f(k);
        for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = static_cast<float>(0.001 * t + 1e-4 * static_cast<double>(i));
        s.frames.push_back(f);
    }
    return s;
}

}  // namespace

TEST_CASE("resample: symmetric corner samples give 0.5 at the center node") {
    ScatteredSample s{{{0, 0}, {1, 0}, {0, 1}, {1, 1}}, {0, 0, 1, 1}};
    // k=3 cell centers sit at 1/6, 1/2, 5/6; the middle one is the domain center.
    const auto r = resample_to_grid(s, 3);
    CHECK(r.frame.at(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(r.outside_hull_nodes == 0);
}

TEST_CASE("resample: constant samples give a constant frame") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ScatteredSample s;
    for (int i = 0; i < 30; ++i) {
        s.points.emplace_back(u(rng), u(rng));
        s.values.push_back(0.7);
    }
    for (int k : {2, 5, 16}) {
        const auto r = resample_to_grid(s, k);
        for (double v : r.frame.values) CHECK(v == doctest::Approx(0.7).epsilon(1e-13));
    }
}

TEST_CASE("resample: linear field is reproduced exactly inside the hull") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ScatteredSample s;
    auto f = [](double x, double y) { return 2 * x + 3 * y; };
    // Corners guarantee every node is inside the hull.
    for (auto [x, y] : std::vector<std::pair<double, double>>{{0, 0}, {1, 0}, {0, 1}, {1, 1}}) {
        s.points.emplace_back(x, y);
        s.values.push_back(f(x, y));
    }
    while (s.points.size() < 50) {
        const double x = u(rng), y = u(rng);
        s.points.emplace_back(x, y);
        s.values.push_back(f(x, y));
    }
    const int k = 8;
    const auto r = resample_to_grid(s, k);
    double worst = 0.0;
    for (int row = 0; row < k; ++row)
        for (int col = 0; col < k; ++col) {
            const double x = (col + 0.5) / k, y = (row + 0.5) / k;
            worst = std::max(worst, std::abs(r.frame.at(row, col) - f(x, y)));
        }
    CHECK(worst < 1e-10);
    CHECK(r.outside_hull_nodes == 0);
}

TEST_CASE("resample: output stays inside the sample value range and hits samples on nodes") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ScatteredSample s;
    // Place one sample exactly on the node at row 2, col 1 of a k=4 grid.
    s.points.emplace_back(1.5 / 4, 2.5 / 4);
    s.values.push_back(0.123);
    for (auto [x, y] : std::vector<std::pair<double, double>>{{0, 0}, {1, 0}, {0, 1}, {1, 1}}) {
        s.points.emplace_back(x, y);
        s.values.push_back(u(rng));
    }
    for (int i = 0; i < 20; ++i) {
        s.points.emplace_back(u(rng), u(rng));
        s.values.push_back(u(rng));
    }
    const auto r = resample_to_grid(s, 4);
    const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
    for (double v : r.frame.values) {
        CHECK(v >= *lo - 1e-12);
        CHECK(v <= *hi + 1e-12);
    }
    CHECK(r.frame.at(2, 1) == doctest::Approx(0.123).epsilon(1e-12));
}

TEST_CASE("resample: nodes outside the hull use the nearest sample and are counted") {
    ScatteredSample s{{{0.4, 0.4}, {0.6, 0.4}, {0.5, 0.6}}, {1.0, 2.0, 3.0}};
    const auto r = resample_to_grid(s, 4);
    CHECK(r.outside_hull_nodes > 0);
    // Node (0,0) center (0.125, 0.125) is nearest to sample 0.
    CHECK(r.frame.at(0, 0) == 1.0);
}

TEST_CASE("resample: collinear and duplicate samples are rejected") {
    ScatteredSample line{{{0, 0}, {0.5, 0.5}, {1, 1}}, {0, 1, 2}};
    CHECK(code_of([&] { resample_to_grid(line, 4); }) == ErrorCode::degenerate);
    ScatteredSample dup{{{0, 0}, {1, 0}, {0, 0}, {0, 1}}, {0, 1, 2, 3}};
    CHECK(code_of([&] { resample_to_grid(dup, 4); }) == ErrorCode::invalid_argument);
    ScatteredSample ok{{{0, 0}, {1, 0}, {0, 1}}, {0, 1, 2}};
    CHECK(code_of([&] { resample_to_grid(ok, 1); }) == ErrorCode::invalid_argument);
}

TEST_CASE("downsample_time anchors on the final frame") {
    SimulationSeries s = ramp_series(2, 10, 0.01);
    const auto d = downsample_time(s, 5);
    REQUIRE(d.steps() == 2);
    CHECK(d.frame(1) == s.frame(5));
    CHECK(d.frame(2) == s.frame(10));
    CHECK(downsample_time(s, 1).frames == s.frames);
    const auto d3 = downsample_time(s, 3);
    REQUIRE(d3.steps() == 3);
    CHECK(d3.frame(1) == s.frame(4));
    CHECK(d3.frame(3) == s.frame(10));
    CHECK(code_of([&] { downsample_time(s, 0); }) == ErrorCode::invalid_argument);
    CHECK(code_of([&] { downsample_time(s, -2); }) == ErrorCode::invalid_argument);
}

TEST_CASE("downsample_time: 5000 steps by 10 keeps 500 frames ending at the last") {
    SimulationSeries s;
    for (int t = 1; t <= 5000; ++t) {
        GridFrame f(1);
        f.values[0] = t;
        s.frames.push_back(f);
    }
    const auto d = downsample_time(s, 10);
    CHECK(d.steps() == 500);
    CHECK(d.frame(500).values[0] == 5000.0);
    CHECK(d.frame(1).values[0] == 10.0);
}

TEST_CASE("normalize_config endpoints, midpoint and degenerate range") {
    auto a = normalize_config(0.005, 100, 0.005, 0.015, 100);
    CHECK(a.v_norm == 0.0);
    CHECK(a.t_norm == 1.0);
    auto b = normalize_config(0.015, 1, 0.005, 0.015, 500);
    CHECK(b.v_norm == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(b.t_norm == doctest::Approx(0.002).epsilon(1e-14));
    CHECK(normalize_config(0.01, 1, 0.005, 0.015, 10).v_norm == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(code_of([] { normalize_config(0.01, 1, 0.01, 0.01, 10); }) == ErrorCode::degenerate);
    // Strictly monotone in v and t.
    CHECK(normalize_config(0.011, 3, 0.005, 0.015, 10).v_norm > normalize_config(0.0109, 3, 0.005, 0.015, 10).v_norm);
    CHECK(normalize_config(0.011, 4, 0.005, 0.015, 10).t_norm > normalize_config(0.011, 3, 0.005, 0.015, 10).t_norm);
}

TEST_CASE("split_dataset: sizes, determinism, disjointness and train-only velocity range") {
    std::vector<SimulationSeries> all;
    for (int i = 0; i < 50; ++i) {
        all.push_back(ramp_series(2, 2, 0.001 * (i + 1)));
        all.back().series_id = i;
    }
    const Dataset a = split_dataset(all, 40, 7);
    const Dataset b = split_dataset(all, 40, 7);
    CHECK(a.train_ids.size() == 40);
    CHECK(a.test_ids.size() == 10);
    CHECK(a.train_ids == b.train_ids);
    CHECK(a.test_ids == b.test_ids);
    std::vector<int> ids = a.train_ids;
    ids.insert(ids.end(), a.test_ids.begin(), a.test_ids.end());
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < 50; ++i) CHECK(ids[static_cast<std::size_t>(i)] == i);
    double lo = 1e9, hi = -1e9;
    for (int id : a.train_ids) {
        lo = std::min(lo, a.series[id].inlet_velocity);
        hi = std::max(hi, a.series[id].inlet_velocity);
    }
    CHECK(a.v_min == lo);
    CHECK(a.v_max == hi);
    // Extremes kept in the training split: no test velocity leaves the range.
    for (int id : a.test_ids) CHECK_FALSE(a.outside_train_range(id));

    std::vector<SimulationSeries> two{ramp_series(2, 2, 0.01), ramp_series(2, 2, 0.02)};
    const Dataset m = split_dataset(two, 1, 1, false);
    CHECK(m.train_ids.size() == 1);
    CHECK(m.test_ids.size() == 1);
    CHECK(code_of([&] { split_dataset(two, 2, 1); }) == ErrorCode::invalid_argument);
}

TEST_CASE("LFS1 archive: round trip, byte layout and corruption errors") {
    SimulationSeries s = ramp_series(64, 500, 0.0125);
    const auto bytes = encode_archive(s);
    REQUIRE(bytes.size() == 16 + 4ull * 500 * 64 * 64);
    CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "LFS1"));
    CHECK(bytes::get_u32(bytes.data() + 4) == 64u);
    CHECK(bytes::get_u32(bytes.data() + 8) == 500u);
    CHECK(bytes::get_f32(bytes.data() + 12) == 0.0125f);
    CHECK(bytes::get_f32(bytes.data() + 16) == static_cast<float>(s.frame(1).values[0]));

    const auto path = std::filesystem::temp_directory_path() / "lf_test_field.lfs";
    write_archive(s, path);
    const SimulationSeries back = read_archive(path);
    CHECK(back.frames == s.frames);
    CHECK(encode_archive(back) == bytes);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK(code_of([&] { decode_archive(bad); }) == ErrorCode::bad_magic);
    auto cut = bytes;
    cut.resize(16 + 4 * 64 * 64 * 3 + 100);
    CHECK(code_of([&] { decode_archive(cut); }) == ErrorCode::truncated_payload);
    CHECK(code_of([&] { decode_archive(std::vector<unsigned char>(bytes.begin(), bytes.begin() + 10)); }) ==
          ErrorCode::truncated_payload);
    auto longer = bytes;
    longer.push_back(0);
    CHECK(code_of([&] { decode_archive(longer); }) == ErrorCode::header_mismatch);
    auto wrong_k = bytes;
    wrong_k[4] = 63;
    CHECK(code_of([&] { decode_archive(wrong_k); }) != ErrorCode::internal);
    CHECK(code_of([] { read_archive("/nonexistent/dir/x.lfs"); }) == ErrorCode::not_found);
    std::filesystem::remove(path);
}

TEST_CASE("series validation") {
    SimulationSeries s = ramp_series(4, 3, 0.01);
    CHECK_NOTHROW(s.validate());
    s.frames[1] = GridFrame(5);
    CHECK(code_of([&] { s.validate(); }) == ErrorCode::shape_mismatch);
    SimulationSeries one = ramp_series(4, 1, 0.01);
    CHECK(code_of([&] { one.validate(); }) == ErrorCode::invalid_argument);
}
