// Acceptance suite: one PASS/FAIL line per criterion, tolerances fixed below.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "ia_oracle.hpp"
#include "latentflow/bytes.hpp"
#include "latentflow/checkpoint.hpp"
#include "latentflow/datagen.hpp"
#include "latentflow/error.hpp"
#include "latentflow/harness.hpp"
#include "latentflow/metrics.hpp"
#include "latentflow/rollout.hpp"
#include "latentflow/training.hpp"

#ifndef LF_SOURCE_DIR
#define LF_SOURCE_DIR "."
#endif

using namespace lf;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kSvdRelTol = 1e-8;
constexpr double kRampTol = 1e-12;
constexpr double kRadialTol = 0.03;
constexpr double kOracleTol = 0.02;
constexpr double kGradTol = 1e-4;
constexpr int kGradSamples = 100;
constexpr double kMassTol = 1e-9;
constexpr double kValueCeil = 1.0 + 1e-12;
constexpr double kDeskIaMax = 0.15;
constexpr double kDeskVfMax = 0.35;
constexpr double kE2eSlack = 0.02;
constexpr double kMinSpeedup = 10.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Suite {
public:
    void run(int id, const std::string& name, const std::function<Outcome()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
        std::fflush(stdout);
        failed_ += o.pass ? 0 : 1;
        ++total_;
    }
    int finish() const {
        std::printf("%d/%d criteria passed\n", total_ - failed_, total_);
        return failed_ == 0 ? 0 : 1;
    }

private:
    int failed_ = 0;
    int total_ = 0;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GridFrame sample(const test::Field2& f, int k, double cell = 1.0) {
    GridFrame g(k, 0.0, cell);
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) g.at(r, c) = f(c, r);
    return g;
}

double total(const GridFrame& f) {
    double s = 0.0;
    for (double v : f.values) s += v;
    return s;
}

std::vector<GridFrame> smooth_frames(int n, int k, std::uint64_t seed) {
    std::vector<GridFrame> out;
    for (int i = 0; i < n; ++i) out.push_back(sample(test::random_smooth_field(k, seed + static_cast<std::uint64_t>(i)), k));
    return out;
}

// ---------------------------------------------------------------- criterion 1

Outcome svd_optimality() {
    GenConfig tmpl;
    tmpl.k = 32;
    tmpl.steps = 50;
    const auto vs = velocity_range(6, 0.005, 0.015);
    const Dataset ds = generate_dataset(vs, tmpl, 5, 1);
    std::vector<GridFrame> frames;
    for (const auto& s : ds.series)
        for (const auto& f : s.frames) frames.push_back(f);
    const int n = static_cast<int>(frames.size()), d = 32 * 32;

    // Oracle: eigenvalues of [[0, B], [B^T, 0]] are +-sigma_i. Unlike B^T B
    // this resolves sigma_i down to eps * sigma_1 rather than eps * sigma_1^2.
    using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    MatL A = MatL::Zero(d + n, d + n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < d; ++i) {
            const long double v = frames[static_cast<std::size_t>(j)].values[static_cast<std::size_t>(i)];
            A(i, d + j) = v;
            A(d + j, i) = v;
        }
    Eigen::SelfAdjointEigenSolver<MatL> eig(A, Eigen::EigenvaluesOnly);
    std::vector<long double> sigma(eig.eigenvalues().data(), eig.eigenvalues().data() + d + n);
    std::sort(sigma.begin(), sigma.end(), std::greater<>());

    Outcome o{true, ""};
    for (int c : {4, 16, 64}) {
        const auto lvm = svd_fit(frames, c, SvdFitOptions{false, false});
        double sq = 0.0;
        for (const auto& f : frames) {
            const GridFrame rec = lvm->decode(lvm->encode(f));
            for (std::size_t i = 0; i < f.values.size(); ++i) sq += (rec.values[i] - f.values[i]) * (rec.values[i] - f.values[i]);
        }
        long double tail = 0.0L;
        for (int i = c; i < n; ++i) tail += sigma[static_cast<std::size_t>(i)] * sigma[static_cast<std::size_t>(i)];
        const double oracle = std::sqrt(static_cast<double>(tail));
        const double rel = std::abs(std::sqrt(sq) - oracle) / oracle;
        o.pass = o.pass && rel <= kSvdRelTol;
        o.detail += fmt("c=%d rel=%.2e ", c, rel);
    }
    o.detail += fmt("(tol %.0e)", kSvdRelTol);
    return o;
}

// ---------------------------------------------------------------- criterion 2

Outcome ia_oracle() {
    double worst_ramp = 0.0;
    for (double cell : {1.0, 0.5, 2.5}) {
        const int k = 32;
        GridFrame g(k, 0.0, cell);
        for (int r = 0; r < k; ++r)
            for (int c = 0; c < k; ++c) g.at(r, c) = static_cast<double>(c) / (k - 1);
        worst_ramp = std::max(worst_ramp, std::abs(interfacial_area(g) - (k - 1) * cell));
    }
    const double R = 24.0;
    auto radial = [&](double x, double y) { return std::max(0.0, 1.0 - std::hypot(x - 31.5, y - 31.5) / R); };
    const double circle = std::numbers::pi * R;
    const double radial_rel = std::abs(interfacial_area(sample(radial, 64)) - circle) / circle;
    double worst_random = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto f = test::random_smooth_field(32, seed);
        const double ref = test::contour_length_oracle(f, 32, 8);
        worst_random = std::max(worst_random, std::abs(interfacial_area(sample(f, 32)) - ref) / ref);
    }
    const bool pass = worst_ramp <= kRampTol && radial_rel < kRadialTol && worst_random < kOracleTol;
    return {pass, fmt("ramp abs err %.1e (tol %.0e), radial rel %.4f (tol %.2f), random worst rel %.4f (tol %.2f)",
                      worst_ramp, kRampTol, radial_rel, kRadialTol, worst_random, kOracleTol)};
}

// ---------------------------------------------------------------- criterion 3

Outcome gradients() {
    const int k = 16;
    std::vector<std::string> lines;
    double worst = 0.0, worst_abs = 0.0;
    int min_checked = kGradSamples;
    auto record = [&](const std::string& what, const test::GradCheckResult& r) {
        worst = std::max(worst, r.max_rel_err);
        worst_abs = std::max(worst_abs, r.max_abs_diff);
        min_checked = std::min(min_checked, r.checked);
        if (r.max_rel_err > kGradTol || r.checked < kGradSamples)
            lines.push_back(fmt("%s rel=%.2e n=%d", what.c_str(), r.max_rel_err, r.checked));
    };
    const LossKind kinds[] = {LossKind::relative_error, LossKind::rmse};

    LvmSpec conv;
    conv.c = 8;
    conv.channel_divisor = 32;
    LvmSpec patch;
    patch.family = LvmFamily::patch;
    patch.c = 8;
    patch.patch_size = 4;
    patch.heads = 2;
    patch.layers = 1;
    std::vector<std::unique_ptr<Lvm>> lvms;
    lvms.push_back(build_conv_lvm(conv, k));
    lvms.push_back(build_patch_lvm(patch, k));

    const auto frames = smooth_frames(3, k, 40);
    std::vector<const GridFrame*> fp;
    for (const auto& f : frames) fp.push_back(&f);
    const std::vector<double> slots{0.2, 0.1, 0.5, 0.4, 0.9, 0.7};
    for (const auto& lvm : lvms) {
        for (LossKind kind : kinds) {
            auto loss = [&] {
                const ag::Var x = frames_to_var(fp);
                const ag::Var rec = lvm->decode(ag::inject_slots(lvm->encode(x), slots));
                return kind == LossKind::rmse ? ag::rmse_loss(rec, x) : ag::relative_error_loss(rec, x);
            };
            record(to_string(lvm->family()) + "/" + to_string(kind), test::gradcheck(lvm->tensors(), loss, kGradSamples, 3));
        }
    }

    // Latent series for the LIN losses.
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<LatentSeries> latents(2);
    for (int i = 0; i < 2; ++i) {
        latents[static_cast<std::size_t>(i)].v = 0.3 + 0.4 * i;
        for (int t = 1; t <= 6; ++t) {
            LatentState l;
            for (int j = 0; j < 8; ++j) l.values.push_back(u(rng));
            latents[static_cast<std::size_t>(i)].latents.push_back(inject_config(l, 0.3 + 0.4 * i, t / 6.0));
        }
    }
    const std::vector<int> lens{6, 6};
    const auto windows = enumerate_windows(lens, 3);

    // Series of frames for the end-to-end path.
    std::vector<SimulationSeries> series(2);
    for (int i = 0; i < 2; ++i) {
        series[static_cast<std::size_t>(i)].inlet_velocity = 0.008 + 0.004 * i;
        series[static_cast<std::size_t>(i)].series_id = i;
        series[static_cast<std::size_t>(i)].frames = smooth_frames(6, k, 100 + 10 * static_cast<std::uint64_t>(i));
    }
    std::vector<const SimulationSeries*> sp{&series[0], &series[1]};
    const Normalization norm{0.008, 0.012, 6};

    for (LinFamily f : {LinFamily::linear, LinFamily::mlp, LinFamily::arc, LinFamily::recurrent, LinFamily::transformer}) {
        LinSpec spec;
        spec.family = f;
        spec.c = 8;
        spec.s = 2;
        spec.heads = 2;
        spec.layers = 1;
        spec.hidden = {8, 8};
        auto lin = build_lin(spec);
        for (LossKind kind : kinds) {
            record(to_string(f) + "/" + to_string(kind),
                   test::gradcheck(lin->tensors(), [&] { return lin_window_loss(*lin, latents, windows, 3, kind); },
                                   kGradSamples, 5));
            for (const auto& lvm : lvms) {
                nn::ParamSet joint;
                joint.absorb("lvm.", lvm->tensors());
                joint.absorb("lin.", lin->tensors());
                record("e2e " + to_string(lvm->family()) + "+" + to_string(f) + "/" + to_string(kind),
                       test::gradcheck(joint, [&] { return e2e_window_loss(*lvm, *lin, sp, norm, windows, 3, kind); },
                                       kGradSamples, 7));
            }
        }
    }
    std::string detail = fmt("worst rel %.2e, worst abs diff %.1e, over %d params each (tol %.0e)", worst, worst_abs,
                             min_checked, kGradTol);
    for (const auto& l : lines) detail += "; " + l;
    return {lines.empty(), detail};
}

// ---------------------------------------------------------------- criterion 4

Outcome conservation(const fs::path& desk_data) {
    GenConfig cfg;
    cfg.k = 32;
    cfg.v = 0.01;
    const auto field = make_velocity_field(cfg);
    const double dt = 0.9 * field.h / field.max_outflow_rate();
    GridFrame g = sample(test::random_smooth_field(32, 77), 32);
    double prev = total(g), closed_worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        g = step_transport(g, field, dt, Boundary::closed);
        closed_worst = std::max(closed_worst, std::abs(total(g) - prev));
        prev = total(g);
    }

    cfg.v = 0.012;
    const auto open_field = make_velocity_field(cfg);
    const double dt_open = 0.5 * open_field.h / open_field.max_outflow_rate();
    GridFrame o(32);
    const double start = total(o);
    double open_worst = 0.0, net = 0.0;
    for (int i = 0; i < 1000; ++i) {
        StepFlux flux;
        const double before = total(o);
        o = step_transport(o, open_field, dt_open, Boundary::open, &flux);
        open_worst = std::max(open_worst, std::abs((total(o) - before) - (flux.inflow - flux.outflow)));
        net += flux.inflow - flux.outflow;
    }
    const double open_cum = std::abs((total(o) - start) - net);

    double lo = 1.0, hi = 0.0;
    const Dataset ds = load_dataset(desk_data / "manifest.csv");
    for (const auto& s : ds.series)
        for (const auto& f : s.frames)
            for (double v : f.values) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    const bool pass = closed_worst <= kMassTol && open_worst <= kMassTol && open_cum <= kMassTol && lo >= 0.0 &&
                      hi <= kValueCeil;
    return {pass, fmt("closed drift/step %.1e, open step residual %.1e, open cumulative %.1e (tol %.0e); "
                      "generated values in [%.3g, %.17g] (ceiling 1+1e-12)",
                      closed_worst, open_worst, open_cum, kMassTol, lo, hi)};
}

// ---------------------------------------------------------------- desk runs

struct DeskRun {
    fs::path dir;
    PipelineResult result;
};

ExperimentConfig desk_config(const fs::path& data, const fs::path& out, int seed) {
    ExperimentConfig cfg = ExperimentConfig::from_file(fs::path(LF_SOURCE_DIR) / "configs" / "desk.ini");
    cfg.set("run.data", data.string());
    cfg.set("run.output", out.string());
    for (const char* key : {"lvm.seed", "lin.seed", "e2e.seed"}) cfg.set(key, std::to_string(seed));
    return cfg;
}

struct WindowRun {
    bool diverged = false;
    double error_vf = 0.0;
    std::string note;
};

WindowRun window_run(const fs::path& data, const fs::path& out, const DeskRun& base, int seed, int w) {
    auto cfg = desk_config(data, out, seed);
    cfg.set("lin.w", std::to_string(w));
    cfg.set("e2e.enabled", "false");
    cfg.set("run.lvm_from", (base.dir / "lvm.lfck").string());
    WindowRun r;
    try {
        const auto res = run_pipeline(cfg);
        r.error_vf = res.classic.error_vf;
        r.note = fmt("%.4f", r.error_vf);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::diverged) throw;
        r.diverged = true;
        r.note = "diverged";
    }
    return r;
}

double mean2(double a, double b) { return 0.5 * (a + b); }

std::vector<std::string> differing_files(const fs::path& a, const fs::path& b) {
    std::vector<std::string> diff;
    for (const char* f : {"lvm.lfck", "lin.lfck", "e2e_lvm.lfck", "e2e_lin.lfck", "metrics_classic.csv", "metrics_e2e.csv"})
        if (bytes::read_file(a / f) != bytes::read_file(b / f)) diff.emplace_back(f);
    return diff;
}

bool same_report(const MetricsReport& a, const MetricsReport& b) {
    if (a.rows.size() != b.rows.size() || a.error_ia != b.error_ia || a.error_vf != b.error_vf) return false;
    for (std::size_t i = 0; i < a.rows.size(); ++i)
        if (a.rows[i].ia_pred != b.rows[i].ia_pred || a.rows[i].vf_rel_err != b.rows[i].vf_rel_err) return false;
    return format_report(a) == format_report(b);
}

template <class F>
double median_seconds(int reps, F&& f) {
    std::vector<double> t;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        t.push_back(seconds_since(t0));
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
}

// ---------------------------------------------------------------- criterion 10

Outcome round_trips(const fs::path& data, const fs::path& work, const fs::path& run_dir) {
    std::vector<std::string> problems;
    const Manifest m = read_manifest(data / "manifest.csv");
    for (const auto& e : m.entries) {
        const auto original = bytes::read_file(data / e.path);
        const fs::path copy = work / "roundtrip.lfs";
        write_archive(read_archive(data / e.path), copy);
        const auto first = bytes::read_file(copy);
        write_archive(read_archive(copy), copy);
        if (first != original || bytes::read_file(copy) != first) problems.push_back("archive " + e.path);
    }
    for (const char* f : {"lvm.lfck", "lin.lfck", "e2e_lvm.lfck", "e2e_lin.lfck"}) {
        const fs::path a = work / "ck_a.lfck", b = work / "ck_b.lfck";
        write_checkpoint(read_checkpoint(run_dir / f), a);
        write_checkpoint(read_checkpoint(a), b);
        if (bytes::read_file(a) != bytes::read_file(run_dir / f) || bytes::read_file(b) != bytes::read_file(a))
            problems.push_back(std::string("checkpoint ") + f);
    }

    auto code_of = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::internal;
    };
    const auto arc = bytes::read_file(data / m.entries.front().path);
    auto bad_magic = arc;
    bad_magic[0] = 'X';
    auto cut = arc;
    cut.resize(16 + (cut.size() - 16) / 2 + 2);
    auto short_t = arc;
    short_t[8] = static_cast<unsigned char>(short_t[8] - 1);
    auto big_k = arc;
    big_k[4] = static_cast<unsigned char>(big_k[4] + 1);
    const ErrorCode arc_codes[] = {code_of([&] { decode_archive(bad_magic); }), code_of([&] { decode_archive(cut); }),
                                   code_of([&] { decode_archive(short_t); }), code_of([&] { decode_archive(big_k); })};
    const ErrorCode arc_expect[] = {ErrorCode::bad_magic, ErrorCode::truncated_payload, ErrorCode::header_mismatch,
                                    ErrorCode::truncated_payload};

    const auto ck = bytes::read_file(run_dir / "lin.lfck");
    auto ck_magic = ck;
    ck_magic[2] = 'Z';
    auto ck_cut = ck;
    ck_cut.resize(ck.size() - 7);
    auto ck_version = ck;
    ck_version[4] = 0x7f;
    auto ck_json = ck;
    ck_json[12] = '#';
    const ErrorCode ck_codes[] = {code_of([&] { decode_checkpoint(ck_magic); }), code_of([&] { decode_checkpoint(ck_cut); }),
                                  code_of([&] { decode_checkpoint(ck_version); }),
                                  code_of([&] { decode_checkpoint(ck_json); })};
    const ErrorCode ck_expect[] = {ErrorCode::bad_magic, ErrorCode::truncated_payload, ErrorCode::header_mismatch,
                                   ErrorCode::header_mismatch};
    for (int i = 0; i < 4; ++i) {
        if (arc_codes[i] != arc_expect[i]) problems.push_back(fmt("archive fixture %d gave %s", i, error_code_name(arc_codes[i])));
        if (ck_codes[i] != ck_expect[i]) problems.push_back(fmt("checkpoint fixture %d gave %s", i, error_code_name(ck_codes[i])));
    }
    std::string detail = fmt("%zu archives and 4 checkpoints byte-identical; 8 corrupted fixtures", m.entries.size());
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty(), detail};
}

}  // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "latentflow_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    Suite suite;

    suite.run(1, "SVD optimality", svd_optimality);
    suite.run(2, "IA oracle equivalence", ia_oracle);
    suite.run(3, "gradient correctness", gradients);

    const fs::path data = work / "data";
    std::printf("generating desk dataset...\n");
    std::fflush(stdout);
    cmd_gen_data(desk_config(data, work / "gen", 1));
    suite.run(4, "datagen conservation", [&] { return conservation(data); });

    // Seed 1 runs twice in deterministic mode (also used for criterion 9);
    // seed 2 runs with timing enabled (also used for criterion 8).
    std::vector<DeskRun> runs;
    std::string desk_error;
    DeskRun repeat;
    try {
        for (int seed : {1, 2}) {
            DeskRun r{work / fmt("desk_seed%d", seed), {}};
            auto cfg = desk_config(data, r.dir, seed);
            if (seed == 1) cfg.set("run.deterministic", "true");
            std::printf("training desk surrogate, seed %d...\n", seed);
            std::fflush(stdout);
            r.result = run_pipeline(cfg);
            runs.push_back(std::move(r));
        }
    } catch (const std::exception& e) {
        desk_error = e.what();
    }
    auto need_runs = [&] {
        if (runs.size() != 2) throw std::runtime_error("desk runs failed: " + desk_error);
    };

    suite.run(5, "pipeline learnability", [&] {
        need_runs();
        const double ia = mean2(runs[0].result.classic.error_ia, runs[1].result.classic.error_ia);
        const double vf = mean2(runs[0].result.classic.error_vf, runs[1].result.classic.error_vf);
        return Outcome{ia < kDeskIaMax && vf < kDeskVfMax,
                       fmt("mean Error_IA %.4f (< %.2f), mean Error_VF %.4f (< %.2f); seeds: IA %.4f/%.4f VF %.4f/%.4f",
                           ia, kDeskIaMax, vf, kDeskVfMax, runs[0].result.classic.error_ia,
                           runs[1].result.classic.error_ia, runs[0].result.classic.error_vf,
                           runs[1].result.classic.error_vf)};
    });

    suite.run(6, "E2E trend", [&] {
        need_runs();
        if (!runs[0].result.has_e2e || !runs[1].result.has_e2e) return Outcome{false, "E2E stage did not run"};
        const double classic = mean2(runs[0].result.classic.error_vf, runs[1].result.classic.error_vf);
        const double e2e = mean2(runs[0].result.e2e.error_vf, runs[1].result.e2e.error_vf);
        const double e2e_ia = mean2(runs[0].result.e2e.error_ia, runs[1].result.e2e.error_ia);
        return Outcome{e2e <= classic + kE2eSlack,
                       fmt("mean Error_VF classic %.4f, E2E %.4f (allowed <= %.4f); E2E Error_IA %.4f", classic, e2e,
                           classic + kE2eSlack, e2e_ia)};
    });

    suite.run(7, "window trend", [&] {
        need_runs();
        std::vector<WindowRun> w1, wlong;
        const int T = 100;
        for (int i = 0; i < 2; ++i) {
            std::printf("LIN window runs, seed %d...\n", i + 1);
            std::fflush(stdout);
            w1.push_back(window_run(data, work / fmt("w1_seed%d", i + 1), runs[static_cast<std::size_t>(i)], i + 1, 1));
            wlong.push_back(window_run(data, work / fmt("wlong_seed%d", i + 1), runs[static_cast<std::size_t>(i)], i + 1, T - 1));
        }
        const double vf50 = mean2(runs[0].result.classic.error_vf, runs[1].result.classic.error_vf);
        const bool any_w1_diverged = w1[0].diverged || w1[1].diverged;
        const double vf1 = any_w1_diverged ? INFINITY : mean2(w1[0].error_vf, w1[1].error_vf);
        const bool long_diverged = wlong[0].diverged || wlong[1].diverged;
        const double vflong = long_diverged ? INFINITY : mean2(wlong[0].error_vf, wlong[1].error_vf);
        const bool short_ok = vf50 < vf1;
        const bool long_ok = long_diverged || vflong > vf50;
        return Outcome{short_ok && long_ok,
                       fmt("mean Error_VF w=1 %.4f [%s, %s], w=50 %.4f, w=%d %.4f [%s, %s]; w=50 beats w=1: %s; "
                           "w=T-1 degrades or diverges: %s",
                           vf1, w1[0].note.c_str(), w1[1].note.c_str(), vf50, T - 1, vflong, wlong[0].note.c_str(),
                           wlong[1].note.c_str(), short_ok ? "yes" : "no", long_ok ? "yes" : "no")};
    });

    suite.run(8, "speedup measurement", [&] {
        need_runs();
        const DeskRun& timed = runs[1];
        const auto lvm_ck = read_checkpoint(timed.dir / "lvm.lfck");
        const auto lvm = lvm_from_checkpoint(lvm_ck);
        const auto lin = lin_from_checkpoint(read_checkpoint(timed.dir / "lin.lfck"));
        const auto norm = normalization_from_checkpoint(lvm_ck);
        const auto cfg = desk_config(data, timed.dir, 2);
        const Dataset ds = load_dataset(data / "manifest.csv");
        const auto& test_series = ds.series[static_cast<std::size_t>(ds.test_ids.front())];
        GenConfig gen = cfg.gen_config();
        gen.v = test_series.inlet_velocity;
        const double t_gen = median_seconds(3, [&] { generate_series(gen); });
        const double t_ai = median_seconds(5, [&] {
            full_rollout(*lvm, *lin, norm, test_series.frames.front(), test_series.inlet_velocity, gen.steps);
        });
        GenConfig coarse = gen;
        coarse.refine = 1;
        const double t_coarse = median_seconds(3, [&] { generate_series(coarse); });
        const double ratio = t_gen / t_ai;
        const auto& rep = timed.result.classic;
        const bool reported = rep.timing_valid && std::isfinite(rep.speedup) && rep.speedup > 0.0 &&
                              std::abs(rep.speedup - rep.w_cfd / rep.w_ai) <= 1e-9 * rep.speedup &&
                              format_report(rep).find("S_W") != std::string::npos;
        return Outcome{ratio >= kMinSpeedup && reported,
                       fmt("datagen %.3fs vs rollout %.4fs at k=%d T=%d substeps=%d refine=%d: %.0fx (>= %.0fx); "
                           "refine=1 datagen %.3fs (%.1fx); reported S_W %.1f (W_CFD %.3fs, W_AI %.4fs)",
                           t_gen, t_ai, gen.k, gen.steps, gen.substeps, gen.refine, ratio, kMinSpeedup, t_coarse,
                           t_coarse / t_ai, rep.speedup, rep.w_cfd, rep.w_ai)};
    });

    suite.run(9, "determinism", [&] {
        need_runs();
        repeat.dir = work / "desk_seed1_repeat";
        auto cfg = desk_config(data, repeat.dir, 1);
        cfg.set("run.deterministic", "true");
        std::printf("repeating seed 1 in deterministic mode...\n");
        std::fflush(stdout);
        repeat.result = run_pipeline(cfg);
        const auto diff = differing_files(runs[0].dir, repeat.dir);
        const bool reports = same_report(runs[0].result.classic, repeat.result.classic) &&
                             same_report(runs[0].result.e2e, repeat.result.e2e);
        std::string detail = fmt("checkpoints and metrics files identical: %s; reports bit-identical: %s",
                                 diff.empty() ? "yes" : "no", reports ? "yes" : "no");
        for (const auto& f : diff) detail += "; differs: " + f;
        return Outcome{diff.empty() && reports, detail};
    });

    suite.run(10, "format round trip", [&] {
        need_runs();
        return round_trips(data, work, runs[0].dir);
    });

    return suite.finish();
}
