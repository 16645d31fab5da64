#include "latentflow/datagen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "latentflow/bytes.hpp"
#include "latentflow/error.hpp"

namespace lf {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;
constexpr double inlet_center = 0.5;
constexpr double outlet_center = 0.62;

double smoothstep(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

/// Stream function for unit velocity: a meandering tube carrying unit flux
/// from the top inlet strip to the bottom outlet strip, plus a swirl term
/// confined to the tube. Outside the tube psi is exactly 0 or 1, so the
/// flow there vanishes identically.
struct StreamFunction {
    const GenConfig& cfg;
    double meander;

    double operator()(double x, double y) const {
        const double width = cfg.outlet_width + (cfg.inlet_width - cfg.outlet_width) * y;
        const double center = outlet_center + (inlet_center - outlet_center) * y + meander * std::sin(two_pi * y);
        const double s = smoothstep((x - center) / width + 0.5);
        const double envelope = 4.0 * s * (1.0 - s);
        return s + cfg.recirculation * envelope * std::sin(2.0 * two_pi * y);
    }
};

double seeded_meander(const GenConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    const double jitter = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    return cfg.meander * (0.9 + 0.2 * jitter);
}

std::size_t idx(int row, int col, int stride) { return static_cast<std::size_t>(row) * stride + col; }

}  // namespace

double VelocityField::max_speed() const {
    double m = 0.0;
    for (std::size_t i = 0; i < ux.size(); ++i) m = std::max(m, std::hypot(ux[i], uy[i]));
    return m;
}

double VelocityField::max_outflow_rate() const {
    double m = 0.0;
    for (int r = 0; r < k; ++r) {
        for (int c = 0; c < k; ++c) {
            const double out = std::max(0.0, face_x[idx(r, c + 1, k + 1)]) + std::max(0.0, -face_x[idx(r, c, k + 1)]) +
                               std::max(0.0, face_y[idx(r + 1, c, k)]) + std::max(0.0, -face_y[idx(r, c, k)]);
            m = std::max(m, out);
        }
    }
    return m;
}

VelocityField make_velocity_field(const GenConfig& cfg) {
    require(cfg.k >= 8, ErrorCode::invalid_argument, "velocity field needs k >= 8");
    require(cfg.inlet_width > 0.0 && cfg.inlet_width <= 1.0, ErrorCode::invalid_argument, "inlet_width outside (0, 1]");
    const int k = cfg.k;
    const double h = 1.0 / k;
    const StreamFunction psi{cfg, seeded_meander(cfg)};

    VelocityField f;
    f.k = k;
    f.h = h;
    f.ux.assign(static_cast<std::size_t>(k) * k, 0.0);
    f.uy.assign(f.ux.size(), 0.0);
    f.face_x.assign(static_cast<std::size_t>(k) * (k + 1), 0.0);
    f.face_y.assign(static_cast<std::size_t>(k + 1) * k, 0.0);

    // Corner samples for face fluxes.
    std::vector<double> corner(static_cast<std::size_t>(k + 1) * (k + 1));
    for (int r = 0; r <= k; ++r)
        for (int c = 0; c <= k; ++c) corner[idx(r, c, k + 1)] = psi(c * h, r * h);
    for (int r = 0; r < k; ++r)
        for (int c = 0; c <= k; ++c)
            f.face_x[idx(r, c, k + 1)] = (corner[idx(r + 1, c, k + 1)] - corner[idx(r, c, k + 1)]) / h;
    for (int r = 0; r <= k; ++r)
        for (int c = 0; c < k; ++c)
            f.face_y[idx(r, c, k)] = -(corner[idx(r, c + 1, k + 1)] - corner[idx(r, c, k + 1)]) / h;

    // Cell-center samples with one ghost ring for central differences.
    const int m = k + 2;
    std::vector<double> center(static_cast<std::size_t>(m) * m);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) center[idx(r, c, m)] = psi((c - 0.5) * h, (r - 0.5) * h);
    for (int r = 0; r < k; ++r) {
        for (int c = 0; c < k; ++c) {
            const int R = r + 1, C = c + 1;
            f.ux[idx(r, c, k)] = (center[idx(R + 1, C, m)] - center[idx(R - 1, C, m)]) / (2.0 * h);
            f.uy[idx(r, c, k)] = -(center[idx(R, C + 1, m)] - center[idx(R, C - 1, m)]) / (2.0 * h);
        }
    }

    // Scaling last keeps the field exactly linear in v.
    for (auto* arr : {&f.ux, &f.uy, &f.face_x, &f.face_y})
        for (double& u : *arr) u *= cfg.v;
    return f;
}

VelocityField uniform_velocity_field(int k, double ux, double uy) {
    VelocityField f;
    f.k = k;
    f.h = 1.0 / k;
    f.ux.assign(static_cast<std::size_t>(k) * k, ux);
    f.uy.assign(f.ux.size(), uy);
    f.face_x.assign(static_cast<std::size_t>(k) * (k + 1), ux);
    f.face_y.assign(static_cast<std::size_t>(k + 1) * k, uy);
    return f;
}

double max_interior_divergence(const VelocityField& f) {
    const int k = f.k;
    double m = 0.0;
    for (int r = 1; r + 1 < k; ++r) {
        for (int c = 1; c + 1 < k; ++c) {
            const double div = (f.ux[idx(r, c + 1, k)] - f.ux[idx(r, c - 1, k)]) / (2.0 * f.h) +
                               (f.uy[idx(r + 1, c, k)] - f.uy[idx(r - 1, c, k)]) / (2.0 * f.h);
            m = std::max(m, std::abs(div));
        }
    }
    return m;
}

GridFrame step_transport(const GridFrame& frame, const VelocityField& field, double dt, Boundary boundary,
                         StepFlux* flux) {
    const int k = frame.k;
    require(field.k == k, ErrorCode::shape_mismatch, "velocity field and frame disagree on k");
    require(dt >= 0.0, ErrorCode::invalid_argument, "negative time step");
    const double h = field.h;
    const double* a = frame.values.data();

    // Effective face velocities after boundary treatment.
    std::vector<double> fx(field.face_x), fy(field.face_y);
    for (int r = 0; r < k; ++r) {
        if (boundary == Boundary::periodic) {
            fx[idx(r, k, k + 1)] = fx[idx(r, 0, k + 1)];
        } else {
            fx[idx(r, 0, k + 1)] = 0.0;
            fx[idx(r, k, k + 1)] = 0.0;
        }
    }
    for (int c = 0; c < k; ++c) {
        if (boundary == Boundary::periodic) {
            fy[idx(k, c, k)] = fy[idx(0, c, k)];
        } else if (boundary == Boundary::closed) {
            fy[idx(0, c, k)] = 0.0;
            fy[idx(k, c, k)] = 0.0;
        }
    }

    const double ratio = dt / h;
    for (int r = 0; r < k; ++r) {
        for (int c = 0; c < k; ++c) {
            const double out = std::max(0.0, fx[idx(r, c + 1, k + 1)]) + std::max(0.0, -fx[idx(r, c, k + 1)]) +
                               std::max(0.0, fy[idx(r + 1, c, k)]) + std::max(0.0, -fy[idx(r, c, k)]);
            if (out * ratio > 1.0 + 1e-12) {
                std::ostringstream msg;
                msg << "CFL violated at cell (" << r << ", " << c << "): Courant " << out * ratio;
                fail(ErrorCode::cfl_violation, msg.str());
            }
        }
    }

    GridFrame next = frame;
    double* b = next.values.data();
    StepFlux acc;

    // Vertical faces.
    for (int r = 0; r < k; ++r) {
        for (int c = 0; c <= k; ++c) {
            if (boundary == Boundary::periodic && c == k) continue;
            const double u = fx[idx(r, c, k + 1)];
            if (u == 0.0) continue;
            const int left = boundary == Boundary::periodic && c == 0 ? k - 1 : c - 1;
            const int right = c;
            // c == 0 / c == k faces only carry flux when periodic.
            const double up = u > 0.0 ? a[idx(r, left, k)] : a[idx(r, right, k)];
            const double moved = ratio * u * up;
            b[idx(r, left, k)] -= moved;
            b[idx(r, right, k)] += moved;
        }
    }
    // Horizontal faces.
    for (int r = 0; r <= k; ++r) {
        if (boundary == Boundary::periodic && r == k) continue;
        for (int c = 0; c < k; ++c) {
            const double u = fy[idx(r, c, k)];
            if (u == 0.0) continue;
            if (boundary == Boundary::open && (r == 0 || r == k)) {
                if (r == k) {
                    // Top edge: inflow carries liquid, outflow carries the cell value.
                    const double up = u < 0.0 ? 1.0 : a[idx(k - 1, c, k)];
                    const double moved = ratio * u * up;
                    b[idx(k - 1, c, k)] -= moved;
                    (moved < 0.0 ? acc.inflow : acc.outflow) += std::abs(moved);
                } else {
                    // Bottom edge: inflow is gas (alpha = 0).
                    const double up = u > 0.0 ? 0.0 : a[idx(0, c, k)];
                    const double moved = ratio * u * up;
                    b[idx(0, c, k)] += moved;
                    (moved > 0.0 ? acc.inflow : acc.outflow) += std::abs(moved);
                }
                continue;
            }
            const int below = boundary == Boundary::periodic && r == 0 ? k - 1 : r - 1;
            const int above = r;
            const double up = u > 0.0 ? a[idx(below, c, k)] : a[idx(above, c, k)];
            const double moved = ratio * u * up;
            b[idx(below, c, k)] -= moved;
            b[idx(above, c, k)] += moved;
        }
    }
    if (flux) *flux = acc;
    return next;
}

double generator_dt(const GenConfig& cfg) {
    GenConfig ref = cfg;
    ref.k = cfg.k * cfg.refine;
    ref.v = cfg.v_ref > 0.0 ? cfg.v_ref : std::abs(cfg.v);
    if (ref.v == 0.0) return 1.0;
    const VelocityField f = make_velocity_field(ref);
    return cfg.courant * f.h / f.max_outflow_rate();
}

GeneratedSeries generate_series(const GenConfig& cfg) {
    require(cfg.substeps >= 1, ErrorCode::invalid_argument, "substeps must be >= 1");
    require(cfg.steps >= 2, ErrorCode::invalid_argument, "T must be >= 2");
    require(cfg.refine >= 1, ErrorCode::invalid_argument, "refine must be >= 1");
    require(cfg.courant > 0.0 && cfg.courant <= 0.9, ErrorCode::invalid_argument, "courant must lie in (0, 0.9]");

    const auto start = std::chrono::steady_clock::now();
    GenConfig fine = cfg;
    fine.k = cfg.k * cfg.refine;
    const VelocityField field = make_velocity_field(fine);
    const double dt = generator_dt(cfg);
    const int r = cfg.refine;

    auto coarsen = [&](const GridFrame& g) {
        GridFrame out(cfg.k);
        const double inv = 1.0 / (r * r);
        for (int row = 0; row < cfg.k; ++row)
            for (int col = 0; col < cfg.k; ++col) {
                double s = 0.0;
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < r; ++j) s += g.at(row * r + i, col * r + j);
                out.at(row, col) = s * inv;
            }
        quantize_to_f32(out);
        return out;
    };

    GeneratedSeries result;
    SimulationSeries& s = result.series;
    s.inlet_velocity = cfg.v;
    s.source = SeriesSource::synthetic;
    s.frames.reserve(static_cast<std::size_t>(cfg.steps));

    GridFrame state(fine.k);
    s.frames.push_back(coarsen(state));
    const int per_frame = cfg.substeps * r;
    for (int t = 1; t < cfg.steps; ++t) {
        for (int i = 0; i < per_frame; ++i) state = step_transport(state, field, dt, Boundary::open);
        s.frames.push_back(coarsen(state));
    }

    // Quasi-steady check over the final 5% of frames.
    const int tail = std::max(1, static_cast<int>(std::ceil(0.05 * cfg.steps)));
    double change = 0.0;
    for (int t = cfg.steps - tail + 1; t <= cfg.steps; ++t) {
        const auto& a = s.frame(t).values;
        const auto& b = s.frame(t - 1).values;
        double d = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
        change += std::sqrt(d);
    }
    change /= tail;
    const double final_norm = l2_norm(s.frames.back().values);
    s.not_steady = final_norm > 0.0 && change >= 0.01 * final_norm;

    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

std::vector<double> velocity_range(int count, double lo, double hi) {
    require(count >= 1, ErrorCode::invalid_argument, "velocity count must be positive");
    std::vector<double> v(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) v[i] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
    return v;
}

Dataset generate_dataset(std::span<const double> velocities, const GenConfig& tmpl, int n_train,
                         std::uint64_t split_seed, std::vector<double>* wall_seconds, int workers) {
    std::vector<double> vs;
    for (double v : velocities) vs.push_back(static_cast<double>(static_cast<float>(v)));
    {
        std::vector<double> sorted = vs;
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::invalid_argument,
                "duplicate inlet velocities");
    }
    double v_ref = 0.0;
    for (double v : vs) v_ref = std::max(v_ref, std::abs(v));

    std::vector<GeneratedSeries> out(vs.size());
    auto work = [&](std::size_t i) {
        GenConfig cfg = tmpl;
        cfg.v = vs[i];
        cfg.v_ref = v_ref;
        out[i] = generate_series(cfg);
    };
    workers = std::max(1, workers);
    if (workers == 1) {
        for (std::size_t i = 0; i < vs.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = static_cast<std::size_t>(w); i < vs.size(); i += static_cast<std::size_t>(workers))
                        work(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<SimulationSeries> series;
    if (wall_seconds) wall_seconds->clear();
    for (auto& g : out) {
        series.push_back(std::move(g.series));
        if (wall_seconds) wall_seconds->push_back(g.wall_seconds);
    }
    return split_dataset(std::move(series), n_train, split_seed);
}

// ---------------------------------------------------------------------------
// Manifest

Manifest write_dataset(const Dataset& ds, const std::filesystem::path& dir, std::span<const double> wall_seconds) {
    std::filesystem::create_directories(dir);
    Manifest m;
    m.v_min = ds.v_min;
    m.v_max = ds.v_max;
    m.k = ds.k();
    m.steps = ds.steps();
    for (std::size_t i = 0; i < ds.series.size(); ++i) {
        const auto& s = ds.series[i];
        ManifestEntry e;
        e.series_id = s.series_id;
        e.v = s.inlet_velocity;
        char name[32];
        std::snprintf(name, sizeof name, "series_%03d.lfs", s.series_id);
        e.path = name;
        e.split = std::find(ds.train_ids.begin(), ds.train_ids.end(), static_cast<int>(i)) != ds.train_ids.end()
                      ? "train"
                      : "test";
        e.quasi_steady = !s.not_steady;
        e.gen_seconds = i < wall_seconds.size() ? wall_seconds[i] : 0.0;
        write_archive(s, dir / e.path);
        m.entries.push_back(e);
    }
    write_manifest(m, dir / "manifest.csv");
    return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::ostringstream out;
    out.precision(17);
    out << "series_id,v,path,split,quasi_steady,gen_seconds\n";
    for (const auto& e : m.entries) {
        out << e.series_id << ',' << e.v << ',' << e.path << ',' << e.split << ',' << (e.quasi_steady ? 1 : 0) << ','
            << e.gen_seconds << '\n';
    }
    bytes::write_text(path, out.str());
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::istringstream in(bytes::read_text(path));
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line.rfind("series_id,", 0) == 0, ErrorCode::bad_magic,
            "not a dataset manifest: " + path.string());
    Manifest m;
    m.v_min = std::numeric_limits<double>::infinity();
    m.v_max = -m.v_min;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<std::string> cols;
        while (std::getline(row, field, ',')) cols.push_back(field);
        require(cols.size() == 6, ErrorCode::header_mismatch, "malformed manifest row: " + line);
        ManifestEntry e;
        e.series_id = std::stoi(cols[0]);
        e.v = std::stod(cols[1]);
        e.path = cols[2];
        e.split = cols[3];
        e.quasi_steady = cols[4] == "1";
        e.gen_seconds = std::stod(cols[5]);
        require(e.split == "train" || e.split == "test", ErrorCode::header_mismatch, "bad split: " + e.split);
        if (e.split == "train") {
            m.v_min = std::min(m.v_min, e.v);
            m.v_max = std::max(m.v_max, e.v);
        }
        m.entries.push_back(e);
    }
    return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    const Manifest m = read_manifest(manifest_path);
    const auto dir = manifest_path.parent_path();
    Dataset ds;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        SimulationSeries s = read_archive(dir / e.path);
        s.series_id = e.series_id;
        s.source = SeriesSource::synthetic;
        s.not_steady = !e.quasi_steady;
        s.inlet_velocity = e.v;
        if (!ds.series.empty())
            require(s.k() == ds.k() && s.steps() == ds.steps(), ErrorCode::shape_mismatch,
                    "dataset archives disagree on k or T");
        ds.series.push_back(std::move(s));
        (e.split == "train" ? ds.train_ids : ds.test_ids).push_back(static_cast<int>(i));
    }
    ds.v_min = m.v_min;
    ds.v_max = m.v_max;
    return ds;
}

}  // namespace lf
