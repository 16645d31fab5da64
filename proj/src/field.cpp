#include "latentflow/field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "latentflow/bytes.hpp"
#include "latentflow/error.hpp"

namespace lf {

void SimulationSeries::validate() const {
    require(frames.size() >= 2, ErrorCode::invalid_argument, "series needs at least two frames");
    const int k0 = frames.front().k;
    for (const auto& f : frames) {
        require(f.k == k0 && f.values.size() == static_cast<std::size_t>(k0) * k0, ErrorCode::shape_mismatch,
                "series frames disagree on grid size");
    }
}

bool Dataset::outside_train_range(int id) const {
    const double v = series.at(static_cast<std::size_t>(id)).inlet_velocity;
    return v < v_min || v > v_max;
}

double l2_norm(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

void quantize_to_f32(GridFrame& frame) {
    for (double& v : frame.values) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Triangulation

namespace {

struct Pt {
    double x, y;
};

double orient(const Pt& a, const Pt& b, const Pt& c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// Positive when d lies inside the circumcircle of the counter-clockwise triangle abc.
double in_circle(const Pt& a, const Pt& b, const Pt& c, const Pt& d) {
    const double adx = a.x - d.x, ady = a.y - d.y;
    const double bdx = b.x - d.x, bdy = b.y - d.y;
    const double cdx = c.x - d.x, cdy = c.y - d.y;
    const double ad = adx * adx + ady * ady;
    const double bd = bdx * bdx + bdy * bdy;
    const double cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

}  // namespace

std::vector<Triangle> triangulate(std::span<const std::pair<double, double>> points) {
    const int n = static_cast<int>(points.size());
    require(n >= 3, ErrorCode::invalid_argument, "triangulation needs at least 3 points");

    {
        std::vector<std::pair<double, double>> sorted(points.begin(), points.end());
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::invalid_argument,
                "duplicate sample points");
    }

    double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
    for (const auto& [x, y] : points) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    }
    const double extent = std::max(x1 - x0, y1 - y0);
    require(extent > 0.0 && std::isfinite(extent), ErrorCode::degenerate, "sample points do not span a region");

    // Work in coordinates normalized to the unit box.
    std::vector<Pt> pts;
    pts.reserve(static_cast<std::size_t>(n) + 3);
    for (const auto& [x, y] : points) pts.push_back({(x - x0) / extent, (y - y0) / extent});

    double max_area = 0.0;
    for (int i = 2; i < n; ++i) max_area = std::max(max_area, std::abs(orient(pts[0], pts[1], pts[i])));
    if (max_area < 1e-12) {
        // pts[0] and pts[1] may be nearly coincident; retry against the farthest point from pts[0].
        int far = 1;
        double best = 0.0;
        for (int i = 1; i < n; ++i) {
            const double d = std::hypot(pts[i].x - pts[0].x, pts[i].y - pts[0].y);
            if (d > best) best = d, far = i;
        }
        for (int i = 1; i < n; ++i) max_area = std::max(max_area, std::abs(orient(pts[0], pts[far], pts[i])));
    }
    require(max_area >= 1e-12, ErrorCode::degenerate, "sample points are collinear");

    constexpr double big = 100.0;
    pts.push_back({0.5 - big, 0.5 - big});
    pts.push_back({0.5 + big, 0.5 - big});
    pts.push_back({0.5, 0.5 + big});

    struct Tri {
        int a, b, c;
    };
    std::vector<Tri> tris{{n, n + 1, n + 2}};
    std::vector<std::pair<int, int>> edges;
    std::vector<Tri> keep;

    for (int p = 0; p < n; ++p) {
        edges.clear();
        keep.clear();
        for (const Tri& t : tris) {
            if (in_circle(pts[t.a], pts[t.b], pts[t.c], pts[p]) > 0.0) {
                edges.emplace_back(t.a, t.b);
                edges.emplace_back(t.b, t.c);
                edges.emplace_back(t.c, t.a);
            } else {
                keep.push_back(t);
            }
        }
        for (std::size_t i = 0; i < edges.size(); ++i) {
            const auto [u, v] = edges[i];
            bool shared = false;
            for (std::size_t j = 0; j < edges.size() && !shared; ++j) {
                shared = j != i && edges[j].first == v && edges[j].second == u;
            }
            if (!shared) keep.push_back({u, v, p});
        }
        tris.swap(keep);
    }

    std::vector<Triangle> out;
    for (const Tri& t : tris) {
        if (t.a < n && t.b < n && t.c < n) out.push_back({t.a, t.b, t.c});
    }
    require(!out.empty(), ErrorCode::degenerate, "triangulation produced no triangles");
    return out;
}

ResampleResult resample_to_grid(const ScatteredSample& sample, int k, const BoundingBox& domain) {
    require(k >= 2, ErrorCode::invalid_argument, "resample_to_grid requires k >= 2");
    require(sample.points.size() == sample.values.size(), ErrorCode::invalid_argument,
            "sample points and values differ in length");
    require(sample.points.size() >= 3, ErrorCode::invalid_argument, "need at least 3 samples");
    require(domain.x1 > domain.x0 && domain.y1 > domain.y0, ErrorCode::invalid_argument, "empty domain");

    const auto tris = triangulate(sample.points);
    const auto& P = sample.points;
    const auto& V = sample.values;

    const double hx = (domain.x1 - domain.x0) / k;
    const double hy = (domain.y1 - domain.y0) / k;
    ResampleResult result{GridFrame(k, 0.0, hx), 0};

    for (int row = 0; row < k; ++row) {
        const double y = domain.y0 + (row + 0.5) * hy;
        for (int col = 0; col < k; ++col) {
            const double x = domain.x0 + (col + 0.5) * hx;
            bool found = false;
            double value = 0.0;
            for (const Triangle& t : tris) {
                const auto [ax, ay] = P[t.a];
                const auto [bx, by] = P[t.b];
                const auto [cx, cy] = P[t.c];
                if (x < std::min({ax, bx, cx}) || x > std::max({ax, bx, cx}) || y < std::min({ay, by, cy}) ||
                    y > std::max({ay, by, cy}))
                    continue;
                const double det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy);
                double wa = ((by - cy) * (x - cx) + (cx - bx) * (y - cy)) / det;
                double wb = ((cy - ay) * (x - cx) + (ax - cx) * (y - cy)) / det;
                double wc = 1.0 - wa - wb;
                constexpr double tol = -1e-12;
                if (wa < tol || wb < tol || wc < tol) continue;
                wa = std::max(wa, 0.0);
                wb = std::max(wb, 0.0);
                wc = std::max(wc, 0.0);
                const double sum = wa + wb + wc;
                value = (wa * V[t.a] + wb * V[t.b] + wc * V[t.c]) / sum;
                found = true;
                break;
            }
            if (!found) {
                std::size_t nearest = 0;
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < P.size(); ++i) {
                    const double d = (P[i].first - x) * (P[i].first - x) + (P[i].second - y) * (P[i].second - y);
                    if (d < best) best = d, nearest = i;
                }
                value = V[nearest];
                ++result.outside_hull_nodes;
            }
            result.frame.at(row, col) = value;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

SimulationSeries downsample_time(const SimulationSeries& series, int factor) {
    require(factor > 0, ErrorCode::invalid_argument, "downsample factor must be positive");
    const int steps = series.steps();
    require(steps >= factor, ErrorCode::invalid_argument, "series shorter than downsample factor");
    const int kept = steps / factor;
    require(kept >= 2, ErrorCode::invalid_argument, "downsampled series would have fewer than two frames");

    SimulationSeries out;
    out.inlet_velocity = series.inlet_velocity;
    out.series_id = series.series_id;
    out.source = series.source;
    out.not_steady = series.not_steady;
    out.frames.reserve(static_cast<std::size_t>(kept));
    for (int j = kept - 1; j >= 0; --j) out.frames.push_back(series.frame(steps - j * factor));
    return out;
}

NormalizedConfig normalize_config(double v, int t, double v_min, double v_max, int steps) {
    require(v_max > v_min, ErrorCode::degenerate, "training velocities span a zero-width range");
    require(steps >= 1 && t >= 1 && t <= steps, ErrorCode::invalid_argument, "timestep outside 1..T");
    return {(v - v_min) / (v_max - v_min), static_cast<double>(t) / steps};
}

NormalizedConfig normalize_config(double v, int t, const Dataset& dataset, int steps) {
    return normalize_config(v, t, dataset.v_min, dataset.v_max, steps);
}

Dataset split_dataset(std::vector<SimulationSeries> series, int n_train, std::uint64_t seed, bool keep_extremes) {
    const int n = static_cast<int>(series.size());
    require(n_train > 0 && n_train < n, ErrorCode::invalid_argument, "n_train must lie strictly between 0 and N");

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> forced;
    if (keep_extremes && n_train >= 2) {
        auto by_v = [&](int a, int b) { return series[a].inlet_velocity < series[b].inlet_velocity; };
        forced.push_back(*std::min_element(order.begin(), order.end(), by_v));
        forced.push_back(*std::max_element(order.begin(), order.end(), by_v));
        if (forced[0] == forced[1]) forced.pop_back();
    }
    std::vector<int> rest;
    for (int i : order) {
        if (std::find(forced.begin(), forced.end(), i) == forced.end()) rest.push_back(i);
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = rest.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(rest[i - 1], rest[j]);
    }

    Dataset ds;
    ds.train_ids = forced;
    for (int i : rest) (static_cast<int>(ds.train_ids.size()) < n_train ? ds.train_ids : ds.test_ids).push_back(i);
    std::sort(ds.train_ids.begin(), ds.train_ids.end());
    std::sort(ds.test_ids.begin(), ds.test_ids.end());
    for (int i = 0; i < n; ++i) series[static_cast<std::size_t>(i)].series_id = i;
    ds.series = std::move(series);

    ds.v_min = std::numeric_limits<double>::infinity();
    ds.v_max = -std::numeric_limits<double>::infinity();
    for (int i : ds.train_ids) {
        ds.v_min = std::min(ds.v_min, ds.series[i].inlet_velocity);
        ds.v_max = std::max(ds.v_max, ds.series[i].inlet_velocity);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// LFS1 archive

std::vector<unsigned char> encode_archive(const SimulationSeries& series) {
    series.validate();
    const auto k = static_cast<std::uint32_t>(series.k());
    const auto steps = static_cast<std::uint32_t>(series.steps());
    std::vector<unsigned char> out{'L', 'F', 'S', '1'};
    out.reserve(16 + static_cast<std::size_t>(steps) * k * k * 4);
    bytes::put_u32(out, k);
    bytes::put_u32(out, steps);
    bytes::put_f32(out, static_cast<float>(series.inlet_velocity));
    for (const auto& f : series.frames) {
        for (double v : f.values) bytes::put_f32(out, static_cast<float>(v));
    }
    return out;
}

void write_archive(const SimulationSeries& series, const std::filesystem::path& path) {
    bytes::write_file(path, encode_archive(series));
}

SimulationSeries decode_archive(std::span<const unsigned char> data) {
    require(data.size() >= 4 && std::equal(data.begin(), data.begin() + 4, "LFS1"), ErrorCode::bad_magic,
            "archive does not start with LFS1");
    require(data.size() >= 16, ErrorCode::truncated_payload, "archive header truncated");
    const std::uint32_t k = bytes::get_u32(data.data() + 4);
    const std::uint32_t steps = bytes::get_u32(data.data() + 8);
    require(k >= 1 && steps >= 2 && k <= 65536 && steps <= (1u << 24), ErrorCode::header_mismatch,
            "archive header declares invalid k or T");
    const std::uint64_t expected = 16 + static_cast<std::uint64_t>(steps) * k * k * 4;
    require(data.size() >= expected, ErrorCode::truncated_payload, "archive payload truncated");
    require(data.size() == expected, ErrorCode::header_mismatch, "archive payload longer than header declares");

    SimulationSeries s;
    s.inlet_velocity = bytes::get_f32(data.data() + 12);
    s.source = SeriesSource::ingested;
    s.frames.reserve(steps);
    const unsigned char* p = data.data() + 16;
    for (std::uint32_t t = 0; t < steps; ++t) {
        GridFrame f(static_cast<int>(k));
        for (double& v : f.values) {
            v = bytes::get_f32(p);
            p += 4;
        }
        s.frames.push_back(std::move(f));
    }
    return s;
}

SimulationSeries read_archive(const std::filesystem::path& path) {
    const auto data = bytes::read_file(path);
    return decode_archive(data);
}

}  // namespace lf
