#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lf {

/// k x k volume-fraction field on a uniform grid, row-major (row 0 is the
/// bottom of the domain).
struct GridFrame {
    int k = 0;
    std::vector<double> values;
    double cell_size = 1.0;

    GridFrame() = default;
    GridFrame(int k_, double fill = 0.0, double cell = 1.0)
        : k(k_), values(static_cast<std::size_t>(k_) * k_, fill), cell_size(cell) {}

    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * k + col]; }
    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * k + col]; }
    std::size_t size() const { return values.size(); }

    friend bool operator==(const GridFrame&, const GridFrame&) = default;
};

enum class SeriesSource { synthetic, ingested };

struct SimulationSeries {
    std::vector<GridFrame> frames;
    double inlet_velocity = 0.0;
    int series_id = 0;
    SeriesSource source = SeriesSource::synthetic;
    /// Set by the generator when the quasi-steady criterion is not met.
    bool not_steady = false;

    int k() const { return frames.empty() ? 0 : frames.front().k; }
    int steps() const { return static_cast<int>(frames.size()); }
    /// Frame at 1-indexed timestep t.
    const GridFrame& frame(int t) const { return frames.at(static_cast<std::size_t>(t - 1)); }

    /// Throws unless all frames share k and T >= 2.
    void validate() const;
};

struct Dataset {
    std::vector<SimulationSeries> series;
    std::vector<int> train_ids;
    std::vector<int> test_ids;
    double v_min = 0.0;
    double v_max = 0.0;

    int k() const { return series.empty() ? 0 : series.front().k(); }
    int steps() const { return series.empty() ? 0 : series.front().steps(); }
    bool outside_train_range(int id) const;
};

struct ScatteredSample {
    std::vector<std::pair<double, double>> points;
    std::vector<double> values;
};

struct BoundingBox {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

struct ResampleResult {
    GridFrame frame;
    /// Grid nodes outside the sample hull that took the nearest sample's value.
    std::size_t outside_hull_nodes = 0;
};

/// Triangle of sample indices produced by triangulate().
struct Triangle {
    int a, b, c;
};

/// Delaunay triangulation (Bowyer-Watson). Throws ErrorCode::degenerate for
/// collinear input and invalid_argument for duplicate points.
std::vector<Triangle> triangulate(std::span<const std::pair<double, double>> points);

/// Barycentric linear interpolation of scattered samples onto the centers
/// of a k x k grid covering `domain`.
ResampleResult resample_to_grid(const ScatteredSample& sample, int k, const BoundingBox& domain = {});

/// Keeps every factor-th frame counted backward from the last one; the
/// output has floor(T / factor) frames.
SimulationSeries downsample_time(const SimulationSeries& series, int factor);

struct NormalizedConfig {
    double v_norm;
    double t_norm;
};

NormalizedConfig normalize_config(double v, int t, double v_min, double v_max, int steps);
NormalizedConfig normalize_config(double v, int t, const Dataset& dataset, int steps);

/// Constants a trained model needs to reproduce the (v, t) normalization.
struct Normalization {
    double v_min = 0.0;
    double v_max = 1.0;
    int steps = 1;
    NormalizedConfig operator()(double v, int t) const { return normalize_config(v, t, v_min, v_max, steps); }
    static Normalization of(const Dataset& ds) { return {ds.v_min, ds.v_max, ds.steps()}; }
};

/// Deterministic train/test split. With keep_extremes the lowest- and
/// highest-velocity series always land in the training split, so every
/// test velocity is interior to the training range.
Dataset split_dataset(std::vector<SimulationSeries> series, int n_train, std::uint64_t seed,
                      bool keep_extremes = true);

// LFS1 frame archive.
void write_archive(const SimulationSeries& series, const std::filesystem::path& path);
std::vector<unsigned char> encode_archive(const SimulationSeries& series);
SimulationSeries read_archive(const std::filesystem::path& path);
SimulationSeries decode_archive(std::span<const unsigned char> bytes);

/// Rounds every value to the nearest float32, so the frame survives an
/// archive round trip unchanged.
void quantize_to_f32(GridFrame& frame);

double l2_norm(std::span<const double> x);

}  // namespace lf
