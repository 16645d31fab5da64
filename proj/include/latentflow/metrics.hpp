#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "latentflow/field.hpp"

namespace lf {

/// Length of the iso-level curve of `frame` (marching squares over the
/// cell-center lattice, linear edge interpolation), scaled by cell_size.
/// Saddle cells connect the corners that agree with the bilinear center value.
double interfacial_area(const GridFrame& frame, double iso = 0.5);

/// Relative error |pred - truth| / |truth| between frames; throws when the
/// truth has zero norm.
double frame_relative_error(const GridFrame& pred, const GridFrame& truth);

struct SeriesMetrics {
    int series_id = 0;
    double v = 0.0;
    double ia_true = 0.0;
    double ia_pred = 0.0;
    double ia_rel_err = 0.0;
    double vf_rel_err = 0.0;
    bool ia_excluded = false;     ///< IA(g_T) == 0, relative error undefined
    int vf_excluded_frames = 0;   ///< zero-norm truth frames skipped in Error_VF
};

struct MetricsReport {
    std::vector<SeriesMetrics> rows;
    double error_ia = 0.0;
    double error_vf = 0.0;
    double w_ai = 0.0;       ///< mean rollout wall-clock seconds
    double w_cfd = 0.0;      ///< reference simulation seconds
    double speedup = 0.0;    ///< S_W
    bool timing_valid = false;
    std::string provenance;  ///< "key=value;..." model and manifest hashes
};

struct IaErrors {
    std::vector<double> per_series;   ///< NaN where excluded
    std::vector<bool> excluded;
    double mean = 0.0;
};

/// Mean relative IA error over series; series whose true IA is 0 are excluded.
IaErrors error_ia(const std::vector<double>& ia_pred, const std::vector<double>& ia_true);

struct VfErrors {
    double mean = 0.0;
    int excluded_frames = 0;
};

/// Mean per-frame relative error of one predicted series; zero-norm truth
/// frames are skipped and counted.
VfErrors error_vf_series(const std::vector<GridFrame>& pred, const std::vector<GridFrame>& truth);

/// Mean of per-series values; the aggregate used for Error_VF.
double mean_of(const std::vector<double>& values);

double measure_speedup(double w_cfd, double w_ai);

/// Fills the per-series IA fields and aggregates of a report.
void finalize_report(MetricsReport& report);

/// CSV table: per-series rows, then footer rows. When timing is invalid
/// (deterministic mode) the W_AI / S_W footers are omitted.
std::string format_report(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace lf
