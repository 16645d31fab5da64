#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "latentflow/field.hpp"

namespace lf {

/// Velocity field on a k x k grid over the unit square.
///
/// Two discretizations of the same stream function are kept: cell-centered
/// components (central differences of psi, discretely divergence-free under
/// central differencing) and face-normal velocities (differences of psi at
/// cell corners, whose finite-volume divergence telescopes to zero). The
/// transport step only uses the face velocities.
struct VelocityField {
    int k = 0;
    double h = 0.0;
    std::vector<double> ux, uy;  ///< cell centered, k*k, row-major
    std::vector<double> face_x;  ///< normal velocity on vertical faces, k rows x (k+1)
    std::vector<double> face_y;  ///< normal velocity on horizontal faces, (k+1) rows x k

    double max_speed() const;
    /// Largest per-cell sum of outgoing face speeds; dt * this / h is the
    /// upwind Courant number.
    double max_outflow_rate() const;
};

struct GenConfig {
    int k = 32;
    int steps = 100;      ///< T, output frames (frame 1 is the initial state)
    int substeps = 10;    ///< coarse-equivalent solver steps per output frame
    double v = 0.01;      ///< inlet velocity
    double inlet_width = 0.25;
    std::uint64_t seed = 1;
    int refine = 1;       ///< internal grid refinement; frames are block averages
    double v_ref = 0.0;   ///< velocity that fixes dt; 0 means use v
    double courant = 0.5;
    double outlet_width = 0.35;
    double meander = 0.12;       ///< tube centerline meander amplitude (domain units)
    double recirculation = 0.08; ///< amplitude of the swirl term inside the tube
};

/// Stream-function velocity field for cfg (on cfg.k cells). Linear in cfg.v.
VelocityField make_velocity_field(const GenConfig& cfg);

/// Uniform field (ux, uy) on k cells; used by the periodic test harness.
VelocityField uniform_velocity_field(int k, double ux, double uy);

/// Max |central-difference divergence| over interior cells.
double max_interior_divergence(const VelocityField& field);

enum class Boundary {
    open,      ///< inflow faces on the top edge carry alpha = 1; other boundary fluxes per the field
    closed,    ///< every boundary face is a wall
    periodic,  ///< opposite boundary faces are identified
};

struct StepFlux {
    double inflow = 0.0;   ///< alpha volume entering through the boundary this step
    double outflow = 0.0;  ///< alpha volume leaving through the boundary this step
};

/// One first-order upwind finite-volume step of d(alpha)/dt + div(u alpha) = 0.
/// Throws ErrorCode::cfl_violation when dt * outflow rate exceeds h in any cell.
GridFrame step_transport(const GridFrame& frame, const VelocityField& field, double dt,
                         Boundary boundary = Boundary::open, StepFlux* flux = nullptr);

/// Time step the generator uses for cfg (fixed by v_ref, not by v).
double generator_dt(const GenConfig& cfg);

struct GeneratedSeries {
    SimulationSeries series;
    double wall_seconds = 0.0;
};

GeneratedSeries generate_series(const GenConfig& cfg);

/// One series per velocity, split with field_core's split_dataset.
/// `wall_seconds`, if non-null, receives per-series generation time.
Dataset generate_dataset(std::span<const double> velocities, const GenConfig& tmpl, int n_train,
                         std::uint64_t split_seed, std::vector<double>* wall_seconds = nullptr, int workers = 1);

/// Evenly spaced velocities in [lo, hi].
std::vector<double> velocity_range(int count, double lo, double hi);

// Dataset manifest (CSV with header).
struct ManifestEntry {
    int series_id = 0;
    double v = 0.0;
    std::string path;
    std::string split;  ///< "train" or "test"
    bool quasi_steady = true;
    double gen_seconds = 0.0;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    double v_min = 0.0, v_max = 0.0;
    int k = 0, steps = 0;
};

/// Writes one LFS1 archive per series plus manifest.csv into dir.
Manifest write_dataset(const Dataset& ds, const std::filesystem::path& dir, std::span<const double> wall_seconds);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);
/// Loads the archives named by a manifest (paths relative to its directory).
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace lf
