#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "latentflow/datagen.hpp"
#include "latentflow/lin.hpp"
#include "latentflow/lvm.hpp"
#include "latentflow/metrics.hpp"
#include "latentflow/training.hpp"

namespace lf {

/// Flat "section.key" -> value configuration with defaults for every known
/// key. Files use INI sections; sweep axes live in [sweep] as
/// `axis.<section.key> = v1; v2; ...`.
class ExperimentConfig {
public:
    ExperimentConfig();

    static ExperimentConfig from_file(const std::filesystem::path& path);
    static ExperimentConfig from_string(const std::string& text);

    /// Sets a known key (or a sweep axis); unknown keys throw.
    void set(const std::string& key, const std::string& value);
    /// Parses "key=value".
    void set_assignment(const std::string& assignment);
    const std::string& get(const std::string& key) const;

    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    std::vector<int> get_ints(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    /// Sweep axes in file order: (key, values).
    const std::vector<std::pair<std::string, std::vector<std::string>>>& axes() const { return axes_; }

    /// INI text of every key; reparsing it gives the same config.
    std::string to_ini() const;
    /// Hash over the keys that affect results (excludes paths and worker counts).
    std::string hash() const;
    /// Hash over the dataset section only.
    std::string dataset_hash() const;

    std::filesystem::path output_dir() const;
    /// Dataset directory: run.data, else $LATENTFLOW_DATA_ROOT/<dataset hash>,
    /// else <output>/data.
    std::filesystem::path data_dir() const;

    GenConfig gen_config() const;
    std::vector<double> velocities() const;
    LvmSpec lvm_spec() const;
    LinSpec lin_spec() const;
    /// The patch LVM defaults to a 0.95 per-epoch decay when lvm.epoch_decay is 0.
    TrainConfig train_config(const std::string& section) const;

private:
    std::map<std::string, std::string> values_;
    std::vector<std::pair<std::string, std::vector<std::string>>> axes_;
};

/// Generates (or reuses) the dataset and writes archives plus manifest.csv.
Manifest cmd_gen_data(const ExperimentConfig& cfg, int workers = 1);

enum class Stage { lvm, lin, e2e };
Stage stage_from_string(const std::string& s);

struct TrainOutcome {
    std::string checkpoint_hash;   ///< hash of the primary checkpoint written
    TrainReport report;
};

/// Trains one stage into the output directory. Checkpoints embed the
/// config hash and upstream hashes.
TrainOutcome cmd_train(const ExperimentConfig& cfg, Stage stage);

/// Full rollouts over the test split with the classic ("classic") or
/// end-to-end ("e2e") pair; writes metrics_<which>.csv.
MetricsReport cmd_evaluate(const ExperimentConfig& cfg, const std::string& which = "classic");

struct PipelineResult {
    MetricsReport classic;
    bool has_e2e = false;
    MetricsReport e2e;
    double lvm_error = 0.0;  ///< held-out LVM reconstruction error
};

/// Runs gen-data, the training stages and evaluation for one configuration
/// (the e2e stage only when e2e.enabled).
PipelineResult run_pipeline(const ExperimentConfig& cfg, int workers = 1);

struct SweepRow {
    int cell = 0;
    int replicate = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> axis_values;
    bool ok = false;
    double error_ia = 0.0;
    double error_vf = 0.0;
    bool has_e2e = false;
    double e2e_error_ia = 0.0;
    double e2e_error_vf = 0.0;
    double lvm_error = 0.0;
    std::string message;
};

struct SweepSummaryRow {
    int cell = 0;
    std::vector<std::string> axis_values;
    int runs = 0;
    int ok = 0;
    double error_ia_mean = 0.0, error_ia_std = 0.0;
    double error_vf_mean = 0.0, error_vf_std = 0.0;
    int e2e_ok = 0;
    double e2e_error_ia_mean = 0.0, e2e_error_ia_std = 0.0;
    double e2e_error_vf_mean = 0.0, e2e_error_vf_std = 0.0;
    double lvm_error_mean = 0.0, lvm_error_std = 0.0;
    std::string architecture;  ///< "<lvm family>/<lin family>"
    bool best = false;
};

struct SweepResult {
    std::vector<std::string> axis_names;
    std::vector<std::vector<std::string>> cells;  ///< axis values per cell
    std::vector<std::string> architectures;       ///< per cell
    std::vector<SweepRow> rows;
    std::vector<SweepSummaryRow> summary;
};

/// Cartesian sweep over the config's axes with sweep.replicates derived seeds;
/// cells run in parallel up to `workers`. Failed cells become failed rows.
SweepResult cmd_sweep(const ExperimentConfig& cfg, int workers = 1);

/// Per-cell mean and sample standard deviation; flags the best cell (lowest
/// mean Error_VF) of each architecture.
std::vector<SweepSummaryRow> summarize_sweep(const SweepResult& sweep);

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Reads sweep_plan.csv and sweep_rows.csv back from a sweep directory.
SweepResult read_sweep(const std::filesystem::path& dir);

/// Writes report/summary.txt plus table and figure CSVs for a run or sweep
/// directory; returns the summary text.
std::string cmd_report(const std::filesystem::path& run_dir);

/// Mean L_RE of decode(inject(encode(g))) over the nonzero frames of `ids`.
double lvm_reconstruction_error(const Lvm& lvm, const Dataset& ds, const std::vector<int>& ids);

}  // namespace lf
