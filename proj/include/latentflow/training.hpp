#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "latentflow/field.hpp"
#include "latentflow/lin.hpp"
#include "latentflow/lvm.hpp"

namespace lf {

enum class LossKind { relative_error, rmse };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

/// ||pred - target|| / ||target||; throws when the target has zero norm.
double loss_re(std::span<const double> pred, std::span<const double> target);
/// sqrt(mean((pred - target)^2)).
double loss_rmse(std::span<const double> pred, std::span<const double> target);

struct TrainConfig {
    LossKind loss = LossKind::relative_error;
    int w = 1;          ///< rollout window
    int batch = 32;     ///< windows (or frames) per batch
    int epochs = 10;
    double lr = 1e-3;
    int patience = 6;
    double factor = 0.1;
    double threshold = 1e-6;
    /// When > 0 the learning rate is multiplied by this every epoch instead
    /// of following the plateau schedule.
    double epoch_decay = 0.0;
    std::uint64_t seed = 1;
    bool f64 = false;   ///< keep parameters in double precision
    int heldout_windows = 64;  ///< cap on held-out windows per evaluation (0 = all)
    bool verbose = false;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double heldout_loss = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;
    std::uint64_t checksum = 0;  ///< parameter checksum after training
    bool diverged = false;
    std::string message;
    int loss_terms_per_batch = 0;

    /// One line per epoch: epoch,train_loss,heldout_loss,lr,seconds.
    std::string to_text() const;
};

struct PlateauState {
    double lr = 1e-3;
    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
    int patience = 6;
    double factor = 0.1;
    double threshold = 1e-6;
};

/// Multiplies lr by factor once `patience` consecutive epochs fail to improve
/// the best loss by more than threshold; returns the new lr.
double plateau_schedule(PlateauState& state, double epoch_loss);

/// Autoencoder training on every nonzero train frame, with the config slots
/// injected between encoder and decoder. Throws for the SVD family.
TrainReport train_lvm(Lvm& lvm, const Dataset& ds, const TrainConfig& cfg);

struct LatentSeries {
    int series_id = 0;
    double v = 0.0;
    std::vector<LatentState> latents;  ///< l_1..l_T, slots injected
};

/// Encodes every series of the dataset (in dataset order).
std::vector<LatentSeries> encode_dataset(const Lvm& lvm, const Dataset& ds, const Normalization& norm);

/// Window start: series index into the list and 1-indexed timestep t; the
/// window predicts t+1..t+w from history ending at t.
struct Window {
    int series = 0;
    int t = 1;
};

/// All window starts of length w over the given series lengths.
std::vector<Window> enumerate_windows(std::span<const int> lengths, int w);

/// Mean windowed-rollout loss over latents; `terms` receives the number of
/// per-step loss terms (batch * w).
ag::Var lin_window_loss(const Lin& lin, std::span<const LatentSeries> data, std::span<const Window> windows, int w,
                        LossKind loss, int* terms = nullptr);

/// Mean windowed-rollout loss on decoded frames: history encoded by the LVM,
/// rolled out by the LIN, decoded and compared with ground-truth frames.
ag::Var e2e_window_loss(const Lvm& lvm, const Lin& lin, std::span<const SimulationSeries* const> data,
                        const Normalization& norm, std::span<const Window> windows, int w, LossKind loss,
                        int* terms = nullptr);

TrainReport train_lin(Lin& lin, std::span<const LatentSeries> train, std::span<const LatentSeries> heldout,
                      const TrainConfig& cfg);

/// Joint training of encoder, LIN and decoder through the windowed rollout.
TrainReport train_e2e(Lvm& lvm, Lin& lin, const Dataset& ds, const TrainConfig& cfg);

}  // namespace lf
