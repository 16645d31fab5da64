#pragma once

#include <vector>

#include "latentflow/field.hpp"
#include "latentflow/lin.hpp"
#include "latentflow/lvm.hpp"
#include "latentflow/metrics.hpp"

namespace lf {

struct RolloutResult {
    std::vector<GridFrame> frames;     ///< g_hat_1..g_hat_T
    std::vector<LatentState> latents;  ///< l_hat_1..l_hat_T
    double wall_seconds = 0.0;         ///< encode + advance + decode
    int series_id = 0;
    double v = 0.0;
};

/// Encodes g1, injects (v_norm, 1/T), advances T-1 times re-injecting the
/// config slots, and decodes every latent. Throws ErrorCode::diverged with
/// the step index and latent norm trace if a latent becomes non-finite.
RolloutResult full_rollout(const Lvm& lvm, const Lin& lin, const Normalization& norm, const GridFrame& g1, double v,
                           int steps);

struct EvalOptions {
    double iso = 0.5;
    double w_cfd = 0.0;          ///< reference seconds; <= 0 leaves S_W unset
    bool report_timing = true;   ///< false omits W_AI and S_W from the report
};

/// Full rollouts on the given series, IA at the final frame, and the
/// aggregated errors.
MetricsReport evaluate_rollouts(const Lvm& lvm, const Lin& lin, const Normalization& norm,
                                const std::vector<const SimulationSeries*>& series, const EvalOptions& opts,
                                std::vector<RolloutResult>* rollouts = nullptr);

}  // namespace lf
