#include "latentflow/rollout.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "latentflow/error.hpp"

namespace lf {

RolloutResult full_rollout(const Lvm& lvm, const Lin& lin, const Normalization& norm, const GridFrame& g1, double v,
                           int steps) {
    require(steps >= 2, ErrorCode::invalid_argument, "a full rollout needs T >= 2");
    require(lvm.c() == lin.c(), ErrorCode::shape_mismatch,
            "LVM latent dimension " + std::to_string(lvm.c()) + " differs from the LIN's " + std::to_string(lin.c()));
    RolloutResult r;
    r.v = v;
    const auto t0 = std::chrono::steady_clock::now();
    ag::NoGradGuard guard;
    const auto nc1 = norm(v, 1);
    LatentState l = inject_config(lvm.encode(g1), nc1.v_norm, nc1.t_norm);
    HistoryBuffer buffer = HistoryBuffer::start(lin.s(), l);
    r.latents.push_back(l);
    std::vector<double> norms{l2_norm(l.values)};
    for (int t = 2; t <= steps; ++t) {
        const auto nc = norm(v, t);
        l = advance(lin, buffer, nc.v_norm, nc.t_norm);
        const double n = l2_norm(l.values);
        norms.push_back(n);
        if (!std::isfinite(n)) {
            std::ostringstream msg;
            msg << "rollout produced a non-finite latent at step " << t << "; latent norm trace:";
            for (std::size_t i = 0; i < norms.size(); ++i) msg << ' ' << norms[i];
            fail(ErrorCode::diverged, msg.str());
        }
        r.latents.push_back(l);
    }
    std::vector<double> all;
    all.reserve(static_cast<std::size_t>(steps) * lvm.c());
    for (const auto& x : r.latents) all.insert(all.end(), x.values.begin(), x.values.end());
    const ag::Var dec = lvm.decode(ag::Var::constant({steps, lvm.c()}, std::move(all)));
    const std::size_t kk = static_cast<std::size_t>(lvm.k()) * lvm.k();
    for (int t = 0; t < steps; ++t) {
        GridFrame f(lvm.k(), 0.0, g1.cell_size);
        std::copy_n(dec.value().begin() + static_cast<std::ptrdiff_t>(t * kk), kk, f.values.begin());
        r.frames.push_back(std::move(f));
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

MetricsReport evaluate_rollouts(const Lvm& lvm, const Lin& lin, const Normalization& norm,
                                const std::vector<const SimulationSeries*>& series, const EvalOptions& opts,
                                std::vector<RolloutResult>* rollouts) {
    require(!series.empty(), ErrorCode::invalid_argument, "no test series to evaluate");
    MetricsReport report;
    double wall = 0.0;
    for (const SimulationSeries* s : series) {
        RolloutResult r = full_rollout(lvm, lin, norm, s->frame(1), s->inlet_velocity, s->steps());
        r.series_id = s->series_id;
        SeriesMetrics m;
        m.series_id = s->series_id;
        m.v = s->inlet_velocity;
        m.ia_true = interfacial_area(s->frames.back(), opts.iso);
        m.ia_pred = interfacial_area(r.frames.back(), opts.iso);
        const VfErrors vf = error_vf_series(r.frames, s->frames);
        m.vf_rel_err = vf.mean;
        m.vf_excluded_frames = vf.excluded_frames;
        report.rows.push_back(m);
        wall += r.wall_seconds;
        if (rollouts) rollouts->push_back(std::move(r));
    }
    report.w_ai = wall / static_cast<double>(series.size());
    report.w_cfd = opts.w_cfd;
    report.timing_valid = opts.report_timing && opts.w_cfd > 0.0;
    finalize_report(report);
    return report;
}

}  // namespace lf
