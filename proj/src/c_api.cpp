#include "latentflow/latentflow.h"

#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "latentflow/checkpoint.hpp"
#include "latentflow/error.hpp"
#include "latentflow/harness.hpp"
#include "latentflow/metrics.hpp"
#include "latentflow/rollout.hpp"

struct lf_config {
    lf::ExperimentConfig cfg;
};

struct lf_series {
    lf::SimulationSeries series;
};

struct lf_surrogate {
    std::unique_ptr<lf::Lvm> lvm;
    std::unique_ptr<lf::Lin> lin;
    lf::Normalization norm;
};

namespace {

thread_local std::string g_last_error;

template <class F>
lf_status guarded(F&& f) noexcept {
    try {
        f();
        g_last_error.clear();
        return LF_OK;
    } catch (const lf::Error& e) {
        g_last_error = e.what();
        return static_cast<lf_status>(static_cast<int>(e.code()));
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return LF_ERR_INTERNAL;
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = e.what();
        return LF_ERR_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return LF_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    if (!p) lf::fail(lf::ErrorCode::invalid_argument, std::string(what) + " is null");
}

void copy_out(const std::string& s, char* buf, size_t len) {
    if (!buf || len == 0) return;
    const size_t n = std::min(len - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
}

void fill(const lf::MetricsReport& r, lf_metrics* out) {
    if (!out) return;
    out->error_ia = r.error_ia;
    out->error_vf = r.error_vf;
    out->w_ai = r.w_ai;
    out->w_cfd = r.w_cfd;
    out->speedup = r.speedup;
    out->timing_valid = r.timing_valid ? 1 : 0;
    out->series = static_cast<int>(r.rows.size());
}

int workers_or_one(int workers) { return workers < 1 ? 1 : workers; }

}  // namespace

extern "C" {

const char* lf_version(void) { return "1.0.0"; }

const char* lf_status_name(lf_status status) {
    if (status == LF_OK) return "ok";
    if (status < LF_ERR_INVALID_ARGUMENT || status > LF_ERR_INTERNAL) return "unknown";
    return lf::error_code_name(static_cast<lf::ErrorCode>(static_cast<int>(status)));
}

const char* lf_last_error(void) { return g_last_error.c_str(); }

lf_status lf_config_new(lf_config** out) {
    return guarded([&] {
        need(out, "output handle");
        *out = new lf_config{};
    });
}

void lf_config_free(lf_config* cfg) { delete cfg; }

lf_status lf_config_load(lf_config* cfg, const char* path) {
    return guarded([&] {
        need(cfg, "config");
        need(path, "path");
        cfg->cfg = lf::ExperimentConfig::from_file(path);
    });
}

lf_status lf_config_set(lf_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        need(cfg, "config");
        need(key, "key");
        need(value, "value");
        cfg->cfg.set(key, value);
    });
}

lf_status lf_config_assign(lf_config* cfg, const char* assignment) {
    return guarded([&] {
        need(cfg, "config");
        need(assignment, "assignment");
        cfg->cfg.set_assignment(assignment);
    });
}

lf_status lf_config_get(const lf_config* cfg, const char* key, char* buf, size_t len, size_t* needed) {
    return guarded([&] {
        need(cfg, "config");
        need(key, "key");
        const std::string& v = cfg->cfg.get(key);
        if (needed) *needed = v.size() + 1;
        copy_out(v, buf, len);
    });
}

lf_status lf_config_hash(const lf_config* cfg, char* buf, size_t len) {
    return guarded([&] {
        need(cfg, "config");
        copy_out(cfg->cfg.hash(), buf, len);
    });
}

lf_status lf_gen_data(const lf_config* cfg, int workers) {
    return guarded([&] {
        need(cfg, "config");
        lf::cmd_gen_data(cfg->cfg, workers_or_one(workers));
    });
}

lf_status lf_train(const lf_config* cfg, const char* stage, char* hash_buf, size_t hash_len) {
    return guarded([&] {
        need(cfg, "config");
        need(stage, "stage");
        const auto outcome = lf::cmd_train(cfg->cfg, lf::stage_from_string(stage));
        copy_out(outcome.checkpoint_hash, hash_buf, hash_len);
    });
}

lf_status lf_evaluate(const lf_config* cfg, const char* which, lf_metrics* out) {
    return guarded([&] {
        need(cfg, "config");
        fill(lf::cmd_evaluate(cfg->cfg, which ? which : "classic"), out);
    });
}

lf_status lf_run_pipeline(const lf_config* cfg, int workers, lf_metrics* classic, lf_metrics* e2e, int* has_e2e) {
    return guarded([&] {
        need(cfg, "config");
        const auto res = lf::run_pipeline(cfg->cfg, workers_or_one(workers));
        fill(res.classic, classic);
        if (res.has_e2e) fill(res.e2e, e2e);
        if (has_e2e) *has_e2e = res.has_e2e ? 1 : 0;
    });
}

lf_status lf_sweep(const lf_config* cfg, int workers, lf_sweep_stats* out) {
    return guarded([&] {
        need(cfg, "config");
        const auto res = lf::cmd_sweep(cfg->cfg, workers_or_one(workers));
        if (!out) return;
        out->cells = static_cast<int>(res.cells.size());
        out->runs = static_cast<int>(res.rows.size());
        out->runs_ok = 0;
        for (const auto& r : res.rows) out->runs_ok += r.ok ? 1 : 0;
        out->runs_failed = out->runs - out->runs_ok;
    });
}

lf_status lf_report(const char* run_dir, char* buf, size_t len) {
    return guarded([&] {
        need(run_dir, "run directory");
        copy_out(lf::cmd_report(run_dir), buf, len);
    });
}

lf_status lf_series_read(const char* path, lf_series** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "output handle");
        auto s = std::make_unique<lf_series>();
        s->series = lf::read_archive(path);
        *out = s.release();
    });
}

lf_status lf_series_write(const lf_series* series, const char* path) {
    return guarded([&] {
        need(series, "series");
        need(path, "path");
        lf::write_archive(series->series, path);
    });
}

void lf_series_free(lf_series* series) { delete series; }

int lf_series_k(const lf_series* series) { return series ? series->series.k() : 0; }

int lf_series_steps(const lf_series* series) { return series ? series->series.steps() : 0; }

double lf_series_velocity(const lf_series* series) { return series ? series->series.inlet_velocity : 0.0; }

lf_status lf_series_frame(const lf_series* series, int t, double* out) {
    return guarded([&] {
        need(series, "series");
        need(out, "output buffer");
        lf::require(t >= 1 && t <= series->series.steps(), lf::ErrorCode::invalid_argument, "timestep out of range");
        const auto& v = series->series.frame(t).values;
        std::copy(v.begin(), v.end(), out);
    });
}

lf_status lf_surrogate_load(const char* lvm_path, const char* lin_path, lf_surrogate** out) {
    return guarded([&] {
        need(lvm_path, "LVM path");
        need(lin_path, "LIN path");
        need(out, "output handle");
        const lf::Checkpoint lvm_ck = lf::read_checkpoint(lvm_path);
        const lf::Checkpoint lin_ck = lf::read_checkpoint(lin_path);
        auto s = std::make_unique<lf_surrogate>();
        s->lvm = lf::lvm_from_checkpoint(lvm_ck);
        s->lin = lf::lin_from_checkpoint(lin_ck);
        s->norm = lf::normalization_from_checkpoint(lvm_ck);
        lf::require(s->lvm->c() == s->lin->c(), lf::ErrorCode::shape_mismatch, "LVM and LIN latent sizes differ");
        *out = s.release();
    });
}

void lf_surrogate_free(lf_surrogate* s) { delete s; }

int lf_surrogate_k(const lf_surrogate* s) { return s ? s->lvm->k() : 0; }

int lf_surrogate_steps(const lf_surrogate* s) { return s ? s->norm.steps : 0; }

lf_status lf_surrogate_rollout(const lf_surrogate* s, const double* g1, double v, int steps, double* frames,
                               double* seconds) {
    return guarded([&] {
        need(s, "surrogate");
        need(g1, "initial frame");
        need(frames, "output buffer");
        const int k = s->lvm->k();
        lf::GridFrame first(k);
        std::copy(g1, g1 + static_cast<std::ptrdiff_t>(k) * k, first.values.begin());
        const auto res = lf::full_rollout(*s->lvm, *s->lin, s->norm, first, v, steps);
        double* dst = frames;
        for (const auto& f : res.frames) dst = std::copy(f.values.begin(), f.values.end(), dst);
        if (seconds) *seconds = res.wall_seconds;
    });
}

lf_status lf_interfacial_area(const double* values, int k, double cell_size, double iso, double* out) {
    return guarded([&] {
        need(values, "values");
        need(out, "output");
        lf::require(k >= 2, lf::ErrorCode::invalid_argument, "k must be at least 2");
        lf::GridFrame f(k, 0.0, cell_size);
        std::copy(values, values + static_cast<std::ptrdiff_t>(k) * k, f.values.begin());
        *out = lf::interfacial_area(f, iso);
    });
}

}  // extern "C"
