// Command-line front end; talks to the library only through the C interface.
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latentflow/latentflow.h"

namespace {

struct Options {
    std::string config;
    std::vector<std::string> sets;
    int workers = 1;
    bool deterministic = false;
    bool f64 = false;
};

int report_failure(lf_status st, const char* what) {
    std::fprintf(stderr, "latentflow %s failed [%s]: %s\n", what, lf_status_name(st), lf_last_error());
    return static_cast<int>(st);
}

void print_metrics(const char* label, const lf_metrics& m) {
    std::printf("%s: Error_IA %.6g  Error_VF %.6g  (%d test series)", label, m.error_ia, m.error_vf, m.series);
    if (m.timing_valid) std::printf("  W_AI %.4gs  S_W %.4g", m.w_ai, m.speedup);
    std::printf("\n");
}

class ConfigHandle {
public:
    ConfigHandle() { status_ = lf_config_new(&cfg_); }
    ~ConfigHandle() { lf_config_free(cfg_); }
    ConfigHandle(const ConfigHandle&) = delete;
    ConfigHandle& operator=(const ConfigHandle&) = delete;

    lf_status build(const Options& opt) {
        if (status_ != LF_OK) return status_;
        if (!opt.config.empty())
            if (lf_status st = lf_config_load(cfg_, opt.config.c_str()); st != LF_OK) return st;
        for (const auto& s : opt.sets)
            if (lf_status st = lf_config_assign(cfg_, s.c_str()); st != LF_OK) return st;
        if (opt.deterministic)
            if (lf_status st = lf_config_set(cfg_, "run.deterministic", "true"); st != LF_OK) return st;
        if (opt.f64)
            if (lf_status st = lf_config_set(cfg_, "run.f64", "true"); st != LF_OK) return st;
        return LF_OK;
    }
    lf_config* get() const { return cfg_; }

private:
    lf_config* cfg_ = nullptr;
    lf_status status_ = LF_OK;
};

std::string config_value(const lf_config* cfg, const char* key) {
    size_t needed = 0;
    if (lf_config_get(cfg, key, nullptr, 0, &needed) != LF_OK) return {};
    std::string buf(needed, '\0');
    lf_config_get(cfg, key, buf.data(), buf.size(), nullptr);
    buf.resize(needed > 0 ? needed - 1 : 0);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentflow: latent-space surrogate for 2-D volume-fraction transport"};
    app.require_subcommand(1);
    app.fallthrough();
    Options opt;
    app.add_option("--config", opt.config, "INI experiment configuration")->check(CLI::ExistingFile);
    app.add_option("--set", opt.sets, "override a config key, e.g. --set lin.w=50 (repeatable)");
    app.add_option("--workers", opt.workers, "parallel workers for data generation and sweeps")
        ->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", opt.deterministic, "omit wall-clock timing so outputs are bit-identical");
    app.add_flag("--f64", opt.f64, "train and store parameters in 64-bit precision");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and manifest");
    auto* train = app.add_subcommand("train", "train one stage");
    std::string stage = "all";
    train->add_option("--stage", stage, "lvm, lin, e2e or all")
        ->check(CLI::IsMember({"lvm", "lin", "e2e", "all"}));
    auto* evaluate = app.add_subcommand("evaluate", "full rollouts on the test split");
    std::string which = "classic";
    evaluate->add_option("--which", which, "classic or e2e checkpoints")->check(CLI::IsMember({"classic", "e2e"}));
    auto* sweep = app.add_subcommand("sweep", "cartesian sweep over the [sweep] axes");
    auto* report = app.add_subcommand("report", "summarize a run or sweep directory");
    std::string report_dir;
    report->add_option("dir", report_dir, "run or sweep directory (default: run.output)");

    CLI11_PARSE(app, argc, argv);

    ConfigHandle cfg;
    if (lf_status st = cfg.build(opt); st != LF_OK) return report_failure(st, "configuration");

    if (*gen) {
        if (lf_status st = lf_gen_data(cfg.get(), opt.workers); st != LF_OK) return report_failure(st, "gen-data");
        std::printf("dataset ready\n");
        return 0;
    }
    if (*train) {
        std::vector<std::string> stages;
        if (stage == "all") {
            stages = {"lvm", "lin"};
            if (config_value(cfg.get(), "e2e.enabled") == "true") stages.push_back("e2e");
        } else {
            stages = {stage};
        }
        for (const auto& s : stages) {
            char hash[32] = {0};
            if (lf_status st = lf_train(cfg.get(), s.c_str(), hash, sizeof hash); st != LF_OK)
                return report_failure(st, ("train " + s).c_str());
            std::printf("%s checkpoint %s\n", s.c_str(), hash);
        }
        return 0;
    }
    if (*evaluate) {
        lf_metrics m{};
        if (lf_status st = lf_evaluate(cfg.get(), which.c_str(), &m); st != LF_OK) return report_failure(st, "evaluate");
        print_metrics(which.c_str(), m);
        return 0;
    }
    if (*sweep) {
        lf_sweep_stats stats{};
        if (lf_status st = lf_sweep(cfg.get(), opt.workers, &stats); st != LF_OK) return report_failure(st, "sweep");
        std::printf("sweep: %d cells, %d runs, %d ok, %d failed\n", stats.cells, stats.runs, stats.runs_ok,
                    stats.runs_failed);
        return 0;
    }
    if (*report) {
        if (report_dir.empty()) report_dir = config_value(cfg.get(), "run.output");
        std::string text(1 << 16, '\0');
        if (lf_status st = lf_report(report_dir.c_str(), text.data(), text.size()); st != LF_OK)
            return report_failure(st, "report");
        std::fputs(text.c_str(), stdout);
        return 0;
    }
    return 0;
}
