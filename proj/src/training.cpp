#include "latentflow/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "latentflow/error.hpp"

namespace lf {

std::string to_string(LossKind k) { return k == LossKind::rmse ? "rmse" : "relative_error"; }

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "relative_error" || s == "re") return LossKind::relative_error;
    if (s == "rmse") return LossKind::rmse;
    fail(ErrorCode::invalid_argument, "unknown loss '" + s + "'");
}

double loss_re(std::span<const double> pred, std::span<const double> target) {
    require(pred.size() == target.size(), ErrorCode::shape_mismatch, "loss_re: sizes differ");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        num += (pred[i] - target[i]) * (pred[i] - target[i]);
        den += target[i] * target[i];
    }
    require(den > 0.0, ErrorCode::invalid_argument, "loss_re: target has zero norm");
    return std::sqrt(num) / std::sqrt(den);
}

double loss_rmse(std::span<const double> pred, std::span<const double> target) {
    require(pred.size() == target.size() && !pred.empty(), ErrorCode::shape_mismatch, "loss_rmse: sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

std::string TrainReport::to_text() const {
    std::ostringstream out;
    out << "epoch,train_loss,heldout_loss,lr,seconds\n";
    char buf[160];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.6f\n", e.epoch, e.train_loss, e.heldout_loss, e.lr,
                      e.seconds);
        out << buf;
    }
    if (diverged) out << "# diverged: " << message << '\n';
    return out.str();
}

double plateau_schedule(PlateauState& st, double epoch_loss) {
    if (epoch_loss < st.best - st.threshold) {
        st.best = epoch_loss;
        st.bad_epochs = 0;
    } else if (++st.bad_epochs >= st.patience) {
        st.lr *= st.factor;
        st.bad_epochs = 0;
    }
    return st.lr;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

ag::Var apply_loss(LossKind kind, const ag::Var& pred, const ag::Var& target) {
    return kind == LossKind::rmse ? ag::rmse_loss(pred, target) : ag::relative_error_loss(pred, target);
}

template <typename T>
std::vector<T> evenly_spaced(const std::vector<T>& all, int cap) {
    if (cap <= 0 || static_cast<int>(all.size()) <= cap) return all;
    std::vector<T> out;
    for (int i = 0; i < cap; ++i) out.push_back(all[static_cast<std::size_t>(i) * all.size() / cap]);
    return out;
}

// Shared optimization loop over n training items.
TrainReport run_training(nn::ParamSet& params, std::size_t n_items, const TrainConfig& cfg,
                         const std::function<ag::Var(std::span<const int>)>& batch_loss,
                         const std::function<double()>& heldout_loss) {
    require(cfg.batch >= 1, ErrorCode::invalid_argument, "batch size must be >= 1");
    require(cfg.lr >= 0.0, ErrorCode::invalid_argument, "learning rate must be non-negative");
    require(cfg.epochs >= 0, ErrorCode::invalid_argument, "epochs must be non-negative");
    TrainReport report;
    const auto t_start = Clock::now();
    nn::Adam opt(params);
    opt.round_f32 = !cfg.f64;
    PlateauState plateau{cfg.lr, std::numeric_limits<double>::infinity(), 0, cfg.patience, cfg.factor, cfg.threshold};
    double lr = cfg.lr;
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(n_items);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.epochs && n_items > 0; ++epoch) {
        const auto t_epoch = Clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n_items; start += cfg.batch) {
            const std::size_t len = std::min<std::size_t>(cfg.batch, n_items - start);
            params.zero_grad();
            const ag::Var loss = batch_loss(std::span<const int>(order.data() + start, len));
            if (!std::isfinite(loss.item())) {
                report.diverged = true;
                report.message = "non-finite training loss in epoch " + std::to_string(epoch);
                break;
            }
            ag::backward(loss);
            opt.step(lr);
            loss_sum += loss.item() * static_cast<double>(len);
            seen += len;
        }
        if (report.diverged) break;
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.heldout_loss = heldout_loss ? heldout_loss() : rec.train_loss;
        rec.lr = lr;
        rec.seconds = seconds_since(t_epoch);
        report.epochs.push_back(rec);
        if (cfg.verbose)
            std::fprintf(stderr, "epoch %d train %.6g heldout %.6g lr %.3g (%.1fs)\n", epoch, rec.train_loss,
                         rec.heldout_loss, lr, rec.seconds);
        if (!std::isfinite(rec.heldout_loss)) {
            report.diverged = true;
            report.message = "non-finite held-out loss in epoch " + std::to_string(epoch);
            break;
        }
        lr = cfg.epoch_decay > 0.0 ? lr * cfg.epoch_decay : plateau_schedule(plateau, rec.heldout_loss);
    }
    report.wall_seconds = seconds_since(t_start);
    report.checksum = params.checksum();
    return report;
}

struct FrameRef {
    int series;
    int t;
};

}  // namespace

TrainReport train_lvm(Lvm& lvm, const Dataset& ds, const TrainConfig& cfg) {
    require(lvm.family() != LvmFamily::svd, ErrorCode::invalid_argument,
            "the SVD LVM has a closed-form fit; use svd_fit instead of train_lvm");
    const Normalization norm = Normalization::of(ds);
    auto collect = [&](const std::vector<int>& ids) {
        std::vector<FrameRef> out;
        for (int id : ids) {
            const auto& s = ds.series.at(id);
            require(s.k() == lvm.k(), ErrorCode::shape_mismatch, "dataset k does not match the LVM");
            for (int t = 1; t <= s.steps(); ++t)
                if (l2_norm(s.frame(t).values) > 0.0) out.push_back({id, t});
        }
        return out;
    };
    const std::vector<FrameRef> train = collect(ds.train_ids);
    const std::vector<FrameRef> heldout = evenly_spaced(collect(ds.test_ids), cfg.heldout_windows);

    auto batch_of = [&](const std::vector<FrameRef>& refs, std::span<const int> idx) {
        std::vector<const GridFrame*> frames;
        std::vector<double> slots;
        for (int i : idx) {
            const auto& s = ds.series[refs[i].series];
            frames.push_back(&s.frame(refs[i].t));
            const auto nc = norm(s.inlet_velocity, refs[i].t);
            slots.push_back(nc.v_norm);
            slots.push_back(nc.t_norm);
        }
        const ag::Var x = frames_to_var(frames);
        const ag::Var rec = lvm.decode(ag::inject_slots(lvm.encode(x), slots));
        return apply_loss(cfg.loss, rec, x);
    };

    std::function<double()> held;
    if (!heldout.empty()) {
        held = [&] {
            ag::NoGradGuard guard;
            double sum = 0.0;
            std::vector<int> idx;
            for (std::size_t start = 0; start < heldout.size(); start += 64) {
                idx.clear();
                for (std::size_t i = start; i < std::min(heldout.size(), start + 64); ++i) idx.push_back(static_cast<int>(i));
                sum += batch_of(heldout, idx).item() * static_cast<double>(idx.size());
            }
            return sum / static_cast<double>(heldout.size());
        };
    }
    return run_training(
        lvm.tensors(), train.size(), cfg, [&](std::span<const int> idx) { return batch_of(train, idx); }, held);
}

std::vector<LatentSeries> encode_dataset(const Lvm& lvm, const Dataset& ds, const Normalization& norm) {
    std::vector<LatentSeries> out;
    for (const auto& s : ds.series) {
        require(s.k() == lvm.k(), ErrorCode::shape_mismatch, "dataset k does not match the LVM");
        LatentSeries ls;
        ls.series_id = s.series_id;
        ls.v = s.inlet_velocity;
        ag::NoGradGuard guard;
        std::vector<const GridFrame*> frames;
        for (const auto& f : s.frames) frames.push_back(&f);
        const ag::Var enc = lvm.encode(frames_to_var(frames));
        const int c = lvm.c();
        for (int t = 1; t <= s.steps(); ++t) {
            LatentState l{std::vector<double>(enc.value().begin() + static_cast<std::ptrdiff_t>(t - 1) * c,
                                              enc.value().begin() + static_cast<std::ptrdiff_t>(t) * c)};
            const auto nc = norm(s.inlet_velocity, t);
            ls.latents.push_back(inject_config(std::move(l), nc.v_norm, nc.t_norm));
        }
        out.push_back(std::move(ls));
    }
    return out;
}

std::vector<Window> enumerate_windows(std::span<const int> lengths, int w) {
    require(w >= 1, ErrorCode::invalid_argument, "window w must be >= 1");
    std::vector<Window> out;
    for (std::size_t i = 0; i < lengths.size(); ++i)
        for (int t = 1; t + w <= lengths[i]; ++t) out.push_back({static_cast<int>(i), t});
    return out;
}

ag::Var lin_window_loss(const Lin& lin, std::span<const LatentSeries> data, std::span<const Window> windows, int w,
                        LossKind loss, int* terms) {
    require(!windows.empty(), ErrorCode::invalid_argument, "no training windows");
    const int B = static_cast<int>(windows.size());
    const int c = lin.c(), s = lin.s();
    auto latent_at = [&](const Window& win, int t) -> const std::vector<double>& {
        return data[win.series].latents.at(static_cast<std::size_t>(t - 1)).values;
    };
    for (const auto& win : windows) {
        require(win.t >= 1 && win.t + w <= static_cast<int>(data[win.series].latents.size()), ErrorCode::invalid_argument,
                "window exceeds its series");
        require(static_cast<int>(latent_at(win, win.t).size()) == c, ErrorCode::shape_mismatch,
                "latent length does not match the LIN");
    }
    std::vector<ag::Var> rows;
    for (int j = 0; j < s; ++j) {
        std::vector<double> row(static_cast<std::size_t>(B) * c, 0.0);
        for (int b = 0; b < B; ++b) {
            const int tau = windows[b].t - s + 1 + j;
            if (tau >= 1) std::copy_n(latent_at(windows[b], tau).begin(), c, row.begin() + static_cast<std::ptrdiff_t>(b) * c);
        }
        rows.push_back(ag::Var::constant({B, c}, std::move(row)));
    }
    ag::Var total;
    for (int j = 1; j <= w; ++j) {
        std::vector<double> slots, target(static_cast<std::size_t>(B) * c);
        for (int b = 0; b < B; ++b) {
            const auto& l = latent_at(windows[b], windows[b].t + j);
            slots.push_back(l[c - 2]);
            slots.push_back(l[c - 1]);
            std::copy_n(l.begin(), c, target.begin() + static_cast<std::ptrdiff_t>(b) * c);
        }
        const ag::Var next = ag::inject_slots(lin.step(rows), slots);
        const ag::Var term = apply_loss(loss, next, ag::Var::constant({B, c}, std::move(target)));
        total = total.defined() ? ag::add(total, term) : term;
        rows.erase(rows.begin());
        rows.push_back(next);
    }
    if (terms) *terms = B * w;
    return ag::scale(total, 1.0 / w);
}

ag::Var e2e_window_loss(const Lvm& lvm, const Lin& lin, std::span<const SimulationSeries* const> data,
                        const Normalization& norm, std::span<const Window> windows, int w, LossKind loss, int* terms) {
    require(!windows.empty(), ErrorCode::invalid_argument, "no training windows");
    require(lvm.c() == lin.c(), ErrorCode::shape_mismatch,
            "LVM latent dimension " + std::to_string(lvm.c()) + " differs from the LIN's " + std::to_string(lin.c()));
    const int B = static_cast<int>(windows.size());
    const int c = lin.c(), s = lin.s();
    for (const auto& win : windows)
        require(win.t >= 1 && win.t + w <= data[win.series]->steps(), ErrorCode::invalid_argument,
                "window exceeds its series");
    std::vector<ag::Var> rows;
    for (int j = 0; j < s; ++j) {
        std::vector<const GridFrame*> frames;
        std::vector<double> slots, mask(static_cast<std::size_t>(B) * c, 1.0);
        bool padded = false;
        for (int b = 0; b < B; ++b) {
            const SimulationSeries& ser = *data[windows[b].series];
            const int tau = windows[b].t - s + 1 + j;
            frames.push_back(&ser.frame(std::max(tau, 1)));
            const auto nc = norm(ser.inlet_velocity, std::max(tau, 1));
            slots.push_back(nc.v_norm);
            slots.push_back(nc.t_norm);
            if (tau < 1) {
                padded = true;
                std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(b) * c, c, 0.0);
            }
        }
        ag::Var row = ag::inject_slots(lvm.encode(frames_to_var(frames)), slots);
        if (padded) row = ag::mul(row, ag::Var::constant({B, c}, std::move(mask)));
        rows.push_back(row);
    }
    ag::Var total;
    for (int j = 1; j <= w; ++j) {
        std::vector<const GridFrame*> targets;
        std::vector<double> slots;
        for (int b = 0; b < B; ++b) {
            const SimulationSeries& ser = *data[windows[b].series];
            targets.push_back(&ser.frame(windows[b].t + j));
            const auto nc = norm(ser.inlet_velocity, windows[b].t + j);
            slots.push_back(nc.v_norm);
            slots.push_back(nc.t_norm);
        }
        const ag::Var next = ag::inject_slots(lin.step(rows), slots);
        const ag::Var term = apply_loss(loss, lvm.decode(next), frames_to_var(targets));
        total = total.defined() ? ag::add(total, term) : term;
        rows.erase(rows.begin());
        rows.push_back(next);
    }
    if (terms) *terms = B * w;
    return ag::scale(total, 1.0 / w);
}

TrainReport train_lin(Lin& lin, std::span<const LatentSeries> train, std::span<const LatentSeries> heldout,
                      const TrainConfig& cfg) {
    auto lengths = [](std::span<const LatentSeries> d) {
        std::vector<int> out;
        for (const auto& s : d) out.push_back(static_cast<int>(s.latents.size()));
        return out;
    };
    const auto train_len = lengths(train);
    for (int T : train_len)
        require(cfg.w + lin.s() <= T, ErrorCode::invalid_argument,
                "window w=" + std::to_string(cfg.w) + " plus s=" + std::to_string(lin.s()) + " exceeds T=" + std::to_string(T));
    const std::vector<Window> windows = enumerate_windows(train_len, cfg.w);
    const auto held_len = lengths(heldout);
    const std::vector<Window> held = evenly_spaced(enumerate_windows(held_len, cfg.w), cfg.heldout_windows);
    int terms = 0;
    std::function<double()> held_fn;
    if (!held.empty()) {
        held_fn = [&] {
            ag::NoGradGuard guard;
            return lin_window_loss(lin, heldout, held, cfg.w, cfg.loss).item();
        };
    }
    TrainReport report = run_training(
        lin.tensors(), windows.size(), cfg,
        [&](std::span<const int> idx) {
            std::vector<Window> batch;
            for (int i : idx) batch.push_back(windows[i]);
            int n = 0;
            ag::Var loss = lin_window_loss(lin, train, batch, cfg.w, cfg.loss, &n);
            terms = std::max(terms, n);
            return loss;
        },
        held_fn);
    report.loss_terms_per_batch = terms;
    return report;
}

TrainReport train_e2e(Lvm& lvm, Lin& lin, const Dataset& ds, const TrainConfig& cfg) {
    require(lvm.c() == lin.c(), ErrorCode::shape_mismatch,
            "LVM latent dimension " + std::to_string(lvm.c()) + " differs from the LIN's " + std::to_string(lin.c()));
    const Normalization norm = Normalization::of(ds);
    std::vector<const SimulationSeries*> train, test;
    std::vector<int> train_len, test_len;
    for (int id : ds.train_ids) {
        train.push_back(&ds.series.at(id));
        train_len.push_back(ds.series[id].steps());
        require(cfg.w + lin.s() <= train_len.back(), ErrorCode::invalid_argument, "window w plus s exceeds T");
    }
    for (int id : ds.test_ids) {
        test.push_back(&ds.series.at(id));
        test_len.push_back(ds.series[id].steps());
    }
    const std::vector<Window> windows = enumerate_windows(train_len, cfg.w);
    const std::vector<Window> held = evenly_spaced(enumerate_windows(test_len, cfg.w), cfg.heldout_windows);
    nn::ParamSet joint;
    joint.absorb("lvm.", lvm.tensors());
    joint.absorb("lin.", lin.tensors());
    int terms = 0;
    std::function<double()> held_fn;
    if (!held.empty()) {
        held_fn = [&] {
            ag::NoGradGuard guard;
            double sum = 0.0;
            for (std::size_t start = 0; start < held.size(); start += 16) {
                const std::size_t len = std::min<std::size_t>(16, held.size() - start);
                sum += e2e_window_loss(lvm, lin, test, norm, std::span(held).subspan(start, len), cfg.w, cfg.loss).item() *
                       static_cast<double>(len);
            }
            return sum / static_cast<double>(held.size());
        };
    }
    TrainReport report = run_training(
        joint, windows.size(), cfg,
        [&](std::span<const int> idx) {
            std::vector<Window> batch;
            for (int i : idx) batch.push_back(windows[i]);
            int n = 0;
            ag::Var loss = e2e_window_loss(lvm, lin, train, norm, batch, cfg.w, cfg.loss, &n);
            terms = std::max(terms, n);
            return loss;
        },
        held_fn);
    report.loss_terms_per_batch = terms;
    return report;
}

}  // namespace lf
