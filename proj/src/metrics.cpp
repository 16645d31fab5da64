#include "latentflow/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "latentflow/bytes.hpp"
#include "latentflow/error.hpp"

namespace lf {

namespace {

struct P2 {
    double x, y;
};

double seg(const P2& a, const P2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double interfacial_area(const GridFrame& frame, double iso) {
    const int k = frame.k;
    require(k >= 2, ErrorCode::invalid_argument, "interfacial_area needs k >= 2");
    double total = 0.0;
    for (int r = 0; r + 1 < k; ++r) {
        for (int c = 0; c + 1 < k; ++c) {
            // Corners counter-clockwise from bottom-left.
            const double v[4] = {frame.at(r, c), frame.at(r, c + 1), frame.at(r + 1, c + 1), frame.at(r + 1, c)};
            const P2 p[4] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
            int mask = 0;
            for (int i = 0; i < 4; ++i) mask |= (v[i] >= iso ? 1 : 0) << i;
            if (mask == 0 || mask == 15) continue;

            // Crossing point on edge i (corner i -> corner i+1), if any.
            P2 cross[4];
            bool has[4];
            for (int i = 0; i < 4; ++i) {
                const int j = (i + 1) % 4;
                has[i] = ((mask >> i) & 1) != ((mask >> j) & 1);
                if (has[i]) {
                    const double t = (iso - v[i]) / (v[j] - v[i]);
                    cross[i] = {p[i].x + t * (p[j].x - p[i].x), p[i].y + t * (p[j].y - p[i].y)};
                }
            }
            if (mask == 5 || mask == 10) {
                const double center = 0.25 * (v[0] + v[1] + v[2] + v[3]);
                const int center_bit = center >= iso ? 1 : 0;
                // Cut off the two corners whose class differs from the center's.
                for (int i = 0; i < 4; ++i) {
                    if (((mask >> i) & 1) == center_bit) continue;
                    const int prev = (i + 3) % 4;  // edge entering corner i
                    total += seg(cross[prev], cross[i]);
                }
            } else {
                P2 ends[2];
                int n = 0;
                for (int i = 0; i < 4; ++i)
                    if (has[i]) ends[n++] = cross[i];
                total += seg(ends[0], ends[1]);
            }
        }
    }
    return total * frame.cell_size;
}

double frame_relative_error(const GridFrame& pred, const GridFrame& truth) {
    require(pred.values.size() == truth.values.size(), ErrorCode::shape_mismatch, "frame sizes differ");
    double num2 = 0.0, den2 = 0.0;
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
        const double d = pred.values[i] - truth.values[i];
        num2 += d * d;
        den2 += truth.values[i] * truth.values[i];
    }
    require(den2 > 0.0, ErrorCode::invalid_argument, "relative error against a zero-norm frame");
    return std::sqrt(num2) / std::sqrt(den2);
}

IaErrors error_ia(const std::vector<double>& ia_pred, const std::vector<double>& ia_true) {
    require(ia_pred.size() == ia_true.size(), ErrorCode::shape_mismatch, "IA vectors differ in length");
    IaErrors out;
    double sum = 0.0;
    int used = 0;
    for (std::size_t i = 0; i < ia_true.size(); ++i) {
        if (ia_true[i] == 0.0) {
            out.per_series.push_back(std::numeric_limits<double>::quiet_NaN());
            out.excluded.push_back(true);
            continue;
        }
        const double e = std::abs(ia_pred[i] - ia_true[i]) / std::abs(ia_true[i]);
        out.per_series.push_back(e);
        out.excluded.push_back(false);
        sum += e;
        ++used;
    }
    require(used > 0, ErrorCode::invalid_argument, "every series has zero true IA");
    out.mean = sum / used;
    return out;
}

VfErrors error_vf_series(const std::vector<GridFrame>& pred, const std::vector<GridFrame>& truth) {
    require(pred.size() == truth.size(), ErrorCode::shape_mismatch, "rollout and truth lengths differ");
    VfErrors out;
    double sum = 0.0;
    int used = 0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        if (l2_norm(truth[t].values) == 0.0) {
            ++out.excluded_frames;
            continue;
        }
        sum += frame_relative_error(pred[t], truth[t]);
        ++used;
    }
    require(used > 0, ErrorCode::invalid_argument, "every truth frame has zero norm");
    out.mean = sum / used;
    return out;
}

double mean_of(const std::vector<double>& values) {
    require(!values.empty(), ErrorCode::invalid_argument, "mean of an empty list");
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

double measure_speedup(double w_cfd, double w_ai) {
    require(w_cfd > 0.0 && w_ai > 0.0, ErrorCode::invalid_argument, "wall-clock times must be positive");
    return w_cfd / w_ai;
}

void finalize_report(MetricsReport& report) {
    std::vector<double> pred, truth, vf;
    for (const auto& r : report.rows) {
        pred.push_back(r.ia_pred);
        truth.push_back(r.ia_true);
        vf.push_back(r.vf_rel_err);
    }
    const IaErrors ia = error_ia(pred, truth);
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        report.rows[i].ia_rel_err = ia.per_series[i];
        report.rows[i].ia_excluded = ia.excluded[i];
    }
    report.error_ia = ia.mean;
    report.error_vf = mean_of(vf);
    if (report.timing_valid) report.speedup = measure_speedup(report.w_cfd, report.w_ai);
}

std::string format_report(const MetricsReport& report) {
    std::ostringstream out;
    out << "series_id,v,ia_true,ia_pred,ia_rel_err,vf_rel_err,excluded_flag\n";
    for (const auto& r : report.rows) {
        out << r.series_id << ',' << num(r.v) << ',' << num(r.ia_true) << ',' << num(r.ia_pred) << ','
            << num(r.ia_rel_err) << ',' << num(r.vf_rel_err) << ',' << (r.ia_excluded ? 1 : 0) << '\n';
    }
    out << "Error_IA," << num(report.error_ia) << '\n';
    out << "Error_VF," << num(report.error_vf) << '\n';
    if (report.timing_valid) {
        out << "W_AI," << num(report.w_ai) << '\n';
        out << "S_W," << num(report.speedup) << '\n';
    }
    if (!report.provenance.empty()) out << "provenance," << report.provenance << '\n';
    return out.str();
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
    bytes::write_text(path, format_report(report));
}

}  // namespace lf
