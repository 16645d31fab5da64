#include "latentflow/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "latentflow/bytes.hpp"
#include "latentflow/checkpoint.hpp"
#include "latentflow/error.hpp"
#include "latentflow/rollout.hpp"

namespace fs = std::filesystem;

namespace lf {

namespace {

const std::vector<std::pair<std::string, std::string>>& known_keys() {
    static const std::vector<std::pair<std::string, std::string>> keys = {
        {"dataset.velocities", ""},
        {"dataset.count", "12"},
        {"dataset.v_min", "0.005"},
        {"dataset.v_max", "0.015"},
        {"dataset.k", "32"},
        {"dataset.T", "100"},
        {"dataset.substeps", "10"},
        {"dataset.refine", "4"},
        {"dataset.n_train", "9"},
        {"dataset.seed", "1"},
        {"dataset.inlet_width", "0.25"},
        {"dataset.outlet_width", "0.35"},
        {"dataset.meander", "0.12"},
        {"dataset.recirculation", "0.08"},
        {"dataset.courant", "0.5"},

        {"lvm.family", "conv"},
        {"lvm.c", "64"},
        {"lvm.enc_channels", "128,256,512,1024"},
        {"lvm.dec_channels", "512,256,128,1"},
        {"lvm.channel_divisor", "16"},
        {"lvm.leaky_slope", "0.2"},
        {"lvm.patch_size", "16"},
        {"lvm.layers", "3"},
        {"lvm.heads", "8"},
        {"lvm.ff_dim", "0"},
        {"lvm.svd_center", "false"},
        {"lvm.svd_reserve_slots", "true"},
        {"lvm.seed", "1"},
        {"lvm.loss", "relative_error"},
        {"lvm.batch", "16"},
        {"lvm.epochs", "40"},
        {"lvm.lr", "0.001"},
        {"lvm.patience", "6"},
        {"lvm.factor", "0.1"},
        {"lvm.threshold", "1e-6"},
        {"lvm.epoch_decay", "0"},
        {"lvm.heldout_windows", "64"},

        {"lin.family", "mlp"},
        {"lin.s", "1"},
        {"lin.hidden", "128,128,128"},
        {"lin.layers", "6"},
        {"lin.heads", "8"},
        {"lin.ff_dim", "0"},
        {"lin.leaky_slope", "0.2"},
        {"lin.seed", "1"},
        {"lin.loss", "relative_error"},
        {"lin.w", "50"},
        {"lin.batch", "32"},
        {"lin.epochs", "120"},
        {"lin.lr", "0.001"},
        {"lin.patience", "15"},
        {"lin.factor", "0.1"},
        {"lin.threshold", "1e-6"},
        {"lin.epoch_decay", "0"},
        {"lin.heldout_windows", "64"},

        {"e2e.enabled", "false"},
        {"e2e.from_scratch", "false"},
        {"e2e.seed", "1"},
        {"e2e.loss", "relative_error"},
        {"e2e.w", "50"},
        {"e2e.batch", "16"},
        {"e2e.epochs", "3"},
        {"e2e.lr", "1e-5"},
        {"e2e.patience", "15"},
        {"e2e.factor", "0.1"},
        {"e2e.threshold", "1e-6"},
        {"e2e.epoch_decay", "0"},
        {"e2e.heldout_windows", "16"},

        {"eval.w_cfd", "0"},
        {"eval.iso", "0.5"},

        {"run.output", "runs/default"},
        {"run.data", ""},
        {"run.lvm_from", ""},
        {"run.deterministic", "false"},
        {"run.f64", "false"},
        {"run.verbose", "false"},

        {"sweep.replicates", "2"},
        {"sweep.cap", "64"},
    };
    return keys;
}

// Keys that name locations or switch reporting only.
bool excluded_from_hash(const std::string& key) {
    return key == "run.output" || key == "run.data" || key == "run.lvm_from" || key == "run.deterministic" ||
           key == "run.verbose";
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::string strip_inline_comment(const std::string& line) {
    for (std::size_t i = 1; i < line.size(); ++i)
        if (line[i] == '#' && (line[i - 1] == ' ' || line[i - 1] == '\t')) return line.substr(0, i);
    return line;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::istringstream in(bytes::read_text(path));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line))
        if (!trim(line).empty()) rows.push_back(parse_csv_line(line));
    return rows;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::invalid_argument, "config key " + key + ": '" + v + "' is not a number");
}

long long parse_integer(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long n = std::stoll(v, &pos);
        if (pos == v.size()) return n;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::invalid_argument, "config key " + key + ": '" + v + "' is not an integer");
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Replicate 0 keeps the configured seed; later replicates get hashed seeds.
std::uint64_t replicate_seed(std::uint64_t base, int replicate) {
    if (replicate == 0) return base;
    return splitmix64(base ^ (0x5851f42d4c957f2dULL * static_cast<std::uint64_t>(replicate))) >> 1;
}

std::string hash_of_prefixes(const std::map<std::string, std::string>& values, const std::vector<std::string>& prefixes) {
    std::string text;
    for (const auto& [k, v] : values) {
        bool take = false;
        for (const auto& p : prefixes) take = take || k.rfind(p, 0) == 0;
        if (take && !excluded_from_hash(k)) text += k + "=" + v + "\n";
    }
    return bytes::hex64(bytes::fnv1a(text));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec && fs::is_directory(dir), ErrorCode::io, "cannot create directory " + dir.string() + ": " + ec.message());
    const fs::path probe = dir / ".write_probe";
    {
        std::ofstream f(probe);
        require(static_cast<bool>(f), ErrorCode::io, "directory " + dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
}

fs::path manifest_path(const ExperimentConfig& cfg) { return cfg.data_dir() / "manifest.csv"; }

Dataset load_run_dataset(const ExperimentConfig& cfg) {
    const fs::path m = manifest_path(cfg);
    require(fs::exists(m), ErrorCode::not_found, "no dataset at " + m.string() + "; run gen-data first");
    return load_dataset(m);
}

// Hash over the archives and split assignment, independent of timing columns.
std::string data_hash(const ExperimentConfig& cfg) {
    const fs::path m = manifest_path(cfg);
    const Manifest man = read_manifest(m);
    std::string text;
    for (const auto& e : man.entries)
        text += std::to_string(e.series_id) + ":" + e.split + ":" + bytes::file_hash(m.parent_path() / e.path) + "\n";
    return bytes::hex64(bytes::fnv1a(text));
}

std::string train_csv(const TrainReport& report, bool deterministic, const std::string& provenance) {
    TrainReport copy = report;
    if (deterministic)
        for (auto& e : copy.epochs) e.seconds = 0.0;
    std::string text = copy.to_text();
    text += "provenance," + provenance + "\n";
    return text;
}

void write_config_snapshot(const ExperimentConfig& cfg, const fs::path& dir) {
    bytes::write_text(dir / "config.ini", "# config hash " + cfg.hash() + "\n" + cfg.to_ini());
}

void say(const ExperimentConfig& cfg, const std::string& line) {
    if (cfg.get_bool("run.verbose")) std::fprintf(stderr, "%s\n", line.c_str());
}

}  // namespace

// ---------------------------------------------------------------- config

ExperimentConfig::ExperimentConfig() {
    for (const auto& [k, v] : known_keys()) values_[k] = v;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
    require(fs::exists(path), ErrorCode::not_found, "config file " + path.string() + " does not exist");
    return from_string(bytes::read_text(path));
}

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
    std::istringstream raw(text);
    std::ostringstream cleaned;
    std::string line;
    while (std::getline(raw, line)) cleaned << strip_inline_comment(line) << '\n';
    boost::property_tree::ptree tree;
    std::istringstream in(cleaned.str());
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        fail(ErrorCode::invalid_argument, std::string("config parse error: ") + e.what());
    }
    ExperimentConfig cfg;
    for (const auto& [name, node] : tree) {
        if (node.empty()) {
            cfg.set(name, node.data());
            continue;
        }
        for (const auto& [key, leaf] : node) {
            require(leaf.empty(), ErrorCode::invalid_argument, "nested config entry " + name + "." + key);
            cfg.set(name + "." + key, leaf.data());
        }
    }
    return cfg;
}

void ExperimentConfig::set(const std::string& key_in, const std::string& value_in) {
    const std::string key = trim(key_in);
    const std::string value = trim(value_in);
    if (key.rfind("sweep.axis.", 0) == 0) {
        const std::string target = key.substr(11);
        require(values_.count(target) && target.rfind("sweep.", 0) != 0 && target != "run.output",
                ErrorCode::invalid_argument, "sweep axis over unknown or unsweepable key '" + target + "'");
        std::vector<std::string> list;
        for (auto& v : split(value, ';'))
            if (!v.empty()) list.push_back(v);
        require(!list.empty(), ErrorCode::invalid_argument, "sweep axis " + target + " has no values");
        auto it = std::find_if(axes_.begin(), axes_.end(), [&](const auto& a) { return a.first == target; });
        if (it != axes_.end())
            it->second = list;
        else
            axes_.emplace_back(target, list);
        return;
    }
    require(values_.count(key) > 0, ErrorCode::invalid_argument, "unknown config key '" + key + "'");
    values_[key] = value;
}

void ExperimentConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, ErrorCode::invalid_argument, "expected key=value, got '" + assignment + "'");
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

const std::string& ExperimentConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), ErrorCode::invalid_argument, "unknown config key '" + key + "'");
    return it->second;
}

int ExperimentConfig::get_int(const std::string& key) const {
    return static_cast<int>(parse_integer(key, get(key)));
}

double ExperimentConfig::get_double(const std::string& key) const { return parse_double(key, get(key)); }

bool ExperimentConfig::get_bool(const std::string& key) const {
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorCode::invalid_argument, "config key " + key + ": '" + v + "' is not a boolean");
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key) const {
    const long long n = parse_integer(key, get(key));
    require(n >= 0, ErrorCode::invalid_argument, "config key " + key + " must be non-negative");
    return static_cast<std::uint64_t>(n);
}

std::vector<int> ExperimentConfig::get_ints(const std::string& key) const {
    std::vector<int> out;
    const std::string v = get(key);
    if (trim(v).empty()) return out;
    for (const auto& item : split(v, ',')) out.push_back(static_cast<int>(parse_integer(key, item)));
    return out;
}

std::vector<double> ExperimentConfig::get_doubles(const std::string& key) const {
    std::vector<double> out;
    const std::string v = get(key);
    if (trim(v).empty()) return out;
    for (const auto& item : split(v, ',')) out.push_back(parse_double(key, item));
    return out;
}

std::string ExperimentConfig::to_ini() const {
    std::ostringstream out;
    std::string section;
    for (const auto& [k, v] : values_) {
        const auto dot = k.find('.');
        const std::string sec = k.substr(0, dot);
        if (sec != section) {
            out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
            section = sec;
        }
        out << k.substr(dot + 1) << " = " << v << '\n';
        if (sec == "sweep" && k == "sweep.replicates")
            for (const auto& [axis, list] : axes_) {
                out << "axis." << axis << " =";
                for (std::size_t i = 0; i < list.size(); ++i) out << (i ? "; " : " ") << list[i];
                out << '\n';
            }
    }
    return out.str();
}

std::string ExperimentConfig::hash() const {
    std::string text;
    for (const auto& [k, v] : values_)
        if (!excluded_from_hash(k)) text += k + "=" + v + "\n";
    for (const auto& [axis, list] : axes_) {
        text += "axis." + axis + "=";
        for (const auto& v : list) text += v + ";";
        text += "\n";
    }
    return bytes::hex64(bytes::fnv1a(text));
}

std::string ExperimentConfig::dataset_hash() const { return hash_of_prefixes(values_, {"dataset."}); }

fs::path ExperimentConfig::output_dir() const { return fs::path(get("run.output")); }

fs::path ExperimentConfig::data_dir() const {
    if (!get("run.data").empty()) return fs::path(get("run.data"));
    if (const char* root = std::getenv("LATENTFLOW_DATA_ROOT"); root && *root)
        return fs::path(root) / ("dataset_" + dataset_hash());
    return output_dir() / "data";
}

GenConfig ExperimentConfig::gen_config() const {
    GenConfig g;
    g.k = get_int("dataset.k");
    g.steps = get_int("dataset.T");
    g.substeps = get_int("dataset.substeps");
    g.refine = get_int("dataset.refine");
    g.seed = get_u64("dataset.seed");
    g.inlet_width = get_double("dataset.inlet_width");
    g.outlet_width = get_double("dataset.outlet_width");
    g.meander = get_double("dataset.meander");
    g.recirculation = get_double("dataset.recirculation");
    g.courant = get_double("dataset.courant");
    return g;
}

std::vector<double> ExperimentConfig::velocities() const {
    std::vector<double> v = get_doubles("dataset.velocities");
    if (!v.empty()) return v;
    const int count = get_int("dataset.count");
    require(count >= 2, ErrorCode::invalid_argument, "dataset.count must be at least 2");
    return velocity_range(count, get_double("dataset.v_min"), get_double("dataset.v_max"));
}

LvmSpec ExperimentConfig::lvm_spec() const {
    LvmSpec s;
    s.family = lvm_family_from_string(get("lvm.family"));
    s.c = get_int("lvm.c");
    s.enc_channels = get_ints("lvm.enc_channels");
    s.dec_channels = get_ints("lvm.dec_channels");
    s.channel_divisor = get_int("lvm.channel_divisor");
    s.leaky_slope = get_double("lvm.leaky_slope");
    s.patch_size = get_int("lvm.patch_size");
    s.layers = get_int("lvm.layers");
    s.heads = get_int("lvm.heads");
    s.ff_dim = get_int("lvm.ff_dim");
    s.svd_center = get_bool("lvm.svd_center");
    s.svd_reserve_slots = get_bool("lvm.svd_reserve_slots");
    s.seed = get_u64("lvm.seed");
    return s;
}

LinSpec ExperimentConfig::lin_spec() const {
    LinSpec s;
    s.family = lin_family_from_string(get("lin.family"));
    s.c = get_int("lvm.c");
    s.s = get_int("lin.s");
    s.hidden = get_ints("lin.hidden");
    s.layers = get_int("lin.layers");
    s.heads = get_int("lin.heads");
    s.ff_dim = get_int("lin.ff_dim");
    s.leaky_slope = get_double("lin.leaky_slope");
    s.seed = get_u64("lin.seed");
    return s;
}

TrainConfig ExperimentConfig::train_config(const std::string& section) const {
    TrainConfig t;
    const std::string p = section + ".";
    t.loss = loss_kind_from_string(get(p + "loss"));
    if (section != "lvm") t.w = get_int(p + "w");
    t.batch = get_int(p + "batch");
    t.epochs = get_int(p + "epochs");
    t.lr = get_double(p + "lr");
    t.patience = get_int(p + "patience");
    t.factor = get_double(p + "factor");
    t.threshold = get_double(p + "threshold");
    t.epoch_decay = get_double(p + "epoch_decay");
    if (section == "lvm" && t.epoch_decay <= 0.0 && lvm_spec().family == LvmFamily::patch) t.epoch_decay = 0.95;
    t.seed = get_u64(p + "seed");
    t.heldout_windows = get_int(p + "heldout_windows");
    t.f64 = get_bool("run.f64");
    t.verbose = get_bool("run.verbose");
    return t;
}

// ---------------------------------------------------------------- stages

double lvm_reconstruction_error(const Lvm& lvm, const Dataset& ds, const std::vector<int>& ids) {
    const Normalization norm = Normalization::of(ds);
    double sum = 0.0;
    int n = 0;
    for (int id : ids) {
        const auto& s = ds.series.at(id);
        for (int t = 1; t <= s.steps(); ++t) {
            const GridFrame& g = s.frame(t);
            if (l2_norm(g.values) == 0.0) continue;
            const auto cfg = norm(s.inlet_velocity, t);
            const GridFrame rec = lvm.decode(inject_config(lvm.encode(g), cfg.v_norm, cfg.t_norm), g.cell_size);
            sum += frame_relative_error(rec, g);
            ++n;
        }
    }
    return n > 0 ? sum / n : 0.0;
}

Manifest cmd_gen_data(const ExperimentConfig& cfg, int workers) {
    const fs::path dir = cfg.data_dir();
    const fs::path stamp = dir / "dataset.stamp";
    if (fs::exists(dir / "manifest.csv") && fs::exists(stamp) && trim(bytes::read_text(stamp)) == cfg.dataset_hash())
        return read_manifest(dir / "manifest.csv");
    ensure_dir(dir);
    const std::vector<double> vs = cfg.velocities();
    const int n_train = cfg.get_int("dataset.n_train");
    require(n_train >= 1 && n_train < static_cast<int>(vs.size()), ErrorCode::invalid_argument,
            "dataset.n_train must leave at least one test series");
    std::vector<double> secs;
    const Dataset ds = generate_dataset(vs, cfg.gen_config(), n_train, cfg.get_u64("dataset.seed"), &secs, workers);
    Manifest m = write_dataset(ds, dir, secs);
    bytes::write_text(stamp, cfg.dataset_hash() + "\n");
    return m;
}

Stage stage_from_string(const std::string& s) {
    if (s == "lvm") return Stage::lvm;
    if (s == "lin") return Stage::lin;
    if (s == "e2e") return Stage::e2e;
    fail(ErrorCode::invalid_argument, "unknown stage '" + s + "' (expected lvm, lin or e2e)");
}

namespace {

void require_file(const fs::path& p, const std::string& what) {
    require(fs::exists(p), ErrorCode::not_found, what + " " + p.string() + " does not exist");
}

std::string meta_string(const Checkpoint& ck, const std::string& key) {
    auto it = ck.meta.find(key);
    return it != ck.meta.end() && it->is_string() ? it->get<std::string>() : std::string();
}

void check_chain(const Checkpoint& lin_ck, const fs::path& lvm_path) {
    const std::string expected = meta_string(lin_ck, "lvm_hash");
    const std::string actual = bytes::file_hash(lvm_path);
    require(expected == actual, ErrorCode::hash_mismatch,
            "LIN checkpoint was trained against LVM " + (expected.empty() ? std::string("<none>") : expected) + ", but " +
                lvm_path.string() + " has hash " + actual);
}

void finish_training(const TrainReport& report, const ExperimentConfig& cfg, const fs::path& csv,
                     const std::string& provenance, const std::string& stage) {
    bytes::write_text(csv, train_csv(report, cfg.get_bool("run.deterministic"), provenance));
    if (report.diverged) fail(ErrorCode::diverged, stage + " training diverged: " + report.message);
}

void round_unless_f64(const ExperimentConfig& cfg, nn::ParamSet& ps) {
    if (!cfg.get_bool("run.f64")) nn::round_params_f32(ps);
}

std::vector<GridFrame> train_frames(const Dataset& ds) {
    std::vector<GridFrame> frames;
    for (int id : ds.train_ids)
        for (const auto& g : ds.series[id].frames) frames.push_back(g);
    return frames;
}

std::unique_ptr<Lvm> fresh_lvm(const ExperimentConfig& cfg, const Dataset& ds) {
    const LvmSpec spec = cfg.lvm_spec();
    if (spec.family == LvmFamily::svd) {
        const auto frames = train_frames(ds);
        return build_lvm(spec, ds.k(), frames);
    }
    auto lvm = build_lvm(spec, ds.k());
    round_unless_f64(cfg, lvm->tensors());
    return lvm;
}

TrainOutcome train_lvm_stage(const ExperimentConfig& cfg, const Dataset& ds, const std::string& dhash) {
    const fs::path out = cfg.output_dir();
    const fs::path ck_path = out / "lvm.lfck";
    const std::string from = cfg.get("run.lvm_from");
    TrainOutcome outcome;
    if (!from.empty()) {
        require_file(from, "LVM checkpoint");
        const Checkpoint ck = read_checkpoint(from);
        require(ck.kind == "lvm", ErrorCode::header_mismatch, from + " is not an LVM checkpoint");
        if (fs::absolute(from) != fs::absolute(ck_path)) fs::copy_file(from, ck_path, fs::copy_options::overwrite_existing);
        outcome.checkpoint_hash = bytes::file_hash(ck_path);
        return outcome;
    }
    auto lvm = fresh_lvm(cfg, ds);
    const std::string prov = "config=" + cfg.hash() + ";data=" + dhash;
    if (lvm->family() != LvmFamily::svd) {
        outcome.report = train_lvm(*lvm, ds, cfg.train_config("lvm"));
        finish_training(outcome.report, cfg, out / "lvm_train.csv", prov, "LVM");
    }
    nlohmann::json extra = {{"config_hash", cfg.hash()},
                            {"data_hash", dhash},
                            {"heldout_error", lvm_reconstruction_error(*lvm, ds, ds.test_ids)}};
    outcome.checkpoint_hash =
        write_checkpoint(lvm_checkpoint(*lvm, Normalization::of(ds), cfg.get_bool("run.f64"), extra), ck_path);
    return outcome;
}

TrainOutcome train_lin_stage(const ExperimentConfig& cfg, const Dataset& ds, const std::string& dhash) {
    const fs::path out = cfg.output_dir();
    const fs::path lvm_path = out / "lvm.lfck";
    require_file(lvm_path, "LIN training needs the LVM checkpoint");
    const Checkpoint lvm_ck = read_checkpoint(lvm_path);
    const auto lvm = lvm_from_checkpoint(lvm_ck);
    const Normalization norm = normalization_from_checkpoint(lvm_ck);
    require(lvm->k() == ds.k(), ErrorCode::shape_mismatch, "LVM checkpoint k does not match the dataset");
    const auto latents = encode_dataset(*lvm, ds, norm);
    std::vector<LatentSeries> train, held;
    for (int id : ds.train_ids) train.push_back(latents[id]);
    for (int id : ds.test_ids) held.push_back(latents[id]);
    LinSpec spec = cfg.lin_spec();
    spec.c = lvm->c();
    auto lin = build_lin(spec);
    round_unless_f64(cfg, lin->tensors());
    const std::string lvm_hash = bytes::file_hash(lvm_path);
    TrainOutcome outcome;
    outcome.report = train_lin(*lin, train, held, cfg.train_config("lin"));
    finish_training(outcome.report, cfg, out / "lin_train.csv",
                    "config=" + cfg.hash() + ";data=" + dhash + ";lvm=" + lvm_hash, "LIN");
    nlohmann::json extra = {{"config_hash", cfg.hash()}, {"data_hash", dhash}, {"lvm_hash", lvm_hash}};
    outcome.checkpoint_hash = write_checkpoint(lin_checkpoint(*lin, norm, cfg.get_bool("run.f64"), extra), out / "lin.lfck");
    return outcome;
}

TrainOutcome train_e2e_stage(const ExperimentConfig& cfg, const Dataset& ds, const std::string& dhash) {
    const fs::path out = cfg.output_dir();
    std::unique_ptr<Lvm> lvm;
    std::unique_ptr<Lin> lin;
    std::string up_lvm = "scratch", up_lin = "scratch";
    if (cfg.get_bool("e2e.from_scratch")) {
        lvm = fresh_lvm(cfg, ds);
        LinSpec spec = cfg.lin_spec();
        spec.c = lvm->c();
        lin = build_lin(spec);
        round_unless_f64(cfg, lin->tensors());
    } else {
        const fs::path lvm_path = out / "lvm.lfck", lin_path = out / "lin.lfck";
        require_file(lvm_path, "E2E fine-tuning needs the LVM checkpoint");
        require_file(lin_path, "E2E fine-tuning needs the LIN checkpoint");
        const Checkpoint lin_ck = read_checkpoint(lin_path);
        check_chain(lin_ck, lvm_path);
        lvm = lvm_from_checkpoint(read_checkpoint(lvm_path));
        lin = lin_from_checkpoint(lin_ck);
        up_lvm = bytes::file_hash(lvm_path);
        up_lin = bytes::file_hash(lin_path);
    }
    TrainOutcome outcome;
    outcome.report = train_e2e(*lvm, *lin, ds, cfg.train_config("e2e"));
    const std::string prov = "config=" + cfg.hash() + ";data=" + dhash + ";lvm=" + up_lvm + ";lin=" + up_lin;
    finish_training(outcome.report, cfg, out / "e2e_train.csv", prov, "E2E");
    const Normalization norm = Normalization::of(ds);
    const bool f64 = cfg.get_bool("run.f64");
    nlohmann::json lvm_extra = {{"config_hash", cfg.hash()},
                                {"data_hash", dhash},
                                {"upstream_lvm_hash", up_lvm},
                                {"upstream_lin_hash", up_lin},
                                {"heldout_error", lvm_reconstruction_error(*lvm, ds, ds.test_ids)}};
    const std::string e2e_lvm_hash = write_checkpoint(lvm_checkpoint(*lvm, norm, f64, lvm_extra), out / "e2e_lvm.lfck");
    nlohmann::json lin_extra = {{"config_hash", cfg.hash()},
                                {"data_hash", dhash},
                                {"lvm_hash", e2e_lvm_hash},
                                {"upstream_lvm_hash", up_lvm},
                                {"upstream_lin_hash", up_lin}};
    outcome.checkpoint_hash = write_checkpoint(lin_checkpoint(*lin, norm, f64, lin_extra), out / "e2e_lin.lfck");
    return outcome;
}

}  // namespace

TrainOutcome cmd_train(const ExperimentConfig& cfg, Stage stage) {
    const Dataset ds = load_run_dataset(cfg);
    const std::string dhash = data_hash(cfg);
    ensure_dir(cfg.output_dir());
    write_config_snapshot(cfg, cfg.output_dir());
    switch (stage) {
        case Stage::lvm: return train_lvm_stage(cfg, ds, dhash);
        case Stage::lin: return train_lin_stage(cfg, ds, dhash);
        case Stage::e2e: return train_e2e_stage(cfg, ds, dhash);
    }
    fail(ErrorCode::invalid_argument, "unknown stage");
}

MetricsReport cmd_evaluate(const ExperimentConfig& cfg, const std::string& which) {
    require(which == "classic" || which == "e2e", ErrorCode::invalid_argument,
            "evaluate expects 'classic' or 'e2e', got '" + which + "'");
    const fs::path out = cfg.output_dir();
    const std::string prefix = which == "e2e" ? "e2e_" : "";
    const fs::path lvm_path = out / (prefix + "lvm.lfck"), lin_path = out / (prefix + "lin.lfck");
    require_file(lvm_path, "evaluation needs the LVM checkpoint");
    require_file(lin_path, "evaluation needs the LIN checkpoint");
    const Checkpoint lin_ck = read_checkpoint(lin_path);
    check_chain(lin_ck, lvm_path);
    const Checkpoint lvm_ck = read_checkpoint(lvm_path);
    const auto lvm = lvm_from_checkpoint(lvm_ck);
    const auto lin = lin_from_checkpoint(lin_ck);
    const Normalization norm = normalization_from_checkpoint(lvm_ck);

    const Dataset ds = load_run_dataset(cfg);
    require(!ds.test_ids.empty(), ErrorCode::invalid_argument, "the dataset has an empty test split");
    std::vector<const SimulationSeries*> test;
    for (int id : ds.test_ids) test.push_back(&ds.series[id]);

    EvalOptions opts;
    opts.iso = cfg.get_double("eval.iso");
    opts.report_timing = !cfg.get_bool("run.deterministic");
    opts.w_cfd = cfg.get_double("eval.w_cfd");
    if (opts.w_cfd <= 0.0) {
        const Manifest m = read_manifest(manifest_path(cfg));
        double sum = 0.0;
        int n = 0;
        for (const auto& e : m.entries)
            if (e.split == "test") {
                sum += e.gen_seconds;
                ++n;
            }
        opts.w_cfd = n > 0 ? sum / n : 0.0;
    }
    MetricsReport report = evaluate_rollouts(*lvm, *lin, norm, test, opts);
    report.provenance = "config=" + cfg.hash() + ";data=" + data_hash(cfg) + ";lvm=" + bytes::file_hash(lvm_path) +
                        ";lin=" + bytes::file_hash(lin_path);
    ensure_dir(out);
    write_report(report, out / ("metrics_" + which + ".csv"));
    return report;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, int workers) {
    PipelineResult result;
    cmd_gen_data(cfg, workers);
    say(cfg, "[" + cfg.output_dir().string() + "] training LVM");
    cmd_train(cfg, Stage::lvm);
    const Checkpoint lvm_ck = read_checkpoint(cfg.output_dir() / "lvm.lfck");
    if (auto it = lvm_ck.meta.find("heldout_error"); it != lvm_ck.meta.end() && it->is_number())
        result.lvm_error = it->get<double>();
    say(cfg, "[" + cfg.output_dir().string() + "] training LIN");
    cmd_train(cfg, Stage::lin);
    result.classic = cmd_evaluate(cfg, "classic");
    if (cfg.get_bool("e2e.enabled")) {
        say(cfg, "[" + cfg.output_dir().string() + "] E2E fine-tuning");
        cmd_train(cfg, Stage::e2e);
        result.e2e = cmd_evaluate(cfg, "e2e");
        result.has_e2e = true;
    }
    return result;
}

// ---------------------------------------------------------------- sweep

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) return {std::nan(""), std::nan("")};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<SweepSummaryRow> summarize_sweep(const SweepResult& sweep) {
    std::vector<SweepSummaryRow> out;
    for (std::size_t c = 0; c < sweep.cells.size(); ++c) {
        SweepSummaryRow s;
        s.cell = static_cast<int>(c);
        s.axis_values = sweep.cells[c];
        s.architecture = c < sweep.architectures.size() ? sweep.architectures[c] : "";
        std::vector<double> ia, vf, eia, evf, lerr;
        for (const auto& r : sweep.rows) {
            if (r.cell != s.cell) continue;
            ++s.runs;
            if (!r.ok) continue;
            ++s.ok;
            ia.push_back(r.error_ia);
            vf.push_back(r.error_vf);
            lerr.push_back(r.lvm_error);
            if (r.has_e2e) {
                ++s.e2e_ok;
                eia.push_back(r.e2e_error_ia);
                evf.push_back(r.e2e_error_vf);
            }
        }
        std::tie(s.error_ia_mean, s.error_ia_std) = mean_std(ia);
        std::tie(s.error_vf_mean, s.error_vf_std) = mean_std(vf);
        std::tie(s.e2e_error_ia_mean, s.e2e_error_ia_std) = mean_std(eia);
        std::tie(s.e2e_error_vf_mean, s.e2e_error_vf_std) = mean_std(evf);
        std::tie(s.lvm_error_mean, s.lvm_error_std) = mean_std(lerr);
        out.push_back(std::move(s));
    }
    std::map<std::string, int> best;
    for (const auto& s : out) {
        if (s.ok == 0) continue;
        auto it = best.find(s.architecture);
        if (it == best.end()) {
            best[s.architecture] = s.cell;
            continue;
        }
        const auto& b = out[static_cast<std::size_t>(it->second)];
        if (s.error_vf_mean < b.error_vf_mean || (s.error_vf_mean == b.error_vf_mean && s.error_ia_mean < b.error_ia_mean))
            it->second = s.cell;
    }
    for (const auto& [arch, cell] : best) out[static_cast<std::size_t>(cell)].best = true;
    return out;
}

namespace {

std::string format_rows(const SweepResult& sweep) {
    std::ostringstream out;
    out << "cell,replicate,seed";
    for (const auto& a : sweep.axis_names) out << ',' << csv_field(a);
    out << ",status,error_ia,error_vf,e2e_error_ia,e2e_error_vf,lvm_error,message\n";
    for (const auto& r : sweep.rows) {
        out << r.cell << ',' << r.replicate << ',' << r.seed;
        for (const auto& v : r.axis_values) out << ',' << csv_field(v);
        out << ',' << (r.ok ? "ok" : "failed") << ',';
        if (r.ok) out << fmt(r.error_ia) << ',' << fmt(r.error_vf);
        else out << ',';
        out << ',';
        if (r.ok && r.has_e2e) out << fmt(r.e2e_error_ia) << ',' << fmt(r.e2e_error_vf);
        else out << ',';
        out << ',' << (r.ok ? fmt(r.lvm_error) : "") << ',' << csv_field(r.message) << '\n';
    }
    return out.str();
}

std::string format_summary(const SweepResult& sweep, const std::vector<SweepSummaryRow>& summary) {
    std::ostringstream out;
    out << "cell,architecture";
    for (const auto& a : sweep.axis_names) out << ',' << csv_field(a);
    out << ",runs,ok,error_ia_mean,error_ia_std,error_vf_mean,error_vf_std,e2e_error_ia_mean,e2e_error_ia_std,"
           "e2e_error_vf_mean,e2e_error_vf_std,lvm_error_mean,lvm_error_std,best\n";
    for (const auto& s : summary) {
        out << s.cell << ',' << csv_field(s.architecture);
        for (const auto& v : s.axis_values) out << ',' << csv_field(v);
        out << ',' << s.runs << ',' << s.ok;
        for (double v : {s.error_ia_mean, s.error_ia_std, s.error_vf_mean, s.error_vf_std, s.e2e_error_ia_mean,
                         s.e2e_error_ia_std, s.e2e_error_vf_mean, s.e2e_error_vf_std, s.lvm_error_mean, s.lvm_error_std})
            out << ',' << (std::isnan(v) ? "" : fmt(v));
        out << ',' << (s.best ? 1 : 0) << '\n';
    }
    return out.str();
}

double field_double(const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); }

struct LvmSlot {
    std::mutex mutex;
    bool done = false;
    fs::path path;
    std::string error;
    ErrorCode code = ErrorCode::internal;
};

}  // namespace

SweepResult cmd_sweep(const ExperimentConfig& base, int workers) {
    SweepResult sweep;
    const auto& axes = base.axes();
    std::size_t n_cells = 1;
    for (const auto& [name, list] : axes) {
        sweep.axis_names.push_back(name);
        n_cells *= list.size();
    }
    const int cap = base.get_int("sweep.cap");
    require(n_cells <= static_cast<std::size_t>(std::max(cap, 0)), ErrorCode::invalid_argument,
            "sweep has " + std::to_string(n_cells) + " cells, above the cap of " + std::to_string(cap));
    const int replicates = base.get_int("sweep.replicates");
    require(replicates >= 1, ErrorCode::invalid_argument, "sweep.replicates must be >= 1");

    const fs::path root = base.output_dir();
    ensure_dir(root);
    write_config_snapshot(base, root);
    const bool shared_data = base.get("run.data").empty() && !std::getenv("LATENTFLOW_DATA_ROOT");

    // Cell configurations in row-major axis order.
    std::vector<ExperimentConfig> cells;
    for (std::size_t c = 0; c < n_cells; ++c) {
        ExperimentConfig cell;
        for (const auto& [k, v] : base.values()) cell.set(k, v);
        std::vector<std::string> values(axes.size());
        std::size_t rem = c;
        for (std::size_t a = axes.size(); a-- > 0;) {
            values[a] = axes[a].second[rem % axes[a].second.size()];
            rem /= axes[a].second.size();
        }
        for (std::size_t a = 0; a < axes.size(); ++a) cell.set(axes[a].first, values[a]);
        if (shared_data) cell.set("run.data", (root / "data" / ("dataset_" + cell.dataset_hash())).string());
        sweep.cells.push_back(values);
        sweep.architectures.push_back(cell.get("lvm.family") + "/" + cell.get("lin.family"));
        cells.push_back(std::move(cell));
    }

    struct Job {
        int cell, replicate;
        ExperimentConfig cfg;
    };
    std::vector<Job> jobs;
    std::ostringstream plan;
    plan << "cell,replicate,seed,lvm_family,lvm_c,lin_family";
    for (const auto& a : sweep.axis_names) plan << ',' << csv_field(a);
    plan << ",output\n";
    for (std::size_t c = 0; c < n_cells; ++c)
        for (int r = 0; r < replicates; ++r) {
            ExperimentConfig cfg = cells[c];
            for (const char* sec : {"lvm", "lin", "e2e"}) {
                const std::string key = std::string(sec) + ".seed";
                cfg.set(key, std::to_string(replicate_seed(cfg.get_u64(key), r)));
            }
            char name[48];
            std::snprintf(name, sizeof name, "cell_%03zu_r%d", c, r);
            cfg.set("run.output", (root / "cells" / name).string());
            plan << c << ',' << r << ',' << cfg.get("lin.seed") << ',' << cfg.get("lvm.family") << ','
                 << cfg.get("lvm.c") << ',' << cfg.get("lin.family");
            for (const auto& v : sweep.cells[c]) plan << ',' << csv_field(v);
            plan << ',' << csv_field(cfg.get("run.output")) << '\n';
            jobs.push_back({static_cast<int>(c), r, std::move(cfg)});
        }
    bytes::write_text(root / "sweep_plan.csv", plan.str());

    // Datasets are generated up front so cells only read them.
    std::map<std::string, std::string> data_errors;
    {
        std::set<std::string> seen;
        for (const auto& cell : cells) {
            const std::string dir = cell.data_dir().string();
            if (!seen.insert(dir).second) continue;
            try {
                cmd_gen_data(cell, workers);
            } catch (const std::exception& e) {
                data_errors[dir] = e.what();
            }
        }
    }

    // Cells that agree on dataset and LVM settings share one trained LVM.
    std::map<std::string, std::shared_ptr<LvmSlot>> slots;
    for (const auto& job : jobs) {
        const std::string key = hash_of_prefixes(job.cfg.values(), {"dataset.", "lvm.", "run.f64"}) + job.cfg.data_dir().string();
        if (!slots.count(key)) slots[key] = std::make_shared<LvmSlot>();
    }

    sweep.rows.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const Job& job = jobs[i];
            SweepRow& row = sweep.rows[i];
            row.cell = job.cell;
            row.replicate = job.replicate;
            row.seed = job.cfg.get_u64("lin.seed");
            row.axis_values = sweep.cells[static_cast<std::size_t>(job.cell)];
            try {
                const std::string dir = job.cfg.data_dir().string();
                if (auto it = data_errors.find(dir); it != data_errors.end())
                    fail(ErrorCode::io, "dataset generation failed: " + it->second);
                ExperimentConfig cfg = job.cfg;
                ensure_dir(cfg.output_dir());
                const std::string key = hash_of_prefixes(cfg.values(), {"dataset.", "lvm.", "run.f64"}) + dir;
                LvmSlot& slot = *slots.at(key);
                {
                    std::lock_guard<std::mutex> lock(slot.mutex);
                    if (!slot.done) {
                        try {
                            cmd_train(cfg, Stage::lvm);
                            slot.path = cfg.output_dir() / "lvm.lfck";
                        } catch (const Error& e) {
                            slot.error = e.what();
                            slot.code = e.code();
                        } catch (const std::exception& e) {
                            slot.error = e.what();
                        }
                        slot.done = true;
                    }
                }
                if (!slot.error.empty()) fail(slot.code, "LVM stage failed: " + slot.error);
                cfg.set("run.lvm_from", slot.path.string());
                const PipelineResult res = [&] {
                    PipelineResult p;
                    cmd_train(cfg, Stage::lvm);
                    const Checkpoint ck = read_checkpoint(cfg.output_dir() / "lvm.lfck");
                    if (auto it = ck.meta.find("heldout_error"); it != ck.meta.end() && it->is_number())
                        p.lvm_error = it->get<double>();
                    cmd_train(cfg, Stage::lin);
                    p.classic = cmd_evaluate(cfg, "classic");
                    if (cfg.get_bool("e2e.enabled")) {
                        cmd_train(cfg, Stage::e2e);
                        p.e2e = cmd_evaluate(cfg, "e2e");
                        p.has_e2e = true;
                    }
                    return p;
                }();
                row.ok = true;
                row.error_ia = res.classic.error_ia;
                row.error_vf = res.classic.error_vf;
                row.lvm_error = res.lvm_error;
                row.has_e2e = res.has_e2e;
                row.e2e_error_ia = res.e2e.error_ia;
                row.e2e_error_vf = res.e2e.error_vf;
            } catch (const std::exception& e) {
                row.ok = false;
                row.message = e.what();
            }
            say(base, "sweep cell " + std::to_string(row.cell) + " replicate " + std::to_string(row.replicate) + ": " +
                          (row.ok ? "Error_VF " + fmt(row.error_vf) : "failed: " + row.message));
        }
    };
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    sweep.summary = summarize_sweep(sweep);
    bytes::write_text(root / "sweep_rows.csv", format_rows(sweep));
    bytes::write_text(root / "sweep_summary.csv", format_summary(sweep, sweep.summary));
    return sweep;
}

SweepResult read_sweep(const fs::path& dir) {
    const fs::path plan_path = dir / "sweep_plan.csv";
    require(fs::exists(plan_path), ErrorCode::not_found, "no sweep_plan.csv in " + dir.string());
    const auto plan = read_csv(plan_path);
    require(!plan.empty() && plan[0].size() >= 7, ErrorCode::header_mismatch, "malformed sweep_plan.csv");
    SweepResult sweep;
    const std::size_t n_axes = plan[0].size() - 7;
    for (std::size_t a = 0; a < n_axes; ++a) sweep.axis_names.push_back(plan[0][6 + a]);
    for (std::size_t i = 1; i < plan.size(); ++i) {
        const auto& row = plan[i];
        require(row.size() == plan[0].size(), ErrorCode::header_mismatch, "ragged row in sweep_plan.csv");
        const std::size_t cell = static_cast<std::size_t>(std::stoul(row[0]));
        if (cell >= sweep.cells.size()) {
            sweep.cells.resize(cell + 1);
            sweep.architectures.resize(cell + 1);
        }
        sweep.cells[cell] = std::vector<std::string>(row.begin() + 6, row.begin() + 6 + static_cast<std::ptrdiff_t>(n_axes));
        sweep.architectures[cell] = row[3] + "/" + row[5];
    }
    const fs::path rows_path = dir / "sweep_rows.csv";
    if (fs::exists(rows_path)) {
        const auto rows = read_csv(rows_path);
        const std::size_t width = 3 + n_axes + 7;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& f = rows[i];
            require(f.size() == width, ErrorCode::header_mismatch, "ragged row in sweep_rows.csv");
            SweepRow r;
            r.cell = std::stoi(f[0]);
            r.replicate = std::stoi(f[1]);
            r.seed = std::stoull(f[2]);
            r.axis_values.assign(f.begin() + 3, f.begin() + 3 + static_cast<std::ptrdiff_t>(n_axes));
            const std::size_t o = 3 + n_axes;
            r.ok = f[o] == "ok";
            if (r.ok) {
                r.error_ia = field_double(f[o + 1]);
                r.error_vf = field_double(f[o + 2]);
                r.has_e2e = !f[o + 3].empty();
                if (r.has_e2e) {
                    r.e2e_error_ia = field_double(f[o + 3]);
                    r.e2e_error_vf = field_double(f[o + 4]);
                }
                r.lvm_error = field_double(f[o + 5]);
            }
            r.message = f[o + 6];
            sweep.rows.push_back(std::move(r));
        }
    }
    sweep.summary = summarize_sweep(sweep);
    return sweep;
}

// ---------------------------------------------------------------- report

namespace {

std::string cell_label(const SweepResult& sweep, std::size_t cell) {
    std::string label;
    for (std::size_t a = 0; a < sweep.axis_names.size(); ++a)
        label += (a ? " " : "") + sweep.axis_names[a] + "=" + sweep.cells[cell][a];
    return label.empty() ? "(base)" : label;
}

std::string config_hash_line(const fs::path& dir) {
    const fs::path p = dir / "config.ini";
    if (!fs::exists(p)) return "config hash: unknown\n";
    std::istringstream in(bytes::read_text(p));
    std::string first;
    std::getline(in, first);
    return first.rfind("# config hash ", 0) == 0 ? "config hash: " + first.substr(14) + "\n" : "config hash: unknown\n";
}

std::string report_sweep(const fs::path& dir, const fs::path& out) {
    const SweepResult sweep = read_sweep(dir);
    const auto& summary = sweep.summary;
    bytes::write_text(out / "table_sweep_summary.csv", format_summary(sweep, summary));

    std::ostringstream best;
    best << "architecture";
    for (const auto& a : sweep.axis_names) best << ',' << csv_field(a);
    best << ",error_ia_mean,error_ia_std,error_vf_mean,error_vf_std,runs\n";
    for (const auto& s : summary)
        if (s.best) {
            best << csv_field(s.architecture);
            for (const auto& v : s.axis_values) best << ',' << csv_field(v);
            best << ',' << fmt(s.error_ia_mean) << ',' << fmt(s.error_ia_std) << ',' << fmt(s.error_vf_mean) << ','
                 << fmt(s.error_vf_std) << ',' << s.ok << '\n';
        }
    bytes::write_text(out / "table_best_per_architecture.csv", best.str());

    // LVM reconstruction error grouped by LVM family and latent size.
    const auto plan = read_csv(dir / "sweep_plan.csv");
    std::map<std::pair<std::string, int>, std::vector<double>> fig;
    std::map<int, std::pair<std::string, int>> cell_lvm;
    for (std::size_t i = 1; i < plan.size(); ++i) cell_lvm[std::stoi(plan[i][0])] = {plan[i][3], std::stoi(plan[i][4])};
    // Cells that share a trained LVM report bit-identical errors; count it once.
    std::map<std::pair<std::string, int>, std::set<double>> seen;
    for (const auto& r : sweep.rows)
        if (r.ok && seen[cell_lvm[r.cell]].insert(r.lvm_error).second) fig[cell_lvm[r.cell]].push_back(r.lvm_error);
    std::ostringstream f3;
    f3 << "lvm_family,c,lvm_error_mean,lvm_error_std,runs\n";
    for (const auto& [key, vals] : fig) {
        const auto [m, sd] = mean_std(vals);
        f3 << key.first << ',' << key.second << ',' << fmt(m) << ',' << fmt(sd) << ',' << vals.size() << '\n';
    }
    bytes::write_text(out / "lvm_error_vs_c.csv", f3.str());

    std::ostringstream text;
    int ok_cells = 0, failed = 0, missing = 0;
    for (const auto& s : summary) {
        if (s.runs == 0) ++missing;
        else if (s.ok == 0) ++failed;
        else ++ok_cells;
    }
    text << "sweep report for " << dir.string() << '\n' << config_hash_line(dir);
    text << sweep.cells.size() << " cells: " << ok_cells << " complete, " << failed << " failed, " << missing
         << " missing\n\n";
    char buf[256];
    for (const auto& s : summary) {
        text << "cell " << s.cell << " [" << s.architecture << "] " << cell_label(sweep, static_cast<std::size_t>(s.cell))
             << ": ";
        if (s.runs == 0) {
            text << "MISSING\n";
            continue;
        }
        if (s.ok == 0) {
            std::string msg;
            for (const auto& r : sweep.rows)
                if (r.cell == s.cell && !r.ok) msg = r.message;
            text << "FAILED (" << msg << ")\n";
            continue;
        }
        std::snprintf(buf, sizeof buf, "Error_IA %.4g (%.2g)  Error_VF %.4g (%.2g)  runs %d/%d", s.error_ia_mean,
                      s.error_ia_std, s.error_vf_mean, s.error_vf_std, s.ok, s.runs);
        text << buf;
        if (s.e2e_ok > 0) {
            std::snprintf(buf, sizeof buf, "  E2E Error_IA %.4g (%.2g)  Error_VF %.4g (%.2g)", s.e2e_error_ia_mean,
                          s.e2e_error_ia_std, s.e2e_error_vf_mean, s.e2e_error_vf_std);
            text << buf;
        }
        text << (s.best ? "  [best]" : "") << '\n';
    }
    return text.str();
}

std::map<std::string, std::string> metrics_footer(const fs::path& path) {
    std::map<std::string, std::string> out;
    for (const auto& row : read_csv(path))
        if (row.size() == 2) out[row[0]] = row[1];
    return out;
}

std::string report_run(const fs::path& dir, const fs::path& out) {
    const auto classic = metrics_footer(dir / "metrics_classic.csv");
    const bool has_e2e = fs::exists(dir / "metrics_e2e.csv");
    const auto e2e = has_e2e ? metrics_footer(dir / "metrics_e2e.csv") : std::map<std::string, std::string>{};
    auto get = [](const std::map<std::string, std::string>& m, const std::string& k) {
        auto it = m.find(k);
        return it == m.end() ? std::string() : it->second;
    };
    std::ostringstream table;
    table << "metric,classic,e2e\n";
    for (const char* k : {"Error_IA", "Error_VF", "W_AI", "S_W"})
        table << k << ',' << get(classic, k) << ',' << get(e2e, k) << '\n';
    bytes::write_text(out / "table_metrics.csv", table.str());

    std::ostringstream f3;
    f3 << "lvm_family,c,lvm_error_mean,lvm_error_std,runs\n";
    if (fs::exists(dir / "lvm.lfck")) {
        const Checkpoint ck = read_checkpoint(dir / "lvm.lfck");
        const auto spec = lvm_spec_from_json(ck.meta.at("spec"));
        double err = std::nan("");
        if (auto it = ck.meta.find("heldout_error"); it != ck.meta.end() && it->is_number()) err = it->get<double>();
        f3 << to_string(spec.family) << ',' << spec.c << ',' << fmt(err) << ",0,1\n";
    }
    bytes::write_text(out / "lvm_error_vs_c.csv", f3.str());

    std::ostringstream text;
    text << "run report for " << dir.string() << '\n' << config_hash_line(dir);
    for (const char* k : {"Error_IA", "Error_VF", "W_AI", "S_W"}) {
        text << k << ": " << (get(classic, k).empty() ? "n/a" : get(classic, k));
        if (has_e2e) text << "  (E2E: " << (get(e2e, k).empty() ? "n/a" : get(e2e, k)) << ")";
        text << '\n';
    }
    text << "provenance: " << get(classic, "provenance") << '\n';
    return text.str();
}

}  // namespace

std::string cmd_report(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorCode::not_found, "run directory " + dir.string() + " does not exist");
    require(!fs::is_empty(dir), ErrorCode::not_found, "run directory " + dir.string() + " is empty");
    const bool sweep = fs::exists(dir / "sweep_plan.csv");
    require(sweep || fs::exists(dir / "metrics_classic.csv"), ErrorCode::not_found,
            "no sweep or evaluation results in " + dir.string());
    const fs::path out = dir / "report";
    ensure_dir(out);
    const std::string text = sweep ? report_sweep(dir, out) : report_run(dir, out);
    bytes::write_text(out / "summary.txt", text);
    return text;
}

}  // namespace lf
