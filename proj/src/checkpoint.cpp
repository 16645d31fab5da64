#include "latentflow/checkpoint.hpp"

#include <cstring>

#include "latentflow/bytes.hpp"
#include "latentflow/error.hpp"

namespace lf {

using nlohmann::json;

namespace {

constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
    json header;
    header["kind"] = ck.kind;
    header["meta"] = ck.meta;
    header["dtype"] = ck.f64 ? "f64" : "f32";
    json table = json::array();
    for (const auto& t : ck.tensors) {
        require(ag::numel(t.shape) == t.values.size(), ErrorCode::shape_mismatch, "tensor " + t.name + " size");
        table.push_back({{"name", t.name}, {"shape", t.shape}, {"trainable", t.trainable}});
    }
    header["tensors"] = table;
    const std::string text = header.dump();
    std::vector<unsigned char> out{'L', 'F', 'C', 'K'};
    bytes::put_u32(out, kVersion);
    bytes::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& t : ck.tensors)
        for (double v : t.values) {
            if (ck.f64)
                bytes::put_f64(out, v);
            else
                bytes::put_f32(out, static_cast<float>(v));
        }
    return out;
}

Checkpoint decode_checkpoint(std::span<const unsigned char> data) {
    require(data.size() >= 4, ErrorCode::truncated_payload, "checkpoint shorter than its magic");
    require(std::memcmp(data.data(), "LFCK", 4) == 0, ErrorCode::bad_magic, "not an LFCK checkpoint");
    require(data.size() >= 12, ErrorCode::truncated_payload, "checkpoint header truncated");
    const std::uint32_t version = bytes::get_u32(data.data() + 4);
    require(version == kVersion, ErrorCode::header_mismatch, "unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t hlen = bytes::get_u32(data.data() + 8);
    require(data.size() - 12 >= hlen, ErrorCode::truncated_payload, "checkpoint header truncated");
    json header;
    try {
        header = json::parse(data.begin() + 12, data.begin() + 12 + hlen);
    } catch (const json::exception& e) {
        fail(ErrorCode::header_mismatch, std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Checkpoint ck;
    std::size_t pos = 12 + hlen;
    try {
        ck.kind = header.at("kind").get<std::string>();
        ck.meta = header.at("meta");
        const std::string dtype = header.at("dtype").get<std::string>();
        require(dtype == "f32" || dtype == "f64", ErrorCode::header_mismatch, "unknown dtype " + dtype);
        ck.f64 = dtype == "f64";
        const std::size_t width = ck.f64 ? 8 : 4;
        for (const auto& entry : header.at("tensors")) {
            Checkpoint::Tensor t;
            t.name = entry.at("name").get<std::string>();
            t.shape = entry.at("shape").get<ag::Shape>();
            t.trainable = entry.at("trainable").get<bool>();
            for (int d : t.shape) require(d >= 0, ErrorCode::header_mismatch, "negative tensor dimension");
            const std::size_t n = ag::numel(t.shape);
            require((data.size() - pos) / width >= n, ErrorCode::truncated_payload, "tensor payload truncated at " + t.name);
            t.values.resize(n);
            for (std::size_t i = 0; i < n; ++i, pos += width)
                t.values[i] = ck.f64 ? bytes::get_f64(data.data() + pos) : static_cast<double>(bytes::get_f32(data.data() + pos));
            ck.tensors.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::header_mismatch, std::string("malformed checkpoint header: ") + e.what());
    }
    require(pos == data.size(), ErrorCode::header_mismatch, "checkpoint has trailing bytes beyond its tensor table");
    return ck;
}

std::string write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const auto data = encode_checkpoint(ck);
    bytes::write_file(path, data);
    return bytes::hex64(bytes::fnv1a(data));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(bytes::read_file(path)); }

std::string checkpoint_hash(const Checkpoint& ck) { return bytes::hex64(bytes::fnv1a(encode_checkpoint(ck))); }

json to_json(const LvmSpec& s) {
    return {{"family", to_string(s.family)},
            {"c", s.c},
            {"enc_channels", s.enc_channels},
            {"dec_channels", s.dec_channels},
            {"channel_divisor", s.channel_divisor},
            {"leaky_slope", s.leaky_slope},
            {"patch_size", s.patch_size},
            {"layers", s.layers},
            {"heads", s.heads},
            {"ff_dim", s.ff_dim},
            {"svd_center", s.svd_center},
            {"svd_reserve_slots", s.svd_reserve_slots},
            {"seed", s.seed},
            {"init", "fan_in_uniform"}};
}

LvmSpec lvm_spec_from_json(const json& j) {
    LvmSpec s;
    s.family = lvm_family_from_string(j.at("family").get<std::string>());
    s.c = j.at("c").get<int>();
    s.enc_channels = j.at("enc_channels").get<std::vector<int>>();
    s.dec_channels = j.at("dec_channels").get<std::vector<int>>();
    s.channel_divisor = j.at("channel_divisor").get<int>();
    s.leaky_slope = j.at("leaky_slope").get<double>();
    s.patch_size = j.at("patch_size").get<int>();
    s.layers = j.at("layers").get<int>();
    s.heads = j.at("heads").get<int>();
    s.ff_dim = j.at("ff_dim").get<int>();
    s.svd_center = j.at("svd_center").get<bool>();
    s.svd_reserve_slots = j.at("svd_reserve_slots").get<bool>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

json to_json(const LinSpec& s) {
    return {{"family", to_string(s.family)},
            {"c", s.c},
            {"s", s.s},
            {"hidden", s.hidden},
            {"layers", s.layers},
            {"heads", s.heads},
            {"ff_dim", s.ff_dim},
            {"leaky_slope", s.leaky_slope},
            {"seed", s.seed},
            {"init", "fan_in_uniform"},
            {"positional_encoding", "sinusoidal"}};
}

LinSpec lin_spec_from_json(const json& j) {
    LinSpec s;
    s.family = lin_family_from_string(j.at("family").get<std::string>());
    s.c = j.at("c").get<int>();
    s.s = j.at("s").get<int>();
    s.hidden = j.at("hidden").get<std::vector<int>>();
    s.layers = j.at("layers").get<int>();
    s.heads = j.at("heads").get<int>();
    s.ff_dim = j.at("ff_dim").get<int>();
    s.leaky_slope = j.at("leaky_slope").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

namespace {

json norm_json(const Normalization& n) { return {{"v_min", n.v_min}, {"v_max", n.v_max}, {"T", n.steps}}; }

std::vector<Checkpoint::Tensor> tensors_of(const nn::ParamSet& ps) {
    std::vector<Checkpoint::Tensor> out;
    for (const auto& [name, v] : ps.items()) out.push_back({name, v.shape(), v.value(), v.requires_grad()});
    return out;
}

void merge(json& meta, const json& extra) {
    if (extra.is_object())
        for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
}

}  // namespace

Checkpoint lvm_checkpoint(const Lvm& lvm, const Normalization& norm, bool f64, const json& extra) {
    Checkpoint ck;
    ck.kind = "lvm";
    ck.f64 = f64;
    ck.meta = {{"spec", to_json(lvm.spec())}, {"k", lvm.k()}, {"normalization", norm_json(norm)},
               {"param_count", lvm.param_count()}};
    merge(ck.meta, extra);
    ck.tensors = tensors_of(lvm.tensors());
    return ck;
}

Checkpoint lin_checkpoint(const Lin& lin, const Normalization& norm, bool f64, const json& extra) {
    Checkpoint ck;
    ck.kind = "lin";
    ck.f64 = f64;
    ck.meta = {{"spec", to_json(lin.spec())}, {"normalization", norm_json(norm)}, {"param_count", lin.param_count()}};
    merge(ck.meta, extra);
    ck.tensors = tensors_of(lin.tensors());
    return ck;
}

void load_tensors(nn::ParamSet& ps, const std::vector<Checkpoint::Tensor>& tensors) {
    require(ps.items().size() == tensors.size(), ErrorCode::shape_mismatch,
            "checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                std::to_string(ps.items().size()));
    for (const auto& t : tensors) {
        require(ps.contains(t.name), ErrorCode::shape_mismatch, "checkpoint tensor " + t.name + " is unknown to the model");
        ag::Var v = ps.get(t.name);
        require(v.shape() == t.shape, ErrorCode::shape_mismatch,
                "tensor " + t.name + " has shape " + ag::shape_str(t.shape) + ", model expects " + ag::shape_str(v.shape()));
        v.mutable_value() = t.values;
    }
}

Normalization normalization_from_checkpoint(const Checkpoint& ck) {
    try {
        const json& n = ck.meta.at("normalization");
        return {n.at("v_min").get<double>(), n.at("v_max").get<double>(), n.at("T").get<int>()};
    } catch (const json::exception& e) {
        fail(ErrorCode::header_mismatch, std::string("checkpoint lacks normalization: ") + e.what());
    }
}

std::unique_ptr<Lvm> lvm_from_checkpoint(const Checkpoint& ck) {
    require(ck.kind == "lvm", ErrorCode::header_mismatch, "checkpoint kind is '" + ck.kind + "', expected 'lvm'");
    try {
        const LvmSpec spec = lvm_spec_from_json(ck.meta.at("spec"));
        const int k = ck.meta.at("k").get<int>();
        if (spec.family == LvmFamily::svd) {
            const Checkpoint::Tensor* basis = nullptr;
            const Checkpoint::Tensor* sigma = nullptr;
            const Checkpoint::Tensor* mean = nullptr;
            for (const auto& t : ck.tensors) {
                if (t.name == "basis") basis = &t;
                if (t.name == "singular_values") sigma = &t;
                if (t.name == "mean") mean = &t;
            }
            require(basis && sigma && mean && basis->shape.size() == 2, ErrorCode::header_mismatch,
                    "SVD checkpoint lacks basis, singular values or mean");
            return std::make_unique<SvdLvm>(spec, k, basis->values, basis->shape[1], sigma->values, mean->values);
        }
        auto lvm = build_lvm(spec, k);
        load_tensors(lvm->tensors(), ck.tensors);
        return lvm;
    } catch (const json::exception& e) {
        fail(ErrorCode::header_mismatch, std::string("malformed LVM metadata: ") + e.what());
    }
}

std::unique_ptr<Lin> lin_from_checkpoint(const Checkpoint& ck) {
    require(ck.kind == "lin", ErrorCode::header_mismatch, "checkpoint kind is '" + ck.kind + "', expected 'lin'");
    try {
        auto lin = build_lin(lin_spec_from_json(ck.meta.at("spec")));
        load_tensors(lin->tensors(), ck.tensors);
        return lin;
    } catch (const json::exception& e) {
        fail(ErrorCode::header_mismatch, std::string("malformed LIN metadata: ") + e.what());
    }
}

}  // namespace lf
