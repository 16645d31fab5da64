#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentflow/field.hpp"
#include "latentflow/lin.hpp"
#include "latentflow/lvm.hpp"

namespace lf {

/// Self-describing model container "LFCK":
///   bytes 0-3   ASCII "LFCK"
///   bytes 4-7   u32 LE format version (1)
///   bytes 8-11  u32 LE header length H
///   12..12+H    UTF-8 JSON header (sorted keys): kind, meta, dtype, tensors
///   then        tensor payloads in table order, float32 or float64 LE
struct Checkpoint {
    struct Tensor {
        std::string name;
        ag::Shape shape;
        std::vector<double> values;
        bool trainable = true;
    };
    std::string kind;      ///< "lvm" or "lin"
    nlohmann::json meta;   ///< spec, seed, normalization, hashes
    bool f64 = false;
    std::vector<Tensor> tensors;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);
/// Writes the checkpoint and returns its hash (hex FNV-1a of the file bytes).
std::string write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);
std::string checkpoint_hash(const Checkpoint& ck);

nlohmann::json to_json(const LvmSpec& spec);
LvmSpec lvm_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LinSpec& spec);
LinSpec lin_spec_from_json(const nlohmann::json& j);

/// Extra metadata fields are merged into meta.
Checkpoint lvm_checkpoint(const Lvm& lvm, const Normalization& norm, bool f64, const nlohmann::json& extra = {});
Checkpoint lin_checkpoint(const Lin& lin, const Normalization& norm, bool f64, const nlohmann::json& extra = {});

std::unique_ptr<Lvm> lvm_from_checkpoint(const Checkpoint& ck);
std::unique_ptr<Lin> lin_from_checkpoint(const Checkpoint& ck);
Normalization normalization_from_checkpoint(const Checkpoint& ck);

/// Copies tensor values into a parameter set with matching names and shapes.
void load_tensors(nn::ParamSet& ps, const std::vector<Checkpoint::Tensor>& tensors);

}  // namespace lf
