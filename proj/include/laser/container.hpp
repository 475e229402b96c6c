#pragma once

#include "laser/model.hpp"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace laser {

// LTC (Laser Tensor Container) layout, all integers little-endian:
//
//   bytes 0..7    magic "LTCV0001"
//   bytes 8..15   u64 header length H
//   bytes 16..    H bytes of UTF-8 JSON
//   then          tensor payloads: raw f32, row-major, in offset order
//
// The JSON header maps each tensor name to
//   {"dtype": "f32", "shape": [m, n] | [n], "offset": <bytes from payload start>, "length": <bytes>}
// and carries two reserved keys: "config" (the ModelConfig) and optionally
// "metadata" (free-form provenance). Writers emit tensors in name order.
inline constexpr char kLtcMagic[8] = {'L', 'T', 'C', 'V', '0', '0', '0', '1'};

struct LtcTensor {
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

struct LtcFile {
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json metadata; // null when absent
    std::map<std::string, LtcTensor> tensors;
};

std::vector<std::uint8_t> encode_ltc(const LtcFile& file);
LtcFile decode_ltc(std::span<const std::uint8_t> bytes);

LtcFile read_ltc(const std::filesystem::path& path);
void write_ltc(const std::filesystem::path& path, const LtcFile& file);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Canonical tensor names, e.g. "layers.3.u_in.weight".
std::string tensor_name(MatrixType tau, std::size_t layer, bool bias = false);

// Rounds weights to f32. Every taxonomy slot, norm and embedding is emitted.
LtcFile to_ltc(const ModelWeights& weights);

// Requires exactly the tensor set implied by the config: missing or unknown
// names raise FormatError listing them.
ModelWeights from_ltc(const LtcFile& file);

TransformerModel load_model(const std::filesystem::path& path);

// SHA-256 over the f32 tensors (names, shapes and payloads in name order) of
// the effective weights, overrides included.
std::string model_hash(const TransformerModel& model);

} // namespace laser
