#pragma once

// Checkpoint container:
//   "RSEGCKPT" | u32 version | u64 header bytes | JSON header | raw parameter data
// The header records the model kind, network config and, per parameter, its
// name, shape and byte offset into the data section. Data is little-endian
// in the declared dtype, so a save/load cycle is bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "resseg/resseg.hpp"

namespace resseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json to_json(const NetworkConfig& c) {
    return {{"levels", c.levels},
            {"base_channels", c.base_channels},
            {"input_channels", c.input_channels},
            {"conv_kernel", c.conv_kernel},
            {"input_size", c.input_size}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j, NetworkConfig base = {}) {
    if (j.contains("levels")) base.levels = j["levels"].get<int>();
    if (j.contains("base_channels")) base.base_channels = j["base_channels"].get<int>();
    if (j.contains("input_channels")) base.input_channels = j["input_channels"].get<int>();
    if (j.contains("conv_kernel")) base.conv_kernel = j["conv_kernel"].get<int>();
    if (j.contains("input_size")) base.input_size = j["input_size"].get<int>();
    return base;
}

template <typename T>
constexpr const char* dtype_name() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename T>
void save_checkpoint(const std::string& path, const SegmentationNet<T>& net, const nlohmann::json& extra = {}) {
    nlohmann::json header;
    header["model"] = to_string(net.kind());
    header["network"] = to_json(net.config());
    header["outputs"] = net.output_count();
    header["dtype"] = dtype_name<T>();
    if (!extra.is_null()) header["extra"] = extra;
    nlohmann::json table = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& p : net.params()) {
        table.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}, {"count", p.size()}});
        offset += p.size() * sizeof(T);
    }
    header["params"] = table;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : net.params()) {
        out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.size() * sizeof(T)));
    }
    if (!out) throw CheckpointError("short write to checkpoint " + path);
}

struct CheckpointHeader {
    ModelKind model = ModelKind::ResSegFixed;
    NetworkConfig network;
    std::size_t outputs = 0;
    std::string dtype;
    nlohmann::json raw;
};

namespace detail {

inline CheckpointHeader read_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointError(path + " is not a checkpoint");
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || version != kCheckpointVersion) throw CheckpointError(path + ": unsupported checkpoint version");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError(path + ": truncated header");
    CheckpointHeader h;
    h.raw = nlohmann::json::parse(text);
    h.model = parse_model_kind(h.raw.at("model").get<std::string>());
    h.network = network_config_from_json(h.raw.at("network"));
    h.outputs = h.raw.at("outputs").get<std::size_t>();
    h.dtype = h.raw.at("dtype").get<std::string>();
    return h;
}

template <typename Src, typename T>
void read_values(std::ifstream& in, std::vector<T>& dst, std::size_t count) {
    std::vector<Src> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(Src)));
    for (std::size_t i = 0; i < count; ++i) dst[i] = static_cast<T>(buf[i]);
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    return detail::read_header(in, path);
}

// Loads into a freshly built network of the recorded kind and config.
template <typename T>
SegmentationNet<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    const CheckpointHeader h = detail::read_header(in, path);
    const auto& table = h.raw.at("params");
    const int horz = h.model == ModelKind::ResSegHorz ? static_cast<int>(h.outputs) - 1 : 5;
    SegmentationNet<T> net(h.model, h.network, horz);
    if (table.size() != net.params().count()) throw CheckpointError(path + ": parameter count does not match model");
    const std::streamoff data_start = in.tellg();
    for (const auto& entry : table) {
        const std::string name = entry.at("name").get<std::string>();
        if (!net.params().contains(name)) throw CheckpointError(path + ": unexpected parameter " + name);
        auto& p = net.params().at(name);
        if (entry.at("shape").get<std::vector<int>>() != p.shape) throw CheckpointError(path + ": shape mismatch for " + name);
        in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
        if (h.dtype == "f32") {
            detail::read_values<float>(in, p.value, p.size());
        } else if (h.dtype == "f64") {
            detail::read_values<double>(in, p.value, p.size());
        } else {
            throw CheckpointError(path + ": unknown dtype " + h.dtype);
        }
        if (!in) throw CheckpointError(path + ": truncated data for " + name);
    }
    return net;
}

}  // namespace resseg
