#pragma once

#include <accnet/error.hpp>
#include <accnet/model.hpp>

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace accnet {

/// On-disk model: `<name>.json` manifest plus `<name>.bin` payload of
/// little-endian f64 values. Blocks are stored in order; within a block
/// w_out (row-major), then v_in (row-major), then bias.
struct StoredModel {
    AccNet net;
    std::uint64_t seed = 0;
};

inline constexpr int model_schema_version = 1;

namespace detail {

inline void put_f64(std::vector<unsigned char>& out, double x)
{
    auto bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

inline double get_f64(const unsigned char* p)
{
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

inline void put_row_major(std::vector<unsigned char>& out, const Matrix& m)
{
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            put_f64(out, m(i, j));
}

} // namespace detail

inline std::filesystem::path payload_path_for(const std::filesystem::path& manifest)
{
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

inline void save_model(const AccNet& net, const std::filesystem::path& manifest_path, std::uint64_t seed = 0)
{
    std::vector<unsigned char> payload;
    for (const auto& b : net.blocks()) {
        detail::put_row_major(payload, b.w_out);
        detail::put_row_major(payload, b.v_in);
        for (Eigen::Index i = 0; i < b.bias.size(); ++i)
            detail::put_f64(payload, b.bias[i]);
    }
    const auto bin = payload_path_for(manifest_path);

    nlohmann::ordered_json j;
    j["format"] = "accnet-model";
    j["schema_version"] = model_schema_version;
    j["dims"] = net.dims();
    j["widths"] = net.widths();
    j["seed"] = seed;
    j["payload"] = bin.filename().string();
    j["payload_layout"] = "f64 little-endian; per block: w_out row-major, v_in row-major, bias";
    j["value_count"] = payload.size() / 8;

    std::ofstream bout(bin, std::ios::binary);
    bout.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    std::ofstream jout(manifest_path);
    jout << j.dump(2) << '\n';
    if (!bout || !jout)
        throw ConfigError("save_model: cannot write " + manifest_path.string());
}

inline StoredModel load_model(const std::filesystem::path& manifest_path)
{
    std::ifstream jin(manifest_path);
    if (!jin)
        throw ConfigError("load_model: cannot open " + manifest_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(jin);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("load_model: " + manifest_path.string() + ": " + e.what());
    }
    try {
        if (j.at("format") != "accnet-model")
            throw ConfigError("load_model: not an accnet model manifest");
        if (j.at("schema_version").get<int>() != model_schema_version)
            throw ConfigError("load_model: unsupported schema_version");
        const auto dims = j.at("dims").get<std::vector<Eigen::Index>>();
        const auto widths = j.at("widths").get<std::vector<Eigen::Index>>();
        if (dims.size() < 2 || widths.size() + 1 != dims.size())
            throw ConfigError("load_model: dims/widths lengths inconsistent");

        const auto bin = manifest_path.parent_path() / j.at("payload").get<std::string>();
        std::ifstream bin_in(bin, std::ios::binary);
        if (!bin_in)
            throw ConfigError("load_model: cannot open payload " + bin.string());
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin_in)), std::istreambuf_iterator<char>());

        std::size_t expected = 0;
        for (std::size_t l = 0; l < widths.size(); ++l)
            expected += static_cast<std::size_t>(dims[l + 1] * widths[l] + widths[l] * dims[l] + widths[l]);
        if (bytes.size() != expected * 8)
            throw ConfigError("load_model: payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                              std::to_string(expected * 8));

        const unsigned char* p = bytes.data();
        auto read_matrix = [&p](Eigen::Index rows, Eigen::Index cols) {
            Matrix m(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i)
                for (Eigen::Index c = 0; c < cols; ++c, p += 8)
                    m(i, c) = detail::get_f64(p);
            return m;
        };
        std::vector<ShallowBlock> blocks;
        for (std::size_t l = 0; l < widths.size(); ++l) {
            Matrix w = read_matrix(dims[l + 1], widths[l]);
            Matrix v = read_matrix(widths[l], dims[l]);
            Vector b = read_matrix(widths[l], 1).col(0);
            blocks.emplace_back(std::move(w), std::move(v), std::move(b));
        }
        return {AccNet(std::move(blocks)), j.value("seed", std::uint64_t{0})};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("load_model: malformed manifest: " + std::string(e.what()));
    }
}

} // namespace accnet
