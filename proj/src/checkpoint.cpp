#include "cdis/radiomic_net.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cdis {

namespace {

nlohmann::json config_json(const NetworkConfig& c)
{
    return {{"in_channels", c.in_channels},
            {"stage_blocks", c.stage_blocks},
            {"base_width", c.base_width},
            {"feature_dim", c.feature_dim},
            {"norm_groups", c.norm_groups},
            {"predictor_hidden", c.predictor_hidden},
            {"seed", c.seed}};
}

NetworkConfig config_from_json(const nlohmann::json& j)
{
    NetworkConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.stage_blocks = j.at("stage_blocks").get<std::array<int, 4>>();
    c.base_width = j.at("base_width").get<int>();
    c.feature_dim = j.at("feature_dim").get<int>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.predictor_hidden = j.at("predictor_hidden").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void put_u64(std::ostream& os, std::uint64_t v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& is)
{
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw DataError("truncated checkpoint");
    return v;
}

void put_string(std::ostream& os, std::string_view s)
{
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is)
{
    const auto n = get_u64(is);
    if (n > (std::uint64_t{1} << 32)) throw DataError("corrupt checkpoint string length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw DataError("truncated checkpoint");
    return s;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const CubeModel& model)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    put_string(os, kCheckpointFormat);
    put_string(os, config_json(model.config()).dump());
    std::uint64_t count = 0;
    model.for_each_param([&](const net::Param<float>&) { ++count; });
    put_u64(os, count);
    model.for_each_param([&](const net::Param<float>& p) {
        put_string(os, p.name);
        put_u64(os, p.dims.size());
        for (auto d : p.dims) put_u64(os, d);
        os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    });
    if (!os) throw DataError("write failed for checkpoint " + path.string());
}

CubeModel load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    const std::string format = get_string(is);
    if (format != kCheckpointFormat) {
        throw DataError(path.string() + ": unsupported checkpoint format '" + format + "'");
    }
    NetworkConfig cfg;
    try {
        cfg = config_from_json(nlohmann::json::parse(get_string(is)));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": bad checkpoint config: " + e.what());
    }
    CubeModel model(cfg);
    std::uint64_t expected = 0;
    model.for_each_param([&](const net::Param<float>&) { ++expected; });
    if (get_u64(is) != expected) throw DataError(path.string() + ": tensor count does not match config");
    model.for_each_param([&](net::Param<float>& p) {
        const std::string name = get_string(is);
        if (name != p.name) throw DataError(path.string() + ": expected tensor " + p.name + ", found " + name);
        const auto ndim = get_u64(is);
        std::vector<std::size_t> dims;
        for (std::uint64_t i = 0; i < ndim; ++i) dims.push_back(get_u64(is));
        if (dims != p.dims) throw DataError(path.string() + ": shape mismatch for tensor " + name);
        is.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
        if (!is) throw DataError("truncated checkpoint");
    });
    return model;
}

} // namespace cdis
