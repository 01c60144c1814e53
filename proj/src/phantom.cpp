#include "riskcal/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "riskcal/rng.hpp"

namespace riskcal {

const char* const kChannelNames[3] = {"beam_indicator", "distance_to_axis", "depth_along_axis"};

void PhantomConfig::validate() const {
    if (dims.w <= 0 || dims.h <= 0 || dims.d <= 0)
        throw contract_error("PhantomConfig: dims must be positive");
    if (!(beam_fraction > 0.0 && beam_fraction < 0.5))
        throw contract_error("PhantomConfig: beam_fraction must be in (0, 0.5)");
    if (!(profile.amplitude > 0.0) || !(profile.falloff > 0.0))
        throw contract_error("PhantomConfig: beam profile must be positive");
    if (noise_fg < 0.0 || noise_bg < 0.0)
        throw contract_error("PhantomConfig: noise sd must be nonnegative");
    if (channels < 1 || channels > 3)
        throw contract_error("PhantomConfig: channels must be in 1..3");
    if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0))
        throw contract_error("PhantomConfig: threshold_fraction must be in (0,1)");
}

Sample generate_phantom(const PhantomConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CounterRng rng(seed, 0);

    // Beam axis and cross-section geometry. Draw order: axis, center_a,
    // center_b, then one gaussian per voxel in flat order.
    const int axis = static_cast<int>(rng.below(3));  // 0=x, 1=y, 2=z
    const int dims_arr[3] = {cfg.dims.w, cfg.dims.h, cfg.dims.d};
    const int pa = (axis + 1) % 3, pb = (axis + 2) % 3;
    const int na = dims_arr[pa], nb = dims_arr[pb];
    const int len = dims_arr[axis];
    const double radius = std::sqrt(cfg.beam_fraction * na * nb / 3.14159265358979323846);
    if (2.0 * radius > std::min(na, nb) - 1)
        throw contract_error("generate_phantom: dims too small for requested beam_fraction");
    const double ca = radius + rng.uniform() * (na - 1 - 2.0 * radius);
    const double cb = radius + rng.uniform() * (nb - 1 - 2.0 * radius);

    const std::size_t n = cfg.dims.size();
    std::vector<double> dose(n);
    std::vector<std::vector<double>> feats(cfg.channels, std::vector<double>(n));
    const double max_perp = std::max(na, nb);

    std::size_t i = 0;
    int c[3];
    for (c[2] = 0; c[2] < cfg.dims.d; ++c[2])
        for (c[1] = 0; c[1] < cfg.dims.h; ++c[1])
            for (c[0] = 0; c[0] < cfg.dims.w; ++c[0], ++i) {
                const double da = c[pa] - ca, db = c[pb] - cb;
                const double dist = std::sqrt(da * da + db * db);
                const double depth = c[axis];
                const bool inside = dist <= radius;
                const double g = rng.gaussian();
                double v;
                if (inside) {
                    const double profile = cfg.profile.amplitude *
                                           std::exp(-depth / cfg.profile.falloff) *
                                           (1.0 - 0.5 * (dist / radius) * (dist / radius));
                    v = profile + cfg.noise_fg * g;
                } else {
                    v = cfg.noise_bg * g;
                }
                dose[i] = std::max(0.0, v);
                if (cfg.channels >= 1) feats[0][i] = inside ? 1.0 : 0.0;
                if (cfg.channels >= 2) feats[1][i] = dist / max_perp;
                if (cfg.channels >= 3) feats[2][i] = len > 1 ? depth / (len - 1) : 0.0;
            }

    Sample s;
    for (auto& f : feats) s.features.emplace_back(cfg.dims, std::move(f));
    s.dose = VoxelVolume(cfg.dims, std::move(dose));
    s.masks = subgroup_masks_from_dose(s.dose, cfg.threshold_fraction);
    s.validate();
    return s;
}

std::vector<Sample> generate_dataset(const PhantomConfig& cfg, std::uint64_t seed, int n) {
    if (n < 1) throw contract_error("generate_dataset: n must be positive");
    std::vector<Sample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i)
        out.push_back(generate_phantom(cfg, derive_seed(seed, static_cast<std::uint64_t>(i))));
    return out;
}

namespace {

constexpr char kMagic[8] = {'R', 'C', 'A', 'L', 'D', 'S', '1', '\n'};

nlohmann::json cfg_to_json(const PhantomConfig& c) {
    return {{"dims", {c.dims.w, c.dims.h, c.dims.d}},
            {"beam_fraction", c.beam_fraction},
            {"amplitude", c.profile.amplitude},
            {"falloff", c.profile.falloff},
            {"noise_fg", c.noise_fg},
            {"noise_bg", c.noise_bg},
            {"channels", c.channels},
            {"threshold_fraction", c.threshold_fraction}};
}

PhantomConfig cfg_from_json(const nlohmann::json& j) {
    PhantomConfig c;
    c.dims = {j.at("dims")[0], j.at("dims")[1], j.at("dims")[2]};
    c.beam_fraction = j.at("beam_fraction");
    c.profile.amplitude = j.at("amplitude");
    c.profile.falloff = j.at("falloff");
    c.noise_fg = j.at("noise_fg");
    c.noise_bg = j.at("noise_bg");
    c.channels = j.at("channels");
    c.threshold_fraction = j.at("threshold_fraction");
    return c;
}

void write_volume_f32(std::ofstream& out, const VoxelVolume& v) {
    std::vector<float> buf(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) buf[i] = static_cast<float>(v[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

VoxelVolume read_volume_f32(std::ifstream& in, Dims dims) {
    std::vector<float> buf(dims.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw io_error("load_dataset: truncated volume payload");
    std::vector<double> vals(buf.begin(), buf.end());
    return VoxelVolume(dims, std::move(vals));
}

}  // namespace

void save_dataset(const std::string& path, const DatasetFile& ds) {
    ds.cfg.validate();
    nlohmann::json header;
    header["format_version"] = 1;
    header["cfg"] = cfg_to_json(ds.cfg);
    header["seed"] = ds.seed;
    header["n"] = ds.samples.size();
    header["dims"] = {ds.cfg.dims.w, ds.cfg.dims.h, ds.cfg.dims.d};
    nlohmann::json names = nlohmann::json::array();
    for (int c = 0; c < ds.cfg.channels; ++c) names.push_back(kChannelNames[c]);
    header["channel_names"] = std::move(names);
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("save_dataset: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    char lenbuf[4] = {static_cast<char>(hlen & 0xff), static_cast<char>((hlen >> 8) & 0xff),
                      static_cast<char>((hlen >> 16) & 0xff),
                      static_cast<char>((hlen >> 24) & 0xff)};
    out.write(lenbuf, 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& s : ds.samples) {
        for (const auto& f : s.features) write_volume_f32(out, f);
        write_volume_f32(out, s.dose);
    }
    if (!out) throw io_error("save_dataset: write failed for " + path);
}

DatasetFile load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_dataset: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw io_error("load_dataset: bad magic in " + path);
    unsigned char lenbuf[4];
    in.read(reinterpret_cast<char*>(lenbuf), 4);
    if (!in) throw io_error("load_dataset: truncated header length");
    const std::uint32_t hlen = static_cast<std::uint32_t>(lenbuf[0]) |
                               (static_cast<std::uint32_t>(lenbuf[1]) << 8) |
                               (static_cast<std::uint32_t>(lenbuf[2]) << 16) |
                               (static_cast<std::uint32_t>(lenbuf[3]) << 24);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw io_error("load_dataset: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw io_error("load_dataset: bad header JSON: " + std::string(e.what()));
    }
    if (header.at("format_version").get<int>() != 1)
        throw io_error("load_dataset: unsupported format version");

    DatasetFile ds;
    ds.cfg = cfg_from_json(header.at("cfg"));
    ds.seed = header.at("seed");
    const std::size_t n = header.at("n");
    for (std::size_t k = 0; k < n; ++k) {
        Sample s;
        for (int c = 0; c < ds.cfg.channels; ++c)
            s.features.push_back(read_volume_f32(in, ds.cfg.dims));
        s.dose = read_volume_f32(in, ds.cfg.dims);
        s.masks = subgroup_masks_from_dose(s.dose, ds.cfg.threshold_fraction);
        s.validate();
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace riskcal
