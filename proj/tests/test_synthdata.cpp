#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "riskcal/phantom.hpp"
#include "riskcal/rng.hpp"

using namespace riskcal;

namespace {

bool samples_equal(const Sample& a, const Sample& b) {
    if (a.features.size() != b.features.size()) return false;
    for (std::size_t c = 0; c < a.features.size(); ++c)
        if (a.features[c].values() != b.features[c].values()) return false;
    if (a.dose.values() != b.dose.values()) return false;
    for (std::size_t m = 0; m < a.masks.size(); ++m)
        if (a.masks[m].membership != b.masks[m].membership) return false;
    return true;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("phantom generation is deterministic in (cfg, seed)") {
    PhantomConfig cfg;
    CHECK(samples_equal(generate_phantom(cfg, 123), generate_phantom(cfg, 123)));
    CHECK_FALSE(samples_equal(generate_phantom(cfg, 123), generate_phantom(cfg, 124)));
}

TEST_CASE("noiseless phantoms are exactly zero outside the beam") {
    PhantomConfig cfg;
    cfg.noise_fg = 0.0;
    cfg.noise_bg = 0.0;
    const auto s = generate_phantom(cfg, 5);
    const auto& indicator = s.features[0];
    for (std::size_t i = 0; i < s.dose.size(); ++i) {
        if (indicator[i] == 0.0)
            CHECK(s.dose[i] == 0.0);
        else
            CHECK(s.dose[i] > 0.0);
    }
}

TEST_CASE("realized foreground fraction stays near the target") {
    PhantomConfig cfg;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = generate_phantom(cfg, seed);
        const double frac =
            static_cast<double>(s.masks[0].count()) / static_cast<double>(s.dose.size());
        CHECK(frac >= 0.04);
        CHECK(frac <= 0.16);
    }
}

TEST_CASE("masks partition every phantom and dose is nonnegative") {
    PhantomConfig cfg;
    const auto s = generate_phantom(cfg, 9);
    for (std::size_t i = 0; i < s.dose.size(); ++i) {
        CHECK(s.dose[i] >= 0.0);
        CHECK(s.masks[0].membership[i] + s.masks[1].membership[i] == 1);
    }
}

TEST_CASE("datasets use index-keyed substreams") {
    PhantomConfig cfg;
    const auto ds = generate_dataset(cfg, 7, 5);
    REQUIRE(ds.size() == 5);
    for (int i = 0; i < 5; ++i)
        CHECK(samples_equal(ds[i], generate_phantom(cfg, derive_seed(7, i))));
    const auto other = generate_dataset(cfg, 8, 5);
    CHECK_FALSE(samples_equal(ds[0], other[0]));
}

TEST_CASE("too small dims for the requested beam fraction error out") {
    PhantomConfig cfg;
    cfg.dims = {2, 2, 2};
    cfg.beam_fraction = 0.45;
    CHECK_THROWS_AS(generate_phantom(cfg, 1), contract_error);
}

TEST_CASE("dataset files round trip and are byte-identical") {
    PhantomConfig cfg;
    DatasetFile ds{cfg, 77, generate_dataset(cfg, 77, 3)};
    const auto dir = std::filesystem::temp_directory_path();
    const auto p1 = (dir / "riskcal_ds1.bin").string();
    const auto p2 = (dir / "riskcal_ds2.bin").string();
    save_dataset(p1, ds);
    save_dataset(p2, ds);
    CHECK(slurp(p1) == slurp(p2));

    const auto loaded = load_dataset(p1);
    CHECK(loaded.seed == 77);
    REQUIRE(loaded.samples.size() == 3);
    // values survive the float32 cast; masks are re-derived
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < ds.samples[k].dose.size(); ++i)
            CHECK(loaded.samples[k].dose[i] ==
                  static_cast<double>(static_cast<float>(ds.samples[k].dose[i])));
        CHECK(loaded.samples[k].masks.size() == 3);
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("dataset loader rejects garbage") {
    const auto p = (std::filesystem::temp_directory_path() / "riskcal_bad.bin").string();
    std::ofstream(p, std::ios::binary) << "not a dataset";
    CHECK_THROWS_AS(load_dataset(p), io_error);
    std::remove(p.c_str());
}
