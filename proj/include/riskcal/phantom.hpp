#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "riskcal/volume.hpp"

namespace riskcal {

struct BeamProfile {
    double amplitude = 10.0;  // peak dose, Gray
    double falloff = 8.0;     // exponential attenuation length along the axis, voxels
};

// Synthetic segment: an axis-aligned beam cylinder with a smooth dose
// profile inside and near-zero background outside. Foreground noise is
// larger than background noise by default, which is what drives pooled
// calibration toward the background.
struct PhantomConfig {
    Dims dims{16, 16, 8};
    double beam_fraction = 0.08;  // target foreground voxel fraction
    BeamProfile profile;
    double noise_fg = 1.0;   // dose noise sd inside the beam
    double noise_bg = 0.02;  // dose noise sd outside
    int channels = 3;        // beam indicator, distance-to-axis, depth-along-axis
    double threshold_fraction = kDefaultThresholdFraction;

    void validate() const;
};

extern const char* const kChannelNames[3];

// Deterministic in (cfg, seed). Negative noisy doses are clamped at 0; the
// clamp is part of the generator contract.
Sample generate_phantom(const PhantomConfig& cfg, std::uint64_t seed);

// n independent phantoms via index-keyed substreams of `seed`.
std::vector<Sample> generate_dataset(const PhantomConfig& cfg, std::uint64_t seed, int n);

struct DatasetFile {
    PhantomConfig cfg;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;
};

// Container: magic, little-endian u32 header length, JSON header, then per
// sample the channel volumes and the dose as little-endian float32, x
// fastest. Masks are re-derived on load.
void save_dataset(const std::string& path, const DatasetFile& ds);
DatasetFile load_dataset(const std::string& path);

}  // namespace riskcal
