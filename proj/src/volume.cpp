#include "riskcal/volume.hpp"

#include <algorithm>
#include <cmath>

namespace riskcal {

VoxelVolume::VoxelVolume(Dims dims, std::vector<double> values)
    : dims_(dims), values_(std::move(values)) {
    if (dims_.w <= 0 || dims_.h <= 0 || dims_.d <= 0)
        throw contract_error("VoxelVolume: dims must be positive");
    if (values_.size() != dims_.size())
        throw contract_error("VoxelVolume: values.length != W*H*D");
    for (double v : values_)
        if (!std::isfinite(v)) throw contract_error("VoxelVolume: non-finite value");
}

VoxelVolume VoxelVolume::filled(Dims dims, double value) {
    return VoxelVolume(dims, std::vector<double>(dims.size(), value));
}

double VoxelVolume::max_value() const {
    return *std::max_element(values_.begin(), values_.end());
}

std::size_t SubgroupMask::count() const {
    std::size_t n = 0;
    for (auto m : membership) n += (m != 0);
    return n;
}

void SubgroupMask::validate() const {
    if (membership.size() != dims.size())
        throw contract_error("SubgroupMask: membership length != W*H*D");
}

void Sample::validate() const {
    for (const auto& f : features)
        if (!(f.dims() == dose.dims())) throw contract_error("Sample: channel dims != dose dims");
    for (double v : dose.values())
        if (v < 0.0) throw contract_error("Sample: dose must be nonnegative");
    for (const auto& m : masks) {
        m.validate();
        if (!(m.dims == dose.dims())) throw contract_error("Sample: mask dims != dose dims");
    }
}

void HeuristicPrediction::validate() const {
    if (!(point.dims() == lower_offset.dims()) || !(point.dims() == upper_offset.dims()))
        throw contract_error("HeuristicPrediction: volumes must share dims");
    for (double v : lower_offset.values())
        if (v < 0.0) throw contract_error("HeuristicPrediction: negative lower offset");
    for (double v : upper_offset.values())
        if (v < 0.0) throw contract_error("HeuristicPrediction: negative upper offset");
}

IntervalField build_interval(const HeuristicPrediction& pred, double lambda) {
    if (!(lambda >= 0.0)) throw contract_error("build_interval: lambda must be nonnegative");
    pred.validate();
    const auto n = pred.point.size();
    std::vector<double> lo(n), hi(n);
    for (std::size_t i = 0; i < n; ++i) {
        lo[i] = pred.point[i] - lambda * pred.lower_offset[i];
        hi[i] = pred.point[i] + lambda * pred.upper_offset[i];
    }
    return IntervalField{VoxelVolume(pred.point.dims(), std::move(lo)),
                         VoxelVolume(pred.point.dims(), std::move(hi)), lambda};
}

double empirical_interval_loss(const IntervalField& interval, const VoxelVolume& dose,
                               const SubgroupMask& mask, LossDenominator denom) {
    if (!(interval.lo.dims() == dose.dims()) || !(mask.dims == dose.dims()))
        throw contract_error("empirical_interval_loss: dims disagree");
    mask.validate();
    std::size_t masked = 0, missed = 0;
    for (std::size_t i = 0; i < dose.size(); ++i) {
        if (!mask.membership[i]) continue;
        ++masked;
        if (dose[i] < interval.lo[i] || dose[i] > interval.hi[i]) ++missed;
    }
    if (masked == 0)
        throw empty_subgroup_error("empirical_interval_loss: empty subgroup " +
                                   std::to_string(mask.subgroup_id));
    const std::size_t den = denom == LossDenominator::masked ? masked : dose.size();
    return static_cast<double>(missed) / static_cast<double>(den);
}

std::vector<SubgroupMask> subgroup_masks_from_dose(const VoxelVolume& dose,
                                                   double threshold_fraction) {
    if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0))
        throw contract_error("subgroup_masks_from_dose: threshold_fraction must be in (0,1)");
    for (double v : dose.values())
        if (v < 0.0) throw contract_error("subgroup_masks_from_dose: dose must be nonnegative");

    const double threshold = threshold_fraction * dose.max_value();
    const std::size_t n = dose.size();
    SubgroupMask fg{dose.dims(), std::vector<std::uint8_t>(n), kForeground};
    SubgroupMask bg{dose.dims(), std::vector<std::uint8_t>(n), kBackground};
    SubgroupMask all{dose.dims(), std::vector<std::uint8_t>(n, 1), kCombined};
    for (std::size_t i = 0; i < n; ++i) {
        const bool in_fg = dose[i] > threshold;
        fg.membership[i] = in_fg;
        bg.membership[i] = !in_fg;
    }
    return {std::move(fg), std::move(bg), std::move(all)};
}

}  // namespace riskcal
