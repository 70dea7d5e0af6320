#pragma once

#include <array>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "riempat/manifold.hpp"

namespace riempat {

using manifold::Matrix;
using manifold::Vector;

enum class TargetKind { continuous, binary };

/// Known generating process of a simulated dataset: mixing matrix whose first
/// n_sources columns are the encoding source patterns, plus the latent weights.
struct GroundTruth {
    Matrix mixing;   // P x P, columns are patterns
    Vector weights;  // length n_sources
    double bias = 0.0;
    int n_sources = 0;
};

/// N observations by B frequency bands of symmetric covariance features plus
/// targets. Matrices are stored observation-major; they are validated symmetric
/// but not necessarily definite (rank-deficiency is handled by shrinkage or PCA
/// downstream, and surfaces as an error where full rank is required).
class CovarianceDataset {
public:
    CovarianceDataset(int n_channels, int n_bands, std::vector<manifold::SymmetricMatrix> covariances,
                      Vector targets, TargetKind target_kind,
                      std::optional<std::vector<std::string>> groups = std::nullopt,
                      std::optional<GroundTruth> truth = std::nullopt)
        : n_channels_(n_channels),
          n_bands_(n_bands),
          covariances_(std::move(covariances)),
          targets_(std::move(targets)),
          target_kind_(target_kind),
          groups_(std::move(groups)),
          truth_(std::move(truth)) {
        if (n_channels_ < 1 || n_bands_ < 1) throw contract_error("CovarianceDataset: need n_channels, n_bands >= 1");
        const auto n_obs = targets_.size();
        if (covariances_.size() != static_cast<std::size_t>(n_obs) * static_cast<std::size_t>(n_bands_)) {
            std::ostringstream msg;
            msg << "CovarianceDataset: expected " << n_obs * n_bands_ << " covariance matrices, got "
                << covariances_.size();
            throw shape_error(msg.str());
        }
        for (const auto& c : covariances_) {
            if (c.dim() != n_channels_) throw shape_error("CovarianceDataset: covariance dimension mismatch");
        }
        if (groups_ && static_cast<Eigen::Index>(groups_->size()) != n_obs) {
            throw shape_error("CovarianceDataset: group labels size mismatch");
        }
        if (target_kind_ == TargetKind::binary) {
            std::set<double> distinct(targets_.begin(), targets_.end());
            if (distinct.size() > 2) throw contract_error("CovarianceDataset: binary targets take exactly two values");
        }
        if (!targets_.allFinite()) throw contract_error("CovarianceDataset: non-finite targets");
    }

    int n_obs() const noexcept { return static_cast<int>(targets_.size()); }
    int n_channels() const noexcept { return n_channels_; }
    int n_bands() const noexcept { return n_bands_; }
    TargetKind target_kind() const noexcept { return target_kind_; }
    const Vector& targets() const noexcept { return targets_; }
    const std::optional<std::vector<std::string>>& groups() const noexcept { return groups_; }
    const std::optional<GroundTruth>& truth() const noexcept { return truth_; }
    const std::vector<manifold::SymmetricMatrix>& covariances() const noexcept { return covariances_; }

    const manifold::SymmetricMatrix& covariance(int obs, int band) const {
        return covariances_[static_cast<std::size_t>(obs) * n_bands_ + static_cast<std::size_t>(band)];
    }

    /// The two distinct class values of a binary dataset, ascending.
    std::array<double, 2> class_values() const {
        if (target_kind_ != TargetKind::binary) throw contract_error("class_values: dataset is not binary");
        std::set<double> distinct(targets_.begin(), targets_.end());
        if (distinct.size() != 2) throw contract_error("class_values: both classes must be present");
        auto it = distinct.begin();
        const double lo = *it++;
        return {lo, *it};
    }

    /// All covariances of one band promoted to SPD (throws where rank-deficient).
    std::vector<manifold::SpdMatrix> band_spd(int band) const {
        std::vector<manifold::SpdMatrix> out;
        out.reserve(static_cast<std::size_t>(n_obs()));
        for (int i = 0; i < n_obs(); ++i) out.emplace_back(covariance(i, band).values());
        return out;
    }

    CovarianceDataset subset(std::span<const int> indices) const {
        std::vector<manifold::SymmetricMatrix> covs;
        covs.reserve(indices.size() * static_cast<std::size_t>(n_bands_));
        Vector targets(static_cast<Eigen::Index>(indices.size()));
        std::optional<std::vector<std::string>> groups;
        if (groups_) groups.emplace();
        Eigen::Index row = 0;
        for (int idx : indices) {
            if (idx < 0 || idx >= n_obs()) throw contract_error("subset: index out of range");
            for (int b = 0; b < n_bands_; ++b) covs.push_back(covariance(idx, b));
            targets[row++] = targets_[idx];
            if (groups_) groups->push_back((*groups_)[static_cast<std::size_t>(idx)]);
        }
        return CovarianceDataset(n_channels_, n_bands_, std::move(covs), std::move(targets), target_kind_,
                                 std::move(groups), truth_);
    }

private:
    int n_channels_;
    int n_bands_;
    std::vector<manifold::SymmetricMatrix> covariances_;
    Vector targets_;
    TargetKind target_kind_;
    std::optional<std::vector<std::string>> groups_;
    std::optional<GroundTruth> truth_;
};

}  // namespace riempat
