#pragma once

#include <string>
#include <vector>

#include "read/linalg.hpp"

namespace readcore {

struct ReducedDistrict {
    std::string district_id;
    Matrix r;  // n_i × k reduced tile features
};

// base layout: [μ_1..μ_k, σ_1..σ_k, n, ρ_(1,2), ρ_(1,3), …, ρ_(k−1,k)]
// cross: products base_a·base_b for a ≤ b in row-major upper-triangle order.
struct DistrictRepresentation {
    std::string district_id;
    std::vector<double> base;
    std::vector<double> cross;
    std::vector<double> r;  // base ∥ cross
};

// Which statistic blocks participate in the representation; used by the
// ablation runs. n=false zeroes the count entry, etc. — layout stays fixed.
struct StatMask {
    bool mu = true;
    bool sigma = true;
    bool n = true;
    bool rho = true;
};

std::size_t base_len(int k);   // 2k + 1 + k(k−1)/2
std::size_t repr_len(int k);   // m + m(m+1)/2

// μ = column means; σ = sample standard deviation (0 when n = 1);
// ρ = Pearson correlations, 0 when n < 2 or a column has zero variance,
// clamped to [−1, 1].
std::vector<double> base_features(const Matrix& r);

std::vector<double> cross_products(const std::vector<double>& base);

DistrictRepresentation represent(const ReducedDistrict& district,
                                 const StatMask& mask = StatMask{});

std::string representations_csv(const std::vector<DistrictRepresentation>& reps, int k);
std::vector<DistrictRepresentation> parse_representations_csv(const std::string& text,
                                                              int* k_out = nullptr);

}  // namespace readcore
