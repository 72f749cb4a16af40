#pragma once

#include <string>
#include <vector>

#include "read/linalg.hpp"

namespace readcore {

struct PcaModel {
    int dim = 0;  // input dimension E
    int k = 0;    // kept components
    std::vector<double> mean;                      // E
    std::vector<std::vector<double>> components;   // k rows of length E, orthonormal
    std::vector<double> eigenvalues;               // k, non-increasing
    std::vector<double> explained_variance_ratio;  // k, each eigenvalue / total variance
    double total_variance = 0.0;                   // trace of the sample covariance
};

// Sample covariance (1/(N−1)) diagonalized by cyclic Jacobi sweeps.
// Components are sorted by descending eigenvalue; each row's
// largest-magnitude entry is made positive so the fit is deterministic.
// Rows must not be all identical (zero variance is rejected).
PcaModel fit_pca(const Matrix& x, int k);

std::vector<double> pca_transform(const PcaModel& model, const std::vector<double>& x);

// Smallest k whose cumulative explained-variance ratio reaches 0.80,
// clamped to [1, 10] (and to the number of fitted components).
int choose_k(const PcaModel& model, double target = 0.80, int k_min = 1, int k_max = 10);

std::string pca_model_csv(const PcaModel& model);
PcaModel parse_pca_model_csv(const std::string& text);

}  // namespace readcore
