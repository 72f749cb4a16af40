#include "read/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace readcore {

namespace {

// Cyclic Jacobi diagonalization of a symmetric matrix. Returns eigenvalues
// on the diagonal of `a` and accumulates rotations into `v` (columns are
// eigenvectors).
void jacobi_eigen(Matrix& a, Matrix& v) {
    const std::size_t n = a.rows;
    v = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    double off0 = 0.0;
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t q = p + 1; q < n; ++q) off0 += a.at(p, q) * a.at(p, q);
    if (off0 == 0.0) return;
    const double tol = std::max(1e-300, off0 * 1e-30);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        if (off <= tol) return;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double app = a.at(p, p), aqq = a.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a.at(i, p), aiq = a.at(i, q);
                    a.at(i, p) = c * aip - s * aiq;
                    a.at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a.at(p, i), aqi = a.at(q, i);
                    a.at(p, i) = c * api - s * aqi;
                    a.at(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v.at(i, p), viq = v.at(i, q);
                    v.at(i, p) = c * vip - s * viq;
                    v.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }
}

}  // namespace

PcaModel fit_pca(const Matrix& x, int k) {
    const std::size_t n = x.rows, e = x.cols;
    if (n < 2) throw numeric_error("pca: need at least 2 samples");
    if (k < 1 || static_cast<std::size_t>(k) > std::min(n - 1, e))
        throw numeric_error("pca: k must be in [1, min(N-1, E)]");
    for (double v : x.data)
        if (!std::isfinite(v)) throw numeric_error("pca: non-finite input");

    PcaModel model;
    model.dim = static_cast<int>(e);
    model.k = k;
    model.mean.assign(e, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < e; ++j) model.mean[j] += x.at(i, j);
    for (auto& m : model.mean) m /= static_cast<double>(n);

    Matrix cov(e, e);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < e; ++a) {
            const double da = x.at(i, a) - model.mean[a];
            if (da == 0.0) continue;
            for (std::size_t b = a; b < e; ++b)
                cov.at(a, b) += da * (x.at(i, b) - model.mean[b]);
        }
    }
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (std::size_t a = 0; a < e; ++a)
        for (std::size_t b = a; b < e; ++b) {
            cov.at(a, b) *= inv;
            cov.at(b, a) = cov.at(a, b);
        }

    model.total_variance = 0.0;
    for (std::size_t a = 0; a < e; ++a) model.total_variance += cov.at(a, a);
    if (model.total_variance <= 0.0)
        throw numeric_error("pca: degenerate variance (all rows identical)");

    Matrix diag = cov, vecs;
    jacobi_eigen(diag, vecs);

    std::vector<std::size_t> order(e);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&diag](std::size_t a, std::size_t b) {
        return diag.at(a, a) > diag.at(b, b);
    });

    model.eigenvalues.resize(static_cast<std::size_t>(k));
    model.explained_variance_ratio.resize(static_cast<std::size_t>(k));
    model.components.assign(static_cast<std::size_t>(k), std::vector<double>(e, 0.0));
    for (int ci = 0; ci < k; ++ci) {
        const std::size_t src = order[static_cast<std::size_t>(ci)];
        model.eigenvalues[static_cast<std::size_t>(ci)] = std::max(0.0, diag.at(src, src));
        model.explained_variance_ratio[static_cast<std::size_t>(ci)] =
            model.eigenvalues[static_cast<std::size_t>(ci)] / model.total_variance;
        auto& row = model.components[static_cast<std::size_t>(ci)];
        for (std::size_t j = 0; j < e; ++j) row[j] = vecs.at(j, src);
        // Deterministic sign: largest-magnitude entry positive.
        std::size_t big = 0;
        for (std::size_t j = 1; j < e; ++j)
            if (std::abs(row[j]) > std::abs(row[big])) big = j;
        if (row[big] < 0.0)
            for (auto& vv : row) vv = -vv;
    }
    return model;
}

std::vector<double> pca_transform(const PcaModel& model, const std::vector<double>& x) {
    if (x.size() != static_cast<std::size_t>(model.dim))
        throw numeric_error("pca transform: dimension mismatch");
    std::vector<double> out(static_cast<std::size_t>(model.k), 0.0);
    for (int ci = 0; ci < model.k; ++ci) {
        const auto& row = model.components[static_cast<std::size_t>(ci)];
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) s += row[j] * (x[j] - model.mean[j]);
        out[static_cast<std::size_t>(ci)] = s;
    }
    return out;
}

int choose_k(const PcaModel& model, double target, int k_min, int k_max) {
    int k = model.k;  // fall back to everything we have
    double cum = 0.0;
    for (int i = 0; i < model.k; ++i) {
        cum += model.explained_variance_ratio[static_cast<std::size_t>(i)];
        if (cum >= target) {
            k = i + 1;
            break;
        }
    }
    return std::clamp(k, k_min, std::min(k_max, model.k));
}

std::string pca_model_csv(const PcaModel& model) {
    std::string out = "pca_model,v1\n";
    out += "dim," + std::to_string(model.dim) + '\n';
    out += "k," + std::to_string(model.k) + '\n';
    out += "total_variance," + fmt_double(model.total_variance) + '\n';
    auto row = [&out](const std::string& name, const std::vector<double>& v) {
        out += name;
        for (double x : v) {
            out += ',';
            out += fmt_double(x);
        }
        out += '\n';
    };
    row("mean", model.mean);
    row("eigenvalues", model.eigenvalues);
    row("ratios", model.explained_variance_ratio);
    for (const auto& comp : model.components) row("component", comp);
    return out;
}

PcaModel parse_pca_model_csv(const std::string& text) {
    auto lines = split(trim(text), '\n');
    if (lines.empty() || split(trim(lines[0]), ',')[0] != "pca_model")
        throw data_error("pca model file: bad header");
    PcaModel model;
    auto values = [](const std::vector<std::string>& cells) {
        std::vector<double> v;
        for (std::size_t i = 1; i < cells.size(); ++i)
            v.push_back(parse_double(cells[i], "pca model file"));
        return v;
    };
    for (std::size_t li = 1; li < lines.size(); ++li) {
        auto cells = split(trim(lines[li]), ',');
        if (cells.empty() || cells[0].empty()) continue;
        if (cells[0] == "dim") model.dim = static_cast<int>(parse_long(cells[1], "pca model"));
        else if (cells[0] == "k") model.k = static_cast<int>(parse_long(cells[1], "pca model"));
        else if (cells[0] == "total_variance")
            model.total_variance = parse_double(cells[1], "pca model");
        else if (cells[0] == "mean") model.mean = values(cells);
        else if (cells[0] == "eigenvalues") model.eigenvalues = values(cells);
        else if (cells[0] == "ratios") model.explained_variance_ratio = values(cells);
        else if (cells[0] == "component") model.components.push_back(values(cells));
        else throw data_error("pca model file: unknown row '" + cells[0] + "'");
    }
    if (model.components.size() != static_cast<std::size_t>(model.k) ||
        model.mean.size() != static_cast<std::size_t>(model.dim))
        throw data_error("pca model file: inconsistent dimensions");
    return model;
}

}  // namespace readcore
