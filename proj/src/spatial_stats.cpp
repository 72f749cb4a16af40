#include "read/spatial_stats.hpp"

#include <algorithm>
#include <cmath>

namespace readcore {

std::size_t base_len(int k) {
    const std::size_t ku = static_cast<std::size_t>(k);
    return 2 * ku + 1 + ku * (ku - 1) / 2;
}

std::size_t repr_len(int k) {
    const std::size_t m = base_len(k);
    return m + m * (m + 1) / 2;
}

namespace {

// Summing over a sorted copy makes the result a function of the multiset of
// addends only, so the statistics are invariant to tile order bit for bit.
double order_free_sum(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

}  // namespace

std::vector<double> base_features(const Matrix& r) {
    const std::size_t n = r.rows, k = r.cols;
    if (n < 1 || k < 1) throw numeric_error("district statistics: empty feature matrix");
    for (double v : r.data)
        if (!std::isfinite(v)) throw numeric_error("district statistics: non-finite input");

    std::vector<double> mu(k, 0.0), var(k, 0.0), scratch(n);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < n; ++i) scratch[i] = r.at(i, j);
        mu[j] = order_free_sum(scratch) / static_cast<double>(n);
    }

    if (n > 1) {
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t i = 0; i < n; ++i) {
                const double d = r.at(i, j) - mu[j];
                scratch[i] = d * d;
            }
            var[j] = order_free_sum(scratch) / static_cast<double>(n - 1);
        }
    }

    std::vector<double> base;
    base.reserve(base_len(static_cast<int>(k)));
    base.insert(base.end(), mu.begin(), mu.end());
    for (double v : var) base.push_back(std::sqrt(v));
    base.push_back(static_cast<double>(n));

    for (std::size_t a = 0; a + 1 < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            double rho = 0.0;
            if (n >= 2 && var[a] > 0.0 && var[b] > 0.0) {
                for (std::size_t i = 0; i < n; ++i)
                    scratch[i] = (r.at(i, a) - mu[a]) * (r.at(i, b) - mu[b]);
                const double cov = order_free_sum(scratch) / static_cast<double>(n - 1);
                rho = std::clamp(cov / std::sqrt(var[a] * var[b]), -1.0, 1.0);
            }
            base.push_back(rho);
        }
    }
    return base;
}

std::vector<double> cross_products(const std::vector<double>& base) {
    const std::size_t m = base.size();
    std::vector<double> out;
    out.reserve(m * (m + 1) / 2);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a; b < m; ++b) out.push_back(base[a] * base[b]);
    return out;
}

DistrictRepresentation represent(const ReducedDistrict& district, const StatMask& mask) {
    const int k = static_cast<int>(district.r.cols);
    DistrictRepresentation rep;
    rep.district_id = district.district_id;
    rep.base = base_features(district.r);

    if (!mask.mu || !mask.sigma || !mask.n || !mask.rho) {
        const std::size_t ku = static_cast<std::size_t>(k);
        std::size_t idx = 0;
        for (std::size_t j = 0; j < ku; ++j, ++idx)
            if (!mask.mu) rep.base[idx] = 0.0;
        for (std::size_t j = 0; j < ku; ++j, ++idx)
            if (!mask.sigma) rep.base[idx] = 0.0;
        if (!mask.n) rep.base[idx] = 0.0;
        ++idx;
        for (; idx < rep.base.size(); ++idx)
            if (!mask.rho) rep.base[idx] = 0.0;
    }

    rep.cross = cross_products(rep.base);
    rep.r = rep.base;
    rep.r.insert(rep.r.end(), rep.cross.begin(), rep.cross.end());
    if (rep.r.size() != repr_len(k))
        throw numeric_error("district representation: length formula violated");
    return rep;
}

std::string representations_csv(const std::vector<DistrictRepresentation>& reps, int k) {
    std::string out = "representation,v1,k=" + std::to_string(k) + '\n';
    out += "district_id";
    const std::size_t s = repr_len(k);
    for (std::size_t i = 0; i < s; ++i) out += ",r" + std::to_string(i);
    out += '\n';
    for (const auto& rep : reps) {
        if (rep.r.size() != s)
            throw data_error("representation for district " + rep.district_id +
                             " has wrong length");
        out += rep.district_id;
        for (double v : rep.r) {
            out += ',';
            out += fmt_double(v);
        }
        out += '\n';
    }
    return out;
}

std::vector<DistrictRepresentation> parse_representations_csv(const std::string& text,
                                                              int* k_out) {
    auto lines = split(trim(text), '\n');
    if (lines.size() < 2) throw data_error("representation file: too short");
    auto head = split(trim(lines[0]), ',');
    if (head.size() != 3 || head[0] != "representation" || head[1] != "v1" ||
        head[2].rfind("k=", 0) != 0)
        throw data_error("representation file: bad version header");
    const int k = static_cast<int>(parse_long(head[2].substr(2), "representation header"));
    if (k_out) *k_out = k;
    const std::size_t s = repr_len(k);

    std::vector<DistrictRepresentation> out;
    for (std::size_t li = 2; li < lines.size(); ++li) {
        auto cells = split(trim(lines[li]), ',');
        if (cells.size() == 1 && cells[0].empty()) continue;
        if (cells.size() != s + 1)
            throw data_error("representation file row " + std::to_string(li) + ": expected " +
                             std::to_string(s + 1) + " fields, got " +
                             std::to_string(cells.size()));
        DistrictRepresentation rep;
        rep.district_id = cells[0];
        rep.r.reserve(s);
        for (std::size_t i = 1; i < cells.size(); ++i)
            rep.r.push_back(parse_double(cells[i], "representation file"));
        const std::size_t m = base_len(k);
        rep.base.assign(rep.r.begin(), rep.r.begin() + static_cast<std::ptrdiff_t>(m));
        rep.cross.assign(rep.r.begin() + static_cast<std::ptrdiff_t>(m), rep.r.end());
        out.push_back(std::move(rep));
    }
    return out;
}

}  // namespace readcore
