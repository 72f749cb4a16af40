#include "read/regression.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace readcore {

using ordered_json = nlohmann::ordered_json;

Dataset log_targets(const DemographicsTable& demo, const std::string& variable,
                    const std::vector<DistrictRepresentation>& reps) {
    const std::size_t var = demo.find_variable(variable);
    Dataset out;
    out.target_name = variable;
    for (const auto& rep : reps) {
        std::size_t row = demo.district_ids.size();
        for (std::size_t i = 0; i < demo.district_ids.size(); ++i)
            if (demo.district_ids[i] == rep.district_id) {
                row = i;
                break;
            }
        if (row == demo.district_ids.size())
            throw data_error("demographics table has no district " + rep.district_id);
        const double raw = demo.values[row][var];
        if (!(raw > 0.0))
            throw data_error("district " + rep.district_id + ": variable " + variable +
                             " must be positive for log scaling, got " + fmt_double(raw));
        out.rows.push_back(DataRow{rep.district_id, rep.r, std::log(raw)});
    }
    return out;
}

Split split_80_20(std::size_t n, Rng& rng, double test_fraction) {
    if (n < 5) throw config_error("split: need at least 5 rows");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    const std::size_t n_test =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    Split s;
    s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    return s;
}

Split split_80_20(const Dataset& data, std::uint64_t seed) {
    Rng rng(seed);
    return split_80_20(data.rows.size(), rng);
}

std::vector<std::vector<std::size_t>> kfold(std::vector<std::size_t> idx, int k, Rng& rng) {
    if (k < 2) throw config_error("kfold: need at least 2 folds");
    if (idx.size() < static_cast<std::size_t>(k))
        throw config_error("kfold: fewer rows than folds");
    rng.shuffle(idx);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    const std::size_t base = idx.size() / static_cast<std::size_t>(k);
    const std::size_t extra = idx.size() % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
        const std::size_t len = base + (f < extra ? 1 : 0);
        folds[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                        idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return folds;
}

namespace {

void check_dataset(const Dataset& data) {
    if (data.rows.empty()) throw numeric_error("regression: empty training set");
    const std::size_t s = data.rows[0].r.size();
    for (const auto& row : data.rows) {
        if (row.r.size() != s)
            throw data_error("regression: inconsistent feature length for district " +
                             row.district_id);
        if (!std::isfinite(row.y))
            throw data_error("regression: non-finite target for district " + row.district_id);
    }
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

Standardizer Standardizer::fit(const Dataset& data) {
    check_dataset(data);
    const std::size_t n = data.rows.size(), s = data.rows[0].r.size();
    Standardizer st;
    st.mean.assign(s, 0.0);
    st.scale.assign(s, 1.0);
    for (const auto& row : data.rows)
        for (std::size_t j = 0; j < s; ++j) st.mean[j] += row.r[j];
    for (auto& m : st.mean) m /= static_cast<double>(n);
    std::vector<double> var(s, 0.0);
    for (const auto& row : data.rows)
        for (std::size_t j = 0; j < s; ++j) {
            const double d = row.r[j] - st.mean[j];
            var[j] += d * d;
        }
    for (std::size_t j = 0; j < s; ++j) {
        const double sd = std::sqrt(var[j] / static_cast<double>(n));
        st.scale[j] = sd > 0.0 ? sd : 1.0;  // constant columns become all-zero
    }
    return st;
}

std::vector<double> Standardizer::apply(const std::vector<double>& x) const {
    if (x.size() != mean.size()) throw numeric_error("standardizer: dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
    return out;
}

namespace {

struct StandardizedDesign {
    std::size_t n = 0, s = 0;
    std::vector<double> x;   // n×s standardized, row-major
    std::vector<double> yc;  // centered targets
    double ybar = 0.0;
};

StandardizedDesign standardize(const Dataset& data, const Standardizer& st) {
    StandardizedDesign d;
    d.n = data.rows.size();
    d.s = data.rows[0].r.size();
    d.x.resize(d.n * d.s);
    d.yc.resize(d.n);
    for (std::size_t i = 0; i < d.n; ++i) {
        const auto xs = st.apply(data.rows[i].r);
        std::copy(xs.begin(), xs.end(), d.x.begin() + static_cast<std::ptrdiff_t>(i * d.s));
        d.ybar += data.rows[i].y;
    }
    d.ybar /= static_cast<double>(d.n);
    for (std::size_t i = 0; i < d.n; ++i) d.yc[i] = data.rows[i].y - d.ybar;
    return d;
}

}  // namespace

RegressorModel ridge_fit(const Dataset& train, double lambda) {
    check_dataset(train);
    if (lambda < 0.0) throw config_error("ridge: lambda must be ≥ 0");
    RegressorModel model;
    model.kind = "ridge";
    model.lambda = lambda;
    model.standardizer = Standardizer::fit(train);
    const auto d = standardize(train, model.standardizer);
    model.intercept = d.ybar;

    try {
        if (d.s <= d.n) {
            Matrix a(d.s, d.s);
            for (std::size_t i = 0; i < d.n; ++i) {
                const double* row = &d.x[i * d.s];
                for (std::size_t p = 0; p < d.s; ++p) {
                    if (row[p] == 0.0) continue;
                    for (std::size_t q = p; q < d.s; ++q) a.at(p, q) += row[p] * row[q];
                }
            }
            for (std::size_t p = 0; p < d.s; ++p) {
                a.at(p, p) += lambda;
                for (std::size_t q = p + 1; q < d.s; ++q) a.at(q, p) = a.at(p, q);
            }
            std::vector<double> b(d.s, 0.0);
            for (std::size_t i = 0; i < d.n; ++i) {
                const double* row = &d.x[i * d.s];
                for (std::size_t j = 0; j < d.s; ++j) b[j] += row[j] * d.yc[i];
            }
            model.weights = cholesky_solve(std::move(a), std::move(b));
        } else {
            // Dual form: w = Xᵀ(XXᵀ + λI)⁻¹ y — the s×s system is singular
            // whenever s > n, the n×n one is not.
            Matrix g(d.n, d.n);
            for (std::size_t i = 0; i < d.n; ++i)
                for (std::size_t j = i; j < d.n; ++j) {
                    double dot = 0.0;
                    const double* ri = &d.x[i * d.s];
                    const double* rj = &d.x[j * d.s];
                    for (std::size_t kx = 0; kx < d.s; ++kx) dot += ri[kx] * rj[kx];
                    g.at(i, j) = dot;
                    g.at(j, i) = dot;
                }
            for (std::size_t i = 0; i < d.n; ++i) g.at(i, i) += lambda;
            const auto alpha = cholesky_solve(std::move(g), d.yc);
            model.weights.assign(d.s, 0.0);
            for (std::size_t i = 0; i < d.n; ++i) {
                const double* ri = &d.x[i * d.s];
                for (std::size_t j = 0; j < d.s; ++j) model.weights[j] += ri[j] * alpha[i];
            }
        }
    } catch (const numeric_error&) {
        throw numeric_error("ridge: singular normal equations — use lambda > 0");
    }
    return model;
}

RegressorModel lasso_fit(const Dataset& train, double lambda, double tol, int max_sweeps) {
    check_dataset(train);
    if (lambda < 0.0) throw config_error("lasso: lambda must be ≥ 0");
    RegressorModel model;
    model.kind = "lasso";
    model.lambda = lambda;
    model.standardizer = Standardizer::fit(train);
    const auto d = standardize(train, model.standardizer);
    model.intercept = d.ybar;
    model.weights.assign(d.s, 0.0);

    const double invn = 1.0 / static_cast<double>(d.n);
    std::vector<double> z(d.s, 0.0);  // (1/n) Σ x_ij²
    for (std::size_t i = 0; i < d.n; ++i) {
        const double* row = &d.x[i * d.s];
        for (std::size_t j = 0; j < d.s; ++j) z[j] += row[j] * row[j];
    }
    for (auto& v : z) v *= invn;

    std::vector<double> resid = d.yc;  // y − Xw with w = 0
    auto soft = [](double a, double l) {
        if (a > l) return a - l;
        if (a < -l) return a + l;
        return 0.0;
    };

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        for (std::size_t j = 0; j < d.s; ++j) {
            if (z[j] == 0.0) continue;
            double rho = 0.0;
            for (std::size_t i = 0; i < d.n; ++i) rho += d.x[i * d.s + j] * resid[i];
            rho = rho * invn + z[j] * model.weights[j];
            const double wj = soft(rho, lambda) / z[j];
            const double delta = wj - model.weights[j];
            if (delta != 0.0) {
                for (std::size_t i = 0; i < d.n; ++i) resid[i] -= d.x[i * d.s + j] * delta;
                model.weights[j] = wj;
            }
        }
        // KKT violation: zero weights need |gradient| ≤ λ, active weights
        // need gradient + λ·sign = 0.
        double viol = 0.0;
        for (std::size_t j = 0; j < d.s; ++j) {
            if (z[j] == 0.0) continue;
            double g = 0.0;
            for (std::size_t i = 0; i < d.n; ++i) g += d.x[i * d.s + j] * resid[i];
            g = -g * invn;
            if (model.weights[j] != 0.0)
                viol = std::max(viol, std::abs(g + lambda * (model.weights[j] > 0 ? 1.0 : -1.0)));
            else
                viol = std::max(viol, std::max(0.0, std::abs(g) - lambda));
        }
        if (viol <= tol) break;
    }
    return model;
}

double Tree::eval(const std::vector<double>& x) const {
    int cur = 0;
    while (nodes[static_cast<std::size_t>(cur)].feature >= 0) {
        const Node& nd = nodes[static_cast<std::size_t>(cur)];
        cur = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(cur)].value;
}

namespace {

// Exact greedy regression tree on residuals, grown level by level over
// presorted feature orders. Returns the leaf node of every sample so the
// booster can update predictions without re-walking the tree.
Tree grow_tree(const std::vector<std::vector<double>>& cols,
               const std::vector<std::vector<int>>& order, const std::vector<double>& resid,
               int max_depth, double min_gain, std::vector<int>& leaf_of) {
    const std::size_t n = resid.size();
    const std::size_t s = cols.size();
    Tree tree;
    tree.nodes.push_back(Tree::Node{});
    std::vector<int> node_of(n, 0);
    std::vector<int> active{0};

    for (int depth = 0; depth < max_depth && !active.empty(); ++depth) {
        const std::size_t na = active.size();
        std::vector<int> slot_of(tree.nodes.size(), -1);
        for (std::size_t a = 0; a < na; ++a) slot_of[static_cast<std::size_t>(active[a])] = static_cast<int>(a);

        std::vector<double> tot_sum(na, 0.0);
        std::vector<int> tot_cnt(na, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const int nd = node_of[i];
            if (nd < 0) continue;
            const int sl = slot_of[static_cast<std::size_t>(nd)];
            if (sl < 0) continue;
            tot_sum[static_cast<std::size_t>(sl)] += resid[i];
            tot_cnt[static_cast<std::size_t>(sl)] += 1;
        }

        std::vector<double> best_gain(na, 0.0), best_thr(na, 0.0);
        std::vector<int> best_feat(na, -1);
        std::vector<double> run_sum(na), prev_val(na);
        std::vector<int> run_cnt(na);

        for (std::size_t j = 0; j < s; ++j) {
            std::fill(run_sum.begin(), run_sum.end(), 0.0);
            std::fill(run_cnt.begin(), run_cnt.end(), 0);
            const auto& ord = order[j];
            const auto& col = cols[j];
            for (int idx : ord) {
                const int nd = node_of[static_cast<std::size_t>(idx)];
                if (nd < 0) continue;
                const int sl = slot_of[static_cast<std::size_t>(nd)];
                if (sl < 0) continue;
                const std::size_t su = static_cast<std::size_t>(sl);
                const double v = col[static_cast<std::size_t>(idx)];
                if (run_cnt[su] > 0 && v > prev_val[su]) {
                    const double ls = run_sum[su], ts = tot_sum[su];
                    const int lc = run_cnt[su], tc = tot_cnt[su];
                    const int rc = tc - lc;
                    const double rs = ts - ls;
                    const double gain =
                        ls * ls / lc + rs * rs / rc - ts * ts / tc;
                    if (gain > best_gain[su] && gain > min_gain) {
                        best_gain[su] = gain;
                        best_feat[su] = static_cast<int>(j);
                        best_thr[su] = prev_val[su];
                    }
                }
                run_sum[su] += resid[static_cast<std::size_t>(idx)];
                run_cnt[su] += 1;
                prev_val[su] = v;
            }
        }

        std::vector<int> next_active;
        for (std::size_t a = 0; a < na; ++a) {
            const int nd = active[a];
            if (best_feat[a] < 0) {
                auto& node = tree.nodes[static_cast<std::size_t>(nd)];
                node.value = tot_cnt[a] > 0 ? tot_sum[a] / tot_cnt[a] : 0.0;
                continue;
            }
            // push both children before touching the parent: push_back may
            // reallocate and would invalidate a reference held across it
            const int left = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(Tree::Node{});
            tree.nodes.push_back(Tree::Node{});
            auto& node = tree.nodes[static_cast<std::size_t>(nd)];
            node.feature = best_feat[a];
            node.threshold = best_thr[a];
            node.left = left;
            node.right = left + 1;
            next_active.push_back(left);
            next_active.push_back(left + 1);
        }

        for (std::size_t i = 0; i < n; ++i) {
            const int nd = node_of[i];
            if (nd < 0) continue;
            const auto& node = tree.nodes[static_cast<std::size_t>(nd)];
            if (node.feature < 0) {
                node_of[i] = ~nd;  // settled; keep the id recoverable
                continue;
            }
            node_of[i] = cols[static_cast<std::size_t>(node.feature)][i] <= node.threshold
                             ? node.left
                             : node.right;
        }
        active = std::move(next_active);
    }

    // Depth limit reached: remaining active nodes become leaves.
    if (!active.empty()) {
        std::vector<double> sum(tree.nodes.size(), 0.0);
        std::vector<int> cnt(tree.nodes.size(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const int nd = node_of[i];
            if (nd < 0) continue;
            sum[static_cast<std::size_t>(nd)] += resid[i];
            cnt[static_cast<std::size_t>(nd)] += 1;
        }
        for (int nd : active) {
            auto& node = tree.nodes[static_cast<std::size_t>(nd)];
            node.value = cnt[static_cast<std::size_t>(nd)] > 0
                             ? sum[static_cast<std::size_t>(nd)] / cnt[static_cast<std::size_t>(nd)]
                             : 0.0;
        }
    }

    leaf_of.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        leaf_of[i] = node_of[i] < 0 ? ~node_of[i] : node_of[i];
    return tree;
}

}  // namespace

RegressorModel gbt_fit(const Dataset& train, const GbtParams& params) {
    check_dataset(train);
    if (params.trees <= 0 || params.depth <= 0)
        throw config_error("gbt: trees and depth must be positive");
    const std::size_t n = train.rows.size();
    const std::size_t s = train.rows[0].r.size();

    RegressorModel model;
    model.kind = "gbt";
    model.learning_rate = params.lr;
    model.max_depth = params.depth;

    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = train.rows[i].y;
    model.base_prediction = mean_of(y);

    // Column-major copy + one presort per feature, reused by every tree.
    std::vector<std::vector<double>> cols(s, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) cols[j][i] = train.rows[i].r[j];
    std::vector<std::vector<int>> order(s);
    for (std::size_t j = 0; j < s; ++j) {
        order[j].resize(n);
        std::iota(order[j].begin(), order[j].end(), 0);
        const auto& col = cols[j];
        std::stable_sort(order[j].begin(), order[j].end(),
                         [&col](int a, int b) { return col[static_cast<std::size_t>(a)] <
                                                       col[static_cast<std::size_t>(b)]; });
    }

    std::vector<double> pred(n, model.base_prediction), resid(n);
    std::vector<int> leaf_of;
    for (int t = 0; t < params.trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - pred[i];
        Tree tree = grow_tree(cols, order, resid, params.depth, params.min_gain, leaf_of);
        for (std::size_t i = 0; i < n; ++i)
            pred[i] += params.lr * tree.nodes[static_cast<std::size_t>(leaf_of[i])].value;
        model.trees.push_back(std::move(tree));
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = y[i] - pred[i];
            sse += d * d;
        }
        model.train_curve.push_back(sse / static_cast<double>(n));
    }
    return model;
}

double predict(const RegressorModel& model, const std::vector<double>& r) {
    if (model.kind == "gbt") {
        double out = model.base_prediction;
        for (const auto& tree : model.trees) out += model.learning_rate * tree.eval(r);
        return out;
    }
    const auto xs = model.standardizer.apply(r);
    double out = model.intercept;
    for (std::size_t j = 0; j < xs.size(); ++j) out += model.weights[j] * xs[j];
    return out;
}

std::vector<double> predict_all(const RegressorModel& model, const Dataset& data) {
    std::vector<double> out;
    out.reserve(data.rows.size());
    for (const auto& row : data.rows) out.push_back(predict(model, row.r));
    return out;
}

std::pair<std::vector<double>, double> raw_coefficients(const RegressorModel& model) {
    if (model.kind == "gbt") throw numeric_error("raw_coefficients: linear models only");
    std::vector<double> w(model.weights.size());
    double b = model.intercept;
    for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] = model.weights[j] / model.standardizer.scale[j];
        b -= model.weights[j] * model.standardizer.mean[j] / model.standardizer.scale[j];
    }
    return {w, b};
}

double mse(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size() || y.empty()) throw numeric_error("mse: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - yhat[i];
        s += d * d;
    }
    return s / static_cast<double>(y.size());
}

double r2(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size() || y.empty()) throw numeric_error("r2: size mismatch");
    const double ybar = mean_of(y);
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_tot += (y[i] - ybar) * (y[i] - ybar);
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    }
    if (ss_tot == 0.0) throw numeric_error("r2: zero-variance targets, metric undefined");
    return 1.0 - ss_res / ss_tot;
}

static const char kRegMagic[8] = {'R', 'E', 'A', 'D', 'R', 'E', 'G', '1'};

void save_regressor(const std::filesystem::path& path, const RegressorModel& model) {
    std::string buf(kRegMagic, sizeof(kRegMagic));
    const std::uint32_t kind = model.kind == "ridge" ? 0u : model.kind == "lasso" ? 1u : 2u;
    put_u32(buf, kind);
    if (kind != 2u) {
        put_u64(buf, model.weights.size());
        for (double v : model.standardizer.mean) put_f64(buf, v);
        for (double v : model.standardizer.scale) put_f64(buf, v);
        for (double v : model.weights) put_f64(buf, v);
        put_f64(buf, model.intercept);
        put_f64(buf, model.lambda);
    } else {
        put_f64(buf, model.learning_rate);
        put_f64(buf, model.base_prediction);
        put_u32(buf, static_cast<std::uint32_t>(model.max_depth));
        put_u64(buf, model.trees.size());
        for (const auto& tree : model.trees) {
            put_u64(buf, tree.nodes.size());
            for (const auto& nd : tree.nodes) {
                put_u32(buf, static_cast<std::uint32_t>(nd.feature));
                put_f64(buf, nd.threshold);
                put_u32(buf, static_cast<std::uint32_t>(nd.left));
                put_u32(buf, static_cast<std::uint32_t>(nd.right));
                put_f64(buf, nd.value);
            }
        }
        put_u64(buf, model.train_curve.size());
        for (double v : model.train_curve) put_f64(buf, v);
    }
    write_text_file(path, buf);
}

RegressorModel load_regressor(const std::filesystem::path& path) {
    const std::string buf = read_text_file(path);
    const std::string name = path.string();
    if (buf.size() < sizeof(kRegMagic) || std::memcmp(buf.data(), kRegMagic, sizeof(kRegMagic)) != 0)
        throw data_error("regressor file " + name + ": bad magic");
    std::size_t off = sizeof(kRegMagic);
    RegressorModel model;
    const std::uint32_t kind = get_u32(buf, off, name);
    if (kind > 2) throw data_error("regressor file " + name + ": unknown kind");
    model.kind = kind == 0 ? "ridge" : kind == 1 ? "lasso" : "gbt";
    if (kind != 2) {
        const std::uint64_t s = get_u64(buf, off, name);
        model.standardizer.mean.resize(s);
        model.standardizer.scale.resize(s);
        model.weights.resize(s);
        for (auto& v : model.standardizer.mean) v = get_f64(buf, off, name);
        for (auto& v : model.standardizer.scale) v = get_f64(buf, off, name);
        for (auto& v : model.weights) v = get_f64(buf, off, name);
        model.intercept = get_f64(buf, off, name);
        model.lambda = get_f64(buf, off, name);
    } else {
        model.learning_rate = get_f64(buf, off, name);
        model.base_prediction = get_f64(buf, off, name);
        model.max_depth = static_cast<int>(get_u32(buf, off, name));
        const std::uint64_t nt = get_u64(buf, off, name);
        model.trees.resize(nt);
        for (auto& tree : model.trees) {
            const std::uint64_t nn = get_u64(buf, off, name);
            tree.nodes.resize(nn);
            for (auto& nd : tree.nodes) {
                nd.feature = static_cast<std::int32_t>(get_u32(buf, off, name));
                nd.threshold = get_f64(buf, off, name);
                nd.left = static_cast<std::int32_t>(get_u32(buf, off, name));
                nd.right = static_cast<std::int32_t>(get_u32(buf, off, name));
                nd.value = get_f64(buf, off, name);
            }
        }
        const std::uint64_t nc = get_u64(buf, off, name);
        model.train_curve.resize(nc);
        for (auto& v : model.train_curve) v = get_f64(buf, off, name);
    }
    if (off != buf.size()) throw data_error("regressor file " + name + ": trailing bytes");
    return model;
}

// --- evaluation protocol -------------------------------------------------

std::vector<double> EvalConfig::lambda_grid() const {
    if (!lambdas.empty()) return lambdas;
    std::vector<double> g;
    for (int e = -3; e <= 3; ++e) g.push_back(std::pow(10.0, e));
    return g;
}

void EvalConfig::validate() const {
    if (regressor != "ridge" && regressor != "lasso" && regressor != "gbt")
        throw config_error("evaluate: regressor must be ridge, lasso, or gbt");
    if (trials < 1) throw config_error("evaluate: trials must be ≥ 1");
    if (folds < 2) throw config_error("evaluate: folds must be ≥ 2");
    if (k_max < 1) throw config_error("evaluate: k_max must be ≥ 1");
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw config_error("evaluate: test fraction must be in (0,1)");
    if (regressor == "gbt" && gbt_depths.empty())
        throw config_error("evaluate: gbt depth grid is empty");
}

namespace {

struct Hyper {
    double lambda = 0.0;
    int depth = 0;
};

std::vector<Hyper> hyper_grid(const EvalConfig& cfg) {
    std::vector<Hyper> out;
    if (cfg.regressor == "gbt")
        for (int d : cfg.gbt_depths) out.push_back(Hyper{0.0, d});
    else
        for (double l : cfg.lambda_grid()) out.push_back(Hyper{l, 0});
    return out;
}

RegressorModel fit_one(const Dataset& data, const Hyper& h, const EvalConfig& cfg) {
    if (cfg.regressor == "ridge") return ridge_fit(data, h.lambda);
    if (cfg.regressor == "lasso") return lasso_fit(data, h.lambda, cfg.lasso_tol);
    return gbt_fit(data, GbtParams{cfg.gbt_trees, h.depth, cfg.gbt_lr, 1e-12});
}

Matrix concat_tiles(const std::vector<DistrictEmbeddings>& districts,
                    const std::vector<std::size_t>& idxs) {
    std::size_t rows = 0;
    for (std::size_t i : idxs) rows += districts[i].tiles.rows;
    const std::size_t e = districts[idxs[0]].tiles.cols;
    Matrix out(rows, e);
    std::size_t at = 0;
    for (std::size_t i : idxs) {
        const Matrix& t = districts[i].tiles;
        std::copy(t.data.begin(), t.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(at * e));
        at += t.rows;
    }
    return out;
}

Matrix reduce_tiles(const PcaModel& pca, const Matrix& tiles) {
    Matrix out(tiles.rows, static_cast<std::size_t>(pca.k));
    std::vector<double> row(tiles.cols);
    for (std::size_t i = 0; i < tiles.rows; ++i) {
        for (std::size_t j = 0; j < tiles.cols; ++j) row[j] = tiles.at(i, j);
        const auto red = pca_transform(pca, row);
        for (std::size_t j = 0; j < red.size(); ++j) out.at(i, j) = red[j];
    }
    return out;
}

Matrix take_cols(const Matrix& m, int k) {
    Matrix out(m.rows, static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < m.rows; ++i)
        for (int j = 0; j < k; ++j) out.at(i, static_cast<std::size_t>(j)) = m.at(i, static_cast<std::size_t>(j));
    return out;
}

Dataset build_dataset(const std::vector<DistrictEmbeddings>& districts,
                      const std::vector<std::size_t>& idxs,
                      const std::vector<Matrix>& reduced,  // parallel to districts
                      int k, const StatMask& mask, const std::vector<double>& y,
                      const std::string& variable) {
    Dataset out;
    out.target_name = variable;
    for (std::size_t i : idxs) {
        ReducedDistrict rd{districts[i].district_id, take_cols(reduced[i], k)};
        auto rep = represent(rd, mask);
        out.rows.push_back(DataRow{districts[i].district_id, std::move(rep.r), y[i]});
    }
    return out;
}

int pca_cap(const EvalConfig& cfg, std::size_t n_tiles, std::size_t e) {
    return static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(cfg.k_max), std::min(n_tiles - 1, e)));
}

PcaModel pca_prefix(const PcaModel& m, int k) {
    PcaModel out = m;
    out.k = k;
    out.components.resize(static_cast<std::size_t>(k));
    out.eigenvalues.resize(static_cast<std::size_t>(k));
    out.explained_variance_ratio.resize(static_cast<std::size_t>(k));
    return out;
}

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
    mean = mean_of(v);
    if (v.size() < 2) {
        sd = 0.0;
        return;
    }
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

EvalReport evaluate(const std::vector<DistrictEmbeddings>& districts,
                    const std::string& variable, const EvalConfig& cfg) {
    cfg.validate();
    const std::size_t n = districts.size();
    if (n < 5) throw data_error("evaluate: need at least 5 districts");
    const std::size_t e = districts[0].tiles.cols;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& d = districts[i];
        if (d.tiles.rows < 1 || d.tiles.cols != e)
            throw data_error("evaluate: district " + d.district_id + " has bad tile features");
        if (!(d.raw_value > 0.0))
            throw data_error("district " + d.district_id + ": variable " + variable +
                             " must be positive for log scaling, got " + fmt_double(d.raw_value));
        y[i] = std::log(d.raw_value);
    }

    const auto hypers = hyper_grid(cfg);

    PcaModel trans;
    if (cfg.transductive_pca) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        const Matrix tiles = concat_tiles(districts, all);
        trans = fit_pca(tiles, pca_cap(cfg, tiles.rows, e));
    }

    EvalReport rep;
    rep.variable = variable;
    rep.regressor = cfg.regressor;

    std::vector<Matrix> reduced(n);
    for (int trial = 0; trial < cfg.trials; ++trial) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(trial) + 1));
        const Split split = split_80_20(n, rng, cfg.test_fraction);
        const auto folds = kfold(split.train, cfg.folds, rng);

        int k_avail = cfg.k_max;
        std::vector<std::vector<double>> score;  // [k-1][hyper]

        for (const auto& fold : folds) {
            std::vector<char> in_fold(n, 0);
            for (std::size_t i : fold) in_fold[i] = 1;
            std::vector<std::size_t> fit_idx;
            for (std::size_t i : split.train)
                if (!in_fold[i]) fit_idx.push_back(i);

            PcaModel pca;
            if (cfg.transductive_pca) {
                pca = trans;
            } else {
                const Matrix tiles = concat_tiles(districts, fit_idx);
                pca = fit_pca(tiles, pca_cap(cfg, tiles.rows, e));
            }
            k_avail = std::min(k_avail, pca.k);
            if (score.empty())
                score.assign(static_cast<std::size_t>(cfg.k_max),
                             std::vector<double>(hypers.size(), 0.0));

            for (std::size_t i : split.train) reduced[i] = reduce_tiles(pca, districts[i].tiles);

            for (int k = 1; k <= pca.k; ++k) {
                const Dataset dfit =
                    build_dataset(districts, fit_idx, reduced, k, cfg.mask, y, variable);
                const Dataset dval =
                    build_dataset(districts, fold, reduced, k, cfg.mask, y, variable);
                std::vector<double> yval;
                for (const auto& row : dval.rows) yval.push_back(row.y);
                for (std::size_t h = 0; h < hypers.size(); ++h) {
                    const RegressorModel model = fit_one(dfit, hypers[h], cfg);
                    score[static_cast<std::size_t>(k - 1)][h] += mse(yval, predict_all(model, dval));
                }
            }
        }

        int best_k = 1;
        std::size_t best_h = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int k = 1; k <= k_avail; ++k)
            for (std::size_t h = 0; h < hypers.size(); ++h)
                if (score[static_cast<std::size_t>(k - 1)][h] < best) {
                    best = score[static_cast<std::size_t>(k - 1)][h];
                    best_k = k;
                    best_h = h;
                }

        // Final refit on the full training districts with the chosen (k, hyper).
        PcaModel final_pca;
        if (cfg.transductive_pca) {
            final_pca = pca_prefix(trans, best_k);
        } else {
            const Matrix tiles = concat_tiles(districts, split.train);
            final_pca = fit_pca(tiles, std::min(best_k, pca_cap(cfg, tiles.rows, e)));
        }
        for (std::size_t i = 0; i < n; ++i) reduced[i] = reduce_tiles(final_pca, districts[i].tiles);
        const Dataset dtrain =
            build_dataset(districts, split.train, reduced, final_pca.k, cfg.mask, y, variable);
        const Dataset dtest =
            build_dataset(districts, split.test, reduced, final_pca.k, cfg.mask, y, variable);
        const RegressorModel model = fit_one(dtrain, hypers[best_h], cfg);
        std::vector<double> ytest;
        for (const auto& row : dtest.rows) ytest.push_back(row.y);
        const auto yhat = predict_all(model, dtest);

        TrialOutcome out;
        out.mse = mse(ytest, yhat);
        out.r2 = r2(ytest, yhat);
        out.chosen_k = final_pca.k;
        out.chosen_lambda = hypers[best_h].lambda;
        out.chosen_depth = hypers[best_h].depth;
        rep.trials.push_back(out);
    }

    std::vector<double> mses, r2s;
    for (const auto& t : rep.trials) {
        mses.push_back(t.mse);
        r2s.push_back(t.r2);
    }
    mean_sd(mses, rep.mean_mse, rep.sd_mse);
    mean_sd(r2s, rep.mean_r2, rep.sd_r2);
    return rep;
}

std::vector<AblationRow> ablate(const std::vector<DistrictEmbeddings>& districts,
                                const std::string& variable, const EvalConfig& cfg) {
    std::vector<AblationRow> rows;
    auto run = [&](const std::string& label, StatMask mask) {
        EvalConfig c = cfg;
        c.mask = mask;
        rows.push_back(AblationRow{label, evaluate(districts, variable, c)});
    };
    StatMask base = cfg.mask;
    StatMask m = base;
    m.mu = false;
    run("READ w/o mu", m);
    m = base;
    m.rho = false;
    run("READ w/o rho", m);
    m = base;
    m.n = false;
    run("READ w/o n", m);
    m = base;
    m.sigma = false;
    run("READ w/o sigma", m);
    run("READ", base);
    return rows;
}

namespace {

std::string fixed4(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

ordered_json report_json_obj(const EvalReport& rep) {
    ordered_json j;
    j["variable"] = rep.variable;
    j["regressor"] = rep.regressor;
    j["trials"] = rep.trials.size();
    j["mse"] = {{"mean", rep.mean_mse}, {"sd", rep.sd_mse}};
    j["r2"] = {{"mean", rep.mean_r2}, {"sd", rep.sd_r2}};
    ordered_json arr = ordered_json::array();
    for (const auto& t : rep.trials) {
        ordered_json o;
        o["mse"] = t.mse;
        o["r2"] = t.r2;
        o["k"] = t.chosen_k;
        if (rep.regressor == "gbt")
            o["depth"] = t.chosen_depth;
        else
            o["lambda"] = t.chosen_lambda;
        arr.push_back(std::move(o));
    }
    j["per_trial"] = std::move(arr);
    return j;
}

}  // namespace

std::string eval_report_json(const EvalReport& report) {
    return report_json_obj(report).dump(1) + "\n";
}

std::string eval_report_text(const EvalReport& report) {
    std::string out;
    out += "target: " + report.variable + "   regressor: " + report.regressor +
           "   trials: " + std::to_string(report.trials.size()) + "\n";
    out += "MSE: " + fixed4(report.mean_mse) + " +/- " + fixed4(report.sd_mse) + "\n";
    out += "R2:  " + fixed4(report.mean_r2) + " +/- " + fixed4(report.sd_r2) + "\n";
    return out;
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
    ordered_json arr = ordered_json::array();
    for (const auto& row : rows) {
        ordered_json o;
        o["model"] = row.label;
        o["mse"] = {{"mean", row.report.mean_mse}, {"sd", row.report.sd_mse}};
        o["r2"] = {{"mean", row.report.mean_r2}, {"sd", row.report.sd_r2}};
        arr.push_back(std::move(o));
    }
    return arr.dump(1) + "\n";
}

std::string ablation_table_text(const std::vector<AblationRow>& rows) {
    std::size_t width = 5;  // "model"
    for (const auto& row : rows) width = std::max(width, row.label.size());
    std::string out = "model";
    out.append(width - 5 + 2, ' ');
    out += "MSE                R2\n";
    for (const auto& row : rows) {
        out += row.label;
        out.append(width - row.label.size() + 2, ' ');
        out += fixed4(row.report.mean_mse) + " +/- " + fixed4(row.report.sd_mse);
        out += "   ";
        out += fixed4(row.report.mean_r2) + " +/- " + fixed4(row.report.sd_r2);
        out += "\n";
    }
    return out;
}

}  // namespace readcore
