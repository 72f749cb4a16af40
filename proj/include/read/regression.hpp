#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "read/imagery_store.hpp"
#include "read/linalg.hpp"
#include "read/pca.hpp"
#include "read/spatial_stats.hpp"
#include "read/util.hpp"

namespace readcore {

struct DataRow {
    std::string district_id;
    std::vector<double> r;
    double y = 0.0;
};

struct Dataset {
    std::string target_name;
    std::vector<DataRow> rows;
};

// Joins representations with one demographic variable; y = natural log of
// the raw value. Non-positive values are rejected naming the district.
Dataset log_targets(const DemographicsTable& demo, const std::string& variable,
                    const std::vector<DistrictRepresentation>& reps);

struct Split {
    std::vector<std::size_t> train, test;
};

// n_test = round(test_fraction · n); indices shuffled then sliced.
Split split_80_20(std::size_t n, Rng& rng, double test_fraction = 0.2);
Split split_80_20(const Dataset& data, std::uint64_t seed);

// Shuffles then cuts contiguous folds whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> kfold(std::vector<std::size_t> idx, int k, Rng& rng);

struct Standardizer {
    std::vector<double> mean, scale;  // scale = 1 for constant columns

    static Standardizer fit(const Dataset& data);
    std::vector<double> apply(const std::vector<double>& x) const;
};

struct Tree {
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;  // go left when x[feature] <= threshold
        int left = -1, right = -1;
        double value = 0.0;
    };
    std::vector<Node> nodes;  // nodes[0] is the root

    double eval(const std::vector<double>& x) const;
};

struct RegressorModel {
    std::string kind;  // ridge | lasso | gbt

    // linear variants (features standardized, penalty excludes the intercept)
    Standardizer standardizer;
    std::vector<double> weights;
    double intercept = 0.0;
    double lambda = 0.0;

    // gradient-boosted trees (raw features)
    std::vector<Tree> trees;
    double learning_rate = 0.0;
    double base_prediction = 0.0;
    int max_depth = 0;
    std::vector<double> train_curve;  // train MSE after each added tree
};

// Normal equations on the standardized design; solves the dual n×n system
// when the feature count exceeds the sample count.
RegressorModel ridge_fit(const Dataset& train, double lambda);

// Cyclic coordinate descent on (1/2N)‖y − Xw‖² + λ‖w‖₁ with a KKT-violation
// stopping rule.
RegressorModel lasso_fit(const Dataset& train, double lambda, double tol = 1e-8,
                         int max_sweeps = 100000);

struct GbtParams {
    int trees = 200;
    int depth = 3;
    double lr = 0.1;
    double min_gain = 1e-12;
};

// Greedy variance-reduction trees on squared-loss residuals. Split ties are
// deterministic: lowest feature index, then smallest threshold.
RegressorModel gbt_fit(const Dataset& train, const GbtParams& params);

double predict(const RegressorModel& model, const std::vector<double>& r);
std::vector<double> predict_all(const RegressorModel& model, const Dataset& data);

// Linear models only: weights/intercept mapped back to unstandardized inputs.
std::pair<std::vector<double>, double> raw_coefficients(const RegressorModel& model);

double mse(const std::vector<double>& y, const std::vector<double>& yhat);
double r2(const std::vector<double>& y, const std::vector<double>& yhat);

void save_regressor(const std::filesystem::path& path, const RegressorModel& model);
RegressorModel load_regressor(const std::filesystem::path& path);

// --- evaluation protocol -------------------------------------------------

// One district's pruned tile embeddings plus its raw demographic value.
struct DistrictEmbeddings {
    std::string district_id;
    Matrix tiles;  // n_i × E
    double raw_value = 0.0;
};

struct EvalConfig {
    std::string regressor = "gbt";  // ridge | lasso | gbt
    int trials = 20;
    int folds = 4;
    double test_fraction = 0.2;
    int k_max = 10;
    std::vector<double> lambdas;  // defaults to 7 log-spaced values 1e-3..1e3
    std::vector<int> gbt_depths = {2, 3, 4};
    int gbt_trees = 200;
    double gbt_lr = 0.1;
    double lasso_tol = 1e-6;
    StatMask mask;
    bool transductive_pca = false;
    std::uint64_t seed = 0;

    std::vector<double> lambda_grid() const;
    void validate() const;
};

struct TrialOutcome {
    double mse = 0.0;
    double r2 = 0.0;
    int chosen_k = 0;
    double chosen_lambda = 0.0;  // linear models
    int chosen_depth = 0;        // gbt
};

struct EvalReport {
    std::string variable;
    std::string regressor;
    std::vector<TrialOutcome> trials;
    double mean_mse = 0.0, sd_mse = 0.0;
    double mean_r2 = 0.0, sd_r2 = 0.0;
};

// Per trial: 80/20 district split, k-fold CV over (k, hyperparameter),
// final refit on the training districts, metric on the held-out districts.
// PCA is refit per fold on the fold's training tiles unless transductive.
EvalReport evaluate(const std::vector<DistrictEmbeddings>& districts,
                    const std::string& variable, const EvalConfig& cfg);

struct AblationRow {
    std::string label;
    EvalReport report;
};

// Drops each statistic block in turn, then the full representation last.
std::vector<AblationRow> ablate(const std::vector<DistrictEmbeddings>& districts,
                                const std::string& variable, const EvalConfig& cfg);

std::string eval_report_json(const EvalReport& report);
std::string eval_report_text(const EvalReport& report);
std::string ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_table_text(const std::vector<AblationRow>& rows);

}  // namespace readcore
