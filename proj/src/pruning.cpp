#include "read/pruning.hpp"

#include <algorithm>
#include <cmath>

namespace readcore {

PrunerResult train_pruner(const ConvNetSpec& spec, const std::vector<TrainSample>& labeled,
                          const MeanTeacherConfig& cfg) {
    if (spec.num_classes != 2) throw config_error("pruner: spec must have 2 classes");
    bool saw[2] = {false, false};
    for (const auto& s : labeled) {
        if (s.target.size() != 2) throw config_error("pruner: targets must be binary one-hot");
        if (s.target[0] > s.target[1]) saw[0] = true;
        else saw[1] = true;
    }
    if (!saw[0] || !saw[1])
        throw config_error("pruner: training set contains a single class only");

    // Supervised-only run of the shared training loop.
    MeanTeacherConfig sup = cfg;
    sup.rampup_target = 0.0;
    TrainResult tr = train(spec, labeled, {}, sup);

    PrunerResult out;
    out.params = std::move(tr.student);
    out.held_out_accuracy = tr.report.final_test_acc;
    out.report = std::move(tr.report);
    return out;
}

PrunedSelection prune(const TileSelection& selection,
                      const std::function<double(const TileId&)>& p_inhabited, double threshold) {
    PrunedSelection out;
    out.district_id = selection.district_id;

    double best_p = -1.0;
    std::size_t best_i = 0;
    std::vector<double> probs(selection.tiles.size());
    for (std::size_t i = 0; i < selection.tiles.size(); ++i) {
        probs[i] = p_inhabited(selection.tiles[i]);
        if (probs[i] > best_p) {
            best_p = probs[i];
            best_i = i;
        }
    }
    for (std::size_t i = 0; i < selection.tiles.size(); ++i) {
        if (probs[i] >= threshold)
            out.kept.push_back(selection.tiles[i]);
        else
            out.removed.push_back(selection.tiles[i]);
    }
    if (out.kept.empty() && !selection.tiles.empty()) {
        out.fallback = true;
        out.kept.push_back(selection.tiles[best_i]);
        out.removed.clear();
        for (std::size_t i = 0; i < selection.tiles.size(); ++i)
            if (i != best_i) out.removed.push_back(selection.tiles[i]);
    }
    if (!selection.tiles.empty())
        out.removed_fraction =
            static_cast<double>(out.removed.size()) / static_cast<double>(selection.tiles.size());
    return out;
}

std::string prune_report_csv(const std::vector<PrunedSelection>& selections,
                             const std::vector<int>& n_before) {
    std::string out = "district_id,n_before,n_after,removed_fraction,fallback_flag\n";
    for (std::size_t i = 0; i < selections.size(); ++i) {
        const auto& s = selections[i];
        out += s.district_id + ',' + std::to_string(n_before[i]) + ',' +
               std::to_string(s.kept.size()) + ',' + fmt_double(s.removed_fraction) + ',' +
               (s.fallback ? "1" : "0") + '\n';
    }
    return out;
}

std::string prune_report_csv(const std::vector<PrunedSelection>& selections) {
    std::vector<int> n_before;
    n_before.reserve(selections.size());
    for (const auto& s : selections)
        n_before.push_back(static_cast<int>(s.kept.size() + s.removed.size()));
    return prune_report_csv(selections, n_before);
}

}  // namespace readcore
