#pragma once

#include <functional>
#include <string>
#include <vector>

#include "read/convnet.hpp"
#include "read/geo_tiles.hpp"
#include "read/mean_teacher.hpp"

namespace readcore {

struct PrunedSelection {
    std::string district_id;
    std::vector<TileId> kept;
    std::vector<TileId> removed;
    double removed_fraction = 0.0;
    bool fallback = false;  // pruning would have emptied the district
};

struct PrunerResult {
    ParamSet params;
    double held_out_accuracy = 0.0;
    TrainReport report;
};

// Plain supervised training of the binary inhabited/uninhabited classifier
// (class 0 = inhabited). Targets come from the labels' inhabited majority.
// Both classes must be present.
PrunerResult train_pruner(const ConvNetSpec& spec, const std::vector<TrainSample>& labeled,
                          const MeanTeacherConfig& cfg);

// probs callback maps a tile to the classifier's P(inhabited). Tiles at or
// above the threshold are kept; a selection that would come out empty keeps
// its single most-inhabited tile and is flagged.
PrunedSelection prune(const TileSelection& selection,
                      const std::function<double(const TileId&)>& p_inhabited, double threshold);

std::string prune_report_csv(const std::vector<PrunedSelection>& selections,
                             const std::vector<int>& n_before);
std::string prune_report_csv(const std::vector<PrunedSelection>& selections);

}  // namespace readcore
