#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "read/convnet.hpp"

namespace readcore {

struct MeanTeacherConfig {
    int epochs = 60;
    int rampup_epochs = 40;
    double rampup_target = 12.5;
    std::string rampup_shape = "linear";  // or "sigmoid"
    double ema_alpha = 0.99;
    int labeled_batch = 32;
    int unlabeled_batch = 32;
    double lr = 0.01;
    double momentum = 0.9;
    double test_fraction = 0.2;
    bool include_labeled_in_consistency = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double l_sup = 0.0;
    double l_cons = 0.0;
    double w = 0.0;
    double total = 0.0;
    double test_acc = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double final_test_acc = 0.0;
};

std::string train_report_csv(const TrainReport& report);

struct TrainSample {
    Image image;           // already normalized for the network
    std::vector<double> target;  // soft class distribution, length = num_classes
};

struct TrainResult {
    ParamSet student;
    ParamSet teacher;
    TrainReport report;
};

// Mean soft cross-entropy over the batch; probabilities clamped at 1e-12.
double supervised_loss(const std::vector<double>& probs, const std::vector<double>& targets,
                       int n, int c);
// d loss / d logits for the loss above: (probs − targets) / n.
std::vector<double> supervised_loss_dlogits(const std::vector<double>& probs,
                                            const std::vector<double>& targets, int n, int c);

// Mean squared Euclidean distance between probability rows.
double consistency_loss(const std::vector<double>& student_probs,
                        const std::vector<double>& teacher_probs, int n, int c);
// d loss / d student_probs: 2 (p_s − p_t) / n. Chain through softmax_backward.
std::vector<double> consistency_loss_dprobs(const std::vector<double>& student_probs,
                                            const std::vector<double>& teacher_probs, int n,
                                            int c);

// Consistency weight for an epoch: ramps from 0 to rampup_target over the
// first rampup_epochs epochs, constant afterwards.
double rampup_weight(int epoch, const MeanTeacherConfig& cfg);

// Semi-supervised training: per step the student sees one augmentation of
// each labeled image plus (when the weight is positive) an independently
// augmented unlabeled batch whose teacher view drives the consistency term.
// The teacher tracks the student by EMA after every optimizer step.
TrainResult train(const ConvNetSpec& spec, const std::vector<TrainSample>& labeled,
                  const std::vector<Image>& unlabeled, const MeanTeacherConfig& cfg);

}  // namespace readcore
