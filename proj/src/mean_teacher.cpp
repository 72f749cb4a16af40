#include "read/mean_teacher.hpp"

#include <algorithm>
#include <cmath>

namespace readcore {

void MeanTeacherConfig::validate() const {
    if (epochs < 0) throw config_error("mean teacher: epochs must be ≥ 0");
    if (rampup_epochs < 0) throw config_error("mean teacher: rampup epochs must be ≥ 0");
    if (rampup_target < 0.0) throw config_error("mean teacher: rampup target must be ≥ 0");
    if (rampup_shape != "linear" && rampup_shape != "sigmoid")
        throw config_error("mean teacher: rampup shape must be linear or sigmoid");
    if (ema_alpha < 0.0 || ema_alpha > 1.0)
        throw config_error("mean teacher: ema alpha must be in [0,1]");
    if (labeled_batch <= 0 || unlabeled_batch <= 0)
        throw config_error("mean teacher: batch sizes must be positive");
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw config_error("mean teacher: test fraction must be in [0,1)");
}

std::string train_report_csv(const TrainReport& report) {
    std::string out = "epoch,l_sup,l_cons,w,total,test_acc\n";
    for (const auto& e : report.epochs)
        out += std::to_string(e.epoch) + ',' + fmt_double(e.l_sup) + ',' + fmt_double(e.l_cons) +
               ',' + fmt_double(e.w) + ',' + fmt_double(e.total) + ',' + fmt_double(e.test_acc) +
               '\n';
    return out;
}

double supervised_loss(const std::vector<double>& probs, const std::vector<double>& targets,
                       int n, int c) {
    if (probs.size() != static_cast<std::size_t>(n) * c || targets.size() != probs.size())
        throw numeric_error("supervised_loss: size mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        const double t = targets[k];
        if (t == 0.0) continue;
        total -= t * std::log(std::max(probs[k], 1e-12));
    }
    return total / n;
}

std::vector<double> supervised_loss_dlogits(const std::vector<double>& probs,
                                            const std::vector<double>& targets, int n, int c) {
    if (probs.size() != static_cast<std::size_t>(n) * c || targets.size() != probs.size())
        throw numeric_error("supervised_loss_dlogits: size mismatch");
    std::vector<double> d(probs.size());
    const double inv = 1.0 / n;
    for (std::size_t k = 0; k < probs.size(); ++k) d[k] = (probs[k] - targets[k]) * inv;
    return d;
}

double consistency_loss(const std::vector<double>& student_probs,
                        const std::vector<double>& teacher_probs, int n, int c) {
    if (student_probs.size() != static_cast<std::size_t>(n) * c ||
        teacher_probs.size() != student_probs.size())
        throw numeric_error("consistency_loss: size mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < student_probs.size(); ++k) {
        const double d = student_probs[k] - teacher_probs[k];
        total += d * d;
    }
    return total / n;
}

std::vector<double> consistency_loss_dprobs(const std::vector<double>& student_probs,
                                            const std::vector<double>& teacher_probs, int n,
                                            int c) {
    if (student_probs.size() != static_cast<std::size_t>(n) * c ||
        teacher_probs.size() != student_probs.size())
        throw numeric_error("consistency_loss_dprobs: size mismatch");
    std::vector<double> d(student_probs.size());
    const double scale = 2.0 / n;
    for (std::size_t k = 0; k < student_probs.size(); ++k)
        d[k] = scale * (student_probs[k] - teacher_probs[k]);
    return d;
}

double rampup_weight(int epoch, const MeanTeacherConfig& cfg) {
    if (epoch < 0) throw config_error("rampup_weight: negative epoch");
    if (cfg.rampup_epochs == 0) return cfg.rampup_target;
    const double x = std::min(1.0, static_cast<double>(epoch) / cfg.rampup_epochs);
    if (cfg.rampup_shape == "sigmoid") {
        if (x >= 1.0) return cfg.rampup_target;
        return cfg.rampup_target * std::exp(-5.0 * (1.0 - x) * (1.0 - x));
    }
    return cfg.rampup_target * x;
}

namespace {

int argmax_first(const double* v, int c) {
    int best = 0;
    for (int j = 1; j < c; ++j)
        if (v[j] > v[best]) best = j;
    return best;
}

double accuracy(const ConvNetSpec& spec, const ParamSet& params,
                const std::vector<const TrainSample*>& samples) {
    if (samples.empty()) return 0.0;
    int correct = 0;
    ForwardCache cache;
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const std::size_t stop = std::min(samples.size(), start + chunk);
        std::vector<const Image*> imgs;
        imgs.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) imgs.push_back(&samples[i]->image);
        forward(spec, params, make_batch(imgs), cache);
        for (std::size_t i = start; i < stop; ++i) {
            const int pred = argmax_first(
                &cache.probs[(i - start) * static_cast<std::size_t>(spec.num_classes)],
                spec.num_classes);
            const int truth = argmax_first(samples[i]->target.data(), spec.num_classes);
            if (pred == truth) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace

TrainResult train(const ConvNetSpec& spec, const std::vector<TrainSample>& labeled,
                  const std::vector<Image>& unlabeled, const MeanTeacherConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (labeled.empty()) throw config_error("mean teacher: labeled set is empty");
    for (const auto& s : labeled)
        if (s.target.size() != static_cast<std::size_t>(spec.num_classes))
            throw config_error("mean teacher: target size does not match num_classes");

    Rng rng(cfg.seed);

    // Held-out split of the labeled set, fixed for the whole run.
    std::vector<std::size_t> order(labeled.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const std::size_t n_test =
        static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(labeled.size())));
    if (n_test >= labeled.size())
        throw config_error("mean teacher: test fraction leaves no training data");
    std::vector<const TrainSample*> test_set, train_set;
    for (std::size_t i = 0; i < n_test; ++i) test_set.push_back(&labeled[order[i]]);
    for (std::size_t i = n_test; i < order.size(); ++i) train_set.push_back(&labeled[order[i]]);

    // Consistency pool: unlabeled images, optionally plus labeled train images.
    std::vector<const Image*> pool;
    for (const auto& img : unlabeled) pool.push_back(&img);
    if (cfg.include_labeled_in_consistency)
        for (const auto* s : train_set) pool.push_back(&s->image);

    TrainResult res;
    res.student = init_params(spec, rng);
    res.teacher = res.student;
    ParamSet velocity;
    for (const auto& [name, t] : res.student.items)
        velocity.items.emplace_back(name, Tensor::zeros(t.shape));

    std::vector<std::size_t> pool_order(pool.size());
    for (std::size_t i = 0; i < pool_order.size(); ++i) pool_order[i] = i;
    std::size_t pool_pos = pool_order.size();  // forces a shuffle on first use

    std::vector<std::size_t> train_order(train_set.size());
    for (std::size_t i = 0; i < train_order.size(); ++i) train_order[i] = i;

    const int steps = static_cast<int>(
        (train_set.size() + static_cast<std::size_t>(cfg.labeled_batch) - 1) /
        static_cast<std::size_t>(cfg.labeled_batch));

    ForwardCache sup_cache, stu_cache, tea_cache;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double w = rampup_weight(epoch, cfg);
        const bool use_consistency = w > 0.0 && !pool.empty();
        rng.shuffle(train_order);

        double sum_sup = 0.0, sum_cons = 0.0;
        for (int step = 0; step < steps; ++step) {
            const std::size_t lo = static_cast<std::size_t>(step) * cfg.labeled_batch;
            const std::size_t hi =
                std::min(train_set.size(), lo + static_cast<std::size_t>(cfg.labeled_batch));
            const int nb = static_cast<int>(hi - lo);

            // Labeled pass: one sampled augmentation per image.
            std::vector<Image> laug;
            laug.reserve(hi - lo);
            std::vector<double> targets;
            targets.reserve((hi - lo) * static_cast<std::size_t>(spec.num_classes));
            for (std::size_t i = lo; i < hi; ++i) {
                const TrainSample* s = train_set[train_order[i]];
                laug.push_back(augment(s->image, rng.next_int(8)));
                targets.insert(targets.end(), s->target.begin(), s->target.end());
            }
            std::vector<const Image*> lptrs;
            for (const auto& img : laug) lptrs.push_back(&img);
            const Batch lbatch = make_batch(lptrs);
            forward(spec, res.student, lbatch, sup_cache);
            sum_sup += supervised_loss(sup_cache.probs, targets, nb, spec.num_classes);
            ParamSet grads =
                backward(spec, res.student, lbatch, sup_cache,
                         supervised_loss_dlogits(sup_cache.probs, targets, nb, spec.num_classes));

            if (use_consistency) {
                const int ub = static_cast<int>(
                    std::min(pool.size(), static_cast<std::size_t>(cfg.unlabeled_batch)));
                std::vector<const Image*> upicks;
                upicks.reserve(static_cast<std::size_t>(ub));
                for (int i = 0; i < ub; ++i) {
                    if (pool_pos >= pool_order.size()) {
                        rng.shuffle(pool_order);
                        pool_pos = 0;
                    }
                    upicks.push_back(pool[pool_order[pool_pos++]]);
                }
                // Student and teacher see independent augmentations.
                std::vector<Image> saug, taug;
                saug.reserve(upicks.size());
                for (const Image* img : upicks) saug.push_back(augment(*img, rng.next_int(8)));
                taug.reserve(upicks.size());
                for (const Image* img : upicks) taug.push_back(augment(*img, rng.next_int(8)));

                std::vector<const Image*> sptrs, tptrs;
                for (const auto& img : saug) sptrs.push_back(&img);
                for (const auto& img : taug) tptrs.push_back(&img);
                const Batch sbatch = make_batch(sptrs);
                forward(spec, res.student, sbatch, stu_cache);
                forward(spec, res.teacher, make_batch(tptrs), tea_cache);
                sum_cons +=
                    consistency_loss(stu_cache.probs, tea_cache.probs, ub, spec.num_classes);

                auto dprobs =
                    consistency_loss_dprobs(stu_cache.probs, tea_cache.probs, ub, spec.num_classes);
                for (auto& v : dprobs) v *= w;
                ParamSet cgrads =
                    backward(spec, res.student, sbatch, stu_cache,
                             softmax_backward(stu_cache.probs, dprobs, ub, spec.num_classes));
                for (std::size_t t = 0; t < grads.items.size(); ++t) {
                    auto& g = grads.items[t].second.data;
                    const auto& cg = cgrads.items[t].second.data;
                    for (std::size_t k = 0; k < g.size(); ++k) g[k] += cg[k];
                }
            }

            sgd_step(res.student, grads, velocity, cfg.lr, cfg.momentum);
            ema_update(res.teacher, res.student, cfg.ema_alpha);
        }

        EpochStats st;
        st.epoch = epoch;
        st.l_sup = steps > 0 ? sum_sup / steps : 0.0;
        st.l_cons = use_consistency && steps > 0 ? sum_cons / steps : 0.0;
        st.w = w;
        st.total = st.l_sup + w * st.l_cons;
        st.test_acc = accuracy(spec, res.teacher, test_set);
        res.report.epochs.push_back(st);
    }
    res.report.final_test_acc =
        res.report.epochs.empty() ? accuracy(spec, res.teacher, test_set)
                                  : res.report.epochs.back().test_acc;
    return res;
}

}  // namespace readcore
