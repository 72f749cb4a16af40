#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "read/imagery_store.hpp"
#include "read/util.hpp"

namespace readcore {

// Small conv stack: per block 3x3 conv (stride 1, same padding) + ReLU +
// 2x2 max pool; then global average pool, a linear projection to the
// embedding, and a linear head. Embeddings are the pre-head activations.
struct ConvNetSpec {
    int input_size = 64;
    std::vector<int> channels = {8, 16, 32};
    int embedding_dim = 32;
    int num_classes = 3;

    void validate() const;
    std::size_t param_count() const;
};

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    static Tensor zeros(std::vector<std::size_t> shape);
    std::size_t size() const { return data.size(); }
};

// Ordered named tensors; order is part of the format (init draws and
// checkpoints walk it front to back).
struct ParamSet {
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;
    bool same_shapes(const ParamSet& o) const;
};

// He-uniform weights (±sqrt(6/fan_in)), zero biases. Tensor order:
// conv{i}.w, conv{i}.b per block, then proj.w, proj.b, head.w, head.b.
ParamSet init_params(const ConvNetSpec& spec, Rng& rng);

struct Batch {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;  // NCHW
};

Batch make_batch(const std::vector<const Image*>& images);

struct ForwardCache {
    int n = 0;
    std::vector<std::vector<double>> conv_pre;  // per block, pre-ReLU conv output
    std::vector<std::vector<double>> pool_out;  // per block
    std::vector<std::vector<int>> pool_argmax;  // per block, flat index into the ReLU output
    std::vector<double> gap;                    // n × c_last
    std::vector<double> embeddings;             // n × E
    std::vector<double> logits;                 // n × C
    std::vector<double> probs;                  // n × C
};

void forward(const ConvNetSpec& spec, const ParamSet& params, const Batch& batch,
             ForwardCache& cache);

// dlogits is n × C; returns gradients with the same shapes as params.
ParamSet backward(const ConvNetSpec& spec, const ParamSet& params, const Batch& batch,
                  const ForwardCache& cache, const std::vector<double>& dlogits);

// Chain rule through the softmax rows: given dL/dprobs, produce dL/dlogits.
std::vector<double> softmax_backward(const std::vector<double>& probs,
                                     const std::vector<double>& dprobs, int n, int c);

// teacher ← alpha·teacher + (1−alpha)·student, elementwise.
void ema_update(ParamSet& teacher, const ParamSet& student, double alpha);

// v ← momentum·v + g; θ ← θ − lr·v.
void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, double lr,
              double momentum);

// The 8 dihedral transforms: id & 3 = quarter turns, id >> 2 = horizontal
// flip applied after the rotation. Square images only.
Image augment(const Image& img, int transform_id);

void save_checkpoint(const std::filesystem::path& path, const ConvNetSpec& spec,
                     const ParamSet& params);
std::pair<ConvNetSpec, ParamSet> load_checkpoint(const std::filesystem::path& path);

}  // namespace readcore
