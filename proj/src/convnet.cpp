#include "read/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace readcore {

void ConvNetSpec::validate() const {
    if (input_size <= 0) throw config_error("convnet: input_size must be positive");
    if (channels.empty()) throw config_error("convnet: need at least one conv block");
    if (embedding_dim <= 0) throw config_error("convnet: embedding_dim must be positive");
    if (num_classes <= 0) throw config_error("convnet: num_classes must be positive");
    int s = input_size;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] <= 0) throw config_error("convnet: channel counts must be positive");
        if (s % 2 != 0)
            throw config_error("convnet: input_size " + std::to_string(input_size) +
                               " not divisible by 2^" + std::to_string(channels.size()));
        s /= 2;
    }
    if (s == 0) throw config_error("convnet: too many blocks for input size");
}

std::size_t ConvNetSpec::param_count() const {
    std::size_t total = 0;
    int cin = 3;
    for (int cout : channels) {
        total += static_cast<std::size_t>(cout) * cin * 9 + static_cast<std::size_t>(cout);
        cin = cout;
    }
    total += static_cast<std::size_t>(embedding_dim) * cin + static_cast<std::size_t>(embedding_dim);
    total += static_cast<std::size_t>(num_classes) * embedding_dim +
             static_cast<std::size_t>(num_classes);
    return total;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    Tensor t;
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    t.shape = std::move(shape);
    t.data.assign(n, 0.0);
    return t;
}

Tensor& ParamSet::at(std::string_view name) {
    for (auto& [k, v] : items)
        if (k == name) return v;
    throw numeric_error("no parameter tensor named " + std::string(name));
}

const Tensor& ParamSet::at(std::string_view name) const {
    for (const auto& [k, v] : items)
        if (k == name) return v;
    throw numeric_error("no parameter tensor named " + std::string(name));
}

bool ParamSet::same_shapes(const ParamSet& o) const {
    if (items.size() != o.items.size()) return false;
    for (std::size_t i = 0; i < items.size(); ++i)
        if (items[i].first != o.items[i].first || items[i].second.shape != o.items[i].second.shape)
            return false;
    return true;
}

ParamSet init_params(const ConvNetSpec& spec, Rng& rng) {
    spec.validate();
    ParamSet p;
    auto he_fill = [&rng](Tensor& t, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : t.data) v = rng.uniform(-bound, bound);
    };
    int cin = 3;
    for (std::size_t b = 0; b < spec.channels.size(); ++b) {
        const int cout = spec.channels[b];
        Tensor w = Tensor::zeros({static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), 3, 3});
        he_fill(w, static_cast<std::size_t>(cin) * 9);
        p.items.emplace_back("conv" + std::to_string(b) + ".w", std::move(w));
        p.items.emplace_back("conv" + std::to_string(b) + ".b",
                             Tensor::zeros({static_cast<std::size_t>(cout)}));
        cin = cout;
    }
    Tensor pw = Tensor::zeros(
        {static_cast<std::size_t>(spec.embedding_dim), static_cast<std::size_t>(cin)});
    he_fill(pw, static_cast<std::size_t>(cin));
    p.items.emplace_back("proj.w", std::move(pw));
    p.items.emplace_back("proj.b", Tensor::zeros({static_cast<std::size_t>(spec.embedding_dim)}));
    Tensor hw = Tensor::zeros({static_cast<std::size_t>(spec.num_classes),
                               static_cast<std::size_t>(spec.embedding_dim)});
    he_fill(hw, static_cast<std::size_t>(spec.embedding_dim));
    p.items.emplace_back("head.w", std::move(hw));
    p.items.emplace_back("head.b", Tensor::zeros({static_cast<std::size_t>(spec.num_classes)}));
    return p;
}

Batch make_batch(const std::vector<const Image*>& images) {
    if (images.empty()) throw numeric_error("make_batch: empty image list");
    Batch b;
    b.n = static_cast<int>(images.size());
    b.c = 3;
    b.h = images[0]->h;
    b.w = images[0]->w;
    b.data.resize(static_cast<std::size_t>(b.n) * 3 * b.h * b.w);
    for (int i = 0; i < b.n; ++i) {
        const Image& img = *images[static_cast<std::size_t>(i)];
        if (img.h != b.h || img.w != b.w)
            throw numeric_error("make_batch: images have mixed sizes");
        for (int c = 0; c < 3; ++c) {
            double* dst =
                &b.data[((static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)) *
                         static_cast<std::size_t>(b.h)) *
                        static_cast<std::size_t>(b.w)];
            for (int y = 0; y < b.h; ++y)
                for (int x = 0; x < b.w; ++x)
                    dst[static_cast<std::size_t>(y) * b.w + x] = img.at(y, x, c);
        }
    }
    return b;
}

namespace {

// out[co] = bias[co] + sum_ci conv(in[ci], w[co][ci]); same padding.
void conv3x3_forward(const double* in, int cin, int h, int w, const double* wgt,
                     const double* bias, int cout, double* out) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int co = 0; co < cout; ++co) {
        double* oplane = out + static_cast<std::size_t>(co) * plane;
        std::fill(oplane, oplane + plane, bias[co]);
        for (int ci = 0; ci < cin; ++ci) {
            const double* iplane = in + static_cast<std::size_t>(ci) * plane;
            const double* k = wgt + (static_cast<std::size_t>(co) * cin + ci) * 9;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const double wv = k[(dy + 1) * 3 + (dx + 1)];
                    if (wv == 0.0) continue;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = oplane + static_cast<std::size_t>(y) * w;
                        const double* irow = iplane + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
}

void conv3x3_backward(const double* in, int cin, int h, int w, const double* wgt, int cout,
                      const double* dout, double* din, double* dwgt, double* dbias) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int co = 0; co < cout; ++co) {
        const double* doplane = dout + static_cast<std::size_t>(co) * plane;
        double db = 0.0;
        for (std::size_t i = 0; i < plane; ++i) db += doplane[i];
        dbias[co] += db;
        for (int ci = 0; ci < cin; ++ci) {
            const double* iplane = in + static_cast<std::size_t>(ci) * plane;
            double* diplane = din ? din + static_cast<std::size_t>(ci) * plane : nullptr;
            const double* k = wgt + (static_cast<std::size_t>(co) * cin + ci) * 9;
            double* dk = dwgt + (static_cast<std::size_t>(co) * cin + ci) * 9;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const double wv = k[(dy + 1) * 3 + (dx + 1)];
                    double grad = 0.0;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int y = y0; y < y1; ++y) {
                        const double* dorow = doplane + static_cast<std::size_t>(y) * w;
                        const double* irow = iplane + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) grad += dorow[x] * irow[x];
                        if (diplane) {
                            double* dirow = diplane + static_cast<std::size_t>(y + dy) * w + dx;
                            for (int x = x0; x < x1; ++x) dirow[x] += wv * dorow[x];
                        }
                    }
                    dk[(dy + 1) * 3 + (dx + 1)] += grad;
                }
            }
        }
    }
}

}  // namespace

void forward(const ConvNetSpec& spec, const ParamSet& params, const Batch& batch,
             ForwardCache& cache) {
    spec.validate();
    if (batch.c != 3 || batch.h != spec.input_size || batch.w != spec.input_size)
        throw numeric_error("forward: batch shape does not match the network input size");

    const int n = batch.n;
    const std::size_t blocks = spec.channels.size();
    cache.n = n;
    cache.conv_pre.assign(blocks, {});
    cache.pool_out.assign(blocks, {});
    cache.pool_argmax.assign(blocks, {});

    const std::vector<double>* cur = &batch.data;
    int cin = 3, h = batch.h, w = batch.w;
    for (std::size_t b = 0; b < blocks; ++b) {
        const int cout = spec.channels[b];
        const Tensor& wt = params.at("conv" + std::to_string(b) + ".w");
        const Tensor& bt = params.at("conv" + std::to_string(b) + ".b");

        auto& pre = cache.conv_pre[b];
        pre.assign(static_cast<std::size_t>(n) * cout * h * w, 0.0);
        const std::size_t in_stride = static_cast<std::size_t>(cin) * h * w;
        const std::size_t out_stride = static_cast<std::size_t>(cout) * h * w;
        for (int i = 0; i < n; ++i)
            conv3x3_forward(cur->data() + static_cast<std::size_t>(i) * in_stride, cin, h, w,
                            wt.data.data(), bt.data.data(), cout,
                            pre.data() + static_cast<std::size_t>(i) * out_stride);

        // ReLU + 2x2 max pool in one pass; ties go to the first element in
        // row-major window order so backward is deterministic.
        const int ph = h / 2, pw = w / 2;
        auto& pooled = cache.pool_out[b];
        auto& argmax = cache.pool_argmax[b];
        pooled.assign(static_cast<std::size_t>(n) * cout * ph * pw, 0.0);
        argmax.assign(pooled.size(), 0);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < cout; ++c) {
                const std::size_t base =
                    (static_cast<std::size_t>(i) * cout + static_cast<std::size_t>(c)) *
                    static_cast<std::size_t>(h) * w;
                const std::size_t obase =
                    (static_cast<std::size_t>(i) * cout + static_cast<std::size_t>(c)) *
                    static_cast<std::size_t>(ph) * pw;
                for (int y = 0; y < ph; ++y) {
                    for (int x = 0; x < pw; ++x) {
                        double best = -1.0;  // ReLU output is ≥ 0
                        std::size_t besti = 0;
                        for (int dy = 0; dy < 2; ++dy) {
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t idx =
                                    base + static_cast<std::size_t>(2 * y + dy) * w +
                                    static_cast<std::size_t>(2 * x + dx);
                                const double v = std::max(0.0, pre[idx]);
                                if (v > best) {
                                    best = v;
                                    besti = idx;
                                }
                            }
                        }
                        pooled[obase + static_cast<std::size_t>(y) * pw + x] = best;
                        argmax[obase + static_cast<std::size_t>(y) * pw + x] =
                            static_cast<int>(besti);
                    }
                }
            }
        }
        cur = &pooled;
        cin = cout;
        h = ph;
        w = pw;
    }

    // Global average pool.
    const int clast = cin;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    cache.gap.assign(static_cast<std::size_t>(n) * clast, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < clast; ++c) {
            const double* p =
                cur->data() + (static_cast<std::size_t>(i) * clast + static_cast<std::size_t>(c)) * plane;
            double s = 0.0;
            for (std::size_t k = 0; k < plane; ++k) s += p[k];
            cache.gap[static_cast<std::size_t>(i) * clast + static_cast<std::size_t>(c)] =
                s / static_cast<double>(plane);
        }
    }

    const Tensor& pw = params.at("proj.w");
    const Tensor& pb = params.at("proj.b");
    const int e = spec.embedding_dim;
    cache.embeddings.assign(static_cast<std::size_t>(n) * e, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* g = &cache.gap[static_cast<std::size_t>(i) * clast];
        for (int j = 0; j < e; ++j) {
            const double* wrow = &pw.data[static_cast<std::size_t>(j) * clast];
            double s = pb.data[static_cast<std::size_t>(j)];
            for (int c = 0; c < clast; ++c) s += wrow[c] * g[c];
            cache.embeddings[static_cast<std::size_t>(i) * e + static_cast<std::size_t>(j)] = s;
        }
    }

    const Tensor& hw = params.at("head.w");
    const Tensor& hb = params.at("head.b");
    const int nc = spec.num_classes;
    cache.logits.assign(static_cast<std::size_t>(n) * nc, 0.0);
    cache.probs.assign(static_cast<std::size_t>(n) * nc, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* emb = &cache.embeddings[static_cast<std::size_t>(i) * e];
        double maxv = -1e300;
        for (int j = 0; j < nc; ++j) {
            const double* wrow = &hw.data[static_cast<std::size_t>(j) * e];
            double s = hb.data[static_cast<std::size_t>(j)];
            for (int k = 0; k < e; ++k) s += wrow[k] * emb[k];
            cache.logits[static_cast<std::size_t>(i) * nc + static_cast<std::size_t>(j)] = s;
            maxv = std::max(maxv, s);
        }
        double z = 0.0;
        for (int j = 0; j < nc; ++j) {
            const double ev =
                std::exp(cache.logits[static_cast<std::size_t>(i) * nc + static_cast<std::size_t>(j)] - maxv);
            cache.probs[static_cast<std::size_t>(i) * nc + static_cast<std::size_t>(j)] = ev;
            z += ev;
        }
        for (int j = 0; j < nc; ++j)
            cache.probs[static_cast<std::size_t>(i) * nc + static_cast<std::size_t>(j)] /= z;
    }
}

ParamSet backward(const ConvNetSpec& spec, const ParamSet& params, const Batch& batch,
                  const ForwardCache& cache, const std::vector<double>& dlogits) {
    const int n = cache.n;
    const int nc = spec.num_classes;
    const int e = spec.embedding_dim;
    if (dlogits.size() != static_cast<std::size_t>(n) * nc)
        throw numeric_error("backward: dlogits size mismatch");

    ParamSet grads;
    for (const auto& [name, t] : params.items) grads.items.emplace_back(name, Tensor::zeros(t.shape));

    const int clast = spec.channels.back();
    const Tensor& hw = params.at("head.w");
    Tensor& dhw = grads.at("head.w");
    Tensor& dhb = grads.at("head.b");

    // Head linear.
    std::vector<double> demb(static_cast<std::size_t>(n) * e, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* emb = &cache.embeddings[static_cast<std::size_t>(i) * e];
        for (int j = 0; j < nc; ++j) {
            const double g = dlogits[static_cast<std::size_t>(i) * nc + static_cast<std::size_t>(j)];
            if (g == 0.0) continue;
            dhb.data[static_cast<std::size_t>(j)] += g;
            double* dwrow = &dhw.data[static_cast<std::size_t>(j) * e];
            const double* wrow = &hw.data[static_cast<std::size_t>(j) * e];
            double* de = &demb[static_cast<std::size_t>(i) * e];
            for (int k = 0; k < e; ++k) {
                dwrow[k] += g * emb[k];
                de[k] += g * wrow[k];
            }
        }
    }

    // Projection linear.
    const Tensor& pw = params.at("proj.w");
    Tensor& dpw = grads.at("proj.w");
    Tensor& dpb = grads.at("proj.b");
    std::vector<double> dgap(static_cast<std::size_t>(n) * clast, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* g = &cache.gap[static_cast<std::size_t>(i) * clast];
        for (int j = 0; j < e; ++j) {
            const double gd = demb[static_cast<std::size_t>(i) * e + static_cast<std::size_t>(j)];
            if (gd == 0.0) continue;
            dpb.data[static_cast<std::size_t>(j)] += gd;
            double* dwrow = &dpw.data[static_cast<std::size_t>(j) * clast];
            const double* wrow = &pw.data[static_cast<std::size_t>(j) * clast];
            double* dg = &dgap[static_cast<std::size_t>(i) * clast];
            for (int c = 0; c < clast; ++c) {
                dwrow[c] += gd * g[c];
                dg[c] += gd * wrow[c];
            }
        }
    }

    // Walk the blocks backwards: GAP → pool/ReLU → conv.
    const std::size_t blocks = spec.channels.size();
    int h = spec.input_size, w = spec.input_size;
    for (std::size_t b = 0; b < blocks; ++b) {
        h /= 2;
        w /= 2;
    }

    // Gradient w.r.t. the last pooled map from GAP.
    std::vector<double> dpool(static_cast<std::size_t>(n) * clast * h * w, 0.0);
    const double inv_plane = 1.0 / (static_cast<double>(h) * w);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < clast; ++c) {
            const double g =
                dgap[static_cast<std::size_t>(i) * clast + static_cast<std::size_t>(c)] * inv_plane;
            double* p = &dpool[(static_cast<std::size_t>(i) * clast + static_cast<std::size_t>(c)) *
                               static_cast<std::size_t>(h) * w];
            for (int k = 0; k < h * w; ++k) p[k] += g;
        }

    for (std::size_t b = blocks; b-- > 0;) {
        const int cout = spec.channels[b];
        const int cin = b == 0 ? 3 : spec.channels[b - 1];
        const int ph = h, pwid = w;  // pooled dims of this block
        const int ch = ph * 2, cw = pwid * 2;

        // Pool + ReLU backward into the conv output gradient.
        const auto& pre = cache.conv_pre[b];
        const auto& argmax = cache.pool_argmax[b];
        std::vector<double> dconv(static_cast<std::size_t>(n) * cout * ch * cw, 0.0);
        for (std::size_t k = 0; k < dpool.size(); ++k) {
            const std::size_t src = static_cast<std::size_t>(argmax[k]);
            if (pre[src] > 0.0) dconv[src] += dpool[k];
        }

        const std::vector<double>& input = b == 0 ? batch.data : cache.pool_out[b - 1];
        std::vector<double> dinput;
        if (b > 0) dinput.assign(static_cast<std::size_t>(n) * cin * ch * cw, 0.0);

        const Tensor& wt = params.at("conv" + std::to_string(b) + ".w");
        Tensor& dwt = grads.at("conv" + std::to_string(b) + ".w");
        Tensor& dbt = grads.at("conv" + std::to_string(b) + ".b");
        const std::size_t in_stride = static_cast<std::size_t>(cin) * ch * cw;
        const std::size_t out_stride = static_cast<std::size_t>(cout) * ch * cw;
        for (int i = 0; i < n; ++i)
            conv3x3_backward(input.data() + static_cast<std::size_t>(i) * in_stride, cin, ch, cw,
                             wt.data.data(), cout,
                             dconv.data() + static_cast<std::size_t>(i) * out_stride,
                             b > 0 ? dinput.data() + static_cast<std::size_t>(i) * in_stride
                                   : nullptr,
                             dwt.data.data(), dbt.data.data());

        dpool = std::move(dinput);  // gradient w.r.t. previous block's pooled output
        h = ch;
        w = cw;
    }
    return grads;
}

std::vector<double> softmax_backward(const std::vector<double>& probs,
                                     const std::vector<double>& dprobs, int n, int c) {
    if (probs.size() != static_cast<std::size_t>(n) * c || dprobs.size() != probs.size())
        throw numeric_error("softmax_backward: size mismatch");
    std::vector<double> dlogits(probs.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* p = &probs[static_cast<std::size_t>(i) * c];
        const double* g = &dprobs[static_cast<std::size_t>(i) * c];
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += g[j] * p[j];
        double* d = &dlogits[static_cast<std::size_t>(i) * c];
        for (int j = 0; j < c; ++j) d[j] = p[j] * (g[j] - dot);
    }
    return dlogits;
}

void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
    if (!teacher.same_shapes(student))
        throw numeric_error("ema_update: teacher/student shape mismatch");
    if (alpha < 0.0 || alpha > 1.0) throw config_error("ema_update: alpha outside [0,1]");
    for (std::size_t i = 0; i < teacher.items.size(); ++i) {
        auto& t = teacher.items[i].second.data;
        const auto& s = student.items[i].second.data;
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = alpha * t[k] + (1.0 - alpha) * s[k];
    }
}

void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, double lr,
              double momentum) {
    if (!params.same_shapes(grads) || !params.same_shapes(velocity))
        throw numeric_error("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        auto& p = params.items[i].second.data;
        const auto& g = grads.items[i].second.data;
        auto& v = velocity.items[i].second.data;
        for (std::size_t k = 0; k < p.size(); ++k) {
            v[k] = momentum * v[k] + g[k];
            p[k] -= lr * v[k];
        }
    }
}

Image augment(const Image& img, int transform_id) {
    if (transform_id < 0 || transform_id > 7)
        throw config_error("augment: transform id must be 0..7");
    if (img.h != img.w) throw numeric_error("augment: image must be square");
    const int rot = transform_id & 3;
    const bool flip = (transform_id >> 2) != 0;
    const int n = img.h;
    Image out(n, n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            // Quarter-turn source coordinates, then horizontal flip of the result.
            int sy = y, sx = x;
            switch (rot) {
                case 0: break;
                case 1: sy = n - 1 - x; sx = y; break;
                case 2: sy = n - 1 - y; sx = n - 1 - x; break;
                case 3: sy = x; sx = n - 1 - y; break;
            }
            const int dx = flip ? n - 1 - x : x;
            for (int c = 0; c < 3; ++c) out.at(y, dx, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

static const char kNetMagic[8] = {'R', 'E', 'A', 'D', 'N', 'E', 'T', '1'};

void save_checkpoint(const std::filesystem::path& path, const ConvNetSpec& spec,
                     const ParamSet& params) {
    std::string buf(kNetMagic, sizeof(kNetMagic));
    put_u32(buf, static_cast<std::uint32_t>(spec.input_size));
    put_u32(buf, static_cast<std::uint32_t>(spec.channels.size()));
    for (int c : spec.channels) put_u32(buf, static_cast<std::uint32_t>(c));
    put_u32(buf, static_cast<std::uint32_t>(spec.embedding_dim));
    put_u32(buf, static_cast<std::uint32_t>(spec.num_classes));
    put_u32(buf, static_cast<std::uint32_t>(params.items.size()));
    for (const auto& [name, t] : params.items) {
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put_u64(buf, d);
        for (double v : t.data) put_f32(buf, static_cast<float>(v));
    }
    write_text_file(path, buf);
}

std::pair<ConvNetSpec, ParamSet> load_checkpoint(const std::filesystem::path& path) {
    const std::string buf = read_text_file(path);
    const std::string name = path.string();
    if (buf.size() < sizeof(kNetMagic) || std::memcmp(buf.data(), kNetMagic, sizeof(kNetMagic)) != 0)
        throw data_error("checkpoint " + name + ": bad magic");
    std::size_t off = sizeof(kNetMagic);
    ConvNetSpec spec;
    spec.input_size = static_cast<int>(get_u32(buf, off, name));
    const std::uint32_t nblocks = get_u32(buf, off, name);
    spec.channels.clear();
    for (std::uint32_t i = 0; i < nblocks; ++i)
        spec.channels.push_back(static_cast<int>(get_u32(buf, off, name)));
    spec.embedding_dim = static_cast<int>(get_u32(buf, off, name));
    spec.num_classes = static_cast<int>(get_u32(buf, off, name));
    const std::uint32_t ntensors = get_u32(buf, off, name);
    ParamSet params;
    for (std::uint32_t i = 0; i < ntensors; ++i) {
        const std::uint32_t namelen = get_u32(buf, off, name);
        if (off + namelen > buf.size()) throw data_error("checkpoint " + name + ": truncated");
        std::string tname = buf.substr(off, namelen);
        off += namelen;
        const std::uint32_t ndim = get_u32(buf, off, name);
        std::vector<std::size_t> shape;
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<std::size_t>(get_u64(buf, off, name)));
            count *= shape.back();
        }
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(count);
        for (std::size_t k = 0; k < count; ++k)
            t.data[k] = static_cast<double>(get_f32(buf, off, name));
        params.items.emplace_back(std::move(tname), std::move(t));
    }
    if (off != buf.size()) throw data_error("checkpoint " + name + ": trailing bytes");
    spec.validate();
    return {spec, params};
}

}  // namespace readcore
