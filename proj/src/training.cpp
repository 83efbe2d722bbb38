#include "ocular/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "ocular/detect.hpp"
#include "ocular/image_io.hpp"
#include "ocular/rng.hpp"

namespace ocular {

namespace {

// IoU of two co-centered rectangles, the prior-matching metric.
double centered_iou(double w1, double h1, double w2, double h2) {
    const double inter = std::min(w1, w2) * std::min(h1, h2);
    const double uni = w1 * h1 + w2 * h2 - inter;
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

TargetMap assign_targets(const std::vector<Annotation>& annotations,
                         const NetworkConfig& config) {
    const int grid = config.grid_size();
    const int a = config.num_anchors;

    TargetMap map;
    map.grid = grid;
    map.anchors = a;
    map.classes = config.num_classes;
    const size_t slots = static_cast<size_t>(grid) * grid * a;
    map.responsible.assign(slots, 0);
    map.tx.assign(slots, 0);
    map.ty.assign(slots, 0);
    map.tw.assign(slots, 0);
    map.th.assign(slots, 0);
    map.class_id.assign(slots, 0);

    for (const Annotation& anno : annotations) {
        const Box& b = anno.box;
        if (!(b.cx >= 0 && b.cx <= 1 && b.cy >= 0 && b.cy <= 1))
            throw Error("assign_targets: box center (" + std::to_string(b.cx) + "," +
                        std::to_string(b.cy) + ") outside [0,1]^2");
        if (anno.class_id < 0 || anno.class_id >= config.num_classes)
            throw Error("assign_targets: class_id " + std::to_string(anno.class_id) +
                        " out of range for C=" + std::to_string(config.num_classes));

        const int j = std::min(grid - 1, static_cast<int>(b.cx * grid));
        const int i = std::min(grid - 1, static_cast<int>(b.cy * grid));

        // Anchors ordered by prior IoU against the box size; lowest index
        // wins ties. A box falls through to its next-best prior when an
        // earlier box already claimed the slot.
        std::vector<int> order(static_cast<size_t>(a));
        for (int k = 0; k < a; ++k) order[static_cast<size_t>(k)] = k;
        std::stable_sort(order.begin(), order.end(), [&](int l, int r) {
            const auto& [lw, lh] = config.anchor_priors[static_cast<size_t>(l)];
            const auto& [rw, rh] = config.anchor_priors[static_cast<size_t>(r)];
            return centered_iou(b.w * grid, b.h * grid, lw, lh) >
                   centered_iou(b.w * grid, b.h * grid, rw, rh);
        });

        int chosen = -1;
        for (int k : order) {
            if (!map.responsible[static_cast<size_t>(map.slot(i, j, k))]) {
                chosen = k;
                break;
            }
        }
        if (chosen < 0)
            throw Error("assign_targets: no free anchor in cell (" + std::to_string(i) + "," +
                        std::to_string(j) + ")");

        const auto& [pw, ph] = config.anchor_priors[static_cast<size_t>(chosen)];
        const RawBoxTargets t = encode_box(b, i, j, pw, ph, grid);
        const size_t s = static_cast<size_t>(map.slot(i, j, chosen));
        map.responsible[s] = 1;
        map.tx[s] = static_cast<float>(t.sig_tx);
        map.ty[s] = static_cast<float>(t.sig_ty);
        map.tw[s] = static_cast<float>(t.tw);
        map.th[s] = static_cast<float>(t.th);
        map.class_id[s] = anno.class_id;
    }
    return map;
}

template <typename T>
LossResult<T> detection_loss(const Tensor<T>& raw_output, const std::vector<TargetMap>& targets,
                             const TrainConfig& config) {
    const Shape4& s = raw_output.shape();
    if (targets.empty() || s.n != static_cast<int>(targets.size()))
        throw Error("detection_loss: batch " + std::to_string(s.n) + " vs " +
                    std::to_string(targets.size()) + " target maps");
    const int grid = targets[0].grid;
    const int a = targets[0].anchors;
    const int classes = targets[0].classes;
    const int slot_ch = classes + 5;
    if (s.c != slot_ch * a || s.h != grid || s.w != grid)
        throw Error("detection_loss: raw output " + s.str() + " does not match targets (grid=" +
                    std::to_string(grid) + ", A=" + std::to_string(a) +
                    ", C=" + std::to_string(classes) + ")");

    const T lc = static_cast<T>(config.lambda_coord);
    const T ln = static_cast<T>(config.lambda_noobj);
    const T inv_b = T(1) / static_cast<T>(s.n);

    LossResult<T> result;
    result.grad = Tensor<T>(s);
    double total = 0;
    std::vector<T> probs(static_cast<size_t>(classes));

    for (int n = 0; n < s.n; ++n) {
        const TargetMap& map = targets[static_cast<size_t>(n)];
        if (map.grid != grid || map.anchors != a || map.classes != classes)
            throw Error("detection_loss: inconsistent target maps in batch");
        double image_loss = 0;
        for (int i = 0; i < grid; ++i) {
            for (int j = 0; j < grid; ++j) {
                for (int an = 0; an < a; ++an) {
                    const int base = an * slot_ch;
                    const size_t slot = static_cast<size_t>(map.slot(i, j, an));
                    const T to = raw_output.at(n, base + kTo, i, j);
                    const T so = T(1) / (T(1) + std::exp(-to));
                    if (map.responsible[slot]) {
                        const T sx = T(1) / (T(1) + std::exp(-raw_output.at(n, base + kTx, i, j)));
                        const T sy = T(1) / (T(1) + std::exp(-raw_output.at(n, base + kTy, i, j)));
                        const T tw = raw_output.at(n, base + kTw, i, j);
                        const T th = raw_output.at(n, base + kTh, i, j);
                        const T dx = sx - static_cast<T>(map.tx[slot]);
                        const T dy = sy - static_cast<T>(map.ty[slot]);
                        const T dw = tw - static_cast<T>(map.tw[slot]);
                        const T dh = th - static_cast<T>(map.th[slot]);
                        image_loss += lc * (dx * dx + dy * dy + dw * dw + dh * dh);
                        result.grad.at(n, base + kTx, i, j) =
                            inv_b * lc * 2 * dx * sx * (T(1) - sx);
                        result.grad.at(n, base + kTy, i, j) =
                            inv_b * lc * 2 * dy * sy * (T(1) - sy);
                        result.grad.at(n, base + kTw, i, j) = inv_b * lc * 2 * dw;
                        result.grad.at(n, base + kTh, i, j) = inv_b * lc * 2 * dh;

                        const T dobj = so - T(1);
                        image_loss += dobj * dobj;
                        result.grad.at(n, base + kTo, i, j) =
                            inv_b * 2 * dobj * so * (T(1) - so);

                        if (classes > 1) {
                            // Softmax cross-entropy over the class logits.
                            T mx = raw_output.at(n, base + kClassLogits, i, j);
                            for (int k = 1; k < classes; ++k)
                                mx = std::max(mx, raw_output.at(n, base + kClassLogits + k, i, j));
                            T sum = 0;
                            for (int k = 0; k < classes; ++k) {
                                probs[static_cast<size_t>(k)] =
                                    std::exp(raw_output.at(n, base + kClassLogits + k, i, j) - mx);
                                sum += probs[static_cast<size_t>(k)];
                            }
                            for (int k = 0; k < classes; ++k) probs[static_cast<size_t>(k)] /= sum;
                            const int cls = map.class_id[slot];
                            image_loss += -std::log(
                                std::max(probs[static_cast<size_t>(cls)], static_cast<T>(1e-30)));
                            for (int k = 0; k < classes; ++k) {
                                const T delta = probs[static_cast<size_t>(k)] -
                                                (k == cls ? T(1) : T(0));
                                result.grad.at(n, base + kClassLogits + k, i, j) = inv_b * delta;
                            }
                        }
                        // C == 1: the class probability is identically 1 and
                        // contributes neither loss nor gradient.
                    } else {
                        image_loss += ln * so * so;
                        result.grad.at(n, base + kTo, i, j) =
                            inv_b * ln * 2 * so * so * (T(1) - so);
                    }
                }
            }
        }
        total += image_loss;
    }
    result.loss = total / s.n;
    if (!std::isfinite(result.loss))
        throw NumericError("detection_loss: non-finite loss (divergence)");
    return result;
}

template LossResult<float> detection_loss<float>(const Tensor<float>&,
                                                 const std::vector<TargetMap>&,
                                                 const TrainConfig&);
template LossResult<double> detection_loss<double>(const Tensor<double>&,
                                                   const std::vector<TargetMap>&,
                                                   const TrainConfig&);

Tensor<float> image_to_tensor(const ImageBuffer& image, int expect_channels) {
    if (image.channels != expect_channels && !(image.channels == 1 && expect_channels == 3))
        throw Error("image_to_tensor: image has " + std::to_string(image.channels) +
                    " channels, network expects " + std::to_string(expect_channels));
    Tensor<float> t(1, expect_channels, image.height, image.width);
    for (int c = 0; c < expect_channels; ++c) {
        const int src_c = image.channels == 1 ? 0 : c;
        float* plane = t.plane(0, c);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                plane[y * image.width + x] = image.at(y, x, src_c) / 255.0f;
    }
    return t;
}

namespace {

struct TrainItem {
    Tensor<float> image;  // (1,C,H,W)
    TargetMap targets;
};

struct MomentumState {
    std::vector<Tensor<float>> weights;
    std::vector<std::vector<float>> bias;
    std::vector<std::vector<float>> gamma;
};

MomentumState make_momentum(const Model& model) {
    MomentumState m;
    for (const ConvBlock& block : model.blocks) {
        m.weights.emplace_back(block.conv.weights.shape());
        m.bias.emplace_back(static_cast<size_t>(block.conv.out_channels), 0.0f);
        m.gamma.emplace_back(block.has_bn ? block.bn.gamma.size() : 0, 0.0f);
    }
    return m;
}

// v = momentum*v - lr*(g + wd*w); w += v. Weight decay only on conv weights.
void sgd_step(Model& model, const ParamGrads& grads, MomentumState& mom,
              const TrainConfig& config) {
    const float lr = static_cast<float>(config.learning_rate);
    const float mu = static_cast<float>(config.momentum);
    const float wd = static_cast<float>(config.weight_decay);
    for (size_t b = 0; b < model.blocks.size(); ++b) {
        ConvBlock& block = model.blocks[b];
        const ParamGrads::BlockGrads& g = grads.blocks[b];

        Tensor<float>& vw = mom.weights[b];
        for (int64_t k = 0; k < vw.size(); ++k) {
            vw[k] = mu * vw[k] - lr * (g.weights[k] + wd * block.conv.weights[k]);
            block.conv.weights[k] += vw[k];
        }
        std::vector<float>& vb = mom.bias[b];
        std::vector<float>& bias = block.has_bn ? block.bn.beta : block.conv.bias;
        for (size_t k = 0; k < vb.size(); ++k) {
            vb[k] = mu * vb[k] - lr * g.bias[k];
            bias[k] += vb[k];
        }
        if (block.has_bn) {
            std::vector<float>& vg = mom.gamma[b];
            for (size_t k = 0; k < vg.size(); ++k) {
                vg[k] = mu * vg[k] - lr * g.gamma[k];
                block.bn.gamma[k] += vg[k];
            }
        }
    }
}

}  // namespace

TrainResult train(Model& model, const DatasetManifest& manifest, const TrainConfig& config,
                  int single_class) {
    if (!(config.learning_rate >= 0)) throw Error("train: learning_rate must be >= 0");
    if (config.batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (config.epochs < 0) throw Error("train: epochs must be >= 0");
    if (model.config.num_classes == 1 && single_class != 0 && single_class != 1)
        throw Error("train: a 1-class model needs single_class 0 or 1");

    const std::vector<ManifestEntry> entries = manifest.in_split(Split::train);
    if (entries.empty()) throw Error("train: manifest train split is empty");

    // Load the whole split up front; targets are invariant across epochs.
    std::vector<TrainItem> items;
    items.reserve(entries.size());
    for (const ManifestEntry& e : entries) {
        TrainItem item;
        ImageBuffer img = read_pnm(manifest.resolve(e.image_path));
        if (img.width != model.config.input_size || img.height != model.config.input_size)
            throw Error("train: image " + e.image_id + " is " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", network expects " +
                        std::to_string(model.config.input_size) + "x" +
                        std::to_string(model.config.input_size));
        item.image = image_to_tensor(img, model.config.input_channels);

        std::vector<Annotation> annos = read_annotations(manifest.resolve(e.annotation_path));
        if (model.config.num_classes == 1) {
            std::vector<Annotation> kept;
            for (Annotation a : annos)
                if (a.class_id == single_class) {
                    a.class_id = 0;
                    kept.push_back(a);
                }
            annos = std::move(kept);
        }
        item.targets = assign_targets(annos, model.config);
        items.push_back(std::move(item));
    }

    const int in_ch = model.config.input_channels;
    const int in_sz = model.config.input_size;

    MomentumState mom = make_momentum(model);
    Rng shuffle_rng(config.seed ^ 0xC0FFEE0Dull);
    TrainResult result;

    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        deterministic_shuffle(order, shuffle_rng);
        double loss_sum = 0;

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t bsz = std::min(static_cast<size_t>(config.batch_size),
                                        order.size() - start);
            Tensor<float> batch(static_cast<int>(bsz), in_ch, in_sz, in_sz);
            std::vector<TargetMap> targets;
            targets.reserve(bsz);
            for (size_t k = 0; k < bsz; ++k) {
                const TrainItem& item = items[order[start + k]];
                std::copy(item.image.data(), item.image.data() + item.image.size(),
                          batch.plane(static_cast<int>(k), 0));
                targets.push_back(item.targets);
            }

            ForwardTrace trace;
            Tensor<float> raw = forward_train(model, batch, trace);
            LossResult<float> loss;
            try {
                loss = detection_loss(raw, targets, config);
            } catch (const NumericError& e) {
                throw NumericError("train: diverged at epoch " + std::to_string(epoch) + ": " +
                                   e.what());
            }
            ParamGrads grads = make_zero_grads(model);
            backward(model, trace, loss.grad, grads);
            sgd_step(model, grads, mom, config);
            loss_sum += loss.loss * static_cast<double>(bsz);
        }

        const double mean = loss_sum / static_cast<double>(items.size());
        if (!std::isfinite(mean))
            throw NumericError("train: diverged at epoch " + std::to_string(epoch));
        result.epoch_mean_loss.push_back(mean);
    }
    return result;
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open loss csv for writing: " + path.string());
    out << "epoch,mean_loss\n";
    char buf[64];
    for (size_t i = 0; i < result.epoch_mean_loss.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, result.epoch_mean_loss[i]);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path.string());
}

AnchorPriors kmeans_anchors(const std::vector<std::pair<double, double>>& boxes, int k,
                            uint64_t seed, int iterations) {
    if (k < 1) throw Error("kmeans_anchors: k must be >= 1");
    if (static_cast<int>(boxes.size()) < k)
        throw Error("kmeans_anchors: need at least k boxes, got " + std::to_string(boxes.size()));

    Rng rng(seed);
    std::vector<size_t> pick(boxes.size());
    for (size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    deterministic_shuffle(pick, rng);

    AnchorPriors centers;
    for (int i = 0; i < k; ++i) centers.push_back(boxes[pick[static_cast<size_t>(i)]]);

    std::vector<int> assign(boxes.size(), 0);
    for (int it = 0; it < iterations; ++it) {
        bool changed = false;
        for (size_t i = 0; i < boxes.size(); ++i) {
            int best = 0;
            double best_iou = -1;
            for (int c = 0; c < k; ++c) {
                const double v = centered_iou(boxes[i].first, boxes[i].second,
                                              centers[static_cast<size_t>(c)].first,
                                              centers[static_cast<size_t>(c)].second);
                if (v > best_iou) {
                    best_iou = v;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        for (int c = 0; c < k; ++c) {
            double sw = 0, sh = 0;
            int count = 0;
            for (size_t i = 0; i < boxes.size(); ++i) {
                if (assign[i] != c) continue;
                sw += boxes[i].first;
                sh += boxes[i].second;
                ++count;
            }
            if (count > 0) {
                centers[static_cast<size_t>(c)] = {sw / count, sh / count};
            } else {
                centers[static_cast<size_t>(c)] = boxes[rng.next_below(boxes.size())];
                changed = true;
            }
        }
        if (!changed) break;
    }

    std::stable_sort(centers.begin(), centers.end(), [](const auto& l, const auto& r) {
        return l.first * l.second < r.first * r.second;
    });
    return centers;
}

}  // namespace ocular
