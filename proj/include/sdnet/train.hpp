#pragma once

#include <functional>
#include <vector>

#include "sdnet/arch.hpp"
#include "sdnet/data.hpp"
#include "sdnet/ops.hpp"
#include "sdnet/params.hpp"
#include "sdnet/report.hpp"

namespace sdnet {

struct TrainConfig {
    float learning_rate = 1e-4f;  // 1e-3 suits small-image tasks
    int batch_size = 8;
    int max_epochs = 200;
    int patience = 10;
    uint64_t seed = 1;
    int runs = 5;

    void validate() const {
        if (learning_rate <= 0) throw ConfigError("train: learning_rate must be positive");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
        if (patience < 1) throw ConfigError("train: patience must be >= 1");
        if (patience >= max_epochs) throw ConfigError("train: patience must be < max_epochs");
        if (runs < 1) throw ConfigError("train: runs must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> one_hot(const IntTensor& labels, int num_classes) {
    require_rank(labels, 3, "one_hot labels");
    const int N = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
    TensorT<T> out(Shape{N, num_classes, H, W});
    auto& d = out.mutable_data();
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n)
        for (size_t j = 0; j < plane; ++j) {
            const int32_t c = labels.data()[static_cast<size_t>(n) * plane + j];
            if (c < 0 || c >= num_classes)
                throw ContractError("one_hot: label " + std::to_string(c) + " outside 0.." +
                                    std::to_string(num_classes - 1));
            d[(static_cast<size_t>(n) * num_classes + c) * plane + j] = T(1);
        }
    return out;
}

// Mean pixelwise negative log-softmax probability of the target class,
// stabilized with log-sum-exp.
template <typename T>
TensorT<T> cross_entropy_loss(TapeT<T>* tape, const TensorT<T>& logits, const IntTensor& target) {
    require_rank(logits, 4, "cross_entropy_loss logits");
    require_rank(target, 3, "cross_entropy_loss target");
    const int N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    if (target.dim(0) != N || target.dim(1) != H || target.dim(2) != W)
        throw ShapeError("cross_entropy_loss: logits " + shape_str(logits.shape()) +
                         " vs target " + shape_str(target.shape()));
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t pixels = static_cast<size_t>(N) * plane;
    TensorT<T> probs(logits.shape());
    const T* px = logits.ptr();
    T* pp = probs.mutable_ptr();
    double loss_acc = 0.0;
    for (int n = 0; n < N; ++n) {
        const size_t base = static_cast<size_t>(n) * K * plane;
        for (size_t j = 0; j < plane; ++j) {
            const int32_t cls = target.data()[static_cast<size_t>(n) * plane + j];
            if (cls < 0 || cls >= K)
                throw ContractError("cross_entropy_loss: target class " + std::to_string(cls) +
                                    " outside 0.." + std::to_string(K - 1));
            T mx = px[base + j];
            for (int k = 1; k < K; ++k)
                mx = std::max(mx, px[base + static_cast<size_t>(k) * plane + j]);
            double denom = 0.0;
            for (int k = 0; k < K; ++k)
                denom += std::exp(static_cast<double>(px[base + static_cast<size_t>(k) * plane + j] - mx));
            const double lse = static_cast<double>(mx) + std::log(denom);
            loss_acc += lse - static_cast<double>(px[base + static_cast<size_t>(cls) * plane + j]);
            for (int k = 0; k < K; ++k) {
                const size_t idx = base + static_cast<size_t>(k) * plane + j;
                pp[idx] = static_cast<T>(std::exp(static_cast<double>(px[idx]) - lse));
            }
        }
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(loss_acc / static_cast<double>(pixels)));
    if (tape && logits.node() != kNoNode) {
        const int ix = logits.node();
        out.set_node(tape->add_node(
            "cross_entropy", out.shape(), {ix},
            [ix, probs, target, N, K, plane, pixels](TapeT<T>& t, const std::vector<T>& g) {
                if (auto* s = t.slot(ix, static_cast<size_t>(N) * K * plane)) {
                    const T* pp2 = probs.ptr();
                    const T inv = g[0] / static_cast<T>(pixels);
                    for (int n = 0; n < N; ++n) {
                        const size_t base = static_cast<size_t>(n) * K * plane;
                        for (size_t j = 0; j < plane; ++j) {
                            const int32_t cls = target.data()[static_cast<size_t>(n) * plane + j];
                            for (int k = 0; k < K; ++k) {
                                const size_t idx = base + static_cast<size_t>(k) * plane + j;
                                T v = pp2[idx];
                                if (k == cls) v -= T(1);
                                (*s)[idx] += inv * v;
                            }
                        }
                    }
                }
            }));
    }
    return out;
}

// Soft Dice: 1 - mean over batch items and classes of
// (2*sum(p*t)+eps) / (sum(p)+sum(t)+eps) with p = softmax(logits), eps = 1e-5.
template <typename T>
TensorT<T> soft_dice_loss(TapeT<T>* tape, const TensorT<T>& logits, const TensorT<T>& target_onehot) {
    require_rank(logits, 4, "soft_dice_loss logits");
    require_same_shape(logits, target_onehot, "soft_dice_loss");
    const int N = logits.dim(0), K = logits.dim(1);
    if (K < 2) throw ContractError("soft_dice_loss: need at least 2 classes");
    const size_t plane = static_cast<size_t>(logits.dim(2)) * logits.dim(3);
    for (int n = 0; n < N; ++n)
        for (size_t j = 0; j < plane; ++j) {
            T s = T(0);
            bool binary = true;
            for (int k = 0; k < K; ++k) {
                const T v = target_onehot.data()[(static_cast<size_t>(n) * K + k) * plane + j];
                binary = binary && (v == T(0) || v == T(1));
                s += v;
            }
            if (!binary || s != T(1))
                throw ContractError("soft_dice_loss: target is not one-hot at batch " +
                                    std::to_string(n) + ", pixel " + std::to_string(j));
        }
    const T eps = static_cast<T>(1e-5);
    TensorT<T> p = softmax_channels(tape, logits);
    TensorT<T> inter = sum_spatial(tape, mul(tape, p, target_onehot));
    TensorT<T> psum = sum_spatial(tape, p);
    TensorT<T> tsum = sum_spatial(tape, target_onehot);
    TensorT<T> dice = div(tape, add_scalar(tape, scale(tape, inter, T(2)), eps),
                          add_scalar(tape, add(tape, psum, tsum), eps));
    TensorT<T> mean_dice = scale(tape, sum(tape, dice), T(1) / static_cast<T>(N * K));
    return one_minus(tape, mean_dice);
}

// Unit-weight sum of soft Dice and cross-entropy.
template <typename T>
TensorT<T> combined_loss(TapeT<T>* tape, const TensorT<T>& logits, const IntTensor& target) {
    const int K = logits.dim(1);
    TensorT<T> dice = soft_dice_loss(tape, logits, one_hot<T>(target, K));
    TensorT<T> ce = cross_entropy_loss(tape, logits, target);
    return add(tape, dice, ce);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;  // aligned with the trainable entries of the store
    int64_t step = 0;
};

AdamState adam_init(const ParamStore& params);

// Standard Adam with bias correction; grads are aligned with the store's
// trainable entries (empty gradient = zero).
void adam_step(ParamStore& params, const std::vector<std::vector<float>>& grads, AdamState& state,
               float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);

// ---------------------------------------------------------------------------
// Metrics and early stopping
// ---------------------------------------------------------------------------

// Dice and Jaccard over binary masks; 1.0 when both masks are empty.
double dice_score(const IntTensor& pred_mask, const IntTensor& gt_mask);
double jaccard_score(const IntTensor& pred_mask, const IntTensor& gt_mask);

struct EarlyStopDecision {
    bool stop = false;
    int best_epoch = 0;
};

// Stops once validation Dice has not improved (by more than 1e-6) for
// `patience` consecutive epochs; best_epoch is the first argmax.
EarlyStopDecision early_stop(const std::vector<double>& history, int patience);

// ---------------------------------------------------------------------------
// Experiment loop
// ---------------------------------------------------------------------------

using ModelForwardFn =
    std::function<Tensor(Tape*, ParamStore&, const Tensor& x, bool training)>;

struct EpochRow {
    int epoch;
    double train_loss;
    double val_dice;
    double val_jaccard;
};

struct RunResult {
    RunMetrics metrics;
    int best_epoch = 0;
    std::vector<EpochRow> curve;
    ParamStore best_params;
};

// Argmax class map of logits [N,K,H,W] -> [N,H,W].
IntTensor argmax_classes(const Tensor& logits);

// Mean per-image Dice/Jaccard of a model over a dataset (classes 1..K-1).
RunMetrics evaluate_model(const ModelForwardFn& forward, ParamStore& params,
                          const Dataset& dataset, int batch_size, int out_classes);

// One training run: minibatch Adam on combined loss, early stopping on
// validation Dice, test evaluation of the best checkpoint.
RunResult train_one_run(const ModelForwardFn& forward, ParamStore params, const Dataset& train_set,
                        const Dataset& val_set, const Dataset& test_set, const TrainConfig& config,
                        uint64_t shuffle_seed, int out_classes);

struct DataBundle {
    Dataset train, val, test;
};

// Trains `config.runs` fresh networks (seeds seed..seed+runs-1) and reports
// per-run and aggregated metrics. Runs execute on up to `max_workers` threads
// (0 = SDNET_THREADS env var, falling back to hardware concurrency).
MetricReport run_experiment(const ArchitectureSpec& arch, const DataBundle& data,
                            const TrainConfig& config, int max_workers = 0,
                            std::vector<RunResult>* details = nullptr);

int worker_pool_size(int requested, int jobs);

// Assembles [B,C,H,W] / [B,H,W] batch tensors from dataset indices.
Tensor batch_images(const Dataset& data, const std::vector<size_t>& idx);
IntTensor batch_masks(const Dataset& data, const std::vector<size_t>& idx);

}  // namespace sdnet
