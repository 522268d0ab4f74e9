#include "sdnet/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace sdnet {

AdamState adam_init(const ParamStore& params) {
    AdamState st;
    for (const auto& e : params.entries())
        if (e.trainable) {
            st.m.push_back(Tensor::zeros(e.tensor.shape()));
            st.v.push_back(Tensor::zeros(e.tensor.shape()));
        }
    return st;
}

void adam_step(ParamStore& params, const std::vector<std::vector<float>>& grads, AdamState& state,
               float lr, float beta1, float beta2, float eps) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(state.step));
    size_t k = 0;
    for (auto& e : params.entries()) {
        if (!e.trainable) continue;
        if (k >= grads.size()) throw ContractError("adam_step: gradient list too short");
        const auto& g = grads[k];
        if (!g.empty()) {
            if (g.size() != e.tensor.size())
                throw ShapeError("adam_step: gradient size mismatch for '" + e.name + "'");
            auto& m = state.m[k].mutable_data();
            auto& v = state.v[k].mutable_data();
            auto& p = e.tensor.mutable_data();
            for (size_t i = 0; i < g.size(); ++i) {
                m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
                const double mhat = static_cast<double>(m[i]) / bc1;
                const double vhat = static_cast<double>(v[i]) / bc2;
                p[i] -= static_cast<float>(static_cast<double>(lr) * mhat /
                                           (std::sqrt(vhat) + static_cast<double>(eps)));
            }
        }
        ++k;
    }
}

namespace {

struct Counts {
    int64_t inter = 0, a = 0, b = 0;
};

Counts mask_counts(const IntTensor& pred, const IntTensor& gt) {
    require_same_shape(pred, gt, "mask metrics");
    Counts c;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool pa = pred.data()[i] != 0, pb = gt.data()[i] != 0;
        c.a += pa;
        c.b += pb;
        c.inter += pa && pb;
    }
    return c;
}

}  // namespace

double dice_score(const IntTensor& pred_mask, const IntTensor& gt_mask) {
    const Counts c = mask_counts(pred_mask, gt_mask);
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
}

double jaccard_score(const IntTensor& pred_mask, const IntTensor& gt_mask) {
    const Counts c = mask_counts(pred_mask, gt_mask);
    const int64_t uni = c.a + c.b - c.inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.inter) / static_cast<double>(uni);
}

EarlyStopDecision early_stop(const std::vector<double>& history, int patience) {
    if (history.empty()) throw ContractError("early_stop: empty history");
    if (patience < 1) throw ContractError("early_stop: patience must be >= 1");
    double best = history[0];
    int best_epoch = 0;
    int streak = 0;
    for (size_t i = 1; i < history.size(); ++i) {
        if (history[i] > best + 1e-6) {
            best = history[i];
            best_epoch = static_cast<int>(i);
            streak = 0;
        } else {
            ++streak;
            if (streak >= patience) return {true, best_epoch};
        }
    }
    return {false, best_epoch};
}

Tensor batch_images(const Dataset& data, const std::vector<size_t>& idx) {
    if (idx.empty()) throw ContractError("batch_images: empty batch");
    const Tensor& first = data[idx[0]].image;
    const int C = first.dim(0), H = first.dim(1), W = first.dim(2);
    Tensor out({static_cast<int>(idx.size()), C, H, W});
    float* po = out.mutable_ptr();
    const size_t item = static_cast<size_t>(C) * H * W;
    for (size_t b = 0; b < idx.size(); ++b) {
        require_same_shape(data[idx[b]].image, first, "batch_images");
        std::copy_n(data[idx[b]].image.ptr(), item, po + b * item);
    }
    return out;
}

IntTensor batch_masks(const Dataset& data, const std::vector<size_t>& idx) {
    if (idx.empty()) throw ContractError("batch_masks: empty batch");
    const IntTensor& first = data[idx[0]].mask;
    const int H = first.dim(0), W = first.dim(1);
    IntTensor out({static_cast<int>(idx.size()), H, W});
    int32_t* po = out.mutable_ptr();
    const size_t item = static_cast<size_t>(H) * W;
    for (size_t b = 0; b < idx.size(); ++b) {
        require_same_shape(data[idx[b]].mask, first, "batch_masks");
        std::copy_n(data[idx[b]].mask.ptr(), item, po + b * item);
    }
    return out;
}

IntTensor argmax_classes(const Tensor& logits) {
    require_rank(logits, 4, "argmax_classes");
    const int N = logits.dim(0), K = logits.dim(1);
    const size_t plane = static_cast<size_t>(logits.dim(2)) * logits.dim(3);
    IntTensor out({N, logits.dim(2), logits.dim(3)});
    int32_t* po = out.mutable_ptr();
    const float* px = logits.ptr();
    for (int n = 0; n < N; ++n) {
        const size_t base = static_cast<size_t>(n) * K * plane;
        for (size_t j = 0; j < plane; ++j) {
            int best = 0;
            float bv = px[base + j];
            for (int k = 1; k < K; ++k) {
                const float v = px[base + static_cast<size_t>(k) * plane + j];
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            po[static_cast<size_t>(n) * plane + j] = best;
        }
    }
    return out;
}

namespace {

IntTensor class_mask(const IntTensor& labels, int n, int cls) {
    const int H = labels.dim(1), W = labels.dim(2);
    IntTensor out({H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t j = 0; j < plane; ++j)
        out.mutable_data()[j] = labels.data()[static_cast<size_t>(n) * plane + j] == cls ? 1 : 0;
    return out;
}

}  // namespace

RunMetrics evaluate_model(const ModelForwardFn& forward, ParamStore& params, const Dataset& dataset,
                          int batch_size, int out_classes) {
    if (dataset.empty()) throw ContractError("evaluate_model: empty dataset");
    double dice_acc = 0.0, jacc_acc = 0.0;
    size_t pos = 0;
    while (pos < dataset.size()) {
        const size_t take = std::min(static_cast<size_t>(batch_size), dataset.size() - pos);
        std::vector<size_t> idx(take);
        for (size_t i = 0; i < take; ++i) idx[i] = pos + i;
        const Tensor logits = forward(nullptr, params, batch_images(dataset, idx), false);
        const IntTensor pred = argmax_classes(logits);
        const IntTensor gt = batch_masks(dataset, idx);
        for (size_t b = 0; b < take; ++b) {
            double d = 0.0, j = 0.0;
            for (int cls = 1; cls < out_classes; ++cls) {
                const IntTensor pm = class_mask(pred, static_cast<int>(b), cls);
                const IntTensor gm = class_mask(gt, static_cast<int>(b), cls);
                d += dice_score(pm, gm);
                j += jaccard_score(pm, gm);
            }
            dice_acc += d / static_cast<double>(out_classes - 1);
            jacc_acc += j / static_cast<double>(out_classes - 1);
        }
        pos += take;
    }
    return {dice_acc / static_cast<double>(dataset.size()),
            jacc_acc / static_cast<double>(dataset.size())};
}

RunResult train_one_run(const ModelForwardFn& forward, ParamStore params, const Dataset& train_set,
                        const Dataset& val_set, const Dataset& test_set, const TrainConfig& config,
                        uint64_t shuffle_seed, int out_classes) {
    config.validate();
    if (train_set.empty() || val_set.empty() || test_set.empty())
        throw ContractError("train_one_run: all three splits must be nonempty");
    Rng rng(shuffle_seed * 0x9e3779b9ULL + 0x7f4a7c15ULL);
    AdamState adam = adam_init(params);

    RunResult result;
    result.best_params = params.clone();
    std::vector<double> val_history;
    double best_val = -1.0;

    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double loss_acc = 0.0;
        int batches = 0;
        size_t pos = 0;
        while (pos < order.size()) {
            const size_t take = std::min(static_cast<size_t>(config.batch_size), order.size() - pos);
            std::vector<size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                    order.begin() + static_cast<std::ptrdiff_t>(pos + take));
            pos += take;

            Tape tape;
            const Tensor x = batch_images(train_set, idx);
            const IntTensor y = batch_masks(train_set, idx);
            const Tensor logits = forward(&tape, params, x, true);
            const Tensor loss = combined_loss(&tape, logits, y);
            const double loss_value = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(loss_value))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            loss_acc += loss_value;
            ++batches;
            tape.backward(loss.node());

            std::vector<std::vector<float>> grads;
            for (auto& e : params.entries())
                if (e.trainable)
                    grads.push_back(tape.has_grad(e.tensor.node()) ? tape.take_grad(e.tensor.node())
                                                                   : std::vector<float>());
            tape.reset();  // release saved activations before mutating parameters
            adam_step(params, grads, adam, config.learning_rate);
        }

        const RunMetrics val = evaluate_model(forward, params, val_set, config.batch_size, out_classes);
        val_history.push_back(val.dice);
        result.curve.push_back({epoch, loss_acc / std::max(1, batches), val.dice, val.jaccard});
        if (val.dice > best_val + 1e-6) {
            best_val = val.dice;
            result.best_epoch = epoch;
            result.best_params = params.clone();
        }
        if (early_stop(val_history, config.patience).stop) break;
    }

    result.metrics =
        evaluate_model(forward, result.best_params, test_set, config.batch_size, out_classes);
    return result;
}

int worker_pool_size(int requested, int jobs) {
    int limit = requested;
    if (limit <= 0) {
        if (const char* env = std::getenv("SDNET_THREADS")) limit = std::atoi(env);
        if (limit <= 0) limit = static_cast<int>(std::thread::hardware_concurrency());
        if (limit <= 0) limit = 1;
    }
    return std::max(1, std::min(limit, jobs));
}

MetricReport run_experiment(const ArchitectureSpec& arch, const DataBundle& data,
                            const TrainConfig& config, int max_workers,
                            std::vector<RunResult>* details) {
    arch.validate();
    config.validate();
    const int runs = config.runs;
    std::vector<RunResult> results(static_cast<size_t>(runs));
    std::vector<std::exception_ptr> errors(static_cast<size_t>(runs));

    auto run_one = [&](int r) {
        try {
            const uint64_t seed = config.seed + static_cast<uint64_t>(r);
            Network net = build_network(arch, seed);
            ModelForwardFn forward = [&net](Tape* tape, ParamStore& ps, const Tensor& x,
                                            bool training) {
                return network_forward<float>(tape, net.spec, ps, x, training);
            };
            results[static_cast<size_t>(r)] =
                train_one_run(forward, net.params, data.train, data.val, data.test, config, seed,
                              arch.out_classes);
        } catch (...) {
            errors[static_cast<size_t>(r)] = std::current_exception();
        }
    };

    const int workers = worker_pool_size(max_workers, runs);
    if (workers <= 1) {
        for (int r = 0; r < runs; ++r) run_one(r);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (int r = next.fetch_add(1); r < runs; r = next.fetch_add(1)) run_one(r);
            });
        for (auto& th : pool) th.join();
    }
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);

    std::vector<RunMetrics> metrics;
    for (const auto& r : results) metrics.push_back(r.metrics);
    if (details) *details = std::move(results);
    return MetricReport::from_runs(std::move(metrics));
}

}  // namespace sdnet
