#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroaps/autodiff.hpp"
#include "neuroaps/model.hpp"
#include "neuroaps/pipeline.hpp"
#include "neuroaps/rng.hpp"

// End-to-end training: cross-entropy objective, Adam, coordinate jitter and
// point-dropout augmentation, per-epoch train/test metrics. Single-threaded
// training is fully deterministic per seed.

namespace neuroaps {

struct TrainConfig {
    double learning_rate = 1e-3;  // fixed, no schedule
    int epochs = 30;
    int batch_size = 16;
    double jitter_sigma = 0.01;      // in normalized coordinate units
    double dropout_fraction = 0.1;   // fraction of points replaced by duplicates
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0) throw std::invalid_argument("train: learning_rate must be > 0");
        if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (jitter_sigma < 0) throw std::invalid_argument("train: jitter_sigma must be >= 0");
        if (dropout_fraction < 0 || dropout_fraction >= 1)
            throw std::invalid_argument("train: dropout_fraction must lie in [0, 1)");
    }
};

/// Jitters x/y with Gaussian noise (clamped to [-1, 1]) and replaces
/// floor(dropout * N) points with copies of surviving points, so the cloud
/// size never changes. Intensities and region labels are untouched.
inline PointCloud augment(const PointCloud& cloud, const TrainConfig& config, Rng& rng) {
    PointCloud out = cloud;
    if (config.jitter_sigma > 0) {
        for (LabeledPoint& p : out.points) {
            p.x = std::clamp(static_cast<float>(p.x + config.jitter_sigma * rng.normal()),
                             -1.0f, 1.0f);
            p.y = std::clamp(static_cast<float>(p.y + config.jitter_sigma * rng.normal()),
                             -1.0f, 1.0f);
        }
    }
    const std::size_t n = out.points.size();
    const std::size_t k = static_cast<std::size_t>(config.dropout_fraction * n);
    if (k == 0) return out;

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    // partial Fisher-Yates: first k entries are the dropped points
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
        std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t survivor = idx[k + rng.uniform_index(n - k)];
        out.points[idx[i]] = out.points[survivor];
    }
    return out;
}

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
};

struct TrainResult {
    ModelParams<float> params;
    std::vector<EpochStats> history;
};

struct EvalResult {
    double accuracy = 0.0;
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;  // AD is the positive class

    std::int64_t total() const { return tp + tn + fp + fn; }
};

namespace detail {

inline int argmax_row(const float* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;  // ties keep the lowest index
    return static_cast<int>(best);
}

inline std::vector<int> cloud_labels(std::span<const PointCloud> clouds) {
    std::vector<int> labels;
    labels.reserve(clouds.size());
    for (const auto& c : clouds) {
        if (!c.class_label)
            throw std::invalid_argument("trainer: cloud '" + c.source_id + "' has no class label");
        labels.push_back(static_cast<int>(*c.class_label));
    }
    return labels;
}

}  // namespace detail

/// Argmax evaluation of frozen parameters; pure, so repeated calls agree.
inline EvalResult evaluate(const ModelParams<float>& params, std::span<const PointCloud> clouds) {
    if (clouds.empty()) throw std::invalid_argument("evaluate: empty split");
    const auto labels = detail::cloud_labels(clouds);
    EvalResult res;
    constexpr std::size_t kChunk = 16;
    for (std::size_t start = 0; start < clouds.size(); start += kChunk) {
        const std::size_t count = std::min(kChunk, clouds.size() - start);
        ad::Tape<float> tape;
        const auto fwd = forward_batch(tape, params, clouds.subspan(start, count));
        const ad::Tensor<float>& logits = tape.value(fwd.logits);
        for (std::size_t b = 0; b < count; ++b) {
            const int pred = detail::argmax_row(logits.row(b), logits.cols);
            const int truth = labels[start + b];
            if (truth == 1)
                (pred == 1 ? res.tp : res.fn)++;
            else
                (pred == 0 ? res.tn : res.fp)++;
        }
    }
    res.accuracy = static_cast<double>(res.tp + res.tn) / static_cast<double>(res.total());
    return res;
}

/// Adam/cross-entropy training loop. Per epoch: seeded shuffle, per-batch
/// augment -> forward -> mean CE -> backward -> adam_step. History rows carry
/// the mean train loss, training-pass accuracy, and test accuracy.
inline TrainResult train(std::span<const PointCloud> train_clouds,
                         std::span<const PointCloud> test_clouds,
                         const ModelConfig& model_config, const TrainConfig& train_config) {
    train_config.validate();
    if (train_clouds.empty()) throw std::invalid_argument("train: empty train split");
    if (test_clouds.empty()) throw std::invalid_argument("train: empty test split");
    const auto labels = detail::cloud_labels(train_clouds);
    detail::cloud_labels(test_clouds);  // fail fast on unlabelled test clouds

    TrainResult result;
    result.params = init_params<float>(model_config);
    std::vector<float> flat = result.params.flatten();
    ad::AdamState<float> opt(flat.size(), static_cast<float>(train_config.learning_rate));
    std::vector<float> flat_grad(flat.size());

    std::vector<std::size_t> order(train_clouds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(train_config.seed, tag_hash("epoch-shuffle"),
                                    static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng aug_rng(derive_seed(train_config.seed, tag_hash("augment"),
                                static_cast<std::uint64_t>(epoch)));

        double loss_sum = 0.0;
        std::int64_t correct = 0;
        int step = 0;
        for (std::size_t start = 0; start < order.size();
             start += train_config.batch_size, ++step) {
            const std::size_t count =
                std::min<std::size_t>(train_config.batch_size, order.size() - start);
            std::vector<PointCloud> batch;
            std::vector<int> batch_labels;
            batch.reserve(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t s = order[start + i];
                batch.push_back(augment(train_clouds[s], train_config, aug_rng));
                batch_labels.push_back(labels[s]);
            }
            try {
                ad::Tape<float> tape;
                const auto fwd = forward_batch(tape, result.params, batch);
                const int loss = tape.ce_mean(fwd.logits, batch_labels);
                tape.backward(loss);

                loss_sum += static_cast<double>(tape.value(loss).at(0, 0)) * count;
                const ad::Tensor<float>& logits = tape.value(fwd.logits);
                for (std::size_t b = 0; b < count; ++b)
                    correct += detail::argmax_row(logits.row(b), logits.cols) == batch_labels[b];

                collect_param_grads(tape, fwd, flat_grad);
                adam_step<float>(flat, flat_grad, opt);
                result.params.unflatten(flat);
            } catch (const ad::NumericalError& e) {
                std::string ids;
                for (const auto& c : batch) ids += c.source_id + " ";
                throw ad::NumericalError("training aborted at epoch " + std::to_string(epoch) +
                                         " step " + std::to_string(step) + " (batch: " + ids +
                                         "): " + e.what());
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        stats.test_acc = evaluate(result.params, test_clouds).accuracy;
        result.history.push_back(stats);
    }
    return result;
}

/// Spec-level convenience: sample (or load cached) clouds from a phantom
/// manifest, then train.
inline TrainResult train_from_manifest(const std::vector<io::ManifestRecord>& manifest,
                                       const std::filesystem::path& base_dir, SamplerKind kind,
                                       const SamplingBudget& budget,
                                       const ModelConfig& model_config,
                                       const TrainConfig& train_config,
                                       std::uint64_t sampling_seed,
                                       const std::filesystem::path& cache_dir = {}) {
    const CloudDataset data =
        prepare_clouds(manifest, base_dir, kind, budget, sampling_seed, cache_dir);
    return train(data.train, data.test, model_config, train_config);
}

inline void write_history_csv(const std::filesystem::path& path,
                              const std::vector<EpochStats>& history) {
    std::string text = "epoch,train_loss,train_acc,test_acc\n";
    char row[128];
    for (const auto& h : history) {
        std::snprintf(row, sizeof row, "%d,%.6f,%.6f,%.6f\n", h.epoch, h.train_loss, h.train_acc,
                      h.test_acc);
        text += row;
    }
    io::write_file_atomic(path, text);
}

}  // namespace neuroaps
