#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icrl/data.hpp"
#include "icrl/head.hpp"
#include "icrl/model.hpp"
#include "icrl/rng.hpp"

namespace icrl {

struct InstanceRef {
  std::size_t class_id = 0;  // global class id in the container
  std::size_t index = 0;     // instance index within that class

  friend bool operator==(const InstanceRef&, const InstanceRef&) = default;
  friend auto operator<=>(const InstanceRef&, const InstanceRef&) = default;
};

// One N-way K-shot task. support[n * k + shot] and query[n * m + q] belong to
// class slot n, whose global id is classes[n].
struct Episode {
  std::size_t n = 0, k = 0, m = 0;
  std::vector<std::size_t> classes;
  std::vector<InstanceRef> support;
  std::vector<InstanceRef> query;

  std::vector<std::size_t> support_labels() const;
  std::vector<std::size_t> query_labels() const;

  friend bool operator==(const Episode&, const Episode&) = default;
};

// Candidate instances per class: (global class id, usable instance indices).
using InstancePool = std::vector<std::pair<std::size_t, std::vector<std::size_t>>>;

InstancePool pool_from_classes(const DatasetContainer& data, std::span<const std::size_t> classes);

// Classes without replacement, then K + M instances without replacement
// inside each class.
Episode sample_episode(const InstancePool& pool, Rng& rng, std::size_t n, std::size_t k,
                       std::size_t m);
Episode sample_episode(const DatasetContainer& data, std::span<const std::size_t> classes, Rng& rng,
                       std::size_t n, std::size_t k, std::size_t m);

// Horizontal flip with probability 1/2, then a random crop from the image
// zero-padded by max(1, size / 8) on every side.
std::vector<float> augment_image(std::span<const float> image, const Shape& shape, Rng& rng);

template <class T>
struct EpisodeOutput {
  BasicTensor<T> support;  // NK x d instance representations
  BasicTensor<T> query;    // NM x d
  BasicTensor<T> classes;  // N x d class representations
  BasicTensor<T> logits;   // NM x N
  std::vector<SignificanceVector<T>> significance;  // per class slot; empty without AIRN
  LossBreakdown<T> loss;
  std::vector<std::size_t> predictions;
  double accuracy = 0.0;
};

// Embeds every instance, builds class representations (AIRN or averaging),
// classifies the queries and evaluates the joint loss. `augment` enables
// training-time augmentation of every image.
template <class T>
EpisodeOutput<T> forward_episode(const Model<T>& model, const DatasetContainer& data,
                                 const Episode& episode, const LossWeights& weights,
                                 Rng* augment = nullptr);

struct TrainConfig {
  std::size_t n = 5, k = 5, m = 15;
  std::size_t epochs = 200;
  std::size_t episodes_per_epoch = 100;
  double backbone_lr = 0.001;
  double module_lr = 0.01;
  double pretrain_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr_decay = 0.1;
  std::vector<std::size_t> milestones;  // empty: ceil(E/2) and ceil(3E/4)
  LossWeights loss;
  bool augment = true;
  bool shuffle_support = true;
  std::uint64_t seed = 0;

  std::size_t pretrain_epochs = 100;
  std::size_t pretrain_batch = 32;
  double pretrain_holdout = 0.2;  // per-class fraction held out for model selection
  std::size_t pretrain_val_episodes = 100;

  void validate() const;
  // Learning-rate multiplier for a 0-based epoch.
  double lr_factor(std::size_t epoch, std::size_t total_epochs) const;

  std::map<std::string, std::string> to_map() const;
};

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t episode = 0;
  double l_cls = 0, l_intra = 0, l_inter = 0, l_joint = 0;
  double query_acc = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,episode,l_cls,l_intra,l_inter,l_joint,query_acc";
std::string format_metrics_row(const MetricsRow& row);

struct MetaTrainResult {
  Model<float> model;
  std::vector<MetricsRow> metrics;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

// Episodic training: sample, embed, build class representations, classify,
// joint loss, one Nesterov SGD step. Backbone parameters use backbone_lr;
// extractor, AIRN and temperature use module_lr.
MetaTrainResult meta_train(const DatasetContainer& data, std::span<const std::size_t> train_classes,
                           Model<float> model, const TrainConfig& config,
                           const MetricsSink& sink = {});

struct PretrainRow {
  std::size_t epoch = 0;
  double loss = 0;
  double val_acc = 0;
};

struct PretrainResult {
  Model<float> model;  // parameters of the selected epoch (epoch 0 is the initialization)
  std::size_t selected_epoch = 0;
  double selected_val_acc = 0;
  std::vector<PretrainRow> log;
};

// Whole-classifier cross-entropy over every training class with a linear
// head, then model selection by 1-shot accuracy on held-out instances using
// pooled backbone features and a cosine nearest prototype.
PretrainResult pretrain(const DatasetContainer& data, std::span<const std::size_t> train_classes,
                        Model<float> model, const TrainConfig& config);

// 1-shot nearest-prototype accuracy over pooled backbone features.
double pooled_feature_accuracy(const Model<float>& model, const DatasetContainer& data,
                               const InstancePool& pool, std::size_t episodes, std::size_t n,
                               std::size_t m, std::uint64_t seed);

struct InferenceResult {
  std::vector<std::size_t> predictions;  // class slot per query
  std::vector<std::vector<double>> significance;  // [class slot][shot]; empty without AIRN
  std::vector<std::vector<double>> logits;
  double accuracy = 0.0;
};

// No parameter mutation and no graph recording.
InferenceResult infer_episode(const Model<float>& model, const DatasetContainer& data,
                              const Episode& episode);

struct EvalReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(E)
  std::size_t episodes = 0;
  std::size_t n = 0, k = 0, m = 0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  std::string to_text() const;  // "mean ± ci95" in percent, two decimals
};

// Mean and 95% half-width of per-episode accuracies.
EvalReport summarize_accuracies(std::vector<double> accuracies);

inline constexpr std::size_t kDefaultEvalEpisodes = 600;

// E independent episodes; episode i uses its own stream derived from `seed`,
// so results do not depend on `threads`.
EvalReport evaluate(const Model<float>& model, const DatasetContainer& data,
                    std::span<const std::size_t> classes, std::size_t episodes, std::size_t n,
                    std::size_t k, std::size_t m, std::uint64_t seed, std::size_t threads = 1);

}  // namespace icrl
