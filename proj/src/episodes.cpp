#include "icrl/episodes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "icrl/errors.hpp"
#include "icrl/ops.hpp"
#include "icrl/optim.hpp"

namespace icrl {

std::vector<std::size_t> Episode::support_labels() const {
  std::vector<std::size_t> labels(n * k);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i / k;
  return labels;
}

std::vector<std::size_t> Episode::query_labels() const {
  std::vector<std::size_t> labels(n * m);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i / m;
  return labels;
}

InstancePool pool_from_classes(const DatasetContainer& data, std::span<const std::size_t> classes) {
  InstancePool pool;
  pool.reserve(classes.size());
  for (std::size_t c : classes) {
    if (c >= data.class_count()) {
      throw ContractError("class " + std::to_string(c) + " is not in the dataset");
    }
    std::vector<std::size_t> idx(data.instance_count(c));
    std::iota(idx.begin(), idx.end(), 0);
    pool.emplace_back(c, std::move(idx));
  }
  return pool;
}

Episode sample_episode(const InstancePool& pool, Rng& rng, std::size_t n, std::size_t k,
                       std::size_t m) {
  if (n == 0 || k == 0) throw ContractError("sample_episode: N and K must be positive");
  if (pool.size() < n) {
    throw ContractError("sample_episode: " + std::to_string(n) + "-way task needs " +
                        std::to_string(n) + " classes, split has " + std::to_string(pool.size()));
  }
  for (const auto& [c, idx] : pool) {
    if (idx.size() < k + m) {
      throw ContractError("sample_episode: class " + std::to_string(c) + " has " +
                          std::to_string(idx.size()) + " instances, needs K+M=" +
                          std::to_string(k + m));
    }
  }
  std::vector<std::size_t> slots(pool.size());
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(n);

  Episode e;
  e.n = n;
  e.k = k;
  e.m = m;
  e.support.reserve(n * k);
  e.query.reserve(n * m);
  for (std::size_t slot : slots) {
    const auto& [class_id, candidates] = pool[slot];
    std::vector<std::size_t> chosen = candidates;
    std::shuffle(chosen.begin(), chosen.end(), rng);
    e.classes.push_back(class_id);
    for (std::size_t i = 0; i < k; ++i) e.support.push_back({class_id, chosen[i]});
    for (std::size_t i = 0; i < m; ++i) e.query.push_back({class_id, chosen[k + i]});
  }
  return e;
}

Episode sample_episode(const DatasetContainer& data, std::span<const std::size_t> classes, Rng& rng,
                       std::size_t n, std::size_t k, std::size_t m) {
  return sample_episode(pool_from_classes(data, classes), rng, n, k, m);
}

std::vector<float> augment_image(std::span<const float> image, const Shape& shape, Rng& rng) {
  const std::size_t C = shape.at(0), H = shape.at(1), W = shape.at(2);
  const long pad = static_cast<long>(std::max<std::size_t>(1, std::min(H, W) / 8));
  std::bernoulli_distribution flip(0.5);
  std::uniform_int_distribution<long> offset(0, 2 * pad);
  const bool mirrored = flip(rng);
  const long dy = offset(rng) - pad;
  const long dx = offset(rng) - pad;
  std::vector<float> out(image.size(), 0.0f);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y) {
      const long sy = static_cast<long>(y) + dy;
      if (sy < 0 || sy >= static_cast<long>(H)) continue;
      for (std::size_t x = 0; x < W; ++x) {
        long sx = static_cast<long>(x) + dx;
        if (sx < 0 || sx >= static_cast<long>(W)) continue;
        if (mirrored) sx = static_cast<long>(W) - 1 - sx;
        out[(c * H + y) * W + x] = image[(c * H + static_cast<std::size_t>(sy)) * W +
                                         static_cast<std::size_t>(sx)];
      }
    }
  return out;
}

template <class T>
EpisodeOutput<T> forward_episode(const Model<T>& model, const DatasetContainer& data,
                                 const Episode& episode, const LossWeights& weights, Rng* augment) {
  const ModelConfig& cfg = model.config;
  if (episode.n == 0 || episode.k == 0 || episode.m == 0) {
    throw ContractError("forward_episode: episode needs N, K, M >= 1");
  }
  if (cfg.use_airn && airn_shots(model.params) != episode.k) {
    throw ContractError("model was trained for K=" + std::to_string(airn_shots(model.params)) +
                        " but the episode is " + std::to_string(episode.k) + "-shot");
  }
  const Shape& shape = data.instance_shape();
  auto embed = [&](const InstanceRef& ref) {
    const auto raw = data.instance(ref.class_id, ref.index);
    std::vector<T> values;
    if (augment) {
      const auto a = augment_image(raw, shape, *augment);
      values.assign(a.begin(), a.end());
    } else {
      values.assign(raw.begin(), raw.end());
    }
    cfg.standardize(values);
    return embed_instance(BasicTensor<T>(shape, std::move(values)), model.params, cfg.backbone,
                          cfg.pooling);
  };

  std::vector<BasicTensor<T>> support;
  support.reserve(episode.support.size());
  for (const auto& ref : episode.support) support.push_back(embed(ref));
  std::vector<BasicTensor<T>> query;
  query.reserve(episode.query.size());
  for (const auto& ref : episode.query) query.push_back(embed(ref));

  EpisodeOutput<T> out;
  std::vector<ClassRepresentation<T>> reps;
  reps.reserve(episode.n);
  for (std::size_t slot = 0; slot < episode.n; ++slot) {
    const auto first = support.begin() + static_cast<long>(slot * episode.k);
    const std::vector<BasicTensor<T>> shots(first, first + static_cast<long>(episode.k));
    const BasicTensor<T> u = stack(std::span<const BasicTensor<T>>(shots));
    if (cfg.use_airn) {
      auto [rep, significance] = class_representation(u, model.params, episode.classes[slot]);
      reps.push_back(std::move(rep));
      out.significance.push_back(std::move(significance));
    } else {
      reps.push_back(mean_prototype(u, episode.classes[slot]));
    }
  }
  out.support = stack(std::span<const BasicTensor<T>>(support));
  out.query = stack(std::span<const BasicTensor<T>>(query));
  out.classes = stack_classes(std::span<const ClassRepresentation<T>>(reps));

  const BasicTensor<T> tau = model.temperature();
  out.logits = cosine_logits(out.query, out.classes, tau);
  const auto query_labels = episode.query_labels();
  const auto support_labels = episode.support_labels();
  const BasicTensor<T> cls = loss_cls(out.logits, query_labels);
  const BasicTensor<T> intra = loss_intra(out.support, out.classes, support_labels, tau);
  const BasicTensor<T> inter = loss_inter(out.classes);
  out.loss = loss_joint(cls, intra, inter, weights);

  out.predictions = predict(out.logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < out.predictions.size(); ++i) correct += out.predictions[i] == query_labels[i];
  out.accuracy = static_cast<double>(correct) / static_cast<double>(out.predictions.size());
  return out;
}

template EpisodeOutput<float> forward_episode(const Model<float>&, const DatasetContainer&,
                                              const Episode&, const LossWeights&, Rng*);
template EpisodeOutput<double> forward_episode(const Model<double>&, const DatasetContainer&,
                                               const Episode&, const LossWeights&, Rng*);

void TrainConfig::validate() const {
  if (n == 0 || k == 0 || m == 0) throw ConfigError("train: n, k and m must be positive");
  if (!(backbone_lr > 0 && module_lr > 0 && pretrain_lr > 0 && lr_decay > 0)) {
    throw ConfigError("train: learning rates and decay factor must be positive");
  }
  if (momentum < 0 || weight_decay < 0) throw ConfigError("train: momentum and weight decay must be >= 0");
  if (loss.lambda1 < 0 || loss.lambda2 < 0) throw ConfigError("train: lambda1/lambda2 must be >= 0");
  if (!(pretrain_holdout > 0 && pretrain_holdout < 1)) {
    throw ConfigError("train: pretrain_holdout must lie in (0, 1)");
  }
  if (pretrain_batch == 0) throw ConfigError("train: pretrain_batch must be positive");
}

double TrainConfig::lr_factor(std::size_t epoch, std::size_t total_epochs) const {
  std::vector<std::size_t> marks = milestones;
  if (marks.empty()) marks = {(total_epochs + 1) / 2, (3 * total_epochs + 3) / 4};
  double factor = 1.0;
  for (std::size_t mark : marks)
    if (epoch >= mark) factor *= lr_decay;
  return factor;
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string marks;
  for (std::size_t i = 0; i < milestones.size(); ++i) marks += (i ? "," : "") + std::to_string(milestones[i]);
  return {
      {"train.n", std::to_string(n)},
      {"train.k", std::to_string(k)},
      {"train.m", std::to_string(m)},
      {"train.epochs", std::to_string(epochs)},
      {"train.episodes_per_epoch", std::to_string(episodes_per_epoch)},
      {"train.backbone_lr", num(backbone_lr)},
      {"train.module_lr", num(module_lr)},
      {"train.pretrain_lr", num(pretrain_lr)},
      {"train.momentum", num(momentum)},
      {"train.weight_decay", num(weight_decay)},
      {"train.lr_decay", num(lr_decay)},
      {"train.milestones", marks},
      {"train.lambda1", num(loss.lambda1)},
      {"train.lambda2", num(loss.lambda2)},
      {"train.losses", std::string("cls") + (loss.use_intra ? ",intra" : "") + (loss.use_inter ? ",inter" : "")},
      {"train.augment", augment ? "on" : "off"},
      {"train.seed", std::to_string(seed)},
  };
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g", row.epoch, row.episode,
                row.l_cls, row.l_intra, row.l_inter, row.l_joint, row.query_acc);
  return buf;
}

namespace {

struct ParamGroups {
  std::vector<Tensor> backbone;
  std::vector<Tensor> modules;
};

ParamGroups episodic_groups(const ParameterSet<float>& params) {
  ParamGroups g;
  for (const auto& [name, t] : params) {
    if (name.rfind("pretrain.", 0) == 0) continue;
    (name.rfind("backbone.", 0) == 0 ? g.backbone : g.modules).push_back(t);
  }
  return g;
}

OptimizerState make_state(double lr, const TrainConfig& config) {
  OptimizerState s;
  s.learning_rate = lr;
  s.momentum = config.momentum;
  s.weight_decay = config.weight_decay;
  s.nesterov = true;
  return s;
}

}  // namespace

MetaTrainResult meta_train(const DatasetContainer& data, std::span<const std::size_t> train_classes,
                           Model<float> model, const TrainConfig& config, const MetricsSink& sink) {
  config.validate();
  if (config.n < 2) throw ConfigError("meta-training needs N >= 2");
  if (model.config.use_airn && airn_shots(model.params) != config.k) {
    throw ContractError("checkpoint AIRN is shaped for K=" + std::to_string(airn_shots(model.params)) +
                        ", training config asks for K=" + std::to_string(config.k));
  }
  if (data.instance_shape() != model.config.backbone.input_shape()) {
    throw ContractError("dataset instances are " + shape_str(data.instance_shape()) +
                        ", model expects " + shape_str(model.config.backbone.input_shape()));
  }
  const InstancePool pool = pool_from_classes(data, train_classes);
  ParamGroups groups = episodic_groups(model.params);
  OptimizerState backbone_state = make_state(config.backbone_lr, config);
  OptimizerState module_state = make_state(config.module_lr, config);

  Rng sampler = make_rng(config.seed, "meta.episodes");
  Rng shuffler = make_rng(config.seed, "meta.shuffle");
  Rng augmenter = make_rng(config.seed, "meta.augment");

  MetaTrainResult result;
  result.metrics.reserve(config.epochs * config.episodes_per_epoch);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double factor = config.lr_factor(epoch, config.epochs);
    backbone_state.learning_rate = config.backbone_lr * factor;
    module_state.learning_rate = config.module_lr * factor;
    for (std::size_t i = 0; i < config.episodes_per_epoch; ++i) {
      Episode episode = sample_episode(pool, sampler, config.n, config.k, config.m);
      if (config.shuffle_support) {
        for (std::size_t slot = 0; slot < episode.n; ++slot) {
          auto first = episode.support.begin() + static_cast<long>(slot * episode.k);
          std::shuffle(first, first + static_cast<long>(episode.k), shuffler);
        }
      }
      model.params.zero_grad();
      EpisodeOutput<float> out =
          forward_episode(model, data, episode, config.loss, config.augment ? &augmenter : nullptr);
      backward(out.loss.joint);
      sgd_step(std::span<Tensor>(groups.backbone), backbone_state);
      sgd_step(std::span<Tensor>(groups.modules), module_state);

      MetricsRow row{epoch, i, out.loss.l_cls, out.loss.l_intra, out.loss.l_inter,
                     out.loss.l_joint, out.accuracy};
      if (sink) sink(row);
      result.metrics.push_back(row);
    }
  }
  result.model = std::move(model);
  return result;
}

double pooled_feature_accuracy(const Model<float>& model, const DatasetContainer& data,
                               const InstancePool& pool, std::size_t episodes, std::size_t n,
                               std::size_t m, std::uint64_t seed) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng = make_rng(seed, "pooled.episode", e);
    const Episode episode = sample_episode(pool, rng, n, 1, m);
    auto feature = [&](const InstanceRef& ref) {
      const auto raw = data.instance(ref.class_id, ref.index);
      std::vector<float> image(raw.begin(), raw.end());
      model.config.standardize(image);
      return global_average_pool(backbone_forward(Tensor(data.instance_shape(), std::move(image)),
                                                  model.params, model.config.backbone));
    };
    std::vector<Tensor> protos, queries;
    for (const auto& ref : episode.support) protos.push_back(feature(ref));
    for (const auto& ref : episode.query) queries.push_back(feature(ref));
    Tensor proto_matrix = stack(std::span<const Tensor>(protos));
    // A prototype of all zeros (dead features) cannot be normalized; treat the
    // episode as chance-level guessing of class 0.
    bool degenerate = false;
    for (std::size_t r = 0; r < proto_matrix.dim(0) && !degenerate; ++r) {
      double sq = 0;
      for (std::size_t i = 0; i < proto_matrix.dim(1); ++i) {
        const double v = proto_matrix.data()[r * proto_matrix.dim(1) + i];
        sq += v * v;
      }
      degenerate = !(std::sqrt(sq) > kMinClassNorm);
    }
    const auto labels = episode.query_labels();
    std::vector<std::size_t> predictions(labels.size(), 0);
    if (!degenerate) {
      predictions = predict(cosine_logits(l2_normalize(stack(std::span<const Tensor>(queries))),
                                          proto_matrix, 1.0));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
    total += static_cast<double>(correct) / static_cast<double>(labels.size());
  }
  return episodes ? total / static_cast<double>(episodes) : 0.0;
}

PretrainResult pretrain(const DatasetContainer& data, std::span<const std::size_t> train_classes,
                        Model<float> model, const TrainConfig& config) {
  config.validate();
  if (train_classes.empty()) throw ContractError("pretrain: the training split is empty");
  if (data.instance_shape() != model.config.backbone.input_shape()) {
    throw ContractError("dataset instances are " + shape_str(data.instance_shape()) +
                        ", model expects " + shape_str(model.config.backbone.input_shape()));
  }
  const std::size_t classes = train_classes.size();
  if (!model.params.contains("pretrain.head.weight")) {
    Rng head_rng = make_rng(config.seed, "init.pretrain_head");
    init_pretrain_head(model.params, model.config.backbone.channels, classes, head_rng);
  } else if (model.params.get("pretrain.head.weight").dim(1) != classes) {
    throw ContractError("pretrain head has " +
                        std::to_string(model.params.get("pretrain.head.weight").dim(1)) +
                        " outputs, training split has " + std::to_string(classes) + " classes");
  }

  // Split every training class into a fitting part and a held-out part.
  Rng holdout_rng = make_rng(config.seed, "pretrain.holdout");
  InstancePool val_pool;
  std::vector<std::pair<std::size_t, InstanceRef>> fit;  // (label, instance)
  std::size_t min_val = SIZE_MAX;
  for (std::size_t label = 0; label < classes; ++label) {
    const std::size_t c = train_classes[label];
    const std::size_t count = data.instance_count(c);
    if (count < 3) throw ContractError("pretrain: class " + std::to_string(c) + " has fewer than 3 instances");
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), holdout_rng);
    std::size_t held = static_cast<std::size_t>(std::floor(config.pretrain_holdout * count));
    held = std::clamp<std::size_t>(held, 2, count - 1);
    val_pool.emplace_back(c, std::vector<std::size_t>(idx.begin(), idx.begin() + held));
    for (auto it = idx.begin() + held; it != idx.end(); ++it) fit.emplace_back(label, InstanceRef{c, *it});
    min_val = std::min(min_val, held);
  }
  const std::size_t val_n = std::min<std::size_t>(5, classes);
  const std::size_t val_m = std::min<std::size_t>(15, min_val - 1);
  const std::uint64_t val_seed = derive_seed(config.seed, "pretrain.validation");
  auto validate_model = [&](const Model<float>& m) {
    return pooled_feature_accuracy(m, data, val_pool, config.pretrain_val_episodes, val_n, val_m, val_seed);
  };

  PretrainResult result;
  result.selected_val_acc = validate_model(model);
  result.selected_epoch = 0;
  result.model = model.cast<float>();
  result.log.push_back({0, 0.0, result.selected_val_acc});

  std::vector<Tensor> trainable;
  for (const auto& [name, t] : model.params)
    if (name.rfind("backbone.", 0) == 0 || name.rfind("pretrain.", 0) == 0) trainable.push_back(t);
  OptimizerState state = make_state(config.pretrain_lr, config);
  Rng order_rng = make_rng(config.seed, "pretrain.order");
  Rng augmenter = make_rng(config.seed, "pretrain.augment");
  const Shape& shape = data.instance_shape();

  for (std::size_t epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    state.learning_rate = config.pretrain_lr * config.lr_factor(epoch - 1, config.pretrain_epochs);
    std::shuffle(fit.begin(), fit.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < fit.size(); start += config.pretrain_batch) {
      const std::size_t end = std::min(fit.size(), start + config.pretrain_batch);
      std::vector<Tensor> rows;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        const auto& [label, ref] = fit[i];
        const auto raw = data.instance(ref.class_id, ref.index);
        std::vector<float> image = config.augment ? augment_image(raw, shape, augmenter)
                                                  : std::vector<float>(raw.begin(), raw.end());
        model.config.standardize(image);
        const Tensor fm = backbone_forward(Tensor(shape, std::move(image)), model.params,
                                           model.config.backbone);
        rows.push_back(pretrain_head_forward(fm, model.params));
        labels.push_back(label);
      }
      const Tensor logits = reshape(stack(std::span<const Tensor>(rows)), {rows.size(), classes});
      const Tensor loss = softmax_cross_entropy(logits, labels);
      model.params.zero_grad();
      backward(loss);
      sgd_step(std::span<Tensor>(trainable), state);
      loss_sum += loss.item();
      ++batches;
    }
    const double acc = validate_model(model);
    result.log.push_back({epoch, batches ? loss_sum / batches : 0.0, acc});
    if (acc > result.selected_val_acc) {
      result.selected_val_acc = acc;
      result.selected_epoch = epoch;
      result.model = model.cast<float>();
    }
  }
  return result;
}

InferenceResult infer_episode(const Model<float>& model, const DatasetContainer& data,
                              const Episode& episode) {
  NoGradGuard no_grad;
  const EpisodeOutput<float> out = forward_episode(model, data, episode, LossWeights{});
  InferenceResult result;
  result.predictions = out.predictions;
  result.accuracy = out.accuracy;
  for (const auto& s : out.significance)
    result.significance.emplace_back(s.weights.data().begin(), s.weights.data().end());
  const std::size_t cols = out.logits.dim(1);
  for (std::size_t r = 0; r < out.logits.dim(0); ++r)
    result.logits.emplace_back(out.logits.data().begin() + static_cast<long>(r * cols),
                               out.logits.data().begin() + static_cast<long>((r + 1) * cols));
  return result;
}

EvalReport summarize_accuracies(std::vector<double> accuracies) {
  EvalReport report;
  report.episodes = accuracies.size();
  if (!accuracies.empty()) {
    const double e = static_cast<double>(accuracies.size());
    report.mean = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / e;
    if (accuracies.size() > 1) {
      double ss = 0.0;
      for (double a : accuracies) ss += (a - report.mean) * (a - report.mean);
      report.ci95 = 1.96 * std::sqrt(ss / (e - 1.0)) / std::sqrt(e);
    }
  }
  report.accuracies = std::move(accuracies);
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mean"] = mean;
  j["ci95"] = ci95;
  j["episodes"] = episodes;
  j["n"] = n;
  j["k"] = k;
  j["m"] = m;
  j["seed"] = seed;
  return j.dump();
}

std::string EvalReport::to_text() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu-way %zu-shot over %zu episodes: %.2f ± %.2f", n, k, episodes,
                100.0 * mean, 100.0 * ci95);
  return buf;
}

EvalReport evaluate(const Model<float>& model, const DatasetContainer& data,
                    std::span<const std::size_t> classes, std::size_t episodes, std::size_t n,
                    std::size_t k, std::size_t m, std::uint64_t seed, std::size_t threads) {
  if (episodes == 0) throw ContractError("evaluate: needs at least one episode");
  const InstancePool pool = pool_from_classes(data, classes);
  {
    // Fail fast with the sampler's message before spawning workers.
    Rng probe = make_rng(seed, "eval.episode", 0);
    (void)sample_episode(pool, probe, n, k, m);
  }
  std::vector<double> accuracies(episodes, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    try {
      for (std::size_t i = next++; i < episodes && !failed; i = next++) {
        Rng rng = make_rng(seed, "eval.episode", i);
        const Episode episode = sample_episode(pool, rng, n, k, m);
        accuracies[i] = infer_episode(model, data, episode).accuracy;
      }
    } catch (...) {
      if (!failed.exchange(true)) failure = std::current_exception();
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, episodes);
  std::vector<std::thread> pool_threads;
  for (std::size_t t = 1; t < threads; ++t) pool_threads.emplace_back(worker);
  worker();
  for (auto& t : pool_threads) t.join();
  if (failure) std::rethrow_exception(failure);

  EvalReport report = summarize_accuracies(std::move(accuracies));
  report.n = n;
  report.k = k;
  report.m = m;
  report.seed = seed;
  return report;
}

}  // namespace icrl
