#include "icrl/commands.hpp"

#include <algorithm>
#include <fstream>

#include <spdlog/spdlog.h>

#include "icrl/errors.hpp"

namespace icrl {

namespace {

void require(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("missing required --") + key);
}

DatasetContainer load_dataset(const RunConfig& config) {
  require(config.dataset, "dataset");
  return load_container(config.dataset);
}

std::ofstream open_output(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  return f;
}

Model<float> without_pretrain_head(const Model<float>& model) {
  Model<float> out{model.config, {}};
  for (const auto& [name, t] : model.params)
    if (name.rfind("pretrain.", 0) != 0) out.params.add(name, t);
  return out;
}

}  // namespace

SplitSpec resolve_split(const RunConfig& config, const DatasetContainer& data) {
  if (!config.split.empty()) return split_classes(data, load_split(config.split));
  return split_classes(data, config.split_ratios, config.train.seed);
}

ModelConfig model_config_for(const RunConfig& config, const DatasetContainer& data) {
  const Shape& shape = data.instance_shape();
  if (shape.size() != 3 || shape[1] != shape[2]) {
    throw ContractError("dataset instances must be square c x s x s images, got " + shape_str(shape));
  }
  ModelConfig m = config.model;
  m.backbone.input_channels = shape[0];
  m.backbone.input_size = shape[1];
  m.shots = config.train.k;
  m.validate();
  return m;
}

Model<float> warm_start(const RunConfig& config, const DatasetContainer& data, const Checkpoint& from) {
  Model<float> model = build_model(model_config_for(config, data), config.train.seed);
  const auto& src = from.model;
  if (src.config.use_airn && model.config.use_airn && src.params.contains("airn.w3.weight") &&
      airn_shots(src.params) != config.train.k) {
    throw ContractError("checkpoint AIRN is shaped for K=" + std::to_string(airn_shots(src.params)) +
                        " but the run asks for K=" + std::to_string(config.train.k));
  }
  Model<float> out{model.config, {}};
  for (const auto& [name, fresh] : model.params) {
    if (!src.params.contains(name)) {
      out.params.add(name, fresh);
      continue;
    }
    const Tensor& t = src.params.get(name);
    if (t.shape() != fresh.shape()) {
      throw ContractError("checkpoint parameter " + name + " has shape " + shape_str(t.shape()) +
                          ", the configured model needs " + shape_str(fresh.shape()));
    }
    out.params.add(name, Tensor(t.shape(), std::vector<float>(t.data().begin(), t.data().end()), true));
  }
  return out;
}

void cmd_synth(const RunConfig& config, std::ostream& out) {
  require(config.out, "out");
  SyntheticSpec spec = config.synth;
  spec.seed = config.train.seed;
  if (spec.outlier_fraction > 0) {
    const OutlierBlobs blobs = gen_outlier_blobs(spec);
    save_container(blobs.data, config.out);
    const std::string sidecar = config.out + ".outliers.csv";
    save_outlier_flags(blobs, sidecar);
    out << "wrote " << config.out << " (" << spec.classes << " classes x " << spec.per_class
        << " instances) and " << sidecar << "\n";
  } else {
    save_container(gen_blobs(spec), config.out);
    out << "wrote " << config.out << " (" << spec.classes << " classes x " << spec.per_class
        << " instances)\n";
  }
}

void cmd_pretrain(const RunConfig& config, std::ostream& out) {
  config.validate();
  require(config.out, "out");
  const DatasetContainer data = load_dataset(config);
  const SplitSpec split = resolve_split(config, data);
  Model<float> init = build_model(model_config_for(config, data), config.train.seed);
  const PretrainResult result = pretrain(data, split.train, std::move(init), config.train);

  save_checkpoint({result.model, config.train.to_map()}, config.out);
  std::ofstream csv = open_output(config.out + ".metrics.csv");
  csv << "epoch,loss,val_acc\n";
  for (const auto& row : result.log) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", row.epoch, row.loss, row.val_acc);
    csv << buf;
  }
  out << "selected epoch " << result.selected_epoch << " (1-shot validation accuracy "
      << result.selected_val_acc << "), wrote " << config.out << "\n";
}

void cmd_meta_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  require(config.out, "out");
  const DatasetContainer data = load_dataset(config);
  const SplitSpec split = resolve_split(config, data);
  Model<float> model;
  if (config.from_scratch) {
    model = build_model(model_config_for(config, data), config.train.seed);
  } else {
    if (config.checkpoint.empty()) {
      throw ConfigError("meta-train needs --checkpoint (a pretrain output) or --from-scratch");
    }
    model = warm_start(config, data, load_checkpoint(config.checkpoint));
  }

  std::ofstream csv = open_output(config.out + ".metrics.csv");
  csv << kMetricsHeader << "\n";
  const MetricsSink sink = [&](const MetricsRow& row) { csv << format_metrics_row(row) << "\n"; };
  const MetaTrainResult result = meta_train(data, split.train, std::move(model), config.train, sink);
  save_checkpoint({without_pretrain_head(result.model), config.train.to_map()}, config.out);

  const std::size_t window = std::min<std::size_t>(50, result.metrics.size());
  double acc = 0;
  for (std::size_t i = result.metrics.size() - window; i < result.metrics.size(); ++i)
    acc += result.metrics[i].query_acc;
  out << "trained " << result.metrics.size() << " episodes; mean query accuracy over the last "
      << window << ": " << (window ? acc / window : 0.0) << "; wrote " << config.out << "\n";
}

namespace {

struct Loaded {
  DatasetContainer data;
  Model<float> model;
  std::vector<std::size_t> classes;
};

Loaded load_for_inference(const RunConfig& config) {
  config.validate();
  require(config.checkpoint, "checkpoint");
  DatasetContainer data = load_dataset(config);
  Checkpoint cp = load_checkpoint(config.checkpoint);
  if (data.instance_shape() != cp.model.config.backbone.input_shape()) {
    throw ContractError("dataset instances are " + shape_str(data.instance_shape()) +
                        ", checkpoint expects " + shape_str(cp.model.config.backbone.input_shape()));
  }
  const SplitSpec split = resolve_split(config, data);
  std::vector<std::size_t> classes = split.by_name(config.eval_split);
  return {std::move(data), without_pretrain_head(cp.model), std::move(classes)};
}

}  // namespace

void cmd_eval(const RunConfig& config, std::ostream& out) {
  const Loaded in = load_for_inference(config);
  const auto& t = config.train;
  const EvalReport report =
      evaluate(in.model, in.data, in.classes, config.episodes, t.n, t.k, t.m, t.seed, config.threads);
  out << report.to_text() << "\n" << report.to_json() << "\n";
  if (!config.out.empty()) open_output(config.out) << report.to_json() << "\n";
}

void cmd_inspect(const RunConfig& config, std::ostream& out) {
  const Loaded in = load_for_inference(config);
  if (!in.model.config.use_airn) {
    throw ContractError("inspect needs a model with AIRN; this checkpoint averages its support");
  }
  const auto& t = config.train;
  Rng rng = make_rng(t.seed, "inspect.episode");
  const Episode episode = sample_episode(in.data, in.classes, rng, t.n, t.k, t.m);
  const InferenceResult result = infer_episode(in.model, in.data, episode);

  std::ofstream file;
  if (!config.out.empty()) file = open_output(config.out);
  std::ostream& csv = config.out.empty() ? out : file;
  csv << "episode,class,instance,a_k\n";
  for (std::size_t slot = 0; slot < episode.n; ++slot) {
    std::vector<std::size_t> order(t.k);
    for (std::size_t i = 0; i < t.k; ++i) order[i] = i;
    const auto& a = result.significance[slot];
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x] > a[y]; });
    for (std::size_t shot : order) {
      const InstanceRef& ref = episode.support[slot * t.k + shot];
      char buf[128];
      std::snprintf(buf, sizeof buf, "%llu,%zu,%zu,%.9g\n", static_cast<unsigned long long>(t.seed),
                    ref.class_id, ref.index, a[shot]);
      csv << buf;
    }
  }
  if (t.k == 1) {
    out << "note: with K=1 each class has a single support instance, so its weight only rescales "
           "the class representation and does not change predictions\n";
  }
  if (!config.out.empty()) out << "wrote " << config.out << "\n";
}

}  // namespace icrl
