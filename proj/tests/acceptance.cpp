// Acceptance suite: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icrl/checkpoint.hpp"
#include "icrl/commands.hpp"
#include "icrl/episodes.hpp"
#include "icrl/errors.hpp"
#include "icrl/grad_check.hpp"
#include "icrl/ops.hpp"
#include "icrl/optim.hpp"

using namespace icrl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<std::size_t> all_classes(const DatasetContainer& d) {
  std::vector<std::size_t> v(d.class_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "icrl_acceptance";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ICRL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ModelConfig blob_model(std::size_t size, std::size_t k) {
  ModelConfig m;
  m.backbone.blocks = 4;
  m.backbone.channels = 16;
  m.backbone.input_size = size;
  m.backbone.input_channels = 3;
  m.shots = k;
  return m;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.classes = 4;
  spec.per_class = 6;
  spec.size = 8;
  spec.noise = 0.2;
  const DatasetContainer data = gen_blobs(spec);

  double worst = 0;
  std::size_t checked = 0, skipped = 0;
  std::string where, per_seed;
  std::vector<double> fine;
  for (std::uint64_t seed : {0, 1, 2}) {
    ModelConfig mc;
    mc.backbone.blocks = 2;
    mc.backbone.channels = 4;
    mc.backbone.input_size = 8;
    mc.shots = 2;
    Model<double> model = build_model(mc, seed).cast<double>();
    // Non-trivial attention and biases so every path carries gradient.
    Rng rng = make_rng(seed, "acceptance.perturb");
    std::normal_distribution<double> small(0.0, 0.3);
    for (const auto& name : {"abfe.ws.weight", "abfe.ws.bias", "abfe.w1.bias", "abfe.w2.bias",
                             "airn.w3.bias", "airn.w4.bias"})
      for (auto& v : model.params.get(name).mutable_data()) v = small(rng);
    Rng sampler = make_rng(seed, "acceptance.episode");
    const Episode episode = sample_episode(data, all_classes(data), sampler, 2, 2, 2);
    auto loss = [&] { return forward_episode(model, data, episode, LossWeights{}).loss.joint; };
    GradCheckOptions options;
    options.step = 1e-3;
    options.seed = seed;
    const GradCheckReport r = grad_check(loss, model.params, options);
    // Diagnostic only: the same check with a smaller step separates
    // finite-difference truncation error from a wrong derivative.
    options.step = 1e-4;
    fine.push_back(grad_check(loss, model.params, options).max_rel_error);
    per_seed += fmt("%sseed %llu: %.3g", per_seed.empty() ? "" : ", ",
                    static_cast<unsigned long long>(seed), r.max_rel_error);
    checked += r.checked;
    skipped += r.skipped_nonsmooth;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = fmt("%s[%zu] analytic %.6g numeric %.6g (seed %llu)", r.worst_param.c_str(), r.worst_index,
                  r.worst_analytic, r.worst_numeric, static_cast<unsigned long long>(seed));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("max rel err %.3g at %s [%s]; %zu coords checked, %zu skipped at ReLU/max-pool kinks; "
              "%.1f s (diagnostic at h=1e-4: %.2g, %.2g, %.2g)",
              worst, where.c_str(), per_seed.c_str(), checked, skipped, secs, fine[0], fine[1], fine[2])};
}

// Mean-prototype cosine classifier written with plain loops in double.
std::vector<std::vector<double>> baseline_logits(const std::vector<std::vector<double>>& support,
                                                 const std::vector<std::vector<double>>& query,
                                                 std::size_t n, std::size_t k, double tau) {
  const std::size_t d = support.front().size();
  std::vector<std::vector<double>> protos(n, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t s = 0; s < k; ++s)
      for (std::size_t i = 0; i < d; ++i) protos[c][i] += support[c * k + s][i] / double(k);
    double norm = 0;
    for (double v : protos[c]) norm += v * v;
    for (double& v : protos[c]) v /= std::sqrt(norm);
  }
  std::vector<std::vector<double>> logits(query.size(), std::vector<double>(n));
  for (std::size_t q = 0; q < query.size(); ++q)
    for (std::size_t c = 0; c < n; ++c) {
      double dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += query[q][i] * protos[c][i];
      logits[q][c] = tau * dot;
    }
  return logits;
}

template <class T>
std::vector<double> embed_ref(const Model<T>& model, const DatasetContainer& data, const InstanceRef& ref) {
  const auto raw = data.instance(ref.class_id, ref.index);
  std::vector<T> image(raw.begin(), raw.end());
  model.config.standardize(image);
  const auto e = embed_instance(BasicTensor<T>(data.instance_shape(), std::move(image)), model.params,
                                model.config.backbone, model.config.pooling);
  return {e.data().begin(), e.data().end()};
}

std::size_t argmax(const std::vector<double>& row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

// Logit gap and argmax agreement of forward_episode against the loop baseline.
struct LogitComparison {
  double max_diff = 0;
  std::size_t argmax_mismatch = 0, queries = 0;
};

LogitComparison compare_logits(const Model<double>& model, const DatasetContainer& data,
                               std::span<const std::size_t> classes, std::size_t k, std::size_t episodes,
                               std::uint64_t seed) {
  LogitComparison cmp;
  NoGradGuard no_grad;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng = make_rng(seed, "acceptance.baseline", e);
    const Episode ep = sample_episode(data, classes, rng, 5, k, 5);
    const auto out = forward_episode(model, data, ep, LossWeights{0.0, 0.0});
    std::vector<std::vector<double>> sup, qry;
    for (const auto& r : ep.support) sup.push_back(embed_ref(model, data, r));
    for (const auto& r : ep.query) qry.push_back(embed_ref(model, data, r));
    const auto ref = baseline_logits(sup, qry, ep.n, k, model.config.tau);
    for (std::size_t q = 0; q < ref.size(); ++q) {
      std::vector<double> row(ep.n);
      for (std::size_t c = 0; c < ep.n; ++c) {
        row[c] = out.logits.data()[q * ep.n + c];
        cmp.max_diff = std::max(cmp.max_diff, std::abs(row[c] - ref[q][c]));
      }
      cmp.argmax_mismatch += argmax(row) != argmax(ref[q]);
      cmp.argmax_mismatch += out.predictions[q] != argmax(ref[q]);
      ++cmp.queries;
    }
  }
  return cmp;
}

Outcome baseline_equivalence() {
  SyntheticSpec spec;
  spec.classes = 10;
  spec.per_class = 20;
  spec.size = 16;
  spec.noise = 0.3;
  spec.separation = 3.0;
  const DatasetContainer data = gen_blobs(spec);
  const auto classes = all_classes(data);

  ModelConfig mc = blob_model(16, 5);
  mc.backbone.blocks = 3;
  mc.backbone.channels = 8;
  mc.zero_init_airn = true;
  const Model<float> initial = build_model(mc, 3);

  // Logits over several episodes, zero-initialized AIRN at K = 5.
  const LogitComparison k5 = compare_logits(initial.cast<double>(), data, classes, 5, 20, 11);

  // K = 1 with a randomly initialized AIRN: a single weight cannot change the direction.
  ModelConfig mc1 = mc;
  mc1.shots = 1;
  mc1.zero_init_airn = false;
  const LogitComparison k1 = compare_logits(build_model(mc1, 4).cast<double>(), data, classes, 1, 20, 12);

  // One meta-training step against a hand-applied SGD step on the baseline loss.
  TrainConfig cfg;
  cfg.n = 5;
  cfg.k = 5;
  cfg.m = 5;
  cfg.epochs = 1;
  cfg.episodes_per_epoch = 1;
  cfg.loss.lambda1 = 0.0;
  cfg.loss.lambda2 = 0.0;
  cfg.augment = false;
  cfg.seed = 21;
  const MetaTrainResult trained = meta_train(data, classes, initial.cast<float>(), cfg);

  Model<float> base = initial.cast<float>();
  Rng sampler = make_rng(cfg.seed, "meta.episodes");
  const Episode ep = sample_episode(pool_from_classes(data, classes), sampler, cfg.n, cfg.k, cfg.m);
  auto embed = [&](const InstanceRef& r) {
    const auto raw = data.instance(r.class_id, r.index);
    std::vector<float> image(raw.begin(), raw.end());
    base.config.standardize(image);
    return embed_instance(Tensor(data.instance_shape(), std::move(image)), base.params,
                          base.config.backbone, base.config.pooling);
  };
  std::vector<Tensor> protos, queries;
  for (std::size_t c = 0; c < ep.n; ++c) {
    std::vector<Tensor> shots;
    for (std::size_t s = 0; s < ep.k; ++s) shots.push_back(embed(ep.support[c * ep.k + s]));
    protos.push_back(reduce_mean(stack(std::span<const Tensor>(shots)), 0));
  }
  for (const auto& r : ep.query) queries.push_back(embed(r));
  const Tensor logits = scale(matmul(stack(std::span<const Tensor>(queries)),
                                     transpose(l2_normalize(stack(std::span<const Tensor>(protos))))),
                              base.config.tau);
  const auto labels = ep.query_labels();
  backward(softmax_cross_entropy(logits, labels));

  double step_diff = 0;
  std::size_t compared = 0;
  std::string worst;
  for (const auto& [name, p] : base.params) {
    if (name.rfind("airn.", 0) == 0) continue;
    const double lr = name.rfind("backbone.", 0) == 0 ? cfg.backbone_lr : cfg.module_lr;
    const auto after = trained.model.params.get(name).data();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      // First step from zero velocity: p - lr * (1 + momentum) * (g + wd * p).
      const double g = double(p.grad()[i]) + cfg.weight_decay * double(p.data()[i]);
      const double expect = double(p.data()[i]) - lr * (1.0 + cfg.momentum) * g;
      const double diff = std::abs(expect - double(after[i]));
      if (diff > step_diff) {
        step_diff = diff;
        worst = fmt("%s[%zu]", name.c_str(), i);
      }
      ++compared;
    }
  }
  const bool pass = k5.max_diff <= 1e-5 && k5.argmax_mismatch == 0 && k1.max_diff <= 1e-5 &&
                    k1.argmax_mismatch == 0 && step_diff <= 1e-5;
  return {pass, fmt("K=5 zero-init logits max diff %.3g, argmax mismatches %zu/%zu; K=1 logits max diff "
                    "%.3g, argmax mismatches %zu/%zu; one SGD step max param diff %.3g over %zu "
                    "backbone/extractor values (worst %s)",
                    k5.max_diff, k5.argmax_mismatch, k5.queries, k1.max_diff, k1.argmax_mismatch,
                    k1.queries, step_diff, compared, worst.c_str())};
}

Outcome loss_identities() {
  SyntheticSpec spec;
  spec.classes = 12;
  spec.per_class = 24;
  spec.size = 16;
  spec.noise = 0.3;
  spec.separation = 4.0;
  const DatasetContainer data = gen_blobs(spec);
  ModelConfig mc = blob_model(16, 5);
  mc.backbone.blocks = 3;
  mc.backbone.channels = 8;
  TrainConfig cfg;
  cfg.n = 5;
  cfg.k = 5;
  cfg.m = 5;
  cfg.epochs = 2;
  cfg.episodes_per_epoch = 40;
  cfg.augment = false;

  std::string csv = std::string(kMetricsHeader) + "\n";
  const MetaTrainResult r = meta_train(data, all_classes(data), build_model(mc, 5), cfg,
                                       [&](const MetricsRow& row) { csv += format_metrics_row(row) + "\n"; });
  double worst = 0;
  std::size_t rows = 0;
  auto check = [&](double cls, double intra, double inter, double joint) {
    worst = std::max(worst, std::abs(joint - (cls + 0.1 * intra + 0.1 * inter)));
    ++rows;
  };
  for (const auto& row : r.metrics) check(row.l_cls, row.l_intra, row.l_inter, row.l_joint);
  // The same rows as they appear in the written log.
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    std::vector<double> f;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) f.push_back(std::stod(cell));
    check(f[2], f[3], f[4], f[5]);
  }

  const std::size_t N = 5, d = 12;
  double orth = 0, same = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng = make_rng(seed, "acceptance.inter");
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> orth_rows(N * d, 0.0), same_rows(N * d);
    for (std::size_t n = 0; n < N; ++n) orth_rows[n * d + 2 * n] = 0.1 + std::abs(z(rng));
    std::vector<double> v(d);
    for (double& x : v) x = z(rng);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < d; ++i) same_rows[n * d + i] = v[i] * (1.0 + double(n));
    const Shape shape{N, d};
    orth = std::max({orth, std::abs(loss_inter(BasicTensor<double>(shape, orth_rows)).item()),
                     std::abs(double(loss_inter(cast<float>(BasicTensor<double>(shape, orth_rows), false)).item()))});
    const double expect = double(N * (N - 1));
    same = std::max({same, std::abs(loss_inter(BasicTensor<double>(shape, same_rows)).item() - expect),
                     std::abs(double(loss_inter(cast<float>(BasicTensor<double>(shape, same_rows), false)).item()) - expect)});
  }
  return {worst <= 1e-6 && orth <= 1e-6 && same <= 1e-5,
          fmt("joint identity max gap %.3g over %zu logged rows (metrics and CSV); L_inter orthogonal "
              "max |value| %.3g; identical reps max |value - N(N-1)| %.3g",
              worst, rows, orth, same)};
}

Outcome blob_training() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.classes = 20;
  spec.per_class = 40;
  spec.size = 16;
  spec.separation = 10.0;
  spec.noise = 0.1;
  const DatasetContainer data = gen_blobs(spec);
  const SplitSpec split = split_classes(data, SplitRatios{}, 0);
  TrainConfig cfg;
  cfg.n = 5;
  cfg.k = 5;
  cfg.m = 15;
  cfg.epochs = 3;
  cfg.episodes_per_epoch = 100;
  cfg.augment = false;  // blob centers are per-pixel, so crops and flips change the class signal
  const MetaTrainResult r = meta_train(data, split.train, build_model(blob_model(16, 5), 0), cfg);
  double acc = 0;
  for (std::size_t i = r.metrics.size() - 50; i < r.metrics.size(); ++i) acc += r.metrics[i].query_acc;
  acc /= 50;
  const double secs = seconds_since(t0);
  return {acc >= 0.95 && secs < 600,
          fmt("last-50 mean query accuracy %.4f over %zu episodes (first episode %.3f); %.1f s", acc,
              r.metrics.size(), r.metrics.front().query_acc, secs)};
}


struct Moments {
  double sum = 0, sq = 0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    sq += v * v;
    ++n;
  }
  double mean() const { return sum / double(n); }
  double var() const { return (sq - sum * sum / double(n)) / double(n - 1); }
};

Outcome outlier_downweighting() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.classes = 20;
  spec.per_class = 40;
  spec.size = 16;
  spec.outlier_fraction = 0.2;
  spec.outlier_rule = OutlierRule::kOtherClass;
  const OutlierBlobs blobs = gen_outlier_blobs(spec);
  const SplitSpec split = split_classes(blobs.data, SplitRatios{0.6, 0.0, 0.4}, 0);

  TrainConfig cfg;
  cfg.n = 5;
  cfg.k = 5;
  cfg.m = 15;
  cfg.epochs = 3;
  cfg.episodes_per_epoch = 100;
  cfg.augment = false;
  ModelConfig with_airn = blob_model(16, 5);
  with_airn.backbone.blocks = 3;
  ModelConfig without_airn = with_airn;
  without_airn.use_airn = false;
  const Model<float> icrl = meta_train(blobs.data, split.train, build_model(with_airn, 0), cfg).model;
  const Model<float> base = meta_train(blobs.data, split.train, build_model(without_airn, 0), cfg).model;

  const std::size_t episodes = 300;
  const std::uint64_t eval_seed = 7;
  Moments outlier, clean;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng = make_rng(eval_seed, "acceptance.outlier", e);
    const Episode ep = sample_episode(blobs.data, split.test, rng, 5, 5, 15);
    const InferenceResult r = infer_episode(icrl, blobs.data, ep);
    for (std::size_t c = 0; c < ep.n; ++c)
      for (std::size_t s = 0; s < ep.k; ++s) {
        const InstanceRef& ref = ep.support[c * ep.k + s];
        (blobs.outlier[ref.class_id][ref.index] ? outlier : clean).add(r.significance[c][s]);
      }
  }
  const EvalReport icrl_eval = evaluate(icrl, blobs.data, split.test, episodes, 5, 5, 15, eval_seed);
  const EvalReport base_eval = evaluate(base, blobs.data, split.test, episodes, 5, 5, 15, eval_seed);
  const double pooled_sd = std::sqrt(((outlier.n - 1) * outlier.var() + (clean.n - 1) * clean.var()) /
                                     double(outlier.n + clean.n - 2));
  const double effect = (clean.mean() - outlier.mean()) / pooled_sd;
  const bool pass = outlier.n > 0 && outlier.mean() < clean.mean() && icrl_eval.mean >= base_eval.mean;
  return {pass, fmt("mean a_k outlier %.4f (%zu) vs clean %.4f (%zu), Cohen's d %.2f; query accuracy "
                    "AIRN on %.4f vs averaging %.4f over %zu shared episodes; %.1f s",
                    outlier.mean(), outlier.n, clean.mean(), clean.n, effect, icrl_eval.mean,
                    base_eval.mean, episodes, seconds_since(t0))};
}


Outcome protocol_fidelity() {
  // Fixture: 300 episodes at 0.6 and 300 at 0.8. Sample variance 6/599, so
  // the half-width is 1.96 * 0.1 / sqrt(599) by hand.
  std::vector<double> fixture(600);
  for (std::size_t i = 0; i < fixture.size(); ++i) fixture[i] = i % 2 ? 0.8 : 0.6;
  const EvalReport f = summarize_accuracies(fixture);
  const double hand_ci = 1.96 * 0.1 / std::sqrt(599.0);
  const double fixture_err = std::max(std::abs(f.mean - 0.7), std::abs(f.ci95 - hand_ci));

  SyntheticSpec spec;
  spec.classes = 10;
  spec.per_class = 25;
  spec.size = 16;
  spec.separation = 3.0;
  spec.noise = 0.3;
  const DatasetContainer data = gen_blobs(spec);
  ModelConfig mc = blob_model(16, 5);
  mc.backbone.blocks = 3;
  mc.backbone.channels = 8;
  const Model<float> model = build_model(mc, 1);
  const EvalReport r = evaluate(model, data, all_classes(data), kDefaultEvalEpisodes, 5, 5, 15, 3, 2);

  // Independent two-pass recomputation from the per-episode accuracies.
  double mean = 0;
  for (double a : r.accuracies) mean += a;
  mean /= double(r.accuracies.size());
  double ss = 0;
  for (double a : r.accuracies) ss += (a - mean) * (a - mean);
  const double ci = 1.96 * std::sqrt(ss / double(r.accuracies.size() - 1)) / std::sqrt(600.0);
  const double eval_err = std::max(std::abs(r.mean - mean), std::abs(r.ci95 - ci));
  const auto json = nlohmann::json::parse(r.to_json());
  const double json_err = std::max(std::abs(json.at("mean").get<double>() - mean),
                                   std::abs(json.at("ci95").get<double>() - ci));
  const bool pass = fixture_err <= 1e-9 && r.episodes == 600 && r.accuracies.size() == 600 &&
                    eval_err <= 1e-9 && json_err <= 1e-9 && json.at("episodes").get<std::size_t>() == 600;
  return {pass, fmt("fixture CI %.12f vs hand %.12f (err %.2g); E=%zu evaluation %s, recomputed mean/CI "
                    "err %.2g, JSON err %.2g",
                    f.ci95, hand_ci, fixture_err, r.episodes, r.to_text().c_str(), eval_err, json_err)};
}

const char* kSmallModel = "--set blocks=3 --set channels=8";

Outcome determinism_io() {
  const auto dir = scratch_dir() / "determinism";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string data = (dir / "blobs.fsds").string();
  std::vector<std::string> problems;
  auto run = [&](const std::string& args) {
    if (const int code = run_cli(args); code != 0) problems.push_back(fmt("exit %d: %s", code, args.c_str()));
  };
  run("synth --classes 30 --per-class 25 --size 16 --separation 4 --noise 0.2 --seed 5 --out " + data);
  for (const char* tag : {"a", "b"}) {
    const std::string out = (dir / tag).string();
    run(fmt("meta-train --from-scratch --dataset %s --seed 9 --epochs 2 --episodes-per-epoch 15 --n 5 "
            "--k 5 --m 5 --threads 1 %s --out %s.ckpt",
            data.c_str(), kSmallModel, out.c_str()));
    run(fmt("eval --dataset %s --checkpoint %s.ckpt --seed 9 --episodes 50 --n 5 --k 5 --m 5 --threads %d "
            "--out %s.json",
            data.c_str(), out.c_str(), tag[0] == 'a' ? 1 : 3, out.c_str()));
  }
  if (!problems.empty()) return {false, problems.front()};
  std::vector<std::string> checks;
  bool ok = true;
  auto same_bytes = [&](const std::string& what, const std::string& x, const std::string& y) {
    const bool eq = !x.empty() && x == y;
    ok = ok && eq;
    checks.push_back(fmt("%s %s", what.c_str(), eq ? "identical" : "DIFFER"));
  };
  same_bytes("metrics CSV", slurp(dir / "a.ckpt.metrics.csv"), slurp(dir / "b.ckpt.metrics.csv"));
  same_bytes("checkpoint", slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  same_bytes("eval JSON (1 vs 3 threads)", slurp(dir / "a.json"), slurp(dir / "b.json"));

  // Round trips: load, save again, compare bytes and values.
  const DatasetContainer loaded = load_container(data);
  const auto again = dir / "again.fsds";
  save_container(loaded, again);
  same_bytes("FSDS re-save", slurp(data), slurp(again));
  const DatasetContainer reloaded = load_container(again);
  bool values_equal = loaded.class_count() == reloaded.class_count();
  for (std::size_t c = 0; values_equal && c < loaded.class_count(); ++c)
    for (std::size_t i = 0; values_equal && i < loaded.instance_count(c); ++i) {
      const auto x = loaded.instance(c, i), y = reloaded.instance(c, i);
      values_equal = std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
    }
  ok = ok && values_equal;
  checks.push_back(std::string("FSDS values ") + (values_equal ? "bit-exact" : "DIFFER"));

  const Checkpoint ck = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(ck, dir / "again.ckpt");
  same_bytes("checkpoint re-save", slurp(dir / "a.ckpt"), slurp(dir / "again.ckpt"));
  const bool params_equal = same_parameters(ck.model, load_checkpoint(dir / "again.ckpt").model) && ck.train == load_checkpoint(dir / "again.ckpt").train;
  ok = ok && params_equal;
  checks.push_back(std::string("checkpoint parameters ") + (params_equal ? "bit-exact" : "DIFFER"));

  std::string detail;
  for (const auto& c : checks) detail += (detail.empty() ? "" : "; ") + c;
  return {ok, detail};
}

Outcome ablation_plumbing() {
  const auto t0 = Clock::now();
  const auto dir = scratch_dir() / "ablation";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string data = (dir / "blobs.fsds").string();
  std::vector<std::pair<std::string, std::string>> variants;
  for (int v = 1; v <= 5; ++v) variants.emplace_back(fmt("pooling model-%d", v), fmt("--pooling model-%d", v));
  variants.emplace_back("airn off", "--airn off");
  for (const char* losses : {"cls", "cls,intra", "cls,inter", "cls,intra,inter"})
    variants.emplace_back(fmt("losses %s", losses), fmt("--losses %s", losses));

  std::vector<std::string> failures;
  if (run_cli("synth --classes 30 --per-class 25 --size 16 --seed 2 --out " + data) != 0) {
    return {false, "synth failed"};
  }
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const std::string out = (dir / fmt("v%zu", i)).string();
    const std::string common = fmt("--dataset %s --seed 4 --n 5 --k 5 --m 5 %s %s", data.c_str(), kSmallModel,
                                   variants[i].second.c_str());
    int code = run_cli(fmt("meta-train --from-scratch %s --epochs 1 --episodes-per-epoch 5 --out %s.ckpt",
                           common.c_str(), out.c_str()));
    if (code == 0) {
      code = run_cli(fmt("eval %s --checkpoint %s.ckpt --episodes 20 --out %s.json", common.c_str(),
                         out.c_str(), out.c_str()));
    }
    const bool ok = code == 0 && std::filesystem::exists(out + ".json") &&
                    std::filesystem::exists(out + ".ckpt.metrics.csv");
    if (!ok) failures.push_back(fmt("%s (exit %d)", variants[i].first.c_str(), code));
  }
  std::string detail = fmt("%zu/%zu configurations trained and evaluated end-to-end", variants.size() - failures.size(),
                           variants.size());
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail + fmt("; %.1f s", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"baseline equivalence", baseline_equivalence},
      {"loss identities", loss_identities},
      {"separable-blob training", blob_training},
      {"outlier down-weighting", outlier_downweighting},
      {"protocol fidelity", protocol_fidelity},
      {"determinism and I/O", determinism_io},
      {"ablation plumbing", ablation_plumbing},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
