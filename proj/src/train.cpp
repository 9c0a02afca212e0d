#include "pulsemap/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pulsemap/error.hpp"
#include "pulsemap/rng.hpp"

namespace pulsemap {

void TrainConfig::validate() const {
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and at least 2");
  if (!(base_lr > 0.0) || !(finetune_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(lr_floor_fraction >= 0.0 && lr_floor_fraction <= 1.0))
    throw ConfigError("lr_floor_fraction must lie in [0, 1]");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (finetune_epochs < 0) throw ConfigError("finetune_epochs must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
}

Axis parse_axis(const std::string& s) {
  if (s == "valence") return Axis::Valence;
  if (s == "arousal") return Axis::Arousal;
  throw ConfigError("unknown axis '" + s + "' (expected valence|arousal)");
}

ClassScheme parse_scheme(const std::string& s) {
  if (s == "binary") return ClassScheme::Binary;
  if (s == "ternary") return ClassScheme::Ternary;
  throw ConfigError("unknown class scheme '" + s + "' (expected binary|ternary)");
}

const char* scheme_name(ClassScheme s) { return s == ClassScheme::Binary ? "binary" : "ternary"; }

int n_classes(ClassScheme s) { return s == ClassScheme::Binary ? 2 : 3; }

int class_of(double rating, ClassScheme scheme) {
  if (scheme == ClassScheme::Binary) return rating > 5.0 ? 1 : 0;
  if (rating <= 3.0) return 0;
  if (rating <= 6.0) return 1;
  return 2;
}

// ---------------------------------------------------------------------------

std::vector<MatchExample> make_pretrain_batch(std::size_t dataset_size, std::size_t batch_size,
                                              std::uint64_t seed) {
  if (batch_size < 2 || batch_size % 2 != 0) throw DataError("batch_size must be even and at least 2");
  if (dataset_size < batch_size)
    throw DataError("dataset has " + std::to_string(dataset_size) + " examples, batch needs " +
                    std::to_string(batch_size));
  Rng rng(derive_seed(seed, {0xba7c}));
  std::vector<std::size_t> order(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
  for (std::size_t i = 0; i < batch_size; ++i) std::swap(order[i], order[i + rng.below(dataset_size - i)]);

  std::vector<MatchExample> batch;
  const std::size_t half = batch_size / 2;
  for (std::size_t i = 0; i < batch_size; ++i) {
    MatchExample m;
    m.bio_source = order[i];
    if (i < half) {
      m.face_source = order[i];
      m.label = 1;
    } else {
      std::size_t j = rng.below(dataset_size - 1);
      if (j >= order[i]) ++j;
      m.face_source = j;
      m.label = 0;
    }
    batch.push_back(m);
  }
  return batch;
}

Batch build_pretrain_batch(const std::vector<PreparedExample>& data,
                           const std::vector<MatchExample>& matches, double mask_ratio,
                           std::uint64_t seed) {
  Batch batch;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const auto& m = matches[i];
    PretrainSample s;
    s.face = data.at(m.face_source).face;
    s.bio = data.at(m.bio_source).bio;
    s.label = m.label;
    s.face_plan = plan_mask(s.face.n_patches(), mask_ratio, derive_seed(seed, {i, 0}));
    s.bio_plan = plan_mask(s.bio.n_patches(), mask_ratio, derive_seed(seed, {i, 1}));
    batch.pretrain.push_back(std::move(s));
  }
  return batch;
}

// ---------------------------------------------------------------------------

std::vector<std::string> FoldPlan::test_subjects(int fold) const {
  std::vector<std::string> out;
  for (const auto& [s, f] : assignments)
    if (f == fold) out.push_back(s);
  return out;
}

std::vector<std::string> FoldPlan::train_subjects(int fold) const {
  std::vector<std::string> out;
  for (const auto& [s, f] : assignments)
    if (f != fold) out.push_back(s);
  return out;
}

FoldPlan kfold_split(const std::vector<std::string>& subject_ids, int k, std::uint64_t seed) {
  std::set<std::string> unique(subject_ids.begin(), subject_ids.end());
  if (k < 1) throw ConfigError("k must be at least 1");
  if (static_cast<std::size_t>(k) > unique.size())
    throw ConfigError("k=" + std::to_string(k) + " exceeds the " + std::to_string(unique.size()) +
                      " available subjects");
  std::vector<std::string> order(unique.begin(), unique.end());
  Rng rng(derive_seed(seed, {0xf01d}));
  rng.shuffle(order.begin(), order.end());
  FoldPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < order.size(); ++i) plan.assignments[order[i]] = int(i % std::size_t(k));
  return plan;
}

// ---------------------------------------------------------------------------

std::int64_t Metrics::total() const {
  std::int64_t t = 0;
  for (const auto& row : confusion)
    for (auto v : row) t += v;
  return t;
}

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels, int n_classes) {
  if (predictions.size() != labels.size()) throw DataError("prediction and label counts differ");
  if (labels.empty()) throw DataError("cannot score an empty set");
  Metrics m;
  m.confusion.assign(std::size_t(n_classes), std::vector<std::int64_t>(std::size_t(n_classes), 0));
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes || predictions[i] < 0 || predictions[i] >= n_classes)
      throw DataError("class index out of range");
    m.confusion[std::size_t(labels[i])][std::size_t(predictions[i])] += 1;
    correct += labels[i] == predictions[i];
  }
  m.accuracy = double(correct) / double(labels.size());
  double f1_sum = 0.0;
  int counted = 0;
  for (int c = 0; c < n_classes; ++c) {
    const auto cc = std::size_t(c);
    std::int64_t tp = m.confusion[cc][cc], fp = 0, fn = 0;
    for (int o = 0; o < n_classes; ++o) {
      if (o == c) continue;
      fp += m.confusion[std::size_t(o)][cc];
      fn += m.confusion[cc][std::size_t(o)];
    }
    const std::int64_t denom = 2 * tp + fp + fn;
    if (denom == 0) continue;
    f1_sum += 2.0 * double(tp) / double(denom);
    ++counted;
  }
  m.f1 = counted ? f1_sum / counted : 0.0;
  return m;
}

std::vector<int> predict(const ParamStore& params, const TransformerConfig& config,
                         const std::vector<PreparedExample>& examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const RowVector logits =
        classifier_forward(encode_cls(ex.face, ex.bio, params, config), params, config.n_classes);
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    out.push_back(int(best));
  }
  return out;
}

Metrics evaluate(const ParamStore& params, const TransformerConfig& config,
                 const std::vector<PreparedExample>& examples, Axis axis, ClassScheme scheme) {
  if (examples.empty()) throw DataError("evaluation set is empty");
  std::vector<int> labels;
  for (const auto& ex : examples) labels.push_back(ex.label(axis, scheme));
  return compute_metrics(predict(params, config, examples), labels, config.n_classes);
}

double matching_accuracy(const ParamStore& params, const TransformerConfig& config, const Batch& batch) {
  if (batch.pretrain.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : batch.pretrain) {
    const double p = matching_probability(encode_cls(s.face, s.bio, params, config), params);
    correct += (p > 0.5) == (s.label == 1);
  }
  return double(correct) / double(batch.pretrain.size());
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_loss_trace(const std::filesystem::path& path, const std::vector<LossRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "step,l_m,l_c,total,lr\n";
  for (const auto& r : rows)
    out << r.step << ',' << fmt17(r.l_m) << ',' << fmt17(r.l_c) << ',' << fmt17(r.total) << ','
        << fmt17(r.lr) << '\n';
}

std::vector<LossRow> read_loss_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,l_m,l_c,total,lr") throw ParseError("unexpected loss trace header");
  std::vector<LossRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRow r;
    char c1, c2, c3, c4;
    std::istringstream ss(line);
    if (!(ss >> r.step >> c1 >> r.l_m >> c2 >> r.l_c >> c3 >> r.total >> c4 >> r.lr))
      throw ParseError("malformed loss trace row: " + line);
    rows.push_back(r);
  }
  return rows;
}

PretrainResult pretrain_loop(const std::vector<PreparedExample>& data, const TransformerConfig& model,
                             const TrainConfig& train, const PretrainOptions& options) {
  model.validate();
  train.validate();
  PretrainResult res;
  std::int64_t start = 0;
  if (options.resume) {
    validate_manifest(options.resume->params, model);
    if (!options.resume->optimizer) throw ConfigError("resume checkpoint has no optimizer state");
    res.params = options.resume->params;
    res.optimizer = *options.resume->optimizer;
    start = options.resume->step;
  } else {
    res.params = init_params(model, derive_seed(train.seed, {0x1417}));
    round_to_f32(res.params);
    res.optimizer = AdamState::zeros_like(res.params);
  }
  const auto bs = static_cast<std::size_t>(train.batch_size);
  const AdamConfig adam = train.adam();

  for (std::int64_t step = start + 1; step <= train.total_steps; ++step) {
    const std::uint64_t step_seed = derive_seed(train.seed, {0x57e9, std::uint64_t(step)});
    const auto matches = make_pretrain_batch(data.size(), bs, step_seed);
    const Batch batch = build_pretrain_batch(data, matches, model.mask_ratio, step_seed);
    GradientResult g;
    try {
      g = compute_gradients(LossKind::Pretrain, batch, res.params, model);
    } catch (const NumericsError&) {
      if (options.checkpoint_dir)
        save_checkpoint(*options.checkpoint_dir, res.params, &res.optimizer, step - 1);
      throw;
    }
    const double lr = lr_schedule(step - 1, train.total_steps, train.base_lr, train.lr_floor_fraction);
    adam_update(res.params, g.grads, res.optimizer, lr, adam);
    round_to_f32(res.params);
    round_to_f32(res.optimizer.m);
    round_to_f32(res.optimizer.v);
    LossRow row{step, g.l_m, g.l_c, g.total, lr};
    res.trace.push_back(row);
    if (options.on_step) options.on_step(row);
    if (options.checkpoint_dir && train.checkpoint_every > 0 && step % train.checkpoint_every == 0)
      save_checkpoint(*options.checkpoint_dir / ("step_" + std::to_string(step)), res.params,
                      &res.optimizer, step);
  }
  if (options.checkpoint_dir)
    save_checkpoint(*options.checkpoint_dir, res.params, &res.optimizer,
                    std::max<std::int64_t>(start, train.total_steps));
  return res;
}

ParamStore finetune_fold(const std::vector<PreparedExample>& train_set, const ParamStore& pretrained,
                         const TransformerConfig& model, const TrainConfig& train, Axis axis,
                         ClassScheme scheme, std::uint64_t seed) {
  if (train_set.empty()) throw DataError("fine-tuning set is empty");
  if (model.n_classes != n_classes(scheme))
    throw ConfigError("n_classes=" + std::to_string(model.n_classes) + " does not match the " +
                      scheme_name(scheme) + " scheme");
  validate_manifest(pretrained, model);
  ParamStore params = pretrained;
  reinit_classifier(params, derive_seed(seed, {0xc1a5}), model.init);
  round_to_f32(params);
  AdamState opt = AdamState::zeros_like(params);
  const AdamConfig adam = train.adam();

  const auto bs = static_cast<std::size_t>(train.batch_size);
  const std::size_t per_epoch = (train_set.size() + bs - 1) / bs;
  const auto total = static_cast<std::int64_t>(per_epoch) * train.finetune_epochs;
  std::vector<std::size_t> order(train_set.size());
  std::int64_t step = 0;
  for (int epoch = 0; epoch < train.finetune_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, {0xe90c, std::uint64_t(epoch)}));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < order.size(); b += bs) {
      Batch batch;
      for (std::size_t i = b; i < std::min(order.size(), b + bs); ++i) {
        const auto& ex = train_set[order[i]];
        batch.finetune.push_back({ex.face, ex.bio, ex.label(axis, scheme)});
      }
      const auto g = compute_gradients(LossKind::Finetune, batch, params, model, train.freeze_encoder);
      const double lr = lr_schedule(step, total, train.finetune_lr, train.lr_floor_fraction);
      adam_update(params, g.grads, opt, lr, adam);
      round_to_f32(params);
      round_to_f32(opt.m);
      round_to_f32(opt.v);
      ++step;
    }
  }
  return params;
}

FinetuneReport finetune_loop(const std::vector<PreparedExample>& data, const ParamStore& pretrained,
                             const TransformerConfig& model, const TrainConfig& train, Axis axis,
                             ClassScheme scheme, const FoldPlan& folds) {
  model.validate();
  train.validate();
  validate_manifest(pretrained, model);
  FinetuneReport report;
  for (int fold = 0; fold < folds.k; ++fold) {
    std::vector<PreparedExample> train_set, test_set;
    for (const auto& ex : data) {
      auto it = folds.assignments.find(ex.subject_id);
      if (it == folds.assignments.end())
        throw DataError("subject '" + ex.subject_id + "' is missing from the fold plan");
      (it->second == fold ? test_set : train_set).push_back(ex);
    }
    if (test_set.empty()) throw DataError("fold " + std::to_string(fold) + " has no test examples");
    const ParamStore tuned = finetune_fold(train_set, pretrained, model, train, axis, scheme,
                                           derive_seed(train.seed, {0xf7, std::uint64_t(fold)}));
    report.per_fold.push_back(evaluate(tuned, model, test_set, axis, scheme));
  }
  const auto k = report.per_fold.size();
  const auto nc = std::size_t(model.n_classes);
  report.mean.confusion.assign(nc, std::vector<std::int64_t>(nc, 0));
  for (const auto& m : report.per_fold) {
    report.mean.accuracy += m.accuracy / double(k);
    report.mean.f1 += m.f1 / double(k);
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t j = 0; j < nc; ++j) report.mean.confusion[i][j] += m.confusion[i][j];
  }
  return report;
}

std::string metrics_report_json(const FinetuneReport& report) {
  using nlohmann::json;
  auto one = [](const Metrics& m) {
    return json{{"accuracy", m.accuracy}, {"f1", m.f1}, {"confusion", m.confusion}, {"n", m.total()}};
  };
  json j;
  j["per_fold"] = json::array();
  for (std::size_t i = 0; i < report.per_fold.size(); ++i) {
    json f = one(report.per_fold[i]);
    f["fold"] = i;
    j["per_fold"].push_back(f);
  }
  j["mean"] = one(report.mean);
  return j.dump(2) + "\n";
}

}  // namespace pulsemap
