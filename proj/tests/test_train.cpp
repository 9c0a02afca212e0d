#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "pulsemap/checkpoint.hpp"
#include "pulsemap/config.hpp"
#include "pulsemap/error.hpp"
#include "pulsemap/optim.hpp"
#include "pulsemap/rng.hpp"
#include "pulsemap/synth.hpp"
#include "pulsemap/train.hpp"

using namespace pulsemap;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pulsemap_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.entries()[i].name != b.entries()[i].name || a.entries()[i].value != b.entries()[i].value) return false;
  return true;
}

std::vector<PreparedExample> small_dataset(const TransformerConfig& model, int subjects, int per_subject) {
  SynthSpec spec;
  spec.n_subjects = subjects;
  spec.per_subject = per_subject;
  spec.image_size = std::size_t(model.image_size);
  return prepare_examples(synth_generate(spec, 3), model, PrepConfig{});
}

}  // namespace

TEST_CASE("cosine learning-rate schedule") {
  CHECK(lr_schedule(0, 200, 1e-4) == 1e-4);
  CHECK(std::abs(lr_schedule(200, 200, 1e-4)) < 1e-20);
  CHECK(lr_schedule(100, 200, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(lr_schedule(200, 200, 1e-4, 0.001) == doctest::Approx(1e-7));
  double prev = lr_schedule(0, 137, 0.3);
  for (int s = 1; s <= 137; ++s) {
    const double lr = lr_schedule(s, 137, 0.3);
    CHECK(lr <= prev);
    CHECK(lr >= 0.0);
    CHECK(lr <= 0.3);
    prev = lr;
  }
}

TEST_CASE("Adam") {
  SUBCASE("first step on a unit gradient moves by the learning rate") {
    ParamStore p;
    p.add("w", 1, 1, ParamRole::Bias)(0, 0) = 0.5;
    ParamStore g = p.zeros_like();
    g.get("w")(0, 0) = 1.0;
    AdamState st = AdamState::zeros_like(p);
    adam_update(p, g, st, 0.1, {0.9, 0.999, 1e-8, 0.0});
    CHECK(p.get("w")(0, 0) - 0.5 == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(st.step == 1);
  }
  SUBCASE("zero gradient: only decay moves weights, biases stay") {
    ParamStore p;
    p.add("w", 2, 2, ParamRole::Weight).setConstant(2.0);
    p.add("b", 1, 2, ParamRole::Bias).setConstant(3.0);
    p.add("n", 1, 2, ParamRole::Norm).setConstant(1.0);
    p.add("e", 1, 2, ParamRole::Embedding).setConstant(-1.0);
    AdamState st = AdamState::zeros_like(p);
    adam_update(p, p.zeros_like(), st, 0.01, {0.9, 0.999, 1e-8, 0.001});
    CHECK(p.get("w")(0, 0) == doctest::Approx(2.0 * (1.0 - 0.01 * 0.001)));
    CHECK(p.get("e")(0, 1) == doctest::Approx(-1.0 * (1.0 - 0.01 * 0.001)));
    CHECK((p.get("b").array() == 3.0).all());
    CHECK((p.get("n").array() == 1.0).all());
  }
  SUBCASE("zero gradient and zero decay is the identity") {
    TransformerConfig c = TransformerConfig::desk();
    ParamStore p = init_params(c, 1);
    const ParamStore before = p;
    AdamState st = AdamState::zeros_like(p);
    for (int i = 0; i < 3; ++i) adam_update(p, p.zeros_like(), st, 0.1, {0.9, 0.999, 1e-8, 0.0});
    CHECK(same_params(p, before));
  }
  SUBCASE("a non-finite gradient is refused") {
    ParamStore p;
    p.add("w", 1, 1, ParamRole::Weight);
    ParamStore g = p.zeros_like();
    g.get("w")(0, 0) = std::numeric_limits<double>::infinity();
    AdamState st = AdamState::zeros_like(p);
    CHECK_THROWS_AS(adam_update(p, g, st, 0.1, {}), NumericsError);
  }
}

TEST_CASE("contrastive batch construction") {
  SUBCASE("half aligned, half mismatched, for every even size") {
    for (std::size_t bs = 2; bs <= 16; bs += 2) {
      const auto batch = make_pretrain_batch(20, bs, bs * 7);
      REQUIRE(batch.size() == bs);
      std::size_t pos = 0;
      std::set<std::size_t> sources;
      for (const auto& m : batch) {
        pos += m.label == 1;
        sources.insert(m.bio_source);
        if (m.label == 1) CHECK(m.face_source == m.bio_source);
        if (m.label == 0) CHECK(m.face_source != m.bio_source);
      }
      CHECK(pos == bs / 2);
      CHECK(sources.size() == bs);
    }
  }
  SUBCASE("same seed, same batch") {
    const auto a = make_pretrain_batch(10, 4, 99), b = make_pretrain_batch(10, 4, 99);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a[i].face_source == b[i].face_source);
      CHECK(a[i].bio_source == b[i].bio_source);
      CHECK(a[i].label == b[i].label);
    }
  }
  SUBCASE("too few examples or an odd size") {
    CHECK_THROWS_AS(make_pretrain_batch(3, 4, 0), DataError);
    CHECK_THROWS_AS(make_pretrain_batch(10, 3, 0), DataError);
  }
}

TEST_CASE("subject folds") {
  auto ids = [](int n) {
    std::vector<std::string> v;
    for (int i = 0; i < n; ++i) v.push_back("subj" + std::to_string(i));
    return v;
  };
  SUBCASE("27 subjects in 10 folds") {
    const auto plan = kfold_split(ids(27), 10, 0);
    std::vector<std::size_t> sizes;
    for (int f = 0; f < 10; ++f) sizes.push_back(plan.test_subjects(f).size());
    CHECK(std::count(sizes.begin(), sizes.end(), 3u) == 7);
    CHECK(std::count(sizes.begin(), sizes.end(), 2u) == 3);
  }
  SUBCASE("one subject per fold when k equals the count") {
    const auto plan = kfold_split(ids(10), 10, 4);
    for (int f = 0; f < 10; ++f) CHECK(plan.test_subjects(f).size() == 1);
  }
  SUBCASE("partition for every (n, k)") {
    for (int n = 1; n <= 30; ++n)
      for (int k = 1; k <= n; ++k) {
        const auto all = ids(n);
        const auto plan = kfold_split(all, k, std::uint64_t(n * 31 + k));
        std::multiset<std::string> seen;
        std::size_t lo = std::size_t(n), hi = 0;
        for (int f = 0; f < k; ++f) {
          const auto test = plan.test_subjects(f);
          const auto train = plan.train_subjects(f);
          lo = std::min(lo, test.size());
          hi = std::max(hi, test.size());
          seen.insert(test.begin(), test.end());
          for (const auto& t : test) CHECK(std::find(train.begin(), train.end(), t) == train.end());
          CHECK(test.size() + train.size() == std::size_t(n));
        }
        CHECK(seen.size() == std::size_t(n));
        CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == std::size_t(n));
        CHECK(hi - lo <= 1);
      }
  }
  SUBCASE("deterministic per seed") {
    CHECK(kfold_split(ids(12), 4, 5).assignments == kfold_split(ids(12), 4, 5).assignments);
  }
  SUBCASE("more folds than subjects") {
    CHECK_THROWS_AS(kfold_split(ids(3), 4, 0), ConfigError);
  }
}

TEST_CASE("classification metrics") {
  SUBCASE("all correct") {
    const auto m = compute_metrics({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
    CHECK(m.accuracy == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.confusion[1][1] == 2);
    CHECK(m.confusion[0][1] == 0);
  }
  SUBCASE("constant class-0 predictions on balanced binary labels") {
    const auto m = compute_metrics({0, 0, 0, 0}, {0, 1, 0, 1}, 2);
    CHECK(m.accuracy == 0.5);
    CHECK(m.f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("rows sum to class counts and accuracy is trace over total") {
    Rng rng(3);
    std::vector<int> pred, lab;
    for (int i = 0; i < 200; ++i) {
      pred.push_back(int(rng.below(3)));
      lab.push_back(int(rng.below(3)));
    }
    const auto m = compute_metrics(pred, lab, 3);
    std::int64_t trace = 0;
    for (int c = 0; c < 3; ++c) {
      std::int64_t row = 0;
      for (int p = 0; p < 3; ++p) row += m.confusion[std::size_t(c)][std::size_t(p)];
      CHECK(row == std::count(lab.begin(), lab.end(), c));
      trace += m.confusion[std::size_t(c)][std::size_t(c)];
    }
    CHECK(m.total() == 200);
    CHECK(m.accuracy == double(trace) / 200.0);
  }
}

TEST_CASE("rating classes") {
  CHECK(class_of(5.0, ClassScheme::Binary) == 0);
  CHECK(class_of(5.5, ClassScheme::Binary) == 1);
  CHECK(class_of(3.0, ClassScheme::Ternary) == 0);
  CHECK(class_of(4.0, ClassScheme::Ternary) == 1);
  CHECK(class_of(6.0, ClassScheme::Ternary) == 1);
  CHECK(class_of(7.0, ClassScheme::Ternary) == 2);
}

TEST_CASE("loss trace CSV round-trip") {
  const auto dir = scratch("trace");
  const std::vector<LossRow> rows = {{1, 0.1, 0.7, 0.74, 1e-4}, {2, 1.0 / 3.0, 0.69, 0.823, 9.9e-5}};
  write_loss_trace(dir / "t.csv", rows);
  std::ifstream in(dir / "t.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,l_m,l_c,total,lr");
  const auto back = read_loss_trace(dir / "t.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].l_m == rows[1].l_m);
  CHECK(back[1].lr == rows[1].lr);
}

TEST_CASE("checkpoints") {
  const TransformerConfig c = TransformerConfig::desk();
  const auto dir = scratch("ckpt");
  ParamStore p = init_params(c, 8);
  round_to_f32(p);
  AdamState st = AdamState::zeros_like(p);
  adam_update(p, init_params(c, 9), st, 1e-3, {});
  round_to_f32(p);
  round_to_f32(st.m);
  round_to_f32(st.v);
  save_checkpoint(dir, p, &st, 1);

  SUBCASE("round-trip is exact at float precision") {
    const auto ck = load_checkpoint(dir, c);
    CHECK(same_params(ck.params, p));
    REQUIRE(ck.optimizer.has_value());
    CHECK(same_params(ck.optimizer->m, st.m));
    CHECK(same_params(ck.optimizer->v, st.v));
    CHECK(ck.step == 1);
  }
  SUBCASE("a checkpoint for another shape is rejected") {
    TransformerConfig other = c;
    other.d_model = 32;
    CHECK_THROWS_AS(load_checkpoint(dir, other), ConfigError);
  }
}

TEST_CASE("pretraining loop") {
  const TransformerConfig model = TransformerConfig::desk();
  const auto data = small_dataset(model, 2, 4);
  TrainConfig train;
  train.total_steps = 6;
  train.base_lr = 1e-3;
  train.seed = 4;
  train.checkpoint_every = 3;
  const auto dir = scratch("pretrain");
  PretrainOptions opt;
  opt.checkpoint_dir = dir;
  const auto full = pretrain_loop(data, model, train, opt);

  SUBCASE("one trace row per step") {
    REQUIRE(full.trace.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(full.trace[i].step == std::int64_t(i + 1));
      CHECK(full.trace[i].total == doctest::Approx(0.4 * full.trace[i].l_m + full.trace[i].l_c));
    }
    CHECK(full.trace[0].lr == train.base_lr);
  }
  SUBCASE("a second run is bitwise identical") {
    const auto again = pretrain_loop(data, model, train);
    CHECK(same_params(again.params, full.params));
    for (std::size_t i = 0; i < 6; ++i) CHECK(again.trace[i].total == full.trace[i].total);
  }
  SUBCASE("resuming from step 3 reproduces steps 4 to 6 exactly") {
    const auto ck = load_checkpoint(dir / "step_3", model);
    CHECK(ck.step == 3);
    PretrainOptions resume;
    resume.resume = &ck;
    const auto rest = pretrain_loop(data, model, train, resume);
    REQUIRE(rest.trace.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(rest.trace[i].step == full.trace[i + 3].step);
      CHECK(rest.trace[i].total == full.trace[i + 3].total);
      CHECK(rest.trace[i].lr == full.trace[i + 3].lr);
    }
    CHECK(same_params(rest.params, full.params));
    const auto final_ck = load_checkpoint(dir, model);
    CHECK(same_params(final_ck.params, full.params));
  }
}

TEST_CASE("fine-tuning loop reports one entry per fold") {
  const TransformerConfig model = TransformerConfig::desk();
  const auto data = small_dataset(model, 3, 4);
  TrainConfig train;
  train.finetune_epochs = 1;
  std::vector<std::string> ids;
  for (const auto& e : data) ids.push_back(e.subject_id);
  const auto folds = kfold_split(ids, 3, 0);
  const auto report =
      finetune_loop(data, init_params(model, 1), model, train, Axis::Valence, ClassScheme::Binary, folds);
  CHECK(report.per_fold.size() == 3);
  std::int64_t total = 0;
  for (const auto& m : report.per_fold) total += m.total();
  CHECK(total == 12);
  CHECK(report.mean.total() == 12);
  const auto json = metrics_report_json(report);
  CHECK(json.find("\"per_fold\"") != std::string::npos);
  CHECK(json.find("\"confusion\"") != std::string::npos);

  TransformerConfig other = model;
  other.d_model = 32;
  CHECK_THROWS_AS(finetune_loop(data, init_params(model, 1), other, train, Axis::Valence, ClassScheme::Binary, folds),
                  ConfigError);
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.n_subjects = 2;
  spec.per_subject = 8;
  SUBCASE("fixed seed, identical dataset") {
    const auto a = synth_generate(spec, 7), b = synth_generate(spec, 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].face.values == b[i].face.values);
      CHECK(a[i].bio.samples == b[i].bio.samples);
      CHECK(a[i].valence == b[i].valence);
    }
  }
  SUBCASE("high arousal pulses faster") {
    CHECK(synth_pulse_rate(1.0) > synth_pulse_rate(0.0));
    const auto data = synth_generate(spec, 2);
    double hi = 0, lo = 0;
    int nh = 0, nl = 0;
    for (const auto& e : data) {
      Signal s;
      s.samples = e.bio.samples;
      s.sample_rate_hz = e.bio.sample_rate_hz;
      const double rate = double(detect_peaks(s, 0.3, default_prominence(s)).size()) / e.bio.duration_s;
      if (class_of(e.arousal, ClassScheme::Binary) == 1) {
        hi += rate;
        ++nh;
      } else {
        lo += rate;
        ++nl;
      }
    }
    CHECK(hi / nh > lo / nl);
  }
  SUBCASE("labels are balanced within each subject") {
    const auto data = synth_generate(spec, 5);
    for (int s = 0; s < 2; ++s) {
      int high_v = 0, high_a = 0;
      for (int e = 0; e < 8; ++e) {
        high_v += class_of(data[std::size_t(s * 8 + e)].valence, ClassScheme::Binary);
        high_a += class_of(data[std::size_t(s * 8 + e)].arousal, ClassScheme::Binary);
      }
      CHECK(high_v == 4);
      CHECK(high_a == 4);
    }
  }
  SUBCASE("write and read back") {
    const auto dir = scratch("dataset");
    const auto data = synth_generate(spec, 6);
    write_dataset(dir, data);
    const auto back = read_dataset(dir);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      CHECK(back[i].subject_id == data[i].subject_id);
      CHECK(back[i].valence == data[i].valence);
      CHECK(back[i].bio.samples == data[i].bio.samples);
      CHECK(back[i].face.height == data[i].face.height);
    }
  }
}

TEST_CASE("parallel preprocessing keeps input order") {
  const TransformerConfig model = TransformerConfig::desk();
  SynthSpec spec;
  spec.n_subjects = 2;
  spec.per_subject = 6;
  const auto raw = synth_generate(spec, 1);
  setenv("PULSEMAP_THREADS", "1", 1);
  const auto serial = prepare_examples(raw, model, PrepConfig{});
  setenv("PULSEMAP_THREADS", "4", 1);
  const auto parallel = prepare_examples(raw, model, PrepConfig{});
  unsetenv("PULSEMAP_THREADS");
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].bio.patches == parallel[i].bio.patches);
    CHECK(serial[i].face.patches == parallel[i].face.patches);
  }
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw DataError("boom"); }), DataError);
}

TEST_CASE("run configuration") {
  SUBCASE("empty object gives the published defaults") {
    const auto c = parse_config("{}");
    CHECK(c.model.lambda_m == 0.4);
    CHECK(c.model.lambda_c == 1.0);
    CHECK(c.model.mask_ratio == 0.75);
    CHECK(c.train.base_lr == 1e-4);
    CHECK(c.train.batch_size == 4);
    CHECK(c.train.weight_decay == 0.001);
    CHECK(c.model.d_model == 768);
    CHECK(c.model.n_heads_enc == 12);
  }
  SUBCASE("invalid values and unknown keys") {
    CHECK_THROWS_AS(parse_config(R"({"mask_ratio": 1.5})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"batch_size": 1})"), ConfigError);
    try {
      parse_config(R"({"learning_rate": 0.1})");
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(parse_config("{not json"), ParseError);
  }
  SUBCASE("ablation weight zero is accepted") {
    CHECK(parse_config(R"({"lambda_m": 0.0})").model.lambda_m == 0.0);
  }
  SUBCASE("preset and overrides") {
    const auto c = parse_config(R"({"preset": "desk", "d_model": 32, "scheme": "ternary"})");
    CHECK(c.model.d_model == 32);
    CHECK(c.model.enc_layers == 2);
    CHECK(c.model.n_classes == 3);
    CHECK(c.model.init == InitScheme::XavierUniform);
  }
  SUBCASE("dump and parse again") {
    const auto c = parse_config(R"({"preset": "desk", "base_lr": 0.002, "method": "spwvd"})");
    const auto back = parse_config(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
  }
}
