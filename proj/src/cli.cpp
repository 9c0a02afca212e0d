#include "pulsemap/cli.hpp"

#include <algorithm>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "pulsemap/checkpoint.hpp"
#include "pulsemap/config.hpp"
#include "pulsemap/dataset.hpp"
#include "pulsemap/error.hpp"
#include "pulsemap/image_io.hpp"
#include "pulsemap/rng.hpp"
#include "pulsemap/synth.hpp"
#include "pulsemap/train.hpp"
#include "pulsemap/transform2d.hpp"

namespace pulsemap {

namespace fs = std::filesystem;

namespace {

struct SignalArgs {
  std::string method = "scalogram";
  std::string in;
  std::string out;
  double segment_s = 0.0;
  std::size_t segment_index = 0;
  bool no_normalize = false;
  double alpha = 1000.0;
};

void add_signal_options(CLI::App* cmd, SignalArgs& a) {
  cmd->add_option("--method", a.method, "toeplitz | spwvd | scalogram")->capture_default_str();
  cmd->add_option("--in", a.in, "signal file (headered text, or .csv with time,value)")->required();
  cmd->add_option("--out", a.out, "output image")->required();
  cmd->add_option("--segment-s", a.segment_s, "cut fixed windows of this length first (0 = whole signal)");
  cmd->add_option("--segment-index", a.segment_index, "which window to transform");
  cmd->add_flag("--no-normalize", a.no_normalize, "skip min/max scaling to [0, alpha]");
  cmd->add_option("--alpha", a.alpha, "normalization scale")->capture_default_str();
}

TimeFreqMap map_from_args(const SignalArgs& a) {
  const fs::path in(a.in);
  const auto format = in.extension() == ".csv" ? SignalFormat::TwoColumnCSV : SignalFormat::HeaderedText;
  const Signal sig = load_signal(in, format);
  Segment seg;
  if (a.segment_s > 0.0) {
    const auto segs = segment_fixed(sig, a.segment_s);
    if (a.segment_index >= segs.size())
      throw DataError("signal yields " + std::to_string(segs.size()) + " windows, index " +
                      std::to_string(a.segment_index) + " requested");
    seg = segs[a.segment_index];
  } else {
    seg.samples = sig.samples;
    seg.sample_rate_hz = sig.sample_rate_hz;
    seg.duration_s = sig.duration_s();
  }
  PrepConfig prep;
  prep.method = parse_map_kind(a.method);
  if (!a.no_normalize) seg = normalize_personal(seg, personal_range({seg}, a.alpha));
  return transform_segment(seg, prep);
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::optional<std::int64_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<int> epochs;
  std::optional<int> folds;
  std::optional<std::string> method;
  std::optional<std::string> scheme;
};

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--config", a.config, "JSON run config (flags override it)");
  cmd->add_option("--data", a.data, "dataset directory")->required();
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--batch-size", a.batch_size, "batch size");
  cmd->add_option("--method", a.method, "biosensor transform: toeplitz | spwvd | scalogram");
  cmd->add_option("--scheme", a.scheme, "binary | ternary");
}

RunConfig resolve_config(const TrainArgs& a, const std::optional<fs::path>& fallback) {
  RunConfig c;
  if (!a.config.empty())
    c = load_config(a.config);
  else if (fallback && fs::exists(*fallback))
    c = load_config(*fallback);
  if (a.steps) c.train.total_steps = *a.steps;
  if (a.seed) c.train.seed = *a.seed;
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.lr) c.train.base_lr = c.train.finetune_lr = *a.lr;
  if (a.epochs) c.train.finetune_epochs = *a.epochs;
  if (a.folds) c.folds = *a.folds;
  if (a.method) c.prep.method = parse_map_kind(*a.method);
  if (a.scheme) {
    c.scheme = parse_scheme(*a.scheme);
    c.model.n_classes = n_classes(c.scheme);
  }
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::vector<PreparedExample> load_prepared(const RunConfig& c, const std::string& dir) {
  return prepare_examples(read_dataset(dir), c.model, c.prep);
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"pulsemap: biosensor-to-image transforms and a paired biosensor/vision transformer"};
  app.name("pulsemap");
  app.require_subcommand(1);

  SignalArgs transform_args;
  auto* transform = app.add_subcommand("transform", "signal -> normalized 2D map as binary PGM");
  add_signal_options(transform, transform_args);

  SignalArgs render_args;
  std::size_t render_size = kImageSize;
  auto* render = app.add_subcommand("render", "signal -> resized model input image (PPM, or PGM)");
  add_signal_options(render, render_args);
  render->add_option("--size", render_size, "output side length")->capture_default_str();

  SynthSpec synth_spec;
  std::string synth_out, synth_scheme = "binary";
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "write a synthetic paired dataset");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--subjects", synth_spec.n_subjects)->capture_default_str();
  synth->add_option("--per-subject", synth_spec.per_subject)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--scheme", synth_scheme, "binary | ternary")->capture_default_str();
  synth->add_option("--image-size", synth_spec.image_size)->capture_default_str();
  synth->add_option("--sample-rate", synth_spec.sample_rate_hz)->capture_default_str();
  synth->add_option("--duration", synth_spec.duration_s, "biosensor segment length, s")->capture_default_str();
  synth->add_flag("--shuffle-labels", synth_spec.shuffle_labels, "permute ratings (chance-level control)");

  TrainArgs pre_args;
  std::string pre_out, pre_resume, pre_trace;
  auto* pretrain = app.add_subcommand("pretrain", "masked-autoencoding + matching pretraining");
  add_train_options(pretrain, pre_args);
  pretrain->add_option("--out", pre_out, "checkpoint directory")->required();
  pretrain->add_option("--steps", pre_args.steps, "total optimizer steps");
  pretrain->add_option("--lr", pre_args.lr, "base learning rate");
  pretrain->add_option("--resume", pre_resume, "continue from this checkpoint directory");
  pretrain->add_option("--trace", pre_trace, "loss trace CSV (default <out>/loss_trace.csv)");

  TrainArgs ft_args;
  std::string ft_ckpt, ft_out, ft_axis = "valence", ft_save;
  auto* finetune = app.add_subcommand("finetune", "subject-independent cross-validated fine-tuning");
  add_train_options(finetune, ft_args);
  finetune->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint directory")->required();
  finetune->add_option("--axis", ft_axis, "valence | arousal")->capture_default_str();
  finetune->add_option("--out", ft_out, "metrics JSON path (default: stdout)");
  finetune->add_option("--epochs", ft_args.epochs, "fine-tuning epochs per fold");
  finetune->add_option("--folds", ft_args.folds, "number of folds");
  finetune->add_option("--lr", ft_args.lr, "fine-tuning learning rate");
  finetune->add_option("--save-model", ft_save, "also train on every subject and save here");

  TrainArgs ev_args;
  std::string ev_ckpt, ev_out, ev_axis = "valence";
  auto* eval = app.add_subcommand("eval", "score a fine-tuned checkpoint on a dataset");
  add_train_options(eval, ev_args);
  eval->add_option("--checkpoint", ev_ckpt, "fine-tuned checkpoint directory")->required();
  eval->add_option("--axis", ev_axis, "valence | arousal")->capture_default_str();
  eval->add_option("--out", ev_out, "metrics JSON path (default: stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (transform->parsed()) {
      const TimeFreqMap map = map_from_args(transform_args);
      write_pgm(transform_args.out, normalize_minmax(map.values));
    } else if (render->parsed()) {
      const ImageTensor img = render_image(map_from_args(render_args), render_size);
      if (fs::path(render_args.out).extension() == ".pgm")
        write_pgm(render_args.out, image_as_map(img).values);
      else
        write_ppm(render_args.out, img);
    } else if (synth->parsed()) {
      synth_spec.scheme = parse_scheme(synth_scheme);
      write_dataset(synth_out, synth_generate(synth_spec, synth_seed));
    } else if (pretrain->parsed()) {
      std::optional<fs::path> fallback;
      if (!pre_resume.empty()) fallback = fs::path(pre_resume) / "config.json";
      const RunConfig c = resolve_config(pre_args, fallback);
      const auto data = load_prepared(c, pre_args.data);
      std::optional<Checkpoint> resume;
      std::vector<LossRow> earlier;
      PretrainOptions opts;
      opts.checkpoint_dir = fs::path(pre_out);
      if (!pre_resume.empty()) {
        resume = load_checkpoint(pre_resume, c.model);
        opts.resume = &*resume;
        const fs::path old_trace = fs::path(pre_resume) / "loss_trace.csv";
        if (fs::exists(old_trace))
          for (const auto& r : read_loss_trace(old_trace))
            if (r.step <= resume->step) earlier.push_back(r);
      }
      write_text(fs::path(pre_out) / "config.json", config_to_json(c));
      auto result = pretrain_loop(data, c.model, c.train, opts);
      earlier.insert(earlier.end(), result.trace.begin(), result.trace.end());
      write_loss_trace(pre_trace.empty() ? fs::path(pre_out) / "loss_trace.csv" : fs::path(pre_trace), earlier);
      if (!result.trace.empty())
        out << "step " << result.trace.back().step << " total " << result.trace.back().total << "\n";
    } else if (finetune->parsed()) {
      const RunConfig c = resolve_config(ft_args, fs::path(ft_ckpt) / "config.json");
      const Axis axis = parse_axis(ft_axis);
      const Checkpoint ckpt = load_checkpoint(ft_ckpt, c.model);
      const auto data = load_prepared(c, ft_args.data);
      std::vector<std::string> subjects;
      for (const auto& ex : data) subjects.push_back(ex.subject_id);
      const FoldPlan folds = kfold_split(subjects, c.folds, c.train.seed);
      const auto report = finetune_loop(data, ckpt.params, c.model, c.train, axis, c.scheme, folds);
      const std::string json = metrics_report_json(report);
      if (ft_out.empty())
        out << json;
      else
        write_text(ft_out, json);
      if (!ft_save.empty()) {
        const ParamStore tuned = finetune_fold(data, ckpt.params, c.model, c.train, axis, c.scheme,
                                               derive_seed(c.train.seed, {0xa11}));
        save_checkpoint(ft_save, tuned);
        write_text(fs::path(ft_save) / "config.json", config_to_json(c));
      }
    } else if (eval->parsed()) {
      const RunConfig c = resolve_config(ev_args, fs::path(ev_ckpt) / "config.json");
      const Checkpoint ckpt = load_checkpoint(ev_ckpt, c.model);
      const auto data = load_prepared(c, ev_args.data);
      FinetuneReport report;
      report.per_fold.push_back(evaluate(ckpt.params, c.model, data, parse_axis(ev_axis), c.scheme));
      report.mean = report.per_fold.front();
      const std::string json = metrics_report_json(report);
      if (ev_out.empty())
        out << json;
      else
        write_text(ev_out, json);
    }
  } catch (const Error& e) {
    err << "error (" << e.kind_name() << "): " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error (DataError): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace pulsemap
