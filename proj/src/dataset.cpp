#include "pulsemap/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "pulsemap/error.hpp"
#include "pulsemap/image_io.hpp"
#include "pulsemap/patch_embed.hpp"

namespace pulsemap {

namespace fs = std::filesystem;

namespace {

std::string numbered(const char* stem, std::size_t index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.%s", stem, index, ext);
  return buf;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_dataset(const fs::path& root, const std::vector<Example>& examples) {
  std::map<std::string, std::vector<const Example*>> by_subject;
  for (const auto& ex : examples) {
    if (ex.subject_id.empty() || ex.subject_id.find_first_of("/\\ ") != std::string::npos)
      throw DataError("subject id '" + ex.subject_id + "' cannot name a directory");
    by_subject[ex.subject_id].push_back(&ex);
  }
  fs::create_directories(root);
  for (const auto& [subject, list] : by_subject) {
    const fs::path dir = root / subject;
    fs::create_directories(dir);
    std::ofstream labels(dir / "labels.csv", std::ios::binary);
    if (!labels) throw DataError("cannot write " + (dir / "labels.csv").string());
    labels << "index,valence,arousal\n";
    for (std::size_t i = 0; i < list.size(); ++i) {
      const Example& ex = *list[i];
      write_ppm(dir / numbered("face", i, "ppm"), ex.face);
      Signal sig;
      sig.samples = ex.bio.samples;
      sig.sample_rate_hz = ex.bio.sample_rate_hz;
      sig.subject_id = subject;
      sig.modality = Modality::PPG;
      save_signal(dir / numbered("bio", i, "txt"), sig);
      labels << i << ',' << fmt(ex.valence) << ',' << fmt(ex.arousal) << '\n';
    }
  }
}

std::vector<Example> read_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
  std::vector<fs::path> subjects;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "labels.csv")) subjects.push_back(entry.path());
  std::sort(subjects.begin(), subjects.end());
  if (subjects.empty()) throw DataError("no subject directories with labels.csv under " + root.string());

  std::vector<Example> out;
  for (const auto& dir : subjects) {
    std::ifstream in(dir / "labels.csv");
    std::string line;
    if (!std::getline(in, line) || line.rfind("index,valence,arousal", 0) != 0)
      throw ParseError((dir / "labels.csv").string() + ": expected header 'index,valence,arousal'");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::size_t index;
      double valence, arousal;
      char c1, c2;
      if (!(ss >> index >> c1 >> valence >> c2 >> arousal) || c1 != ',' || c2 != ',')
        throw ParseError((dir / "labels.csv").string() + ":" + std::to_string(line_no) + ": malformed row");
      Example ex;
      ex.subject_id = dir.filename().string();
      ex.valence = valence;
      ex.arousal = arousal;
      ex.face = read_ppm(dir / numbered("face", index, "ppm"));
      const Signal sig = load_signal(dir / numbered("bio", index, "txt"), SignalFormat::HeaderedText);
      ex.bio.samples = sig.samples;
      ex.bio.sample_rate_hz = sig.sample_rate_hz;
      ex.bio.duration_s = sig.duration_s();
      ex.bio.source_index = out.size();
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<std::string> subject_ids(const std::vector<Example>& examples) {
  std::vector<std::string> ids;
  for (const auto& ex : examples) ids.push_back(ex.subject_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------

std::size_t preprocessing_threads() {
  if (const char* env = std::getenv("PULSEMAP_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::size_t failed_at = n;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

TimeFreqMap transform_segment(const Segment& segment, const PrepConfig& prep) {
  switch (prep.method) {
    case MapKind::Toeplitz: return toeplitz_map(segment);
    case MapKind::SPWVD:
      return spwvd_map(segment, SmoothingWindows::kaiser(prep.spwvd_window, prep.spwvd_beta),
                       prep.spwvd_bins);
    case MapKind::Scalogram: return cwt_scalogram(segment, prep.scalogram);
  }
  throw ConfigError("unknown transform method");
}

std::vector<PreparedExample> prepare_examples(const std::vector<Example>& examples,
                                              const TransformerConfig& model, const PrepConfig& prep) {
  model.validate();
  std::map<std::string, NormalizationParams> ranges;
  if (prep.personal_normalization) {
    std::map<std::string, std::vector<Segment>> by_subject;
    for (const auto& ex : examples) by_subject[ex.subject_id].push_back(ex.bio);
    for (const auto& [subject, segs] : by_subject) ranges[subject] = personal_range(segs, prep.alpha);
  }
  const auto size = static_cast<std::size_t>(model.image_size);
  const auto patch = static_cast<std::size_t>(model.patch_size);
  std::vector<PreparedExample> out(examples.size());
  parallel_for(examples.size(), preprocessing_threads(), [&](std::size_t i) {
    const Example& ex = examples[i];
    Segment seg = prep.personal_normalization ? normalize_personal(ex.bio, ranges.at(ex.subject_id)) : ex.bio;
    const ImageTensor bio_img = render_image(transform_segment(seg, prep), size);
    const ImageTensor face_img =
        ex.face.height == size && ex.face.width == size ? ex.face : resize_image(ex.face, size, size);
    PreparedExample& p = out[i];
    p.face = patchify_any(face_img, patch);
    p.bio = patchify_any(bio_img, patch);
    p.subject_id = ex.subject_id;
    p.valence = ex.valence;
    p.arousal = ex.arousal;
  });
  return out;
}

}  // namespace pulsemap
