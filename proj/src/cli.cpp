#include "neurofuse/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "neurofuse/cnn/checkpoint.hpp"
#include "neurofuse/cnn/train.hpp"
#include "neurofuse/dataset.hpp"
#include "neurofuse/error.hpp"
#include "neurofuse/nifti.hpp"
#include "neurofuse/parallel.hpp"
#include "neurofuse/phantom.hpp"
#include "neurofuse/pipeline.hpp"
#include "neurofuse/random.hpp"
#include "neurofuse/suvr.hpp"

namespace neurofuse::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Bad flag values that CLI11 cannot see (exit 2, not a domain error).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LogLevel { Error, Warn, Info, Debug };

LogLevel parse_log_level(const std::string& s) {
  if (s == "error") return LogLevel::Error;
  if (s == "warn") return LogLevel::Warn;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  throw UsageError(fmt::format("unknown log level '{}'", s));
}

// Human log on stderr, mirrored in full to <out>/<command>.log.
class Log {
 public:
  Log(std::ostream& err, LogLevel level) : err_(err), level_(level) {}

  void open(const fs::path& path) {
    std::lock_guard lock(mu_);
    file_.open(path);
  }

  void error(const std::string& s) { write(LogLevel::Error, s); }
  void warn(const std::string& s) { write(LogLevel::Warn, s); }
  void info(const std::string& s) { write(LogLevel::Info, s); }
  void debug(const std::string& s) { write(LogLevel::Debug, s); }

 private:
  void write(LogLevel l, const std::string& s) {
    static constexpr const char* kTags[] = {"error", "warn", "info", "debug"};
    std::lock_guard lock(mu_);
    const std::string line = fmt::format("[{}] {}\n", kTags[static_cast<int>(l)], s);
    if (l <= level_) err_ << line;
    if (file_.is_open()) file_ << line;
  }

  std::ostream& err_;
  LogLevel level_;
  std::ofstream file_;
  std::mutex mu_;
};

struct Globals {
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string log_level = "info";
  bool seed_given = false;
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

Modality parse_modality(const std::string& s) {
  const std::string m = lower(s);
  if (m == "mri") return Modality::MRI;
  if (m == "pet") return Modality::PET;
  if (m == "fused" || m == "fusion") return Modality::Fused;
  throw UsageError(fmt::format("unknown modality '{}' (mri, pet or fused)", s));
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

fs::path prepare_out(const fs::path& out, Log& log, const std::string& command) {
  fs::create_directories(out);
  log.open(out / (command + ".log"));
  return out;
}

// Rewrites every volume path relative to `dir`, where the manifest will live.
Manifest rebase(Manifest m, const fs::path& dir) {
  const fs::path base = fs::absolute(dir).lexically_normal();
  auto fix = [&](fs::path& p) { p = fs::absolute(m.resolve(p)).lexically_normal().lexically_relative(base); };
  for (auto& s : m.subjects) {
    for (auto& x : s.mri) fix(x.path);
    for (auto& x : s.pet)
      for (auto& f : x.frames) fix(f);
  }
  m.base_dir = dir;
  return m;
}

Volume3D mean_volume(const Manifest& m, std::span<const fs::path> paths) {
  if (paths.empty()) throw Error(ErrorCode::InvalidArgument, "session without volumes");
  Volume3D mean = load_nifti(m.resolve(paths[0]));
  for (std::size_t i = 1; i < paths.size(); ++i) {
    const Volume3D f = load_nifti(m.resolve(paths[i]));
    if (!f.grid().matches(mean.grid())) {
      throw Error(ErrorCode::GridMismatch, fmt::format("{} is not on the grid of its session", paths[i].string()));
    }
    mean.data() += f.data();
  }
  if (paths.size() > 1) mean.data() /= static_cast<float>(paths.size());
  return mean;
}

struct SampleSet {
  std::vector<LabeledSample> samples;
  std::vector<cnn::Example<float>> examples;
  Dims dims{0, 0, 0};
};

// Labels sessions against their diagnoses and loads the volumes each network
// input needs: one MRI, the PET frame mean, or both for fused samples.
SampleSet load_samples(const Manifest& m, Modality modality, int window_days, int max_gap_days, Log& log) {
  SampleSet set;
  for (const auto& rec : m.subjects) {
    auto labeled = pair_sessions_with_diagnosis(rec, window_days);
    for (const auto& d : labeled.dropped) log.debug(d);
    if (modality == Modality::Fused) {
      auto fused = pair_modalities(rec, labeled.samples, max_gap_days);
      for (const auto& u : fused.unpaired) log.debug(u);
      for (auto& s : fused.samples) set.samples.push_back(std::move(s));
    } else {
      for (auto& s : labeled.samples)
        if (s.modality == modality) set.samples.push_back(std::move(s));
    }
  }
  for (const auto& s : set.samples) {
    cnn::Example<float> ex;
    ex.id = s.subject_id + "@" + s.date.iso();
    ex.label = s.label == Label::AD ? 1 : 0;
    std::vector<Volume3D> vols;
    if (s.modality == Modality::Fused) {
      vols.push_back(load_nifti(m.resolve(s.volumes.at(0))));
      vols.push_back(mean_volume(m, std::span<const fs::path>(s.volumes).subspan(1)));
    } else if (s.modality == Modality::MRI) {
      vols.push_back(load_nifti(m.resolve(s.volumes.at(0))));
    } else {
      vols.push_back(mean_volume(m, s.volumes));
    }
    for (const auto& v : vols) {
      if (set.examples.empty() && ex.inputs.empty()) set.dims = v.dims();
      if (v.dims() != set.dims) {
        throw Error(ErrorCode::GridMismatch, fmt::format("sample {} is {}x{}x{}, expected {}x{}x{}", ex.id, v.dims()[0],
                                                         v.dims()[1], v.dims()[2], set.dims[0], set.dims[1],
                                                         set.dims[2]));
      }
      ex.inputs.push_back(cnn::tensor_from_volume<float>(v));
    }
    set.examples.push_back(std::move(ex));
  }
  log.info(fmt::format("{} {} samples from {} subjects", set.samples.size(), lower(modality_name(modality)),
                       m.subjects.size()));
  return set;
}

json confusion_json(const Eigen::MatrixXi& c) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index k = 0; k < c.cols(); ++k) row.push_back(c(r, k));
    rows.push_back(row);
  }
  return rows;
}

json class_names() { return json::array({label_name(Label::Healthy), label_name(Label::AD)}); }

// ---------------------------------------------------------------------------

int run_phantom(const Globals& g, const std::optional<fs::path>& config, const fs::path& out, Log& log,
                std::ostream& stdout_) {
  PhantomConfig cfg = config ? PhantomConfig::from_json(read_text_file(*config)) : PhantomConfig{};
  if (g.seed_given) cfg.seed = g.seed;
  cfg.validate();
  prepare_out(out, log, "phantom");
  log.info(fmt::format("generating {} subjects at {}x{}x{}, seed {}", cfg.n_subjects, cfg.dims[0], cfg.dims[1],
                       cfg.dims[2], cfg.seed));
  const Cohort cohort = generate_cohort(cfg, g.jobs);
  write_cohort(cohort, out);
  int mri = 0, pet = 0, ad = 0;
  for (const auto& s : cohort.manifest.subjects) {
    mri += static_cast<int>(s.mri.size());
    pet += static_cast<int>(s.pet.size());
  }
  for (const auto& t : cohort.truth) ad += t.label == Label::AD;
  json r{{"subjects", cohort.truth.size()}, {"mri_scans", mri}, {"pet_scans", pet},
         {"healthy", static_cast<int>(cohort.truth.size()) - ad}, {"ad", ad}, {"seed", cfg.seed},
         {"manifest", (out / "manifest.json").string()}};
  write_json(out / "phantom.json", r);
  stdout_ << r.dump(2) << "\n";
  return 0;
}

int run_preprocess(const Globals& g, const fs::path& manifest_path, std::optional<fs::path> assets_dir,
                   const fs::path& out, const std::string& grid_name, Log& log, std::ostream& stdout_) {
  if (!assets_dir) {
    if (const char* env = std::getenv("NEUROFUSE_ASSETS"); env && *env) assets_dir = env;
  }
  if (!assets_dir) throw UsageError("--assets is required when NEUROFUSE_ASSETS is unset");
  GridPreset preset;
  try {
    preset = parse_grid_preset(grid_name);
  } catch (const Error&) {
    throw UsageError(fmt::format("unknown grid '{}' (full or test)", grid_name));
  }
  const Manifest m = load_manifest(manifest_path);
  m.validate();
  const PipelineAssets assets = PipelineAssets::load(*assets_dir).on_grid(standard_grid(preset));
  RegistrationOptions base;
  base.seed = g.seed;
  const PipelineOptions opts = PipelineOptions::from(base);
  prepare_out(out, log, "preprocess");

  const std::size_t n = m.subjects.size();
  std::vector<SubjectReport> reports(n);
  Manifest result;
  result.provenance = fmt::format("preprocessed to the {} standard grid from {}", grid_name, manifest_path.string());
  result.base_dir = out;
  result.subjects.resize(n);
  parallel_for(n, g.jobs, [&](std::size_t i) {
    const SubjectRecord& rec = m.subjects[i];
    log.info(fmt::format("{}: {} MRI, {} PET sessions", rec.id, rec.mri.size(), rec.pet.size()));
    const SubjectResult r = preprocess_subject(load_subject_volumes(rec, m), assets, opts);
    fs::create_directories(out / rec.id);
    SubjectRecord& o = result.subjects[i];
    o.id = rec.id;
    o.dx = rec.dx;
    std::size_t mi = 0, pi = 0;
    for (const auto& p : r.report.outputs) {
      const bool is_mri = p.modality == Modality::MRI;
      const fs::path rel = fs::path(rec.id) / fmt::format("{}_{}.nii.gz", is_mri ? "mri" : "pet", p.date.iso());
      save_nifti(is_mri ? r.mri_out.at(mi++) : r.pet_out.at(pi++), out / rel);
      if (is_mri) {
        o.mri.push_back({p.date, rel});
      } else {
        o.pet.push_back({p.date, {rel}});
      }
    }
    for (const auto& w : r.report.warnings) log.warn(fmt::format("{}: {}", rec.id, w));
    reports[i] = r.report;
  });
  write_file(out / "report.json", report_to_json(reports));
  save_manifest(result, out / "manifest.json");

  int mri = 0, pet = 0;
  json warnings = json::array();
  for (const auto& s : result.subjects) {
    mri += static_cast<int>(s.mri.size());
    pet += static_cast<int>(s.pet.size());
  }
  for (const auto& r : reports)
    for (const auto& w : r.warnings) warnings.push_back(r.subject_id + ": " + w);
  const Dims d = assets.grid().dims;
  json j{{"subjects", n},          {"mri_outputs", mri},
         {"pet_outputs", pet},     {"grid", {d[0], d[1], d[2]}},
         {"warnings", warnings},   {"manifest", (out / "manifest.json").string()}};
  write_json(out / "preprocess.json", j);
  stdout_ << j.dump(2) << "\n";
  return 0;
}

int run_split(const Globals& g, const fs::path& manifest_path, const fs::path& out, double test_fraction,
              int window_days, Log& log, std::ostream& stdout_) {
  const Manifest m = load_manifest(manifest_path);
  m.validate();
  prepare_out(out, log, "split");
  std::vector<LabeledSample> samples;
  json dropped = json::array();
  for (const auto& rec : m.subjects) {
    auto l = pair_sessions_with_diagnosis(rec, window_days);
    for (auto& d : l.dropped) {
      log.debug(d);
      dropped.push_back(d);
    }
    for (auto& s : l.samples) samples.push_back(std::move(s));
  }
  const PatientSplit split = split_by_patient(samples, test_fraction, g.seed);
  save_manifest(rebase(subset(m, split.train_subjects), out), out / "train.json");
  save_manifest(rebase(subset(m, split.test_subjects), out), out / "test.json");

  auto side = [](const std::vector<LabeledSample>& v, const std::set<std::string>& ids) {
    int ad = 0, mri = 0;
    for (const auto& s : v) {
      ad += s.label == Label::AD;
      mri += s.modality == Modality::MRI;
    }
    return json{{"subjects", json(std::vector<std::string>(ids.begin(), ids.end()))},
                {"samples", v.size()},
                {"mri_samples", mri},
                {"pet_samples", static_cast<int>(v.size()) - mri},
                {"healthy", static_cast<int>(v.size()) - ad},
                {"ad", ad}};
  };
  json j{{"seed", g.seed},
         {"test_fraction", test_fraction},
         {"window_days", window_days},
         {"train", side(split.train, split.train_subjects)},
         {"test", side(split.test, split.test_subjects)},
         {"dropped", dropped}};
  write_json(out / "split.json", j);
  log.info(fmt::format("train {} subjects / {} samples, test {} subjects / {} samples", split.train_subjects.size(),
                       split.train.size(), split.test_subjects.size(), split.test.size()));
  stdout_ << json{{"train_samples", split.train.size()}, {"test_samples", split.test.size()}}.dump(2) << "\n";
  return 0;
}

struct TrainFlags {
  fs::path manifest, out;
  std::string modality = "mri";
  cnn::TrainConfig cfg;
  int window_days = 60;
  int max_gap_days = 90;
};

int run_train(const Globals& g, TrainFlags f, Log& log, std::ostream& stdout_) {
  const Modality modality = parse_modality(f.modality);
  f.cfg.seed = g.seed;
  f.cfg.validate();
  const Manifest m = load_manifest(f.manifest);
  m.validate();
  prepare_out(f.out, log, "train");
  const SampleSet set = load_samples(m, modality, f.window_days, f.max_gap_days, log);
  if (set.examples.empty()) throw Error(ErrorCode::SingleClassDataset, "no labeled samples to train on");
  const cnn::NetworkSpec spec =
      modality == Modality::Fused ? cnn::build_fusion(set.dims) : cnn::build_single_modality(set.dims);
  cnn::Network<float> net(spec, derive_seed(g.seed, 0));
  log.info(fmt::format("{} network, {} parameters, {} epochs", cnn::architecture_name(spec.architecture),
                       net.parameter_count(), f.cfg.epochs));
  auto result = cnn::train(std::move(net), std::span<const cnn::Example<float>>(set.examples), f.cfg,
                           [&](const cnn::EpochStats& s) {
                             log.info(fmt::format("epoch {:3d}  loss {:.6f}  accuracy {:.4f}", s.epoch, s.loss,
                                                  s.accuracy));
                           });
  const std::string mod = lower(modality_name(modality));
  cnn::save_checkpoint(f.out / "model.ckpt", result.network, {g.seed, f.cfg.epochs, mod});
  const cnn::Evaluation fit = cnn::evaluate(result.network, std::span<const cnn::Example<float>>(set.examples));

  json epochs = json::array();
  for (const auto& s : result.history) epochs.push_back({{"epoch", s.epoch}, {"loss", s.loss}, {"accuracy", s.accuracy}});
  json h{{"modality", mod},
         {"architecture", cnn::architecture_name(spec.architecture)},
         {"seed", g.seed},
         {"config",
          {{"learning_rate", f.cfg.learning_rate},
           {"momentum", f.cfg.momentum},
           {"epochs", f.cfg.epochs},
           {"batch_size", f.cfg.batch_size}}},
         {"samples", set.examples.size()},
         {"history", epochs},
         {"confusion", {{"source", "train"}, {"classes", class_names()}, {"matrix", confusion_json(fit.confusion)}}},
         {"train_accuracy", fit.accuracy}};
  write_json(f.out / "history.json", h);
  json r{{"model", (f.out / "model.ckpt").string()},
         {"history", (f.out / "history.json").string()},
         {"final_loss", result.history.empty() ? json(nullptr) : json(result.history.back().loss)},
         {"train_accuracy", fit.accuracy}};
  write_json(f.out / "train.json", r);
  stdout_ << r.dump(2) << "\n";
  return 0;
}

int run_eval(const fs::path& model, const fs::path& manifest_path, const std::optional<fs::path>& out,
             int window_days, int max_gap_days, Log& log, std::ostream& stdout_) {
  const cnn::Checkpoint ck = cnn::load_checkpoint(model);
  Modality modality;
  try {
    modality = parse_modality(ck.info.modality);
  } catch (const UsageError& e) {
    throw Error(ErrorCode::ParseError, fmt::format("checkpoint: {}", e.what()));
  }
  const Manifest m = load_manifest(manifest_path);
  m.validate();
  if (out) prepare_out(*out, log, "eval");
  const SampleSet set = load_samples(m, modality, window_days, max_gap_days, log);
  const cnn::Evaluation e = cnn::evaluate(ck.network, std::span<const cnn::Example<float>>(set.examples));
  json preds = json::array();
  for (std::size_t i = 0; i < set.examples.size(); ++i) {
    preds.push_back({{"id", set.examples[i].id},
                     {"label", label_name(set.examples[i].label ? Label::AD : Label::Healthy)},
                     {"predicted", label_name(e.predictions[i] ? Label::AD : Label::Healthy)},
                     {"p_ad", e.probs[i][1]}});
  }
  json j{{"accuracy", e.accuracy},
         {"samples", set.examples.size()},
         {"modality", ck.info.modality},
         {"confusion", {{"source", "eval"}, {"classes", class_names()}, {"matrix", confusion_json(e.confusion)}}},
         {"predictions", preds}};
  if (out) write_json(*out / "eval.json", j);
  log.info(fmt::format("accuracy {:.4f} on {} samples", e.accuracy, set.examples.size()));
  stdout_ << j.dump(2) << "\n";
  return 0;
}

int run_suvr(const fs::path& manifest_path, const fs::path& regions_path, const fs::path& out, double cutoff,
             int window_days, Log& log, std::ostream& stdout_) {
  if (!(cutoff > 0.0)) throw UsageError("--cutoff must be positive");
  const Manifest m = load_manifest(manifest_path);
  m.validate();
  const auto regions = load_regions(regions_path);
  prepare_out(out, log, "suvr");
  SuvrReport report;
  report.cutoff = cutoff;
  json scans = json::array();
  int positive = 0, healthy_positive = 0, ad_negative = 0;
  for (const auto& rec : m.subjects) {
    const auto labeled = pair_sessions_with_diagnosis(rec, window_days);
    for (const auto& session : rec.pet) {
      const double v = compute_suvr(mean_volume(m, session.frames), regions);
      report.add(rec.id, session.date, v);
      const bool pos = classify_amyloid(v, cutoff);
      positive += pos;
      json label = nullptr;
      for (const auto& s : labeled.samples) {
        if (s.modality != Modality::PET || s.date != session.date) continue;
        label = label_name(s.label);
        healthy_positive += s.label == Label::Healthy && pos;
        ad_negative += s.label == Label::AD && !pos;
      }
      scans.push_back({{"subject", rec.id}, {"date", session.date.iso()}, {"suvr", v}, {"positive", pos},
                       {"label", label}});
    }
  }
  write_file(out / "suvr.csv", report.to_csv());
  json j{{"cutoff", cutoff},
         {"scans", scans},
         {"positive", positive},
         {"negative", static_cast<int>(report.scans.size()) - positive},
         {"healthy_positive", healthy_positive},
         {"ad_negative", ad_negative}};
  write_json(out / "suvr.json", j);
  log.info(fmt::format("{} scans, {} amyloid positive", report.scans.size(), positive));
  stdout_ << json{{"scans", report.scans.size()}, {"positive", positive}}.dump(2) << "\n";
  return 0;
}

int run_report(const fs::path& history_path, const std::optional<fs::path>& eval_path,
               const std::optional<fs::path>& out, Log& log, std::ostream& stdout_) {
  const json h = read_json(history_path);
  json conf;
  try {
    conf = eval_path ? read_json(*eval_path).at("confusion") : h.at("confusion");
    std::string text = fmt::format("{:>5}  {:>10}  {:>8}\n", "epoch", "loss", "accuracy");
    json epochs = json::array();
    for (const auto& e : h.at("history")) {
      text += fmt::format("{:>5}  {:>10.6f}  {:>8.4f}\n", e.at("epoch").get<int>(), e.at("loss").get<double>(),
                          e.at("accuracy").get<double>());
      epochs.push_back(e);
    }
    const auto& classes = conf.at("classes");
    const auto& mat = conf.at("matrix");
    std::size_t width = 9;
    for (const auto& c : classes) width = std::max(width, c.get<std::string>().size() + 2);
    text += fmt::format("\nconfusion ({}; rows true, columns predicted)\n{:<{}}", conf.value("source", "?"), "",
                        width);
    for (const auto& c : classes) text += fmt::format("{:>{}}", c.get<std::string>(), width);
    text += "\n";
    long total = 0, correct = 0;
    for (std::size_t r = 0; r < mat.size(); ++r) {
      text += fmt::format("{:<{}}", classes.at(r).get<std::string>(), width);
      for (std::size_t c = 0; c < mat.at(r).size(); ++c) {
        const long v = mat.at(r).at(c).get<long>();
        text += fmt::format("{:>{}}", v, width);
        total += v;
        if (r == c) correct += v;
      }
      text += "\n";
    }
    const double acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    text += fmt::format("accuracy {:.4f} ({} of {})\n", acc, correct, total);
    json j{{"epochs", epochs}, {"confusion", conf}, {"accuracy", acc}};
    if (!epochs.empty()) j["final_loss"] = epochs.back().at("loss");
    stdout_ << text;
    if (out) {
      prepare_out(*out, log, "report");
      write_file(*out / "report.txt", text);
      write_json(*out / "report.json", j);
    } else {
      stdout_ << "\n" << j.dump(2) << "\n";
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("malformed history or eval file: {}", e.what()));
  }
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"neurofuse: MRI/PET preprocessing and fused 3D CNN classification"};
  app.name("neurofuse");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed for every random choice (default 1)");
  app.add_option("--jobs", g.jobs, "Worker threads for phantom and preprocess")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "error, warn, info or debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

  std::optional<fs::path> phantom_config;
  fs::path phantom_out;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic cohort with known ground truth");
  phantom->add_option("--config", phantom_config, "Phantom configuration JSON");
  phantom->add_option("--out", phantom_out, "Output directory")->required();

  fs::path pre_manifest, pre_out;
  std::optional<fs::path> pre_assets;
  std::string pre_grid = "full";
  auto* pre = app.add_subcommand("preprocess", "Bias correction, registration and skull stripping");
  pre->add_option("--manifest", pre_manifest, "Cohort manifest")->required();
  pre->add_option("--assets", pre_assets, "Template and mask directory (default $NEUROFUSE_ASSETS)");
  pre->add_option("--out", pre_out, "Output directory")->required();
  pre->add_option("--grid", pre_grid, "Standard grid: full or test");

  fs::path split_manifest, split_out;
  double test_fraction = 0.3;
  int split_window = 60;
  auto* split = app.add_subcommand("split", "Patient-level train/test split");
  split->add_option("--manifest", split_manifest, "Cohort manifest")->required();
  split->add_option("--out", split_out, "Output directory")->required();
  split->add_option("--test-fraction", test_fraction, "Share of samples on the test side (default 0.3)");
  split->add_option("--window-days", split_window, "Diagnosis window in days (default 60)");

  TrainFlags tf;
  auto* trn = app.add_subcommand("train", "Train a single-modality or fusion network");
  trn->add_option("--manifest", tf.manifest, "Manifest of preprocessed volumes")->required();
  trn->add_option("--modality", tf.modality, "mri, pet or fused")->required();
  trn->add_option("--out", tf.out, "Output directory")->required();
  trn->add_option("--learning-rate,--lr", tf.cfg.learning_rate, "SGD learning rate (default 1e-4)");
  trn->add_option("--momentum", tf.cfg.momentum, "Momentum (default 0.9)");
  trn->add_option("--epochs", tf.cfg.epochs, "Epochs (default 20)");
  trn->add_option("--batch-size", tf.cfg.batch_size, "Batch size (default 4)");
  trn->add_option("--window-days", tf.window_days, "Diagnosis window in days (default 60)");
  trn->add_option("--max-gap-days", tf.max_gap_days, "MRI-PET pairing gap for fused samples (default 90)");

  fs::path eval_model, eval_manifest;
  std::optional<fs::path> eval_out;
  int eval_window = 60, eval_gap = 90;
  auto* ev = app.add_subcommand("eval", "Held-out accuracy of a checkpoint");
  ev->add_option("--model", eval_model, "Checkpoint")->required();
  ev->add_option("--manifest", eval_manifest, "Manifest of preprocessed volumes")->required();
  ev->add_option("--out", eval_out, "Output directory for eval.json");
  ev->add_option("--window-days", eval_window, "Diagnosis window in days (default 60)");
  ev->add_option("--max-gap-days", eval_gap, "MRI-PET pairing gap for fused samples (default 90)");

  fs::path suvr_manifest, suvr_regions, suvr_out;
  double cutoff = kAmyloidCutoff;
  int suvr_window = 60;
  auto* suvr = app.add_subcommand("suvr", "Cortical SUVR and amyloid positivity per PET scan");
  suvr->add_option("--manifest", suvr_manifest, "Manifest of cerebellum-referenced standard-space PET")->required();
  suvr->add_option("--regions", suvr_regions, "Region spec JSON")->required();
  suvr->add_option("--out", suvr_out, "Output directory")->required();
  suvr->add_option("--cutoff", cutoff, "Positivity cutoff (default 1.11)");
  suvr->add_option("--window-days", suvr_window, "Diagnosis window in days (default 60)");

  fs::path rep_history;
  std::optional<fs::path> rep_eval, rep_out;
  auto* rep = app.add_subcommand("report", "Loss table and confusion matrix");
  rep->add_option("--history", rep_history, "history.json written by train")->required();
  rep->add_option("--eval", rep_eval, "eval.json whose confusion matrix replaces the training one");
  rep->add_option("--out", rep_out, "Output directory (default: JSON follows the text on stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }
  g.seed_given = seed_opt->count() > 0;

  Log log(err, parse_log_level(g.log_level));
  try {
    if (*phantom) return run_phantom(g, phantom_config, phantom_out, log, out);
    if (*pre) return run_preprocess(g, pre_manifest, pre_assets, pre_out, pre_grid, log, out);
    if (*split) return run_split(g, split_manifest, split_out, test_fraction, split_window, log, out);
    if (*trn) return run_train(g, tf, log, out);
    if (*ev) return run_eval(eval_model, eval_manifest, eval_out, eval_window, eval_gap, log, out);
    if (*suvr) return run_suvr(suvr_manifest, suvr_regions, suvr_out, cutoff, suvr_window, log, out);
    if (*rep) return run_report(rep_history, rep_eval, rep_out, log, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return 2;
  } catch (const Error& e) {
    log.error(e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    log.error(fmt::format("{}: {}", error_name(ErrorCode::IoError), e.what()));
    return 1;
  }
  err << app.help();
  return 2;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace neurofuse::cli
