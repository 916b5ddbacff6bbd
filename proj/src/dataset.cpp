#include <array>
#include "neurofuse/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "neurofuse/error.hpp"
#include "neurofuse/random.hpp"

namespace neurofuse {

using nlohmann::json;

Date Date::parse(std::string_view iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string s(iso);
  if (std::sscanf(s.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3) {
    throw Error(ErrorCode::ParseError, fmt::format("'{}' is not an ISO-8601 date", iso));
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw Error(ErrorCode::ParseError, fmt::format("'{}' is not a valid calendar date", iso));
  return Date{std::chrono::sys_days{ymd}};
}

Date Date::from_ymd(int y, unsigned m, unsigned d) {
  return Date{std::chrono::sys_days{std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m},
                                                                 std::chrono::day{d}}}};
}

std::string Date::iso() const {
  const std::chrono::year_month_day ymd{days};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                     static_cast<unsigned>(ymd.day()));
}

const char* label_name(Label l) noexcept { return l == Label::Healthy ? "Healthy" : "AD"; }

Label parse_label(std::string_view name) {
  if (name == "Healthy" || name == "CN" || name == "healthy") return Label::Healthy;
  if (name == "AD" || name == "ad" || name == "Dementia") return Label::AD;
  throw Error(ErrorCode::ParseError, fmt::format("unknown diagnosis label '{}'", name));
}

const char* modality_name(Modality m) noexcept {
  switch (m) {
    case Modality::MRI: return "MRI";
    case Modality::PET: return "PET";
    case Modality::Fused: return "Fused";
  }
  return "?";
}

void SubjectRecord::validate() const {
  std::set<Date> seen;
  for (const auto& s : mri) {
    if (!seen.insert(s.date).second) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("subject {}: duplicate MRI date {}", id, s.date.iso()));
    }
  }
  seen.clear();
  for (const auto& s : pet) {
    if (!seen.insert(s.date).second) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("subject {}: duplicate PET date {}", id, s.date.iso()));
    }
  }
}

void Manifest::validate() const {
  std::set<std::string> ids;
  for (const auto& s : subjects) {
    if (!ids.insert(s.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate subject id " + s.id);
    s.validate();
  }
}

const SubjectRecord* Manifest::find(std::string_view id) const {
  for (const auto& s : subjects) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

std::filesystem::path Manifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

Manifest manifest_from_json(std::string_view text, const std::filesystem::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  try {
    const json doc = json::parse(text);
    m.provenance = doc.value("provenance", "");
    for (const auto& js : doc.at("subjects")) {
      SubjectRecord s;
      s.id = js.at("id").get<std::string>();
      for (const auto& e : js.value("mri", json::array())) {
        s.mri.push_back({Date::parse(e.at("date").get<std::string>()), e.at("path").get<std::string>()});
      }
      for (const auto& e : js.value("pet", json::array())) {
        PetSession p;
        p.date = Date::parse(e.at("date").get<std::string>());
        for (const auto& f : e.at("frames")) p.frames.emplace_back(f.get<std::string>());
        s.pet.push_back(std::move(p));
      }
      for (const auto& e : js.value("dx", json::array())) {
        s.dx.push_back({Date::parse(e.at("date").get<std::string>()), parse_label(e.at("label").get<std::string>())});
      }
      m.subjects.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("manifest: {}", e.what()));
  }
  m.validate();
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  json doc;
  doc["provenance"] = m.provenance;
  json subjects = json::array();
  for (const auto& s : m.subjects) {
    json js;
    js["id"] = s.id;
    js["mri"] = json::array();
    for (const auto& e : s.mri) js["mri"].push_back({{"date", e.date.iso()}, {"path", e.path.generic_string()}});
    js["pet"] = json::array();
    for (const auto& e : s.pet) {
      json frames = json::array();
      for (const auto& f : e.frames) frames.push_back(f.generic_string());
      js["pet"].push_back({{"date", e.date.iso()}, {"frames", frames}});
    }
    js["dx"] = json::array();
    for (const auto& e : s.dx) js["dx"].push_back({{"date", e.date.iso()}, {"label", label_name(e.label)}});
    subjects.push_back(std::move(js));
  }
  doc["subjects"] = std::move(subjects);
  return doc.dump(2) + "\n";
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str(), path.parent_path());
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest " + path.string());
  out << manifest_to_json(m);
}

Manifest subset(const Manifest& m, const std::set<std::string>& ids) {
  Manifest out;
  out.provenance = m.provenance;
  out.base_dir = m.base_dir;
  for (const auto& s : m.subjects) {
    if (ids.count(s.id)) out.subjects.push_back(s);
  }
  return out;
}

namespace {

std::optional<Diagnosis> nearest_diagnosis(const std::vector<Diagnosis>& dx, const Date& scan, int window) {
  std::optional<Diagnosis> best;
  int best_gap = 0;
  for (const auto& d : dx) {
    const int gap = std::abs(days_between(scan, d.date));
    if (gap > window) continue;
    if (!best || gap < best_gap || (gap == best_gap && d.date > best->date)) {
      best = d;
      best_gap = gap;
    }
  }
  return best;
}

}  // namespace

SessionLabeling pair_sessions_with_diagnosis(const SubjectRecord& subject, int window_days) {
  SessionLabeling out;
  auto label_one = [&](Modality modality, const Date& date, std::vector<std::filesystem::path> volumes) {
    const auto dx = nearest_diagnosis(subject.dx, date, window_days);
    if (!dx) {
      out.dropped.push_back(fmt::format("{} {} {}: no diagnosis within {} days", subject.id,
                                        modality_name(modality), date.iso(), window_days));
      return;
    }
    out.samples.push_back({subject.id, modality, std::move(volumes), dx->label, date, std::nullopt});
  };
  std::vector<MriSession> mri = subject.mri;
  std::sort(mri.begin(), mri.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
  for (const auto& s : mri) label_one(Modality::MRI, s.date, {s.path});
  std::vector<PetSession> pet = subject.pet;
  std::sort(pet.begin(), pet.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
  for (const auto& s : pet) label_one(Modality::PET, s.date, s.frames);
  return out;
}

PatientSplit split_by_patient(const std::vector<LabeledSample>& samples, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "test_fraction must lie in (0, 1)");
  }
  // subjects in first-appearance order, so the shuffle input is stable
  std::vector<std::string> subjects;
  std::map<std::string, std::size_t> counts;
  std::map<std::string, std::array<std::size_t, 2>> label_counts;
  for (const auto& s : samples) {
    if (counts[s.subject_id]++ == 0) subjects.push_back(s.subject_id);
    ++label_counts[s.subject_id][s.label == Label::AD ? 1 : 0];
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(subjects));

  // stratify on each subject's majority label, filling the test side per stratum
  std::array<std::vector<std::string>, 2> strata;
  std::array<double, 2> stratum_samples{0.0, 0.0};
  for (const auto& id : subjects) {
    const auto& lc = label_counts[id];
    const int k = lc[1] > lc[0] ? 1 : 0;
    strata[k].push_back(id);
    stratum_samples[k] += static_cast<double>(counts[id]);
  }
  PatientSplit out;
  for (int k = 0; k < 2; ++k) {
    const double target = test_fraction * stratum_samples[k];
    std::size_t in_test = 0;
    std::vector<std::string> test, train;
    for (const auto& id : strata[k]) {
      if (static_cast<double>(in_test) < target - 1e-9) {
        test.push_back(id);
        in_test += counts[id];
      } else {
        train.push_back(id);
      }
    }
    if (train.empty() && test.size() > 1) {
      train.push_back(test.back());
      test.pop_back();
    }
    out.test_subjects.insert(test.begin(), test.end());
    out.train_subjects.insert(train.begin(), train.end());
  }
  for (const auto& s : samples) {
    (out.test_subjects.count(s.subject_id) ? out.test : out.train).push_back(s);
  }
  auto has_both = [](const std::vector<LabeledSample>& side) {
    bool healthy = false, ad = false;
    for (const auto& s : side) (s.label == Label::Healthy ? healthy : ad) = true;
    return healthy && ad;
  };
  if (!has_both(out.train) || !has_both(out.test)) {
    throw Error(ErrorCode::UnsatisfiableSplit,
                fmt::format("seed {}: cannot place both labels on both sides ({} train / {} test samples)", seed,
                            out.train.size(), out.test.size()));
  }
  return out;
}

FusionPairing pair_modalities(const SubjectRecord& subject, const std::vector<LabeledSample>& labeled,
                              int max_gap_days) {
  std::vector<const LabeledSample*> mri, pet;
  for (const auto& s : labeled) {
    if (s.subject_id != subject.id) continue;
    if (s.modality == Modality::MRI) mri.push_back(&s);
    if (s.modality == Modality::PET) pet.push_back(&s);
  }
  struct Candidate {
    int gap;
    std::size_t p, m;
  };
  std::vector<Candidate> candidates;
  for (std::size_t p = 0; p < pet.size(); ++p) {
    for (std::size_t m = 0; m < mri.size(); ++m) {
      const int gap = std::abs(days_between(pet[p]->date, mri[m]->date));
      if (gap <= max_gap_days) candidates.push_back({gap, p, m});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.gap != b.gap) return a.gap < b.gap;
    if (pet[a.p]->date != pet[b.p]->date) return pet[a.p]->date < pet[b.p]->date;
    return mri[a.m]->date < mri[b.m]->date;
  });
  std::vector<bool> pet_used(pet.size(), false), mri_used(mri.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  for (const auto& c : candidates) {
    if (pet_used[c.p] || mri_used[c.m]) continue;
    pet_used[c.p] = mri_used[c.m] = true;
    chosen.emplace_back(c.p, c.m);
  }
  std::sort(chosen.begin(), chosen.end(),
            [&](const auto& a, const auto& b) { return pet[a.first]->date < pet[b.first]->date; });

  FusionPairing out;
  for (const auto& [p, m] : chosen) {
    LabeledSample s;
    s.subject_id = subject.id;
    s.modality = Modality::Fused;
    s.volumes = mri[m]->volumes;
    s.volumes.insert(s.volumes.end(), pet[p]->volumes.begin(), pet[p]->volumes.end());
    s.label = pet[p]->label;
    s.date = pet[p]->date;
    s.mri_date = mri[m]->date;
    out.samples.push_back(std::move(s));
  }
  for (std::size_t p = 0; p < pet.size(); ++p) {
    if (!pet_used[p]) {
      out.unpaired.push_back(fmt::format("{} PET {}: no unused MRI within {} days", subject.id,
                                         pet[p]->date.iso(), max_gap_days));
    }
  }
  return out;
}

}  // namespace neurofuse
