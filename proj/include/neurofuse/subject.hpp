#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace neurofuse {

/// Calendar day; serialized as ISO-8601 "YYYY-MM-DD".
struct Date {
  std::chrono::sys_days days{};

  static Date parse(std::string_view iso);
  static Date from_ymd(int y, unsigned m, unsigned d);
  std::string iso() const;

  Date plus_days(int n) const { return Date{days + std::chrono::days(n)}; }
  friend int days_between(const Date& from, const Date& to) {
    return static_cast<int>((to.days - from.days).count());
  }
  friend auto operator<=>(const Date&, const Date&) = default;
};

enum class Label { Healthy, AD };

const char* label_name(Label l) noexcept;
Label parse_label(std::string_view name);

enum class Modality { MRI, PET, Fused };

const char* modality_name(Modality m) noexcept;

struct MriSession {
  Date date;
  std::filesystem::path path;
};

struct PetSession {
  Date date;
  std::vector<std::filesystem::path> frames;
};

struct Diagnosis {
  Date date;
  Label label = Label::Healthy;
};

/// One patient: N MRI sessions, M PET sessions and clinical diagnoses.
struct SubjectRecord {
  std::string id;
  std::vector<MriSession> mri;
  std::vector<PetSession> pet;
  std::vector<Diagnosis> dx;

  /// Throws InvalidArgument on duplicate session dates within a modality.
  void validate() const;
};

}  // namespace neurofuse
