#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "spine/errors.hpp"

namespace spine {

// Stage-1 class values as stored in label volumes (0 = background).
enum class SpineClass : std::uint8_t { cervical = 1, thoracic = 2, lumbar = 3 };

inline const char* to_string(SpineClass c) {
  switch (c) {
    case SpineClass::cervical: return "cervical";
    case SpineClass::thoracic: return "thoracic";
    case SpineClass::lumbar: return "lumbar";
  }
  return "?";
}

inline std::optional<SpineClass> spine_class_from_string(const std::string& s) {
  if (s == "cervical") return SpineClass::cervical;
  if (s == "thoracic") return SpineClass::thoracic;
  if (s == "lumbar") return SpineClass::lumbar;
  return std::nullopt;
}

// One of the 25 vertebra identities, totally ordered cranial to caudal:
// C1..C7 (1..7), T1..T12 (8..19), L1..L6 (20..25).
class AnatomicalLabel {
 public:
  static constexpr int kCount = 25;
  static constexpr int kFirstThoracic = 8;
  static constexpr int kFirstLumbar = 20;

  explicit AnatomicalLabel(int ordinal) : ordinal_(ordinal) {
    if (ordinal < 1 || ordinal > kCount)
      throw DataError("anatomical ordinal out of range: " + std::to_string(ordinal));
  }

  int ordinal() const { return ordinal_; }

  SpineClass cls() const {
    if (ordinal_ < kFirstThoracic) return SpineClass::cervical;
    if (ordinal_ < kFirstLumbar) return SpineClass::thoracic;
    return SpineClass::lumbar;
  }

  std::string name() const {
    if (ordinal_ < kFirstThoracic) return "C" + std::to_string(ordinal_);
    if (ordinal_ < kFirstLumbar) return "T" + std::to_string(ordinal_ - kFirstThoracic + 1);
    return "L" + std::to_string(ordinal_ - kFirstLumbar + 1);
  }

  static AnatomicalLabel parse(const std::string& s) {
    if (s.size() >= 2) {
      const int n = std::atoi(s.c_str() + 1);
      if (s[0] == 'C' && n >= 1 && n <= 7) return AnatomicalLabel(n);
      if (s[0] == 'T' && n >= 1 && n <= 12) return AnatomicalLabel(kFirstThoracic + n - 1);
      if (s[0] == 'L' && n >= 1 && n <= 6) return AnatomicalLabel(kFirstLumbar + n - 1);
    }
    throw DataError("not an anatomical label: '" + s + "'");
  }

  // First ordinal of a class: C1, T1 or L1.
  static AnatomicalLabel first_of(SpineClass c) {
    switch (c) {
      case SpineClass::cervical: return AnatomicalLabel(1);
      case SpineClass::thoracic: return AnatomicalLabel(kFirstThoracic);
      case SpineClass::lumbar: return AnatomicalLabel(kFirstLumbar);
    }
    throw DataError("bad spine class");
  }

  friend bool operator==(const AnatomicalLabel&, const AnatomicalLabel&) = default;
  friend auto operator<=>(const AnatomicalLabel&, const AnatomicalLabel&) = default;

 private:
  int ordinal_;
};

}  // namespace spine
