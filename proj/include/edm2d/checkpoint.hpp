#pragma once

#include "edm2d/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace edm2d {

enum class ModelKind : std::uint8_t { Teacher = 0, Energy = 1 };

/// Binary model file, little-endian throughout:
///   "EDM2D" | u32 version | u8 kind | u32 n_widths | u32 widths[n] |
///   f64 omega0 | f64 sigma_data | u64 n_params | f64 params[n_params]
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelKind kind = ModelKind::Teacher;
  std::vector<int> widths;
  double omega0 = 6.0;
  double sigma_data = 1.0;
  std::vector<double> params;

  SineMlp net() const { return SineMlp::from_widths(widths, omega0); }
  /// Throws ConfigError when the stored kind does not match.
  TeacherModel teacher() const;
  EnergyModel energy() const;

  std::string encode() const;
  /// Throws IoError on a malformed or truncated buffer.
  static Checkpoint decode(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

Checkpoint make_checkpoint(ModelKind kind, const SineMlp& net, double sigma_data, std::vector<double> params);

}  // namespace edm2d
