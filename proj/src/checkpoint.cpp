#include "edm2d/checkpoint.hpp"

#include "edm2d/errors.hpp"
#include "edm2d/io.hpp"

#include <bit>
#include <cstring>

namespace edm2d {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'E', 'D', 'M', '2', 'D'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (bytes_.size() - pos_ < sizeof(T)) throw IoError("checkpoint: truncated file");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint: truncated file");
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

TeacherModel Checkpoint::teacher() const {
  if (kind != ModelKind::Teacher) throw ConfigError("checkpoint holds an energy model, not a teacher");
  return TeacherModel(net(), params, sigma_data);
}

EnergyModel Checkpoint::energy() const {
  if (kind != ModelKind::Energy) throw ConfigError("checkpoint holds a teacher, not an energy model");
  return EnergyModel(net(), params, sigma_data);
}

std::string Checkpoint::encode() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(widths.size()));
  for (int w : widths) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  put<double>(out, omega0);
  put<double>(out, sigma_data);
  put<std::uint64_t>(out, params.size());
  for (double p : params) put<double>(out, p);
  return out;
}

Checkpoint Checkpoint::decode(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) throw IoError("checkpoint: bad magic");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint c;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw IoError("checkpoint: unknown model kind");
  c.kind = static_cast<ModelKind>(kind);
  const auto n_widths = r.get<std::uint32_t>();
  if (n_widths < 3 || n_widths > 64) throw IoError("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < n_widths; ++i) c.widths.push_back(static_cast<int>(r.get<std::uint32_t>()));
  c.omega0 = r.get<double>();
  c.sigma_data = r.get<double>();
  const auto n_params = r.get<std::uint64_t>();
  if (n_params > bytes.size() / sizeof(double)) throw IoError("checkpoint: truncated parameters");
  c.params.resize(n_params);
  for (auto& p : c.params) p = r.get<double>();
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  try {
    if (c.net().param_count() != c.params.size()) throw IoError("checkpoint: parameter count does not match layout");
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: bad layout: ") + e.what());
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { io::write_atomic(path, encode()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return decode(io::read_file(path)); }

Checkpoint make_checkpoint(ModelKind kind, const SineMlp& net, double sigma_data, std::vector<double> params) {
  if (params.size() != net.param_count()) throw std::invalid_argument("make_checkpoint: parameter count mismatch");
  return Checkpoint{kind, net.widths(), net.omega0(), sigma_data, std::move(params)};
}

}  // namespace edm2d
