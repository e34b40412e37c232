#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ambiseg/netmodel.hpp"

namespace ambiseg::net {

namespace {

constexpr char kMagic[8] = {'A', 'M', 'B', 'S', 'E', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("checkpoint '" + path + "' is truncated");
  }
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& path) {
  const auto n = get<std::uint64_t>(is, path);
  if (n > (std::uint64_t{1} << 30)) throw std::runtime_error("checkpoint '" + path + "' is corrupt");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw std::runtime_error("checkpoint '" + path + "' is truncated");
  }
  return s;
}

void put_tensors(std::ostream& os, const Parameters& ps) {
  put<std::uint64_t>(os, ps.size());
  for (const auto& [name, t] : ps) {
    put_string(os, name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().rank()));
    for (auto d : t.shape().dims()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(Real)));
  }
}

Parameters get_tensors(std::istream& is, const std::string& path) {
  Parameters ps;
  const auto count = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is, path);
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 4) throw std::runtime_error("checkpoint '" + path + "': bad rank for " + name);
    std::vector<std::size_t> dims;
    for (std::uint32_t r = 0; r < rank; ++r) dims.push_back(get<std::uint64_t>(is, path));
    Tensor t{Shape(dims)};
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(Real)))) {
      throw std::runtime_error("checkpoint '" + path + "' is truncated in " + name);
    }
    ps.emplace(std::move(name), std::move(t));
  }
  return ps;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  os.write(kMagic, sizeof kMagic);
  put(os, kVersion);
  put_string(os, nlohmann::json(net.config()).dump());
  put_tensors(os, net.params());
  put_tensors(os, net.buffers());
  if (!os) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Network load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  char magic[sizeof kMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("'" + path + "' is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint '" + path + "' has version " + std::to_string(version) +
                             ", expected " + std::to_string(kVersion));
  }
  ModelConfig cfg = nlohmann::json::parse(get_string(is, path)).get<ModelConfig>();
  Parameters params = get_tensors(is, path);
  Parameters buffers = get_tensors(is, path);
  return Network(std::move(cfg), std::move(params), std::move(buffers));
}

}  // namespace ambiseg::net
