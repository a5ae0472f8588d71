#include "latseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <openssl/evp.h>

namespace latseg::ckpt {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'T', 'S', 'E', 'G', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, const std::string& name) : bytes_(bytes), end_(end), name_(name) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof v), sizeof v);
    return v;
  }
  const char* take(std::size_t n) {
    if (pos_ + n > end_) throw std::runtime_error("checkpoint " + name_ + " is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::string digest(const char* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 failed");
  return std::string(reinterpret_cast<char*>(md), len);
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest(bytes.data(), bytes.size())) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 15]);
  }
  return out;
}

void save(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  const std::string header = checkpoint.header.dump();
  put<std::uint64_t>(out, header.size());
  out += header;
  put<std::uint32_t>(out, std::uint32_t(checkpoint.tensors.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    put<std::uint32_t>(out, std::uint32_t(name.size()));
    out += name;
    for (int d : {t.n(), t.c(), t.h(), t.w()}) put<std::int32_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  }
  out += digest(out.data(), out.size());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic + 32 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint");
  const std::size_t body = bytes.size() - 32;
  if (digest(bytes.data(), body) != bytes.substr(body))
    throw std::runtime_error("checkpoint " + path.string() + " failed its integrity check");

  Reader r(bytes, body, path.string());
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw std::runtime_error("checkpoint " + path.string() + " has version " + std::to_string(version) +
                             ", expected " + std::to_string(kVersion));
  Checkpoint c;
  const auto header_len = r.get<std::uint64_t>();
  c.header = nlohmann::json::parse(std::string(r.take(header_len), header_len));
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.take(name_len), name_len);
    Shape s;
    s.n = r.get<std::int32_t>();
    s.c = r.get<std::int32_t>();
    s.h = r.get<std::int32_t>();
    s.w = r.get<std::int32_t>();
    Tensor t(s);
    std::memcpy(t.data(), r.take(t.size() * sizeof(float)), t.size() * sizeof(float));
    c.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.pos() != body) throw std::runtime_error("checkpoint " + path.string() + " has trailing bytes");
  return c;
}

std::map<std::string, Tensor> with_prefix(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& [k, v] : tensors) out.emplace(prefix + k, v);
  return out;
}

std::map<std::string, Tensor> strip_prefix(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& [k, v] : tensors)
    if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), v);
  return out;
}

}  // namespace latseg::ckpt
