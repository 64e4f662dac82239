#include "scfc/optim.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace scfc::ad {
namespace {

constexpr char kMagic[4] = {'S', 'C', 'F', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

class Reader {
 public:
  Reader(std::string data, std::string origin)
      : data_(std::move(data)), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t count) {
    need(count);
    std::string s = data_.substr(pos_, count);
    pos_ += count;
    return s;
  }
  bool exhausted() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t count) {
    if (pos_ + count > data_.size())
      fail(Errc::ParseError, "checkpoint '" + origin_ + "' is truncated");
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void Adam::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
  const long t = ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    if (g && !(g->shape == p.shape))
      fail(Errc::ShapeMismatch, "adam: gradient for '" + name + "' has shape " +
                                    g->shape.str() + ", parameter has " +
                                    p.shape.str());
    auto& m = m_.try_emplace(name, Tensor(p.shape)).first->second;
    auto& v = v_.try_emplace(name, Tensor(p.shape)).first->second;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = g ? g->data[i] : 0.0;
      m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gi;
      v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(shape);
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<std::uint32_t>(t.shape.rank));
    for (std::size_t d = 0; d < t.shape.rank; ++d) put_u64(buf, t.shape.dim[d]);
    for (double v : t.data) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::Io, "cannot open '" + path.string() + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) fail(Errc::Io, "write failure on '" + path.string() + "'");
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open '" + path.string() + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) fail(Errc::Io, "read failure on '" + path.string() + "'");
  Reader r(std::move(data), path.string());
  if (r.bytes(4) != std::string(kMagic, 4))
    fail(Errc::ParseError, "'" + path.string() + "' is not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    fail(Errc::ParseError, "checkpoint '" + path.string() + "' has version " +
                               std::to_string(version) + ", expected " +
                               std::to_string(kVersion));
  const std::uint32_t count = r.u32();
  ParamStore params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 4)
      fail(Errc::ParseError, "checkpoint tensor '" + name + "' has rank " +
                                 std::to_string(rank));
    Shape s;
    s.rank = rank;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64();
      if (dim == 0 || dim > (1ull << 32))
        fail(Errc::ParseError, "checkpoint tensor '" + name + "' has dim " +
                                   std::to_string(dim));
      s.dim[d] = static_cast<std::size_t>(dim);
    }
    Tensor t(s);
    for (auto& v : t.data) v = r.f64();
    if (!params.emplace(name, std::move(t)).second)
      fail(Errc::ParseError, "checkpoint repeats tensor '" + name + "'");
  }
  if (!r.exhausted())
    fail(Errc::ParseError, "checkpoint '" + path.string() + "' has trailing bytes");
  return params;
}

}  // namespace scfc::ad
