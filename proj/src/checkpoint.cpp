#include "contextseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "contextseg/config.hpp"

namespace contextseg {
namespace {

static_assert(sizeof(float) == 4);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string where) : bytes_(std::move(bytes)), where_(std::move(where)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw IoError(where_ + ": truncated checkpoint");
  }
  std::string bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  const std::string spec = serialize_net(net.spec());
  put_u32(out, static_cast<std::uint32_t>(spec.size()));
  out += spec;
  const auto params = net.params();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Param<float>* p : params) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    const Shape& s = p->value.shape();
    for (int e : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : p->value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for " + path.string());
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot read " + path.string());
  Reader in(std::string(std::istreambuf_iterator<char>(file), {}), path.string());

  if (in.text(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic))
    throw IoError(path.string() + ": not a checkpoint");
  if (const auto version = in.u32(); version != kCheckpointVersion)
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));

  NetSpec spec;
  try {
    spec = parse_net(in.text(in.u32()));
    spec.validate();
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": bad network header: " + e.what());
  }
  auto net = Network<float>::build(spec, 0);
  auto params = net.params();
  if (const auto count = in.u32(); count != params.size())
    throw ShapeError(path.string() + ": " + std::to_string(count) + " parameter records, network has " +
                     std::to_string(params.size()));
  for (Param<float>* p : params) {
    const std::string name = in.text(in.u32());
    if (name != p->name)
      throw ShapeError(path.string() + ": record '" + name + "' where '" + p->name + "' was expected");
    Shape s;
    s.n = int(in.u32());
    s.c = int(in.u32());
    s.h = int(in.u32());
    s.w = int(in.u32());
    if (!(s == p->value.shape()))
      throw ShapeError(path.string() + ": '" + name + "' has shape " + s.str() + ", expected " +
                       p->value.shape().str());
    for (float& v : p->value.data()) v = std::bit_cast<float>(in.u32());
  }
  if (!in.done()) throw IoError(path.string() + ": trailing bytes after the last record");
  return net;
}

}  // namespace contextseg
