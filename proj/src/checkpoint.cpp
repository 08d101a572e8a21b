#include "maskrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "maskrec/error.hpp"

namespace maskrec::model {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'C', 'K', 'P', 'T', '\r', '\n'};
constexpr std::uint8_t kFloat64 = 1;

std::uint64_t fnv1a(const std::string& bytes, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    const U u = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i)
      buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(u) >> (8 * i)) & 0xff));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}

  template <typename T>
  T get(const char* what) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(U), what);
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      u |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(static_cast<U>(u));
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > end_) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const auto& c = params.config;
  for (std::size_t v : {c.d_model, c.num_blocks, c.num_heads, c.ff_dim, c.head_hidden1,
                        c.head_hidden2, c.max_len})
    w.put<std::uint64_t>(v);
  w.put<double>(c.dropout);
  w.put<double>(c.bn_momentum);
  w.put<std::uint64_t>(params.channels);
  w.put<std::int64_t>(params.classes);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.arrays.size()));
  for (const auto& a : params.arrays) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(a.group));
    w.put<std::uint8_t>(a.trainable ? 1 : 0);
    w.put<std::uint8_t>(kFloat64);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) w.put<std::uint64_t>(d);
  }
  for (const auto& a : params.arrays)
    for (double v : a.value.values()) w.put<double>(v);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kGroupCount));
  for (bool f : params.frozen) w.put<std::uint8_t>(f ? 1 : 0);
  const std::uint64_t sum = fnv1a(w.buffer(), w.buffer().size());
  w.put<std::uint64_t>(sum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("not a checkpoint file (bad magic): " + path.string());
  const std::size_t body = buf.size() - 8;
  {
    const std::string tail_bytes = buf.substr(body);
    Reader tail(tail_bytes, 8);
    if (tail.get<std::uint64_t>("checksum") != fnv1a(buf, body))
      throw FormatError("checkpoint corrupt or truncated (checksum mismatch): " + path.string());
  }
  Reader r(buf, body);
  r.str(sizeof kMagic, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  cfg.d_model = r.get<std::uint64_t>("config");
  cfg.num_blocks = r.get<std::uint64_t>("config");
  cfg.num_heads = r.get<std::uint64_t>("config");
  cfg.ff_dim = r.get<std::uint64_t>("config");
  cfg.head_hidden1 = r.get<std::uint64_t>("config");
  cfg.head_hidden2 = r.get<std::uint64_t>("config");
  cfg.max_len = r.get<std::uint64_t>("config");
  cfg.dropout = r.get<double>("config");
  cfg.bn_momentum = r.get<double>("config");
  const auto channels = r.get<std::uint64_t>("channels");
  const auto classes = r.get<std::int64_t>("classes");
  const auto count = r.get<std::uint32_t>("array count");
  if (count > 100000) throw FormatError("checkpoint array count is implausible");

  ModelParams p;
  p.config = cfg;
  p.channels = channels;
  p.classes = static_cast<int>(classes);
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamArray a;
    const auto name_len = r.get<std::uint32_t>("manifest");
    a.name = r.str(name_len, "manifest");
    const auto group = r.get<std::uint8_t>("manifest");
    if (group >= kGroupCount) throw FormatError("bad group id for array '" + a.name + "'");
    a.group = static_cast<Group>(group);
    a.trainable = r.get<std::uint8_t>("manifest") != 0;
    if (r.get<std::uint8_t>("manifest") != kFloat64)
      throw FormatError("unsupported element type for array '" + a.name + "'");
    const auto ndim = r.get<std::uint32_t>("manifest");
    if (ndim < 1 || ndim > 2) throw FormatError("bad rank for array '" + a.name + "'");
    for (std::uint32_t d = 0; d < ndim; ++d) a.shape.push_back(r.get<std::uint64_t>("manifest"));
    if (a.shape.front() > (1u << 28) || a.shape.back() > (1u << 28))
      throw FormatError("implausible shape for array '" + a.name + "'");
    a.value = ndim == 1 ? Matrix(1, a.shape[0]) : Matrix(a.shape[0], a.shape[1]);
    p.arrays.push_back(std::move(a));
  }
  for (auto& a : p.arrays)
    for (double& v : a.value.values()) v = r.get<double>("payload");
  const auto groups = r.get<std::uint32_t>("frozen table");
  if (groups != kGroupCount) throw FormatError("bad frozen-flag table");
  for (std::size_t g = 0; g < kGroupCount; ++g) p.frozen[g] = r.get<std::uint8_t>("frozen table") != 0;
  if (r.pos() != body) throw FormatError("trailing bytes in checkpoint " + path.string());

  p.reindex();
  // The manifest must describe exactly the layout this config implies.
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds invalid model config: ") + e.what());
  }
  check_compatible(p, init_params(cfg, p.channels, p.classes, 0));
  return p;
}

void check_compatible(const ModelParams& loaded, const ModelParams& expected) {
  for (const auto& e : expected.arrays) {
    if (!loaded.contains(e.name)) throw FormatError("checkpoint is missing array '" + e.name + "'");
    const auto& a = loaded.at(e.name);
    if (a.shape != e.shape) {
      std::ostringstream msg;
      msg << "shape mismatch for array '" << e.name << "': checkpoint has (";
      for (std::size_t i = 0; i < a.shape.size(); ++i) msg << (i ? "," : "") << a.shape[i];
      msg << "), expected (";
      for (std::size_t i = 0; i < e.shape.size(); ++i) msg << (i ? "," : "") << e.shape[i];
      msg << ")";
      throw FormatError(msg.str());
    }
  }
  if (loaded.arrays.size() != expected.arrays.size())
    throw FormatError("checkpoint has unexpected extra arrays");
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelParams& expected) {
  ModelParams p = load_checkpoint(path);
  check_compatible(p, expected);
  return p;
}

}  // namespace maskrec::model
