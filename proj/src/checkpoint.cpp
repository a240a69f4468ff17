#include "vift/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace vift {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kWeightsMagic[4] = {'V', 'I', 'F', 'W'};
constexpr char kStateMagic[4] = {'V', 'I', 'F', 'S'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  }
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, std::streamsize(n)); }
  void tensor(const ad::Tensor& t) {
    put<std::uint32_t>(std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(d);
    bytes(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("failed writing '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open '" + path.string() + "'");
  }
  template <typename T>
  T get() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  void read(char* p, std::size_t n) {
    in_.read(p, std::streamsize(n));
    if (in_.gcount() != std::streamsize(n)) fail("truncated file");
  }
  ad::Tensor tensor() {
    const auto rank = get<std::uint32_t>();
    if (rank > 8) fail("implausible tensor rank " + std::to_string(rank));
    ad::Tensor::Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>();
    ad::Tensor t(shape);
    read(reinterpret_cast<char*>(t.data()), t.size() * sizeof(double));
    return t;
  }
  void expect_magic(const char (&magic)[4]) {
    char m[4];
    read(m, 4);
    if (std::memcmp(m, magic, 4) != 0) fail("bad magic, expected '" + std::string(magic, 4) + "'");
    const auto version = get<std::uint32_t>();
    if (version != kCheckpointVersion) fail("unsupported format version " + std::to_string(version));
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint '" + path_.string() + "': " + what);
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

void write_config(Writer& w, const ViftConfig& c) {
  w.put<std::uint8_t>(std::uint8_t(c.architecture));
  w.put<std::uint8_t>(std::uint8_t(c.head_mode));
  w.put<std::uint8_t>(std::uint8_t(c.rotation_param));
  for (std::size_t v : {c.visual_dim, c.inertial_dim, c.d_model, c.d_ff, c.n_layers, c.n_heads, c.window,
                        c.head_hidden, c.mlp_hidden})
    w.put<std::uint64_t>(v);
  w.put<double>(c.dropout);
}

ViftConfig read_config(Reader& r) {
  ViftConfig c;
  const auto arch = r.get<std::uint8_t>();
  const auto head = r.get<std::uint8_t>();
  const auto rot = r.get<std::uint8_t>();
  if (arch > 1 || head > 2 || rot > 1) r.fail("invalid enumeration in stored config");
  c.architecture = Architecture(arch);
  c.head_mode = HeadMode(head);
  c.rotation_param = RotationParam(rot);
  for (std::size_t* f : {&c.visual_dim, &c.inertial_dim, &c.d_model, &c.d_ff, &c.n_layers, &c.n_heads, &c.window,
                         &c.head_hidden, &c.mlp_hidden})
    *f = r.get<std::uint64_t>();
  c.dropout = r.get<double>();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("stored config is invalid: ") + e.what());
  }
  return c;
}

}  // namespace

void save_weights(const ViftWeights& w, const std::filesystem::path& path) {
  Writer out(path);
  out.bytes(kWeightsMagic, 4);
  out.put<std::uint32_t>(kCheckpointVersion);
  write_config(out, w.config);
  const auto params = w.named_parameters();
  out.put<std::uint64_t>(params.size());
  for (const ConstNamedTensor& p : params) out.tensor(*p.tensor);
  out.finish();
}

ViftWeights load_weights(const std::filesystem::path& path) {
  Reader in(path);
  in.expect_magic(kWeightsMagic);
  const ViftConfig config = read_config(in);
  // Shapes come from a freshly initialized network of the stored config.
  ViftWeights w = init_weights(config, 0);
  auto params = w.named_parameters();
  const auto count = in.get<std::uint64_t>();
  if (count != params.size()) {
    in.fail("stored " + std::to_string(count) + " tensors, config implies " + std::to_string(params.size()));
  }
  for (NamedTensor& p : params) {
    ad::Tensor t = in.tensor();
    if (!t.same_shape(*p.tensor)) {
      in.fail("tensor " + p.name + " has shape " + t.shape_string() + ", expected " + p.tensor->shape_string());
    }
    *p.tensor = std::move(t);
  }
  in.expect_end();
  return w;
}

ViftWeights load_weights(const std::filesystem::path& path, const ViftConfig& expected) {
  ViftWeights w = load_weights(path);
  if (!(w.config == expected)) {
    throw std::runtime_error("checkpoint '" + path.string() + "': stored model config differs from the requested one");
  }
  return w;
}

void save_training_state(const TrainingState& s, const std::filesystem::path& path) {
  if (s.adam.m.size() != s.adam.v.size()) throw std::invalid_argument("training state: moment counts differ");
  Writer out(path);
  out.bytes(kStateMagic, 4);
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint64_t>(s.epoch);
  out.put<std::uint64_t>(s.adam.step);
  out.put<std::uint64_t>(s.adam.m.size());
  for (const ad::Tensor& t : s.adam.m) out.tensor(t);
  for (const ad::Tensor& t : s.adam.v) out.tensor(t);
  out.finish();
}

TrainingState load_training_state(const std::filesystem::path& path) {
  Reader in(path);
  in.expect_magic(kStateMagic);
  TrainingState s;
  s.epoch = in.get<std::uint64_t>();
  s.adam.step = in.get<std::uint64_t>();
  const auto count = in.get<std::uint64_t>();
  if (count > (1u << 20)) in.fail("implausible moment count");
  for (std::uint64_t i = 0; i < count; ++i) s.adam.m.push_back(in.tensor());
  for (std::uint64_t i = 0; i < count; ++i) s.adam.v.push_back(in.tensor());
  in.expect_end();
  return s;
}

}  // namespace vift
