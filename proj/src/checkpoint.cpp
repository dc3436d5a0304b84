#include "prnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace prnet {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'N', 'C'};

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 1 : 2;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                 std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>;
    const Bits bits = std::bit_cast<Bits>(v);
    for (std::size_t k = 0; k < sizeof(U); ++k)
      out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void values(const T* v, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) le(v[k]);
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw CheckpointError("checkpoint truncated at byte offset " +
                            std::to_string(pos) + " while reading " + what +
                            " (" + std::to_string(n) + " bytes needed, " +
                            std::to_string(buf.size() - pos) + " left)");
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                 std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>;
    Bits bits = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k)
      bits |= static_cast<Bits>(static_cast<Bits>(buf[pos + k]) << (8 * k));
    pos += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  std::string str(const char* what) {
    const auto n = le<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  // Reads n values stored with `tag`, converting to T.
  template <typename T>
  void values(std::uint8_t tag, T* dst, std::size_t n, const char* what) {
    for (std::size_t k = 0; k < n; ++k)
      dst[k] = tag == 1 ? static_cast<T>(le<float>(what))
                        : static_cast<T>(le<double>(what));
  }

  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

std::string config_text(const ModelConfig& c) {
  std::string s;
  for (const auto& [k, v] : c.to_pairs()) s += k + "=" + v + "\n";
  return s;
}

ModelConfig parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    pairs.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return ModelConfig::from_pairs(pairs);
}

ModelConfig read_header(Reader& r) {
  r.need(4, "magic");
  if (std::memcmp(r.buf.data(), kMagic, 4) != 0)
    throw CheckpointError("bad checkpoint magic at byte offset 0");
  r.pos = 4;
  const std::size_t at = r.pos;
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version) + " at byte offset " +
                          std::to_string(at));
  return parse_config_text(r.str("config"));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Model<T>& model,
                                               const TrainState& state) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le(kCheckpointVersion);
  w.str(config_text(model.config()));
  w.le(static_cast<std::uint64_t>(state.epoch));
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());

  const auto params = model.store().parameters();
  w.le(static_cast<std::uint32_t>(params.size()));
  for (const Parameter<T>* p : params) {
    w.str(p->name);
    w.le(dtype_tag<T>());
    const Shape& s = p->value.shape();
    w.le(static_cast<std::uint32_t>(s.rank()));
    for (std::size_t d = 0; d < s.rank(); ++d)
      w.le(static_cast<std::uint64_t>(s[d]));
    w.values(p->value.data().data(), p->value.numel());
    w.values(p->momentum.data(), p->momentum.size());
  }
  const auto norms = model.store().norm_states();
  w.le(static_cast<std::uint32_t>(norms.size()));
  for (const NamedNormState<T>* n : norms) {
    w.str(n->name);
    w.le(dtype_tag<T>());
    w.le(static_cast<std::uint64_t>(n->state.running_mean.size()));
    w.values(n->state.running_mean.data(), n->state.running_mean.size());
    w.values(n->state.running_var.data(), n->state.running_var.size());
  }
  return std::move(w.out);
}

template <typename T>
TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                  Model<T>& model) {
  Reader r(bytes);
  const ModelConfig stored = read_header(r);
  const auto diff = config_diff(stored, model.config());
  if (!diff.empty()) {
    std::string msg = "checkpoint config does not match the model:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw CheckpointError(msg);
  }
  TrainState state;
  state.epoch = r.le<std::uint64_t>("epoch");
  std::istringstream rng(r.str("generator state"));
  rng >> state.rng;
  if (!rng) throw CheckpointError("malformed generator state in checkpoint");

  auto& store = model.store();
  const auto count = r.le<std::uint32_t>("parameter count");
  if (count != store.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) +
                          " parameters, model has " +
                          std::to_string(store.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos;
    const std::string name = r.str("parameter name");
    Parameter<T>* p = store.find(name);
    if (!p)
      throw CheckpointError("unknown parameter '" + name + "' at byte offset " +
                            std::to_string(at));
    const auto tag = r.le<std::uint8_t>("dtype");
    if (tag != 1 && tag != 2)
      throw CheckpointError("bad dtype tag " + std::to_string(tag) +
                            " at byte offset " + std::to_string(r.pos - 1));
    const auto rank = r.le<std::uint32_t>("rank");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::size_t>(r.le<std::uint64_t>("dims"));
    if (!(Shape(dims) == p->value.shape()))
      throw CheckpointError("parameter '" + name + "' has shape " +
                            Shape(dims).str() + " in the checkpoint, " +
                            p->value.shape().str() + " in the model");
    r.values(tag, p->value.mutable_data().data(), p->value.numel(), "values");
    r.values(tag, p->momentum.data(), p->momentum.size(), "momentum");
  }
  const auto norm_count = r.le<std::uint32_t>("norm count");
  const auto norms = store.norm_states();
  if (norm_count != norms.size())
    throw CheckpointError("checkpoint holds " + std::to_string(norm_count) +
                          " normalisation states, model has " +
                          std::to_string(norms.size()));
  for (std::uint32_t i = 0; i < norm_count; ++i) {
    const std::size_t at = r.pos;
    const std::string name = r.str("norm name");
    NamedNormState<T>* target = nullptr;
    for (auto* n : norms)
      if (n->name == name) target = n;
    if (!target)
      throw CheckpointError("unknown normalisation state '" + name +
                            "' at byte offset " + std::to_string(at));
    const auto tag = r.le<std::uint8_t>("dtype");
    const auto channels = r.le<std::uint64_t>("channels");
    if (channels != target->state.running_mean.size())
      throw CheckpointError("normalisation state '" + name + "' has " +
                            std::to_string(channels) + " channels");
    r.values(tag, target->state.running_mean.data(), channels, "running mean");
    r.values(tag, target->state.running_var.data(), channels, "running var");
  }
  if (r.pos != bytes.size())
    throw CheckpointError("trailing data at byte offset " +
                          std::to_string(r.pos));
  return state;
}

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model,
                     const TrainState& state) {
  const auto bytes = serialize_checkpoint(model, state);
  // Write beside the target first so a failed write keeps the previous file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw CheckpointError("cannot move checkpoint into place at '" + path + "'");
}

template <typename T>
TrainState load_checkpoint(const std::string& path, Model<T>& model) {
  return deserialize_checkpoint(read_file(path), model);
}

ModelConfig read_checkpoint_config(const std::string& path) {
  const auto bytes = read_file(path);
  Reader r(bytes);
  return read_header(r);
}

#define PRNET_INSTANTIATE_CHECKPOINT(T)                                      \
  template std::vector<std::uint8_t> serialize_checkpoint(const Model<T>&,  \
                                                          const TrainState&); \
  template TrainState deserialize_checkpoint(                                \
      const std::vector<std::uint8_t>&, Model<T>&);                          \
  template void save_checkpoint(const std::string&, const Model<T>&,         \
                                const TrainState&);                          \
  template TrainState load_checkpoint(const std::string&, Model<T>&);

PRNET_INSTANTIATE_CHECKPOINT(float)
PRNET_INSTANTIATE_CHECKPOINT(double)

}  // namespace prnet
