#include "mesm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mesm {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

namespace {

constexpr char kMagic[8] = {'M', 'E', 'S', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename V>
  void pod(V v) {
    bytes_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes_ += s;
  }
  void floats(const ad::Matrix<float>& m) {
    bytes_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(ad::Matrix<float>& m) {
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(float);
    need(n);
    std::memcpy(m.data(), bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::size_t> sorted_by_name(const nn::ParamStore<float>& store) {
  std::vector<std::size_t> order(store.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return store.entries()[a].first < store.entries()[b].first; });
  return order;
}

}  // namespace

std::string checkpoint_bytes(const MesmModel<float>& model, const AdamState<float>& state) {
  const auto& store = model.params();
  if (state.m.size() != store.size() || state.v.size() != store.size())
    throw CheckpointError("optimizer state does not match the model");
  Writer w;
  for (char c : kMagic) w.pod(c);
  w.pod(kVersion);
  const std::string config = model.config().serialize();
  w.str(config);
  w.str(model.config().hash());
  w.pod<std::int32_t>(model.dims().video_dim);
  w.pod<std::int32_t>(model.dims().text_dim);
  w.pod<std::int32_t>(model.dims().vocab_size);
  w.pod<std::int64_t>(state.step);
  w.pod<std::uint64_t>(store.size());
  for (std::size_t i : sorted_by_name(store)) {
    const auto& [name, p] = store.entries()[i];
    w.str(name);
    w.pod<std::int64_t>(p.rows());
    w.pod<std::int64_t>(p.cols());
    w.floats(p.value());
    w.floats(state.m[i]);
    w.floats(state.v[i]);
  }
  return w.take();
}

void save_checkpoint(const std::filesystem::path& path, const MesmModel<float>& model, const AdamState<float>& state) {
  const std::string bytes = checkpoint_bytes(model, state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint_bytes(const std::string& bytes) {
  Reader r(bytes);
  for (char c : kMagic)
    if (r.pod<char>() != c) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  LoadedCheckpoint out;
  const std::string config_text = r.str();
  const std::string hash = r.str();
  out.config = RunConfig::parse(config_text);
  if (out.config.hash() != hash) throw CheckpointError("config hash mismatch");
  out.dims.video_dim = r.pod<std::int32_t>();
  out.dims.text_dim = r.pod<std::int32_t>();
  out.dims.vocab_size = r.pod<std::int32_t>();
  out.model = std::make_unique<MesmModel<float>>(out.config, out.dims, out.config.seed);
  auto& store = out.model->params();
  out.state.step = r.pod<std::int64_t>();
  const auto count = r.pod<std::uint64_t>();
  if (count != store.size())
    throw CheckpointError("checkpoint has " + std::to_string(count) + " parameters, model has " +
                          std::to_string(store.size()));
  out.state.m.resize(store.size());
  out.state.v.resize(store.size());
  for (std::size_t i : sorted_by_name(store)) {
    const auto& [name, p] = store.entries()[i];
    const std::string stored = r.str();
    if (stored != name) throw CheckpointError("parameter " + stored + " where " + name + " was expected");
    const auto rows = r.pod<std::int64_t>();
    const auto cols = r.pod<std::int64_t>();
    if (rows != p.rows() || cols != p.cols()) throw CheckpointError("shape mismatch for " + name);
    ad::Var<float> v = p;
    r.floats(v.mutable_value());
    out.state.m[i].resize(rows, cols);
    out.state.v[i].resize(rows, cols);
    r.floats(out.state.m[i]);
    r.floats(out.state.v[i]);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_checkpoint_bytes(ss.str());
}

}  // namespace mesm
