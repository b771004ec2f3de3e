#include "constyle/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "constyle/errors.hpp"

namespace constyle {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void tensor(const std::string& name, const Tensor& t) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    pod<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) pod<std::uint64_t>(d);
    bytes(t.data().data(), t.numel() * sizeof(float));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string name) : in_(in), name_(std::move(name)) {
    in_.seekg(0, std::ios::end);
    remaining_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0);
  }
  void bytes(void* p, std::uint64_t n) {
    if (n > remaining_) throw CheckpointError("checkpoint " + name_ + " is truncated");
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw CheckpointError("checkpoint " + name_ + " could not be read");
    remaining_ -= n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string string(std::uint64_t n) {
    if (n > remaining_) throw CheckpointError("checkpoint " + name_ + " is truncated");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::uint64_t remaining() const { return remaining_; }

 private:
  std::ifstream& in_;
  std::string name_;
  std::uint64_t remaining_ = 0;
};

void check_params(const ParameterSet<float>& params, const std::string& prefix,
                  const std::map<std::string, Tensor>& stored) {
  for (const auto& [name, p] : params) {
    auto it = stored.find(prefix + name);
    if (it == stored.end()) throw CheckpointError("checkpoint lacks tensor " + prefix + name);
    if (it->second.shape() != p.shape()) {
      throw CheckpointError("checkpoint tensor " + prefix + name + " has shape " + shape_str(it->second.shape()) +
                            ", model expects " + shape_str(p.shape()));
    }
  }
}

void load_params(ParameterSet<float>& params, const std::string& prefix, const std::map<std::string, Tensor>& stored) {
  for (auto& [name, p] : params) {
    const auto& src = stored.at(prefix + name);
    std::copy(src.data().begin(), src.data().end(), p.mutable_data().begin());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer) {
  const Model& model = trainer.model();
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& [name, p] : model.encoder.parameters()) tensors.emplace_back("encoder." + name, p);
  for (const auto& [name, p] : model.momentum.parameters()) tensors.emplace_back("momentum." + name, p);
  for (const auto& [name, p] : model.net.parameters()) tensors.emplace_back("net." + name, p);
  for (const auto& [key, mom] : trainer.optimizer().moments()) {
    tensors.emplace_back("adam.m." + key, mom.m);
    tensors.emplace_back("adam.v." + key, mom.v);
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    Writer w(out);
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.pod<std::uint64_t>(tensors.size());
    for (const auto& [name, t] : tensors) w.tensor(name, t);

    const auto& q = model.queue;
    const auto codes = q.contents();
    w.pod<std::uint64_t>(trainer.iteration());
    w.pod<std::uint64_t>(trainer.optimizer().steps());
    w.pod<std::uint64_t>(q.capacity());
    w.pod<std::uint64_t>(q.dim());
    w.pod<std::uint64_t>(q.size());
    w.pod<std::uint64_t>(q.total_pushed());
    w.bytes(codes.data(), codes.size() * sizeof(double));

    const std::string echo = to_json(trainer.config()).dump();
    w.pod<std::uint64_t>(echo.size());
    w.bytes(echo.data(), echo.size());
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint " + path.string() + " has version " + std::to_string(version) +
                                 ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  CheckpointData data;
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.string(r.pod<std::uint32_t>());
    const auto rank = r.pod<std::uint8_t>();
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.pod<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / sizeof(float)) throw CheckpointError("checkpoint " + path.string() + " is truncated");
    std::vector<float> values(n);
    r.bytes(values.data(), n * sizeof(float));
    data.tensors.emplace_back(std::move(name), Tensor(shape, std::move(values)));
  }
  data.iteration = r.pod<std::uint64_t>();
  data.optimizer_steps = r.pod<std::uint64_t>();
  data.queue_capacity = r.pod<std::uint64_t>();
  data.queue_dim = r.pod<std::uint64_t>();
  const auto length = r.pod<std::uint64_t>();
  data.queue_total_pushed = r.pod<std::uint64_t>();
  if (length > data.queue_capacity || (data.queue_dim != 0 && length > r.remaining() / (data.queue_dim * 8))) {
    throw CheckpointError("checkpoint " + path.string() + " has an inconsistent queue block");
  }
  data.queue_codes.resize(length * data.queue_dim);
  r.bytes(data.queue_codes.data(), data.queue_codes.size() * sizeof(double));
  const std::string echo = r.string(r.pod<std::uint64_t>());
  try {
    data.config = nlohmann::json::parse(echo);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " has a malformed config echo: " + e.what());
  }
  if (r.remaining() != 0) throw CheckpointError("checkpoint " + path.string() + " has trailing bytes");
  return data;
}

void restore_trainer(Trainer& trainer, const CheckpointData& data) {
  Model& model = trainer.model();
  std::map<std::string, Tensor> stored(data.tensors.begin(), data.tensors.end());
  check_params(model.encoder.parameters(), "encoder.", stored);
  check_params(model.momentum.parameters(), "momentum.", stored);
  check_params(model.net.parameters(), "net.", stored);
  if (data.queue_capacity != model.queue.capacity() || data.queue_dim != model.queue.dim()) {
    throw CheckpointError("checkpoint queue is " + std::to_string(data.queue_capacity) + "x" +
                          std::to_string(data.queue_dim) + ", model queue is " +
                          std::to_string(model.queue.capacity()) + "x" + std::to_string(model.queue.dim()));
  }
  std::map<std::string, AdamW::Moments> moments;
  for (const auto& [name, t] : data.tensors) {
    if (name.rfind("adam.m.", 0) == 0) {
      const std::string key = name.substr(7);
      auto v = stored.find("adam.v." + key);
      if (v == stored.end()) throw CheckpointError("checkpoint lacks tensor adam.v." + key);
      moments.emplace(key, AdamW::Moments{t.detach(), v->second.detach()});
    }
  }
  load_params(model.encoder.parameters(), "encoder.", stored);
  load_params(model.momentum.parameters(), "momentum.", stored);
  load_params(model.net.parameters(), "net.", stored);
  trainer.optimizer().restore(data.optimizer_steps, std::move(moments));
  model.queue.restore(data.queue_codes, data.queue_total_pushed);
  trainer.set_iteration(data.iteration);
}

Trainer load_trainer(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint(path);
  TrainConfig config;
  try {
    config = config_from_json(data.config);
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint " + path.string() + " carries an invalid config: " + e.what());
  }
  Trainer trainer(config);
  restore_trainer(trainer, data);
  return trainer;
}

}  // namespace constyle
