// SPDX-License-Identifier: Apache-2.0

#include "krlm/params.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace krlm {

Parameter& ParameterStore::add(std::string name, Matrix init, bool trainable) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(init);
  p->trainable = trainable;
  p->zero_grad();
  Parameter& ref = *p;
  params_.emplace(std::move(name), std::move(p));
  return ref;
}

Parameter& ParameterStore::get(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return *it->second;
}

const Parameter& ParameterStore::get(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return *it->second;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& [_, p] : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) {
    if (p->trainable) p->zero_grad();
  }
}

std::size_t ParameterStore::scalar_count(bool trainable) const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) {
    if (p->trainable == trainable) n += static_cast<std::size_t>(p->value.size());
  }
  return n;
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::uint64_t ParameterStore::checksum(bool trainable) const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, p] : params_) {
    if (p->trainable != trainable) continue;
    fnv(h, name.data(), name.size());
    const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
    fnv(h, shape, sizeof(shape));
    fnv(h, p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return h;
}

GradientMap collect_gradients(ParameterStore& store) {
  GradientMap out;
  for (Parameter* p : store.trainable()) {
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
      out.emplace(p->name, Matrix::Zero(p->value.rows(), p->value.cols()));
    } else {
      out.emplace(p->name, p->grad);
    }
  }
  return out;
}

// AdamW -----------------------------------------------------------------------

AdamW::AdamW(OptimizerConfig cfg, ParameterStore& store) : cfg_(cfg), store_(&store) {
  if (cfg_.accumulation < 1) throw ContractError("optimizer: accumulation must be >= 1");
  if (cfg_.total_updates < 1) cfg_.total_updates = 1;
  for (Parameter* p : store.trainable()) {
    moments_.emplace(p->name, Moments{Matrix::Zero(p->value.rows(), p->value.cols()),
                                      Matrix::Zero(p->value.rows(), p->value.cols())});
  }
}

double AdamW::learning_rate(std::int64_t update) const {
  const auto warmup = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::ceil(cfg_.warmup_fraction * static_cast<double>(cfg_.total_updates))));
  if (update < warmup) {
    return cfg_.learning_rate * static_cast<double>(update + 1) / static_cast<double>(warmup);
  }
  return cfg_.learning_rate;
}

bool AdamW::step(const GradientMap& grads) {
  for (Parameter* p : store_->trainable()) {
    auto it = grads.find(p->name);
    if (it == grads.end()) throw ContractError("optimizer: missing gradient for " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw ContractError("optimizer: gradient shape mismatch for " + p->name);
    }
  }
  for (Parameter* p : store_->trainable()) {
    auto [slot, inserted] = pending_.try_emplace(p->name, grads.find(p->name)->second);
    if (!inserted) slot->second += grads.find(p->name)->second;
  }
  ++micro_steps_;
  if (micro_steps_ % cfg_.accumulation != 0) return false;

  const double lr = learning_rate(updates_);
  ++updates_;
  const double t = static_cast<double>(updates_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (Parameter* p : store_->trainable()) {
    Moments& m = moments_.at(p->name);
    const Matrix g = pending_.at(p->name) / static_cast<double>(cfg_.accumulation);
    m.first = cfg_.beta1 * m.first + (1.0 - cfg_.beta1) * g;
    m.second = cfg_.beta2 * m.second + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    // Decoupled weight decay.
    p->value *= (1.0 - lr * cfg_.weight_decay);
    p->value.array() -= lr * (m.first.array() / c1) / ((m.second.array() / c2).sqrt() + cfg_.epsilon);
  }
  pending_.clear();
  return true;
}

void AdamW::restore(std::int64_t micro_steps, std::int64_t updates,
                    std::map<std::string, Moments, std::less<>> moments) {
  for (const auto& [name, m] : moments_) {
    auto it = moments.find(name);
    if (it == moments.end()) throw ContractError("optimizer restore: missing moments for " + name);
    if (it->second.first.rows() != m.first.rows() || it->second.first.cols() != m.first.cols()) {
      throw ContractError("optimizer restore: shape mismatch for " + name);
    }
  }
  micro_steps_ = micro_steps;
  updates_ = updates;
  moments_ = std::move(moments);
  pending_.clear();
}

// Checkpoint container ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'K', 'R', 'L', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename T>
  void pod(T v) {
    v = to_le(v);
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(std::string_view s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void matrix(const Matrix& m) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    pod<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) pod<double>(m.data()[i]);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string where) : is_(is), where_(std::move(where)) {}
  template <typename T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw std::runtime_error("truncated checkpoint: " + where_);
    return to_le(v);
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    is_.read(s.data(), n);
    if (!is_) throw std::runtime_error("truncated checkpoint: " + where_);
    return s;
  }
  Matrix matrix() {
    const auto r = pod<std::uint32_t>();
    const auto c = pod<std::uint32_t>();
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = pod<double>();
    return m;
  }

 private:
  std::istream& is_;
  std::string where_;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  Writer w(os);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(ckpt.manifest.dump());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, e] : ckpt.tensors) {
    w.str(name);
    w.pod<std::uint8_t>(e.frozen ? 1 : 0);
    w.matrix(e.value);
  }
  w.pod<std::uint8_t>(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    w.pod<std::int64_t>(ckpt.optimizer->micro_steps);
    w.pod<std::int64_t>(ckpt.optimizer->updates);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.optimizer->moments.size()));
    for (const auto& [name, m] : ckpt.optimizer->moments) {
      w.str(name);
      w.matrix(m.first);
      w.matrix(m.second);
    }
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  Reader r(is, path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error(fmt::format("unsupported checkpoint version {} in {}", version, path.string()));
  }
  Checkpoint ckpt;
  ckpt.manifest = nlohmann::json::parse(r.str());
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    Checkpoint::Entry e;
    e.frozen = r.pod<std::uint8_t>() != 0;
    e.value = r.matrix();
    ckpt.tensors.emplace(std::move(name), std::move(e));
  }
  if (r.pod<std::uint8_t>() != 0) {
    CheckpointOptimizerState st;
    st.micro_steps = r.pod<std::int64_t>();
    st.updates = r.pod<std::int64_t>();
    const auto n = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.str();
      AdamW::Moments m;
      m.first = r.matrix();
      m.second = r.matrix();
      st.moments.emplace(std::move(name), std::move(m));
    }
    ckpt.optimizer = std::move(st);
  }
  return ckpt;
}

Checkpoint snapshot(const ParameterStore& store, const AdamW* optimizer, nlohmann::json manifest) {
  Checkpoint ckpt;
  ckpt.manifest = std::move(manifest);
  for (const Parameter* p : store.all()) {
    ckpt.tensors.emplace(p->name, Checkpoint::Entry{p->value, !p->trainable});
  }
  if (optimizer != nullptr) {
    CheckpointOptimizerState st;
    st.micro_steps = optimizer->micro_steps();
    st.updates = optimizer->updates();
    st.moments = optimizer->moments();
    ckpt.optimizer = std::move(st);
  }
  return ckpt;
}

void restore(ParameterStore& store, const Checkpoint& ckpt) {
  for (Parameter* p : store.all()) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint lacks parameter " + p->name);
    if (it->second.value.rows() != p->value.rows() || it->second.value.cols() != p->value.cols()) {
      throw std::runtime_error(fmt::format("checkpoint shape mismatch for {}: {}x{} vs {}x{}", p->name,
                                           it->second.value.rows(), it->second.value.cols(),
                                           p->value.rows(), p->value.cols()));
    }
    p->value = it->second.value;
  }
}

std::string hash_hex(std::string_view bytes) {
  std::uint64_t h = kFnvOffset;
  fnv(h, bytes.data(), bytes.size());
  return fmt::format("{:016x}", h);
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot hash missing file: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return hash_hex(ss.str());
}

Matrix uniform_init(Index rows, Index cols, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix gaussian_init(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace krlm
