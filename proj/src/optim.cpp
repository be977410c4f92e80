#include "vedet/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "vedet/errors.hpp"

namespace vedet {

double lr_at(long iter, long total_iters, const ScheduleConfig& cfg) {
  if (cfg.warmup_iters > 0 && iter < cfg.warmup_iters) {
    const double k = static_cast<double>(iter) / cfg.warmup_iters;
    return cfg.lr_init * (1.0 / 3.0 + (2.0 / 3.0) * k);
  }
  const long span = total_iters - cfg.warmup_iters;
  if (span <= 0) return cfg.lr_final;
  const double t = std::min(1.0, static_cast<double>(iter - cfg.warmup_iters) / static_cast<double>(span));
  return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(3.14159265358979323846 * t));
}

AdamW::AdamW(nn::ParameterStore& store, const AdamWConfig& cfg) : store_(&store), cfg_(cfg) {
  for (const nn::Parameter* p : store.all()) {
    m_[p->name] = nn::Mat::Zero(p->value.rows(), p->value.cols());
    v_[p->name] = nn::Mat::Zero(p->value.rows(), p->value.cols());
  }
}

double AdamW::step(double lr) {
  double sq = 0.0;
  for (const nn::Parameter* p : store_->all()) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
  const double clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (nn::Parameter* p : store_->all()) {
    const double plr = p->backbone ? lr * cfg_.backbone_lr_mult : lr;
    nn::Mat& m = m_.at(p->name);
    nn::Mat& v = v_.at(p->name);
    const nn::Mat g = p->grad * clip;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    p->value *= 1.0 - plr * cfg_.weight_decay;
    p->value.array() -= plr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
  }
  return norm;
}

std::map<std::string, nn::Mat> AdamW::state() const {
  std::map<std::string, nn::Mat> out;
  for (const auto& [k, m] : m_) out["adam.m/" + k] = m;
  for (const auto& [k, v] : v_) out["adam.v/" + k] = v;
  return out;
}

void AdamW::load_state(const std::map<std::string, nn::Mat>& state, long steps) {
  for (auto& [k, m] : m_) {
    const auto it = state.find("adam.m/" + k);
    if (it == state.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw ParseError("checkpoint: optimizer state for '" + k + "' missing or misshapen");
    }
    m = it->second;
  }
  for (auto& [k, v] : v_) {
    const auto it = state.find("adam.v/" + k);
    if (it == state.end() || it->second.rows() != v.rows() || it->second.cols() != v.cols()) {
      throw ParseError("checkpoint: optimizer state for '" + k + "' missing or misshapen");
    }
    v = it->second;
  }
  step_ = steps;
}

// Binary layout, all integers little-endian:
//   "VDETCKPT" u32 version u32 tensor_count u32 meta_count
//   tensors: u32 name_len, name, u64 rows, u64 cols, rows*cols f64 row-major
//   meta:    u32 name_len, name, i64 value
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'V', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& file) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError(file + ": truncated checkpoint");
  return v;
}

void put_name(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_name(std::istream& in, const std::string& file) {
  const auto n = get<std::uint32_t>(in, file);
  if (n > 4096) throw ParseError(file + ": implausible name length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw ParseError(file + ": truncated checkpoint");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [name, m] : ckpt.tensors) {
      put_name(out, name);
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    for (const auto& [name, v] : ckpt.meta) {
      put_name(out, name);
      put<std::int64_t>(out, v);
    }
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(file + ": cannot open");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError(file + ": not a checkpoint");
  const auto version = get<std::uint32_t>(in, file);
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError(file + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto tensors = get<std::uint32_t>(in, file);
  const auto metas = get<std::uint32_t>(in, file);
  Checkpoint c;
  for (std::uint32_t i = 0; i < tensors; ++i) {
    const std::string name = get_name(in, file);
    const auto rows = get<std::uint64_t>(in, file);
    const auto cols = get<std::uint64_t>(in, file);
    if (rows > (1u << 28) || cols > (1u << 28) || rows * cols > (1ull << 30)) {
      throw ParseError(file + ": implausible shape for '" + name + "'");
    }
    nn::Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw ParseError(file + ": truncated tensor '" + name + "'");
    c.tensors.emplace(name, std::move(m));
  }
  for (std::uint32_t i = 0; i < metas; ++i) {
    const std::string name = get_name(in, file);
    c.meta[name] = get<std::int64_t>(in, file);
  }
  return c;
}

void store_to_checkpoint(const nn::ParameterStore& store, Checkpoint& ckpt) {
  for (const nn::Parameter* p : store.all()) ckpt.tensors[p->name] = p->value;
}

void checkpoint_to_store(const Checkpoint& ckpt, nn::ParameterStore& store) {
  for (nn::Parameter* p : store.all()) {
    const auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) throw ParseError("checkpoint: missing parameter '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw ParseError("checkpoint: shape mismatch for '" + p->name + "'");
    }
    p->value = it->second;
  }
}

}  // namespace vedet
