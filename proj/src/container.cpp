#include "saelab/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace saelab {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

ParseError::ParseError(const std::string& what, std::size_t off)
    : std::runtime_error(what + " (at byte offset " + std::to_string(off) + ")"), offset(off) {}

namespace {

using Eigen::Index;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void f32(double v) { put(static_cast<float>(v)); }
  template <typename Derived>
  void f32_block(const Eigen::DenseBase<Derived>& m) {
    for (Index c = 0; c < m.cols(); ++c)
      for (Index r = 0; r < m.rows(); ++r) f32(m(r, c));
  }
  void header(Role role, std::uint32_t m, std::uint32_t d, std::uint32_t n) {
    buf_.insert(buf_.end(), {'S', 'A', 'E', 'C'});
    put(kContainerVersion);
    put(static_cast<std::uint8_t>(role));
    put(m);
    put(d);
    put(n);
  }
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    buf_.assign(std::istreambuf_iterator<char>(in), {});
  }
  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > buf_.size()) throw ParseError(std::string("truncated file while reading ") + what, pos_);
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  double f32(const char* what) { return static_cast<double>(get<float>(what)); }
  Eigen::MatrixXd f32_block(Index rows, Index cols, const char* what) {
    const std::size_t need = static_cast<std::size_t>(rows * cols) * 4;
    if (pos_ + need > buf_.size()) throw ParseError(std::string("truncated file while reading ") + what, pos_);
    Eigen::MatrixXd m(rows, cols);
    for (Index c = 0; c < cols; ++c)
      for (Index r = 0; r < rows; ++r) m(r, c) = f32(what);
    return m;
  }
  ContainerHeader header() {
    if (buf_.size() < 4 || std::memcmp(buf_.data(), "SAEC", 4) != 0) throw ParseError("bad magic, expected SAEC", 0);
    pos_ = 4;
    ContainerHeader h;
    h.version = get<std::uint32_t>("version");
    if (h.version != kContainerVersion)
      throw ParseError("unsupported container version " + std::to_string(h.version), pos_ - 4);
    const auto role = get<std::uint8_t>("role");
    if (role > 2) throw ParseError("unknown role tag " + std::to_string(role), pos_ - 1);
    h.role = static_cast<Role>(role);
    h.m = get<std::uint32_t>("m");
    h.d = get<std::uint32_t>("d");
    h.n = get<std::uint32_t>("n");
    return h;
  }
  void expect_role(const ContainerHeader& h, Role role) const {
    if (h.role != role)
      throw ParseError("role tag " + std::to_string(static_cast<int>(h.role)) + " where " +
                           std::to_string(static_cast<int>(role)) + " was expected",
                       8);
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw ParseError("trailing bytes after payload", pos_);
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFull) throw std::invalid_argument(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

ContainerHeader read_header(const std::filesystem::path& path) {
  Reader r(path);
  return r.header();
}

void write_dictionary(const std::filesystem::path& path, const Dictionary& dict) {
  Writer w;
  w.header(Role::Dictionary, checked_u32(dict.rows(), "m"), checked_u32(dict.cols(), "d"), 0);
  w.f32_block(dict);
  w.save(path);
}

Dictionary read_dictionary(const std::filesystem::path& path) {
  Reader r(path);
  const auto h = r.header();
  r.expect_role(h, Role::Dictionary);
  Dictionary d = r.f32_block(h.m, h.d, "dictionary entries");
  r.expect_end();
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  Writer w;
  const bool codes = data.has_codes();
  w.header(Role::Dataset, checked_u32(data.m(), "m"), codes ? checked_u32(data.codes.dim, "d") : 0,
           checked_u32(data.n(), "n"));
  w.f32_block(data.X);
  if (codes) {
    for (std::size_t i = 0; i < data.n(); ++i) {
      const auto sup = data.codes.support(i);
      const auto val = data.codes.coefficients(i);
      if (sup.size() > 0xFFFF) throw std::invalid_argument("sparse code longer than u16");
      w.put(static_cast<std::uint16_t>(sup.size()));
      for (std::size_t t = 0; t < sup.size(); ++t) {
        w.put(sup[t]);
        w.f32(val[t]);
      }
    }
  }
  w.save(path);
}

Dataset read_dataset(const std::filesystem::path& path) {
  Reader r(path);
  const auto h = r.header();
  r.expect_role(h, Role::Dataset);
  Dataset ds;
  ds.X = r.f32_block(h.m, h.n, "samples");
  if (h.d > 0) {
    ds.codes.dim = h.d;
    ds.codes.offsets.assign(1, 0);
    for (std::uint32_t i = 0; i < h.n; ++i) {
      const auto k = r.get<std::uint16_t>("code length");
      for (std::uint16_t t = 0; t < k; ++t) {
        const std::size_t at = r.pos();
        const auto idx = r.get<std::uint32_t>("code index");
        if (idx >= h.d) throw ParseError("code index " + std::to_string(idx) + " out of range", at);
        ds.codes.indices.push_back(idx);
        ds.codes.values.push_back(r.f32("code value"));
      }
      ds.codes.offsets.push_back(ds.codes.indices.size());
    }
  }
  r.expect_end();
  return ds;
}

void write_model(const std::filesystem::path& path, const SaeModel& model) {
  model.validate();
  Writer w;
  w.header(Role::Model, checked_u32(model.m(), "m"), checked_u32(model.d_sae(), "d_sae"), 0);
  const auto& p = model.params;
  w.put(static_cast<std::uint8_t>(model.arch));
  w.put(checked_u32(p.k, "k"));
  w.f32(p.ema_threshold);
  w.f32(p.ema_decay);
  w.put(static_cast<std::uint8_t>(p.ema_initialized ? 1 : 0));
  w.f32(p.sparsity_coeff);
  w.f32(p.p_current);
  w.f32(p.p_end);
  w.f32(p.lambda_s);
  w.put(checked_u32(p.anneal_interval, "anneal_interval"));
  w.f32(p.target_l0);
  w.f32(p.bandwidth);
  w.f32(p.initial_threshold);
  w.f32_block(model.W_enc);
  w.f32_block(model.b_enc);
  w.f32_block(model.W_dec);
  w.f32_block(model.b_dec);
  if (model.arch == Arch::Gated) {
    w.f32_block(model.r_mag);
    w.f32_block(model.b_gate);
  }
  if (model.arch == Arch::JumpReLU) w.f32_block(model.threshold);
  w.save(path);
}

SaeModel read_model(const std::filesystem::path& path) {
  Reader r(path);
  const auto h = r.header();
  r.expect_role(h, Role::Model);
  SaeModel model;
  const std::size_t arch_at = r.pos();
  const auto arch = r.get<std::uint8_t>("arch tag");
  if (arch > static_cast<std::uint8_t>(Arch::JumpReLU)) throw ParseError("unknown arch tag", arch_at);
  model.arch = static_cast<Arch>(arch);
  auto& p = model.params;
  p.k = r.get<std::uint32_t>("k");
  p.ema_threshold = r.f32("ema_threshold");
  p.ema_decay = r.f32("ema_decay");
  p.ema_initialized = r.get<std::uint8_t>("ema_initialized") != 0;
  p.sparsity_coeff = r.f32("sparsity_coeff");
  p.p_current = r.f32("p_current");
  p.p_end = r.f32("p_end");
  p.lambda_s = r.f32("lambda_s");
  p.anneal_interval = r.get<std::uint32_t>("anneal_interval");
  p.target_l0 = r.f32("target_l0");
  p.bandwidth = r.f32("bandwidth");
  p.initial_threshold = r.f32("initial_threshold");
  const Index m = h.m, d = h.d;
  model.W_enc = r.f32_block(d, m, "W_enc");
  model.b_enc = r.f32_block(d, 1, "b_enc");
  model.W_dec = r.f32_block(m, d, "W_dec");
  model.b_dec = r.f32_block(m, 1, "b_dec");
  if (model.arch == Arch::Gated) {
    model.r_mag = r.f32_block(d, 1, "r_mag");
    model.b_gate = r.f32_block(d, 1, "b_gate");
  }
  if (model.arch == Arch::JumpReLU) model.threshold = r.f32_block(d, 1, "thresholds");
  r.expect_end();
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("invalid model: ") + e.what(), r.pos());
  }
  return model;
}

Dataset ingest_activations(const std::filesystem::path& path, std::size_t m) {
  if (m == 0) throw std::invalid_argument("ingest_activations: m must be positive");
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) throw std::runtime_error("cannot stat '" + path.string() + "': " + ec.message());
  if (bytes == 0) throw std::invalid_argument("ingest_activations: empty activation file");
  if (bytes % (4 * m) != 0)
    throw std::invalid_argument("ingest_activations: file size " + std::to_string(bytes) +
                                " is not a multiple of 4*m = " + std::to_string(4 * m));
  const std::size_t n = bytes / (4 * m);
  std::ifstream in(path, std::ios::binary);
  std::vector<float> raw(m * n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("read failed for '" + path.string() + "'");
  Dataset ds;
  ds.X = Eigen::Map<Eigen::MatrixXf>(raw.data(), static_cast<Index>(m), static_cast<Index>(n)).cast<double>();
  return ds;
}

void write_raw_activations(const std::filesystem::path& path, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXf xf = x.cast<float>();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(xf.data()), static_cast<std::streamsize>(xf.size() * 4));
}

}  // namespace saelab
