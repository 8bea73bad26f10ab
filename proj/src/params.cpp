#include "shift/params.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "shift/error.hpp"

namespace shift::nn {

ParamTensor& ParamSet::add(const std::string& name, Matrix value, bool trainable) {
  require(!contains(name), ErrorCode::invalid_argument,
          "duplicate tensor name: " + name);
  tensors_.push_back(std::make_unique<ParamTensor>(name, std::move(value), trainable));
  index_[name] = tensors_.size() - 1;
  return *tensors_.back();
}

ParamTensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCode::unknown_id, "no tensor named " + name);
  return *tensors_[it->second];
}

const ParamTensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCode::unknown_id, "no tensor named " + name);
  return *tensors_[it->second];
}

ParamTensor* ParamSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : tensors_[it->second].get();
}

const ParamTensor* ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : tensors_[it->second].get();
}

std::size_t ParamSet::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& t : tensors_) {
    if (trainable_only && !t->trainable) continue;
    n += static_cast<std::size_t>(t->value.size());
  }
  return n;
}

void ParamSet::zero_grads() {
  for (auto& t : tensors_) t->zero_grad();
}

namespace {

constexpr char kMagic[8] = {'S', 'H', 'I', 'F', 'T', 'B', 'I', 'N'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void ParamSet::save(const std::string& path) const {
  nlohmann::json header;
  header["dtype"] = "f64";
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors_) {
    header["tensors"].push_back({{"name", t->name},
                                 {"rows", t->value.rows()},
                                 {"cols", t->value.cols()},
                                 {"trainable", t->trainable}});
  }
  std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io_error, "cannot open for writing: " + path);
  out.write(kMagic, 8);
  write_u64(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& t : tensors_) {
    // Row-major on disk regardless of Eigen's storage order.
    for (Eigen::Index r = 0; r < t->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t->value.cols(); ++c) {
        double v = t->value(r, c);
        static_assert(sizeof(double) == 8);
        char buf[8];
        std::memcpy(buf, &v, 8);
        out.write(buf, 8);
      }
    }
  }
  require(out.good(), ErrorCode::io_error, "write failed: " + path);
}

ParamSet ParamSet::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io_error, "cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorCode::io_error,
          "bad checkpoint magic in " + path);
  std::uint64_t header_len = read_u64(in);
  require(in.good() && header_len < (1ull << 30), ErrorCode::io_error,
          "bad checkpoint header length in " + path);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  require(in.good(), ErrorCode::io_error, "truncated checkpoint header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io_error, std::string("bad checkpoint header json: ") + e.what());
  }
  require(header.value("dtype", "") == "f64", ErrorCode::io_error,
          "unsupported checkpoint dtype");

  ParamSet set;
  for (const auto& spec : header.at("tensors")) {
    auto name = spec.at("name").get<std::string>();
    auto rows = spec.at("rows").get<Eigen::Index>();
    auto cols = spec.at("cols").get<Eigen::Index>();
    bool trainable = spec.value("trainable", true);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        char buf[8];
        in.read(buf, 8);
        double v;
        std::memcpy(&v, buf, 8);
        m(r, c) = v;
      }
    }
    require(in.good(), ErrorCode::io_error, "truncated tensor data in " + path);
    set.add(name, std::move(m), trainable);
  }
  return set;
}

Matrix glorot_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                   const std::string& name) {
  SplitMix64 rng(mix_seed(seed, hash64(name)));
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
  return m;
}

}  // namespace shift::nn
