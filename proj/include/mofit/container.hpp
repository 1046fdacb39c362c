#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mofit {

// Binary array container used for models, datasets and checkpoints.
// Layout: "MFIT" magic, u32 version, then a sequence of named records:
//   u32 name_len, name bytes, u32 dtype (1 = f64, 2 = i64), u32 rank,
//   u64 dims[rank], row-major little-endian payload.
// Records keep insertion order so re-serialization is byte-exact.
struct ArrayRecord {
  std::uint32_t dtype = 1;
  std::vector<std::uint64_t> dims;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;

  std::uint64_t element_count() const;
};

class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;

  // f64 payloads. Matrices are serialized row-major regardless of Eigen's
  // in-memory order.
  void put_matrix(const std::string& name, const Eigen::MatrixXd& m);
  void put_vector(const std::string& name, const Eigen::VectorXd& v);
  void put_scalar(const std::string& name, double value);

  // i64 payloads (indices, parents, splits, seeds, meta words).
  void put_ints(const std::string& name, const std::vector<std::int64_t>& v);

  Eigen::MatrixXd get_matrix(const std::string& name) const;
  Eigen::VectorXd get_vector(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  std::vector<std::int64_t> get_ints(const std::string& name) const;

  const ArrayRecord& get_record(const std::string& name) const;

  void save(const std::string& path) const;
  static Container load(const std::string& path);

 private:
  ArrayRecord& insert(const std::string& name);
  std::vector<std::pair<std::string, ArrayRecord>> records_;
};

}  // namespace mofit
