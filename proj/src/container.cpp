#include "mofit/container.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include "mofit/errors.hpp"

namespace mofit {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'I', 'T'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* data, std::size_t n) {
  if (std::fwrite(data, 1, n, f) != n) throw IoError("short write");
}

void read_bytes(std::FILE* f, void* data, std::size_t n) {
  if (std::fread(data, 1, n, f) != n)
    throw FormatError("truncated container file");
}

template <typename T>
void write_pod(std::FILE* f, T value) {
  write_bytes(f, &value, sizeof(T));
}

template <typename T>
T read_pod(std::FILE* f) {
  T value;
  read_bytes(f, &value, sizeof(T));
  return value;
}

}  // namespace

std::uint64_t ArrayRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

bool Container::has(const std::string& name) const {
  for (const auto& [k, v] : records_)
    if (k == name) return true;
  return false;
}

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  out.reserve(records_.size());
  for (const auto& [k, v] : records_) out.push_back(k);
  return out;
}

ArrayRecord& Container::insert(const std::string& name) {
  for (auto& [k, v] : records_)
    if (k == name) {
      v = ArrayRecord{};
      return v;
    }
  records_.emplace_back(name, ArrayRecord{});
  return records_.back().second;
}

void Container::put_matrix(const std::string& name, const Eigen::MatrixXd& m) {
  ArrayRecord& rec = insert(name);
  rec.dtype = 1;
  rec.dims = {static_cast<std::uint64_t>(m.rows()),
              static_cast<std::uint64_t>(m.cols())};
  rec.f64.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      rec.f64[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
}

void Container::put_vector(const std::string& name, const Eigen::VectorXd& v) {
  ArrayRecord& rec = insert(name);
  rec.dtype = 1;
  rec.dims = {static_cast<std::uint64_t>(v.size())};
  rec.f64.assign(v.data(), v.data() + v.size());
}

void Container::put_scalar(const std::string& name, double value) {
  ArrayRecord& rec = insert(name);
  rec.dtype = 1;
  rec.dims = {};
  rec.f64 = {value};
}

void Container::put_ints(const std::string& name,
                         const std::vector<std::int64_t>& v) {
  ArrayRecord& rec = insert(name);
  rec.dtype = 2;
  rec.dims = {static_cast<std::uint64_t>(v.size())};
  rec.i64 = v;
}

const ArrayRecord& Container::get_record(const std::string& name) const {
  for (const auto& [k, v] : records_)
    if (k == name) return v;
  throw FormatError("container record not found: " + name);
}

Eigen::MatrixXd Container::get_matrix(const std::string& name) const {
  const ArrayRecord& rec = get_record(name);
  if (rec.dtype != 1 || rec.dims.size() != 2)
    throw FormatError("record is not an f64 matrix: " + name);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rec.dims[0]),
                    static_cast<Eigen::Index>(rec.dims[1]));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = rec.f64[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

Eigen::VectorXd Container::get_vector(const std::string& name) const {
  const ArrayRecord& rec = get_record(name);
  if (rec.dtype != 1 || rec.dims.size() != 1)
    throw FormatError("record is not an f64 vector: " + name);
  return Eigen::Map<const Eigen::VectorXd>(
      rec.f64.data(), static_cast<Eigen::Index>(rec.f64.size()));
}

double Container::get_scalar(const std::string& name) const {
  const ArrayRecord& rec = get_record(name);
  if (rec.dtype != 1 || !rec.dims.empty() || rec.f64.size() != 1)
    throw FormatError("record is not an f64 scalar: " + name);
  return rec.f64[0];
}

std::vector<std::int64_t> Container::get_ints(const std::string& name) const {
  const ArrayRecord& rec = get_record(name);
  if (rec.dtype != 2 || rec.dims.size() != 1)
    throw FormatError("record is not an i64 vector: " + name);
  return rec.i64;
}

void Container::save(const std::string& path) const {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path);
  write_bytes(f.get(), kMagic, 4);
  write_pod<std::uint32_t>(f.get(), kVersion);
  for (const auto& [name, rec] : records_) {
    write_pod<std::uint32_t>(f.get(), static_cast<std::uint32_t>(name.size()));
    write_bytes(f.get(), name.data(), name.size());
    write_pod<std::uint32_t>(f.get(), rec.dtype);
    write_pod<std::uint32_t>(f.get(), static_cast<std::uint32_t>(rec.dims.size()));
    for (auto d : rec.dims) write_pod<std::uint64_t>(f.get(), d);
    if (rec.dtype == 1) {
      write_bytes(f.get(), rec.f64.data(), rec.f64.size() * sizeof(double));
    } else {
      write_bytes(f.get(), rec.i64.data(), rec.i64.size() * sizeof(std::int64_t));
    }
  }
  if (std::fflush(f.get()) != 0) throw IoError("flush failed: " + path);
}

Container Container::load(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open for reading: " + path);
  char magic[4];
  read_bytes(f.get(), magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad container magic: " + path);
  const auto version = read_pod<std::uint32_t>(f.get());
  if (version != kVersion)
    throw FormatError("unsupported container version " + std::to_string(version));

  Container out;
  for (;;) {
    std::uint32_t name_len;
    const std::size_t got = std::fread(&name_len, 1, sizeof(name_len), f.get());
    if (got == 0) break;  // clean EOF between records
    if (got != sizeof(name_len)) throw FormatError("truncated record header");
    std::string name(name_len, '\0');
    read_bytes(f.get(), name.data(), name_len);
    ArrayRecord rec;
    rec.dtype = read_pod<std::uint32_t>(f.get());
    if (rec.dtype != 1 && rec.dtype != 2)
      throw FormatError("unknown dtype code in record: " + name);
    const auto rank = read_pod<std::uint32_t>(f.get());
    if (rank > 4) throw FormatError("implausible rank in record: " + name);
    rec.dims.resize(rank);
    for (auto& d : rec.dims) d = read_pod<std::uint64_t>(f.get());
    const std::uint64_t count = rec.element_count();
    if (rec.dtype == 1) {
      rec.f64.resize(count);
      read_bytes(f.get(), rec.f64.data(), count * sizeof(double));
    } else {
      rec.i64.resize(count);
      read_bytes(f.get(), rec.i64.data(), count * sizeof(std::int64_t));
    }
    out.records_.emplace_back(std::move(name), std::move(rec));
  }
  return out;
}

}  // namespace mofit
