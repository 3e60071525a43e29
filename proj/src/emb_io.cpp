#include "embkit/emb_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "embkit/error.hpp"
#include "embkit/fileutil.hpp"

namespace embkit {

static_assert(std::endian::native == std::endian::little,
              "EMB1 encoding assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  void take(void* dst, std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::parse, source_ + ": truncated EMB1 file at byte " + std::to_string(pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    take(&v, 4);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_emb1(const EmbeddingMatrix& matrix) {
  std::string out;
  out.reserve(16 + matrix.values().size() * 4 + matrix.rows() * 16);
  out.append(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  put_u32(out, static_cast<std::uint32_t>(matrix.dim()));
  const auto values = matrix.values();
  out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
  put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  for (const auto& id : matrix.ids()) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
  }
  out.push_back(matrix.normalized() ? '\1' : '\0');
  return out;
}

EmbeddingMatrix decode_emb1(const std::string& bytes, const std::string& source) {
  Reader in(bytes, source);
  char magic[4];
  in.take(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorKind::parse, source + ": not an EMB1 file (bad magic)");
  }
  const std::uint32_t n = in.u32();
  const std::uint32_t d = in.u32();
  const std::uint64_t count = static_cast<std::uint64_t>(n) * d;
  if (count * sizeof(float) > in.remaining()) {
    throw Error(ErrorKind::parse, source + ": EMB1 header claims more data than present");
  }
  std::vector<float> values(count);
  in.take(values.data(), count * sizeof(float));
  const std::uint32_t id_count = in.u32();
  if (id_count != n) {
    throw Error(ErrorKind::parse, source + ": EMB1 id table has " + std::to_string(id_count) +
                                      " entries for " + std::to_string(n) + " rows");
  }
  std::vector<std::string> ids(n);
  for (auto& id : ids) {
    const std::uint32_t len = in.u32();
    if (len > in.remaining()) throw Error(ErrorKind::parse, source + ": truncated EMB1 id table");
    id.resize(len);
    in.take(id.data(), len);
  }
  bool normalized = false;
  if (in.remaining() > 0) {
    char flag = 0;
    in.take(&flag, 1);
    if (flag != 0 && flag != 1) throw Error(ErrorKind::parse, source + ": bad EMB1 normalized flag");
    normalized = flag == 1;
  }
  if (in.remaining() != 0) throw Error(ErrorKind::parse, source + ": trailing bytes after EMB1 data");
  return EmbeddingMatrix(std::move(ids), d, std::move(values), normalized);
}

EmbeddingMatrix read_emb1(const std::filesystem::path& path) {
  return decode_emb1(read_file(path), path.string());
}

void write_emb1(const std::filesystem::path& path, const EmbeddingMatrix& matrix) {
  write_file_atomic(path, encode_emb1(matrix));
}

}  // namespace embkit
