#include "convformer/serialize.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace convformer {

namespace {

class Reader {
 public:
  Reader(std::istream& is, std::string context) : is_(is), context_(std::move(context)) {}

  std::uint64_t offset() const { return offset_; }

  void bytes(void* dst, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw ParseError(context_ + ": truncated while reading " + what + " at byte offset " +
                       std::to_string(offset_));
    }
    offset_ += n;
  }

  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }

  std::uint16_t u16le(const char* what) {
    std::uint8_t b[2];
    bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32le(const char* what) {
    std::uint8_t b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  bool at_eof() {
    is_.peek();
    return is_.eof();
  }

  const std::string& context() const { return context_; }

 private:
  std::istream& is_;
  std::string context_;
  std::uint64_t offset_ = 0;
};

void put_u16le(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

void put_u32le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

void write_kjt1_body(std::ostream& os, const Tensor& t) {
  os.write("KJT1", 4);
  const std::uint8_t tag = t.dtype() == Dtype::F32 ? 0 : 1;
  os.write(reinterpret_cast<const char*>(&tag), 1);
  put_u32le(os, static_cast<std::uint32_t>(t.rank()));
  for (std::int64_t e : t.shape()) put_u32le(os, static_cast<std::uint32_t>(e));
  if (t.dtype() == Dtype::F32) {
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32le(os, bits);
    }
  } else {
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_u32le(os, static_cast<std::uint32_t>(bits & 0xffffffffULL));
      put_u32le(os, static_cast<std::uint32_t>(bits >> 32));
    }
  }
}

Tensor read_kjt1_body(Reader& r) {
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "KJT1", 4) != 0) {
    throw ParseError(r.context() + ": bad magic at byte offset " +
                     std::to_string(r.offset() - 4) + " (expected KJT1)");
  }
  const std::uint8_t tag = r.u8("dtype tag");
  if (tag > 1) {
    throw ParseError(r.context() + ": unknown dtype tag " + std::to_string(tag) +
                     " at byte offset " + std::to_string(r.offset() - 1));
  }
  const Dtype dt = tag == 0 ? Dtype::F32 : Dtype::F64;
  const std::uint32_t rank = r.u32le("rank");
  if (rank > 8) {
    throw ParseError(r.context() + ": implausible rank " + std::to_string(rank) +
                     " at byte offset " + std::to_string(r.offset() - 4));
  }
  Shape shape(rank);
  std::int64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = r.u32le("extent");
    if (e == 0) {
      throw ParseError(r.context() + ": zero extent at byte offset " +
                       std::to_string(r.offset() - 4));
    }
    shape[i] = static_cast<std::int64_t>(e);
    count *= shape[i];
  }
  std::vector<double> values(static_cast<std::size_t>(count));
  if (dt == Dtype::F32) {
    for (std::int64_t i = 0; i < count; ++i) {
      const std::uint32_t bits = r.u32le("element data");
      float f;
      std::memcpy(&f, &bits, 4);
      values[i] = static_cast<double>(f);
    }
  } else {
    for (std::int64_t i = 0; i < count; ++i) {
      const std::uint64_t lo = r.u32le("element data");
      const std::uint64_t hi = r.u32le("element data");
      const std::uint64_t bits = lo | (hi << 32);
      double v;
      std::memcpy(&v, &bits, 8);
      values[i] = v;
    }
  }
  return Tensor::from_data(std::move(values), std::move(shape), dt);
}

std::string read_name(Reader& r) {
  const std::uint16_t len = r.u16le("name length");
  std::string name(len, '\0');
  if (len > 0) r.bytes(name.data(), len, "name bytes");
  return name;
}

void write_name(std::ostream& os, const std::string& name) {
  if (name.size() > 0xffff) throw std::invalid_argument("entry name longer than 65535 bytes");
  put_u16le(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

}  // namespace

void write_kjt1(std::ostream& os, const Tensor& t) { write_kjt1_body(os, t); }

Tensor read_kjt1(std::istream& is) {
  Reader r(is, "KJT1");
  return read_kjt1_body(r);
}

void save_tensor(const std::string& path, const Tensor& t) {
  auto os = open_out(path);
  write_kjt1_body(os, t);
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  auto is = open_in(path);
  Reader r(is, path);
  return read_kjt1_body(r);
}

void save_checkpoint(const std::string& path, const NamedTensors& entries) {
  auto os = open_out(path);
  for (const auto& [name, tensor] : entries) {
    write_name(os, name);
    write_kjt1_body(os, tensor);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  auto is = open_in(path);
  Reader r(is, path);
  NamedTensors entries;
  while (!r.at_eof()) {
    std::string name = read_name(r);
    entries.emplace_back(std::move(name), read_kjt1_body(r));
  }
  return entries;
}

void save_embeddings(const std::string& path, const NamedEmbeddings& emb) {
  if (emb.matrix.rank() != 2) throw std::invalid_argument("embeddings matrix must be [K, C]");
  const std::int64_t k = emb.matrix.dim(0);
  if (static_cast<std::int64_t>(emb.names.size()) != k) {
    throw std::invalid_argument("embeddings: name count differs from matrix rows");
  }
  if (k == 0) throw std::invalid_argument("embeddings: K must be >= 1");
  auto os = open_out(path);
  os.write("KJTE", 4);
  put_u32le(os, static_cast<std::uint32_t>(k));
  put_u32le(os, static_cast<std::uint32_t>(emb.matrix.dim(1)));
  for (const std::string& n : emb.names) write_name(os, n);
  write_kjt1_body(os, emb.matrix);
  if (!os) throw std::runtime_error("write failed: " + path);
}

NamedEmbeddings load_embeddings(const std::string& path) {
  auto is = open_in(path);
  Reader r(is, path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "KJTE", 4) != 0) {
    throw ParseError(path + ": bad magic at byte offset 0 (expected KJTE)");
  }
  const std::uint32_t k = r.u32le("class count");
  if (k == 0) {
    throw ParseError(path + ": class count K must be >= 1 (byte offset 4)");
  }
  const std::uint32_t c = r.u32le("embedding width");
  if (c == 0) {
    throw ParseError(path + ": embedding width must be >= 1 (byte offset 8)");
  }
  NamedEmbeddings emb;
  emb.names.reserve(k);
  for (std::uint32_t i = 0; i < k; ++i) emb.names.push_back(read_name(r));
  emb.matrix = read_kjt1_body(r);
  if (emb.matrix.rank() != 2 || emb.matrix.dim(0) != static_cast<std::int64_t>(k) ||
      emb.matrix.dim(1) != static_cast<std::int64_t>(c)) {
    throw ParseError(path + ": tensor block shape " + shape_str(emb.matrix.shape()) +
                     " disagrees with header K=" + std::to_string(k) + ", C=" +
                     std::to_string(c));
  }
  return emb;
}

}  // namespace convformer
