// SPDX-License-Identifier: Apache-2.0
#include "cstr/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace cstr {

namespace {

constexpr std::uint64_t kMaxExtent = 1u << 20;

[[noreturn]] void format_error(const std::string& what) { fail(ErrorKind::kFormat, what); }

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Cursor over a netpbm-style ASCII header.
class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, const char* format, bool allow_comments)
      : bytes_(bytes), format_(format), comments_(allow_comments) {}

  std::string_view magic() {
    if (bytes_.size() < 3) format_error(std::string(format_) + ": file too short for header");
    pos_ = 2;
    if (!is_space(bytes_[2])) format_error(std::string(format_) + ": malformed magic line");
    return bytes_.substr(0, 2);
  }

  std::string_view token() {
    skip_separators();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !is_space(bytes_[pos_])) ++pos_;
    if (start == pos_) format_error(std::string(format_) + ": truncated header");
    return bytes_.substr(start, pos_ - start);
  }

  std::uint64_t extent(const char* what) {
    const auto tok = token();
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || v == 0 || v > kMaxExtent) {
      format_error(std::string(format_) + ": invalid " + what + " '" + std::string(tok) + "'");
    }
    return v;
  }

  double real(const char* what) {
    const auto tok = token();
    // from_chars does not accept a leading '+'.
    const auto num = tok.size() > 1 && tok[0] == '+' ? tok.substr(1) : tok;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc() || ptr != num.data() + num.size() || !std::isfinite(v)) {
      format_error(std::string(format_) + ": invalid " + what + " '" + std::string(tok) + "'");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::string_view payload() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      format_error(std::string(format_) + ": missing separator before payload");
    }
    return bytes_.substr(pos_ + 1);
  }

 private:
  void skip_separators() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (comments_ && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  const char* format_;
  bool comments_;
  std::size_t pos_ = 0;
};

std::uint32_t load_u32(const unsigned char* p, bool little) {
  if (little) {
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
           std::uint32_t{p[3]} << 24;
  }
  return std::uint32_t{p[3]} | std::uint32_t{p[2]} << 8 | std::uint32_t{p[1]} << 16 |
         std::uint32_t{p[0]} << 24;
}

void store_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void store_f32_le(std::string& out, float f) { store_u32_le(out, std::bit_cast<std::uint32_t>(f)); }

float load_f32(const unsigned char* p, bool little) {
  return std::bit_cast<float>(load_u32(p, little));
}

Tensor as_plane(const Tensor& t, const char* op) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2)});
  fail(ErrorKind::kShape, std::string(op) + ": expected [h x w] or [1 x h x w], got " +
                              shape_to_string(t.shape()));
}

}  // namespace

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::kIo, "read failure on '" + path.string() + "'");
  return std::move(ss).str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorKind::kIo, "write failure on '" + path.string() + "'");
}

// --- PFM ---------------------------------------------------------------------

Tensor decode_pfm(std::string_view bytes) {
  HeaderReader header(bytes, "pfm", false);
  const auto magic = header.magic();
  if (magic == "PF") format_error("pfm: colour 'PF' files are not supported");
  if (magic != "Pf") format_error("pfm: bad magic '" + std::string(magic) + "'");
  const auto w = header.extent("width");
  const auto h = header.extent("height");
  const double scale = header.real("scale");
  if (scale == 0.0) format_error("pfm: scale must be nonzero");
  const bool little = scale < 0.0;
  const auto payload = header.payload();
  const std::uint64_t need = w * h * 4;
  if (payload.size() < need) {
    format_error("pfm: truncated payload, need " + std::to_string(need) + " bytes, have " +
                 std::to_string(payload.size()));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  std::vector<float> data(w * h);
  for (std::uint64_t row = 0; row < h; ++row) {
    // Payload rows run bottom to top.
    const std::uint64_t dst = (h - 1 - row) * w;
    for (std::uint64_t x = 0; x < w; ++x) data[dst + x] = load_f32(p + 4 * (row * w + x), little);
  }
  if (!std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); })) {
    format_error("pfm: payload contains non-finite values");
  }
  return Tensor({h, w}, std::move(data));
}

std::string encode_pfm(const Tensor& map) {
  const Tensor plane = as_plane(map, "write_pfm");
  const std::size_t h = plane.dim(0), w = plane.dim(1);
  std::string out = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  out.reserve(out.size() + 4 * h * w);
  for (std::size_t row = 0; row < h; ++row) {
    const std::size_t src = (h - 1 - row) * w;
    for (std::size_t x = 0; x < w; ++x) store_f32_le(out, plane[src + x]);
  }
  return out;
}

Tensor read_pfm(const std::filesystem::path& path) {
  try {
    return decode_pfm(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw e.with_context(path.string());
  }
}

void write_pfm(const std::filesystem::path& path, const Tensor& map) {
  write_file_bytes(path, encode_pfm(map));
}

// --- PGM / PPM -----------------------------------------------------------------

namespace {

Tensor decode_pnm(std::string_view bytes, std::string_view want, std::size_t channels) {
  HeaderReader header(bytes, want == "P5" ? "pgm" : "ppm", true);
  const auto magic = header.magic();
  if (magic != want) format_error("bad magic '" + std::string(magic) + "', expected " + std::string(want));
  const auto w = header.extent("width");
  const auto h = header.extent("height");
  const auto max_tok = header.token();
  std::uint64_t maxval = 0;
  {
    const auto [ptr, ec] = std::from_chars(max_tok.data(), max_tok.data() + max_tok.size(), maxval);
    if (ec != std::errc() || ptr != max_tok.data() + max_tok.size()) {
      format_error("invalid maxval '" + std::string(max_tok) + "'");
    }
  }
  if (maxval == 0) format_error("maxval must be positive");
  if (maxval > 65535) format_error("maxval " + std::to_string(maxval) + " exceeds 65535");
  const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
  const auto payload = header.payload();
  const std::uint64_t count = w * h * channels;
  if (payload.size() < count * sample_bytes) {
    format_error("truncated payload, need " + std::to_string(count * sample_bytes) +
                 " bytes, have " + std::to_string(payload.size()));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  const auto scale_max = static_cast<float>(maxval);
  Tensor out(channels == 1 ? Shape{h, w} : Shape{channels, h, w});
  for (std::uint64_t i = 0; i < count; ++i) {
    const unsigned raw = sample_bytes == 1 ? p[i] : (unsigned{p[2 * i]} << 8 | p[2 * i + 1]);
    if (raw > maxval) format_error("sample exceeds maxval");
    const float v = static_cast<float>(raw) / scale_max;
    if (channels == 1) {
      out[i] = v;
    } else {
      // Interleaved RGB -> planar.
      const std::uint64_t pixel = i / channels, ch = i % channels;
      out[ch * w * h + pixel] = v;
    }
  }
  return out;
}

}  // namespace

Tensor decode_pgm(std::string_view bytes) {
  try {
    return decode_pnm(bytes, "P5", 1);
  } catch (const Error& e) {
    throw e.with_context("pgm");
  }
}

std::string encode_pgm(const Tensor& image, unsigned maxval) {
  if (maxval == 0 || maxval > 65535) fail(ErrorKind::kValue, "write_pgm: maxval must be in [1, 65535]");
  const Tensor plane = as_plane(image, "write_pgm");
  const std::size_t h = plane.dim(0), w = plane.dim(1);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
                    std::to_string(maxval) + "\n";
  for (float v : plane.data()) {
    const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
    const auto q = static_cast<unsigned>(std::lround(c * static_cast<float>(maxval)));
    if (maxval < 256) {
      out.push_back(static_cast<char>(q));
    } else {
      out.push_back(static_cast<char>(q >> 8));
      out.push_back(static_cast<char>(q & 0xffu));
    }
  }
  return out;
}

Tensor read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw e.with_context(path.string());
  }
}

void write_pgm(const std::filesystem::path& path, const Tensor& image, unsigned maxval) {
  write_file_bytes(path, encode_pgm(image, maxval));
}

Tensor decode_ppm(std::string_view bytes) {
  try {
    return decode_pnm(bytes, "P6", 3);
  } catch (const Error& e) {
    throw e.with_context("ppm");
  }
}

Tensor to_grayscale(const Tensor& image) {
  if (image.rank() == 2) return image.reshaped({1, image.dim(0), image.dim(1)});
  if (image.rank() == 3 && image.dim(0) == 1) return image;
  if (image.rank() != 3 || image.dim(0) != 3) {
    fail(ErrorKind::kShape, "to_grayscale: expected 1 or 3 channels, got " +
                                shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out({1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out.at(0, y, x) = 0.299f * image.at(0, y, x) + 0.587f * image.at(1, y, x) +
                        0.114f * image.at(2, y, x);
  return out;
}

Tensor read_gray_image(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  try {
    if (bytes.size() >= 2 && bytes.compare(0, 2, "P6") == 0) return to_grayscale(decode_ppm(bytes));
    return to_grayscale(decode_pgm(bytes));
  } catch (const Error& e) {
    throw e.with_context(path.string());
  }
}

// --- weights -------------------------------------------------------------------

bool is_valid_utf8(std::string_view s) noexcept {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xe0) == 0xc0) {
      len = 2, cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      len = 3, cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      len = 4, cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xc0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    // Overlong forms, UTF-16 surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) {
      return false;
    }
    i += len;
  }
  return true;
}

namespace {

void check_entry(const std::string& name, const Tensor& tensor) {
  if (name.empty()) fail(ErrorKind::kValue, "weight name must be nonempty");
  if (name.size() > 0xffff) fail(ErrorKind::kValue, "weight name longer than 65535 bytes");
  if (!is_valid_utf8(name)) fail(ErrorKind::kValue, "weight name is not valid UTF-8");
  if (tensor.rank() == 0 || tensor.rank() > 255) {
    fail(ErrorKind::kShape, "weight '" + name + "' has unsupported rank");
  }
  for (auto e : tensor.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) {
      fail(ErrorKind::kShape, "weight '" + name + "' extent exceeds 32 bits");
    }
  }
  if (!tensor.all_finite()) fail(ErrorKind::kValue, "weight '" + name + "' has non-finite values");
}

}  // namespace

void WeightStore::insert(std::string name, Tensor tensor) {
  check_entry(name, tensor);
  if (contains(name)) fail(ErrorKind::kValue, "duplicate weight name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

void WeightStore::set(const std::string& name, Tensor tensor) {
  const auto it = index_.find(name);
  if (it == index_.end()) {
    insert(name, std::move(tensor));
    return;
  }
  check_entry(name, tensor);
  entries_[it->second].second = std::move(tensor);
}

const Tensor* WeightStore::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const Tensor& WeightStore::get(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) fail(ErrorKind::kConfig, "missing weight '" + name + "'");
  return *t;
}

WeightStore decode_weights(std::string_view bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) {
      format_error(std::string("weights: truncated ") + what + " at offset " + std::to_string(pos));
    }
  };
  auto u8 = [&] {
    need(1, "field");
    return static_cast<unsigned char>(bytes[pos++]);
  };
  auto u16 = [&] {
    need(2, "field");
    const unsigned lo = static_cast<unsigned char>(bytes[pos]);
    const unsigned hi = static_cast<unsigned char>(bytes[pos + 1]);
    pos += 2;
    return lo | hi << 8;
  };
  auto u32 = [&] {
    need(4, "field");
    const auto v = load_u32(reinterpret_cast<const unsigned char*>(bytes.data() + pos), true);
    pos += 4;
    return v;
  };

  if (bytes.size() < kWeightsMagic.size() || bytes.substr(0, kWeightsMagic.size()) != kWeightsMagic) {
    format_error("weights: magic mismatch, expected CSTRW001");
  }
  pos = kWeightsMagic.size();
  const std::uint32_t count = u32();
  WeightStore store;
  for (std::uint32_t t = 0; t < count; ++t) {
    const unsigned name_len = u16();
    need(name_len, "name");
    std::string name(bytes.substr(pos, name_len));
    pos += name_len;
    const unsigned rank = u8();
    if (rank == 0) format_error("weights: tensor '" + name + "' has rank 0");
    Shape shape(rank);
    std::uint64_t volume = 1;
    for (unsigned r = 0; r < rank; ++r) {
      shape[r] = u32();
      if (shape[r] == 0) format_error("weights: tensor '" + name + "' has a zero extent");
      volume *= shape[r];
      // Bound by the remaining bytes before any allocation.
      if (volume > (bytes.size() - pos) / 4 + 1) {
        format_error("weights: tensor '" + name + "' declares more data than the file holds");
      }
    }
    if (volume * 4 > bytes.size() - pos) {
      format_error("weights: tensor '" + name + "' declares more data than the file holds");
    }
    std::vector<float> data(volume);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::uint64_t i = 0; i < volume; ++i) data[i] = load_f32(p + 4 * i, true);
    pos += volume * 4;
    if (store.contains(name)) format_error("weights: duplicate tensor name '" + name + "'");
    try {
      store.insert(std::move(name), Tensor(std::move(shape), std::move(data)));
    } catch (const Error& e) {
      format_error(std::string("weights: ") + e.what());
    }
  }
  if (pos != bytes.size()) format_error("weights: trailing bytes after last tensor");
  return store;
}

std::string encode_weights(const WeightStore& store) {
  std::string out(kWeightsMagic);
  store_u32_le(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, tensor] : store) {
    out.push_back(static_cast<char>(name.size() & 0xffu));
    out.push_back(static_cast<char>(name.size() >> 8));
    out += name;
    out.push_back(static_cast<char>(tensor.rank()));
    for (auto e : tensor.shape()) store_u32_le(out, static_cast<std::uint32_t>(e));
    for (float v : tensor.data()) store_f32_le(out, v);
  }
  return out;
}

WeightStore read_weights(const std::filesystem::path& path) {
  try {
    return decode_weights(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw e.with_context(path.string());
  }
}

void write_weights(const std::filesystem::path& path, const WeightStore& store) {
  write_file_bytes(path, encode_weights(store));
}

}  // namespace cstr
