#include "cll/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <istream>
#include <memory>
#include <span>
#include <ostream>
#include <vector>

namespace cll {

const char* to_string(CheckpointErrorCode code) {
  switch (code) {
    case CheckpointErrorCode::bad_magic: return "bad_magic";
    case CheckpointErrorCode::version_mismatch: return "version_mismatch";
    case CheckpointErrorCode::truncated: return "truncated";
    case CheckpointErrorCode::dim_mismatch: return "dim_mismatch";
    case CheckpointErrorCode::malformed: return "malformed";
    case CheckpointErrorCode::io: return "io";
  }
  return "unknown";
}

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void u8(std::uint8_t v) { put(&v, 1); }
  void u16(std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
    put(b, 2);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    put(b, 4);
  }
  void bytes(const std::string& s) { put(s.data(), s.size()); }
  void floats(std::span<const Real> values) {
    std::vector<std::uint8_t> buf(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int k = 0; k < 4; ++k) buf[4 * i + k] = static_cast<std::uint8_t>(bits >> (8 * k));
    }
    put(buf.data(), buf.size());
  }

 private:
  void put(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os_) throw CheckpointError(CheckpointErrorCode::io, "write failed");
  }
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void get(void* p, std::size_t n, const std::string& what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw CheckpointError(CheckpointErrorCode::truncated, "file ends inside " + what);
    }
  }
  std::uint8_t u8(const std::string& what) {
    std::uint8_t v;
    get(&v, 1, what);
    return v;
  }
  std::uint16_t u16(const std::string& what) {
    std::uint8_t b[2];
    get(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const std::string& what) {
    std::uint8_t b[4];
    get(b, 4, what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
};

std::uint32_t narrow(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw CheckpointError(CheckpointErrorCode::malformed, std::string(what) + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

// Longest parameter name accepted; guards against reading garbage lengths.
constexpr std::uint32_t kMaxNameLength = 1024;

}  // namespace

void write_checkpoint(std::ostream& os, const Network& net) {
  Writer w(os);
  w.bytes(std::string(kCheckpointMagic, 4));
  w.u16(kCheckpointVersion);
  const NetworkSpec& s = net.spec();
  w.u32(narrow(s.channels, "channels"));
  w.u32(narrow(s.num_blocks, "num_blocks"));
  w.u32(narrow(s.kernel_size, "kernel_size"));
  w.u32(narrow(s.image_channels, "image_channels"));
  const ProviderConfig& p = net.providers();
  w.u8(static_cast<std::uint8_t>(p.mode));
  w.u32(narrow(p.ftn.groups, "ftn groups"));
  w.u32(narrow(p.ftn.depth, "ftn depth"));
  w.u8(p.exclude_last ? 1 : 0);
  const auto& entries = net.store().entries();
  w.u32(narrow(entries.size(), "entry count"));
  for (const auto& [name, t] : entries) {
    w.u32(narrow(name.size(), "name length"));
    w.bytes(name);
    const Shape& sh = t.shape();
    for (std::size_t d : {sh.n, sh.c, sh.h, sh.w}) w.u32(narrow(d, "extent"));
    w.floats(t.data());
  }
}

Network read_checkpoint(std::istream& is) {
  Reader r(is);
  char magic[4];
  r.get(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw CheckpointError(CheckpointErrorCode::bad_magic, "not a checkpoint (magic bytes differ)");
  }
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorCode::version_mismatch, "format version " + std::to_string(version) +
                                                                     ", expected " +
                                                                     std::to_string(kCheckpointVersion));
  }
  NetworkSpec spec;
  spec.channels = r.u32("network spec");
  spec.num_blocks = r.u32("network spec");
  spec.kernel_size = r.u32("network spec");
  spec.image_channels = r.u32("network spec");
  ProviderConfig providers;
  const std::uint8_t mode = r.u8("provider config");
  if (mode > static_cast<std::uint8_t>(ProviderMode::adafm)) {
    throw CheckpointError(CheckpointErrorCode::malformed, "unknown provider mode " + std::to_string(mode));
  }
  providers.mode = static_cast<ProviderMode>(mode);
  providers.ftn.groups = r.u32("provider config");
  providers.ftn.depth = r.u32("provider config");
  providers.exclude_last = r.u8("provider config") != 0;

  std::vector<std::pair<std::string, Shape>> layout;
  try {
    spec.validate();
    if (providers.mode == ProviderMode::ftn) providers.ftn.validate();
    layout = expected_layout(spec, providers);
  } catch (const Error& e) {
    throw CheckpointError(CheckpointErrorCode::malformed, e.what());
  }

  const std::uint32_t count = r.u32("entry count");
  if (count != layout.size()) {
    throw CheckpointError(CheckpointErrorCode::dim_mismatch, "checkpoint holds " + std::to_string(count) +
                                                                 " entries, its spec implies " +
                                                                 std::to_string(layout.size()));
  }
  ParameterStore store;
  std::vector<std::uint8_t> buf;
  for (const auto& [want_name, want_shape] : layout) {
    const std::uint32_t len = r.u32("name length of entry after '" + (store.size() ? store.entries().back().first : std::string("header")) + "'");
    if (len > kMaxNameLength) throw CheckpointError(CheckpointErrorCode::malformed, "parameter name too long");
    std::string name(len, '\0');
    r.get(name.data(), len, "name of '" + want_name + "'");
    if (name != want_name) {
      throw CheckpointError(CheckpointErrorCode::dim_mismatch, "entry '" + name + "' where the spec implies '" +
                                                                   want_name + "'");
    }
    Shape shape;
    shape.n = r.u32("extents of '" + name + "'");
    shape.c = r.u32("extents of '" + name + "'");
    shape.h = r.u32("extents of '" + name + "'");
    shape.w = r.u32("extents of '" + name + "'");
    if (!(shape == want_shape)) {
      throw CheckpointError(CheckpointErrorCode::dim_mismatch, "'" + name + "' has extents " + shape.str() +
                                                                   ", the spec implies " + want_shape.str());
    }
    buf.resize(shape.numel() * 4);
    r.get(buf.data(), buf.size(), "payload of '" + name + "'");
    Tensor<Real> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint32_t bits = std::uint32_t(buf[4 * i]) | std::uint32_t(buf[4 * i + 1]) << 8 |
                                 std::uint32_t(buf[4 * i + 2]) << 16 | std::uint32_t(buf[4 * i + 3]) << 24;
      t[i] = std::bit_cast<Real>(bits);
    }
    store.add(name, std::move(t));
  }
  if (!r.at_end()) throw CheckpointError(CheckpointErrorCode::malformed, "trailing bytes after the last entry");
  return Network::from_parts(spec, providers, std::move(store));
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError(CheckpointErrorCode::io, "cannot open " + path.string() + " for writing");
  write_checkpoint(os, net);
  os.flush();
  if (!os) throw CheckpointError(CheckpointErrorCode::io, "write to " + path.string() + " failed");
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(CheckpointErrorCode::io, "cannot open " + path.string());
  return read_checkpoint(is);
}

// Images

std::uint8_t quantize(Real v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  // nearbyint follows the default round-half-to-even mode.
  return static_cast<std::uint8_t>(std::nearbyint(c * 255.0));
}

namespace {

std::string lower_extension(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return e;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

Tensor<Real> read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        t.push_back(ch);
        break;
      }
    }
    while (is.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) t.push_back(ch);
    return t;
  };
  if (token() != "P5") throw ImageError(path.string() + ": only binary PGM (P5) is supported");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ImageError(path.string() + ": malformed PGM header");
  }
  if (maxval != 255) throw ImageError(path.string() + ": unsupported bit depth (maxval " + std::to_string(maxval) + ")");
  if (w == 0 || h == 0) throw ImageError(path.string() + ": empty image");
  std::vector<std::uint8_t> px(w * h);
  is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (static_cast<std::size_t>(is.gcount()) != px.size()) throw ImageError(path.string() + ": truncated pixel data");
  Tensor<Real> out(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = static_cast<Real>(px[i] / 255.0);
  return out;
}

void write_pgm(const std::vector<std::uint8_t>& px, std::size_t h, std::size_t w, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ImageError("cannot open " + path.string() + " for writing");
  os << "P5\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw ImageError("write to " + path.string() + " failed");
}

// Decoded PNG state. Lives outside the setjmp frame so a libpng error
// longjmp neither clobbers it nor skips its destructors.
struct PngPixels {
  std::size_t h = 0, w = 0, channels = 0;
  std::vector<png_byte> px;
  std::vector<png_bytep> rows;
  std::string failure;
};

bool decode_png(png_structp png, png_infop info, std::FILE* f, PngPixels* out) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8) {
    out->failure = "unsupported bit depth " + std::to_string(depth);
    return true;
  }
  if (color == PNG_COLOR_TYPE_GRAY) {
    out->channels = 1;
  } else if (color == PNG_COLOR_TYPE_RGB) {
    out->channels = 3;
  } else {
    out->failure = "unsupported color type " + std::to_string(color);
    return true;
  }
  out->h = png_get_image_height(png, info);
  out->w = png_get_image_width(png, info);
  out->px.resize(out->h * out->w * out->channels);
  out->rows.resize(out->h);
  for (std::size_t y = 0; y < out->h; ++y) out->rows[y] = out->px.data() + y * out->w * out->channels;
  png_read_image(png, out->rows.data());
  png_read_end(png, nullptr);
  return true;
}

Tensor<Real> read_png(const std::filesystem::path& path) {
  File f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw ImageError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageError(path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageError("libpng initialisation failed");
  }
  PngPixels d;
  const bool ok = decode_png(png, info, f.get(), &d);
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw ImageError(path.string() + ": corrupt PNG data");
  if (!d.failure.empty()) throw ImageError(path.string() + ": " + d.failure);

  Tensor<Real> out(Shape{1, d.channels, d.h, d.w});
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x)
        out.at(0, c, y, x) = static_cast<Real>(d.px[(y * d.w + x) * d.channels + c] / 255.0);
  return out;
}

void write_png(const std::vector<std::uint8_t>& px, std::size_t channels, std::size_t h, std::size_t w,
               const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, px.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("cannot write " + path.string() + ": " + msg);
  }
}

}  // namespace

Tensor<Real> read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".png") return read_png(path);
  throw ImageError(path.string() + ": unsupported image format '" + ext + "'");
}

void write_image(const Tensor<Real>& image, const std::filesystem::path& path) {
  const Shape& s = image.shape();
  if (s.n == 0 || (s.c != 1 && s.c != 3)) throw ImageError("can only write 1- or 3-channel images, got " + s.str());
  const std::string ext = lower_extension(path);
  // Interleaved 8-bit pixels of the first image.
  std::vector<std::uint8_t> px(s.c * s.h * s.w);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) px[(y * s.w + x) * s.c + c] = quantize(image.at(0, c, y, x));
  if (ext == ".pgm") {
    if (s.c != 1) throw ImageError("PGM output needs a single channel");
    write_pgm(px, s.h, s.w, path);
  } else if (ext == ".png") {
    write_png(px, s.c, s.h, s.w, path);
  } else {
    throw ImageError(path.string() + ": unsupported image format '" + ext + "'");
  }
}

}  // namespace cll
