#include "fcn/imageio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fcn {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path,
                const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path + "'");
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("short write on '" + path + "'");
}

// ---- PNM ----------------------------------------------------------------

namespace {

struct Cursor {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  bool eof() const { return pos >= b.size(); }
  std::uint8_t peek() const {
    if (eof()) throw ParseError("unexpected end of file", pos);
    return b[pos];
  }
  std::uint8_t take() {
    const std::uint8_t v = peek();
    ++pos;
    return v;
  }

  // PNM whitespace: blanks and comments from '#' to end of line
  void skip_space() {
    while (!eof()) {
      const std::uint8_t c = b[pos];
      if (c == '#') {
        while (!eof() && b[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::int64_t take_int() {
    skip_space();
    const std::size_t at = pos;
    std::int64_t v = 0;
    bool any = false;
    while (!eof() && b[pos] >= '0' && b[pos] <= '9') {
      v = v * 10 + (b[pos] - '0');
      if (v > (std::int64_t{1} << 40)) throw ParseError("number too large", at);
      ++pos;
      any = true;
    }
    if (!any) throw ParseError("expected integer", at);
    return v;
  }
};

}  // namespace

Image8 decode_pnm(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P')
    throw ParseError("not a PNM file", 0);
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '5' && kind != '6')
    throw ParseError("unsupported PNM variant P" + std::string(1, kind), 1);
  c.pos = 2;
  Image8 img;
  img.width = c.take_int();
  img.height = c.take_int();
  const std::int64_t maxval = c.take_int();
  if (img.width < 1 || img.height < 1)
    throw ParseError("bad PNM dimensions", 2);
  if (maxval < 1 || maxval > 255)
    throw ParseError("unsupported PNM maxval " + std::to_string(maxval),
                     c.pos);
  // exactly one whitespace byte separates the header from the payload
  if (c.eof()) throw ParseError("missing PNM payload", c.pos);
  c.take();
  img.channels = kind == '5' ? 1 : 3;
  const std::size_t need = static_cast<std::size_t>(img.width * img.height *
                                                    img.channels);
  if (bytes.size() - c.pos < need)
    throw ParseError("PNM payload truncated", bytes.size());
  img.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + need));
  return img;
}

namespace {

std::vector<std::uint8_t> encode_pnm(const Image8& img, char kind) {
  const std::string header = std::string("P") + kind + "\n" +
                             std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const Image8& img) {
  if (img.channels != 1) throw InvalidParamError("encode_pgm: need 1 channel");
  return encode_pnm(img, '5');
}

std::vector<std::uint8_t> encode_ppm(const Image8& img) {
  if (img.channels != 3) throw InvalidParamError("encode_ppm: need 3 channels");
  return encode_pnm(img, '6');
}

// ---- PNG ------------------------------------------------------------------

namespace {

constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a,
                                     '\n'};

std::uint32_t be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) |
         static_cast<std::uint32_t>(p[3]);
}

void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_from = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = ::crc32(0L, out.data() + crc_from,
                            static_cast<uInt>(4 + payload.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
  const int p = static_cast<int>(a) + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

Image8 decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
    throw ParseError("not a PNG file", 0);
  std::size_t pos = 8;
  Image8 img;
  int bit_depth = 0, color_type = -1;
  bool seen_ihdr = false, seen_iend = false;
  std::vector<std::uint8_t> idat;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 12)
      throw ParseError("PNG chunk header truncated", pos);
    const std::uint32_t len = be32(&bytes[pos]);
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    if (bytes.size() - pos - 12 < len)
      throw ParseError("PNG chunk payload truncated", pos + 8);
    const std::uint8_t* payload = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw ParseError("bad IHDR length", pos);
      img.width = be32(payload);
      img.height = be32(payload + 4);
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[12] != 0)
        throw ParseError("interlaced PNG unsupported", pos + 8 + 12);
      if (bit_depth != 8 || (color_type != 0 && color_type != 2))
        throw ParseError("only 8-bit gray/RGB PNG supported", pos + 8 + 8);
      img.channels = color_type == 0 ? 1 : 3;
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr) throw ParseError("PNG missing IHDR", 8);
  if (!seen_iend) throw ParseError("PNG missing IEND", bytes.size());
  if (img.width < 1 || img.height < 1)
    throw ParseError("bad PNG dimensions", 16);

  const std::int64_t row_bytes = img.width * img.channels;
  std::vector<std::uint8_t> raw(
      static_cast<std::size_t>((row_bytes + 1) * img.height));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  const int zrc = ::uncompress(raw.data(), &raw_len, idat.data(),
                               static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || raw_len != raw.size())
    throw ParseError("PNG IDAT inflate failed", pos);

  img.data.assign(static_cast<std::size_t>(row_bytes * img.height), 0);
  const std::int64_t bpp = img.channels;
  for (std::int64_t y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y * (row_bytes + 1))];
    const std::uint8_t* src =
        &raw[static_cast<std::size_t>(y * (row_bytes + 1) + 1)];
    std::uint8_t* dst = &img.data[static_cast<std::size_t>(y * row_bytes)];
    const std::uint8_t* prev =
        y > 0 ? &img.data[static_cast<std::size_t>((y - 1) * row_bytes)]
              : nullptr;
    for (std::int64_t x = 0; x < row_bytes; ++x) {
      const std::uint8_t a = x >= bpp ? dst[x - bpp] : 0;
      const std::uint8_t b = prev ? prev[x] : 0;
      const std::uint8_t c = (prev && x >= bpp) ? prev[x - bpp] : 0;
      std::uint8_t v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v = static_cast<std::uint8_t>(v + a); break;
        case 2: v = static_cast<std::uint8_t>(v + b); break;
        case 3: v = static_cast<std::uint8_t>(v + (a + b) / 2); break;
        case 4: v = static_cast<std::uint8_t>(v + paeth(a, b, c)); break;
        default:
          throw ParseError("bad PNG filter type " + std::to_string(filter),
                           static_cast<std::size_t>(y * (row_bytes + 1)));
      }
      dst[x] = v;
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_png(const Image8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw InvalidParamError("encode_png: 1 or 3 channels");
  const std::int64_t row_bytes = img.width * img.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>((row_bytes + 1) * img.height));
  for (std::int64_t y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    const std::uint8_t* src = &img.data[static_cast<std::size_t>(y * row_bytes)];
    raw.insert(raw.end(), src, src + row_bytes);
  }
  uLongf comp_cap = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_cap);
  if (::compress2(comp.data(), &comp_cap, raw.data(),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("PNG deflate failed");
  comp.resize(comp_cap);

  std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                    // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);            // color type
  ihdr.push_back(0);                                    // compression
  ihdr.push_back(0);                                    // filter
  ihdr.push_back(0);                                    // no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", {});
  return out;
}

Image8 load_image(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0)
    return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P')
    return decode_pnm(bytes);
  throw ParseError("unrecognized image format in '" + path + "'", 0);
}

void save_image(const std::string& path, const Image8& img) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".png")
    write_file(path, encode_png(img));
  else if (ext == ".pgm")
    write_file(path, encode_pgm(img));
  else if (ext == ".ppm")
    write_file(path, encode_ppm(img));
  else
    throw InvalidParamError("unsupported image extension '" + ext + "'");
}

LabelMap image_to_labels(const Image8& img) {
  if (img.channels != 1)
    throw InvalidParamError("label image must be single-channel");
  LabelMap m(1, img.height, img.width);
  m.data = img.data;
  return m;
}

Image8 labels_to_image(const LabelMap& m, std::int64_t index) {
  Image8 img;
  img.width = m.w;
  img.height = m.h;
  img.channels = 1;
  img.data.assign(static_cast<std::size_t>(m.h * m.w), 0);
  for (std::int64_t i = 0; i < m.h; ++i)
    for (std::int64_t j = 0; j < m.w; ++j)
      img.at(i, j) = m.at(index, i, j);
  return img;
}

Tensor image_to_tensor(const Image8& img) {
  Tensor t({1, img.channels, img.height, img.width});
  for (std::int64_t c = 0; c < img.channels; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x)
        t.at(0, c, y, x) = static_cast<double>(img.at(y, x, c)) / 255.0;
  return t;
}

Image8 tensor_to_image(const Tensor& t) {
  if (t.dims.n != 1 || (t.dims.c != 1 && t.dims.c != 3))
    throw InvalidParamError("tensor_to_image: need (1,{1|3},h,w)");
  Image8 img;
  img.width = t.dims.w;
  img.height = t.dims.h;
  img.channels = t.dims.c;
  img.data.assign(static_cast<std::size_t>(t.dims.c * t.dims.h * t.dims.w), 0);
  for (std::int64_t c = 0; c < t.dims.c; ++c)
    for (std::int64_t y = 0; y < t.dims.h; ++y)
      for (std::int64_t x = 0; x < t.dims.w; ++x) {
        const double v = std::clamp(t.at(0, c, y, x), 0.0, 1.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

}  // namespace fcn
