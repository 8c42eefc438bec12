#include "cip/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "cip/model_io.hpp"

namespace cip {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void put_u16(std::string &out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::string &buf;
  std::size_t pos = 0;
  std::uint8_t u8() {
    if (pos + 1 > buf.size())
      throw std::runtime_error("container: truncated file");
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = u8();
    v |= static_cast<std::uint16_t>(u8()) << 8;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
};

std::uint16_t quantize_u16(double v) {
  return static_cast<std::uint16_t>(std::lround(clamp01(v) * 65535.0));
}

void put_tensor_u16(std::string &out, const Tensor &t) {
  for (double v : t.data)
    put_u16(out, quantize_u16(v));
}

void read_tensor_u16(ByteReader &r, Tensor &t) {
  for (double &v : t.data)
    v = static_cast<double>(r.u16()) / 65535.0;
}

std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("missing file: " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

} // namespace

Ycbcr rgb_to_ycbcr(Rgb px, ColorMatrix matrix) {
  double kr, kg, kb;
  if (matrix == ColorMatrix::Bt601) {
    kr = 0.299;
    kg = 0.587;
    kb = 0.114;
  } else {
    kr = 0.2126;
    kg = 0.7152;
    kb = 0.0722;
  }
  const double y = kr * px.r + kg * px.g + kb * px.b;
  Ycbcr out;
  out.y = clamp01(y);
  out.cb = clamp01(0.5 + (px.b - y) / (2.0 * (1.0 - kb)));
  out.cr = clamp01(0.5 + (px.r - y) / (2.0 * (1.0 - kr)));
  return out;
}

Image read_ppm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("missing file: " + path.string());
  auto next_token = [&in, &path]() {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n')
          ;
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty())
          return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty())
      throw std::runtime_error("ppm: truncated header in " + path.string());
    return tok;
  };
  const std::string magic = next_token();
  if (magic != "P6")
    throw std::runtime_error("unsupported image format (need binary PPM P6): " +
                             path.string());
  const std::size_t w = std::stoul(next_token());
  const std::size_t h = std::stoul(next_token());
  const unsigned maxval = static_cast<unsigned>(std::stoul(next_token()));
  if (maxval == 0 || maxval > 65535)
    throw std::runtime_error("ppm: invalid maxval in " + path.string());
  const bool wide = maxval > 255;
  const std::size_t bytes = w * h * 3 * (wide ? 2 : 1);
  std::string buf(bytes, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(bytes));
  if (in.gcount() != static_cast<std::streamsize>(bytes))
    throw std::runtime_error("ppm: truncated pixel data in " + path.string());
  Image img;
  img.width = w;
  img.height = h;
  img.r.resize(w * h);
  img.g.resize(w * h);
  img.b.resize(w * h);
  const double scale = 1.0 / maxval;
  std::size_t p = 0;
  for (std::size_t i = 0; i < w * h; ++i) {
    unsigned v[3];
    for (int c = 0; c < 3; ++c) {
      if (wide) {
        v[c] = (static_cast<unsigned char>(buf[p]) << 8) |
               static_cast<unsigned char>(buf[p + 1]);
        p += 2;
      } else {
        v[c] = static_cast<unsigned char>(buf[p++]);
      }
    }
    img.r[i] = v[0] * scale;
    img.g[i] = v[1] * scale;
    img.b[i] = v[2] * scale;
  }
  return img;
}

Image resample_bilinear(const Image &img, double scale) {
  if (scale == 1.0)
    return img;
  const std::size_t ow = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(img.width * scale)));
  const std::size_t oh = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(img.height * scale)));
  Image out;
  out.width = ow;
  out.height = oh;
  out.r.resize(ow * oh);
  out.g.resize(ow * oh);
  out.b.resize(ow * oh);
  auto sample = [&](const std::vector<double> &plane, double sy, double sx) {
    const double fy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
    const double fx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t x0 = static_cast<std::size_t>(fx);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const std::size_t x1 = std::min(x0 + 1, img.width - 1);
    const double ty = fy - y0, tx = fx - x0;
    const double a = plane[y0 * img.width + x0];
    const double b = plane[y0 * img.width + x1];
    const double c = plane[y1 * img.width + x0];
    const double d = plane[y1 * img.width + x1];
    return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
  };
  for (std::size_t y = 0; y < oh; ++y) {
    const double sy = (y + 0.5) / scale - 0.5;
    for (std::size_t x = 0; x < ow; ++x) {
      const double sx = (x + 0.5) / scale - 0.5;
      out.r[y * ow + x] = sample(img.r, sy, sx);
      out.g[y * ow + x] = sample(img.g, sy, sx);
      out.b[y * ow + x] = sample(img.b, sy, sx);
    }
  }
  return out;
}

YcbcrPlanes to_ycbcr_planes(const Image &img, ColorMatrix matrix) {
  YcbcrPlanes out;
  out.y = Tensor({img.height, img.width});
  out.cb = Tensor({img.height, img.width});
  out.cr = Tensor({img.height, img.width});
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const Ycbcr px = rgb_to_ycbcr({img.r[i], img.g[i], img.b[i]}, matrix);
    out.y.data[i] = px.y;
    out.cb.data[i] = px.cb;
    out.cr.data[i] = px.cr;
  }
  return out;
}

Tensor downsample_luma_collocated(const Tensor &luma) {
  if (luma.rank() != 2)
    throw std::invalid_argument("downsample_luma: expected rank-2 plane");
  const std::size_t h = luma.dim(0), w = luma.dim(1);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("downsample_luma: odd plane dimensions");
  Tensor out({h / 2, w / 2});
  for (std::size_t y = 0; y < h / 2; ++y) {
    for (std::size_t x = 0; x < w / 2; ++x) {
      const std::size_t xc = 2 * x;
      const std::size_t xl = xc == 0 ? 0 : xc - 1; // left-edge replication
      const std::size_t xr = xc + 1;
      const double top =
          luma(2 * y, xl) + 2.0 * luma(2 * y, xc) + luma(2 * y, xr);
      const double bot = luma(2 * y + 1, xl) + 2.0 * luma(2 * y + 1, xc) +
                         luma(2 * y + 1, xr);
      out(y, x) = (top + bot) / 8.0;
    }
  }
  return out;
}

Tensor downsample_chroma_source(const Tensor &ch) {
  if (ch.rank() != 2)
    throw std::invalid_argument("downsample_chroma: expected rank-2 plane");
  const std::size_t h = ch.dim(0), w = ch.dim(1);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("downsample_chroma: odd plane dimensions");
  Tensor out({h / 2, w / 2});
  for (std::size_t y = 0; y < h / 2; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      out(y, x) = (ch(2 * y, 2 * x) + ch(2 * y, 2 * x + 1) +
                   ch(2 * y + 1, 2 * x) + ch(2 * y + 1, 2 * x + 1)) /
                  4.0;
  return out;
}

std::vector<BlockSample> extract_blocks(const Image &img,
                                        const CorpusConfig &cfg, Rng &rng,
                                        const std::string &image_id) {
  if (cfg.sizes.empty())
    throw std::invalid_argument("extract_blocks: no sizes requested");
  std::vector<std::size_t> sizes = cfg.sizes;
  std::sort(sizes.begin(), sizes.end());

  const double scale = cfg.prescales[rng.below(cfg.prescales.size())];
  const Image scaled = resample_bilinear(img, scale);
  // crop to even dimensions for 4:2:0
  const std::size_t cw = scaled.width & ~std::size_t{1};
  const std::size_t chh = scaled.height & ~std::size_t{1};
  if (cw == 0 || chh == 0)
    throw std::runtime_error("image too small: " + image_id);

  YcbcrPlanes planes;
  planes.y = Tensor({chh, cw});
  planes.cb = Tensor({chh, cw});
  planes.cr = Tensor({chh, cw});
  for (std::size_t y = 0; y < chh; ++y) {
    for (std::size_t x = 0; x < cw; ++x) {
      const std::size_t i = y * scaled.width + x;
      const Ycbcr px =
          rgb_to_ycbcr({scaled.r[i], scaled.g[i], scaled.b[i]}, cfg.matrix);
      planes.y(y, x) = px.y;
      planes.cb(y, x) = px.cb;
      planes.cr(y, x) = px.cr;
    }
  }

  const Tensor luma_ds = downsample_luma_collocated(planes.y);
  const Tensor cb_ds = downsample_chroma_source(planes.cb);
  const Tensor cr_ds = downsample_chroma_source(planes.cr);
  const std::size_t hc = luma_ds.dim(0), wc = luma_ds.dim(1);
  const std::size_t max_n = sizes.back();
  if (hc < max_n || wc < max_n)
    throw std::runtime_error("image too small for " + std::to_string(max_n) +
                             "x" + std::to_string(max_n) + " blocks: " +
                             image_id);

  std::vector<BlockSample> out;
  out.reserve(sizes.size() * cfg.per_image);
  for (std::size_t n : sizes) {
    for (std::size_t m = 0; m < cfg.per_image; ++m) {
      const std::size_t ox =
          static_cast<std::size_t>(rng.below(wc - n + 1));
      const std::size_t oy =
          static_cast<std::size_t>(rng.below(hc - n + 1));
      BlockSample s;
      s.n = n;
      s.image_id = image_id;
      s.origin_x = static_cast<std::uint32_t>(ox);
      s.origin_y = static_cast<std::uint32_t>(oy);
      s.resolution_scale = scale;
      s.x0 = Tensor({1, n, n});
      s.z = Tensor({2, n, n});
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          s.x0(0, y, x) = luma_ds(oy + y, ox + x);
          s.z(0, y, x) = cb_ds(oy + y, ox + x);
          s.z(1, y, x) = cr_ds(oy + y, ox + x);
        }
      }
      NeighborAvailability avail{ox > 0, oy > 0};
      ReferenceArray ref =
          extract_reference_array(luma_ds, cb_ds, cr_ds, ox, oy, n, avail);
      s.s0 = std::move(ref.s0);
      s.s0_available = std::move(ref.available);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<BlockSample> extract_corpus(const CorpusConfig &cfg,
                                        std::ostream *log) {
  std::vector<std::filesystem::path> files;
  for (const auto &entry : std::filesystem::directory_iterator(cfg.image_dir)) {
    if (!entry.is_regular_file())
      continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".ppm")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error("no .ppm images found in " +
                             cfg.image_dir.string());
  std::vector<BlockSample> all;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Rng rng(mix_seed(cfg.seed, i));
    try {
      Image img = read_ppm(files[i]);
      auto samples =
          extract_blocks(img, cfg, rng, files[i].filename().string());
      all.insert(all.end(), std::make_move_iterator(samples.begin()),
                 std::make_move_iterator(samples.end()));
    } catch (const std::runtime_error &e) {
      if (std::string(e.what()).find("too small") != std::string::npos) {
        if (log)
          *log << "warning: skipping " << files[i].filename().string() << ": "
               << e.what() << "\n";
        continue;
      }
      throw;
    }
  }
  return all;
}

void write_container(const std::filesystem::path &path,
                     const std::vector<BlockSample> &samples) {
  std::string out;
  out += "CIPB";
  put_u16(out, 1);                      // version
  out.push_back(static_cast<char>(16)); // stored bitdepth
  put_u32(out, static_cast<std::uint32_t>(samples.size()));
  for (const BlockSample &s : samples) {
    const std::size_t b = 4 * s.n + 1;
    out.push_back(static_cast<char>(s.n));
    put_u32(out, s.origin_x);
    put_u32(out, s.origin_y);
    put_tensor_u16(out, s.x0);
    put_tensor_u16(out, s.s0);
    std::vector<std::uint8_t> bitmap((b + 7) / 8, 0);
    for (std::size_t i = 0; i < b; ++i)
      if (i < s.s0_available.size() && s.s0_available[i])
        bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    for (std::uint8_t byte : bitmap)
      out.push_back(static_cast<char>(byte));
    put_tensor_u16(out, s.z);
  }
  atomic_write_file(path, out);
}

std::vector<BlockSample> read_container(const std::filesystem::path &path) {
  const std::string buf = read_file(path);
  ByteReader r{buf};
  if (buf.size() < 4 || buf.compare(0, 4, "CIPB") != 0)
    throw std::runtime_error("container: bad magic in " + path.string());
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != 1)
    throw std::runtime_error("container: format version mismatch (got " +
                             std::to_string(version) + ", expected 1)");
  r.u8(); // bitdepth, fixed 16 for now
  const std::uint32_t count = r.u32();
  std::vector<BlockSample> samples(count);
  for (BlockSample &s : samples) {
    s.n = r.u8();
    const std::size_t b = 4 * s.n + 1;
    s.origin_x = r.u32();
    s.origin_y = r.u32();
    s.x0 = Tensor({1, s.n, s.n});
    read_tensor_u16(r, s.x0);
    s.s0 = Tensor({3, b});
    read_tensor_u16(r, s.s0);
    s.s0_available.assign(b, 0);
    std::vector<std::uint8_t> bitmap((b + 7) / 8);
    for (auto &byte : bitmap)
      byte = r.u8();
    for (std::size_t i = 0; i < b; ++i)
      s.s0_available[i] = (bitmap[i / 8] >> (i % 8)) & 1u;
    s.z = Tensor({2, s.n, s.n});
    read_tensor_u16(r, s.z);
  }
  return samples;
}

void write_predictions(const std::filesystem::path &path,
                       const std::vector<PredictionRecord> &records,
                       int bitdepth) {
  std::string out;
  out += "CIPP";
  put_u16(out, 1);
  out.push_back(static_cast<char>(bitdepth));
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const PredictionRecord &rec : records) {
    out.push_back(static_cast<char>(rec.n));
    for (std::uint16_t v : rec.samples)
      put_u16(out, v);
  }
  atomic_write_file(path, out);
}

std::vector<PredictionRecord>
read_predictions(const std::filesystem::path &path, int *bitdepth) {
  const std::string buf = read_file(path);
  ByteReader r{buf};
  if (buf.size() < 4 || buf.compare(0, 4, "CIPP") != 0)
    throw std::runtime_error("predictions: bad magic in " + path.string());
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != 1)
    throw std::runtime_error("predictions: format version mismatch (got " +
                             std::to_string(version) + ", expected 1)");
  const int bd = r.u8();
  if (bitdepth)
    *bitdepth = bd;
  const std::uint32_t count = r.u32();
  std::vector<PredictionRecord> records(count);
  for (PredictionRecord &rec : records) {
    rec.n = r.u8();
    rec.samples.resize(2 * rec.n * rec.n);
    for (auto &v : rec.samples)
      v = r.u16();
  }
  return records;
}

} // namespace cip
