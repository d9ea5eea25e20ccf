#include "breps/data.hpp"

#include <png.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "breps/error.hpp"

namespace breps {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(Device d) { return d == Device::desktop ? "desktop" : "mobile"; }

Device parse_device(std::string_view s) {
  if (s == "desktop") return Device::desktop;
  if (s == "mobile") return Device::mobile;
  throw InvalidInput("device must be one of {desktop, mobile}, got '" + std::string(s) + "'");
}

// ---- numbers ----

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw InvalidInput("cannot format number");
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw InvalidInput("not a number: '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// ---- masks ----

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Raster<std::uint8_t> decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    int v = 0;
    const auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc{}) throw InvalidInput("pgm: malformed header");
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw InvalidInput("pgm: expected binary P5 magic");
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw InvalidInput("pgm: unsupported dimensions or maxval");
  }
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() < pos + n) throw InvalidInput("pgm: truncated raster");
  Raster<std::uint8_t> img(w, h);
  auto vals = img.values();
  for (std::size_t i = 0; i < n; ++i) vals[i] = static_cast<std::uint8_t>(bytes[pos + i]);
  return img;
}

std::string encode_pgm(const Raster<std::uint8_t>& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                    "\n255\n";
  out.reserve(out.size() + img.size());
  for (auto v : img.values()) out.push_back(static_cast<char>(v));
  return out;
}

Raster<std::uint8_t> read_pgm(const fs::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const InvalidInput& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_pgm(const Raster<std::uint8_t>& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_pgm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Raster<std::uint8_t> read_png_gray(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": not a readable PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  Raster<std::uint8_t> img(w, h);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int r = 0; r < h; ++r) rows[r] = &img.at(0, r);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Raster<std::uint8_t> read_gray(const fs::path& path) {
  const std::string head = [&] {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string s(8, '\0');
    in.read(s.data(), 8);
    s.resize(static_cast<std::size_t>(in.gcount()));
    return s;
  }();
  if (head.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(head.data()), 0, 8) == 0) {
    return read_png_gray(path);
  }
  return read_pgm(path);
}

BinaryMask binarize(const Raster<std::uint8_t>& gray) {
  BinaryMask m(gray.width(), gray.height());
  auto out = m.values();
  auto in = gray.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] != 0;
  return m;
}

Raster<std::uint8_t> to_gray(const BinaryMask& mask) {
  Raster<std::uint8_t> g(mask.width(), mask.height());
  auto out = g.values();
  auto in = mask.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] ? 255 : 0;
  return g;
}

// ---- instances ----

Instance load_mask_instance(const fs::path& mask_path, std::string image_id) {
  BinaryMask mask = binarize(read_gray(mask_path));
  if (count_foreground(mask) == 0) {
    throw EmptyMask(mask_path.string() + ": mask has no foreground pixels");
  }
  return make_instance(std::move(image_id), std::move(mask));
}

Instance load_instance(const fs::path& image_path, const fs::path& mask_path) {
  Instance inst = load_mask_instance(mask_path, mask_path.stem().string());
  if (!image_path.empty()) {
    const auto image = read_gray(image_path);
    if (image.width() != inst.width || image.height() != inst.height) {
      throw InvalidInput("image " + image_path.string() + " is " + std::to_string(image.width()) +
                         "x" + std::to_string(image.height()) + " but mask is " +
                         std::to_string(inst.width) + "x" + std::to_string(inst.height));
    }
  }
  return inst;
}

Instance downscale_longest(const Instance& inst, int limit) {
  if (limit < 1) throw InvalidParameter("downscale_longest: limit must be >= 1");
  const int longest = std::max(inst.width, inst.height);
  if (longest <= limit) return inst;
  const double scale = static_cast<double>(limit) / longest;
  const int w = inst.width >= inst.height
                    ? limit
                    : std::max(1, static_cast<int>(std::lround(inst.width * scale)));
  const int h = inst.height >= inst.width
                    ? limit
                    : std::max(1, static_cast<int>(std::lround(inst.height * scale)));
  BinaryMask mask(w, h);
  for (int r = 0; r < h; ++r) {
    const int sr = std::min(inst.height - 1, static_cast<int>((r + 0.5) * inst.height / h));
    for (int c = 0; c < w; ++c) {
      const int sc = std::min(inst.width - 1, static_cast<int>((c + 0.5) * inst.width / w));
      mask.at(c, r) = inst.gt_mask.at(sc, sr);
    }
  }
  return make_instance(inst.image_id, std::move(mask));
}

std::string serialize_instance(const Instance& inst) {
  std::string out = inst.image_id;
  out.push_back('\0');
  auto put = [&out](const auto& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out.append(p, sizeof v);
  };
  put(inst.width);
  put(inst.height);
  for (auto v : inst.gt_mask.values()) put(v);
  for (auto v : inst.objectness.values()) put(v);
  put(inst.tight.x1);
  put(inst.tight.y1);
  put(inst.tight.x2);
  put(inst.tight.y2);
  return out;
}

// ---- toy corpus ----

namespace {

class CorpusRng {
 public:
  explicit CorpusRng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 engine_;
};

void fill_rect(BinaryMask& m, int x0, int y0, int x1, int y1) {
  for (int r = std::max(0, y0); r < std::min(m.height(), y1); ++r)
    for (int c = std::max(0, x0); c < std::min(m.width(), x1); ++c) m.at(c, r) = 1;
}

void fill_ellipse(BinaryMask& m, double cx, double cy, double rx, double ry) {
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      const double dx = (c + 0.5 - cx) / rx, dy = (r + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) m.at(c, r) = 1;
    }
  }
}

BinaryMask toy_mask(CorpusRng& rng, int size) {
  const double s = size;
  const int margin = 2;
  BinaryMask m(size, size, 0);
  const int thick_lo = std::min(6, size / 3);
  const int thick_hi = std::max(thick_lo, static_cast<int>(0.25 * s));
  switch (rng.integer(0, 4)) {
    case 0: {  // rectangle
      const int w = rng.integer(static_cast<int>(0.2 * s), static_cast<int>(0.55 * s));
      const int h = rng.integer(static_cast<int>(0.2 * s), static_cast<int>(0.55 * s));
      const int x = rng.integer(margin, size - margin - w);
      const int y = rng.integer(margin, size - margin - h);
      fill_rect(m, x, y, x + w, y + h);
      break;
    }
    case 1: {  // ellipse
      const double rx = rng.uniform(0.12 * s, 0.28 * s);
      const double ry = rng.uniform(0.12 * s, 0.28 * s);
      const double cx = rng.uniform(margin + rx, s - margin - rx);
      const double cy = rng.uniform(margin + ry, s - margin - ry);
      fill_ellipse(m, cx, cy, rx, ry);
      break;
    }
    case 2: {  // L-shape
      const int w = rng.integer(static_cast<int>(0.35 * s), static_cast<int>(0.55 * s));
      const int h = rng.integer(static_cast<int>(0.35 * s), static_cast<int>(0.55 * s));
      const int t_hi = std::min(thick_hi, std::min(w, h) - 1);
      const int t = rng.integer(std::min(thick_lo, t_hi), t_hi);
      const int x = rng.integer(margin, size - margin - w);
      const int y = rng.integer(margin, size - margin - h);
      const bool flip_x = rng.integer(0, 1) == 1;
      const bool flip_y = rng.integer(0, 1) == 1;
      const int vx = flip_x ? x + w - t : x;
      const int hy = flip_y ? y : y + h - t;
      fill_rect(m, vx, y, vx + t, y + h);
      fill_rect(m, x, hy, x + w, hy + t);
      break;
    }
    case 3: {  // bar
      const int t = rng.integer(thick_lo, std::max(thick_lo, static_cast<int>(0.2 * s)));
      const int len = rng.integer(static_cast<int>(0.4 * s), static_cast<int>(0.7 * s));
      const bool horizontal = rng.integer(0, 1) == 1;
      const int w = horizontal ? len : t, h = horizontal ? t : len;
      const int x = rng.integer(margin, size - margin - w);
      const int y = rng.integer(margin, size - margin - h);
      fill_rect(m, x, y, x + w, y + h);
      break;
    }
    default: {  // 2-3 overlapping or nearby discs
      const int blobs = rng.integer(2, 3);
      const double spread = 0.2 * s;
      const double r_max = std::max(3.0, 0.16 * s);
      const double cx = rng.uniform(margin + spread + r_max, s - margin - spread - r_max);
      const double cy = rng.uniform(margin + spread + r_max, s - margin - spread - r_max);
      for (int i = 0; i < blobs; ++i) {
        const double r = rng.uniform(std::max(3.0, 0.08 * s), r_max);
        fill_ellipse(m, cx + rng.uniform(-spread, spread), cy + rng.uniform(-spread, spread), r, r);
      }
      break;
    }
  }
  return m;
}

}  // namespace

std::vector<Instance> make_toy_corpus(int n, int size, std::uint64_t seed) {
  if (n < 1) throw InvalidParameter("make_toy_corpus: n must be >= 1");
  if (size < 16) throw InvalidParameter("make_toy_corpus: size must be >= 16");
  CorpusRng rng(seed);
  std::vector<Instance> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    BinaryMask mask = toy_mask(rng, size);
    while (count_foreground(mask) == 0) mask = toy_mask(rng, size);
    char id[32];
    std::snprintf(id, sizeof id, "toy_%04d", i);
    out.push_back(make_instance(id, std::move(mask)));
  }
  return out;
}

void save_corpus(const std::vector<Instance>& corpus, const fs::path& dir) {
  fs::create_directories(dir / "masks");
  json manifest;
  manifest["instances"] = json::array();
  for (const auto& inst : corpus) {
    const fs::path rel = fs::path("masks") / (inst.image_id + ".pgm");
    write_pgm(to_gray(inst.gt_mask), dir / rel);
    manifest["instances"].push_back({{"image_id", inst.image_id},
                                     {"mask", rel.string()},
                                     {"width", inst.width},
                                     {"height", inst.height},
                                     {"tight", inst.tight.as_array()}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

std::vector<Instance> load_corpus(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw NotFound("no corpus manifest at " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what(), 0);
  }
  std::vector<Instance> out;
  try {
    for (const auto& entry : manifest.at("instances")) {
      out.push_back(load_mask_instance(dir / entry.at("mask").get<std::string>(),
                                  entry.at("image_id").get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what(), 0);
  }
  return out;
}

// ---- annotations ----

std::vector<UserAnnotation> parse_annotations(std::string_view text) {
  std::vector<UserAnnotation> out;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (!header_seen) {
      if (line != kAnnotationHeader) {
        throw ParseError("annotations: expected header '" + std::string(kAnnotationHeader) + "'",
                         line_no);
      }
      header_seen = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 7) {
      throw ParseError("annotations line " + std::to_string(line_no) + ": expected 7 fields, got " +
                           std::to_string(f.size()),
                       line_no);
    }
    try {
      UserAnnotation a;
      a.image_id = f[0];
      a.user_id = f[1];
      a.device = parse_device(f[2]);
      a.bbox = {parse_double(f[3]), parse_double(f[4]), parse_double(f[5]), parse_double(f[6])};
      out.push_back(std::move(a));
    } catch (const InvalidInput& e) {
      throw ParseError("annotations line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    if (end == text.size()) break;
  }
  if (!header_seen) throw ParseError("annotations: missing header", 1);
  return out;
}

std::vector<UserAnnotation> load_annotations(const fs::path& csv_path) {
  return parse_annotations(read_file(csv_path));
}

std::string format_annotations(const std::vector<UserAnnotation>& rows) {
  std::string out(kAnnotationHeader);
  out.push_back('\n');
  for (const auto& a : rows) {
    out += a.image_id + ',' + a.user_id + ',' + to_string(a.device) + ',' +
           format_double(a.bbox.x1) + ',' + format_double(a.bbox.y1) + ',' +
           format_double(a.bbox.x2) + ',' + format_double(a.bbox.y2) + '\n';
  }
  return out;
}

}  // namespace breps
