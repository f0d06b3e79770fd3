#include "gcml/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

namespace gcml {

std::uint8_t quantize_u8(float v) {
  const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(clamped * 255.0 + 0.5));
}

namespace {

class HeaderParser {
 public:
  explicit HeaderParser(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  int number(const char* what) {
    skip_space_and_comments();
    long value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1 << 24) throw DataError(std::string("image header: ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw DataError(std::string("image header: malformed ") + what);
    return static_cast<int>(value);
  }

  std::size_t pos_ = 0;
  const std::vector<std::uint8_t>& bytes_;
};

}  // namespace

Image decode_pgm_ppm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw DataError("image header: expected P5 or P6 magic");
  Image img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderParser p(bytes);
  p.pos_ = 2;
  img.width = p.number("width");
  img.height = p.number("height");
  const int maxval = p.number("maxval");
  if (img.width <= 0 || img.height <= 0) throw DataError("image header: zero dimension");
  if (maxval != 255) throw DataError("image header: maxval must be 255");
  if (p.pos_ >= bytes.size() || !std::isspace(bytes[p.pos_]))
    throw DataError("image header: missing separator before payload");
  ++p.pos_;
  const std::size_t count = static_cast<std::size_t>(img.channels) * img.width * img.height;
  if (bytes.size() - p.pos_ < count) throw DataError("image payload truncated");
  img.pixels.resize(count);
  // Payload is interleaved; pixels are stored planar.
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < img.channels; ++c)
      img.pixels[c * plane + i] = static_cast<float>(bytes[p.pos_ + i * img.channels + c]) / 255.0f;
  return img;
}

Image load_pgm_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  try {
    return decode_pgm_ppm(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_pgm_ppm(const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw DataError("image must have 1 or 3 channels");
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  if (image.pixels.size() != plane * image.channels) throw DataError("image pixel count mismatch");
  std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                       std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + plane * image.channels);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < image.channels; ++c) out.push_back(quantize_u8(image.pixels[c * plane + i]));
  return out;
}

void save_pgm_ppm(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_pgm_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

void save_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels == 3) return save_pgm_ppm(path, image);
  if (image.channels != 1) throw DataError("image must have 1 or 3 channels");
  Image rgb = image;
  rgb.channels = 3;
  rgb.pixels.clear();
  for (int c = 0; c < 3; ++c) rgb.pixels.insert(rgb.pixels.end(), image.pixels.begin(), image.pixels.end());
  save_pgm_ppm(path, rgb);
}

void SyntheticSpec::validate() const {
  if (num_classes < 1) throw std::invalid_argument("synthetic: num_classes must be >= 1");
  if (instances_per_class < 1) throw std::invalid_argument("synthetic: instances_per_class must be >= 1");
  if (views_per_instance < 1) throw std::invalid_argument("synthetic: views_per_instance must be >= 1");
  if (image_size % 2 != 0) throw std::invalid_argument("synthetic: image_size must be even");
  if (image_size < 8) throw std::invalid_argument("synthetic: image_size must be at least 8");
  if (noise_sigma < 0) throw std::invalid_argument("synthetic: noise_sigma must be >= 0");
  if (jitter_px < 0 || 4 * jitter_px >= image_size)
    throw std::invalid_argument("synthetic: jitter_px out of range for image_size");
}

namespace {

double ramp(double t) { return std::clamp(t + 0.5, 0.0, 1.0); }

double box(double u, double v, double half_len, double half_w) {
  return std::min(ramp(half_len - std::abs(u)), ramp(half_w - std::abs(v)));
}

enum class Shape2 { l_shape, cross, blob, checker, bar, ring, triangle, t_shape };

struct Object {
  Shape2 shape;
  double cx, cy, theta, amp;
};

struct InstanceGeometry {
  std::vector<Object> objects;
  bool stripes = false;
  double stripe_theta = 0, stripe_phase = 0;
};

// Class-fixed structure: which shapes, how many, and their sizes. Sizes are
// in units of image_size / 32.
struct Family {
  std::vector<std::pair<Shape2, int>> parts;
  bool stripes = false;
};

Family family_for(int class_id) {
  switch (class_id % 10) {
    case 0: return {{{Shape2::l_shape, 3}}};
    case 1: return {{{Shape2::cross, 3}}};
    case 2: return {{{Shape2::blob, 6}}};
    case 3: return {{{Shape2::checker, 2}}};
    case 4: return {{{Shape2::blob, 3}}, true};
    case 5: return {{{Shape2::bar, 4}}};
    case 6: return {{{Shape2::ring, 3}}};
    case 7: return {{{Shape2::triangle, 3}}};
    case 8: return {{{Shape2::t_shape, 3}}};
    default: return {{{Shape2::l_shape, 2}, {Shape2::ring, 1}, {Shape2::blob, 2}}};
  }
}

double coverage(const Object& o, double x, double y, double unit) {
  const double dx = x - o.cx, dy = y - o.cy;
  const double c = std::cos(o.theta), s = std::sin(o.theta);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  switch (o.shape) {
    case Shape2::l_shape: {
      const double len = 9 * unit, w = 1.25 * unit;
      return std::max(box(u - len / 2, v, len / 2, w), box(u, v - len / 2, w, len / 2));
    }
    case Shape2::cross: {
      const double half = 5 * unit, w = 1.25 * unit;
      return std::max(box(u, v, half, w), box(u, v, w, half));
    }
    case Shape2::blob: {
      const double sigma = 1.6 * unit;
      return std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
    case Shape2::checker: {
      const double half = 5 * unit, cell = 2.5 * unit;
      const double inside = box(u, v, half, half);
      const auto parity = (static_cast<long>(std::floor(u / cell)) + static_cast<long>(std::floor(v / cell))) & 1;
      return inside * (parity ? 1.0 : 0.25);
    }
    case Shape2::bar: return box(u, v, 6 * unit, unit);
    case Shape2::ring: {
      const double r = std::sqrt(dx * dx + dy * dy);
      return ramp(0.75 * unit - std::abs(r - 3.5 * unit));
    }
    case Shape2::triangle: {
      const double apothem = 2.5 * unit;
      double cov = 1.0;
      for (int k = 0; k < 3; ++k) {
        const double a = o.theta + 2 * std::numbers::pi * k / 3;
        cov = std::min(cov, ramp(apothem - (std::cos(a) * dx + std::sin(a) * dy)));
      }
      return cov;
    }
    case Shape2::t_shape: {
      const double top = box(u, v, 5 * unit, 1.25 * unit);
      const double stem = box(u, v - 4.5 * unit, 1.25 * unit, 4 * unit);
      return std::max(top, stem);
    }
  }
  return 0.0;
}

InstanceGeometry draw_instance(const SyntheticSpec& spec, int class_id, Prng& rng) {
  const double size = spec.image_size;
  const Family fam = family_for(class_id);
  InstanceGeometry g;
  for (const auto& [shape, count] : fam.parts) {
    for (int i = 0; i < count; ++i) {
      Object o;
      o.shape = shape;
      o.cx = rng.uniform(0.2 * size, 0.8 * size);
      o.cy = rng.uniform(0.2 * size, 0.8 * size);
      o.theta = rng.uniform(0.0, 2 * std::numbers::pi);
      o.amp = rng.uniform(0.55, 0.85);
      g.objects.push_back(o);
    }
  }
  if (fam.stripes) {
    g.stripes = true;
    g.stripe_theta = rng.uniform(0.0, std::numbers::pi);
    g.stripe_phase = rng.uniform(0.0, 2 * std::numbers::pi);
  }
  return g;
}

Image render_view(const SyntheticSpec& spec, const InstanceGeometry& geom, int class_id, Prng& rng) {
  const int n = spec.image_size;
  const double unit = n / 32.0 * (1.0 + 0.15 * (class_id / 10));
  const double brightness = rng.uniform(0.9, 1.1);
  const int span = 2 * spec.jitter_px + 1;
  const int jx = static_cast<int>(rng.below(static_cast<std::uint32_t>(span))) - spec.jitter_px;
  const int jy = static_cast<int>(rng.below(static_cast<std::uint32_t>(span))) - spec.jitter_px;

  Image img;
  img.channels = 1;
  img.height = n;
  img.width = n;
  img.pixels.resize(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = j + 0.5 - jx, y = i + 0.5 - jy;
      double v = 0.1;
      if (geom.stripes) {
        const double t = std::cos(geom.stripe_theta) * x + std::sin(geom.stripe_theta) * y;
        v += 0.2 * (0.5 + 0.5 * std::sin(2 * std::numbers::pi * t / (6 * unit) + geom.stripe_phase));
      }
      for (const auto& o : geom.objects) v += o.amp * coverage(o, x, y, unit);
      img.pixels[static_cast<std::size_t>(i) * n + j] = static_cast<float>(std::min(v, 1.0));
    }
  }
  for (auto& p : img.pixels) {
    double v = brightness * p;
    if (spec.noise_sigma > 0) v += spec.noise_sigma * rng.normal();
    p = static_cast<float>(quantize_u8(static_cast<float>(v))) / 255.0f;
  }
  return img;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset out;
  std::uint64_t item = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.instances_per_class; ++i) {
      const std::uint64_t instance = static_cast<std::uint64_t>(c) * spec.instances_per_class + i;
      Prng geom_rng(spec.seed ^ (0xD1B54A32D192ED03ull * (instance + 1)));
      const auto geom = draw_instance(spec, c, geom_rng);
      for (int v = 0; v < spec.views_per_instance; ++v, ++item) {
        Prng view_rng(spec.seed ^ item);
        Sample s;
        s.meta.relative_path = "class_" + std::to_string(c) + "/inst_" + std::to_string(i) + "/view_" +
                               std::to_string(v) + ".pgm";
        s.meta.class_id = c;
        s.meta.instance_id = i;
        s.meta.view_id = v;
        s.meta.rotation_deg = 0;
        s.image = render_view(spec, geom, c, view_rng);
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

std::vector<int> identity_labels(const Dataset& data) {
  std::map<std::pair<int, int>, int> ids;
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    auto [it, inserted] = ids.emplace(std::make_pair(s.meta.class_id, s.meta.instance_id),
                                      static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

std::vector<int> class_labels(const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(s.meta.class_id);
  return out;
}

namespace {
constexpr const char* kManifestHeader = "relative_path\tclass_id\tinstance_id\tview_id\trotation_deg";
}

void write_manifest(std::ostream& out, const std::vector<ManifestRow>& rows) {
  out << kManifestHeader << '\n';
  for (const auto& r : rows)
    out << r.relative_path << '\t' << r.class_id << '\t' << r.instance_id << '\t' << r.view_id << '\t'
        << r.rotation_deg << '\n';
}

std::vector<ManifestRow> read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw DataError("manifest: missing or wrong header line");
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    const auto where = "manifest line " + std::to_string(line_no) + ": ";
    if (cols.size() != 5) throw DataError(where + "expected 5 tab-separated columns");
    ManifestRow r;
    r.relative_path = cols[0];
    try {
      std::size_t used = 0;
      auto to_int = [&](const std::string& s) {
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      };
      r.class_id = to_int(cols[1]);
      r.instance_id = to_int(cols[2]);
      r.view_id = to_int(cols[3]);
      r.rotation_deg = to_int(cols[4]);
    } catch (const std::logic_error&) {
      throw DataError(where + "non-integer field");
    }
    if (r.class_id < 0 || r.instance_id < 0 || r.view_id < 0) throw DataError(where + "negative id");
    if (r.rotation_deg % 90 != 0 || r.rotation_deg < 0 || r.rotation_deg > 270)
      throw DataError(where + "rotation_deg must be 0, 90, 180 or 270");
    if (!seen.insert(r.relative_path).second) throw DataError(where + "duplicate path " + r.relative_path);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_dataset(const std::filesystem::path& root, const Dataset& data) {
  std::vector<ManifestRow> rows;
  for (const auto& s : data) {
    const auto path = root / s.meta.relative_path;
    std::filesystem::create_directories(path.parent_path());
    save_pgm_ppm(path, s.image);
    rows.push_back(s.meta);
  }
  std::ofstream out(root / "manifest.tsv", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest under '" + root.string() + "'");
  write_manifest(out, rows);
}

Dataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest) {
  const auto manifest_path = manifest.is_absolute() ? manifest : root / manifest;
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest '" + manifest_path.string() + "'");
  Dataset out;
  for (auto& row : read_manifest(in)) {
    Sample s;
    s.image = load_pgm_ppm(root / row.relative_path);
    s.meta = std::move(row);
    out.push_back(std::move(s));
  }
  return out;
}

Tensor<float> stack_images(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("cannot stack an empty selection");
  const auto& first = data.at(indices[0]).image;
  const std::size_t per = first.pixels.size();
  std::vector<float> values;
  values.reserve(per * indices.size());
  for (auto idx : indices) {
    const auto& img = data.at(idx).image;
    if (img.channels != first.channels || img.height != first.height || img.width != first.width)
      throw DataError("images in a batch must share one shape");
    values.insert(values.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor<float>({indices.size(), static_cast<std::size_t>(first.channels),
                        static_cast<std::size_t>(first.height), static_cast<std::size_t>(first.width)},
                       std::move(values));
}

Tensor<float> stack_images(const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return stack_images(data, all);
}

Dataset select(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data.at(i));
  return out;
}

Image rotate_image(const Image& image, int quarter_turns) {
  if (image.height != image.width) throw DataError("rotation needs a square image");
  const int n = image.width;
  Image cur = image;
  const int k = ((quarter_turns % 4) + 4) % 4;
  for (int t = 0; t < k; ++t) {
    Image next = cur;
    for (int c = 0; c < cur.channels; ++c)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          next.pixels[(static_cast<std::size_t>(c) * n + i) * n + j] = cur.at(c, j, n - 1 - i);
    cur = std::move(next);
  }
  return cur;
}

}  // namespace gcml
