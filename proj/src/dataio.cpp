#include "sspcab/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "sspcab/errors.hpp"
#include "sspcab/kv_text.hpp"
#include "sspcab/layers.hpp"

namespace sspcab {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > 1'000'000) throw FormatError(std::string("PNM ") + what + " is implausibly large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw FormatError(std::string("PNM header: expected ") + what, start);
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }
  bool at_end() const { return pos_ >= b_.size(); }
  std::uint8_t peek() const { return b_[pos_]; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

RasterImage decode_raster(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file (expected magic P5 or P6)", 0);
  }
  RasterImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader r(bytes.subspan(2));
  img.width = r.number("width");
  img.height = r.number("height");
  r.skip_space_and_comments();
  const std::size_t maxval_at = r.pos() + 2;
  const std::size_t maxval = r.number("maxval");
  if (img.width == 0 || img.height == 0) throw FormatError("PNM image has a zero dimension", 2);
  if (maxval != 255) {
    throw FormatError("unsupported PNM maxval " + std::to_string(maxval) + " (only 255 is supported)", maxval_at);
  }
  if (r.at_end() || !std::isspace(r.peek())) {
    throw FormatError("PNM header must end with a single whitespace byte", r.pos() + 2);
  }
  r.advance();
  const std::size_t data_at = r.pos() + 2;
  const std::size_t expected = img.width * img.height * img.channels;
  if (bytes.size() - data_at < expected) {
    throw FormatError("truncated PNM payload: expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size() - data_at),
                      bytes.size());
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_at),
                    bytes.begin() + static_cast<std::ptrdiff_t>(data_at + expected));
  return img;
}

std::vector<std::uint8_t> encode_raster(const RasterImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("raster images must have 1 or 3 channels");
  if (img.pixels.size() != img.width * img.height * img.channels) {
    throw ShapeError("raster pixel count does not match " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + "x" + std::to_string(img.channels));
  }
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

RasterImage load_raster(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_raster(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void save_raster(const RasterImage& img, const std::filesystem::path& path) { write_file(path, encode_raster(img)); }

Tensor raster_to_tensor(const RasterImage& img) {
  Tensor t({1, img.height, img.width, img.channels});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<double>(img.pixels[i]) / 255.0;
  return t;
}

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  bool split_known = false;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const std::size_t line_at = offset;
    offset += line.size() + 1;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;

    std::istringstream fields{std::string(body)};
    std::string split, path, group, label, mask, extra;
    if (!(fields >> split >> path >> group >> label)) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 'split path group label [mask_path]'",
                        line_at);
    }
    fields >> mask;
    if (fields >> extra) throw FormatError("manifest line " + std::to_string(line_no) + ": too many fields", line_at);

    Split s;
    if (split == "train") {
      s = Split::train;
    } else if (split == "test") {
      s = Split::test;
    } else {
      throw FormatError("manifest line " + std::to_string(line_no) + ": split must be train or test", line_at);
    }
    if (!split_known) {
      m.split = s;
      split_known = true;
    } else if (s != m.split) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": mixes train and test entries", line_at);
    }
    if (label != "0" && label != "1") {
      throw FormatError("manifest line " + std::to_string(line_no) + ": label must be 0 or 1", line_at);
    }
    ManifestEntry e{path, group, label == "1" ? 1 : 0, std::nullopt};
    if (!mask.empty()) e.mask = mask;
    if (s == Split::train && e.label != 0) {
      throw ProtocolError("manifest line " + std::to_string(line_no) +
                          ": training entries must be normal (label 0); one-class training only sees normal samples");
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw FormatError("manifest is empty", 0);
  return m;
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string s;
  for (const auto& e : manifest.entries) {
    s += std::string(to_string(manifest.split)) + " " + e.image + " " + e.group + " " + std::to_string(e.label);
    if (e.mask) s += " " + *e.mask;
    s += "\n";
  }
  return s;
}

std::filesystem::path resolve_entry_path(const std::filesystem::path& manifest_path, const std::string& entry_path) {
  const std::filesystem::path p(entry_path);
  return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  DatasetManifest m = parse_manifest(std::string(bytes.begin(), bytes.end()));
  std::vector<std::string> missing;
  for (const auto& e : m.entries) {
    if (!std::filesystem::exists(resolve_entry_path(path, e.image))) missing.push_back(e.image);
    if (e.mask && !std::filesystem::exists(resolve_entry_path(path, *e.mask))) missing.push_back(*e.mask);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
    throw IoError("manifest " + path.string() + " references missing files: " + list);
  }
  for (const auto& e : m.entries) {
    if (!e.mask) continue;
    const RasterImage img = load_raster(resolve_entry_path(path, e.image));
    const RasterImage mask = load_raster(resolve_entry_path(path, *e.mask));
    if (img.width != mask.width || img.height != mask.height) {
      throw FormatError("mask " + *e.mask + " does not match the size of " + e.image, 0);
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  const std::string text = format_manifest(manifest);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Tensor load_manifest_images(const DatasetManifest& manifest, const std::filesystem::path& manifest_path) {
  Tensor out;
  std::size_t per = 0;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const RasterImage img = load_raster(resolve_entry_path(manifest_path, manifest.entries[i].image));
    if (i == 0) {
      out = Tensor({manifest.entries.size(), img.height, img.width, img.channels});
      per = img.pixels.size();
    } else if (img.height != out.dim(1) || img.width != out.dim(2) || img.channels != out.dim(3)) {
      throw ShapeError("image " + manifest.entries[i].image + " differs in size from the first manifest image");
    }
    for (std::size_t k = 0; k < per; ++k) out[i * per + k] = static_cast<double>(img.pixels[k]) / 255.0;
  }
  return out;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct Grating {
  double freq, cos_t, sin_t, phase, amplitude;

  double at(double x, double y) const {
    return amplitude * std::sin(2.0 * std::numbers::pi * freq * (x * cos_t + y * sin_t) + phase);
  }
};

Grating random_grating(Rng& rng, double f_lo, double f_hi, double a_lo, double a_hi) {
  const double theta = rng.uniform(0.0, std::numbers::pi);
  return Grating{rng.uniform(f_lo, f_hi), std::cos(theta), std::sin(theta), rng.uniform(0.0, 2.0 * std::numbers::pi),
                 rng.uniform(a_lo, a_hi)};
}

// Normal content: two gratings in the 0.04-0.10 cycles/pixel band.
std::vector<double> normal_image(Rng& rng, std::size_t size) {
  const Grating g1 = random_grating(rng, 0.04, 0.10, 0.15, 0.22);
  const Grating g2 = random_grating(rng, 0.04, 0.10, 0.15, 0.22);
  std::vector<double> px(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      px[y * size + x] = 0.5 + g1.at(fx, fy) + g2.at(fx, fy) + rng.uniform(-0.02, 0.02);
    }
  return px;
}

std::string numbered(const char* stem, std::size_t i, const char* ext) {
  std::string digits = std::to_string(i);
  return std::string(stem) + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits + ext;
}

std::string group_name(const char* prefix, std::size_t index) {
  std::string digits = std::to_string(index);
  return std::string(prefix) + std::string(digits.size() < 2 ? 2 - digits.size() : 0, '0') + digits;
}

}  // namespace

SynthCorpus synth_generate(const std::filesystem::path& out_dir, std::size_t n_train, std::size_t n_test,
                           double anomaly_fraction, std::uint64_t seed, const SynthOptions& options) {
  if (n_train == 0 || n_test == 0) throw ConfigError("n_train and n_test must be >= 1");
  if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0)) {
    throw ConfigError("anomaly_fraction must lie in [0, 1], got " + format_double(anomaly_fraction));
  }
  if (options.patch_min == 0 || options.patch_min > options.patch_max || options.patch_max > options.size) {
    throw ConfigError("synthetic patch bounds must satisfy 1 <= min <= max <= image size");
  }
  if (options.frames_per_group == 0) throw ConfigError("frames_per_group must be >= 1");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "train", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "test", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const std::size_t size = options.size;
  SynthCorpus corpus;
  corpus.train.split = Split::train;
  corpus.test.split = Split::test;

  for (std::size_t i = 0; i < n_train; ++i) {
    Rng rng(seed, 10'000'000 + i);
    RasterImage img{size, size, 1, {}};
    for (double v : normal_image(rng, size)) img.pixels.push_back(to_byte(v));
    const std::string rel = "train/" + numbered("img_", i, ".pgm");
    save_raster(img, out_dir / rel);
    corpus.train.entries.push_back({rel, group_name("train", i / options.frames_per_group), 0, std::nullopt});
  }

  const auto n_anomalous = static_cast<std::size_t>(std::llround(anomaly_fraction * static_cast<double>(n_test)));
  std::vector<std::size_t> order(n_test);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng pick(seed, 20'000'000);
  for (std::size_t i = n_test; i > 1; --i) std::swap(order[i - 1], order[pick.below(i)]);
  std::vector<bool> anomalous(n_test, false);
  for (std::size_t k = 0; k < n_anomalous; ++k) anomalous[order[k]] = true;

  for (std::size_t i = 0; i < n_test; ++i) {
    Rng rng(seed, 30'000'000 + i);
    std::vector<double> px = normal_image(rng, size);
    const std::string rel = "test/" + numbered("img_", i, ".pgm");
    ManifestEntry entry{rel, group_name("seq", i / options.frames_per_group), anomalous[i] ? 1 : 0, std::nullopt};

    if (anomalous[i]) {
      const std::size_t side = options.patch_min + rng.below(options.patch_max - options.patch_min + 1);
      const std::size_t top = rng.below(size - side + 1);
      const std::size_t left = rng.below(size - side + 1);
      const bool texture = rng.uniform() < 0.5;
      // Out-of-band texture: 0.30-0.45 cycles/pixel, far above the normal band.
      const Grating hf = random_grating(rng, 0.30, 0.45, 0.35, 0.45);
      RasterImage mask{size, size, 1, std::vector<std::uint8_t>(size * size, 0)};
      for (std::size_t y = top; y < top + side; ++y)
        for (std::size_t x = left; x < left + side; ++x) {
          px[y * size + x] =
              texture ? 0.5 + hf.at(static_cast<double>(x), static_cast<double>(y)) : rng.uniform();
          mask.pixels[y * size + x] = 255;
        }
      const std::string mask_rel = "test/" + numbered("mask_", i, ".pgm");
      save_raster(mask, out_dir / mask_rel);
      entry.mask = mask_rel;
    }
    RasterImage img{size, size, 1, {}};
    for (double v : px) img.pixels.push_back(to_byte(v));
    save_raster(img, out_dir / rel);
    corpus.test.entries.push_back(std::move(entry));
  }

  corpus.train_manifest = out_dir / "train.manifest";
  corpus.test_manifest = out_dir / "test.manifest";
  save_manifest(corpus.train, corpus.train_manifest);
  save_manifest(corpus.test, corpus.test_manifest);
  return corpus;
}

}  // namespace sspcab
