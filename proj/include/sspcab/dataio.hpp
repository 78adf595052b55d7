#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sspcab/tensor.hpp"

namespace sspcab {

/// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct RasterImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// Binary PGM (P5) or PPM (P6) with maxval 255.
RasterImage decode_raster(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_raster(const RasterImage& img);
RasterImage load_raster(const std::filesystem::path& path);
void save_raster(const RasterImage& img, const std::filesystem::path& path);

/// (1, h, w, c) tensor with values pixel / 255.
Tensor raster_to_tensor(const RasterImage& img);

enum class Split { train, test };

struct ManifestEntry {
  std::string image;  // path relative to the manifest's directory, or absolute
  std::string group;
  int label = 0;
  std::optional<std::string> mask;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Lines of "split path group label [mask_path]". Every entry of a manifest
/// belongs to the same split.
struct DatasetManifest {
  Split split = Split::train;
  std::vector<ManifestEntry> entries;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Parses and validates manifest text without touching the file system.
DatasetManifest parse_manifest(const std::string& text);
std::string format_manifest(const DatasetManifest& manifest);
/// Parses, validates, and checks that every referenced file exists (and that
/// masks match their image's size).
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

std::filesystem::path resolve_entry_path(const std::filesystem::path& manifest_path, const std::string& entry_path);

/// Stacks every image of the manifest into an (N, h, w, c) tensor.
Tensor load_manifest_images(const DatasetManifest& manifest, const std::filesystem::path& manifest_path);

struct SynthOptions {
  std::size_t size = 32;
  std::size_t patch_min = 6;
  std::size_t patch_max = 10;
  std::size_t frames_per_group = 10;
};

struct SynthCorpus {
  DatasetManifest train;
  DatasetManifest test;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

/// Writes a seeded corpus under `out_dir`: normal images are sums of two
/// low-frequency sinusoidal gratings plus faint noise; anomalous test images
/// also carry one square patch of high-frequency texture or uniform noise,
/// with a matching ground-truth mask.
SynthCorpus synth_generate(const std::filesystem::path& out_dir, std::size_t n_train, std::size_t n_test,
                           double anomaly_fraction, std::uint64_t seed, const SynthOptions& options = {});

const char* to_string(Split s);

}  // namespace sspcab
