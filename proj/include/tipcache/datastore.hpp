#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tipcache/types.hpp"

namespace tipcache {

// Binary layouts (all integers little-endian):
//
//   TIPF  "TIPF" | u32 version=1 | u64 rows | u64 cols | u8 normalized
//         | rows*cols f32 row-major
//   TIPL  "TIPL" | u32 version=1 | u64 rows | u64 num_classes
//         | rows u32 class indices
//   TIPC  "TIPC" | u32 version=1 | u64 shots | TIPF section | TIPL section
//
// Files end exactly where their payload ends; trailing bytes are an error.

inline constexpr std::uint32_t kFormatVersion = 1;

struct LabelSet {
    std::vector<std::uint32_t> labels;
    std::size_t num_classes = 0;
};

struct FeatureHeader {
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    bool normalized = false;
};

struct LabelHeader {
    std::uint64_t rows = 0;
    std::uint64_t num_classes = 0;
};

// In-memory codecs. Values are narrowed to f32 on encode.
std::vector<std::uint8_t> encode_features(const FeatureMatrix& m);
FeatureMatrix decode_features(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_labels(std::span<const std::uint32_t> labels, std::size_t num_classes);
LabelSet decode_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cache(const CacheModel& cache);
CacheModel decode_cache(std::span<const std::uint8_t> bytes);

void write_features(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix read_features(const std::filesystem::path& path);
FeatureHeader read_feature_header(const std::filesystem::path& path);

void write_labels(std::span<const std::uint32_t> labels, std::size_t num_classes,
                  const std::filesystem::path& path);
LabelSet read_labels(const std::filesystem::path& path);
LabelHeader read_label_header(const std::filesystem::path& path);

void write_cache(const CacheModel& cache, const std::filesystem::path& path);
CacheModel read_cache(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(std::span<const std::uint8_t> bytes, const std::filesystem::path& path);

/// A JSON document binding one split's feature and label files:
///
///   {"split": "train", "features": "train.tipf", "labels": "train.tipl",
///    "classes": ["cat", "dog"], "shots": 16}
///
/// Relative paths resolve against the manifest's directory. "shots" is
/// optional; when given for a train split, rows must equal shots * classes.
struct DatasetManifest {
    std::string split;
    std::filesystem::path features_path;
    std::filesystem::path labels_path;
    std::vector<std::string> class_names;
    std::size_t shots = 0;
};

struct Dataset {
    FeatureMatrix features;
    LabelSet labels;
    std::vector<std::string> class_names;
};

/// Parses and cross-checks the referenced file headers.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
Dataset load_dataset(const DatasetManifest& manifest);

/// One class name per line; blank trailing lines ignored.
std::vector<std::string> read_class_names(const std::filesystem::path& path);
void write_class_names(std::span<const std::string> names, const std::filesystem::path& path);

}  // namespace tipcache
