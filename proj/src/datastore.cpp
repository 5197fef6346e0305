#include "tipcache/datastore.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include "json.hpp"

namespace tipcache {

namespace fs = std::filesystem;

namespace {

constexpr char kFeatureMagic[4] = {'T', 'I', 'P', 'F'};
constexpr char kLabelMagic[4] = {'T', 'I', 'P', 'L'};
constexpr char kCacheMagic[4] = {'T', 'I', 'P', 'C'};
constexpr std::size_t kFeatureHeaderSize = 4 + 4 + 8 + 8 + 1;
constexpr std::size_t kLabelHeaderSize = 4 + 4 + 8 + 8;

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void magic(const char (&m)[4]) { out_.insert(out_.end(), m, m + 4); }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

private:
    std::vector<std::uint8_t>& out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

    void require(std::uint64_t n, const char* what) const {
        if (n > remaining()) {
            throw Error(ErrorCode::Truncated, std::string(what) + ": need " + std::to_string(n) +
                                                  " bytes, have " + std::to_string(remaining()));
        }
    }

    void expect_magic(const char (&m)[4]) {
        require(4, "magic");
        if (std::memcmp(bytes_.data() + pos_, m, 4) != 0) {
            throw Error(ErrorCode::BadMagic,
                        "expected '" + std::string(m, 4) + "', got '" +
                            std::string(reinterpret_cast<const char*>(bytes_.data() + pos_), 4) + "'");
        }
        pos_ += 4;
    }

    void expect_version() {
        const auto v = u32("version");
        if (v != kFormatVersion) {
            throw Error(ErrorCode::UnsupportedVersion, "version " + std::to_string(v));
        }
    }

    std::uint8_t u8(const char* what) {
        require(1, what);
        return bytes_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        require(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        require(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32("payload")); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

// rows * width * elem, or max on overflow so `require` reports truncation.
std::uint64_t payload_bytes(std::uint64_t rows, std::uint64_t width, std::uint64_t elem) {
    constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
    if (width != 0 && rows > kMax / width) return kMax;
    const std::uint64_t n = rows * width;
    if (n > kMax / elem) return kMax;
    return n * elem;
}

void put_features(ByteWriter& w, const FeatureMatrix& m) {
    w.magic(kFeatureMagic);
    w.u32(kFormatVersion);
    w.u64(m.rows());
    w.u64(m.cols());
    w.u8(m.normalized() ? 1 : 0);
    for (double v : m.data()) w.f32(static_cast<float>(v));
}

FeatureHeader get_feature_header(ByteReader& r) {
    r.expect_magic(kFeatureMagic);
    r.expect_version();
    FeatureHeader h;
    h.rows = r.u64("rows");
    h.cols = r.u64("cols");
    const auto flag = r.u8("normalized flag");
    if (flag > 1) throw Error(ErrorCode::InvalidArgument, "normalized flag must be 0 or 1");
    h.normalized = flag == 1;
    if (h.cols == 0) throw Error(ErrorCode::DimensionMismatch, "feature file declares 0 columns");
    return h;
}

FeatureMatrix get_features(ByteReader& r) {
    const auto h = get_feature_header(r);
    r.require(payload_bytes(h.rows, h.cols, 4), "feature payload");
    std::vector<double> data(h.rows * h.cols);
    for (double& v : data) v = static_cast<double>(r.f32());
    FeatureMatrix m(h.rows, h.cols, std::move(data));
    if (h.normalized) m.mark_normalized();
    return m;
}

void put_labels(ByteWriter& w, std::span<const std::uint32_t> labels, std::size_t num_classes) {
    w.magic(kLabelMagic);
    w.u32(kFormatVersion);
    w.u64(labels.size());
    w.u64(num_classes);
    for (auto l : labels) w.u32(l);
}

LabelHeader get_label_header(ByteReader& r) {
    r.expect_magic(kLabelMagic);
    r.expect_version();
    LabelHeader h;
    h.rows = r.u64("rows");
    h.num_classes = r.u64("num_classes");
    return h;
}

LabelSet get_labels(ByteReader& r) {
    const auto h = get_label_header(r);
    r.require(payload_bytes(h.rows, 1, 4), "label payload");
    LabelSet out;
    out.num_classes = h.num_classes;
    out.labels.resize(h.rows);
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        out.labels[i] = r.u32("label");
        if (out.labels[i] >= h.num_classes) {
            throw Error(ErrorCode::LabelOutOfRange,
                        "row " + std::to_string(i) + " has class " + std::to_string(out.labels[i]));
        }
    }
    return out;
}

void expect_end(const ByteReader& r) {
    if (!r.at_end()) {
        throw Error(ErrorCode::TrailingData, std::to_string(r.remaining()) + " unexpected bytes");
    }
}

std::vector<std::uint8_t> read_prefix(const fs::path& path, std::size_t n) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    buf.resize(static_cast<std::size_t>(in.gcount()));
    return buf;
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

}  // namespace

std::vector<std::uint8_t> encode_features(const FeatureMatrix& m) {
    std::vector<std::uint8_t> out;
    out.reserve(kFeatureHeaderSize + m.data().size() * 4);
    ByteWriter w(out);
    put_features(w, m);
    return out;
}

FeatureMatrix decode_features(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    auto m = get_features(r);
    expect_end(r);
    return m;
}

std::vector<std::uint8_t> encode_labels(std::span<const std::uint32_t> labels, std::size_t num_classes) {
    std::vector<std::uint8_t> out;
    out.reserve(kLabelHeaderSize + labels.size() * 4);
    ByteWriter w(out);
    put_labels(w, labels, num_classes);
    return out;
}

LabelSet decode_labels(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    auto l = get_labels(r);
    expect_end(r);
    return l;
}

std::vector<std::uint8_t> encode_cache(const CacheModel& cache) {
    cache.validate();
    std::vector<std::uint8_t> out;
    ByteWriter w(out);
    w.magic(kCacheMagic);
    w.u32(kFormatVersion);
    w.u64(cache.shots);
    put_features(w, cache.keys);
    put_labels(w, cache.values.indices(), cache.num_classes);
    return out;
}

CacheModel decode_cache(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kCacheMagic);
    r.expect_version();
    CacheModel cache;
    cache.shots = r.u64("shots");
    cache.keys = get_features(r);
    auto labels = get_labels(r);
    expect_end(r);
    if (labels.labels.size() != cache.keys.rows()) {
        throw Error(ErrorCode::RowMismatch,
                    std::to_string(cache.keys.rows()) + " keys vs " +
                        std::to_string(labels.labels.size()) + " values");
    }
    cache.num_classes = labels.num_classes;
    cache.values = LabelMatrix(std::move(labels.labels), labels.num_classes);
    cache.validate();
    return cache;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    const auto size = in.tellg();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf.data()), size);
    if (!in) throw Error(ErrorCode::Io, "failed reading " + path.string());
    return buf;
}

void write_file_bytes(std::span<const std::uint8_t> bytes, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

void write_features(const FeatureMatrix& m, const fs::path& path) {
    write_file_bytes(encode_features(m), path);
}

FeatureMatrix read_features(const fs::path& path) { return decode_features(read_file_bytes(path)); }

FeatureHeader read_feature_header(const fs::path& path) {
    const auto buf = read_prefix(path, kFeatureHeaderSize);
    ByteReader r(buf);
    return get_feature_header(r);
}

void write_labels(std::span<const std::uint32_t> labels, std::size_t num_classes, const fs::path& path) {
    write_file_bytes(encode_labels(labels, num_classes), path);
}

LabelSet read_labels(const fs::path& path) { return decode_labels(read_file_bytes(path)); }

LabelHeader read_label_header(const fs::path& path) {
    const auto buf = read_prefix(path, kLabelHeaderSize);
    ByteReader r(buf);
    return get_label_header(r);
}

void write_cache(const CacheModel& cache, const fs::path& path) {
    write_file_bytes(encode_cache(cache), path);
}

CacheModel read_cache(const fs::path& path) { return decode_cache(read_file_bytes(path)); }

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open manifest " + path.string());

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ManifestParse, e.what());
    }

    DatasetManifest m;
    const fs::path base = path.parent_path();
    try {
        m.split = doc.at("split").get<std::string>();
        m.features_path = resolve(base, doc.at("features").get<std::string>());
        m.labels_path = resolve(base, doc.at("labels").get<std::string>());
        m.class_names = doc.at("classes").get<std::vector<std::string>>();
        if (doc.contains("shots")) m.shots = doc.at("shots").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ManifestParse, e.what());
    }
    if (m.split != "train" && m.split != "val" && m.split != "test") {
        throw Error(ErrorCode::ManifestParse, "split must be train, val or test, got '" + m.split + "'");
    }

    for (const auto& p : {m.features_path, m.labels_path}) {
        if (!fs::exists(p)) throw Error(ErrorCode::Io, "missing file " + p.string());
    }
    const auto fh = read_feature_header(m.features_path);
    const auto lh = read_label_header(m.labels_path);
    if (fh.rows != lh.rows) {
        throw Error(ErrorCode::RowMismatch, "features have " + std::to_string(fh.rows) +
                                                " rows, labels have " + std::to_string(lh.rows));
    }
    if (m.class_names.size() != lh.num_classes) {
        throw Error(ErrorCode::RowMismatch,
                    std::to_string(m.class_names.size()) + " class names for " +
                        std::to_string(lh.num_classes) + " classes");
    }
    if (m.split == "train" && m.shots > 0 && fh.rows != m.shots * lh.num_classes) {
        throw Error(ErrorCode::RowMismatch, std::to_string(m.shots) + "-shot split over " +
                                                std::to_string(lh.num_classes) + " classes has " +
                                                std::to_string(fh.rows) + " rows");
    }
    return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    nlohmann::json doc;
    doc["split"] = manifest.split;
    doc["features"] = manifest.features_path.string();
    doc["labels"] = manifest.labels_path.string();
    doc["classes"] = manifest.class_names;
    if (manifest.shots > 0) doc["shots"] = manifest.shots;
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
    out << doc.dump(2) << '\n';
}

Dataset load_dataset(const DatasetManifest& manifest) {
    Dataset d;
    d.features = read_features(manifest.features_path);
    d.labels = read_labels(manifest.labels_path);
    if (d.features.rows() != d.labels.labels.size()) {
        throw Error(ErrorCode::RowMismatch, "feature and label files disagree on row count");
    }
    d.class_names = manifest.class_names;
    return d;
}

std::vector<std::string> read_class_names(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        names.push_back(line);
    }
    while (!names.empty() && names.back().empty()) names.pop_back();
    return names;
}

void write_class_names(std::span<const std::string> names, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
    for (const auto& n : names) out << n << '\n';
}

}  // namespace tipcache
