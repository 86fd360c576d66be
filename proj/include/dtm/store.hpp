#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dtm/featmap.hpp"

namespace dtm {

// On-disk layout, little-endian, 32-byte header followed by N records of
// w*h*c float32 values each (same cell order as FeatureMap):
//
//   0  magic "DTMS"       12 width  u32
//   4  version u16 (=1)   16 height u32
//   6  flags u16          20 channels u32
//   8  dtype u8 (0=f32)   24 record count u64
//   9  reserved[3] = 0
//
// flags bit0 marks channel-normalized records. A sidecar "<path>.manifest"
// holds one JSON object per line: index, image_id, labels?, path?.

inline constexpr std::size_t kStoreHeaderSize = 32;
inline constexpr std::uint16_t kStoreVersion = 1;
inline constexpr std::uint16_t kFlagNormalized = 0x1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeF16 = 1;  // reserved, not readable in v1

struct StoreHeader {
    std::uint16_t version = kStoreVersion;
    std::uint16_t flags = 0;
    std::uint8_t dtype = kDtypeF32;
    GridDims dims;
    std::uint64_t record_count = 0;

    bool normalized() const noexcept { return (flags & kFlagNormalized) != 0; }
    std::size_t record_bytes() const noexcept { return dims.values() * sizeof(float); }
};

std::array<std::byte, kStoreHeaderSize> encode_header(const StoreHeader& header);

/// Validates magic, version, dtype, reserved bytes and dims.
StoreHeader decode_header(std::span<const std::byte> bytes);

struct ManifestEntry {
    std::uint64_t index = 0;
    std::string image_id;
    std::vector<std::string> labels;
    std::optional<std::string> source_path;

    bool has_label(std::string_view label) const;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

std::filesystem::path manifest_path(const std::filesystem::path& store_path);

std::string format_manifest_line(const ManifestEntry& entry);

/// Parses a manifest and checks it against the header's record count.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path, std::uint64_t expected_count);

struct WriteSummary {
    std::uint64_t records = 0;
    std::uint64_t bytes = 0;
};

/// Streams records to `<path>.tmp` and renames into place on finish(), so a
/// store at `path` is always complete.
class StoreWriter {
public:
    StoreWriter(std::filesystem::path path, GridDims dims, bool normalized);
    ~StoreWriter();
    StoreWriter(const StoreWriter&) = delete;
    StoreWriter& operator=(const StoreWriter&) = delete;

    /// entry.index is overwritten with the record's position.
    void append(FeatureMapView record, ManifestEntry entry);
    WriteSummary finish();

    std::uint64_t count() const noexcept { return count_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::filesystem::path path_;
    GridDims dims_;
    bool normalized_;
    std::uint64_t count_ = 0;
    bool finished_ = false;
};

/// Writes all records; the normalized flag is set iff every record claims it.
WriteSummary write_store(std::span<const FeatureMap> records, std::span<const ManifestEntry> entries,
                         const std::filesystem::path& path);

/// Read-only memory-mapped store. Records are served as zero-copy views.
class EmbeddingStore {
public:
    static EmbeddingStore open(const std::filesystem::path& path);

    EmbeddingStore(EmbeddingStore&&) noexcept;
    EmbeddingStore& operator=(EmbeddingStore&&) noexcept;
    ~EmbeddingStore();

    const StoreHeader& header() const noexcept { return header_; }
    const GridDims& dims() const noexcept { return header_.dims; }
    std::uint64_t size() const noexcept { return header_.record_count; }
    const std::filesystem::path& path() const noexcept { return path_; }

    FeatureMapView record_view(std::uint64_t index) const;
    FeatureMap get_record(std::uint64_t index) const;
    std::span<const std::byte> record_bytes(std::uint64_t index) const;
    std::span<const std::byte> payload() const noexcept;

    const std::vector<ManifestEntry>& manifest() const noexcept { return manifest_; }
    const ManifestEntry& entry(std::uint64_t index) const;
    std::optional<std::uint64_t> find(std::string_view image_id) const;

    /// Checks the normalized invariant on up to `sample_count` records spread
    /// evenly over the store (0 checks all). Returns the first failing index.
    std::optional<std::uint64_t> find_unnormalized(std::uint64_t sample_count = 0, double tolerance = 1e-4) const;

private:
    EmbeddingStore() = default;

    struct Mapping;
    std::unique_ptr<Mapping> mapping_;
    std::filesystem::path path_;
    StoreHeader header_;
    std::vector<ManifestEntry> manifest_;
    std::unordered_map<std::string, std::uint64_t> by_id_;
};

inline EmbeddingStore open_store(const std::filesystem::path& path) { return EmbeddingStore::open(path); }

/// 64-bit FNV-1a, used for payload checksums.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t state = 0xcbf29ce484222325ULL) noexcept;

}  // namespace dtm
