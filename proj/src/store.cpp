#include "dtm/store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "dtm/error.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "store records are mapped as little-endian floats");

namespace dtm {
namespace {

constexpr std::array<char, 4> kMagic{'D', 'T', 'M', 'S'};

template <class T>
void put_le(std::byte* out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = static_cast<std::byte>((value >> (8 * i)) & 0xff);
}

template <class T>
T get_le(const std::byte* in) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(std::to_integer<std::uint8_t>(in[i])) << (8 * i);
    return value;
}

std::string errno_text() { return std::strerror(errno); }

}  // namespace

std::array<std::byte, kStoreHeaderSize> encode_header(const StoreHeader& header) {
    std::array<std::byte, kStoreHeaderSize> out{};
    std::memcpy(out.data(), kMagic.data(), kMagic.size());
    put_le<std::uint16_t>(out.data() + 4, header.version);
    put_le<std::uint16_t>(out.data() + 6, header.flags);
    out[8] = static_cast<std::byte>(header.dtype);
    put_le<std::uint32_t>(out.data() + 12, header.dims.width);
    put_le<std::uint32_t>(out.data() + 16, header.dims.height);
    put_le<std::uint32_t>(out.data() + 20, header.dims.channels);
    put_le<std::uint64_t>(out.data() + 24, header.record_count);
    return out;
}

StoreHeader decode_header(std::span<const std::byte> bytes) {
    if (bytes.size() < kStoreHeaderSize) {
        fail(ErrorKind::Corruption, "file holds " + std::to_string(bytes.size()) + " bytes, header needs 32");
    }
    if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) fail(ErrorKind::Format, "bad magic (expected DTMS)");
    StoreHeader h;
    h.version = get_le<std::uint16_t>(bytes.data() + 4);
    if (h.version != kStoreVersion) fail(ErrorKind::Format, "unsupported version " + std::to_string(h.version));
    h.flags = get_le<std::uint16_t>(bytes.data() + 6);
    if ((h.flags & ~kFlagNormalized) != 0) fail(ErrorKind::Format, "unknown flags " + std::to_string(h.flags));
    h.dtype = std::to_integer<std::uint8_t>(bytes[8]);
    if (h.dtype == kDtypeF16) fail(ErrorKind::Format, "dtype 1 (float16) is reserved and not supported");
    if (h.dtype != kDtypeF32) fail(ErrorKind::Format, "unknown dtype " + std::to_string(h.dtype));
    for (std::size_t i = 9; i < 12; ++i) {
        if (bytes[i] != std::byte{0}) fail(ErrorKind::Format, "reserved bytes are not zero");
    }
    h.dims.width = get_le<std::uint32_t>(bytes.data() + 12);
    h.dims.height = get_le<std::uint32_t>(bytes.data() + 16);
    h.dims.channels = get_le<std::uint32_t>(bytes.data() + 20);
    if (!h.dims.valid()) fail(ErrorKind::Format, "dims " + to_string(h.dims) + " must all be >= 1");
    h.record_count = get_le<std::uint64_t>(bytes.data() + 24);
    return h;
}

bool ManifestEntry::has_label(std::string_view label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::filesystem::path manifest_path(const std::filesystem::path& store_path) {
    return std::filesystem::path(store_path.string() + ".manifest");
}

std::string format_manifest_line(const ManifestEntry& entry) {
    nlohmann::ordered_json j;
    j["index"] = entry.index;
    j["image_id"] = entry.image_id;
    if (!entry.labels.empty()) j["labels"] = entry.labels;
    if (entry.source_path) j["path"] = *entry.source_path;
    return j.dump();
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path, std::uint64_t expected_count) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
    std::vector<ManifestEntry> by_index(expected_count);
    std::vector<bool> seen(expected_count, false);
    std::unordered_set<std::string> ids;
    std::string line;
    std::uint64_t line_no = 0;
    std::uint64_t entries = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        ManifestEntry e;
        try {
            const auto j = nlohmann::json::parse(line);
            e.index = j.at("index").get<std::uint64_t>();
            e.image_id = j.at("image_id").get<std::string>();
            if (j.contains("labels")) e.labels = j.at("labels").get<std::vector<std::string>>();
            if (j.contains("path") && !j.at("path").is_null()) e.source_path = j.at("path").get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorKind::Format, where + ": " + ex.what());
        }
        if (e.index >= expected_count) {
            fail(ErrorKind::Format, where + ": index " + std::to_string(e.index) + " outside store of " +
                                        std::to_string(expected_count));
        }
        if (seen[e.index]) fail(ErrorKind::Format, where + ": duplicate index " + std::to_string(e.index));
        if (!ids.insert(e.image_id).second) fail(ErrorKind::Format, where + ": duplicate image id " + e.image_id);
        seen[e.index] = true;
        by_index[e.index] = std::move(e);
        ++entries;
    }
    if (entries != expected_count) {
        fail(ErrorKind::Format, path.string() + ": " + std::to_string(entries) + " entries for " +
                                    std::to_string(expected_count) + " records");
    }
    return by_index;
}

// ---------------------------------------------------------------------------
// Writer

struct StoreWriter::Impl {
    std::filesystem::path tmp_path;
    std::ofstream payload;
    std::ofstream manifest;
    std::unordered_set<std::string> ids;
};

StoreWriter::StoreWriter(std::filesystem::path path, GridDims dims, bool normalized)
    : impl_(std::make_unique<Impl>()), path_(std::move(path)), dims_(dims), normalized_(normalized) {
    if (!dims_.valid()) fail(ErrorKind::InvalidInput, "store dims must be >= 1, got " + to_string(dims_));
    impl_->tmp_path = path_.string() + ".tmp";
    impl_->payload.open(impl_->tmp_path, std::ios::binary | std::ios::trunc);
    if (!impl_->payload) fail(ErrorKind::Io, "cannot create " + impl_->tmp_path.string());
    impl_->manifest.open(manifest_path(impl_->tmp_path), std::ios::trunc);
    if (!impl_->manifest) fail(ErrorKind::Io, "cannot create " + manifest_path(impl_->tmp_path).string());
    const auto header = encode_header(StoreHeader{kStoreVersion, 0, kDtypeF32, dims_, 0});
    impl_->payload.write(reinterpret_cast<const char*>(header.data()), header.size());
}

StoreWriter::~StoreWriter() {
    if (finished_) return;
    impl_->payload.close();
    impl_->manifest.close();
    std::error_code ec;
    std::filesystem::remove(impl_->tmp_path, ec);
    std::filesystem::remove(manifest_path(impl_->tmp_path), ec);
}

void StoreWriter::append(FeatureMapView record, ManifestEntry entry) {
    if (finished_) fail(ErrorKind::InvalidInput, "store writer already finished");
    if (!(record.dims == dims_)) {
        fail(ErrorKind::Shape, "record " + std::to_string(count_) + " has dims " + to_string(record.dims) +
                                   ", store has " + to_string(dims_));
    }
    if (normalized_ && !record.normalized) {
        fail(ErrorKind::Contract, "record " + std::to_string(count_) + " is not normalized but the store is");
    }
    if (!impl_->ids.insert(entry.image_id).second) {
        fail(ErrorKind::InvalidInput, "duplicate image id '" + entry.image_id + "'");
    }
    impl_->payload.write(reinterpret_cast<const char*>(record.values.data()),
                         static_cast<std::streamsize>(record.values.size_bytes()));
    entry.index = count_;
    impl_->manifest << format_manifest_line(entry) << '\n';
    if (!impl_->payload || !impl_->manifest) fail(ErrorKind::Io, "write failed for " + impl_->tmp_path.string());
    ++count_;
}

WriteSummary StoreWriter::finish() {
    if (finished_) fail(ErrorKind::InvalidInput, "store writer already finished");
    const auto header =
        encode_header(StoreHeader{kStoreVersion, normalized_ ? kFlagNormalized : std::uint16_t{0}, kDtypeF32, dims_,
                                  count_});
    impl_->payload.seekp(0);
    impl_->payload.write(reinterpret_cast<const char*>(header.data()), header.size());
    impl_->payload.close();
    impl_->manifest.close();
    if (impl_->payload.fail() || impl_->manifest.fail()) fail(ErrorKind::Io, "flush failed for " + path_.string());
    std::error_code ec;
    std::filesystem::rename(manifest_path(impl_->tmp_path), manifest_path(path_), ec);
    if (!ec) std::filesystem::rename(impl_->tmp_path, path_, ec);
    if (ec) fail(ErrorKind::Io, "cannot move store into place at " + path_.string() + ": " + ec.message());
    finished_ = true;
    return {count_, kStoreHeaderSize + count_ * dims_.values() * sizeof(float)};
}

WriteSummary write_store(std::span<const FeatureMap> records, std::span<const ManifestEntry> entries,
                         const std::filesystem::path& path) {
    if (records.size() != entries.size()) {
        fail(ErrorKind::InvalidInput, std::to_string(records.size()) + " records but " +
                                          std::to_string(entries.size()) + " manifest entries");
    }
    if (records.empty()) fail(ErrorKind::InvalidInput, "cannot infer store dims from zero records");
    const bool normalized =
        std::all_of(records.begin(), records.end(), [](const FeatureMap& r) { return r.normalized(); });
    StoreWriter writer(path, records.front().dims(), normalized);
    for (std::size_t i = 0; i < records.size(); ++i) writer.append(records[i], entries[i]);
    return writer.finish();
}

// ---------------------------------------------------------------------------
// Reader

struct EmbeddingStore::Mapping {
    void* base = nullptr;
    std::size_t length = 0;

    ~Mapping() {
        if (base != nullptr) ::munmap(base, length);
    }
    std::span<const std::byte> bytes() const noexcept { return {static_cast<const std::byte*>(base), length}; }
};

EmbeddingStore::EmbeddingStore(EmbeddingStore&&) noexcept = default;
EmbeddingStore& EmbeddingStore::operator=(EmbeddingStore&&) noexcept = default;
EmbeddingStore::~EmbeddingStore() = default;

EmbeddingStore EmbeddingStore::open(const std::filesystem::path& path) {
    const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) fail(ErrorKind::Io, "cannot open store " + path.string() + ": " + errno_text());
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        fail(ErrorKind::Io, "cannot stat " + path.string() + ": " + errno_text());
    }
    auto mapping = std::make_unique<Mapping>();
    mapping->length = static_cast<std::size_t>(st.st_size);
    if (mapping->length > 0) {
        void* base = ::mmap(nullptr, mapping->length, PROT_READ, MAP_SHARED, fd, 0);
        if (base == MAP_FAILED) {
            ::close(fd);
            fail(ErrorKind::Io, "cannot map " + path.string() + ": " + errno_text());
        }
        mapping->base = base;
    }
    ::close(fd);

    EmbeddingStore store;
    store.path_ = path;
    try {
        store.header_ = decode_header(mapping->bytes());
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
    const std::uint64_t stride = store.header_.record_bytes();
    const std::uint64_t n = store.header_.record_count;
    if (n != 0 && stride > (std::uint64_t{1} << 62) / n) fail(ErrorKind::Corruption, path.string() + ": record count overflows");
    const std::uint64_t expected = kStoreHeaderSize + n * stride;
    if (mapping->length != expected) {
        fail(ErrorKind::Corruption, path.string() + ": payload is " + std::to_string(mapping->length) +
                                        " bytes, header implies " + std::to_string(expected));
    }
    if (mapping->length > 0) ::madvise(mapping->base, mapping->length, MADV_SEQUENTIAL);
    store.mapping_ = std::move(mapping);
    store.manifest_ = read_manifest(manifest_path(path), n);
    store.by_id_.reserve(store.manifest_.size());
    for (const ManifestEntry& e : store.manifest_) store.by_id_.emplace(e.image_id, e.index);
    return store;
}

std::span<const std::byte> EmbeddingStore::payload() const noexcept {
    return mapping_->bytes().subspan(kStoreHeaderSize);
}

std::span<const std::byte> EmbeddingStore::record_bytes(std::uint64_t index) const {
    if (index >= size()) {
        fail(ErrorKind::Index, "record " + std::to_string(index) + " out of range for store of " + std::to_string(size()));
    }
    const std::size_t stride = header_.record_bytes();
    return payload().subspan(index * stride, stride);
}

FeatureMapView EmbeddingStore::record_view(std::uint64_t index) const {
    const auto bytes = record_bytes(index);
    // The header is 32 bytes and the mapping page-aligned, so records stay float-aligned.
    const auto* values = reinterpret_cast<const float*>(bytes.data());
    return FeatureMapView{header_.dims, std::span<const float>(values, header_.dims.values()), header_.normalized()};
}

FeatureMap EmbeddingStore::get_record(std::uint64_t index) const { return FeatureMap::from_view(record_view(index)); }

const ManifestEntry& EmbeddingStore::entry(std::uint64_t index) const {
    if (index >= manifest_.size()) fail(ErrorKind::Index, "manifest entry " + std::to_string(index) + " out of range");
    return manifest_[index];
}

std::optional<std::uint64_t> EmbeddingStore::find(std::string_view image_id) const {
    const auto it = by_id_.find(std::string(image_id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::uint64_t> EmbeddingStore::find_unnormalized(std::uint64_t sample_count, double tolerance) const {
    const std::uint64_t n = size();
    if (n == 0) return std::nullopt;
    const std::uint64_t checks = sample_count == 0 ? n : std::min(sample_count, n);
    for (std::uint64_t k = 0; k < checks; ++k) {
        const std::uint64_t index = checks == n ? k : k * n / checks;
        if (!has_unit_cells(record_view(index), tolerance)) return index;
    }
    return std::nullopt;
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t state) noexcept {
    for (std::byte b : bytes) {
        state ^= std::to_integer<std::uint8_t>(b);
        state *= 0x100000001b3ULL;
    }
    return state;
}

}  // namespace dtm
