#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segens/align.hpp"
#include "segens/remap.hpp"
#include "segens/types.hpp"

namespace segens {

struct BadMagic : Error { using Error::Error; };
struct BadVersion : Error { using Error::Error; };
struct Truncated : Error {
    std::uint64_t offset;
    explicit Truncated(std::uint64_t off)
        : Error("file truncated at byte offset " + std::to_string(off)), offset(off) {}
};
struct ParseError : Error { using Error::Error; };
struct MissingFile : Error { using Error::Error; };
struct DuplicateId : Error { using Error::Error; };

namespace detail {

// Endianness-pinned primitives: bytes are written explicitly little-endian
// so identical inputs produce identical files on any platform.

class LeWriter {
  public:
    explicit LeWriter(const std::filesystem::path& path)
        : out_(path, std::ios::binary) {
        if (!out_) throw MissingFile("cannot open for writing: " + path.string());
    }
    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v));
        u8(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        u16(static_cast<std::uint16_t>(v));
        u16(static_cast<std::uint16_t>(v >> 16));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void magic(const char (&m)[5]) { out_.write(m, 4); }
    void f32_array(const float* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f32(data[i]);
    }
    void close() { out_.close(); }

  private:
    std::ofstream out_;
};

class LeReader {
  public:
    explicit LeReader(const std::filesystem::path& path)
        : in_(path, std::ios::binary) {
        if (!in_) throw MissingFile("cannot open for reading: " + path.string());
    }
    std::uint8_t u8() {
        int c = in_.get();
        if (c == EOF) throw Truncated(offset_);
        ++offset_;
        return static_cast<std::uint8_t>(c);
    }
    std::uint16_t u16() {
        std::uint16_t lo = u8();
        return static_cast<std::uint16_t>(lo | (static_cast<std::uint16_t>(u8()) << 8));
    }
    std::uint32_t u32() {
        std::uint32_t lo = u16();
        return lo | (static_cast<std::uint32_t>(u16()) << 16);
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void expect_magic(const char (&m)[5]) {
        char buf[4];
        in_.read(buf, 4);
        if (in_.gcount() != 4) throw Truncated(offset_ + in_.gcount());
        offset_ += 4;
        if (std::memcmp(buf, m, 4) != 0)
            throw BadMagic("expected magic " + std::string(m, 4));
    }
    void f32_array(float* data, std::size_t n) {
        // Bulk read then LE decode; x86/ARM little-endian fast path is the
        // same bytes either way.
        std::vector<char> buf(n * 4);
        in_.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(in_.gcount()) != buf.size())
            throw Truncated(offset_ + static_cast<std::uint64_t>(in_.gcount()));
        offset_ += buf.size();
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = static_cast<std::uint8_t>(buf[4 * i]) |
                                 (static_cast<std::uint32_t>(
                                      static_cast<std::uint8_t>(buf[4 * i + 1]))
                                  << 8) |
                                 (static_cast<std::uint32_t>(
                                      static_cast<std::uint8_t>(buf[4 * i + 2]))
                                  << 16) |
                                 (static_cast<std::uint32_t>(
                                      static_cast<std::uint8_t>(buf[4 * i + 3]))
                                  << 24);
            std::memcpy(&data[i], &bits, 4);
        }
    }
    bool at_eof() { return in_.peek() == EOF; }

  private:
    std::ifstream in_;
    std::uint64_t offset_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Sample container "SEGU": header (version, Q, P, c, c_total, h, w) then Q
// samples of (transform, L, M). One h/w per container; differently-sized
// TTA scale samples live in their own containers.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kContainerVersion = 1;

struct ContainerHeader {
    std::uint32_t count = 0;  // Q
    std::uint32_t queries = 0;
    std::uint16_t classes = 0;       // c
    std::uint16_t class_columns = 0; // c_total
    std::uint32_t height = 0, width = 0;
};

inline void write_samples(const std::filesystem::path& path,
                          const std::vector<SampleTensor>& samples) {
    if (samples.empty()) throw EmptyInput("cannot write an empty sample container");
    const SampleTensor& first = samples.front();
    detail::LeWriter w(path);
    w.magic("SEGU");
    w.u16(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(samples.size()));
    w.u32(first.queries);
    w.u16(first.dataset_classes());
    w.u16(first.class_columns);
    w.u32(first.height);
    w.u32(first.width);
    for (const SampleTensor& s : samples) {
        if (s.queries != first.queries || s.class_columns != first.class_columns ||
            s.height != first.height || s.width != first.width)
            throw ShapeMismatch("container samples must share one shape");
        w.u8(static_cast<std::uint8_t>(s.transform.kind));
        w.f32(s.transform.scale_factor);
        w.u8(s.transform.frame_offset);
        w.f32_array(s.class_logits.data(), s.class_logits.size());
        w.f32_array(s.mask_logits.data(), s.mask_logits.size());
    }
}

// Streaming reader: yields one sample at a time without holding the
// container in memory (the constant-memory aggregation path).
class SampleStreamReader final : public SampleSource {
  public:
    explicit SampleStreamReader(const std::filesystem::path& path) : in_(path) {
        in_.expect_magic("SEGU");
        std::uint16_t version = in_.u16();
        if (version != kContainerVersion)
            throw BadVersion("unsupported container version " + std::to_string(version));
        header_.count = in_.u32();
        header_.queries = in_.u32();
        header_.classes = in_.u16();
        header_.class_columns = in_.u16();
        header_.height = in_.u32();
        header_.width = in_.u32();
        if (header_.class_columns != header_.classes + 1)
            throw ShapeMismatch("container header: c_total must equal c + 1");
    }

    const ContainerHeader& header() const { return header_; }

    std::optional<SampleTensor> next() override {
        if (read_ >= header_.count) return std::nullopt;
        SampleTensor s(header_.queries, header_.class_columns, header_.height,
                       header_.width);
        s.transform.kind = static_cast<TransformKind>(in_.u8());
        s.transform.scale_factor = in_.f32();
        s.transform.frame_offset = in_.u8();
        in_.f32_array(s.class_logits.data(), s.class_logits.size());
        in_.f32_array(s.mask_logits.data(), s.mask_logits.size());
        ++read_;
        return s;
    }

  private:
    detail::LeReader in_;
    ContainerHeader header_;
    std::uint32_t read_ = 0;
};

inline std::vector<SampleTensor> read_samples(const std::filesystem::path& path) {
    SampleStreamReader reader(path);
    std::vector<SampleTensor> out;
    while (auto s = reader.next()) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Label maps ("SEGL" / "SEGP") and flow fields ("SEGF")
// ---------------------------------------------------------------------------

inline void write_semantic(const std::filesystem::path& path, const SemanticLabelMap& m) {
    detail::LeWriter w(path);
    w.magic("SEGL");
    w.u32(m.height);
    w.u32(m.width);
    for (std::uint16_t v : m.ids) w.u16(v);
}

inline SemanticLabelMap read_semantic(const std::filesystem::path& path) {
    detail::LeReader r(path);
    r.expect_magic("SEGL");
    // Sequence the two reads explicitly; argument evaluation order is
    // unspecified.
    std::uint32_t h = r.u32();
    std::uint32_t w = r.u32();
    SemanticLabelMap m(h, w);
    for (auto& v : m.ids) v = r.u16();
    return m;
}

inline void write_panoptic(const std::filesystem::path& path, const PanopticLabelMap& m) {
    detail::LeWriter w(path);
    w.magic("SEGP");
    w.u32(m.height);
    w.u32(m.width);
    for (std::uint32_t v : m.ids) w.u32(v);
}

inline PanopticLabelMap read_panoptic(const std::filesystem::path& path) {
    detail::LeReader r(path);
    r.expect_magic("SEGP");
    std::uint32_t h = r.u32();
    std::uint32_t w = r.u32();
    PanopticLabelMap m(h, w);
    for (auto& v : m.ids) v = r.u32();
    return m;
}

inline void write_flow(const std::filesystem::path& path, const FlowField& f) {
    detail::LeWriter w(path);
    w.magic("SEGF");
    w.u32(f.height);
    w.u32(f.width);
    for (std::size_t i = 0; i < f.pixels(); ++i) {
        w.f32(f.dx[i]);
        w.f32(f.dy[i]);
    }
    for (std::uint8_t v : f.valid) w.u8(v);
}

inline FlowField read_flow(const std::filesystem::path& path) {
    detail::LeReader r(path);
    r.expect_magic("SEGF");
    std::uint32_t h = r.u32();
    std::uint32_t w = r.u32();
    FlowField f(h, w);
    for (std::size_t i = 0; i < f.pixels(); ++i) {
        f.dx[i] = r.f32();
        f.dy[i] = r.f32();
    }
    for (auto& v : f.valid) v = r.u8();
    return f;
}

// ---------------------------------------------------------------------------
// Manifest: JSON Lines, one record per image. Paths are relative to the
// manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestRecord {
    std::string id;
    std::vector<std::string> samples;  // container paths
    std::string gt_semantic;
    std::string gt_panoptic;
    std::vector<std::string> flows;  // flows[k-1] for prior offset k
    bool is_ood = false;
    std::string pair_id;  // links OOD/clean twins
};

struct DatasetIndex {
    std::filesystem::path root;  // manifest directory
    std::vector<ManifestRecord> records;
    std::size_t ood_without_pair = 0;  // accepted with a warning counter

    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestRecord>& records) {
    std::ofstream out(path);
    if (!out) throw MissingFile("cannot open for writing: " + path.string());
    for (const ManifestRecord& r : records) {
        nlohmann::json j;
        j["id"] = r.id;
        j["samples"] = r.samples;
        j["gt_semantic"] = r.gt_semantic;
        j["gt_panoptic"] = r.gt_panoptic;
        j["flows"] = r.flows;
        j["is_ood"] = r.is_ood;
        if (!r.pair_id.empty()) j["pair_id"] = r.pair_id;
        out << j.dump() << "\n";
    }
}

inline DatasetIndex read_manifest(const std::filesystem::path& path,
                                  bool check_files = true) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open manifest: " + path.string());
    DatasetIndex index;
    index.root = path.parent_path();
    std::map<std::string, bool> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " +
                             e.what());
        }
        ManifestRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.samples = j.at("samples").get<std::vector<std::string>>();
            r.gt_semantic = j.at("gt_semantic").get<std::string>();
            r.gt_panoptic = j.at("gt_panoptic").get<std::string>();
            if (j.contains("flows")) r.flows = j.at("flows").get<std::vector<std::string>>();
            if (j.contains("is_ood")) r.is_ood = j.at("is_ood").get<bool>();
            if (j.contains("pair_id")) r.pair_id = j.at("pair_id").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " +
                             e.what());
        }
        if (seen.count(r.id)) throw DuplicateId("duplicate image id: " + r.id);
        seen[r.id] = true;
        if (r.is_ood && r.pair_id.empty()) ++index.ood_without_pair;
        index.records.push_back(std::move(r));
    }
    if (check_files) {
        for (const ManifestRecord& r : index.records) {
            auto need = [&](const std::string& rel) {
                if (!std::filesystem::exists(index.root / rel))
                    throw MissingFile("manifest references missing file: " + rel);
            };
            for (const auto& s : r.samples) need(s);
            need(r.gt_semantic);
            need(r.gt_panoptic);
            for (const auto& f : r.flows) need(f);
        }
    }
    return index;
}

// ---------------------------------------------------------------------------
// Class mapping files: JSON array of {source_id, target_id,
// target_has_instances}.
// ---------------------------------------------------------------------------

inline ClassMapping read_class_mapping(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open mapping: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("mapping parse error: ") + e.what());
    }
    ClassMapping m;
    for (const auto& row : j) {
        ClassMappingEntry e;
        e.source_id = row.at("source_id").get<std::uint16_t>();
        e.target_id = row.at("target_id").get<std::uint16_t>();
        e.target_has_instances = row.value("target_has_instances", false);
        m.add(e);
    }
    return m;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180) writer: quotes only when needed, CRLF-free (LF) rows with
// deterministic formatting.
// ---------------------------------------------------------------------------

inline std::string csv_field(const std::string& v) {
    if (v.find_first_of(",\"\n") == std::string::npos) return v;
    std::string out = "\"";
    for (char c : v) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

class CsvWriter {
  public:
    explicit CsvWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw MissingFile("cannot open for writing: " + path.string());
    }
    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << csv_field(fields[i]);
        }
        out_ << '\n';
    }

  private:
    std::ofstream out_;
};

}  // namespace segens
