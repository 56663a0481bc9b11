// io.hpp - file formats and configuration.
//
// Rasters: PFM (grayscale Pf / 3-channel PF, negative scale = little-endian,
// rows bottom-to-top) and the "CDPT" flat binary depth format. Labels: P6 PPM
// with a JSON sidecar mapping colors to face triples. Models, cameras, and
// reports: JSON via nlohmann (shortest-round-trip doubles, so one
// write-read cycle is bit-exact). Human-edited config: a TOML subset
// ([section] key = value) read by read_toml.
#pragma once

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"

#include "csgfit/camera.hpp"
#include "csgfit/csg_core.hpp"
#include "csgfit/metrics.hpp"
#include "csgfit/render.hpp"
#include "csgfit/rng.hpp"

namespace csgfit {

constexpr const char* kArtifactVersion = "csgfit 0.1.0";

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (byte " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}
    std::size_t byte_offset() const { return byte_offset_; }

private:
    std::size_t byte_offset_;
};

// ---------------------------------------------------------------------------
// PFM

struct PfmImage {
    int width = 0, height = 0, channels = 1;  // channels: 1 (Pf) or 3 (PF)
    std::vector<float> data;                  // row-major, top row first
};

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write: " + path);
}

// One whitespace-delimited token starting at `pos`; advances pos.
inline std::string next_token(const std::string& bytes, std::size_t& pos) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw ParseError("PFM: unexpected end of header", start);
    return bytes.substr(start, pos - start);
}

inline float byteswap_float(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    u = __builtin_bswap32(u);
    std::memcpy(&f, &u, 4);
    return f;
}

constexpr bool host_little_endian() {
    return std::endian::native == std::endian::little;
}

}  // namespace detail

inline PfmImage read_pfm(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    std::size_t pos = 0;
    const std::string magic = detail::next_token(bytes, pos);
    PfmImage img;
    if (magic == "Pf") img.channels = 1;
    else if (magic == "PF") img.channels = 3;
    else throw ParseError("PFM: bad magic '" + magic + "'", 0);
    try {
        img.width = std::stoi(detail::next_token(bytes, pos));
        img.height = std::stoi(detail::next_token(bytes, pos));
    } catch (const std::logic_error&) {
        throw ParseError("PFM: bad dimensions", pos);
    }
    if (img.width <= 0 || img.height <= 0) throw ParseError("PFM: non-positive size", pos);
    double scale;
    try {
        scale = std::stod(detail::next_token(bytes, pos));
    } catch (const std::logic_error&) {
        throw ParseError("PFM: bad scale", pos);
    }
    if (pos >= bytes.size()) throw ParseError("PFM: truncated after header", pos);
    ++pos;  // single whitespace byte terminates the header
    const std::size_t n =
        static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (bytes.size() - pos < n * 4)
        throw ParseError("PFM: truncated raster, expected " + std::to_string(n * 4) + " bytes",
                         pos);
    img.data.resize(n);
    const bool file_little = scale < 0.0;
    // PFM rasters are stored bottom row first.
    for (int row = 0; row < img.height; ++row) {
        const int src_row = img.height - 1 - row;
        const std::size_t count = static_cast<std::size_t>(img.width) * img.channels;
        std::memcpy(img.data.data() + static_cast<std::size_t>(row) * count,
                    bytes.data() + pos + static_cast<std::size_t>(src_row) * count * 4,
                    count * 4);
    }
    if (file_little != detail::host_little_endian())
        for (float& f : img.data) f = detail::byteswap_float(f);
    return img;
}

inline void write_pfm(const std::string& path, const PfmImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("write_pfm: channels must be 1 or 3");
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (img.data.size() != n) throw std::invalid_argument("write_pfm: data size mismatch");
    std::ostringstream out;
    out << (img.channels == 1 ? "Pf" : "PF") << "\n"
        << img.width << " " << img.height << "\n"
        << (detail::host_little_endian() ? "-1.0" : "1.0") << "\n";
    for (int row = img.height - 1; row >= 0; --row) {
        const std::size_t count = static_cast<std::size_t>(img.width) * img.channels;
        out.write(reinterpret_cast<const char*>(img.data.data() +
                                                static_cast<std::size_t>(row) * count),
                  static_cast<std::streamsize>(count * 4));
    }
    detail::write_file(path, out.str());
}

inline PfmImage depth_to_pfm(const DepthImage& d) {
    PfmImage img;
    img.width = d.width;
    img.height = d.height;
    img.channels = 1;
    img.data.reserve(d.values.size());
    for (std::size_t i = 0; i < d.values.size(); ++i)
        img.data.push_back(d.valid[i] ? static_cast<float>(d.values[i])
                                      : std::numeric_limits<float>::infinity());
    return img;
}

inline DepthImage pfm_to_depth(const PfmImage& img) {
    if (img.channels != 1) throw std::invalid_argument("pfm_to_depth: expected grayscale PFM");
    DepthImage d(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const float z = img.data[i];
        d.values[i] = z;
        d.valid[i] = (std::isfinite(z) && z > 0.0f) ? 1 : 0;
    }
    return d;
}

inline PfmImage normals_to_pfm(const std::vector<Vec3>& normals, int width, int height) {
    PfmImage img;
    img.width = width;
    img.height = height;
    img.channels = 3;
    img.data.reserve(normals.size() * 3);
    for (const Vec3& n : normals) {
        img.data.push_back(static_cast<float>(n.x));
        img.data.push_back(static_cast<float>(n.y));
        img.data.push_back(static_cast<float>(n.z));
    }
    return img;
}

// ---------------------------------------------------------------------------
// CDPT flat binary depth: magic "CDPT", u32 width, u32 height, f32 row-major.

inline DepthImage read_cdpt(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    if (bytes.size() < 12 || bytes.compare(0, 4, "CDPT") != 0)
        throw ParseError("CDPT: bad magic", 0);
    std::uint32_t w, h;
    std::memcpy(&w, bytes.data() + 4, 4);
    std::memcpy(&h, bytes.data() + 8, 4);
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (bytes.size() < 12 + n * 4) throw ParseError("CDPT: truncated raster", 12);
    DepthImage d(static_cast<int>(w), static_cast<int>(h));
    for (std::size_t i = 0; i < n; ++i) {
        float z;
        std::memcpy(&z, bytes.data() + 12 + i * 4, 4);
        d.values[i] = z;
        d.valid[i] = (std::isfinite(z) && z > 0.0f) ? 1 : 0;
    }
    return d;
}

inline void write_cdpt(const std::string& path, const DepthImage& d) {
    std::string bytes = "CDPT";
    const std::uint32_t w = static_cast<std::uint32_t>(d.width);
    const std::uint32_t h = static_cast<std::uint32_t>(d.height);
    bytes.append(reinterpret_cast<const char*>(&w), 4);
    bytes.append(reinterpret_cast<const char*>(&h), 4);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
        const float z = d.valid[i] ? static_cast<float>(d.values[i]) : 0.0f;
        bytes.append(reinterpret_cast<const char*>(&z), 4);
    }
    detail::write_file(path, bytes);
}

inline DepthImage read_depth_any(const std::string& path) {
    if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".cdpt") == 0)
        return read_cdpt(path);
    return pfm_to_depth(read_pfm(path));
}

// ---------------------------------------------------------------------------
// ASCII PLY point cloud export.

inline void write_ply(const std::string& path, const std::vector<Vec3>& points) {
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
        << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    out.precision(9);
    for (const Vec3& p : points) out << p.x << " " << p.y << " " << p.z << "\n";
    detail::write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Label raster: P6 PPM with deterministic per-triple colors + JSON sidecar.

inline std::array<std::uint8_t, 3> triple_color(const FaceTriple& t) {
    const std::uint64_t h = mix64(FaceTripleHash{}(t));
    // Keep channels away from 0 so misses (black) stay distinguishable.
    return {static_cast<std::uint8_t>(32 + (h & 0xDF)),
            static_cast<std::uint8_t>(32 + ((h >> 8) & 0xDF)),
            static_cast<std::uint8_t>(32 + ((h >> 16) & 0xDF))};
}

inline void write_label_ppm(const std::string& path, const std::vector<FaceTriple>& labels,
                            const std::vector<std::uint8_t>& hit, int width, int height) {
    std::ostringstream out;
    out << "P6\n" << width << " " << height << "\n255\n";
    nlohmann::json sidecar = nlohmann::json::object();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::array<std::uint8_t, 3> c{0, 0, 0};
        if (hit[i]) {
            c = triple_color(labels[i]);
            char key[16];
            std::snprintf(key, sizeof key, "%02x%02x%02x", c[0], c[1], c[2]);
            if (!sidecar.contains(key))
                sidecar[key] = {{"face", labels[i].face_index},
                                {"positive", labels[i].positive_index},
                                {"negative", labels[i].negative_index}};
        }
        out.write(reinterpret_cast<const char*>(c.data()), 3);
    }
    detail::write_file(path, out.str());
    detail::write_file(path + ".json", sidecar.dump(2) + "\n");
}

// Reads a P6 PPM as packed 24-bit color ids (used for GT segmentation rasters
// and for reading label images back).
inline std::pair<std::vector<int>, std::pair<int, int>> read_ppm_ids(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    std::size_t pos = 0;
    if (detail::next_token(bytes, pos) != "P6") throw ParseError("PPM: bad magic", 0);
    int w, h, maxval;
    try {
        w = std::stoi(detail::next_token(bytes, pos));
        h = std::stoi(detail::next_token(bytes, pos));
        maxval = std::stoi(detail::next_token(bytes, pos));
    } catch (const std::logic_error&) {
        throw ParseError("PPM: bad header", pos);
    }
    if (maxval != 255) throw ParseError("PPM: only maxval 255 supported", pos);
    ++pos;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (bytes.size() - pos < n * 3) throw ParseError("PPM: truncated raster", pos);
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + pos + i * 3);
        ids[i] = (p[0] << 16) | (p[1] << 8) | p[2];
    }
    return {std::move(ids), {w, h}};
}

// ---------------------------------------------------------------------------
// Model JSON. Field names are part of the format; unknown fields rejected.

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw std::runtime_error("model JSON: unknown field '" + key + "' in " + where);
    }
}

inline Vec3 vec3_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        throw std::runtime_error("model JSON: " + where + " must be a 3-array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json vec3_to_json(const Vec3& v) {
    return nlohmann::json::array({v.x, v.y, v.z});
}

inline nlohmann::json primitive_to_json(const ConvexPrimitive& p) {
    nlohmann::json j;
    j["center"] = vec3_to_json(p.center);
    nlohmann::json normals = nlohmann::json::array();
    for (const Vec3& n : p.normals) normals.push_back(vec3_to_json(n));
    j["normals"] = std::move(normals);
    j["offsets"] = p.offsets;
    j["delta"] = p.blend_delta;
    j["symmetric"] = p.symmetric;
    return j;
}

inline ConvexPrimitive primitive_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"center", "normals", "offsets", "delta", "symmetric"}, "primitive");
    ConvexPrimitive p;
    p.center = vec3_from_json(j.at("center"), "center");
    for (const auto& n : j.at("normals")) p.normals.push_back(vec3_from_json(n, "normal"));
    p.offsets = j.at("offsets").get<std::vector<double>>();
    p.blend_delta = j.at("delta").get<double>();
    p.symmetric = j.at("symmetric").get<bool>();
    p.validate();
    return p;
}

}  // namespace detail

inline nlohmann::json model_to_json(const CsgModel& m) {
    nlohmann::json j;
    j["sigma"] = m.sharpness_sigma;
    j["scene_transform"] = {{"scale", m.scene_transform.scale},
                            {"translate", detail::vec3_to_json(m.scene_transform.translate)}};
    nlohmann::json pos = nlohmann::json::array(), neg = nlohmann::json::array();
    for (const auto& p : m.positives) pos.push_back(detail::primitive_to_json(p));
    for (const auto& p : m.negatives) neg.push_back(detail::primitive_to_json(p));
    j["positives"] = std::move(pos);
    j["negatives"] = std::move(neg);
    return j;
}

inline CsgModel model_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"sigma", "scene_transform", "positives", "negatives"}, "model");
    CsgModel m;
    m.sharpness_sigma = j.at("sigma").get<double>();
    const auto& t = j.at("scene_transform");
    detail::reject_unknown(t, {"scale", "translate"}, "scene_transform");
    m.scene_transform.scale = t.at("scale").get<double>();
    m.scene_transform.translate = detail::vec3_from_json(t.at("translate"), "translate");
    for (const auto& p : j.at("positives")) m.positives.push_back(detail::primitive_from_json(p));
    for (const auto& p : j.at("negatives")) m.negatives.push_back(detail::primitive_from_json(p));
    m.validate();
    return m;
}

inline void write_model_json(const std::string& path, const CsgModel& m) {
    detail::write_file(path, model_to_json(m).dump(2) + "\n");
}

inline CsgModel read_model_json(const std::string& path) {
    return model_from_json(nlohmann::json::parse(detail::read_file(path)));
}

// ---------------------------------------------------------------------------
// Camera JSON.

inline void write_camera_json(const std::string& path, const Camera& cam) {
    nlohmann::json j = {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx},
                        {"cy", cam.cy}, {"width", cam.width}, {"height", cam.height}};
    detail::write_file(path, j.dump(2) + "\n");
}

inline Camera read_camera_json(const std::string& path) {
    const auto j = nlohmann::json::parse(detail::read_file(path));
    detail::reject_unknown(j, {"fx", "fy", "cx", "cy", "width", "height"}, "camera");
    Camera cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.validate();
    return cam;
}

// ---------------------------------------------------------------------------
// Metric report serialization: exactly the documented field names.

inline nlohmann::json metric_report_to_json(const MetricReport& r) {
    nlohmann::json j;
    auto put = [&j](const char* key, double v) {
        if (std::isnan(v)) j[key] = nullptr;
        else j[key] = v;
    };
    put("absrel", r.absrel);
    nlohmann::json auc = nlohmann::json::object();
    for (const auto& [n, frac] : r.auc) auc[std::to_string(n)] = frac;
    j["auc"] = std::move(auc);
    put("mean_dist", r.mean_dist);
    put("median_dist", r.median_dist);
    put("normal_mean_deg", r.normal_mean_deg);
    put("normal_median_deg", r.normal_median_deg);
    put("seg_acc", r.seg_acc);
    j["valid_pixel_count"] = r.valid_pixel_count;
    return j;
}

inline std::string metric_report_tsv(const MetricReport& r) {
    std::ostringstream out;
    out.precision(6);
    auto cell = [&out](double v) {
        out << "\t";
        if (std::isnan(v)) out << "-";
        else out << v;
    };
    out << r.absrel;
    for (int n : default_auc_thresholds()) {
        out << "\t";
        auto it = r.auc.find(n);
        if (it == r.auc.end()) out << "-";
        else out << it->second;
    }
    cell(r.mean_dist);
    cell(r.median_dist);
    cell(r.normal_mean_deg);
    cell(r.normal_median_deg);
    cell(r.seg_acc);
    out << "\t" << r.valid_pixel_count;
    return out.str();
}

inline const char* metric_report_tsv_header() {
    return "absrel\tauc@5\tauc@10\tauc@20\tauc@50\tmean_dist\tmedian_dist\tnormal_mean_deg\t"
           "normal_median_deg\tseg_acc\tvalid_pixel_count";
}

// ---------------------------------------------------------------------------
// TOML subset reader: [section], key = value, # comments. Values: integers,
// floats, booleans, strings, and flat arrays of numbers.

using TomlValue = std::variant<std::int64_t, double, bool, std::string, std::vector<double>>;
using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline TomlValue parse_toml_value(const std::string& raw, int line_no) {
    const std::string v = trim(raw);
    if (v.empty()) throw std::runtime_error("TOML: empty value at line " + std::to_string(line_no));
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw std::runtime_error("TOML: unterminated string at line " + std::to_string(line_no));
        return v.substr(1, v.size() - 2);
    }
    if (v.front() == '[') {
        if (v.back() != ']')
            throw std::runtime_error("TOML: unterminated array at line " + std::to_string(line_no));
        std::vector<double> arr;
        std::stringstream ss(v.substr(1, v.size() - 2));
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::string it = trim(item);
            if (it.empty()) continue;
            arr.push_back(std::stod(it));
        }
        return arr;
    }
    // Number: integer if it survives a round trip without '.', 'e', 'inf'.
    try {
        if (v.find_first_of(".eE") == std::string::npos) {
            std::size_t used = 0;
            const std::int64_t i = std::stoll(v, &used);
            if (used == v.size()) return i;
        }
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size())
            throw std::runtime_error("TOML: trailing characters at line " + std::to_string(line_no));
        return d;
    } catch (const std::logic_error&) {
        throw std::runtime_error("TOML: bad value '" + v + "' at line " + std::to_string(line_no));
    }
}

}  // namespace detail

inline TomlTable read_toml(const std::string& text) {
    TomlTable table;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // Strip comments outside strings.
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) { line = line.substr(0, i); break; }
        }
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw std::runtime_error("TOML: bad section header at line " +
                                         std::to_string(line_no));
            section = detail::trim(t.substr(1, t.size() - 2));
            table[section];
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("TOML: expected key = value at line " +
                                     std::to_string(line_no));
        const std::string key = detail::trim(t.substr(0, eq));
        if (key.empty())
            throw std::runtime_error("TOML: empty key at line " + std::to_string(line_no));
        table[section][key] = detail::parse_toml_value(t.substr(eq + 1), line_no);
    }
    return table;
}

inline TomlTable read_toml_file(const std::string& path) {
    return read_toml(detail::read_file(path));
}

namespace detail {

inline double toml_number(const TomlValue& v, const std::string& key) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    throw std::runtime_error("config: '" + key + "' must be a number");
}

inline std::int64_t toml_int(const TomlValue& v, const std::string& key) {
    if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
    throw std::runtime_error("config: '" + key + "' must be an integer");
}

inline bool toml_bool(const TomlValue& v, const std::string& key) {
    if (const auto* b = std::get_if<bool>(&v)) return *b;
    throw std::runtime_error("config: '" + key + "' must be a boolean");
}

}  // namespace detail

}  // namespace csgfit
