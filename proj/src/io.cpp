// SPDX-License-Identifier: Apache-2.0
#include "editflow/io.hpp"

#include "editflow/errors.hpp"

#include <json.hpp>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace editflow::io {

namespace fs = std::filesystem;
using nlohmann::json;

uint64_t fnv1a(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a(const std::string& s, uint64_t seed) { return fnv1a(s.data(), s.size(), seed); }

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

namespace {
const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::string& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 2 < bytes.size()) {
        uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                     static_cast<unsigned char>(bytes[i + 2]);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += kB64[v & 63];
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        uint32_t v = static_cast<unsigned char>(bytes[i]) << 16;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string base64_decode(const std::string& text) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    int buf = 0, bits = 0;
    for (char c : text) {
        if (c == '=') break;
        int v = val(c);
        if (v < 0) continue;
        buf = (buf << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((buf >> bits) & 0xFF);
        }
    }
    return out;
}

namespace {

void put_u32be(std::string& s, uint32_t v) {
    s += static_cast<char>((v >> 24) & 0xFF);
    s += static_cast<char>((v >> 16) & 0xFF);
    s += static_cast<char>((v >> 8) & 0xFF);
    s += static_cast<char>(v & 0xFF);
}

uint32_t get_u32be(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32be(out, static_cast<uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                      static_cast<uInt>(body.size()));
    put_u32be(out, static_cast<uint32_t>(crc));
}

std::string zlib_deflate(const std::string& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string out(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  6) != Z_OK)
        throw NumericError("png: deflate failed");
    out.resize(bound);
    return out;
}

std::string zlib_inflate(const std::string& comp, size_t expected) {
    std::string out(expected, '\0');
    uLongf len = static_cast<uLongf>(expected);
    if (uncompress(reinterpret_cast<Bytef*>(out.data()), &len,
                   reinterpret_cast<const Bytef*>(comp.data()),
                   static_cast<uLong>(comp.size())) != Z_OK)
        throw InputError("png: inflate failed");
    out.resize(len);
    return out;
}

} // namespace

std::string encode_png(const Tensor& img) {
    if (img.ndim() != 3 || img.dim(0) != 3) throw InputError("encode_png: need [3,H,W]");
    int H = img.dim(1), W = img.dim(2);
    std::string raw;
    raw.reserve(static_cast<size_t>(H) * (1 + 3 * W));
    for (int y = 0; y < H; ++y) {
        raw += '\0'; // filter type 0
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = img[static_cast<int64_t>(c) * H * W + y * W + x];
                v = std::min(1.0F, std::max(0.0F, v));
                raw += static_cast<char>(std::lround(v * 255.0F));
            }
    }
    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    put_u32be(ihdr, static_cast<uint32_t>(W));
    put_u32be(ihdr, static_cast<uint32_t>(H));
    ihdr += static_cast<char>(8);  // bit depth
    ihdr += static_cast<char>(2);  // color type RGB
    ihdr += '\0';
    ihdr += '\0';
    ihdr += '\0';
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", zlib_deflate(raw));
    append_chunk(out, "IEND", "");
    return out;
}

Tensor decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw InputError("decode_png: not a PNG");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    size_t pos = 8;
    int W = 0, H = 0;
    std::string idat;
    while (pos + 8 <= bytes.size()) {
        uint32_t len = get_u32be(p + pos);
        std::string type(bytes, pos + 4, 4);
        if (pos + 12 + len > bytes.size()) throw InputError("decode_png: truncated chunk");
        const char* payload = bytes.data() + pos + 8;
        if (type == "IHDR") {
            W = static_cast<int>(get_u32be(reinterpret_cast<const unsigned char*>(payload)));
            H = static_cast<int>(get_u32be(reinterpret_cast<const unsigned char*>(payload) + 4));
            if (payload[8] != 8 || payload[9] != 2)
                throw InputError("decode_png: only 8-bit RGB supported");
        } else if (type == "IDAT") {
            idat.append(payload, len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (W <= 0 || H <= 0) throw InputError("decode_png: missing IHDR");
    size_t stride = 1 + static_cast<size_t>(3) * W;
    std::string raw = zlib_inflate(idat, stride * static_cast<size_t>(H));
    Tensor img({3, H, W});
    std::vector<unsigned char> prev(static_cast<size_t>(3) * W, 0);
    std::vector<unsigned char> cur(static_cast<size_t>(3) * W, 0);
    for (int y = 0; y < H; ++y) {
        const auto* row = reinterpret_cast<const unsigned char*>(raw.data()) + y * stride;
        int filter = row[0];
        for (size_t i = 0; i < cur.size(); ++i) {
            int x = row[1 + i];
            int a = i >= 3 ? cur[i - 3] : 0;
            int b = prev[i];
            int c = i >= 3 ? prev[i - 3] : 0;
            switch (filter) {
            case 0: break;
            case 1: x += a; break;
            case 2: x += b; break;
            case 3: x += (a + b) / 2; break;
            case 4: {
                int pa = std::abs(b - c), pb = std::abs(a - c), pc = std::abs(a + b - 2 * c);
                x += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                break;
            }
            default: throw InputError("decode_png: unknown filter");
            }
            cur[i] = static_cast<unsigned char>(x & 0xFF);
        }
        for (int xq = 0; xq < W; ++xq)
            for (int ch = 0; ch < 3; ++ch)
                img[static_cast<int64_t>(ch) * H * W + y * W + xq] =
                    static_cast<float>(cur[static_cast<size_t>(xq) * 3 + ch]) / 255.0F;
        std::swap(prev, cur);
    }
    return img;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open for write: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open for read: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

bool file_exists(const std::string& path) { return fs::exists(path); }

void make_dirs(const std::string& path) { fs::create_directories(path); }

Tensor quantize_u8(const Tensor& img) {
    Tensor out = img;
    for (int64_t i = 0; i < out.numel(); ++i) {
        float v = std::min(1.0F, std::max(0.0F, out[i]));
        out[i] = std::round(v * 255.0F) / 255.0F;
    }
    return out;
}

namespace {

json scene_to_json(const world::ToyScene& s) {
    json shapes = json::array();
    for (const auto& sh : s.shapes) {
        shapes.push_back({{"kind", static_cast<int>(sh.kind)},
                          {"color", sh.color},
                          {"cx", sh.cx},
                          {"cy", sh.cy},
                          {"radius", sh.radius}});
    }
    return json{{"background", s.background}, {"shapes", shapes}};
}

world::ToyScene scene_from_json(const json& j) {
    world::ToyScene s;
    s.background = j.at("background").get<int>();
    for (const auto& sh : j.at("shapes")) {
        world::Shape shape;
        shape.kind = static_cast<world::ShapeKind>(sh.at("kind").get<int>());
        shape.color = sh.at("color").get<int>();
        shape.cx = sh.at("cx").get<int>();
        shape.cy = sh.at("cy").get<int>();
        shape.radius = sh.at("radius").get<int>();
        s.shapes.push_back(shape);
    }
    return s;
}

} // namespace

void save_dataset(const world::Dataset& ds, const std::string& dir, bool inline_images) {
    make_dirs(dir);
    if (!inline_images) make_dirs(dir + "/images");
    std::ostringstream os;
    json manifest = {{"manifest",
                      {{"seed", ds.manifest.seed},
                       {"n", ds.manifest.n},
                       {"generator", ds.manifest.generator_version},
                       {"inline", inline_images}}}};
    os << manifest.dump() << "\n";
    char name[64];
    for (size_t i = 0; i < ds.records.size(); ++i) {
        const auto& r = ds.records[i];
        std::string png = encode_png(r.image);
        std::string image_field;
        if (inline_images) {
            image_field = "base64:" + base64_encode(png);
        } else {
            std::snprintf(name, sizeof(name), "images/img_%06zu.png", i);
            write_file(dir + "/" + name, png);
            image_field = name;
        }
        json rec = {{"image", image_field},
                    {"instruction", r.instruction},
                    {"source_caption", r.source_caption},
                    {"target_caption", r.target_caption},
                    {"edit_type", world::edit_type_name(r.edit_type)},
                    {"object_name", r.object_name},
                    {"scene", scene_to_json(r.scene)}};
        os << rec.dump() << "\n";
    }
    write_file(dir + "/manifest.jsonl", os.str());
}

world::Dataset load_dataset(const std::string& dir) {
    std::istringstream is(read_file(dir + "/manifest.jsonl"));
    std::string line;
    if (!std::getline(is, line)) throw InputError("dataset: empty manifest");
    json header = json::parse(line);
    world::Dataset ds;
    ds.manifest.seed = header.at("manifest").at("seed").get<uint64_t>();
    ds.manifest.n = header.at("manifest").at("n").get<int>();
    ds.manifest.generator_version = header.at("manifest").at("generator").get<std::string>();
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        world::EditRecord r;
        std::string image_field = rec.at("image").get<std::string>();
        std::string png = image_field.rfind("base64:", 0) == 0
                              ? base64_decode(image_field.substr(7))
                              : read_file(dir + "/" + image_field);
        r.image = decode_png(png);
        r.instruction = rec.at("instruction").get<std::string>();
        r.source_caption = rec.at("source_caption").get<std::string>();
        r.target_caption = rec.at("target_caption").get<std::string>();
        r.edit_type = world::edit_type_from_name(rec.at("edit_type").get<std::string>());
        r.object_name = rec.at("object_name").get<std::string>();
        r.scene = scene_from_json(rec.at("scene"));
        ds.records.push_back(std::move(r));
    }
    return ds;
}

uint64_t manifest_hash(const std::string& dir) {
    std::string manifest = read_file(dir + "/manifest.jsonl");
    uint64_t h = fnv1a(manifest);
    std::istringstream is(manifest);
    std::string line;
    std::getline(is, line); // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        std::string image_field = rec.at("image").get<std::string>();
        if (image_field.rfind("base64:", 0) != 0)
            h = fnv1a(read_file(dir + "/" + image_field), h);
    }
    return h;
}

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t z = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, z - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

std::string render_kv_text(const std::map<std::string, std::string>& kv) {
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    return os.str();
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

namespace {
constexpr char kCkptMagic[8] = {'E', 'F', 'C', 'K', '0', '0', '0', '1'};

void put_u64le(std::string& s, uint64_t v) {
    for (int i = 0; i < 8; ++i) s += static_cast<char>((v >> (8 * i)) & 0xFF);
}

uint64_t get_u64le(const char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
    return v;
}

void put_str(std::string& s, const std::string& v) {
    put_u64le(s, v.size());
    s += v;
}
} // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::string out(kCkptMagic, 8);
    put_u64le(out, ck.meta.size());
    for (const auto& [k, v] : ck.meta) {
        put_str(out, k);
        put_str(out, v);
    }
    put_u64le(out, ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
        put_str(out, name);
        put_u64le(out, t.shape().size());
        for (int d : t.shape()) put_u64le(out, static_cast<uint64_t>(d));
        std::string bytes(reinterpret_cast<const char*>(t.data()),
                          static_cast<size_t>(t.numel()) * sizeof(float));
        put_str(out, bytes);
    }
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string in = read_file(path);
    if (in.size() < 8 || std::memcmp(in.data(), kCkptMagic, 8) != 0)
        throw VersionError("checkpoint: bad magic or unsupported version: " + path);
    size_t pos = 8;
    auto need = [&](size_t n) {
        if (pos + n > in.size()) throw VersionError("checkpoint: truncated: " + path);
    };
    auto get_u64 = [&]() {
        need(8);
        uint64_t v = get_u64le(in.data() + pos);
        pos += 8;
        return v;
    };
    auto get_str = [&]() {
        uint64_t n = get_u64();
        need(n);
        std::string s = in.substr(pos, n);
        pos += n;
        return s;
    };
    Checkpoint ck;
    uint64_t nmeta = get_u64();
    for (uint64_t i = 0; i < nmeta; ++i) {
        std::string k = get_str();
        ck.meta[k] = get_str();
    }
    uint64_t ntensors = get_u64();
    for (uint64_t i = 0; i < ntensors; ++i) {
        std::string name = get_str();
        uint64_t ndim = get_u64();
        std::vector<int> shape;
        for (uint64_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(get_u64()));
        std::string bytes = get_str();
        Tensor t(shape);
        if (bytes.size() != static_cast<size_t>(t.numel()) * sizeof(float))
            throw VersionError("checkpoint: tensor size mismatch for " + name);
        std::memcpy(t.data(), bytes.data(), bytes.size());
        ck.tensors.emplace_back(name, std::move(t));
    }
    return ck;
}

} // namespace editflow::io
