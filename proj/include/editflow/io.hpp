// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/dataworld.hpp"
#include "editflow/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace editflow::io {

// FNV-1a, used for config hashes and fixture keys.
uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t fnv1a(const std::string& s, uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t v);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

// Lossless 8-bit RGB PNG of a [3,H,W] tensor in [0,1]. Deterministic bytes.
std::string encode_png(const Tensor& img);
Tensor decode_png(const std::string& bytes);

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void make_dirs(const std::string& path);

// Quantizes pixels to the 8-bit grid PNG stores, in place semantics.
Tensor quantize_u8(const Tensor& img);

// --- dataset files ---------------------------------------------------------
// Line-delimited records; first line is the manifest header. Images go to
// <dir>/images/*.png unless inline_images is set, in which case they are
// embedded as base64 PNG payloads.
void save_dataset(const world::Dataset& ds, const std::string& dir, bool inline_images = false);
world::Dataset load_dataset(const std::string& dir);
uint64_t manifest_hash(const std::string& dir);

// --- flat key=value config files -------------------------------------------
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::string render_kv_text(const std::map<std::string, std::string>& kv);

// --- checkpoints ------------------------------------------------------------
// Versioned binary container: meta strings plus named float32 tensors.
// Round-trips bit-exactly.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace editflow::io
