#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dcppd/tensor.hpp"

namespace dcppd {

// Checkpoint container: "DCPT" magic, u32 version, u64 header length, JSON
// header, then the named tensors as little-endian float32 in directory
// order. The header carries a config echo plus the tensor directory
// (name / shape / element offset), so files are readable without any code
// from this library.
//
// Values are converted double -> float32 on save and back on load.

struct Checkpoint {
    std::string header_json;  // full header, including the tensor directory
    std::string config_json;  // "config" sub-object, re-serialized
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Raw little-endian float32 helpers shared by the volume / trace writers.
void write_f32(std::vector<unsigned char>& out, const std::vector<double>& values);
void write_u32(std::vector<unsigned char>& out, std::uint32_t v);
void write_u64(std::vector<unsigned char>& out, std::uint64_t v);
std::uint32_t read_u32(const unsigned char* p);
std::uint64_t read_u64(const unsigned char* p);
void read_f32(const unsigned char* p, std::size_t count, std::vector<double>& out);

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_file(const std::filesystem::path& path);

}  // namespace dcppd
