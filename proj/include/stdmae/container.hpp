#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "stdmae/nn.hpp"

namespace stdmae {

/// On-disk layout: 8-byte magic "STDMAECK", uint64 LE header length, JSON
/// header, then one float32 LE blob per tensor in the order listed under
/// header["tensors"] (each entry {"name", "shape"}).
struct Container {
    nlohmann::json header;
    NamedParams tensors;
};

void write_container(const std::filesystem::path& path, const nlohmann::json& header, const NamedParams& tensors);
/// Throws DataError on a bad magic, truncated payload or malformed header.
Container read_container(const std::filesystem::path& path);

/// Rounds every value to the nearest float32 in place, so a tensor written to
/// a container reads back bit-identical.
void round_to_float32(std::span<Real> values);
void round_to_float32(const NamedParams& params);

/// FNV-1a of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

/// Copies values of `src` into same-named tensors of `dst`; throws DataError
/// on a missing name or shape mismatch.
void assign_params(const NamedParams& dst, const NamedParams& src);

} // namespace stdmae
