#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lupi/model.hpp"

namespace lupi {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Single JSON document: header {format_version, arch, seed} plus
// params: name -> {shape, data} with base64 little-endian doubles.
std::string checkpoint_to_json(const Model& model, std::uint64_t seed);
void save_checkpoint(const Model& model, std::uint64_t seed, const std::string& path);

/// Loads parameter tensors into an already-built model; arch fingerprints
/// must match.
void load_checkpoint(Model& model, const std::string& path);

std::string base64_encode(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(const std::string& s);

}  // namespace lupi
