#pragma once

#include <cstddef>
#include <filesystem>

#include "thinkact/diffcore.hpp"
#include "thinkact/json_types.hpp"

namespace thinkact::diff {

// On disk a checkpoint is two files: `<stem>.json`, a manifest listing every
// parameter's name, shape and byte offset plus dtype and global step, and
// `<stem>.bin`, the float64 values concatenated in little-endian order.
struct CheckpointInfo {
  std::size_t global_step = 0;
  Json meta;
};

void save_checkpoint(const std::filesystem::path& manifest, const ParameterStore& store, std::size_t global_step,
                     const Json& meta = Json::object());

// Overwrites the values of `store` in place. Every parameter in the manifest
// must exist in `store` with the same shape, and vice versa.
CheckpointInfo load_checkpoint(const std::filesystem::path& manifest, ParameterStore& store);

Json read_manifest(const std::filesystem::path& manifest);

}  // namespace thinkact::diff
