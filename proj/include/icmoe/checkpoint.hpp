#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>

#include "icmoe/experts.hpp"
#include "icmoe/sgcl.hpp"

namespace icmoe {

/// Checkpoints are directories of ICMT tensor files plus a plain
/// key=value manifest recording the encoder config and expert kinds.
void save_pretrained(const std::filesystem::path& dir, const EncoderConfig& config,
                     const EncoderWeights& weights);
EncoderWeights load_pretrained(const std::filesystem::path& dir, EncoderConfig& config_out);

void save_experts(const std::filesystem::path& dir, const EncoderConfig& config,
                  const std::array<ExpertParams, 3>& experts,
                  const SgclProjections* projections = nullptr);
std::array<ExpertParams, 3> load_experts(const std::filesystem::path& dir,
                                         EncoderConfig& config_out,
                                         std::optional<SgclProjections>* projections = nullptr);

/// FNV-1a over every file's bytes in sorted path order; detects any
/// parameter drift between two checkpoints.
std::uint64_t dir_content_hash(const std::filesystem::path& dir);

std::uint64_t file_content_hash(const std::filesystem::path& path);

}  // namespace icmoe
