#pragma once

#include <filesystem>

#include "icmoe/tensor.hpp"

namespace icmoe {

// Binary tensor file: magic "ICMT", u32 LE rank, u32 LE extents,
// f64 LE row-major data.
void write_icmt(const std::filesystem::path& path, const Tensor& t);
Tensor read_icmt(const std::filesystem::path& path);

}  // namespace icmoe
