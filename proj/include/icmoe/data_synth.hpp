#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "icmoe/tensor.hpp"

namespace icmoe {

enum class Domain { source, target };
enum class FgShape { ellipse, blob };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

/// Scene generator parameters. The target domain is configured with a
/// smaller intensity gap and higher noise to create the transfer gap.
struct SceneSpec {
    std::size_t image_size = 32;
    std::size_t num_samples = 160;
    Domain domain = Domain::source;
    std::uint64_t seed = 0;
    FgShape fg_shape = FgShape::blob;
    double intensity_gap = 0.5;
    double noise_sigma = 0.02;
    double texture_frequency = 3.0;

    void validate() const;
};

struct Sample {
    Tensor x_img;  // H x W in [0, 1]
    Tensor gt;     // binary H x W
    Tensor x_fg;   // image with background zeroed
    Tensor x_bg;   // image with foreground zeroed
};

/// Deterministic per-index sample; randomness is a per-index stream so
/// generation order does not matter.
Sample make_sample(const SceneSpec& spec, std::size_t index);

/// (x_fg, x_bg) masked copies; x_fg + x_bg == x_img exactly.
std::pair<Tensor, Tensor> split_input(const Tensor& x_img, const Tensor& gt);

/// Writes images/NNNN.icmt, masks/NNNN.icmt and manifest.csv.
void generate(const SceneSpec& spec, const std::filesystem::path& out_dir);

struct Dataset {
    std::size_t image_size = 0;
    std::string domain;
    std::vector<Tensor> images;
    std::vector<Tensor> masks;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
};

/// Loads a generated dataset and applies the deterministic 3:1
/// train/validation split (by seeded index hash order).
Dataset load_manifest(const std::filesystem::path& dir);

}  // namespace icmoe
