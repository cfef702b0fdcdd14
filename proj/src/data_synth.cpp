#include "icmoe/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "icmoe/errors.hpp"
#include "icmoe/rng.hpp"
#include "icmoe/tensor_io.hpp"

namespace icmoe {

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw ConfigError("unknown domain: " + s);
}

void SceneSpec::validate() const {
    if (image_size < 8) throw ConfigError("SceneSpec: image_size must be >= 8");
    if (num_samples == 0) throw ConfigError("SceneSpec: num_samples must be positive");
    if (intensity_gap <= 0.0) throw ConfigError("SceneSpec: intensity_gap must be positive");
    if (noise_sigma < 0.0) throw ConfigError("SceneSpec: noise_sigma must be non-negative");
}

namespace {

struct Scene {
    double cx, cy, ax, ay, theta;  // ellipse in unit coordinates
    double phase3, phase5;         // blob boundary modulation phases
    bool blob;
};

std::vector<double> rasterize(const Scene& s, std::size_t n) {
    std::vector<double> mask(n * n, 0.0);
    const double cos_t = std::cos(s.theta), sin_t = std::sin(s.theta);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(n) - s.cx;
            const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(n) - s.cy;
            const double u = (px * cos_t + py * sin_t) / s.ax;
            const double v = (-px * sin_t + py * cos_t) / s.ay;
            const double rho = std::sqrt(u * u + v * v);
            double boundary = 1.0;
            if (s.blob) {
                const double phi = std::atan2(v, u);
                boundary += 0.15 * std::sin(3.0 * phi + s.phase3) +
                            0.08 * std::sin(5.0 * phi + s.phase5);
            }
            if (rho <= boundary) mask[y * n + x] = 1.0;
        }
    }
    return mask;
}

}  // namespace

Sample make_sample(const SceneSpec& spec, std::size_t index) {
    spec.validate();
    Rng rng = Rng::stream(spec.seed, index);
    const std::size_t n = spec.image_size;

    // Rejection-sample the foreground until its area lands in [0.06, 0.28].
    std::vector<double> mask;
    for (int attempt = 0; attempt < 100; ++attempt) {
        Scene s;
        const double area = rng.uniform(0.08, 0.25);
        const double ratio = rng.uniform(0.6, 1.6);
        s.ax = std::sqrt(area * ratio / std::numbers::pi);
        s.ay = s.ax / ratio;
        s.cx = rng.uniform(0.35, 0.65);
        s.cy = rng.uniform(0.35, 0.65);
        s.theta = rng.uniform(0.0, std::numbers::pi);
        s.phase3 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        s.phase5 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        s.blob = spec.fg_shape == FgShape::blob;
        mask = rasterize(s, n);
        double frac = 0.0;
        for (double v : mask) frac += v;
        frac /= static_cast<double>(n * n);
        if (frac >= 0.06 && frac <= 0.28) break;
        mask.clear();
    }
    if (mask.empty()) throw InvariantBreach("make_sample: area rejection did not converge");

    const double background = rng.uniform(0.2, 0.35);
    std::vector<double> img(n * n);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const std::size_t i = y * n + x;
            double v = background + (mask[i] != 0.0 ? spec.intensity_gap : 0.0);
            v += 0.03 *
                 std::sin(2.0 * std::numbers::pi * spec.texture_frequency * static_cast<double>(x) /
                          static_cast<double>(n)) *
                 std::sin(2.0 * std::numbers::pi * spec.texture_frequency * static_cast<double>(y) /
                          static_cast<double>(n));
            if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
            img[i] = std::clamp(v, 0.0, 1.0);
        }

    Sample sample;
    sample.x_img = Tensor({n, n}, std::move(img));
    sample.gt = Tensor({n, n}, std::move(mask));
    auto [fg, bg] = split_input(sample.x_img, sample.gt);
    sample.x_fg = std::move(fg);
    sample.x_bg = std::move(bg);
    return sample;
}

std::pair<Tensor, Tensor> split_input(const Tensor& x_img, const Tensor& gt) {
    if (x_img.shape() != gt.shape())
        throw std::invalid_argument("split_input: shape mismatch " + shape_str(x_img.shape()) +
                                    " vs " + shape_str(gt.shape()));
    std::vector<double> fg(x_img.size()), bg(x_img.size());
    for (std::size_t i = 0; i < x_img.size(); ++i) {
        const double m = gt.data()[i];
        if (m != 0.0 && m != 1.0)
            throw std::invalid_argument("split_input: mask is not binary");
        fg[i] = m != 0.0 ? x_img.data()[i] : 0.0;
        bg[i] = m != 0.0 ? 0.0 : x_img.data()[i];
    }
    return {Tensor(x_img.shape(), std::move(fg)), Tensor(x_img.shape(), std::move(bg))};
}

namespace {

std::string sample_name(std::size_t index) {
    std::ostringstream os;
    os.width(4);
    os.fill('0');
    os << index;
    return os.str();
}

}  // namespace

void generate(const SceneSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "masks");

    std::ofstream manifest(out_dir / "manifest.csv");
    if (!manifest) throw IoError("generate: cannot write manifest in " + out_dir.string());
    manifest << "sample_id,image_path,mask_path,domain\n";

    for (std::size_t i = 0; i < spec.num_samples; ++i) {
        Sample s = make_sample(spec, i);
        const std::string name = sample_name(i);
        write_icmt(out_dir / "images" / (name + ".icmt"), s.x_img);
        write_icmt(out_dir / "masks" / (name + ".icmt"), s.gt);
        manifest << i << ",images/" << name << ".icmt,masks/" << name << ".icmt,"
                 << to_string(spec.domain) << "\n";
    }
}

Dataset load_manifest(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest) throw IoError("load_manifest: missing " + (dir / "manifest.csv").string());

    Dataset ds;
    std::string line;
    std::getline(manifest, line);  // header
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id, image_path, mask_path, domain;
        std::getline(row, id, ',');
        std::getline(row, image_path, ',');
        std::getline(row, mask_path, ',');
        std::getline(row, domain, ',');
        const auto img_file = dir / image_path;
        const auto mask_file = dir / mask_path;
        if (!std::filesystem::exists(img_file))
            throw IoError("load_manifest: missing file " + img_file.string());
        if (!std::filesystem::exists(mask_file))
            throw IoError("load_manifest: missing file " + mask_file.string());
        ds.images.push_back(read_icmt(img_file));
        ds.masks.push_back(read_icmt(mask_file));
        ds.domain = domain;
    }
    if (ds.images.empty()) throw ConfigError("load_manifest: dataset is empty");
    ds.image_size = ds.images.front().shape()[0];

    // 3:1 split: order indices by seeded hash, last quarter is validation.
    const std::size_t n = ds.images.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [](std::size_t a, std::size_t b) {
        const auto ha = splitmix64(0x5eedULL ^ a);
        const auto hb = splitmix64(0x5eedULL ^ b);
        return ha != hb ? ha < hb : a < b;
    });
    const std::size_t val_count = n / 4;
    ds.train_idx.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(val_count));
    ds.val_idx.assign(order.end() - static_cast<std::ptrdiff_t>(val_count), order.end());
    std::sort(ds.train_idx.begin(), ds.train_idx.end());
    std::sort(ds.val_idx.begin(), ds.val_idx.end());
    return ds;
}

}  // namespace icmoe
