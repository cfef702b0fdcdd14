#include "icmoe/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "icmoe/errors.hpp"
#include "icmoe/tensor_io.hpp"

namespace icmoe {

namespace {

using KeyValues = std::map<std::string, std::string>;

void write_manifest(const std::filesystem::path& dir, const KeyValues& kv) {
    std::ofstream os(dir / "manifest.txt");
    if (!os) throw IoError("checkpoint: cannot write manifest in " + dir.string());
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

KeyValues read_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.txt");
    if (!is) throw IoError("checkpoint: missing manifest in " + dir.string());
    KeyValues kv;
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

KeyValues config_kv(const EncoderConfig& c) {
    KeyValues kv;
    kv["image_size"] = std::to_string(c.image_size);
    kv["patch_size"] = std::to_string(c.patch_size);
    kv["embed_dim"] = std::to_string(c.embed_dim);
    kv["num_blocks"] = std::to_string(c.num_blocks);
    kv["adapter_dim"] = std::to_string(c.adapter_dim);
    return kv;
}

EncoderConfig config_from_kv(const KeyValues& kv) {
    EncoderConfig c;
    auto get = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError(std::string("checkpoint: manifest missing ") + key);
        return static_cast<std::size_t>(std::stoull(it->second));
    };
    c.image_size = get("image_size");
    c.patch_size = get("patch_size");
    c.embed_dim = get("embed_dim");
    c.num_blocks = get("num_blocks");
    c.adapter_dim = get("adapter_dim");
    return c;
}

std::vector<std::pair<std::string, Tensor>> encoder_named(const EncoderWeights& w,
                                                          const std::string& prefix) {
    ExpertParams tmp;
    tmp.enc = w;
    return tmp.named_parameters(prefix);
}

void save_named(const std::filesystem::path& dir,
                const std::vector<std::pair<std::string, Tensor>>& named) {
    for (const auto& [name, t] : named) write_icmt(dir / (name + ".icmt"), t);
}

void load_named(const std::filesystem::path& dir,
                std::vector<std::pair<std::string, Tensor>> named) {
    for (auto& [name, t] : named) {
        Tensor loaded = read_icmt(dir / (name + ".icmt"));
        if (loaded.shape() != t.shape())
            throw IoError("checkpoint: tensor " + name + " has shape " +
                          shape_str(loaded.shape()) + ", expected " + shape_str(t.shape()));
        t.data_mut() = loaded.data();
    }
}

}  // namespace

void save_pretrained(const std::filesystem::path& dir, const EncoderConfig& config,
                     const EncoderWeights& weights) {
    std::filesystem::create_directories(dir);
    KeyValues kv = config_kv(config);
    kv["type"] = "pretrained";
    write_manifest(dir, kv);
    save_named(dir, encoder_named(weights, "model."));
}

EncoderWeights load_pretrained(const std::filesystem::path& dir, EncoderConfig& config_out) {
    const KeyValues kv = read_manifest(dir);
    if (kv.count("type") && kv.at("type") != "pretrained")
        throw IoError("checkpoint: " + dir.string() + " is not a pretrained checkpoint");
    config_out = config_from_kv(kv);
    Rng rng(0);
    EncoderWeights w = init_encoder(config_out, rng);
    load_named(dir, encoder_named(w, "model."));
    return w;
}

void save_experts(const std::filesystem::path& dir, const EncoderConfig& config,
                  const std::array<ExpertParams, 3>& experts, const SgclProjections* projections) {
    std::filesystem::create_directories(dir);
    KeyValues kv = config_kv(config);
    kv["type"] = "experts";
    for (int e = 0; e < 3; ++e)
        kv["kind_" + std::to_string(e)] = to_string(experts[static_cast<std::size_t>(e)].kind);
    kv["sgcl"] = projections ? "1" : "0";
    if (projections) {
        kv["proj_dim"] = std::to_string(projections->w1.shape()[1]);
        std::ostringstream eps;
        eps.precision(17);
        eps << projections->epsilon;
        kv["epsilon"] = eps.str();
    }
    write_manifest(dir, kv);
    for (int e = 0; e < 3; ++e) {
        const auto& ex = experts[static_cast<std::size_t>(e)];
        save_named(dir, ex.named_parameters("expert" + std::to_string(e) + "."));
    }
    if (projections) {
        const SgclProjections& p = *projections;
        save_named(dir, {{"sgcl.w1", p.w1},
                         {"sgcl.b1", p.b1},
                         {"sgcl.w2", p.w2},
                         {"sgcl.b2", p.b2},
                         {"sgcl.w3", p.w3},
                         {"sgcl.b3", p.b3}});
    }
}

std::array<ExpertParams, 3> load_experts(const std::filesystem::path& dir,
                                         EncoderConfig& config_out,
                                         std::optional<SgclProjections>* projections) {
    const KeyValues kv = read_manifest(dir);
    if (!kv.count("type") || kv.at("type") != "experts")
        throw IoError("checkpoint: " + dir.string() + " is not an experts checkpoint");
    config_out = config_from_kv(kv);

    Rng rng(0);
    EncoderWeights stub = init_encoder(config_out, rng);
    std::array<ExpertParams, 3> experts = build_experts(config_out, stub, rng);
    for (int e = 0; e < 3; ++e) {
        auto& ex = experts[static_cast<std::size_t>(e)];
        const auto key = "kind_" + std::to_string(e);
        if (kv.count(key) && to_string(ex.kind) != kv.at(key))
            throw IoError("checkpoint: expert " + std::to_string(e) + " kind mismatch");
        load_named(dir, ex.named_parameters("expert" + std::to_string(e) + "."));
    }

    if (projections) {
        projections->reset();
        if (kv.count("sgcl") && kv.at("sgcl") == "1") {
            const auto proj_dim = static_cast<std::size_t>(std::stoull(kv.at("proj_dim")));
            Rng prng(0);
            SgclProjections p = SgclProjections::init(config_out.embed_dim, proj_dim, prng);
            p.epsilon = std::stod(kv.at("epsilon"));
            load_named(dir, {{"sgcl.w1", p.w1},
                             {"sgcl.b1", p.b1},
                             {"sgcl.w2", p.w2},
                             {"sgcl.b2", p.b2},
                             {"sgcl.w3", p.w3},
                             {"sgcl.b3", p.b3}});
            *projections = std::move(p);
        }
    }
    return experts;
}

std::uint64_t file_content_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("hash: cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        const std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!is) break;
    }
    return h;
}

std::uint64_t dir_content_hash(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files) {
        const std::string rel = std::filesystem::relative(f, dir).generic_string();
        for (char c : rel) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        h ^= file_content_hash(f);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace icmoe
