#include "icmoe/config.hpp"

#include <fstream>
#include <sstream>

#include "icmoe/errors.hpp"

namespace icmoe {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    return from_string(buf.str());
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
    KeyValueConfig kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config: malformed line: " + line);
        kv.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

void KeyValueConfig::apply_overrides(const std::vector<std::string>& overrides) {
    for (const std::string& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("config: malformed override: " + o);
        values_[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
    }
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not a number: " + it->second);
    }
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an unsigned integer: " + it->second);
    }
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoll(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an integer: " + it->second);
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "1" || it->second == "true") return true;
    if (it->second == "0" || it->second == "false") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: " + it->second);
}

LrSchedule parse_schedule(const std::string& text) {
    LrSchedule schedule;
    schedule.pieces.clear();
    std::istringstream is(text);
    std::string piece;
    while (std::getline(is, piece, ',')) {
        const auto colon = piece.find(':');
        if (colon == std::string::npos)
            throw ConfigError("config: malformed schedule piece: " + piece);
        LrSchedule::Piece p;
        try {
            p.until_epoch = std::stoull(piece.substr(0, colon));
            p.lr = std::stod(piece.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("config: malformed schedule piece: " + piece);
        }
        schedule.pieces.push_back(p);
    }
    schedule.validate();
    return schedule;
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
    TrainConfig c;
    c.encoder.image_size = kv.get_size("image_size", c.encoder.image_size);
    c.encoder.patch_size = kv.get_size("patch_size", c.encoder.patch_size);
    c.encoder.embed_dim = kv.get_size("embed_dim", c.encoder.embed_dim);
    c.encoder.num_blocks = kv.get_size("num_blocks", c.encoder.num_blocks);
    c.encoder.adapter_dim = kv.get_size("adapter_dim", c.encoder.adapter_dim);
    c.epochs = kv.get_size("epochs", c.epochs);
    c.batch_size = kv.get_size("batch_size", c.batch_size);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    if (kv.has("lr_schedule")) c.schedule = parse_schedule(kv.get("lr_schedule", ""));
    c.rms_decay = kv.get_double("rms_decay", c.rms_decay);
    c.rms_eps = kv.get_double("rms_eps", c.rms_eps);
    c.w_ce = kv.get_double("w_ce", c.w_ce);
    c.w_dice = kv.get_double("w_dice", c.w_dice);
    c.w_sgcl = kv.get_double("w_sgcl", c.w_sgcl);
    c.fusion_alpha = kv.get_double("fusion_alpha", c.fusion_alpha);
    c.n_threshold_override = kv.get_int("n_threshold", 0);
    c.balance_at_inference = kv.get_bool("balance_at_inference", c.balance_at_inference);
    c.aux_seg_losses = kv.get_bool("aux_seg_losses", c.aux_seg_losses);
    const std::string anchors = kv.get("sgcl_anchors", "equations");
    if (anchors == "equations")
        c.anchors = SgclAnchors::equations;
    else if (anchors == "prose")
        c.anchors = SgclAnchors::prose;
    else
        throw ConfigError("config: unknown sgcl_anchors value: " + anchors);
    c.validate();
    return c;
}

SceneSpec scene_spec_from(const KeyValueConfig& kv) {
    SceneSpec s;
    s.image_size = kv.get_size("image_size", s.image_size);
    s.num_samples = kv.get_size("num_samples", s.num_samples);
    s.domain = domain_from_string(kv.get("domain", "source"));
    s.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    const std::string shape = kv.get("fg_shape", "blob");
    if (shape == "blob")
        s.fg_shape = FgShape::blob;
    else if (shape == "ellipse")
        s.fg_shape = FgShape::ellipse;
    else
        throw ConfigError("config: unknown fg_shape: " + shape);
    s.intensity_gap = kv.get_double("intensity_gap", s.intensity_gap);
    s.noise_sigma = kv.get_double("noise_sigma", s.noise_sigma);
    s.texture_frequency = kv.get_double("texture_frequency", s.texture_frequency);
    s.validate();
    return s;
}

}  // namespace icmoe
