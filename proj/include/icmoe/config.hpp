#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "icmoe/data_synth.hpp"
#include "icmoe/trainer.hpp"

namespace icmoe {

/// Plain key=value configuration ('#' starts a comment line).
class KeyValueConfig {
public:
    static KeyValueConfig load(const std::filesystem::path& path);
    static KeyValueConfig from_string(const std::string& text);

    /// Applies "key=value" override strings on top of the file contents.
    void apply_overrides(const std::vector<std::string>& overrides);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

/// "50:1e-5,75:5e-6,100:1e-6" -> piecewise schedule.
LrSchedule parse_schedule(const std::string& text);

TrainConfig train_config_from(const KeyValueConfig& kv);
SceneSpec scene_spec_from(const KeyValueConfig& kv);

}  // namespace icmoe
