#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "icmoe/checkpoint.hpp"

using namespace icmoe;

namespace fs = std::filesystem;

namespace {

const std::string kCli = ICMOE_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct TmpDir {
    fs::path path;
    explicit TmpDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string operator/(const char* sub) const { return (path / sub).string(); }
};

void write_config(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

}  // namespace

TEST_CASE("unknown verbs and bad flags are rejected with exit code 1") {
    CHECK(run("frobnicate") == 1);
    CHECK(run("") == 1);
    CHECK(run("gen-data") == 1);  // missing required --out
}

TEST_CASE("help exits cleanly") {
    CHECK(run("--help") == 0);
    CHECK(run("gen-data --help") == 0);
}

TEST_CASE("config errors exit 1, I/O errors exit 2") {
    TmpDir tmp("icmoe_cli_err");
    CHECK(run("gen-data --set domain=marble --out " + (tmp / "d")) == 1);
    CHECK(run("gen-data --set num_samples=abc --out " + (tmp / "d")) == 1);
    CHECK(run("gen-data --config /nonexistent.cfg --out " + (tmp / "d")) == 2);
    CHECK(run("pretrain --data /nonexistent_data --out " + (tmp / "p")) == 2);
}

TEST_CASE("gen-data writes a dataset with a run manifest, atomically") {
    TmpDir tmp("icmoe_cli_gen");
    CHECK(run("gen-data --set num_samples=6 --set image_size=16 --out " + (tmp / "d")) == 0);
    CHECK(fs::exists(tmp.path / "d" / "manifest.csv"));
    CHECK(fs::exists(tmp.path / "d" / "run_manifest.txt"));
    CHECK(fs::exists(tmp.path / "d" / "images" / "0005.icmt"));
    CHECK_FALSE(fs::exists(tmp.path / "d.tmp"));
    // Refuses to clobber an existing output.
    CHECK(run("gen-data --set num_samples=6 --set image_size=16 --out " + (tmp / "d")) == 2);
}

TEST_CASE("grad-check reports all losses below tolerance") {
    CHECK(run("grad-check --trials 2") == 0);
}

TEST_CASE("ppav-sim respects the count bound") {
    TmpDir tmp("icmoe_cli_sim");
    CHECK(run("ppav-sim --batch 12 --threshold 4 --out " + (tmp / "s")) == 0);
    std::ifstream is(tmp.path / "s" / "selection_sim.csv");
    std::string line;
    std::getline(is, line);
    CHECK(line == "round,sample,score_0,score_1,score_3,chosen,count_after");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        const auto last = line.rfind(',');
        CHECK(std::stoll(line.substr(last + 1)) <= 5);  // threshold + 1
    }
    CHECK(rows == 12);
}

TEST_CASE("full pipeline through the CLI is reproducible byte for byte") {
    TmpDir tmp("icmoe_cli_pipe");
    write_config(tmp.path / "scene.cfg",
                 "num_samples=12\nimage_size=16\ndomain=target\nintensity_gap=0.25\n");
    write_config(tmp.path / "train.cfg",
                 "image_size=16\npatch_size=4\nembed_dim=8\nnum_blocks=2\nadapter_dim=2\n"
                 "epochs=2\nbatch_size=6\n");

    REQUIRE(run("gen-data --config " + (tmp / "scene.cfg") + " --out " + (tmp / "data")) == 0);
    REQUIRE(run("pretrain --config " + (tmp / "train.cfg") + " --data " + (tmp / "data") +
                " --out " + (tmp / "pre")) == 0);

    const std::string ft_args = "finetune --config " + (tmp / "train.cfg") + " --data " +
                                (tmp / "data") + " --pretrained " + (tmp / "pre") +
                                "/checkpoint --mode ecfm+sgcl --out ";
    REQUIRE(run(ft_args + (tmp / "ft1")) == 0);
    REQUIRE(run(ft_args + (tmp / "ft2")) == 0);
    CHECK(dir_content_hash(tmp.path / "ft1") == dir_content_hash(tmp.path / "ft2"));

    REQUIRE(run("evaluate --config " + (tmp / "train.cfg") + " --data " + (tmp / "data") +
                " --checkpoint " + (tmp / "ft1") + "/checkpoint --out " + (tmp / "ev")) == 0);
    CHECK(fs::exists(tmp.path / "ev" / "summary.csv"));
    CHECK(fs::exists(tmp.path / "ev" / "per_sample.csv"));
    CHECK(fs::exists(tmp.path / "ev" / "selection.csv"));

    REQUIRE(run("infer --config " + (tmp / "train.cfg") + " --data " + (tmp / "data") +
                " --checkpoint " + (tmp / "ft1") + "/checkpoint --split val --out " +
                (tmp / "inf")) == 0);
    CHECK(fs::exists(tmp.path / "inf" / "pred"));

    REQUIRE(run("report --run " + (tmp / "ft1") + " --data " + (tmp / "data") + " --out " +
                (tmp / "rep")) == 0);
    CHECK(fs::exists(tmp.path / "rep" / "ablation.csv"));
    CHECK(fs::exists(tmp.path / "rep" / "complexity.csv"));
    CHECK(fs::exists(tmp.path / "rep" / "timing.txt"));
    // 20 bins plus header in every distribution file.
    for (int e = 0; e < 3; ++e) {
        std::ifstream is(tmp.path / "rep" /
                         ("distribution_expert" + std::to_string(e) + ".csv"));
        std::string line;
        std::size_t rows = 0;
        std::getline(is, line);  // header
        while (std::getline(is, line))
            if (!line.empty() && line[0] != '#') ++rows;
        CHECK(rows == 20);
    }

    // The report's ablation table has one row per run plus the header.
    std::ifstream ab(tmp.path / "rep" / "ablation.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(ab, line)) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("evaluate exits 2 for a missing checkpoint") {
    TmpDir tmp("icmoe_cli_evmiss");
    write_config(tmp.path / "scene.cfg", "num_samples=4\nimage_size=16\n");
    REQUIRE(run("gen-data --config " + (tmp / "scene.cfg") + " --out " + (tmp / "data")) == 0);
    CHECK(run("evaluate --data " + (tmp / "data") + " --checkpoint " + (tmp / "nope")) == 2);
}
