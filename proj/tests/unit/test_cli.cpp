#include <doctest.h>

#include "../support/test_util.hpp"
#include "lesiontrack/nifti.hpp"

using namespace lesiontrack;
namespace fs = std::filesystem;

namespace {

const std::string kCli = LESIONTRACK_CLI_PATH;

int cli(const std::string& args, const fs::path& log) {
    return testutil::run(kCli + " " + args + " > " + log.string() + " 2>&1");
}

std::string volume_checksum(const fs::path& p) {
    const Volume v = load_volume(p);
    return testutil::hex(testutil::fnv1a(v.data.data(), v.data.size() * sizeof(float)));
}

std::string mask_checksum(const fs::path& p) {
    const InstanceMask m = load_mask(p);
    return testutil::hex(testutil::fnv1a(m.labels.data(), m.labels.size() * sizeof(std::uint16_t)));
}

void make_phantom_dir(const fs::path& dir, int lesions = 2) {
    REQUIRE(cli("--seed 7 --out " + dir.string() + " phantom --shape 40 --radius 4 6 --lesions " + std::to_string(lesions),
                dir.parent_path() / (dir.filename().string() + ".log")) == 0);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("phantom is deterministic") {
    const auto dir = testutil::scratch_dir("cli_phantom");
    make_phantom_dir(dir / "a");
    make_phantom_dir(dir / "b");
    CHECK(testutil::read_bytes(dir / "a" / "image.nii.gz") == testutil::read_bytes(dir / "b" / "image.nii.gz"));
    CHECK(testutil::read_bytes(dir / "a" / "mask.nii.gz") == testutil::read_bytes(dir / "b" / "mask.nii.gz"));
    const auto meta = testutil::read_json(dir / "a" / "phantom.json");
    CHECK(meta["lesions"].size() == 2);
    CHECK(meta["seed"] == 7);
}

TEST_CASE("exit codes") {
    const auto dir = testutil::scratch_dir("cli_exit");
    const auto log = dir / "log.txt";
    CHECK(cli("--seed 1 --out " + dir.string() + " synth --image nope.nii.gz --mask nope.nii.gz", log) == 1);
    CHECK(cli("phantom --shape 0", log) == 2);
    CHECK(cli("frobnicate", log) == 2);
    CHECK(cli("--out " + dir.string() + " synth --image a --mask b", log) == 2);  // missing --seed

    make_phantom_dir(dir / "p", 0);
    CHECK(cli("--seed 1 --out " + (dir / "s").string() + " synth --image " + (dir / "p" / "image.nii.gz").string() +
                  " --mask " + (dir / "p" / "mask.nii.gz").string(),
              log) == 3);

    std::ofstream(dir / "cfg.json") << R"({"seed": 1, "colour": "blue"})";
    CHECK(cli("--config " + (dir / "cfg.json").string() + " phantom", log) == 2);
}

TEST_CASE("synth with zero amplitude and no augmentation reproduces the inputs") {
    const auto dir = testutil::scratch_dir("cli_identity");
    make_phantom_dir(dir / "p");
    REQUIRE(cli("--seed 3 --out " + (dir / "s").string() + " synth --image " + (dir / "p" / "image.nii.gz").string() +
                    " --mask " + (dir / "p" / "mask.nii.gz").string() + " --lesion.amplitude 0 --aug.off",
                dir / "log.txt") == 0);
    const Volume a = load_volume(dir / "p" / "image.nii.gz"), b = load_volume(dir / "s" / "image.nii.gz");
    CHECK(a.data == b.data);
    CHECK(load_mask(dir / "p" / "mask.nii.gz").labels == load_mask(dir / "s" / "mask.nii.gz").labels);
}

TEST_CASE("synth outputs match the committed golden checksums") {
    const auto dir = testutil::scratch_dir("cli_golden");
    make_phantom_dir(dir / "p");
    REQUIRE(cli("--seed 11 --out " + (dir / "s").string() + " synth --image " + (dir / "p" / "image.nii.gz").string() +
                    " --mask " + (dir / "p" / "mask.nii.gz").string(),
                dir / "log.txt") == 0);
    const auto golden = testutil::read_json(fs::path(LESIONTRACK_GOLDEN_DIR) / "synth_seed11.json");
    CHECK(volume_checksum(dir / "p" / "image.nii.gz") == golden["phantom_image"]);
    CHECK(mask_checksum(dir / "p" / "mask.nii.gz") == golden["phantom_mask"]);
    CHECK(volume_checksum(dir / "s" / "image.nii.gz") == golden["synth_image"]);
    CHECK(mask_checksum(dir / "s" / "mask.nii.gz") == golden["synth_mask"]);
    CHECK(volume_checksum(dir / "s" / "field_dx.nii.gz") == golden["synth_field_dx"]);
}

TEST_CASE("eval") {
    const auto dir = testutil::scratch_dir("cli_eval");
    make_phantom_dir(dir / "p");
    const auto mask = (dir / "p" / "mask.nii.gz").string();
    const auto image = (dir / "p" / "image.nii.gz").string();
    std::ofstream(dir / "same.json") << R"({"patient_id": "P", "scans": [{"t": 0, "image": ")" << image
                                     << R"(", "gt_mask": ")" << mask << R"(", "pred_mask": ")" << mask << R"("}]})";
    REQUIRE(cli("--out " + (dir / "e").string() + " eval --manifest " + (dir / "same.json").string(),
                dir / "stdout.json") == 0);
    const auto m = testutil::read_json(dir / "e" / "metrics.json");
    CHECK(m["overall"]["dice"] == 1.0);
    CHECK(m["overall"]["cpm_at_25"] == 100.0);
    CHECK(m["overall"]["med_mm"] == 0.0);
    CHECK(fs::exists(dir / "e" / "lesions.csv"));

    save_nifti(InstanceMask(testutil::grid(40, 40, 39)), dir / "small.nii.gz");
    std::ofstream(dir / "bad.json") << R"({"patient_id": "P", "scans": [{"t": 4, "image": ")" << image
                                    << R"(", "gt_mask": ")" << mask << R"(", "pred_mask": "small.nii.gz"}]})";
    CHECK(cli("--out " + (dir / "e2").string() + " eval --manifest " + (dir / "bad.json").string(),
              dir / "err.txt") == 1);
    CHECK(testutil::read_bytes(dir / "err.txt").find("t4") != std::string::npos);
}

}
