// Drives the installed `pca` binary as a subprocess and checks the contract:
// exit codes (0 ok, 1 runtime, 2 usage), output artifacts, and determinism.

#include <sys/wait.h>

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;  // stdout + stderr interleaved
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    const fs::path log = fs::temp_directory_path() / ("pca_cli_out_" + std::to_string(counter++) + ".txt");
    const std::string cmd = env + (env.empty() ? "" : " ") + PCA_CLI_PATH + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(log);
    fs::remove(log);
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// a dataset + one-epoch training run shared by the eval/explain/determinism cases
struct TrainedFixture {
    fs::path data, out;
    TrainedFixture() {
        data = fresh_dir("pca_cli_fix_data");
        out = fresh_dir("pca_cli_fix_run");
        REQUIRE(run("synth-data --out " + data.string() + " --classes 4 --counts 10,8,6,4 --size 16 --seed 11")
                    .exit_code == 0);
        REQUIRE(run("train --data " + data.string() + " --out " + out.string() +
                    " --epochs 1 --batch-size 8 --image-size 16 --seed 5")
                    .exit_code == 0);
    }
};

const TrainedFixture& fixture() {
    static TrainedFixture f;
    return f;
}

long parse_total(const std::string& table) {
    std::istringstream in(table);
    std::string line;
    while (std::getline(in, line))
        if (line.rfind("total", 0) == 0) return std::stol(line.substr(5));
    FAIL("no total row in:\n" + table);
    return -1;
}

}  // namespace

TEST_CASE("param-count prints a table whose total matches the closed form") {
    const RunResult r = run("param-count --spec toy --attention all");
    REQUIRE(r.exit_code == 0);
    CHECK(parse_total(r.out) == 60612);
    CHECK(r.out.find("stem") != std::string::npos);
    CHECK(r.out.find("cwa4") != std::string::npos);
}

TEST_CASE("attention overhead is exactly the difference between none and all") {
    const RunResult all = run("param-count --spec toy --attention all");
    const RunResult none = run("param-count --spec toy --attention none");
    REQUIRE(all.exit_code == 0);
    REQUIRE(none.exit_code == 0);
    CHECK(none.out.find("cwa") == std::string::npos);

    // the per-site lines in the `all` run must sum to the total difference
    long overhead = 0;
    std::istringstream in(all.out);
    std::string line;
    while (std::getline(in, line)) {
        const auto pos = line.find("  cwa");
        if (pos == 0 && line.find("(C=") != std::string::npos)
            overhead += std::stol(line.substr(line.rfind(' ')));
    }
    CHECK(overhead > 0);
    CHECK(parse_total(all.out) - parse_total(none.out) == overhead);
}

TEST_CASE("param-count reference preset stays near the published scale") {
    const RunResult r = run("param-count --spec reference --attention none");
    REQUIRE(r.exit_code == 0);
    CHECK(parse_total(r.out) == 6969223);
}

TEST_CASE("synth-data writes the requested class counts") {
    const fs::path dir = fresh_dir("pca_cli_synth");
    const RunResult r = run("synth-data --out " + dir.string() + " --classes 4 --counts 12,9,6,3 --size 16 --seed 2");
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("class00 12") != std::string::npos);
    CHECK(r.out.find("class03 3") != std::string::npos);
    const std::string manifest = slurp(dir / "manifest.csv");
    CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 31);  // header + 30 records
    CHECK(fs::exists(dir / "images" / "class02_0005.ppm"));
}

TEST_CASE("usage errors exit 2") {
    SECTION("missing manifest names the path") {
        const RunResult r = run("train --data /no/such/dir");
        CHECK(r.exit_code == 2);
        CHECK(r.out.find("/no/such/dir/manifest.csv") != std::string::npos);
    }
    SECTION("unknown subcommand") { CHECK(run("frobnicate").exit_code == 2); }
    SECTION("no subcommand") { CHECK(run("").exit_code == 2); }
    SECTION("unknown flag") { CHECK(run("param-count --bogus").exit_code == 2); }
    SECTION("bad counts list") {
        CHECK(run("synth-data --out /tmp/pca_cli_bad --counts 5,x,3").exit_code == 2);
    }
    SECTION("count list length mismatch") {
        const RunResult r = run("synth-data --out /tmp/pca_cli_bad --classes 3 --counts 5,4");
        CHECK(r.exit_code == 2);
    }
    SECTION("help exits 0") {
        const RunResult r = run("--help");
        CHECK(r.exit_code == 0);
        CHECK(r.out.find("train") != std::string::npos);
    }
}

TEST_CASE("train writes checkpoint, split manifests, logs, and metrics") {
    const auto& f = fixture();
    CHECK(fs::exists(f.out / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(f.out / "checkpoint" / "params.bin"));
    for (const char* split : {"train.csv", "val.csv", "test.csv"}) CHECK(fs::exists(f.out / split));

    const std::string log = slurp(f.out / "train_log.csv");
    CHECK(log.rfind("# protocol=split-then-upsample", 0) == 0);
    CHECK(log.find("epoch,train_loss,val_loss,val_acc,lr,seconds") != std::string::npos);

    const auto metrics = nlohmann::json::parse(slurp(f.out / "metrics.json"));
    CHECK(metrics["classes"] == 4);
    const double acc = metrics["global_accuracy"];
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);

    const auto log_json = nlohmann::json::parse(slurp(f.out / "train_log.json"));
    CHECK(log_json["protocol"] == "split-then-upsample");
    CHECK(log_json["epochs"].size() == 1);
}

TEST_CASE("config file fills in flags and explicit flags win") {
    const auto& f = fixture();
    const fs::path dir = fresh_dir("pca_cli_cfg");
    const fs::path cfg = dir / "train.cfg";
    std::ofstream(cfg) << "epochs=4\nimage-size=16\nbatch-size=8\nseed=5\n";
    const RunResult r = run("train --data " + f.data.string() + " --out " + dir.string() +
                            " --config " + cfg.string() + " --epochs 1");
    REQUIRE(r.exit_code == 0);
    const auto log_json = nlohmann::json::parse(slurp(dir / "train_log.json"));
    CHECK(log_json["epochs"].size() == 1);  // flag overrode epochs=4
}

TEST_CASE("paper protocol is recorded in the log header") {
    const auto& f = fixture();
    const fs::path dir = fresh_dir("pca_cli_paper");
    const RunResult r = run("train --data " + f.data.string() + " --out " + dir.string() +
                            " --epochs 0 --image-size 16 --seed 5 --paper-protocol");
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(dir / "train_log.csv").rfind("# protocol=upsample-then-split", 0) == 0);
    CHECK(r.out.find("upsample-then-split") != std::string::npos);
}

TEST_CASE("eval reproduces the training-time test metrics") {
    const auto& f = fixture();
    const fs::path report = fs::temp_directory_path() / "pca_cli_eval.json";
    const RunResult r = run("eval --checkpoint " + (f.out / "checkpoint").string() + " --manifest " +
                            (f.out / "test.csv").string() + " --image-root " + f.data.string() +
                            " --image-size 16 --out " + report.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("global accuracy") != std::string::npos);
    const auto from_eval = nlohmann::json::parse(slurp(report));
    const auto from_train = nlohmann::json::parse(slurp(f.out / "metrics.json"));
    CHECK(from_eval == from_train);
}

TEST_CASE("eval rejects a manifest with the wrong class count") {
    const auto& f = fixture();
    const fs::path dir = fresh_dir("pca_cli_wrong");
    REQUIRE(run("synth-data --out " + dir.string() + " --classes 2 --counts 3,3 --size 16 --seed 1").exit_code == 0);
    const RunResult r = run("eval --checkpoint " + (f.out / "checkpoint").string() + " --manifest " +
                            (dir / "manifest.csv").string() + " --image-size 16");
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("2 classes") != std::string::npos);
}

TEST_CASE("explain writes overlays named by image, class, and layer") {
    const auto& f = fixture();
    const fs::path dir = fresh_dir("pca_cli_cam");
    const std::string img = (f.data / "images" / "class01_0002.ppm").string();
    SECTION("predicted class by default") {
        const RunResult r = run("explain --checkpoint " + (f.out / "checkpoint").string() + " --out " + dir.string() +
                                " --image-size 16 " + img);
        REQUIRE(r.exit_code == 0);
        int found = 0;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            CHECK(name.rfind("class01_0002_class", 0) == 0);
            CHECK(name.find("_cwa4.png") != std::string::npos);
            ++found;
        }
        CHECK(found == 1);
    }
    SECTION("class override and layer choice") {
        const RunResult r = run("explain --checkpoint " + (f.out / "checkpoint").string() + " --out " + dir.string() +
                                " --image-size 16 --class 3 --layer block1 --format ppm " + img);
        REQUIRE(r.exit_code == 0);
        CHECK(fs::exists(dir / "class01_0002_class3_block1.ppm"));
    }
    SECTION("out-of-range class is a usage error") {
        CHECK(run("explain --checkpoint " + (f.out / "checkpoint").string() + " --class 9 " + img).exit_code == 2);
    }
    SECTION("unreadable image is a runtime error") {
        CHECK(run("explain --checkpoint " + (f.out / "checkpoint").string() + " /no/such.ppm").exit_code == 1);
    }
}

TEST_CASE("training is bit-reproducible and thread-count independent") {
    const auto& f = fixture();
    const fs::path again = fresh_dir("pca_cli_again");
    const fs::path threaded = fresh_dir("pca_cli_threads");
    const std::string args = "train --data " + f.data.string() + " --epochs 1 --batch-size 8 --image-size 16 --seed 5";
    REQUIRE(run(args + " --out " + again.string()).exit_code == 0);
    REQUIRE(run(args + " --out " + threaded.string(), "PCA_NUM_THREADS=3").exit_code == 0);
    const std::string base = slurp(f.out / "checkpoint" / "params.bin");
    REQUIRE(base.size() > 0);
    CHECK(slurp(again / "checkpoint" / "params.bin") == base);
    CHECK(slurp(threaded / "checkpoint" / "params.bin") == base);
    CHECK(slurp(again / "metrics.json") == slurp(f.out / "metrics.json"));
    CHECK(slurp(threaded / "metrics.json") == slurp(f.out / "metrics.json"));
}
