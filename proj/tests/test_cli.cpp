#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "convvit/commands.hpp"
#include "convvit/io_util.hpp"
#include "convvit/model.hpp"
#include "convvit/training.hpp"

using namespace convvit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

nlohmann::json load_json(const std::string& path) {
    return nlohmann::json::parse(read_text_file(path));
}

ModelConfig micro_config() {
    ModelConfig c;
    c.image_size = 8;
    c.image_channels = 1;
    c.patch_size = 4;
    c.embed_h = c.embed_w = 4;
    c.heads = 1;
    c.depth = 2;
    c.mlp_ratio = 2;
    c.num_classes = 4;
    return c;
}

} // namespace

TEST_CASE("verify passes on a fresh build and reports every suite") {
    TempDir dir("convvit_cli_verify");
    RunConfig run;
    run.out_dir = dir.str();
    CHECK(cmd_verify(run) == kExitOk);

    nlohmann::json report = load_json(dir.file("verify_report.json"));
    CHECK(report.at("schema_version") == 1);
    CHECK(report.at("pass") == true);
    REQUIRE(report.at("suites").is_array());
    CHECK(report.at("suites").size() == 5);
    for (const auto& suite : report.at("suites")) {
        CHECK(suite.contains("name"));
        CHECK(suite.contains("cases"));
        CHECK(suite.contains("max_error"));
        CHECK(suite.contains("threshold"));
        CHECK(suite.at("pass") == true);
    }
}

TEST_CASE("verify catches an injected kernel fault") {
    TempDir dir("convvit_cli_fault");
    RunConfig run;
    run.out_dir = dir.str();
    run.inject_fault = true;
    CHECK(cmd_verify(run) == kExitFailure);

    nlohmann::json report = load_json(dir.file("verify_report.json"));
    CHECK(report.at("pass") == false);
    bool linear_failed = false;
    for (const auto& suite : report.at("suites")) {
        if (suite.at("name") == "linear_equivalence") linear_failed = !suite.at("pass");
    }
    CHECK(linear_failed);
}

TEST_CASE("plan reproduces the deployment-shape arithmetic") {
    TempDir dir("convvit_cli_plan");
    RunConfig run;
    run.out_dir = dir.str();
    CHECK(cmd_plan(run) == kExitOk);

    nlohmann::json plan = load_json(dir.file("plan.json"));
    CHECK(plan.at("per_block").at("qkv") == 384);
    CHECK(plan.at("per_block").at("scores") == 50);
    CHECK(plan.at("per_block").at("weighted_sum") == 1);
    CHECK(plan.at("per_block").at("mlp") == 195);
    CHECK(plan.at("total") == 5670);
    CHECK(plan.at("latency_display") == "2.8 ms");

    const std::string table = read_text_file(dir.file("plan.txt"));
    CHECK(table.find("5670") != std::string::npos);
    CHECK(table.find("2.8 ms") != std::string::npos);
}

TEST_CASE("plan depth linearity and infeasible device") {
    TempDir dir("convvit_cli_plan2");

    ModelConfig c;
    c.image_size = 32;
    c.image_channels = 3;
    c.patch_size = 4;
    c.embed_h = c.embed_w = 13;
    c.heads = 1;
    c.depth = 18;
    c.num_classes = 100;
    write_text_file(dir.file("deep.json"), config_to_json(c));

    RunConfig run;
    run.out_dir = dir.str();
    run.config_path = dir.file("deep.json");
    CHECK(cmd_plan(run) == kExitOk);
    CHECK(load_json(dir.file("plan.json")).at("total") == 2 * 5670);

    RunConfig tiny = run;
    tiny.config_path.clear();
    tiny.device_res = 24;
    CHECK(cmd_plan(tiny) == kExitFailure);
}

TEST_CASE("train emits metrics and a loadable checkpoint; attnmap exports layers") {
    TempDir dir("convvit_cli_train");
    write_text_file(dir.file("micro.json"), config_to_json(micro_config()));

    RunConfig run;
    run.out_dir = dir.str();
    run.config_path = dir.file("micro.json");
    run.dataset_count = 16;
    run.val_count = 8;
    run.epochs = 2;
    run.batch_size = 8;
    run.warmup_epochs = 1;
    CHECK(cmd_train(run) == kExitOk);

    const std::string csv = read_text_file(dir.file("metrics.csv"));
    CHECK(csv.rfind("epoch,lr,train_loss,train_acc,val_acc\n", 0) == 0);
    int rows = 0;
    for (char ch : csv) rows += ch == '\n';
    CHECK(rows == 3); // header + one row per epoch

    Model model = load_checkpoint(dir.file("model.ckpt"));
    CHECK(model.config.depth == 2);

    RunConfig attn;
    attn.out_dir = dir.file("maps");
    attn.checkpoint_path = dir.file("model.ckpt");
    CHECK(cmd_attnmap(attn) == kExitOk);
    for (int layer = 0; layer < 2; ++layer) {
        const std::string stem = dir.file("maps/layer" + std::to_string(layer));
        CHECK(fs::exists(stem + "_trace.csv"));
        CHECK(fs::exists(stem + "_heatmap.csv"));
        Tensor pgm = read_pgm(stem + "_heatmap.pgm");
        CHECK(pgm.shape() == std::vector<int>{1, 8, 8});
    }
}

TEST_CASE("simulate matches the electronic forward on a micro model") {
    TempDir dir("convvit_cli_sim");
    write_text_file(dir.file("micro.json"), config_to_json(micro_config()));

    RunConfig run;
    run.out_dir = dir.str();
    run.config_path = dir.file("micro.json");
    run.random_inputs = 3;
    CHECK(cmd_simulate(run) == kExitOk);

    nlohmann::json report = load_json(dir.file("simulate_report.json"));
    CHECK(report.at("inputs") == 3);
    CHECK(report.at("max_rel_logit_deviation").get<double>() < 1e-6);
    CHECK(report.at("argmax_matches") == 3);
    CHECK(report.at("simulated_inferences") == report.at("plan_total"));
    CHECK(report.at("pass") == true);
}

TEST_CASE("simulate rejects non-deployment shapes") {
    TempDir dir("convvit_cli_simbad");
    ModelConfig c = micro_config();
    c.heads = 4;
    write_text_file(dir.file("multi.json"), config_to_json(c));
    RunConfig run;
    run.out_dir = dir.str();
    run.config_path = dir.file("multi.json");
    CHECK_THROWS_AS(cmd_simulate(run), config_error);
}

TEST_CASE("cli binary honors the exit-status contract") {
    const char* bin = CONVVIT_CLI_PATH;
    TempDir dir("convvit_cli_spawn");

    const std::string ok = std::string(bin) + " plan --out " + dir.str() + " > /dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(ok.c_str())) == 0);

    const std::string infeasible =
        std::string(bin) + " plan --device-res 24 --out " + dir.str() + " > /dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(infeasible.c_str())) == 1);

    const std::string usage = std::string(bin) + " plan --config /nonexistent.json > /dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(usage.c_str())) == 2);

    const std::string bad_flag = std::string(bin) + " frobnicate > /dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(bad_flag.c_str())) == 2);
}
