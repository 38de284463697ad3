#pragma once

#include <cstdint>
#include <string>

#include "convvit/optics.hpp"
#include "convvit/tensor.hpp"

namespace convvit {

// Exit status contract shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;   // verification or feasibility failure
inline constexpr int kExitUsage = 2;     // usage or configuration error

inline constexpr std::uint64_t kDefaultSeed = 42;

struct RunConfig {
    std::string config_path;      // model configuration JSON
    std::string checkpoint_path;
    std::string image_path;       // P2 PGM input
    int device_res = 2160;
    double device_clock = 2e6;
    std::uint64_t seed = kDefaultSeed;
    std::string out_dir = ".";
    Precision precision = Precision::Double;

    // verify
    bool inject_fault = false;    // test hook: scales one kernel by 1+1e-6

    // train
    std::string dataset = "quadrant-blob";
    int dataset_count = 256;
    int val_count = 128;
    int epochs = 50;
    int batch_size = 64;
    double base_lr = 1e-3;
    int warmup_epochs = 5;

    // simulate
    int random_inputs = 1;

    DeviceSpec device() const { return DeviceSpec{device_res, device_clock}; }
};

// Oracle-equivalence suites; writes verify_report.json under out_dir.
int cmd_verify(const RunConfig& run);

// Inference-count and latency planning; writes plan.json and plan.txt.
int cmd_plan(const RunConfig& run);

// Toy training; writes model.ckpt and metrics.csv.
int cmd_train(const RunConfig& run);

// Per-layer attention trace CSV, heatmap CSV and PGM for one image.
int cmd_attnmap(const RunConfig& run);

// Runs every per-block convolution through the frequency-domain path and
// compares logits with the electronic forward; writes simulate_report.json.
int cmd_simulate(const RunConfig& run);

} // namespace convvit
