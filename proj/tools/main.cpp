#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "convvit/commands.hpp"

using namespace convvit;

int main(int argc, char** argv) {
    CLI::App app{"Convolution-only vision transformer with a 4f optical-correlator simulator"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    RunConfig run;
    std::string precision = "double";
    app.add_option("--config", run.config_path, "Model configuration JSON");
    app.add_option("--device-res", run.device_res, "Optical device resolution (pixels per side)");
    app.add_option("--device-clock", run.device_clock, "Optical device clock (inferences/second)");
    app.add_option("--seed", run.seed, "Seed for every random draw (default 42)");
    app.add_option("--out", run.out_dir, "Output directory");
    app.add_option("--precision", precision, "single or double")
        ->check(CLI::IsMember({"single", "double"}));

    CLI::App* verify = app.add_subcommand("verify", "Run the oracle-equivalence suites");
    verify->add_flag("--inject-fault", run.inject_fault,
                     "Test hook: perturb one kernel by 1+1e-6 to confirm sensitivity");

    app.add_subcommand("plan", "Tiling capacity, inference counts and latency");

    CLI::App* train = app.add_subcommand("train", "Train on a toy dataset");
    train->add_option("--dataset", run.dataset, "quadrant-blob or two-class-texture");
    train->add_option("--samples", run.dataset_count, "Training sample count");
    train->add_option("--val-samples", run.val_count, "Validation sample count");
    train->add_option("--epochs", run.epochs, "Epoch count");
    train->add_option("--batch-size", run.batch_size, "Minibatch size");
    train->add_option("--lr", run.base_lr, "Base learning rate");
    train->add_option("--warmup", run.warmup_epochs, "Warmup epochs");

    CLI::App* attnmap = app.add_subcommand("attnmap", "Export per-layer attention maps");
    attnmap->add_option("--checkpoint", run.checkpoint_path, "Trained checkpoint")->required();
    attnmap->add_option("--image", run.image_path, "Input image (P2 PGM)");

    CLI::App* simulate = app.add_subcommand("simulate", "Optical-path forward vs electronic");
    simulate->add_option("--checkpoint", run.checkpoint_path, "Checkpoint to simulate");
    simulate->add_option("--image", run.image_path, "Input image (P2 PGM)");
    simulate->add_option("--random", run.random_inputs, "Number of random inputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    run.precision = precision == "single" ? Precision::Single : Precision::Double;

    try {
        if (verify->parsed()) return cmd_verify(run);
        if (app.got_subcommand("plan")) return cmd_plan(run);
        if (train->parsed()) return cmd_train(run);
        if (attnmap->parsed()) return cmd_attnmap(run);
        if (simulate->parsed()) return cmd_simulate(run);
    } catch (const infeasible_error& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        return kExitFailure;
    } catch (const state_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    } catch (const config_error& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kExitUsage;
    } catch (const dimension_error& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kExitUsage;
    } catch (const io_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
