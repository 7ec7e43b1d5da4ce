#include "cgm_cli/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Conditional generative models trained and evaluated with joint and averaged MMD"};
    app.require_subcommand(1);

    std::string config;
    std::string model;
    std::string mutation;
    std::string output;

    auto* train = app.add_subcommand("train", "Train a generator and write model, history and report");
    train->add_option("-c,--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);

    auto* eval = app.add_subcommand("eval", "Evaluate a saved generator on the configured test split");
    eval->add_option("-c,--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    eval->add_option("-m,--model", model, "Model file written by train")->required();

    auto* verify = app.add_subcommand("verify", "Run the exact-enumeration and gradient checks");
    verify->add_option("--mutate", mutation, "Inject a known estimator fault (jmmd-sign)");

    auto* varbench = app.add_subcommand("varbench", "Measure estimator variance across sample sizes");
    varbench->add_option("-c,--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);

    auto* synth = app.add_subcommand("synth", "Write the configured synthetic dataset as CSV");
    synth->add_option("-c,--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    synth->add_option("-o,--out", output, "Output CSV path (default: <out_dir>/synth.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cgm::cli::kExitConfig;
    }

    if (*train) {
        return cgm::cli::cmd_train(config, std::cout, std::cerr);
    }
    if (*eval) {
        return cgm::cli::cmd_eval(config, model, std::cout, std::cerr);
    }
    if (*verify) {
        return cgm::cli::cmd_verify(mutation, std::cout, std::cerr);
    }
    if (*varbench) {
        return cgm::cli::cmd_varbench(config, std::cout, std::cerr);
    }
    return cgm::cli::cmd_synth(config, output.empty() ? std::nullopt : std::optional<std::filesystem::path>(output),
                               std::cout, std::cerr);
}
