#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "read/pipeline.hpp"
#include "read/util.hpp"

int main(int argc, char** argv) {
    std::string commands;
    for (const auto& c : readcore::kPipelineCommands) {
        if (!commands.empty()) commands += " | ";
        commands += c;
    }

    CLI::App app{"read-pipeline: satellite-tile district representation and regression"};
    std::string command, config_path, variable;
    long long seed = -1;
    app.add_option("command", command, commands)->required();
    app.add_option("--config", config_path, "key=value config file")->required();
    app.add_option("--seed", seed, "override the config's seed");
    app.add_option("--variable", variable, "target demographic variable");
    CLI11_PARSE(app, argc, argv);

    try {
        readcore::Config cfg = readcore::Config::load(config_path);
        if (seed >= 0) cfg.values["seed"] = std::to_string(seed);
        readcore::run_command(command, cfg, variable);
    } catch (const readcore::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const readcore::data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
